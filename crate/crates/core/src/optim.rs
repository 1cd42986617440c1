//! Parameter update rules.
//!
//! Stiefel-constrained parameters are updated with the two-step Riemannian
//! scheme: project the Euclidean gradient onto the tangent space, then retract
//! the displacement `-γ·grad` back onto the manifold. Everything else uses
//! plain Adam. [`ParamSlot::riemannian_adam_step`] is the projected-Adam
//! hybrid for constrained slots.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::csv::{read_csv, write_csv};
use crate::linalg::Matrix;
use crate::stiefel::{project_to_tangent, retract, StiefelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    StiefelConstrained,
    Euclidean,
}

impl SlotKind {
    pub fn name(self) -> &'static str {
        match self {
            SlotKind::StiefelConstrained => "stiefel",
            SlotKind::Euclidean => "euclidean",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "stiefel" => Ok(SlotKind::StiefelConstrained),
            "euclidean" => Ok(SlotKind::Euclidean),
            other => Err(Error::Parse(format!("unknown slot kind {other:?}"))),
        }
    }
}

/// Adam hyperparameters. Defaults: `β1 = 0.5`, `β2 = 0.999`, `ε = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable matrix together with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    kind: SlotKind,
    value: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
    step_count: u64,
}

impl ParamSlot {
    /// Free parameter with zeroed moments.
    pub fn euclidean(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            kind: SlotKind::Euclidean,
            value,
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    /// Constrained parameter initialized at `point`.
    pub fn stiefel(point: StiefelPoint) -> Self {
        let value = point.into_matrix();
        let (r, c) = value.shape();
        Self {
            kind: SlotKind::StiefelConstrained,
            value,
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn kind(&self) -> SlotKind {
        self.kind
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn adam_m(&self) -> &Matrix {
        &self.adam_m
    }

    pub fn adam_v(&self) -> &Matrix {
        &self.adam_v
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Current value as a manifold point (constrained slots only).
    pub fn point(&self) -> Result<StiefelPoint> {
        self.require(SlotKind::StiefelConstrained)?;
        StiefelPoint::new(self.value.clone())
    }

    /// Overwrites the value of a Euclidean slot, keeping its moments.
    pub fn set_value(&mut self, value: Matrix) -> Result<()> {
        self.require(SlotKind::Euclidean)?;
        self.check_grad(&value)?;
        self.value = value;
        Ok(())
    }

    fn require(&self, kind: SlotKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Kind {
                expected: kind.name(),
                found: self.kind.name(),
            });
        }
        Ok(())
    }

    fn check_grad(&self, grad: &Matrix) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::Dimension {
                op: "ParamSlot step",
                expected: self.value.shape(),
                got: grad.shape(),
            });
        }
        Ok(())
    }

    /// Updates the moments with `grad` and returns the bias-corrected Adam direction.
    fn adam_direction(&mut self, grad: &Matrix, cfg: AdamConfig) -> Matrix {
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig { beta1, beta2, eps } = cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let mut dir = Matrix::zeros(grad.rows(), grad.cols());
        let m = self.adam_m.as_mut_slice();
        let v = self.adam_v.as_mut_slice();
        for (i, (&g, d)) in grad.as_slice().iter().zip(dir.as_mut_slice()).enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            *d = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }
        dir
    }

    /// Riemannian SGD: `Θ ← R_Θ(-γ · grad f(Θ))`.
    pub fn rsgd_step(&mut self, euclid_grad: &Matrix, gamma: f64) -> Result<()> {
        self.require(SlotKind::StiefelConstrained)?;
        self.check_grad(euclid_grad)?;
        if !(gamma > 0.0) {
            return Err(Error::Parameter(format!("step size must be positive, got {gamma}")));
        }
        self.step_count += 1;
        self.manifold_move(euclid_grad, gamma)
    }

    /// Adam on a Euclidean slot.
    pub fn adam_step(&mut self, grad: &Matrix, lr: f64, cfg: AdamConfig) -> Result<()> {
        self.require(SlotKind::Euclidean)?;
        self.check_grad(grad)?;
        let dir = self.adam_direction(grad, cfg);
        self.value.axpy(-lr, &dir)?;
        Ok(())
    }

    /// Adam on a constrained slot: moments track the Riemannian gradient
    /// (the Euclidean gradient projected at the current point); the Adam
    /// direction is projected again and retracted.
    ///
    /// Feeding raw Euclidean gradients to the moments does not work here:
    /// per-entry normalization breaks the cancellation between the radial
    /// part of the gradient and the projection, and turns optima of
    /// `−tr(Θ^T A Θ)` into repellers.
    pub fn riemannian_adam_step(&mut self, euclid_grad: &Matrix, lr: f64, cfg: AdamConfig) -> Result<()> {
        self.require(SlotKind::StiefelConstrained)?;
        self.check_grad(euclid_grad)?;
        let theta = StiefelPoint::new(self.value.clone())?;
        let rgrad = project_to_tangent(&theta, euclid_grad)?.into_matrix();
        let dir = self.adam_direction(&rgrad, cfg);
        self.manifold_move(&dir, lr)
    }

    fn manifold_move(&mut self, direction: &Matrix, step: f64) -> Result<()> {
        let theta = StiefelPoint::new(self.value.clone())?;
        let xi = project_to_tangent(&theta, direction)?.scaled(-step);
        let next = retract(&theta, &xi)?;
        self.value = StiefelPoint::new(next.into_matrix())?.into_matrix();
        Ok(())
    }

    /// Writes `value.csv`, `m.csv`, `v.csv` and `meta.csv` (`kind,step_count`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("value.csv"), &self.value)?;
        write_csv(&dir.join("m.csv"), &self.adam_m)?;
        write_csv(&dir.join("v.csv"), &self.adam_v)?;
        fs::write(
            dir.join("meta.csv"),
            format!("kind,step_count\n{},{}\n", self.kind.name(), self.step_count),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = fs::read_to_string(dir.join("meta.csv"))?;
        let line = meta
            .lines()
            .nth(1)
            .ok_or_else(|| Error::Parse("meta.csv: missing data row".into()))?;
        let (kind, steps) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("meta.csv: bad row {line:?}")))?;
        let kind = SlotKind::parse(kind.trim())?;
        let step_count = steps
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("meta.csv: bad step count {steps:?}")))?;
        let value = read_csv(&dir.join("value.csv"))?;
        let adam_m = read_csv(&dir.join("m.csv"))?;
        let adam_v = read_csv(&dir.join("v.csv"))?;
        if adam_m.shape() != value.shape() || adam_v.shape() != value.shape() {
            return Err(Error::Shape("checkpoint moment shapes differ from value".into()));
        }
        if kind == SlotKind::StiefelConstrained {
            StiefelPoint::new(value.clone())?;
        }
        Ok(Self {
            kind,
            value,
            adam_m,
            adam_v,
            step_count,
        })
    }
}

/// Saves named slots under `dir/<name>/`.
pub fn save_checkpoint<'a>(dir: &Path, slots: impl IntoIterator<Item = (&'a str, &'a ParamSlot)>) -> Result<()> {
    for (name, slot) in slots {
        slot.save(&dir.join(name))?;
    }
    Ok(())
}

/// Constant learning rate for `hold_epochs`, then linear decay to zero over `decay_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub hold_epochs: usize,
    pub decay_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            base_lr: 2e-4,
            hold_epochs: 200,
            decay_epochs: 200,
        }
    }
}

impl Schedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if epoch < self.hold_epochs {
            return self.base_lr;
        }
        let into = epoch - self.hold_epochs;
        if into >= self.decay_epochs {
            return 0.0;
        }
        self.base_lr * (1.0 - into as f64 / self.decay_epochs as f64)
    }
}

pub fn lr_at_epoch(s: &Schedule, epoch: usize) -> f64 {
    s.lr_at_epoch(epoch)
}
