//! Experiment reports: JSON (sorted keys) and CSV.

use serde_json::{json, Map, Value};

use super::metrics::Metrics;
use super::{Arm, SyntheticConfig};
use crate::linalg::csv::{format_f64, to_csv_string};
use crate::linalg::Matrix;

/// Per-epoch mean losses; `step` counts optimizer steps so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub wpnce: f64,
    pub ce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub arm: Arm,
    pub cosine_sim: Matrix,
    pub offdiag_energy: f64,
    pub initial_offdiag_energy: f64,
    pub dwfc_accuracy: f64,
    pub heat_mass_ratio: f64,
    pub clear_heat_mass_ratio: f64,
    /// Largest `‖W^T W − I‖_F` over head weights at the end of training.
    pub orthonormality_residual: f64,
    pub loss_trace: Vec<LossPoint>,
}

impl ExperimentReport {
    pub fn from_metrics(
        arm: Arm,
        metrics: Metrics,
        initial_offdiag_energy: f64,
        orthonormality_residual: f64,
        loss_trace: Vec<LossPoint>,
    ) -> Self {
        Self {
            arm,
            cosine_sim: metrics.cosine_sim,
            offdiag_energy: metrics.offdiag_energy,
            initial_offdiag_energy,
            dwfc_accuracy: metrics.dwfc_accuracy,
            heat_mass_ratio: metrics.heat_mass_ratio,
            clear_heat_mass_ratio: metrics.clear_heat_mass_ratio,
            orthonormality_residual,
            loss_trace,
        }
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Vec<f64>> = (0..self.cosine_sim.rows())
            .map(|r| self.cosine_sim.row(r).to_vec())
            .collect();
        let trace: Vec<Value> = self
            .loss_trace
            .iter()
            .map(|p| json!({"step": p.step, "l_wpnce": p.wpnce, "l_ce": p.ce}))
            .collect();
        json!({
            "arm": self.arm.name(),
            "cosine_sim": rows,
            "offdiag_energy": self.offdiag_energy,
            "initial_offdiag_energy": self.initial_offdiag_energy,
            "dwfc_accuracy": self.dwfc_accuracy,
            "heat_mass_ratio": self.heat_mass_ratio,
            "clear_heat_mass_ratio": self.clear_heat_mass_ratio,
            "orthonormality_residual": self.orthonormality_residual,
            "loss_trace": trace,
        })
    }

    pub fn cosine_csv(&self) -> String {
        to_csv_string(&self.cosine_sim)
    }

    /// `step,l_wpnce,l_ce` with a header row.
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("step,l_wpnce,l_ce\n");
        for p in &self.loss_trace {
            out.push_str(&format!("{},{},{}\n", p.step, format_f64(p.wpnce), format_f64(p.ce)));
        }
        out
    }
}

pub fn config_json(cfg: &SyntheticConfig) -> Value {
    json!({
        "channels": cfg.channels,
        "positions": cfg.positions,
        "related": cfg.related,
        "samples": cfg.samples,
        "mixing": cfg.mixing,
        "noise": cfg.noise,
        "signal": cfg.signal,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "layers": cfg.layers,
        "optimizer": cfg.optimizer.name(),
        "lr": cfg.lr,
        "dwfc_lr": cfg.dwfc_lr,
        "penalty_lambda": cfg.penalty_lambda,
        "tau": cfg.tau,
        "detach_weights": cfg.detach_weights,
        "update": cfg.update.name(),
    })
}

/// Whether energies strictly increase along omlp, penalty, unconstrained.
/// `None` unless all three arms are present.
pub fn energy_ordering_holds(reports: &[ExperimentReport]) -> Option<bool> {
    let get = |a: Arm| reports.iter().find(|r| r.arm == a).map(|r| r.offdiag_energy);
    let (o, p, u) = (get(Arm::Omlp)?, get(Arm::Penalty)?, get(Arm::Unconstrained)?);
    Some(o < p && p < u)
}

/// The combined report for a set of arms. `serde_json` maps keep keys sorted.
pub fn suite_json(cfg: &SyntheticConfig, reports: &[ExperimentReport]) -> Value {
    let mut arms = Map::new();
    for r in reports {
        arms.insert(r.arm.name().to_string(), r.to_json());
    }
    let mut root = Map::new();
    root.insert("config".into(), config_json(cfg));
    root.insert("arms".into(), Value::Object(arms));
    root.insert(
        "energy_ordering_holds".into(),
        energy_ordering_holds(reports).map_or(Value::Null, Value::Bool),
    );
    Value::Object(root)
}
