//! Synthetic feature-decoupling benchmark.
//!
//! Hazy and clear feature maps share content channels and differ on a planted
//! block of related channels. A projection head trained with the weighted
//! contrastive loss and a depth-wise classifier trained on domain labels are
//! then scored by the inter-channel cosine similarity of the head's output.

pub mod data;
pub mod metrics;
pub mod report;
pub mod train;

pub use data::{generate_dataset, ChannelLabel, Dataset};
pub use metrics::{cosine_similarity_matrix, evaluate, offdiag_energy, Metrics};
pub use report::{ExperimentReport, LossPoint};
pub use train::{run_arms, train, train_arm, TrainOptions, TrainedArm};

use crate::error::{Error, Result};
use crate::optim::Schedule;

/// How the constrained arm updates its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiefelOptimizer {
    Rsgd,
    Radam,
}

impl StiefelOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            StiefelOptimizer::Rsgd => "rsgd",
            StiefelOptimizer::Radam => "radam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rsgd" => Ok(StiefelOptimizer::Rsgd),
            "radam" => Ok(StiefelOptimizer::Radam),
            _ => Err(Error::Parse(format!(
                "unknown optimizer {s:?} (expected rsgd or radam)"
            ))),
        }
    }
}

/// Joint: every batch updates both networks. Alternating: even batches update
/// the projection head, odd batches the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Joint,
    Alternating,
}

impl UpdateMode {
    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::Joint => "joint",
            UpdateMode::Alternating => "alternating",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(UpdateMode::Joint),
            "alternating" => Ok(UpdateMode::Alternating),
            _ => Err(Error::Parse(format!(
                "unknown update mode {s:?} (expected joint or alternating)"
            ))),
        }
    }
}

/// Ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    /// Stiefel-constrained head.
    Omlp,
    /// Free head with an orthogonality penalty, Adam.
    Penalty,
    /// Free head, Adam.
    Unconstrained,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Omlp, Arm::Penalty, Arm::Unconstrained];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Omlp => "omlp",
            Arm::Penalty => "penalty",
            Arm::Unconstrained => "unconstrained",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "omlp" => Ok(Arm::Omlp),
            "penalty" => Ok(Arm::Penalty),
            "unconstrained" => Ok(Arm::Unconstrained),
            _ => Err(Error::Parse(format!(
                "unknown arm {s:?} (expected omlp, penalty or unconstrained)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub channels: usize,
    pub positions: usize,
    pub related: usize,
    /// Samples per domain.
    pub samples: usize,
    pub mixing: f64,
    pub noise: f64,
    /// Mean offset of the related channels (`+signal` hazy, `-signal` clear).
    pub signal: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hidden layers of width `channels` in the head, plus the output layer.
    pub layers: usize,
    pub optimizer: StiefelOptimizer,
    /// Base learning rate of the projection head. Held for the first half of
    /// training, then decayed linearly to zero.
    pub lr: f64,
    pub dwfc_lr: f64,
    pub penalty_lambda: f64,
    pub tau: f64,
    pub detach_weights: bool,
    pub update: UpdateMode,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            positions: 8,
            related: 4,
            samples: 512,
            mixing: 0.1,
            noise: 0.05,
            signal: 1.0,
            seed: 0,
            epochs: 50,
            batch_size: 32,
            layers: 2,
            optimizer: StiefelOptimizer::Rsgd,
            lr: 2e-4,
            dwfc_lr: 1e-2,
            penalty_lambda: 1.0,
            tau: crate::wpnce::DEFAULT_TAU,
            detach_weights: true,
            update: UpdateMode::Joint,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.channels < 2 {
            return bad(format!("channels must be at least 2, got {}", self.channels));
        }
        if self.related < 1 || self.related >= self.channels {
            return bad(format!(
                "related must satisfy 1 <= related < channels, got {} with {} channels",
                self.related, self.channels
            ));
        }
        if self.positions < 1 || self.samples < 1 || self.batch_size < 1 || self.layers < 1 {
            return bad("positions, samples, batch_size and layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mixing) {
            return bad(format!("mixing must be in [0, 1), got {}", self.mixing));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if !self.signal.is_finite() {
            return bad("signal must be finite".into());
        }
        for (name, v) in [("lr", self.lr), ("dwfc_lr", self.dwfc_lr), ("tau", self.tau)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.penalty_lambda >= 0.0) {
            return bad(format!("penalty_lambda must be >= 0, got {}", self.penalty_lambda));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        let hold = self.epochs / 2;
        Schedule {
            base_lr: self.lr,
            hold_epochs: hold,
            decay_epochs: self.epochs - hold,
        }
    }

    /// Head layer widths: `layers + 1` entries, all equal to `channels`.
    pub fn widths(&self) -> Vec<usize> {
        vec![self.channels; self.layers + 1]
    }
}

/// Sub-seed streams.
pub(crate) mod streams {
    pub const DATA: u64 = 1;
    pub const LEAKAGE: u64 = 2;
    pub const HEAD_INIT: u64 = 3;
    pub const DWFC_INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SyntheticConfig::default().validate().unwrap();
    }

    #[test]
    fn invariants_enforced() {
        let base = SyntheticConfig::default();
        for cfg in [
            SyntheticConfig {
                related: 0,
                ..base.clone()
            },
            SyntheticConfig {
                related: 16,
                ..base.clone()
            },
            SyntheticConfig {
                mixing: 1.0,
                ..base.clone()
            },
            SyntheticConfig {
                noise: -0.1,
                ..base.clone()
            },
            SyntheticConfig {
                tau: 0.0,
                ..base.clone()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn names_round_trip() {
        for a in Arm::ALL {
            assert_eq!(Arm::parse(a.name()).unwrap(), a);
        }
        for o in [StiefelOptimizer::Rsgd, StiefelOptimizer::Radam] {
            assert_eq!(StiefelOptimizer::parse(o.name()).unwrap(), o);
        }
        assert!(Arm::parse("mlp").is_err());
    }
}
