//! Orthogonal feature decoupling: Stiefel-manifold optimization, orthogonal
//! MLP projection heads, a depth-wise domain classifier and a weighted patch
//! contrastive loss, plus a synthetic benchmark that measures decoupling.

pub mod decouple;
pub mod dwfc;
pub mod error;
pub mod linalg;
pub mod omlp;
pub mod optim;
pub mod rayleigh;
pub mod rng;
pub mod stiefel;
pub mod verify;
pub mod wpnce;

pub use decouple::{ExperimentReport, SyntheticConfig};
pub use dwfc::{ChannelFeature, Domain, DwfcNet};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use omlp::{Omlp, WeightConstraint};
pub use optim::{AdamConfig, ParamSlot, Schedule, SlotKind};
pub use rng::Rng;
pub use stiefel::{StiefelPoint, TangentVector};
pub use wpnce::{EmbeddingBatch, WeightPair};
