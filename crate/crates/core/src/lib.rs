//! Structured channel pruning driven by group-lasso and angle-dissimilarity
//! penalties.
//!
//! The crate trains small CNNs under a group-lasso penalty on channel and
//! filter groups plus a penalty on the pairwise angular similarity of
//! per-channel kernel-norm vectors, prunes 3D filters by norm, and reports
//! the resulting FLOPs reduction and similarity diagnostics.

pub mod analysis;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod nn;
pub mod penalties;
pub mod pruning;
pub mod tensor;

pub use error::{Error, Result};
pub use grouping::{ChannelVectorSet, FilterNormSet};
pub use nn::{Arch, Dims, Layer, Network};
pub use penalties::{PenaltyBreakdown, PenaltyConfig};
pub use pruning::{FlopsReport, PrunePlan};
pub use tensor::{FeatureMap, Shape4, WeightTensor};
