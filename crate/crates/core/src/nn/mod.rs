//! Minimal CNN engine: layers, networks, architectures and SGD.

mod arch;
pub mod layers;
mod network;

pub use arch::Arch;
pub use layers::Dense;
pub(crate) use network::argmax;
pub use network::{
    sgd_step, Conv2d, Dims, Gradients, Layer, LayerKind, Network, NetworkBuilder, ParamGrad, Sgd,
};
