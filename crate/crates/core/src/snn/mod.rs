//! Spiking network core: the iLIF neuron, layer primitives and the
//! reverse-mode tape that implements backprop-through-time.

pub mod kernels;
pub mod lif;
pub mod loss;
pub mod tape;

pub use kernels::ConvGeometry;
pub use lif::{lif_step, pseudo_grad, LifParams, LifState, SpikeFn};
pub use tape::{Gradients, LifOut, ParamId, Tape, Var};
