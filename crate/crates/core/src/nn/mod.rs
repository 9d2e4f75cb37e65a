//! Small tanh MLPs with exact backprop, Adam, and a text checkpoint codec.

mod adam;
pub(crate) mod codec;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use codec::{decode_f64s, encode_f64s, CHECKPOINT_VERSION};
pub use mlp::{mlp_backward, mlp_forward, ForwardCache, MlpParams};
