//! Decoder-only transformer: configuration, layer layouts, parameters, forward pass.

mod checkpoint;
mod config;
mod forward;
mod pattern;
mod weights;

pub use checkpoint::{checkpoint_bytes, read_checkpoint, read_checkpoint_with_meta, write_checkpoint, write_checkpoint_with_meta};
pub use config::ModelConfig;
pub use forward::{forward, ForwardOutput, Graph, Model, INIT_SCALE, NORM_EPS, QK_NORM_EPS};
pub use pattern::{build_layer_pattern, LayerPattern, LayerSpec, Positional, Variant};
pub use weights::{init_params, param_layout, ParamStore};
