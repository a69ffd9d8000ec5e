//! Hybrid-attention transformer laboratory.
//!
//! Builds RoPE / NoPE / QK-Norm / sliding-window decoder models at desk
//! scale, trains them, probes them with needles-in-a-haystack grids, measures
//! where their attention mass goes and accounts for attention and KV-cache cost.

pub mod analysis;
pub mod attention;
pub mod efficiency;
pub mod error;
pub mod model;
pub mod niah;
pub mod numeric;
pub mod par;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};

/// Library version, embedded in artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use numeric::{Real, Tensor};
pub use par::Parallelism;
