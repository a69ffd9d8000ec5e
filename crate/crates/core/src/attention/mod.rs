//! Positional schemes, masks and masked grouped-query attention.

mod attend;
mod mask;
mod qknorm;
mod rope;
mod trace;

pub use attend::{attend, Attended, HeadLayout};
pub(crate) use attend::{attend_backward, attend_forward, BlockPlan};
pub use mask::{build_mask, AttnMask, MaskKind};
pub use qknorm::{apply_qk_norm, QkNormParams};
pub use rope::{apply_rope, build_rope_cache, RopeCache};
pub(crate) use rope::rotate_in_place;
pub use trace::{AttentionTrace, LayerKind, TraceMeta};
