//! Frame-to-frame relevance for per-frame-logit video action models.
//!
//! A [`ModelGraph`] runs clips forward to per-frame logits; [`relevance_matrix`]
//! back-propagates each frame's logit with LRP or contrastive LRP and sums the
//! input relevance per frame. The [`atr`] module turns those matrices into
//! action temporal relevance (ATR) metrics and [`partial`] checks them by
//! evaluating with only a window of each clip visible.

pub mod atr;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod graph;
pub mod layer;
pub mod lrp;
pub mod partial;
pub mod synth;
pub mod tensor;

pub use atr::{video_atr, AtrReport, RelevanceMatrix};
pub use error::{Error, Result};
pub use graph::{FrameLogits, ModelGraph};
pub use lrp::rules::{PropagationRuleSet, Rule};
pub use lrp::{relevance_matrix, Mode};
pub use tensor::{ClipTensor, Tensor};
