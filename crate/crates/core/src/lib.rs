//! Mask-aware blocked attention.
//!
//! The crate provides a tiled attention engine with online softmax that
//! consults a block-level occupancy matrix built from a binary attention mask
//! and skips every tile whose mask block is entirely zero. Tiles that belong to
//! a leading run of fully-one mask blocks are processed without reading the
//! mask at all. Around the engine sit:
//!
//! * [`reference`]: a naive double-precision oracle (forward, analytic
//!   backward, finite differences),
//! * [`mask`]: the mask container, block-sum preprocessing and the on-disk
//!   `BBMK` / `BBLK` formats,
//! * [`generators`]: constructors for tree (speculative decoding), packed,
//!   Longformer-style, causal, all-ones and random masks,
//! * [`reorder`]: Reverse Cuthill-McKee reordering of the mask graph.

pub mod engine;
pub mod error;
pub mod generators;
pub mod mask;
pub mod matrix;
pub mod reference;
pub mod reorder;

pub use engine::{
    blocked_backward, blocked_forward, run_attention_backward, run_attention_forward,
    AttentionBatch, EngineCounters, Prep, SavedForwardState, Variant,
};
pub use error::{Error, FormatError, Result};
pub use generators::MaskSpec;
pub use mask::{BinBlkMat, BlockSpec, BlockStats, BlockSumMatrix, DenseRunMeta, Mask};
pub use matrix::{AttentionGrads, AttentionInputs, AttentionOutput, Element, Matrix};
pub use reorder::{Permutation, SparsityGraph};
