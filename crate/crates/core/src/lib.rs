#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
extern crate alloc;

pub mod codec;
pub mod geometry;
pub mod grpo;
pub mod math;
pub mod pseudolabel;
pub mod regress;
pub mod reward;
pub mod scene;
pub mod selftrain;

pub use codec::{ActionDelta, CodecError, DecodeMode, Dimension, TokenSeq, TokenVocab};
