//! Corpus preparation for speech translation: VAD-driven long-form audio
//! segmentation and a text filtering pipeline (cleaning, deduplication,
//! language ID, alignment-quality filtering and cross-entropy difference
//! domain selection).

pub mod activation;
pub mod align;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod lmselect;
pub mod segmenter;
pub mod textclean;

pub use error::{Error, Result};
