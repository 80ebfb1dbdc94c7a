//! Slot filling as single-span extraction.
//!
//! Each slot gets its own extractor: subword tokens are embedded (a trainable
//! table or fixed precomputed vectors), concatenated with a few surface
//! features, and passed through a stack of 1D convolutions whose output
//! parameterises a linear-chain CRF over the tags `BEF`, `BEG`, `IN`, `AFT`.
//! The highest-scoring well-formed tag sequence marks at most one span.
//!
//! ```no_run
//! use std::path::Path;
//! use spanslot::SlotExtractor;
//!
//! let ex = SlotExtractor::load(Path::new("runs/r8k/time/model.json"), None)?;
//! let p = ex.predict("u1", "a table for two at 8pm", false)?;
//! println!("{:?} {:.3}", p.span, p.confidence);
//! # Ok::<(), spanslot::Error>(())
//! ```

pub mod cli;
pub mod crf;
pub mod data;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod synthetic;
pub mod tagging;
pub mod tokenizer;
pub mod trainer;

pub use crf::StepPotentials;
pub use data::{CharSpan, Dataset, DatasetFormat, LoadOptions, SpanLabel, Utterance};
pub use embeddings::{EmbeddingMode, EmbeddingProvider, PrecomputedEmbeddings};
pub use encoder::{EncoderConfig, EncoderWeights};
pub use error::{Error, Result};
pub use eval::{ErrorCategory, SlotScore, SpanPrediction};
pub use model::{DecodeMask, SlotExtractor};
pub use tagging::{Tag, TagSequence};
pub use tokenizer::Vocabulary;
pub use trainer::{Fraction, TrainConfig};
