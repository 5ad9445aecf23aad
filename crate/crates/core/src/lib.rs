//! Answer-aware question generation with a transformer encoder-decoder
//! trained on a mixed likelihood / reward-weighted objective. Rewards blend
//! sentence BLEU with the cosine similarity of `[CLS]` embeddings from a
//! frozen encoder pretrained on replaced-token detection.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod generator;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod tokenizer;
pub mod training;
pub mod transformer;

pub use error::{Error, ErrorClass, Result};
