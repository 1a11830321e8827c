//! Supervised graph contrastive learning for connectome classification.
//!
//! A multi-layer GCN encodes each subject's structural connectome into node
//! embeddings. Their concatenation feeds an inner-product decoder that
//! reconstructs functional connectivity, and a mean-pooled graph embedding
//! feeds a logistic classifier. Training either optimizes the joint
//! reconstruction + classification loss directly, or pre-trains the encoder
//! with a supervised contrastive loss over augmented views and then
//! fine-tunes the classifier.

pub mod augment;
mod error;
pub mod evaluation;
pub mod graph_data;
pub mod losses;
pub mod model;
pub mod optim;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
