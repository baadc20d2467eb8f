//! Multiview embeddings learned from crowdsourced double-sided triplet
//! comparisons, with a synthetic colored-digit corpus, simulated workers and
//! an evaluation suite.

pub mod checkpoint;
pub mod crowdsim;
pub mod data;
pub mod error;
pub mod eval;
pub mod hexfloat;
pub mod model;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use data::{ItemId, ItemStore, TripletAnnotation};
pub use error::{Error, Result};
pub use model::{EncoderConfig, ItemTensor, ModelParams, MultiviewEmbedding};
