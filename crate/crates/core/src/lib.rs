//! Embedding-based product retrieval: synthetic corpus, query and user
//! towers, item tower, sampled-softmax training, boolean relevance filter,
//! offline evaluation, and the end-to-end pipeline.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod item_tower;
pub mod mgs;
pub mod model;
pub mod pipeline;
pub mod relevance;
pub mod text;
pub mod training;
pub mod user_tower;

pub use error::{CoreError, Result};
