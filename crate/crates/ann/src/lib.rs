//! Approximate nearest-neighbour retrieval over INT8 item embeddings: a
//! hierarchical k-means tree per column, best-first search under a scan
//! budget, and a deterministic cross-column merge.

pub mod embeddings;
pub mod error;
pub mod format;
pub mod index;
pub mod kmeans;
pub mod quantize;
pub mod search;

pub use embeddings::EmbeddingMatrix;
pub use error::{AnnError, Result};
pub use index::{scan_budget, AnnIndex, Column, ColumnQuota, IndexConfig, Node, NodeKind, Priority};
pub use quantize::{dequantize, dot_quantized, quantize_int8};
pub use search::{exact_top_k, merge_top_k, set_recall, top_k, ColumnStats, Hit, SearchResult};
