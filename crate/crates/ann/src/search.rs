use std::cmp::Ordering;

use crate::embeddings::EmbeddingMatrix;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hit {
    pub item_id: u32,
    pub score: f32,
}

/// Score descending, then item id ascending.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnStats {
    pub column: usize,
    pub scanned: usize,
    pub nodes_visited: usize,
    pub returned: usize,
    pub elapsed_us: u64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
    pub columns: Vec<ColumnStats>,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<u32> {
        self.hits.iter().map(|h| h.item_id).collect()
    }
}

/// The best `k` hits in [`hit_order`].
pub fn top_k(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    if hits.len() > k && k > 0 {
        hits.select_nth_unstable_by(k - 1, hit_order);
    }
    hits.truncate(k);
    hits.sort_by(hit_order);
    hits
}

/// Global top-K of the union of per-column lists. An id seen twice keeps its
/// best entry.
pub fn merge_top_k(lists: Vec<Vec<Hit>>, k: usize) -> Vec<Hit> {
    let mut all: Vec<Hit> = lists.into_iter().flatten().collect();
    all.sort_by(hit_order);
    let mut seen = std::collections::HashSet::new();
    all.retain(|h| seen.insert(h.item_id));
    all.truncate(k);
    all
}

/// Brute-force top-K by f32 inner product (f64 accumulation).
pub fn exact_top_k(matrix: &EmbeddingMatrix, query: &[f32], k: usize) -> Vec<Hit> {
    let hits = (0..matrix.len())
        .map(|i| Hit {
            item_id: i as u32,
            score: matrix
                .row(i)
                .iter()
                .zip(query)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum::<f64>() as f32,
        })
        .collect();
    top_k(hits, k)
}

/// `|approx ∩ exact| / |exact|`.
pub fn set_recall(approx: &[Hit], exact: &[Hit]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let want: std::collections::HashSet<u32> = exact.iter().map(|h| h.item_id).collect();
    approx.iter().filter(|h| want.contains(&h.item_id)).count() as f64 / want.len() as f64
}
