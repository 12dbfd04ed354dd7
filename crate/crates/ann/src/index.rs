//! Multi-column hierarchical k-means index over INT8 item codes.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::EmbeddingMatrix;
use crate::error::{AnnError, Result};
use crate::kmeans::{kmeans, nearest_centroid};
use crate::quantize::{dequantize, dot_quantized, quantize_int8};
use crate::search::{merge_top_k, top_k, ColumnStats, Hit, SearchResult};

/// How many candidates each column hands to the merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnQuota {
    /// `ceil(K / n_columns)` per column, the production layout.
    Even,
    /// `K` per column, so an exhaustive scan returns the exact global top-K.
    Full,
}

impl ColumnQuota {
    pub fn per_column(self, k: usize, n_columns: usize) -> usize {
        match self {
            ColumnQuota::Even => k.div_ceil(n_columns),
            ColumnQuota::Full => k,
        }
    }
}

/// Frontier priority for best-first descent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    /// `q·c`
    Centroid,
    /// `q·c + |q|·r`, where `r` is the node's covering radius: an upper bound
    /// on the score of anything below the node.
    Bound,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub n_columns: usize,
    pub branching: usize,
    pub depth: usize,
    /// Nodes with at most this many items become leaves.
    pub leaf_cap: usize,
    pub max_scan_ratio: f32,
    pub sample_cap: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub quota: ColumnQuota,
    pub priority: Priority,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            n_columns: 6,
            branching: 32,
            depth: 2,
            leaf_cap: 16,
            max_scan_ratio: 0.01,
            sample_cap: 4_000_000,
            kmeans_iters: 20,
            seed: 0,
            quota: ColumnQuota::Full,
            priority: Priority::Bound,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_columns == 0 {
            return Err(AnnError::Config("n_columns must be at least 1".into()));
        }
        if !(self.max_scan_ratio > 0.0 && self.max_scan_ratio <= 1.0) {
            return Err(AnnError::Config(format!(
                "max_scan_ratio must be in (0, 1], got {}",
                self.max_scan_ratio
            )));
        }
        if self.depth > 0 && self.branching < 2 {
            return Err(AnnError::Config("branching must be at least 2".into()));
        }
        if self.sample_cap == 0 {
            return Err(AnnError::Config("sample_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Internal { first_child: u32, count: u32 },
    Leaf(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub level: u32,
    pub centroid: Vec<f32>,
    pub radius: f32,
    pub kind: NodeKind,
}

/// One shard of the index. Nodes are stored breadth-first, so each level is
/// a contiguous run and children of a node are adjacent.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub(crate) column: usize,
    pub(crate) config: IndexConfig,
    pub(crate) dim: usize,
    pub(crate) nodes: Vec<Node>,
    /// `(offset, len)` into the item arrays.
    pub(crate) leaves: Vec<(u32, u32)>,
    pub(crate) ids: Vec<u32>,
    pub(crate) scales: Vec<f32>,
    pub(crate) codes: Vec<i8>,
}

impl Column {
    pub fn build(matrix: &EmbeddingMatrix, column: usize, config: &IndexConfig) -> Result<Self> {
        config.validate()?;
        let dim = matrix.dim();
        let shard: Vec<u32> = (column..matrix.len()).step_by(config.n_columns).map(|i| i as u32).collect();
        if shard.is_empty() {
            return Err(AnnError::EmptyShard(column));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (column as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

        let mut nodes = vec![Node {
            level: 0,
            centroid: mean(matrix, &shard),
            radius: 0.0,
            kind: NodeKind::Leaf(0),
        }];
        let mut leaves = Vec::new();
        let mut leaf_items: Vec<u32> = Vec::with_capacity(shard.len());
        let mut queue = VecDeque::from([(0usize, shard)]);

        while let Some((node, items)) = queue.pop_front() {
            nodes[node].radius = radius(matrix, &nodes[node].centroid, &items);
            let level = nodes[node].level as usize;
            let groups = if level >= config.depth || items.len() <= config.leaf_cap.max(1) {
                None
            } else {
                split(matrix, &items, config, &mut rng)
            };
            match groups {
                Some(groups) => {
                    nodes[node].kind = NodeKind::Internal {
                        first_child: nodes.len() as u32,
                        count: groups.len() as u32,
                    };
                    for (centroid, members) in groups {
                        queue.push_back((nodes.len(), members));
                        nodes.push(Node {
                            level: level as u32 + 1,
                            centroid,
                            radius: 0.0,
                            kind: NodeKind::Leaf(0),
                        });
                    }
                }
                None => {
                    nodes[node].kind = NodeKind::Leaf(leaves.len() as u32);
                    leaves.push((leaf_items.len() as u32, items.len() as u32));
                    leaf_items.extend(items);
                }
            }
        }

        let mut scales = Vec::with_capacity(leaf_items.len());
        let mut codes = Vec::with_capacity(leaf_items.len() * dim);
        for &id in &leaf_items {
            let (c, s) = quantize_int8(matrix.row(id as usize))?;
            codes.extend(c);
            scales.push(s);
        }
        Ok(Self {
            column,
            config: config.clone(),
            dim,
            nodes,
            leaves,
            ids: leaf_items,
            scales,
            codes,
        })
    }

    pub fn column(&self) -> usize {
        self.column
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Item ids of leaf `leaf`.
    pub fn leaf_items(&self, leaf: usize) -> &[u32] {
        let (off, len) = self.leaves[leaf];
        &self.ids[off as usize..(off + len) as usize]
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn item_ids(&self) -> &[u32] {
        &self.ids
    }

    pub(crate) fn code(&self, pos: usize) -> (&[i8], f32) {
        (&self.codes[pos * self.dim..(pos + 1) * self.dim], self.scales[pos])
    }

    /// Dequantized vectors of this column as `(id, vector)`.
    pub fn dequantized(&self) -> impl Iterator<Item = (u32, Vec<f32>)> + '_ {
        (0..self.ids.len()).map(|p| {
            let (c, s) = self.code(p);
            (self.ids[p], dequantize(c, s))
        })
    }

    /// Leaf reached by always stepping to the nearest child centroid.
    pub fn greedy_leaf(&self, v: &[f32]) -> usize {
        let mut node = 0;
        loop {
            match self.nodes[node].kind {
                NodeKind::Leaf(l) => return l as usize,
                NodeKind::Internal { first_child, count } => {
                    let children: Vec<Vec<f32>> = (first_child..first_child + count)
                        .map(|c| self.nodes[c as usize].centroid.clone())
                        .collect();
                    node = first_child as usize + nearest_centroid(v, &children);
                }
            }
        }
    }

    /// Best-first search scoring at most `ceil(scan_ratio · len)` items.
    pub fn search(&self, query: &[f32], quota: usize, scan_ratio: f32) -> (Vec<Hit>, ColumnStats) {
        let start = Instant::now();
        let budget = scan_budget(scan_ratio, self.len());
        let q_norm = query.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() as f32;
        let priority = |n: &Node| -> f32 {
            let s = dot(query, &n.centroid);
            match self.config.priority {
                Priority::Centroid => s,
                Priority::Bound => s + q_norm * n.radius,
            }
        };

        let mut frontier = std::collections::BinaryHeap::new();
        frontier.push(Frontier { score: priority(&self.nodes[0]), node: 0 });
        let mut scored = Vec::with_capacity(budget);
        let mut nodes_visited = 0;
        while let Some(Frontier { node, .. }) = frontier.pop() {
            if scored.len() >= budget {
                break;
            }
            nodes_visited += 1;
            match self.nodes[node].kind {
                NodeKind::Internal { first_child, count } => {
                    for c in first_child..first_child + count {
                        let c = c as usize;
                        frontier.push(Frontier { score: priority(&self.nodes[c]), node: c });
                    }
                }
                NodeKind::Leaf(l) => {
                    let (off, len) = self.leaves[l as usize];
                    let take = (len as usize).min(budget - scored.len());
                    for p in off as usize..off as usize + take {
                        let (c, s) = self.code(p);
                        scored.push(Hit {
                            item_id: self.ids[p],
                            score: dot_quantized(query, c, s),
                        });
                    }
                }
            }
        }
        let scanned = scored.len();
        let hits = top_k(scored, quota);
        let stats = ColumnStats {
            column: self.column,
            scanned,
            nodes_visited,
            returned: hits.len(),
            elapsed_us: start.elapsed().as_micros() as u64,
        };
        (hits, stats)
    }
}

/// `ceil(scan_ratio · len)`, at least one. The ratio is read as the decimal
/// it prints as, so `0.05 × 1000` is 50 and not 51.
pub fn scan_budget(scan_ratio: f32, len: usize) -> usize {
    let ratio: f64 = scan_ratio.to_string().parse().unwrap_or(scan_ratio as f64);
    ((ratio * len as f64).ceil() as usize).clamp(1, len.max(1))
}

#[derive(Debug)]
struct Frontier {
    score: f32,
    node: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Frontier {}
impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Frontier {
    // max-heap on score, then lower node index first
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score.total_cmp(&other.score).then(other.node.cmp(&self.node))
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean(matrix: &EmbeddingMatrix, items: &[u32]) -> Vec<f32> {
    let mut acc = vec![0.0f64; matrix.dim()];
    for &i in items {
        for (a, v) in acc.iter_mut().zip(matrix.row(i as usize)) {
            *a += *v as f64;
        }
    }
    let inv = 1.0 / items.len().max(1) as f64;
    acc.into_iter().map(|a| (a * inv) as f32).collect()
}

fn radius(matrix: &EmbeddingMatrix, centroid: &[f32], items: &[u32]) -> f32 {
    let r = items
        .iter()
        .map(|&i| crate::kmeans::sq_dist(matrix.row(i as usize), centroid))
        .fold(0.0f64, f64::max)
        .sqrt();
    // round up so the bound never undercuts an f32 score
    (r * (1.0 + 1e-6)) as f32
}

/// Clusters one node. Returns `None` when the node cannot be split.
fn split(
    matrix: &EmbeddingMatrix,
    items: &[u32],
    config: &IndexConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<(Vec<f32>, Vec<u32>)>> {
    let cap = config.sample_cap.min(items.len());
    let sample_ids: Vec<u32> = if cap < items.len() {
        let mut picked: Vec<usize> = sample(rng, items.len(), cap).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|p| items[p]).collect()
    } else {
        items.to_vec()
    };
    let points: Vec<&[f32]> = sample_ids.iter().map(|&i| matrix.row(i as usize)).collect();
    let fit = kmeans(&points, config.branching, config.kmeans_iters, rng);

    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); fit.centroids.len()];
    for &i in items {
        groups[nearest_centroid(matrix.row(i as usize), &fit.centroids)].push(i);
    }
    let out: Vec<(Vec<f32>, Vec<u32>)> = fit
        .centroids
        .into_iter()
        .zip(groups)
        .filter(|(_, g)| !g.is_empty())
        .collect();
    (out.len() > 1).then_some(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnIndex {
    columns: Vec<Column>,
}

impl AnnIndex {
    pub fn build(matrix: &EmbeddingMatrix, config: &IndexConfig) -> Result<Self> {
        config.validate()?;
        if matrix.len() < config.n_columns {
            return Err(AnnError::EmptyShard(matrix.len()));
        }
        let columns = (0..config.n_columns)
            .map(|c| Column::build(matrix, c, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { columns })
    }

    pub fn from_columns(mut columns: Vec<Column>) -> Result<Self> {
        columns.sort_by_key(|c| c.column);
        let n = columns.len();
        for (i, c) in columns.iter().enumerate() {
            if c.column != i || c.config.n_columns != n {
                return Err(AnnError::Format(format!(
                    "column {} of {} does not fit a {n}-column index",
                    c.column, c.config.n_columns
                )));
            }
            if c.dim != columns[0].dim {
                return Err(AnnError::Dim {
                    expected: columns[0].dim,
                    got: c.dim,
                });
            }
        }
        if n == 0 {
            return Err(AnnError::Format("index has no columns".into()));
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn config(&self) -> &IndexConfig {
        &self.columns[0].config
    }

    pub fn dim(&self) -> usize {
        self.columns[0].dim
    }

    pub fn len(&self) -> usize {
        self.columns.iter().map(Column::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn search(&self, query: &[f32], k: usize, scan_ratio: f32) -> Result<SearchResult> {
        if query.len() != self.dim() {
            return Err(AnnError::Dim {
                expected: self.dim(),
                got: query.len(),
            });
        }
        if let Some(i) = query.iter().position(|x| x.is_nan()) {
            return Err(AnnError::NaN(i));
        }
        if !(scan_ratio > 0.0 && scan_ratio <= 1.0) {
            return Err(AnnError::Config(format!("scan_ratio must be in (0, 1], got {scan_ratio}")));
        }
        let n = self.columns.len();
        if k < n {
            return Err(AnnError::KTooSmall { k, columns: n });
        }
        let quota = self.config().quota.per_column(k, n);
        let mut lists = Vec::with_capacity(n);
        let mut stats = Vec::with_capacity(n);
        for col in &self.columns {
            let (hits, s) = col.search(query, quota, scan_ratio);
            lists.push(hits);
            stats.push(s);
        }
        Ok(SearchResult {
            hits: merge_top_k(lists, k),
            columns: stats,
        })
    }

    /// Exact top-K over the dequantized vectors held by the index.
    pub fn exact_top_k(&self, query: &[f32], k: usize) -> Vec<Hit> {
        let mut all = Vec::with_capacity(self.len());
        for col in &self.columns {
            for p in 0..col.len() {
                let (c, s) = col.code(p);
                all.push(Hit {
                    item_id: col.ids[p],
                    score: dot_quantized(query, c, s),
                });
            }
        }
        top_k(all, k)
    }

    pub fn column_path(dir: &Path, column: usize) -> PathBuf {
        dir.join(format!("column_{column:03}.mgx"))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.columns
            .iter()
            .map(|c| {
                let path = Self::column_path(dir, c.column);
                c.save(&path)?;
                Ok(path)
            })
            .collect()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "mgx"))
            .collect();
        paths.sort();
        let columns = paths.iter().map(Column::load).collect::<Result<Vec<_>>>()?;
        Self::from_columns(columns)
    }
}
