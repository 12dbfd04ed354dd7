//! Offline metrics: Recall@K, good rate, funnel counters, and the report.

use std::collections::BTreeSet;

use mgdspr_numerics::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClickRecord, Corpus};
use crate::error::{CoreError, Result};
use crate::model::{Example, Model};
use crate::text::QueryFeatures;

/// `|retrieved ∩ targets| / |targets|`; `None` when there are no targets.
pub fn recall_at_k(retrieved: &[u32], targets: &BTreeSet<u32>) -> Option<f64> {
    if targets.is_empty() {
        return None;
    }
    let got: BTreeSet<u32> = retrieved.iter().copied().collect();
    Some(got.intersection(targets).count() as f64 / targets.len() as f64)
}

/// Fraction of `retrieved` labelled good. Fails if any label is missing.
pub fn good_rate(retrieved: &[u32], label: impl Fn(u32) -> Option<bool>) -> Result<f64> {
    if retrieved.is_empty() {
        return Ok(0.0);
    }
    let mut good = 0usize;
    for &id in retrieved {
        match label(id) {
            Some(true) => good += 1,
            Some(false) => {}
            None => return Err(CoreError::Data(format!("no relevance label for item {id}"))),
        }
    }
    Ok(good as f64 / retrieved.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FunnelConfig {
    pub prerank_keep: f64,
    pub rank_keep: f64,
    pub seed: u64,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        Self {
            prerank_keep: 1.0,
            rank_keep: 0.34,
            seed: 0,
        }
    }
}

impl FunnelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("prerank_keep", self.prerank_keep), ("rank_keep", self.rank_keep)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CoreError::Config(format!("{name} must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Funnel {
    pub num_prank: usize,
    pub num_rank: usize,
    /// The items passed to ranking, in input order.
    pub ranked: Vec<u32>,
}

/// Everything surviving the filter enters pre-ranking; pre-ranking and
/// ranking each keep a seeded random subset of the stated fraction.
pub fn funnel_counts(filtered: &[u32], config: &FunnelConfig, query_index: u64) -> Funnel {
    let num_prank = filtered.len();
    let after_prerank = (config.prerank_keep * num_prank as f64).round() as usize;
    let num_rank = ((config.rank_keep * after_prerank as f64).round() as usize).min(num_prank);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ query_index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut picked = rand::seq::index::sample(&mut rng, num_prank, num_rank).into_vec();
    picked.sort_unstable();
    Funnel {
        num_prank,
        num_rank,
        ranked: picked.into_iter().map(|i| filtered[i]).collect(),
    }
}

/// One logged query with its target set (clicked item plus relevant
/// purchases made elsewhere).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalQuery {
    pub user_id: u32,
    pub query_tokens: Vec<u32>,
    pub targets: BTreeSet<u32>,
}

/// Test queries in log order, at most `limit`.
pub fn test_queries(corpus: &Corpus, limit: Option<usize>) -> Vec<EvalQuery> {
    queries_from(corpus, &corpus.clicks_test, limit)
}

pub fn queries_from(corpus: &Corpus, clicks: &[ClickRecord], limit: Option<usize>) -> Vec<EvalQuery> {
    let aux = corpus.aux_targets();
    clicks
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|c| {
            let mut targets = BTreeSet::from([c.clicked_item_id]);
            if let Some(extra) = aux.get(&(c.user_id, c.query_tokens.clone())) {
                targets.extend(extra);
            }
            EvalQuery {
                user_id: c.user_id,
                query_tokens: c.query_tokens.clone(),
                targets,
            }
        })
        .collect()
}

/// Held-out queries scored by exact search during training.
#[derive(Clone, Debug)]
pub struct Validation {
    pub queries: Vec<EvalQuery>,
    pub features: Vec<QueryFeatures>,
}

impl Validation {
    pub fn new(corpus: &Corpus, queries: Vec<EvalQuery>, buckets: usize) -> Result<Self> {
        let features = queries
            .iter()
            .map(|q| QueryFeatures::from_tokens(&q.query_tokens, &corpus.vocab, buckets))
            .collect::<Result<_>>()?;
        Ok(Self { queries, features })
    }

    /// Mean Recall@K of exact inner-product search over all items.
    pub fn recall(&self, model: &Model, store: &ParamStore<f32>, corpus: &Corpus, k: usize) -> Result<f64> {
        let items = model.export_items(store, &corpus.items)?;
        let mut total = 0.0;
        let mut counted = 0usize;
        for (q, f) in self.queries.iter().zip(&self.features) {
            let ex = Example::new(corpus.user(q.user_id), f.clone());
            let u = model.user_vector(store, &ex, &corpus.items)?;
            let hits = mgdspr_ann::exact_top_k(&items, &u, k);
            let ids: Vec<u32> = hits.iter().map(|h| h.item_id).collect();
            if let Some(r) = recall_at_k(&ids, &q.targets) {
                total += r;
                counted += 1;
            }
        }
        Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_recall: usize,
    pub k_good: usize,
    /// Scan ratio for ANN search; the index's `max_scan_ratio` when unset.
    pub scan_ratio: Option<f32>,
    pub max_queries: Option<usize>,
    pub funnel: FunnelConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_recall: 100,
            k_good: 100,
            scan_ratio: None,
            max_queries: None,
            funnel: FunnelConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn k(&self) -> usize {
        self.k_recall.max(self.k_good)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub user_id: u32,
    pub query_tokens: Vec<u32>,
    pub recall: Option<f64>,
    pub p_good: f64,
    pub num_prank: usize,
    pub num_rank: usize,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_k: f64,
    pub p_good: f64,
    pub num_prank: f64,
    pub num_rank: f64,
    pub n_queries: usize,
    /// Queries without targets, excluded from `recall_at_k`.
    pub n_skipped: usize,
    pub filter_kept: usize,
    pub filter_dropped: usize,
    pub config: EvalConfig,
    pub queries: Vec<QueryRecord>,
}

impl EvalReport {
    /// Aggregates per-query records in order.
    pub fn from_records(records: Vec<QueryRecord>, config: EvalConfig) -> Self {
        let n = records.len();
        let recalls: Vec<f64> = records.iter().filter_map(|r| r.recall).collect();
        let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| if n == 0 { 0.0 } else { xs.sum::<f64>() / n as f64 };
        Self {
            recall_at_k: mean(&mut recalls.iter().copied(), recalls.len()),
            p_good: mean(&mut records.iter().map(|r| r.p_good), n),
            num_prank: mean(&mut records.iter().map(|r| r.num_prank as f64), n),
            num_rank: mean(&mut records.iter().map(|r| r.num_rank as f64), n),
            n_queries: n,
            n_skipped: n - recalls.len(),
            filter_kept: records.iter().map(|r| r.kept).sum(),
            filter_dropped: records.iter().map(|r| r.dropped).sum(),
            config,
            queries: records,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-query CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["user_id", "query", "recall", "p_good", "num_prank", "num_rank", "kept", "dropped"])
            .map_err(|e| CoreError::Data(e.to_string()))?;
        for q in &self.queries {
            let query = q.query_tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
            w.write_record([
                q.user_id.to_string(),
                query,
                q.recall.map(|r| r.to_string()).unwrap_or_default(),
                q.p_good.to_string(),
                q.num_prank.to_string(),
                q.num_rank.to_string(),
                q.kept.to_string(),
                q.dropped.to_string(),
            ])
            .map_err(|e| CoreError::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CoreError::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}
