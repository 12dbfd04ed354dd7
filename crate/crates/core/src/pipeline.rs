//! End-to-end stages shared by the command line and the tests: generate
//! data, train, export item vectors, build the index, retrieve, evaluate.

use std::path::{Path, PathBuf};

use mgdspr_ann::{AnnIndex, EmbeddingMatrix, Hit, IndexConfig};
use mgdspr_numerics::{checkpoint, ParamStore};
use serde::{Deserialize, Serialize};

use crate::corpus::{generate, Corpus, GeneratorConfig, UserLog};
use crate::error::{CoreError, Result};
use crate::eval::{funnel_counts, good_rate, recall_at_k, test_queries, EvalConfig, EvalReport, QueryRecord, Validation};
use crate::model::{Model, ModelConfig, ModelDims};
use crate::relevance::{KeyTermRule, RelevanceFilter};
use crate::text::{tokenize, QueryFeatures};
use crate::training::{train, TrainConfig, TrainOutcome};

/// Where each artifact lives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub embeddings: PathBuf,
    pub index: PathBuf,
    /// Extra lexicon files; the corpus brand and category lexicons are always used.
    pub lexicons: Vec<PathBuf>,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self::under(Path::new("out"))
    }
}

impl Paths {
    pub fn under(dir: &Path) -> Self {
        Self {
            corpus: dir.join("corpus"),
            checkpoint: dir.join("model.mgd"),
            metrics: dir.join("metrics.csv"),
            embeddings: dir.join("items.mge"),
            index: dir.join("index"),
            lexicons: Vec::new(),
            report: dir.join("report.json"),
        }
    }

    /// Makes relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.checkpoint,
            &mut self.metrics,
            &mut self.embeddings,
            &mut self.index,
            &mut self.report,
        ]
        .into_iter()
        .chain(self.lexicons.iter_mut())
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub paths: Paths,
    pub data: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub index: IndexConfig,
    pub eval: EvalConfig,
    pub relevance: KeyTermRule,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: Paths::default(),
            data: GeneratorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            index: IndexConfig::default(),
            eval: EvalConfig::default(),
            relevance: KeyTermRule::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.paths.rebase(base);
        cfg.apply_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CoreError::file(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Derives stage seeds from the master seed.
    pub fn apply_seed(&mut self) {
        let s = self.seed;
        self.data.seed = s;
        self.model.seed = s.wrapping_add(1);
        self.train.seed = s.wrapping_add(2);
        self.index.seed = s.wrapping_add(3);
        self.eval.funnel.seed = s.wrapping_add(4);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.apply_seed();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate(self.data.n_items)?;
        self.index.validate()?;
        self.eval.funnel.validate()?;
        Ok(())
    }
}

pub fn gen_data(cfg: &PipelineConfig) -> Result<Corpus> {
    let corpus = generate(&cfg.data)?;
    corpus.write(&cfg.paths.corpus)?;
    Ok(corpus)
}

pub fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    Corpus::load(&cfg.paths.corpus, cfg.data.caps)
}

/// Validation set used for training curves: the first `eval_queries` test clicks.
pub fn validation(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Validation> {
    Validation::new(
        corpus,
        test_queries(corpus, Some(cfg.train.eval_queries)),
        cfg.model.bigram_buckets,
    )
}

/// Trains from initialization and writes the checkpoint and metrics. On
/// divergence the last good parameters are still written before the error
/// is returned.
pub fn train_stage(cfg: &PipelineConfig, corpus: &Corpus) -> Result<(Model, ParamStore<f32>, TrainOutcome)> {
    let (model, mut store) = Model::new::<f32>(&cfg.model, ModelDims::of(corpus))?;
    let val = validation(cfg, corpus)?;
    let mut outcome = train(&model, &mut store, corpus, &cfg.train, Some(&val))?;
    if let Some(dir) = cfg.paths.checkpoint.parent() {
        std::fs::create_dir_all(dir).map_err(CoreError::file(dir))?;
    }
    checkpoint::save(&cfg.paths.checkpoint, &store)?;
    outcome.write_csv(&cfg.paths.metrics)?;
    if let Some(e) = outcome.diverged.take() {
        return Err(e);
    }
    Ok((model, store, outcome))
}

pub fn load_model(cfg: &PipelineConfig, corpus: &Corpus) -> Result<(Model, ParamStore<f32>)> {
    Model::load(&cfg.model, ModelDims::of(corpus), &cfg.paths.checkpoint)
}

pub fn export_stage(cfg: &PipelineConfig, corpus: &Corpus) -> Result<EmbeddingMatrix> {
    let (model, store) = load_model(cfg, corpus)?;
    let m = model.export_items(&store, &corpus.items)?;
    m.save(&cfg.paths.embeddings)?;
    Ok(m)
}

pub fn build_index_stage(cfg: &PipelineConfig) -> Result<AnnIndex> {
    let m = EmbeddingMatrix::load(&cfg.paths.embeddings)?;
    let index = AnnIndex::build(&m, &cfg.index)?;
    index.save(&cfg.paths.index)?;
    Ok(index)
}

/// Default serve-time K: `min(9600, items / 10)`, at least one per column.
pub fn default_k(n_items: usize, n_columns: usize) -> usize {
    (n_items / 10).min(9600).max(n_columns)
}

/// Output of one retrieval: raw ANN hits and what survived the filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    pub kept: Vec<Hit>,
    pub dropped: usize,
}

/// Serve-time snapshot: user network, item index and relevance filter.
#[derive(Debug)]
pub struct Retriever<'c> {
    pub corpus: &'c Corpus,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub index: AnnIndex,
    pub filter: RelevanceFilter,
    pub scan_ratio: f32,
}

impl<'c> Retriever<'c> {
    pub fn new(corpus: &'c Corpus, model: Model, store: ParamStore<f32>, index: AnnIndex, cfg: &PipelineConfig) -> Result<Self> {
        let mut filter = RelevanceFilter::from_corpus(corpus, cfg.relevance.clone());
        if !cfg.paths.lexicons.is_empty() {
            let paths: Vec<&Path> = cfg.paths.lexicons.iter().map(PathBuf::as_path).collect();
            let extra = crate::relevance::Lexicons::load(&paths)?;
            for class in crate::relevance::TermClass::ALL {
                for t in extra.tokens(class) {
                    filter.lexicons.insert(class, t);
                }
            }
        }
        Ok(Self {
            corpus,
            model,
            store,
            index,
            filter,
            scan_ratio: cfg.eval.scan_ratio.unwrap_or(cfg.index.max_scan_ratio),
        })
    }

    /// Loads the checkpoint and index named by `cfg`.
    pub fn load(cfg: &PipelineConfig, corpus: &'c Corpus) -> Result<Self> {
        let (model, store) = load_model(cfg, corpus)?;
        let index = AnnIndex::load(&cfg.paths.index)?;
        Self::new(corpus, model, store, index, cfg)
    }

    pub fn default_k(&self) -> usize {
        default_k(self.corpus.items.len(), self.index.columns().len())
    }

    /// User vector, ANN search, then the boolean filter on `terms`.
    pub fn retrieve(&self, user: Option<&UserLog>, query: QueryFeatures, terms: &[String], k: usize) -> Result<Retrieval> {
        let ex = crate::model::Example::new(user, query);
        let u = self.model.user_vector(&self.store, &ex, &self.corpus.items)?;
        let hits = self.index.search(&u, k, self.scan_ratio)?.hits;
        let f = self.filter.apply(terms, &hits);
        Ok(Retrieval {
            hits,
            kept: f.kept,
            dropped: f.dropped,
        })
    }

    /// Raw query text; unknown users take the cold path.
    pub fn retrieve_text(&self, user_id: u32, query: &str, k: usize) -> Result<Retrieval> {
        let segments = tokenize(query)?;
        let q = QueryFeatures::from_segments(&segments, &self.corpus.vocab, self.model.config.bigram_buckets);
        let terms: Vec<String> = segments.into_iter().map(|s| s.text).collect();
        self.retrieve(self.corpus.user(user_id), q, &terms, k)
    }

    /// Logged query given as token ids.
    pub fn retrieve_tokens(&self, user_id: u32, tokens: &[u32], k: usize) -> Result<Retrieval> {
        let q = QueryFeatures::from_tokens(tokens, &self.corpus.vocab, self.model.config.bigram_buckets)?;
        let terms: Vec<String> = tokens.iter().map(|&t| self.corpus.vocab.text(&[t])).collect();
        self.retrieve(self.corpus.user(user_id), q, &terms, k)
    }

    /// Offline evaluation over the test clicks. Recall and good rate are
    /// measured on the raw ANN top-K; funnel counts after the filter.
    pub fn evaluate(&self, config: &EvalConfig) -> Result<EvalReport> {
        config.funnel.validate()?;
        let queries = test_queries(self.corpus, config.max_queries);
        let k = config.k();
        let mut records = Vec::with_capacity(queries.len());
        for (qi, q) in queries.iter().enumerate() {
            let r = self.retrieve_tokens(q.user_id, &q.query_tokens, k)?;
            let ids: Vec<u32> = r.hits.iter().map(|h| h.item_id).collect();
            let recall = recall_at_k(&ids[..ids.len().min(config.k_recall)], &q.targets);
            let p_good = good_rate(&ids[..ids.len().min(config.k_good)], |i| {
                self.corpus.is_good(&q.query_tokens, i)
            })?;
            let kept: Vec<u32> = r.kept.iter().map(|h| h.item_id).collect();
            let funnel = funnel_counts(&kept, &config.funnel, qi as u64);
            records.push(QueryRecord {
                user_id: q.user_id,
                query_tokens: q.query_tokens.clone(),
                recall,
                p_good,
                num_prank: funnel.num_prank,
                num_rank: funnel.num_rank,
                kept: r.kept.len(),
                dropped: r.dropped,
            });
        }
        Ok(EvalReport::from_records(records, config.clone()))
    }
}

/// Evaluates the artifacts named by `cfg` and writes the JSON and CSV reports.
pub fn eval_stage(cfg: &PipelineConfig, corpus: &Corpus) -> Result<EvalReport> {
    let r = Retriever::load(cfg, corpus)?;
    let report = r.evaluate(&cfg.eval)?;
    write_report(&report, &cfg.paths.report)?;
    Ok(report)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()).map_err(CoreError::file(path))?;
    let csv = path.with_extension("csv");
    std::fs::write(&csv, report.to_csv()?).map_err(CoreError::file(&csv))
}

/// Runs every stage in memory and on disk, returning the report.
pub fn run_all(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    gen_data(cfg)?;
    let corpus = load_corpus(cfg)?;
    train_stage(cfg, &corpus)?;
    export_stage(cfg, &corpus)?;
    build_index_stage(cfg)?;
    eval_stage(cfg, &corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tau,
    NHard,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tau" => Some(Self::Tau),
            "n_hard" | "n-hard" | "n" => Some(Self::NHard),
            _ => None,
        }
    }

    pub fn apply(self, cfg: &mut PipelineConfig, value: f64) -> Result<()> {
        match self {
            Self::Tau => cfg.train.loss.temperature = value,
            Self::NHard => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(CoreError::Config(format!("hard-negative count must be a whole number, got {value}")));
                }
                cfg.train.loss.hard_negatives = value as usize;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub p_good: f64,
    pub recall: f64,
}

/// Trains, indexes and evaluates one model per value on a shared corpus.
/// Artifacts go under `<work>/<axis>_<value>/`.
pub fn run_sweep(cfg: &PipelineConfig, corpus: &Corpus, axis: SweepAxis, values: &[f64], work: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        axis.apply(&mut c, v)?;
        c.validate()?;
        let dir = work.join(format!("{axis:?}_{v}").to_lowercase());
        std::fs::create_dir_all(&dir).map_err(CoreError::file(&dir))?;
        c.paths = Paths {
            corpus: cfg.paths.corpus.clone(),
            lexicons: cfg.paths.lexicons.clone(),
            ..Paths::under(&dir)
        };
        let (model, store, _) = train_stage(&c, corpus)?;
        let m = model.export_items(&store, &corpus.items)?;
        let index = AnnIndex::build(&m, &c.index)?;
        let r = Retriever::new(corpus, model, store, index, &c)?;
        let report = r.evaluate(&c.eval)?;
        log::info!("sweep {axis:?}={v}: p_good {:.4} recall {:.4}", report.p_good, report.recall_at_k);
        rows.push(SweepRow {
            value: v,
            p_good: report.p_good,
            recall: report.recall_at_k,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CoreError::Data(e.to_string()))?;
    }
    w.flush().map_err(CoreError::file(path))
}
