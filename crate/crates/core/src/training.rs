//! Sampled softmax with temperature, shared batch negatives and
//! interpolated hard negatives; the pairwise hinge baseline; the training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mgdspr_numerics::{AdaGrad, Graph, NodeId, ParamStore, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Item};
use crate::error::{CoreError, Result};
use crate::eval::Validation;
use crate::model::{Example, Model};
use crate::text::QueryFeatures;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Softmax,
    Hinge { margin: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossToml", into = "LossToml")]
pub struct LossConfig {
    pub temperature: f64,
    /// Hard negatives generated per example.
    pub hard_negatives: usize,
    pub mix_bounds: (f64, f64),
    pub kind: LossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            hard_negatives: 684,
            mix_bounds: (0.4, 0.6),
            kind: LossKind::Softmax,
        }
    }
}

/// Flat on-disk form: `kind = "softmax" | "hinge"` with `margin` beside it.
#[derive(Serialize, Deserialize)]
#[serde(default)]
struct LossToml {
    kind: String,
    temperature: f64,
    hard_negatives: usize,
    mix_bounds: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
}

impl Default for LossToml {
    fn default() -> Self {
        LossConfig::default().into()
    }
}

impl From<LossConfig> for LossToml {
    fn from(c: LossConfig) -> Self {
        let (kind, margin) = match c.kind {
            LossKind::Softmax => ("softmax", None),
            LossKind::Hinge { margin } => ("hinge", Some(margin)),
        };
        Self {
            kind: kind.into(),
            temperature: c.temperature,
            hard_negatives: c.hard_negatives,
            mix_bounds: c.mix_bounds,
            margin,
        }
    }
}

impl TryFrom<LossToml> for LossConfig {
    type Error = String;

    fn try_from(t: LossToml) -> std::result::Result<Self, String> {
        let kind = match t.kind.as_str() {
            "softmax" => LossKind::Softmax,
            "hinge" => LossKind::Hinge {
                margin: t.margin.unwrap_or(0.1),
            },
            other => return Err(format!("unknown loss kind `{other}`")),
        };
        Ok(Self {
            temperature: t.temperature,
            hard_negatives: t.hard_negatives,
            mix_bounds: t.mix_bounds,
            kind,
        })
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(CoreError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        let (a, b) = self.mix_bounds;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(CoreError::Config(format!("mix bounds must satisfy 0 <= a < b <= 1, got ({a}, {b})")));
        }
        if let LossKind::Hinge { margin } = self.kind {
            if !(margin > 0.0) {
                return Err(CoreError::Config(format!("hinge margin must be > 0, got {margin}")));
            }
        }
        Ok(())
    }
}

/// Indices of the `n` highest `scores`, valid entries first, ties to the
/// lower index.
pub fn select_hard(scores: &[f64], valid: &[bool], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        valid[b]
            .cmp(&valid[a])
            .then(scores[b].total_cmp(&scores[a]))
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// `I_mix` rows for one example, computed directly. Returns the selected
/// negative rows and the mixtures `α_j i+ + (1 − α_j) hard_j`.
pub fn gen_hard_negatives(
    q_u: &[f64],
    i_plus: &[f64],
    negs: &[Vec<f64>],
    alphas: &[f64],
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let n = alphas.len();
    if n > negs.len() {
        return Err(CoreError::Config(format!(
            "{n} hard negatives requested from {} sampled negatives",
            negs.len()
        )));
    }
    let scores: Vec<f64> = negs.iter().map(|v| dot(q_u, v)).collect();
    let sel = select_hard(&scores, &vec![true; negs.len()], n);
    let mix = sel
        .iter()
        .zip(alphas)
        .map(|(&j, &a)| i_plus.iter().zip(&negs[j]).map(|(p, h)| a * p + (1.0 - a) * h).collect())
        .collect();
    Ok((sel, mix))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a `rows × n` matrix of mixing weights from `U(a, b)`.
pub fn draw_alphas<R: Rng + ?Sized>(rows: usize, n: usize, bounds: (f64, f64), rng: &mut R) -> Vec<f64> {
    (0..rows * n).map(|_| rng.random_range(bounds.0..bounds.1)).collect()
}

/// Loss over embeddings already in the graph.
#[derive(Clone, Debug)]
pub struct LossNodes {
    pub loss: NodeId,
    /// `B × (1 + S + N)` logits after temperature, for the softmax loss.
    pub logits: Option<NodeId>,
    pub mask: Vec<bool>,
    /// Fraction of examples whose positive outscores every valid sampled negative.
    pub accuracy: f64,
    /// Per example, the selected negative columns.
    pub hard: Vec<Vec<usize>>,
}

/// Builds the batch loss from user vectors `u` (B×d), positives `p` (B×d)
/// and shared negatives `negs` (S×d). Mixed negatives are scored as
/// `α⟨u,i+⟩ + (1 − α)⟨u,hard⟩`, which equals scoring the mixed embedding.
/// `alphas` is `B × N` row-major, ignored by the hinge loss.
#[allow(clippy::too_many_arguments)]
pub fn loss_from_embeddings<T: Scalar>(
    g: &mut Graph<'_, T>,
    u: NodeId,
    p: NodeId,
    negs: NodeId,
    positives: &[u32],
    negatives: &[u32],
    config: &LossConfig,
    alphas: &[f64],
) -> Result<LossNodes> {
    config.validate()?;
    let b = positives.len();
    let s = negatives.len();
    if s == 0 {
        return Err(CoreError::Config("at least one sampled negative is required".into()));
    }
    let up = g.mul(u, p);
    let pos = g.sum_cols(up);
    let neg = g.matmul_bt(u, negs);
    let valid: Vec<bool> = positives
        .iter()
        .flat_map(|&pid| negatives.iter().map(move |&n| n != pid))
        .collect();

    let (pv, nv) = (g.value(pos).data().to_vec(), g.value(neg).data().to_vec());
    let accuracy = (0..b)
        .filter(|&i| (0..s).all(|j| !valid[i * s + j] || pv[i] > nv[i * s + j]))
        .count() as f64
        / b.max(1) as f64;

    match config.kind {
        LossKind::Softmax => {
            let n = config.hard_negatives;
            if n > s {
                return Err(CoreError::Config(format!("{n} hard negatives requested from {s} sampled negatives")));
            }
            let mut parts = vec![pos, neg];
            let mut hard = Vec::with_capacity(b);
            let mut mask_mix = Vec::with_capacity(b * n);
            if n > 0 {
                if alphas.len() != b * n {
                    return Err(CoreError::Config(format!("expected {} mixing weights, got {}", b * n, alphas.len())));
                }
                let mut idx = Vec::with_capacity(b * n);
                for i in 0..b {
                    let scores: Vec<f64> = nv[i * s..(i + 1) * s].iter().map(|v| v.f64()).collect();
                    let sel = select_hard(&scores, &valid[i * s..(i + 1) * s], n);
                    mask_mix.extend(sel.iter().map(|&j| valid[i * s + j]));
                    idx.extend_from_slice(&sel);
                    hard.push(sel);
                }
                let a: Vec<T> = alphas.iter().map(|&x| T::of(x)).collect();
                let one_minus: Vec<T> = alphas.iter().map(|&x| T::of(1.0 - x)).collect();
                let a = g.input(Tensor::matrix(b, n, a)?);
                let one_minus = g.input(Tensor::matrix(b, n, one_minus)?);
                let pos_rep = g.repeat_cols(pos, n);
                let hard_scores = g.take_along_rows(neg, &idx, n);
                let l = g.mul(a, pos_rep);
                let r = g.mul(one_minus, hard_scores);
                parts.push(g.add(l, r));
            }
            let cat = g.concat_cols(&parts);
            let logits = g.scale(cat, 1.0 / config.temperature);
            let width = 1 + s + n;
            let mut mask = Vec::with_capacity(b * width);
            for i in 0..b {
                mask.push(true);
                mask.extend_from_slice(&valid[i * s..(i + 1) * s]);
                mask.extend_from_slice(&mask_mix[i * n..(i + 1) * n]);
            }
            let loss = g.softmax_cross_entropy(logits, &vec![0; b], Some(&mask));
            Ok(LossNodes {
                loss,
                logits: Some(logits),
                mask,
                accuracy,
                hard,
            })
        }
        LossKind::Hinge { margin } => {
            // mean over valid pairs of relu(margin − pos + neg)
            let rep = g.repeat_cols(pos, s);
            let diff = g.sub(neg, rep);
            let shifted = g.add_scalar(diff, margin);
            let h = g.relu(shifted);
            let count = valid.iter().filter(|&&v| v).count();
            if count == 0 {
                return Err(CoreError::Data("every sampled negative equals its positive".into()));
            }
            let m: Vec<T> = valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
            let m = g.input(Tensor::matrix(b, s, m)?);
            let hm = g.mul(h, m);
            let total = g.sum_all(hm);
            let loss = g.scale(total, 1.0 / count as f64);
            Ok(LossNodes {
                loss,
                logits: None,
                mask: valid,
                accuracy,
                hard: Vec::new(),
            })
        }
    }
}

/// One training batch: examples with their clicked items and the shared
/// negative ids.
#[derive(Clone, Debug)]
pub struct Batch<'e, 'a> {
    pub examples: Vec<&'e Example<'a>>,
    pub positives: Vec<u32>,
    pub negatives: Vec<u32>,
}

/// Full forward pass for a batch: both towers and the loss.
pub fn batch_loss<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    model: &Model,
    batch: &Batch,
    catalog: &[Item],
    config: &LossConfig,
    rng: &mut R,
) -> Result<LossNodes> {
    let mut rows = Vec::with_capacity(batch.examples.len());
    for ex in &batch.examples {
        rows.push(model.user_node(g, ex, catalog, rng)?);
    }
    let u = g.concat_rows(&rows);
    let p = model.item.forward(g, &batch.positives, catalog)?;
    let negs = model.item.forward(g, &batch.negatives, catalog)?;
    let n = match config.kind {
        LossKind::Softmax => config.hard_negatives,
        LossKind::Hinge { .. } => 0,
    };
    let alphas = draw_alphas(batch.positives.len(), n, config.mix_bounds, rng);
    loss_from_embeddings(g, u, p, negs, &batch.positives, &batch.negatives, config, &alphas)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Shared random negatives per batch.
    pub negatives: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Validation Recall@K every this many steps (0 disables).
    pub eval_every: usize,
    pub eval_queries: usize,
    pub eval_k: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            negatives: 2048,
            epochs: 1,
            max_steps: None,
            learning_rate: 0.1,
            clip_norm: 3.0,
            eval_every: 50,
            eval_queries: 500,
            eval_k: 100,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_items: usize) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be >= 1".into()));
        }
        if self.negatives == 0 || self.negatives > n_items {
            return Err(CoreError::Config(format!(
                "negatives must be in 1..={n_items}, got {}",
                self.negatives
            )));
        }
        if matches!(self.loss.kind, LossKind::Softmax) && self.loss.hard_negatives > self.negatives {
            return Err(CoreError::Config(format!(
                "hard_negatives ({}) exceeds negatives ({})",
                self.loss.hard_negatives, self.negatives
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(CoreError::Config("learning_rate and clip_norm must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    /// Batch loss; absent on the initial evaluation row.
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: usize,
    pub log: Vec<StepLog>,
    /// Set when a step produced a non-finite value; the store then holds
    /// the parameters from before that step.
    pub diverged: Option<CoreError>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.log.iter().rev().find_map(|l| l.accuracy)
    }

    /// First step whose validation recall reaches `target`.
    pub fn steps_to_recall(&self, target: f64) -> Option<usize> {
        self.log
            .iter()
            .find(|l| l.recall_at_k.is_some_and(|r| r >= target))
            .map(|l| l.step)
    }

    pub fn final_recall(&self) -> Option<f64> {
        self.log.iter().rev().find_map(|l| l.recall_at_k)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(CoreError::file(path))?;
        let mut w = std::io::BufWriter::new(f);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        (|| -> std::io::Result<()> {
            writeln!(w, "step,loss,recall_at_k,wall_ms")?;
            for l in &self.log {
                writeln!(w, "{},{},{},{}", l.step, opt(l.loss), opt(l.recall_at_k), l.wall_ms)?;
            }
            w.flush()
        })()
        .map_err(CoreError::file(path))
    }
}

/// Training examples, one per logged click, with query features
/// precomputed.
pub fn click_examples(corpus: &Corpus, buckets: usize) -> Result<Vec<(Example<'_>, u32)>> {
    corpus
        .clicks_train
        .iter()
        .map(|c| {
            let q = QueryFeatures::from_tokens(&c.query_tokens, &corpus.vocab, buckets)?;
            Ok((Example::new(corpus.user(c.user_id), q), c.clicked_item_id))
        })
        .collect()
}

/// Runs AdaGrad over shuffled epochs of the training clicks. Validation
/// recall is logged at step 0, every `eval_every` steps, and at the end.
pub fn train(
    model: &Model,
    store: &mut ParamStore<f32>,
    corpus: &Corpus,
    config: &TrainConfig,
    validation: Option<&Validation>,
) -> Result<TrainOutcome> {
    let n_items = corpus.items.len();
    config.validate(n_items)?;
    let examples = click_examples(corpus, model.config.bigram_buckets)?;
    if examples.is_empty() {
        return Err(CoreError::Data("no training clicks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdaGrad::new(config.learning_rate, config.clip_norm);
    let start = Instant::now();
    let elapsed = |start: &Instant| start.elapsed().as_millis() as u64;
    let eval = |store: &ParamStore<f32>| -> Result<Option<f64>> {
        match validation {
            Some(v) if config.eval_every > 0 => Ok(Some(v.recall(model, store, corpus, config.eval_k)?)),
            _ => Ok(None),
        }
    };

    let mut log = vec![StepLog {
        step: 0,
        loss: None,
        accuracy: None,
        recall_at_k: eval(store)?,
        wall_ms: 0,
    }];
    let max_steps = config.max_steps.unwrap_or(usize::MAX);
    let mut step = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if step >= max_steps {
                break 'epochs;
            }
            let negatives: Vec<u32> = rand::seq::index::sample(&mut rng, n_items, config.negatives)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            let batch = Batch {
                examples: chunk.iter().map(|&i| &examples[i].0).collect(),
                positives: chunk.iter().map(|&i| examples[i].1).collect(),
                negatives,
            };
            let result = (|| -> Result<(f64, f64, mgdspr_numerics::ParamGrads<f32>)> {
                let mut g = Graph::training(store);
                let out = batch_loss(&mut g, model, &batch, &corpus.items, &config.loss, &mut rng)?;
                g.check_finite()?;
                let loss = g.value(out.loss).data()[0] as f64;
                let grads = g.backward(out.loss)?.into_params();
                Ok((loss, out.accuracy, grads))
            })();
            let (loss, accuracy, grads) = match result {
                Ok(r) => r,
                Err(e @ CoreError::Numeric(_)) => {
                    return Ok(diverged(step + 1, e, log));
                }
                Err(e) => return Err(e),
            };
            let before = store.clone();
            if let Err(e) = opt.step(store, &grads) {
                *store = before;
                return Ok(diverged(step + 1, e.into(), log));
            }
            let bad = store
                .iter()
                .find(|(_, _, t)| !t.data().iter().all(|v| v.is_finite()))
                .map(|(_, name, _)| name.to_string());
            if let Some(name) = bad {
                let cause = format!("parameter `{name}` became non-finite");
                *store = before;
                return Ok(diverged(step + 1, CoreError::Data(cause), log));
            }
            step += 1;
            let last = step == max_steps;
            let recall = if config.eval_every > 0 && (step % config.eval_every == 0 || last) {
                eval(store)?
            } else {
                None
            };
            log::debug!("epoch {epoch} step {step} loss {loss:.4} acc {accuracy:.3}");
            log.push(StepLog {
                step,
                loss: Some(loss),
                accuracy: Some(accuracy),
                recall_at_k: recall,
                wall_ms: elapsed(&start),
            });
        }
    }
    if log.last().is_some_and(|l| l.step > 0 && l.recall_at_k.is_none()) {
        let r = eval(store)?;
        log.last_mut().expect("non-empty").recall_at_k = r;
    }
    Ok(TrainOutcome {
        steps: step,
        log,
        diverged: None,
    })
}

fn diverged(step: usize, cause: CoreError, log: Vec<StepLog>) -> TrainOutcome {
    log::warn!("training diverged at step {step}: {cause}");
    TrainOutcome {
        steps: step - 1,
        log,
        diverged: Some(CoreError::Diverged {
            step,
            cause: cause.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_config_reads_flat_toml() {
        let c: LossConfig = toml::from_str("kind = \"hinge\"\nmargin = 0.2").unwrap();
        assert_eq!(c.kind, LossKind::Hinge { margin: 0.2 });
        assert_eq!(c.temperature, 2.0);
        let back: LossConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<LossConfig>("kind = \"triplet\"").is_err());
    }

    fn row(g: &mut Graph<'_, f64>, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        g.input(Tensor::matrix(rows, cols, data.to_vec()).unwrap())
    }

    fn softmax(n: usize) -> LossConfig {
        LossConfig {
            hard_negatives: n,
            ..LossConfig::default()
        }
    }

    #[test]
    fn scalar_softmax_example() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let u = row(&mut g, 1, 1, &[1.0]);
        let p = row(&mut g, 1, 1, &[2.0]);
        let n = row(&mut g, 1, 1, &[0.0]);
        let out = loss_from_embeddings(&mut g, u, p, n, &[0], &[1], &softmax(0), &[]).unwrap();
        let loss = g.value(out.loss).data()[0];
        let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.313).abs() < 1e-3);
    }

    #[test]
    fn hinge_examples() {
        let store = ParamStore::<f64>::new();
        let cfg = |m| LossConfig {
            kind: LossKind::Hinge { margin: m },
            ..LossConfig::default()
        };
        let mut g = Graph::new(&store);
        let u = row(&mut g, 1, 1, &[1.0]);
        let p = row(&mut g, 1, 1, &[1.0]);
        let n = row(&mut g, 2, 1, &[1.0, 1.0]);
        let out = loss_from_embeddings(&mut g, u, p, n, &[0], &[1, 2], &cfg(0.1), &[]).unwrap();
        assert!((g.value(out.loss).data()[0] - 0.1).abs() < 1e-12);
        let n2 = row(&mut g, 2, 1, &[0.5, -3.0]);
        let out = loss_from_embeddings(&mut g, u, p, n2, &[0], &[1, 2], &cfg(0.2), &[]).unwrap();
        assert_eq!(g.value(out.loss).data()[0], 0.0);
        assert!(loss_from_embeddings(&mut g, u, p, n2, &[0], &[1, 2], &cfg(0.0), &[]).is_err());
    }

    #[test]
    fn positive_in_negatives_is_masked() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let u = row(&mut g, 1, 1, &[1.0]);
        let p = row(&mut g, 1, 1, &[2.0]);
        let n = row(&mut g, 2, 1, &[0.0, 2.0]);
        // second negative is the positive item itself
        let out = loss_from_embeddings(&mut g, u, p, n, &[7], &[3, 7], &softmax(0), &[]).unwrap();
        assert_eq!(out.mask, vec![true, true, false]);
        assert!((g.value(out.loss).data()[0] - 0.313).abs() < 1e-3);
    }

    #[test]
    fn select_hard_orders_valid_then_score() {
        let s = [0.5, 2.0, 2.0, 9.0, -1.0];
        assert_eq!(select_hard(&s, &[true; 5], 3), vec![3, 1, 2]);
        assert_eq!(select_hard(&s, &[true, true, true, false, true], 2), vec![1, 2]);
    }

    #[test]
    fn hard_negative_endpoints() {
        let q = [1.0, 0.0];
        let p = [0.3, 0.7];
        let negs = vec![vec![1.0, 1.0], vec![2.0, 0.0], vec![-1.0, 5.0], vec![0.5, 0.5]];
        let (sel, mix) = gen_hard_negatives(&q, &p, &negs, &[1.0, 1.0]).unwrap();
        assert_eq!(sel, vec![1, 0]);
        assert!(mix.iter().all(|m| m == &p.to_vec()));
        let (sel, mix) = gen_hard_negatives(&q, &p, &negs, &[0.0, 0.0]).unwrap();
        assert_eq!(mix, sel.iter().map(|&j| negs[j].clone()).collect::<Vec<_>>());
        assert!(gen_hard_negatives(&q, &p, &negs, &[0.5; 5]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = [
            LossConfig { temperature: 0.0, ..LossConfig::default() },
            LossConfig { mix_bounds: (0.6, 0.4), ..LossConfig::default() },
            LossConfig { mix_bounds: (-0.1, 0.4), ..LossConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let t = TrainConfig::default();
        assert!(t.validate(10_000).is_ok());
        assert!(t.validate(1000).is_err());
    }
}
