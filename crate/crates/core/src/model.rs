//! Model configuration, parameter registration, and inference helpers.

use std::path::Path;

use mgdspr_ann::EmbeddingMatrix;
use mgdspr_numerics::nn::{EncoderLayer, Linear, Lstm, MultiHeadSelfAttention};
use mgdspr_numerics::params::uniform;
use mgdspr_numerics::{checkpoint, Graph, ParamStore, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CatalogDims, Corpus, Item, UserLog};
use crate::error::{CoreError, Result};
use crate::item_tower::ItemTower;
use crate::mgs::Mgs;
use crate::text::{QueryFeatures, Vocab};
use crate::user_tower::{BehaviorEmbedder, UserTower};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    /// Feed-forward width of the encoder layers, as a multiple of `dim`.
    pub ff_mult: usize,
    pub bigram_buckets: usize,
    /// Width of the behaviour item-id embedding; `dim / 2` when unset.
    pub item_feature_dim: Option<usize>,
    /// Width of each behaviour side-feature embedding; `dim / 8` when unset.
    pub side_feature_dim: Option<usize>,
    /// Divide self-attention logits by `sqrt(head dim)`.
    pub scaled_self_attention: bool,
    /// Divide the `Q_mgs` query-attention logits by `sqrt(dim)`.
    pub scaled_query_attention: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            heads: 8,
            lstm_layers: 2,
            dropout: 0.2,
            ff_mult: 4,
            bigram_buckets: 1 << 16,
            item_feature_dim: None,
            side_feature_dim: None,
            scaled_self_attention: true,
            scaled_query_attention: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn item_feature_dim(&self) -> usize {
        self.item_feature_dim.unwrap_or((self.dim / 2).max(1))
    }

    pub fn side_feature_dim(&self) -> usize {
        self.side_feature_dim.unwrap_or((self.dim / 8).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.bigram_buckets == 0 || self.ff_mult == 0 {
            return Err(CoreError::Config("bigram_buckets and ff_mult must be positive".into()));
        }
        Ok(())
    }
}

/// Table sizes the model needs from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub chars: usize,
    pub catalog: CatalogDims,
}

impl ModelDims {
    pub fn of(corpus: &Corpus) -> Self {
        Self {
            vocab: corpus.vocab.len(),
            chars: corpus.vocab.n_chars(),
            catalog: corpus.dims(),
        }
    }
}

/// Layer structure; parameter values live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub mgs: Mgs,
    pub user: UserTower,
    pub item: ItemTower,
}

impl Model {
    pub fn new<T: Scalar>(config: &ModelConfig, dims: ModelDims) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let ff = config.ff_mult * d;
        let range = 1.0 / (d as f64).sqrt();
        let c = &dims.catalog;
        let rng = &mut rng;
        let table = |store: &mut ParamStore<T>, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            store.add(name, uniform(&[rows, cols], range, rng))
        };

        let tokens = store.add("query.tokens", uniform(&[dims.vocab, d], range, rng))?;
        let mgs = Mgs {
            tokens,
            chars: store.add("query.chars", uniform(&[dims.chars, d], range, rng))?,
            bigrams: store.add("query.bigrams", uniform(&[config.bigram_buckets, d], range, rng))?,
            encoder: EncoderLayer::new(&mut store, "query.encoder", d, config.heads, ff, config.scaled_self_attention, rng)?,
            dim: d,
            scaled_history: config.scaled_query_attention,
        };

        let (di, ds) = (config.item_feature_dim(), config.side_feature_dim());
        let embedder = BehaviorEmbedder {
            item: table(&mut store, "user.embed.item", c.n_items + 1, di, rng)?,
            leaf: table(&mut store, "user.embed.leaf", c.n_leaves + 1, ds, rng)?,
            category: table(&mut store, "user.embed.category", c.n_categories + 1, ds, rng)?,
            brand: table(&mut store, "user.embed.brand", c.n_brands + 1, ds, rng)?,
            shop: table(&mut store, "user.embed.shop", c.n_shops + 1, ds, rng)?,
            proj: Linear::new(&mut store, "user.embed.proj", di + 4 * ds, d, false, rng)?,
            shop_proj: Linear::new(&mut store, "user.long.shop", ds, d, false, rng)?,
            leaf_proj: Linear::new(&mut store, "user.long.leaf", ds, d, false, rng)?,
            brand_proj: Linear::new(&mut store, "user.long.brand", ds, d, false, rng)?,
        };
        let user = UserTower {
            embedder,
            lstm: Lstm::new(&mut store, "user.lstm", d, config.lstm_layers, config.dropout, rng)?,
            realtime_attn: MultiHeadSelfAttention::new(&mut store, "user.realtime", d, config.heads, config.scaled_self_attention, rng)?,
            short_attn: MultiHeadSelfAttention::new(&mut store, "user.short", d, config.heads, config.scaled_self_attention, rng)?,
            cls: store.add("user.cls", uniform(&[1, d], range, rng))?,
            fusion: EncoderLayer::new(&mut store, "user.fusion", d, config.heads, ff, config.scaled_self_attention, rng)?,
            dim: d,
            scaled_query_attention: config.scaled_query_attention,
        };
        let item = ItemTower {
            ids: store.add("item.ids", uniform(&[c.n_items, d], range, rng))?,
            tokens,
            w_t: store.add("item.w_t", mgdspr_numerics::params::orthogonal(d, d, 1.0, rng))?,
        };
        Ok((
            Self {
                config: config.clone(),
                dims,
                mgs,
                user,
                item,
            },
            store,
        ))
    }

    /// Rebuilds the structure for `config` and fills it from a checkpoint file.
    pub fn load(config: &ModelConfig, dims: ModelDims, path: &Path) -> Result<(Self, ParamStore<f32>)> {
        let (model, mut store) = Self::new::<f32>(config, dims)?;
        let saved = checkpoint::load(path)?;
        store.load_from(&saved)?;
        Ok((model, store))
    }

    /// Item embeddings for `ids` (inference mode).
    pub fn item_vectors(&self, store: &ParamStore<f32>, ids: &[u32], catalog: &[Item]) -> Result<Tensor<f32>> {
        let mut g = Graph::new(store);
        let n = self.item.forward(&mut g, ids, catalog)?;
        Ok(g.value(n).clone())
    }

    /// All item embeddings, row `i` = item `i`. Rows are computed in
    /// fixed-size blocks so the bytes do not depend on memory layout.
    pub fn export_items(&self, store: &ParamStore<f32>, catalog: &[Item]) -> Result<EmbeddingMatrix> {
        if catalog.len() != self.dims.catalog.n_items {
            return Err(CoreError::Data(format!(
                "model has {} items, catalog has {}",
                self.dims.catalog.n_items,
                catalog.len()
            )));
        }
        let mut data = Vec::with_capacity(catalog.len() * self.config.dim);
        let ids: Vec<u32> = (0..catalog.len() as u32).collect();
        for block in ids.chunks(1024) {
            data.extend_from_slice(self.item_vectors(store, block, catalog)?.data());
        }
        Ok(EmbeddingMatrix::new(self.config.dim, data)?)
    }

    /// `H_qu` for one example (inference mode).
    pub fn user_vector(&self, store: &ParamStore<f32>, example: &Example, catalog: &[Item]) -> Result<Vec<f32>> {
        let mut g = Graph::new(store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = self.user_node(&mut g, example, catalog, &mut rng)?;
        g.check_finite()?;
        Ok(g.value(n).data().to_vec())
    }

    pub fn user_node<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        example: &Example,
        catalog: &[Item],
        rng: &mut R,
    ) -> Result<mgdspr_numerics::NodeId> {
        let q = self.mgs.forward(g, &example.query, &example.history());
        self.user.forward(g, q.q_mgs, example.user, catalog, rng)
    }
}

/// Inputs of the user tower for one (user, query) pair. `user` is `None`
/// for unknown users, which take the cold path with no behaviours.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Example<'a> {
    pub query: QueryFeatures,
    pub user: Option<&'a UserLog>,
}

impl<'a> Example<'a> {
    pub fn new(user: Option<&'a UserLog>, query: QueryFeatures) -> Self {
        Self { query, user }
    }

    pub fn from_tokens(corpus: &'a Corpus, user_id: u32, tokens: &[u32], buckets: usize) -> Result<Self> {
        Ok(Self::new(corpus.user(user_id), QueryFeatures::from_tokens(tokens, &corpus.vocab, buckets)?))
    }

    pub fn from_text(vocab: &Vocab, user: Option<&'a UserLog>, query: &str, buckets: usize) -> Result<Self> {
        Ok(Self::new(user, QueryFeatures::from_text(query, vocab, buckets)?))
    }

    /// Token rows of each non-empty historical query.
    pub fn history(&self) -> Vec<Vec<usize>> {
        self.user
            .map(|u| {
                u.historical_queries
                    .iter()
                    .filter(|q| !q.is_empty())
                    .map(|q| q.iter().map(|&t| t as usize).collect())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Inner-product relevance score.
pub fn score(h_qu: &[f32], h_item: &[f32]) -> Result<f32> {
    if h_qu.len() != h_item.len() {
        return Err(CoreError::Data(format!(
            "dimension mismatch: {} vs {}",
            h_qu.len(),
            h_item.len()
        )));
    }
    Ok(h_qu.iter().zip(h_item).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() as f32)
}
