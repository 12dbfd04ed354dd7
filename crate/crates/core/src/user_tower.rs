//! User tower: behaviour embedding, the three horizon encoders with
//! zero-row query attention, and `[CLS]` fusion.

use mgdspr_numerics::nn::{EncoderLayer, Linear, Lstm, MultiHeadSelfAttention};
use mgdspr_numerics::{Graph, NodeId, ParamId, Scalar};
use rand::Rng;

use crate::corpus::{Actions, Item, LongTerm, UserLog};
use crate::error::{CoreError, Result};

/// Concatenated per-feature embeddings of an item, projected to `d`.
/// Table row 0 is the out-of-vocabulary row; feature id `x` lives at row `x + 1`.
#[derive(Clone, Debug)]
pub struct BehaviorEmbedder {
    pub item: ParamId,
    pub leaf: ParamId,
    pub category: ParamId,
    pub brand: ParamId,
    pub shop: ParamId,
    pub proj: Linear,
    /// Projections for long-term shop / leaf / brand sequences, `d_side → d`.
    pub shop_proj: Linear,
    pub leaf_proj: Linear,
    pub brand_proj: Linear,
}

impl BehaviorEmbedder {
    /// `n×d` embedding of `items`.
    pub fn embed<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[u32], catalog: &[Item]) -> Result<NodeId> {
        let mut rows: [Vec<usize>; 5] = Default::default();
        for &id in ids {
            let it = catalog.get(id as usize).ok_or(CoreError::Dangling {
                kind: "item",
                id: id as u64,
            })?;
            rows[0].push(id as usize + 1);
            rows[1].push(it.leaf_category as usize + 1);
            rows[2].push(it.category as usize + 1);
            rows[3].push(it.brand as usize + 1);
            rows[4].push(it.shop as usize + 1);
        }
        let tables = [self.item, self.leaf, self.category, self.brand, self.shop];
        for (t, r) in tables.iter().zip(&rows) {
            let n = g.params().get(*t).rows();
            if let Some(&bad) = r.iter().find(|&&x| x >= n) {
                return Err(CoreError::Dangling {
                    kind: "feature",
                    id: bad as u64 - 1,
                });
            }
        }
        let parts: Vec<NodeId> = tables.iter().zip(&rows).map(|(t, r)| g.gather(*t, r)).collect();
        let cat = g.concat_cols(&parts);
        Ok(self.proj.forward(g, cat))
    }
}

#[derive(Clone, Debug)]
pub struct UserTower {
    pub embedder: BehaviorEmbedder,
    pub lstm: Lstm,
    pub realtime_attn: MultiHeadSelfAttention,
    pub short_attn: MultiHeadSelfAttention,
    pub cls: ParamId,
    pub fusion: EncoderLayer,
    pub dim: usize,
    pub scaled_query_attention: bool,
}

impl UserTower {
    /// `softmax(Q·Rᵀ)·R` with a zero row prepended to `rows`.
    pub fn query_attend<T: Scalar>(&self, g: &mut Graph<'_, T>, q_mgs: NodeId, rows: NodeId) -> NodeId {
        let zero = g.zeros(1, self.dim);
        let keys = g.concat_rows(&[zero, rows]);
        g.attention(q_mgs, keys, keys, 1, self.scaled_query_attention, None)
    }

    fn zeros6<T: Scalar>(&self, g: &mut Graph<'_, T>) -> NodeId {
        g.zeros(6, self.dim)
    }

    pub fn realtime<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        seq: &[u32],
        q_mgs: NodeId,
        catalog: &[Item],
        rng: &mut R,
    ) -> Result<NodeId> {
        if seq.is_empty() {
            return Ok(self.zeros6(g));
        }
        let x = self.embedder.embed(g, seq, catalog)?;
        let h = self.lstm.forward(g, x, rng)?;
        let a = self.realtime_attn.forward(g, h, None);
        Ok(self.query_attend(g, q_mgs, a))
    }

    pub fn shortterm<T: Scalar>(&self, g: &mut Graph<'_, T>, seq: &[u32], q_mgs: NodeId, catalog: &[Item]) -> Result<NodeId> {
        if seq.is_empty() {
            return Ok(self.zeros6(g));
        }
        let x = self.embedder.embed(g, seq, catalog)?;
        let a = self.short_attn.forward(g, x, None);
        Ok(self.query_attend(g, q_mgs, a))
    }

    /// Sum over the four attributes of query attention across
    /// `{0, h_click, h_buy, h_collect}`; empty action lists contribute no key.
    pub fn longterm<T: Scalar>(&self, g: &mut Graph<'_, T>, long: &LongTerm, q_mgs: NodeId, catalog: &[Item]) -> Result<NodeId> {
        let e = &self.embedder;
        let mut total: Option<NodeId> = None;
        let attrs: [(&Actions, Option<(ParamId, &Linear)>); 4] = [
            (&long.item, None),
            (&long.shop, Some((e.shop, &e.shop_proj))),
            (&long.leaf, Some((e.leaf, &e.leaf_proj))),
            (&long.brand, Some((e.brand, &e.brand_proj))),
        ];
        for (actions, table) in attrs {
            let mut keys = Vec::new();
            for list in actions.lists() {
                if list.is_empty() {
                    continue;
                }
                let pooled = match table {
                    None => {
                        let x = e.embed(g, list, catalog)?;
                        g.mean_rows(x)
                    }
                    Some((t, proj)) => {
                        let n = g.params().get(t).rows();
                        let rows: Vec<usize> = list.iter().map(|&x| x as usize + 1).collect();
                        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
                            return Err(CoreError::Dangling {
                                kind: "feature",
                                id: bad as u64 - 1,
                            });
                        }
                        let m = g.gather_mean(t, &[rows]);
                        proj.forward(g, m)
                    }
                };
                keys.push(pooled);
            }
            if keys.is_empty() {
                continue;
            }
            let rows = g.concat_rows(&keys);
            let h = self.query_attend(g, q_mgs, rows);
            total = Some(match total {
                None => h,
                Some(t) => g.add(t, h),
            });
        }
        Ok(total.unwrap_or_else(|| self.zeros6(g)))
    }

    /// `[CLS]` output of one encoder layer over `[cls; Q_mgs; H_real; H_short; H_long]`.
    pub fn fuse<T: Scalar>(&self, g: &mut Graph<'_, T>, q_mgs: NodeId, h_real: NodeId, h_short: NodeId, h_long: NodeId) -> NodeId {
        for (name, n) in [("Q_mgs", q_mgs), ("H_real", h_real), ("H_short", h_short), ("H_long", h_long)] {
            assert_eq!(g.shape(n), (6, self.dim), "fuse: {name} must be 6x{}", self.dim);
        }
        let cls = g.param(self.cls);
        let seq = g.concat_rows(&[cls, q_mgs, h_real, h_short, h_long]);
        let out = self.fusion.forward(g, seq);
        g.slice_rows(out, 0, 1)
    }

    /// `H_qu`; `user = None` is a user with no behaviour at any horizon.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        q_mgs: NodeId,
        user: Option<&UserLog>,
        catalog: &[Item],
        rng: &mut R,
    ) -> Result<NodeId> {
        let empty = UserLog::default();
        let u = user.unwrap_or(&empty);
        let h_real = self.realtime(g, &u.realtime_seq, q_mgs, catalog, rng)?;
        let h_short = self.shortterm(g, &u.short_seq, q_mgs, catalog)?;
        let h_long = self.longterm(g, &u.long_attr_seqs, q_mgs, catalog)?;
        Ok(self.fuse(g, q_mgs, h_real, h_short, h_long))
    }
}
