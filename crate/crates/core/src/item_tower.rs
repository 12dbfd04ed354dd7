//! Item tower: `H_item = e_i + tanh(mean(title) · W_t)`.

use mgdspr_numerics::{Graph, NodeId, ParamId, Scalar};

use crate::corpus::Item;
use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct ItemTower {
    /// Item id table, row = item id.
    pub ids: ParamId,
    /// Token table shared with the query side.
    pub tokens: ParamId,
    pub w_t: ParamId,
}

impl ItemTower {
    /// `n×d` embeddings of `ids`, one row each.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[u32], catalog: &[Item]) -> Result<NodeId> {
        let mut titles = Vec::with_capacity(ids.len());
        for &id in ids {
            let it = catalog.get(id as usize).ok_or(CoreError::Dangling {
                kind: "item",
                id: id as u64,
            })?;
            if it.title_tokens.is_empty() {
                return Err(CoreError::Data(format!("item {id} has an empty title")));
            }
            titles.push(it.title_tokens.iter().map(|&t| t as usize).collect::<Vec<_>>());
        }
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let title = g.gather_mean(self.tokens, &titles);
        let w = g.param(self.w_t);
        let t = g.matmul(title, w);
        let t = g.tanh(t);
        let e = g.gather(self.ids, &rows);
        Ok(g.add(e, t))
    }
}
