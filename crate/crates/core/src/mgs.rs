//! Multi-granular query unit: six `1×d` views of the query stacked into a
//! `6×d` matrix.

use mgdspr_numerics::nn::EncoderLayer;
use mgdspr_numerics::{Graph, NodeId, ParamId, Scalar};

use crate::text::QueryFeatures;

#[derive(Clone, Debug)]
pub struct Mgs {
    /// Token table, shared with item titles.
    pub tokens: ParamId,
    pub chars: ParamId,
    pub bigrams: ParamId,
    pub encoder: EncoderLayer,
    pub dim: usize,
    /// Scale the historical-query attention logits by `1/sqrt(d)`.
    pub scaled_history: bool,
}

/// Node ids of the six rows and the stacked matrix.
#[derive(Clone, Copy, Debug)]
pub struct MgsNodes {
    pub q_1gram: NodeId,
    pub q_2gram: NodeId,
    pub q_seg: NodeId,
    pub q_seg_seq: NodeId,
    pub q_his_seq: NodeId,
    pub q_mix: NodeId,
    pub q_mgs: NodeId,
}

impl Mgs {
    /// `history` holds the token rows of each historical query.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, q: &QueryFeatures, history: &[Vec<usize>]) -> MgsNodes {
        let q_1gram = g.gather_mean(self.chars, std::slice::from_ref(&q.chars));

        let q_2gram = match (q.bigrams.is_empty(), q.bigram_unigrams.is_empty()) {
            (false, true) => g.gather_mean(self.bigrams, std::slice::from_ref(&q.bigrams)),
            (true, false) => g.gather_mean(self.chars, std::slice::from_ref(&q.bigram_unigrams)),
            _ => {
                let b = g.gather(self.bigrams, &q.bigrams);
                let u = g.gather(self.chars, &q.bigram_unigrams);
                let all = g.concat_rows(&[b, u]);
                g.mean_rows(all)
            }
        };

        let segs = g.gather(self.tokens, &q.segments);
        let q_seg = g.mean_rows(segs);
        let encoded = self.encoder.forward(g, segs);
        let q_seg_seq = g.mean_rows(encoded);

        let q_his_seq = if history.is_empty() {
            g.zeros(1, self.dim)
        } else {
            let his = g.gather_mean(self.tokens, history);
            g.attention(q_seg, his, his, 1, self.scaled_history, None)
        };

        let s = g.add(q_1gram, q_2gram);
        let s = g.add(s, q_seg);
        let s = g.add(s, q_seg_seq);
        let q_mix = g.add(s, q_his_seq);
        let q_mgs = g.concat_rows(&[q_1gram, q_2gram, q_seg, q_seg_seq, q_his_seq, q_mix]);
        MgsNodes {
            q_1gram,
            q_2gram,
            q_seg,
            q_seg_seq,
            q_his_seq,
            q_mix,
            q_mgs,
        }
    }
}
