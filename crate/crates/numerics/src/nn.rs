//! Layers assembled from graph ops. Each layer registers its parameters in a
//! [`ParamStore`] under a name prefix and keeps only the ids.

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{orthogonal, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), orthogonal(input, output, 1.0, rng))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[1, output]))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[1, dim], T::one()))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let n = g.layer_norm(x, Self::EPS);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Multi-head self-attention without an output projection: each output row
/// is, per head, a convex mixture of the value projections.
#[derive(Clone, Debug)]
pub struct MultiHeadSelfAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub heads: usize,
    pub scaled: bool,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        scaled: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NumericsError::Heads { dim, heads });
        }
        Ok(Self {
            wq: store.add(format!("{name}.wq"), orthogonal(dim, dim, 1.0, rng))?,
            wk: store.add(format!("{name}.wk"), orthogonal(dim, dim, 1.0, rng))?,
            wv: store.add(format!("{name}.wv"), orthogonal(dim, dim, 1.0, rng))?,
            heads,
            scaled,
        })
    }

    pub fn head_dim<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.wq).cols() / self.heads
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, key_mask: Option<&[bool]>) -> NodeId {
        let (wq, wk, wv) = (g.param(self.wq), g.param(self.wk), g.param(self.wv));
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        g.attention(q, k, v, self.heads, self.scaled, key_mask)
    }
}

/// Post-norm transformer encoder layer: self-attention and a ReLU
/// feed-forward block, each with a residual connection and layer norm.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadSelfAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        scaled: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadSelfAttention::new(store, &format!("{name}.attn"), dim, heads, scaled, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, ff_dim, true, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), ff_dim, dim, true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let a = self.attention.forward(g, x, None);
        let r1 = g.add(x, a);
        let x1 = self.norm1.forward(g, r1);
        let h = self.ff1.forward(g, x1);
        let h = g.relu(h);
        let f = self.ff2.forward(g, h);
        let r2 = g.add(x1, f);
        self.norm2.forward(g, r2)
    }
}

#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// Stacked LSTM returning every hidden state of the top layer. Layers above
/// the first add their input back (residual), and dropout sits between
/// layers only.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub dropout: f64,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        layers: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                Ok(LstmLayer {
                    w_ih: store.add(format!("{name}.l{l}.w_ih"), orthogonal(dim, 4 * dim, 1.0, rng))?,
                    w_hh: store.add(format!("{name}.l{l}.w_hh"), orthogonal(dim, 4 * dim, 1.0, rng))?,
                    b: store.add(format!("{name}.l{l}.b"), Tensor::zeros(&[1, 4 * dim]))?,
                    hidden: dim,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, dropout })
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        seq: NodeId,
        rng: &mut R,
    ) -> Result<NodeId> {
        let steps = g.shape(seq).0;
        if steps == 0 {
            return Err(NumericsError::EmptySequence);
        }
        let mut input = seq;
        for (l, layer) in self.layers.iter().enumerate() {
            let h_dim = layer.hidden;
            let w_ih = g.param(layer.w_ih);
            let w_hh = g.param(layer.w_hh);
            let b = g.param(layer.b);
            let xw = g.matmul(input, w_ih);
            let xw = g.add_row(xw, b);
            let mut h = g.zeros(1, h_dim);
            let mut c = g.zeros(1, h_dim);
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let x_t = g.slice_rows(xw, t, 1);
                let rec = g.matmul(h, w_hh);
                let gates = g.add(x_t, rec);
                let hc = g.lstm_cell(gates, c);
                h = g.slice_cols(hc, 0, h_dim);
                c = g.slice_cols(hc, h_dim, h_dim);
                outs.push(h);
            }
            let mut out = g.concat_rows(&outs);
            if l > 0 {
                out = g.add(out, input);
            }
            if l + 1 < self.layers.len() {
                out = g.dropout(out, self.dropout, rng);
            }
            input = out;
        }
        Ok(input)
    }
}
