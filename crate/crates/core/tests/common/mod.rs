#![allow(dead_code)]

use mgdspr_core::corpus::*;
use mgdspr_core::model::{Model, ModelConfig, ModelDims};
use mgdspr_core::text::{Vocab, UNK};
use mgdspr_numerics::{ParamStore, Tensor};

pub const TOKENS: [&str; 10] = [UNK, "shoes", "bags", "adidas", "nike", "run", "red", "light", "tote", "x"];

pub fn vocab() -> Vocab {
    Vocab::new(TOKENS.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn item(id: u32, title: &[u32], category: u32, leaf: u32, brand: u32, shop: u32) -> Item {
    Item {
        item_id: id,
        title_tokens: title.to_vec(),
        category,
        leaf_category: leaf,
        brand,
        shop,
    }
}

/// Four items over two categories (shoes, bags) and two brands (adidas, nike).
pub fn tiny_corpus() -> Corpus {
    let items = vec![
        item(0, &[5, 6, 1], 0, 0, 0, 0),
        item(1, &[5, 7, 1], 0, 1, 1, 1),
        item(2, &[8, 6], 1, 2, 0, 2),
        item(3, &[8, 7, 9], 1, 3, 1, 0),
    ];
    let users = vec![UserLog {
        user_id: 7,
        realtime_seq: vec![0, 2],
        short_seq: vec![1, 1, 3],
        long_attr_seqs: LongTerm {
            item: Actions { click: vec![0, 1], buy: vec![2], collect: vec![] },
            shop: Actions { click: vec![1], buy: vec![], collect: vec![2] },
            leaf: Actions { click: vec![3], buy: vec![], collect: vec![] },
            brand: Actions { click: vec![0, 1], buy: vec![1], collect: vec![0] },
        },
        historical_queries: vec![vec![5, 1], vec![8]],
    }];
    let click = |item: u32, q: &[u32]| ClickRecord {
        user_id: 7,
        query_tokens: q.to_vec(),
        clicked_item_id: item,
        timestamp: 0,
        relevance_label: Relevance::Good,
    };
    Corpus::new(
        vocab(),
        items,
        users,
        vec![click(0, &[6, 1]), click(2, &[8, 2])],
        vec![click(1, &[7, 1])],
        vec![],
        vec![1, 2],
        vec![3, 4],
        SeqCaps::default(),
    )
    .unwrap()
}

pub fn tiny_config(dim: usize) -> ModelConfig {
    ModelConfig {
        dim,
        heads: 1,
        lstm_layers: 2,
        dropout: 0.0,
        ff_mult: 2,
        bigram_buckets: 8,
        item_feature_dim: Some(2),
        side_feature_dim: Some(1),
        scaled_self_attention: true,
        scaled_query_attention: false,
        seed: 3,
    }
}

pub fn tiny_model(corpus: &Corpus, dim: usize) -> (Model, ParamStore<f64>) {
    Model::new::<f64>(&tiny_config(dim), ModelDims::of(corpus)).unwrap()
}

pub fn set(store: &mut ParamStore<f64>, name: &str, data: &[f64]) {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = store.get_mut(id);
    assert_eq!(t.len(), data.len(), "{name}");
    t.data_mut().copy_from_slice(data);
}

pub fn get(store: &ParamStore<f64>, name: &str) -> Mat {
    let t = store.get(store.id(name).unwrap_or_else(|| panic!("no parameter {name}")));
    Mat::from_tensor(t)
}

/// Small row-major matrix used by the scalar oracles.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self::new(rows.len(), rows[0].len(), rows.concat())
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        Self::new(t.rows(), t.cols(), t.data().to_vec())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.data[r * self.cols..(r + 1) * self.cols].to_vec()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows);
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for p in 0..self.cols {
                    s += self.at(i, p) * b.at(p, j);
                }
                out.data[i * b.cols + j] = s;
            }
        }
        out
    }

    pub fn add(&self, b: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (b.rows, b.cols));
        Mat::new(self.rows, self.cols, self.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
    }

    pub fn add_row(&self, b: &[f64]) -> Mat {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[r * self.cols + c] += b[c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn mean_rows(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.at(r, c)).sum::<f64>() / self.rows as f64)
            .collect()
    }

    pub fn stack(parts: &[Mat]) -> Mat {
        let cols = parts[0].cols;
        Mat::new(parts.iter().map(|p| p.rows).sum(), cols, parts.iter().flat_map(|p| p.data.clone()).collect())
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single-head attention of every query row over `keys` (values = keys
/// unless given).
pub fn attend(q: &Mat, k: &Mat, v: &Mat, scale: f64) -> Mat {
    let mut out = Vec::new();
    for i in 0..q.rows {
        let w = softmax(&(0..k.rows).map(|j| dot(&q.row(i), &k.row(j)) * scale).collect::<Vec<_>>());
        for c in 0..v.cols {
            out.push((0..k.rows).map(|j| w[j] * v.at(j, c)).sum());
        }
    }
    Mat::new(q.rows, v.cols, out)
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    let mut out = Vec::new();
    for r in 0..x.rows {
        let row = x.row(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        out.extend(row.iter().enumerate().map(|(c, v)| (v - mean) * inv * gain[c] + bias[c]));
    }
    Mat::new(x.rows, x.cols, out)
}

/// Single-head self-attention without output projection.
pub fn self_attention(store: &ParamStore<f64>, name: &str, x: &Mat, scaled: bool) -> Mat {
    let q = x.mul(&get(store, &format!("{name}.wq")));
    let k = x.mul(&get(store, &format!("{name}.wk")));
    let v = x.mul(&get(store, &format!("{name}.wv")));
    let scale = if scaled { 1.0 / (q.cols as f64).sqrt() } else { 1.0 };
    attend(&q, &k, &v, scale)
}

/// Post-norm encoder layer with one head.
pub fn encoder(store: &ParamStore<f64>, name: &str, x: &Mat) -> Mat {
    let a = self_attention(store, &format!("{name}.attn"), x, true);
    let p = |s: &str| get(store, &format!("{name}.{s}")).data;
    let x1 = layer_norm(&x.add(&a), &p("norm1.gain"), &p("norm1.bias"));
    let h = x1.mul(&get(store, &format!("{name}.ff1.w"))).add_row(&p("ff1.b")).map(|v| v.max(0.0));
    let f = h.mul(&get(store, &format!("{name}.ff2.w"))).add_row(&p("ff2.b"));
    layer_norm(&x1.add(&f), &p("norm2.gain"), &p("norm2.bias"))
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stacked LSTM with residuals above the first layer, gates `[i f g o]`.
pub fn lstm(store: &ParamStore<f64>, name: &str, layers: usize, x: &Mat) -> Mat {
    let mut input = x.clone();
    for l in 0..layers {
        let w_ih = get(store, &format!("{name}.l{l}.w_ih"));
        let w_hh = get(store, &format!("{name}.l{l}.w_hh"));
        let b = get(store, &format!("{name}.l{l}.b")).data;
        let hd = w_hh.rows;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut outs = Vec::new();
        for t in 0..input.rows {
            let xt = Mat::new(1, input.cols, input.row(t));
            let g = xt.mul(&w_ih).add(&Mat::new(1, hd, h.clone()).mul(&w_hh)).add_row(&b).data;
            for j in 0..hd {
                c[j] = sig(g[hd + j]) * c[j] + sig(g[j]) * g[2 * hd + j].tanh();
                h[j] = sig(g[3 * hd + j]) * c[j].tanh();
            }
            outs.push(h.clone());
        }
        let mut out = Mat::from_rows(&outs);
        if l > 0 {
            out = out.add(&input);
        }
        input = out;
    }
    input
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}
