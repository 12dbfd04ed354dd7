//! Central finite-difference checks of analytic gradients. Runs in `f64`.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{ParamGrad, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(location, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, f64, f64)>,
}

impl GradCheck {
    fn record(&mut self, location: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = rel_error(analytic, numeric);
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some((location(), analytic, numeric));
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn loss_value<F>(store: &ParamStore<f64>, build: &F) -> f64
where
    F: Fn(&mut Graph<'_, f64>) -> NodeId,
{
    let mut g = Graph::new(store);
    let loss = build(&mut g);
    g.value(loss).data()[0]
}

/// Checks every parameter gradient produced by `build`. Dense parameters and
/// sparsely-touched table rows are checked up to `max_per_param` entries each.
pub fn check_params<F>(store: &ParamStore<f64>, eps: f64, max_per_param: usize, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_, f64>) -> NodeId,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g);
        g.backward(loss)?.into_params()
    };
    let mut report = GradCheck::default();
    let mut work = store.clone();
    for id in store.ids() {
        let shape = store.get(id).shape().to_vec();
        let n = store.get(id).len();
        let (entries, analytic): (Vec<usize>, Tensor<f64>) = match grads.get(id) {
            None => ((0..n).step_by((n / max_per_param).max(1)).collect(), Tensor::zeros(&shape)),
            Some(ParamGrad::Dense(t)) => ((0..n).step_by((n / max_per_param).max(1)).collect(), t.clone()),
            Some(g @ ParamGrad::Rows { cols, rows }) => {
                let idx: Vec<usize> = rows.keys().flat_map(|r| r * cols..(r + 1) * cols).collect();
                let stride = (idx.len() / max_per_param).max(1);
                (idx.into_iter().step_by(stride).collect(), g.to_dense(&shape))
            }
        };
        for e in entries.into_iter().take(max_per_param) {
            let orig = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + eps;
            let plus = loss_value(&work, &build);
            work.get_mut(id).data_mut()[e] = orig - eps;
            let minus = loss_value(&work, &build);
            work.get_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            report.record(|| format!("{}[{e}]", store.name(id)), analytic.data()[e], numeric);
        }
    }
    Ok(report)
}

/// Checks the gradient w.r.t. an input tensor fed through `build`.
pub fn check_input<F>(store: &ParamStore<f64>, input: &Tensor<f64>, eps: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_, f64>, NodeId) -> NodeId,
{
    let eval = |x: &Tensor<f64>| {
        let mut g = Graph::new(store);
        let v = g.variable(x.clone());
        let loss = build(&mut g, v);
        g.value(loss).data()[0]
    };
    let analytic = {
        let mut g = Graph::new(store);
        let v = g.variable(input.clone());
        let loss = build(&mut g, v);
        let grads = g.backward(loss)?;
        grads.node(v).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()))
    };
    let mut report = GradCheck::default();
    let mut x = input.clone();
    for e in 0..x.len() {
        let orig = x.data()[e];
        x.data_mut()[e] = orig + eps;
        let plus = eval(&x);
        x.data_mut()[e] = orig - eps;
        let minus = eval(&x);
        x.data_mut()[e] = orig;
        report.record(|| format!("input[{e}]"), analytic.data()[e], (plus - minus) / (2.0 * eps));
    }
    Ok(report)
}
