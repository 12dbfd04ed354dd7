use crate::error::{NumericsError, Result};
use crate::params::{ParamGrad, ParamGrads, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global L2 norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to every gradient (1.0 when not clipped).
    pub clip_scale: f64,
}

/// AdaGrad with global-norm gradient clipping.
///
/// `acc += g²; p -= lr · g / sqrt(acc + eps)`, with `g` rescaled beforehand
/// so that the global norm never exceeds `clip_norm`.
#[derive(Clone, Debug)]
pub struct AdaGrad<T = f32> {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub eps: f64,
    accumulators: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> AdaGrad<T> {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            clip_norm,
            eps: 1e-8,
            accumulators: Vec::new(),
        }
    }

    pub fn accumulator(&self, index: usize) -> Option<&Tensor<T>> {
        self.accumulators.get(index).and_then(Option::as_ref)
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<StepStats> {
        for (id, g) in grads.iter() {
            let p = params.get(id);
            let ok = match g {
                ParamGrad::Dense(t) => t.len() == p.len(),
                ParamGrad::Rows { cols, rows } => {
                    *cols == p.cols() && rows.keys().next_back().is_none_or(|&r| r < p.rows())
                }
            };
            if !ok {
                return Err(NumericsError::Shape(format!(
                    "gradient for `{}` does not match parameter shape {:?}",
                    params.name(id),
                    p.shape()
                )));
            }
        }

        let grad_norm = grads.global_norm();
        if !grad_norm.is_finite() {
            return Err(NumericsError::NonFinite {
                op: "adagrad",
                node: 0,
            });
        }
        let clip_scale = if grad_norm > self.clip_norm {
            self.clip_norm / grad_norm
        } else {
            1.0
        };

        if self.accumulators.len() < params.len() {
            self.accumulators.resize_with(params.len(), || None);
        }
        let (lr, eps) = (self.learning_rate, self.eps);
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            let acc = self.accumulators[id.index()].get_or_insert_with(|| Tensor::zeros(p.shape()));
            let update = |pv: &mut [T], av: &mut [T], gv: &[T]| {
                for ((pi, ai), gi) in pv.iter_mut().zip(av.iter_mut()).zip(gv) {
                    let gs = gi.f64() * clip_scale;
                    let a = ai.f64() + gs * gs;
                    *ai = T::of(a);
                    *pi = T::of(pi.f64() - lr * gs / (a + eps).sqrt());
                }
            };
            match g {
                ParamGrad::Dense(t) => update(p.data_mut(), acc.data_mut(), t.data()),
                ParamGrad::Rows { cols, rows } => {
                    for (&r, gv) in rows {
                        let range = r * cols..(r + 1) * cols;
                        update(&mut p.data_mut()[range.clone()], &mut acc.data_mut()[range], gv);
                    }
                }
            }
        }
        Ok(StepStats {
            grad_norm,
            clip_scale,
        })
    }
}
