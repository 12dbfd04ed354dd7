use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{NumericsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    lookup: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copies values from `other` for every name both stores share with equal shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .ok_or_else(|| NumericsError::Checkpoint(format!("missing parameter `{name}`")))?;
            let src = other.get(src);
            if src.shape() != self.values[i].shape() {
                return Err(NumericsError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

/// Gradient of one parameter. Embedding tables touched by row gathers carry
/// only the rows that received gradient.
#[derive(Clone, Debug)]
pub enum ParamGrad<T = f32> {
    Dense(Tensor<T>),
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<T>>,
    },
}

impl<T: Scalar> ParamGrad<T> {
    pub fn sq_norm(&self) -> f64 {
        match self {
            ParamGrad::Dense(t) => t.sq_norm(),
            ParamGrad::Rows { rows, .. } => rows
                .values()
                .flat_map(|r| r.iter())
                .map(|v| v.f64() * v.f64())
                .sum(),
        }
    }

    /// Dense view; used by tests and small parameters.
    pub fn to_dense(&self, shape: &[usize]) -> Tensor<T> {
        match self {
            ParamGrad::Dense(t) => t.clone(),
            ParamGrad::Rows { cols, rows } => {
                let mut t = Tensor::zeros(shape);
                for (r, vals) in rows {
                    t.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(vals);
                }
                t
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamGrads<T = f32> {
    grads: Vec<Option<ParamGrad<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            grads: (0..n).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamGrad<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt()
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, g: &Tensor<T>) {
        match &mut self.grads[id.0] {
            slot @ None => *slot = Some(ParamGrad::Dense(g.clone())),
            Some(ParamGrad::Dense(t)) => t.add_assign(g),
            Some(ParamGrad::Rows { .. }) => unreachable!("parameter used both dense and gathered"),
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, cols: usize, row: usize, g: &[T]) {
        let slot = self.grads[id.0].get_or_insert_with(|| ParamGrad::Rows {
            cols,
            rows: BTreeMap::new(),
        });
        match slot {
            ParamGrad::Rows { rows, .. } => {
                let dst = rows.entry(row).or_insert_with(|| vec![T::zero(); cols]);
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += *s;
                }
            }
            ParamGrad::Dense(t) => {
                for (d, s) in t.row_slice_mut(row).iter_mut().zip(g) {
                    *d += *s;
                }
            }
        }
    }
}

/// Orthogonal init: rows (or columns, whichever are fewer) are orthonormal,
/// scaled by `gain`.
pub fn orthogonal<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    // n vectors of length m, Gram-Schmidt in f64
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut data = vec![T::zero(); rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, x) in b.iter().enumerate() {
            let (r, c) = if rows <= cols { (i, j) } else { (j, i) };
            data[r * cols + c] = T::of(gain * x);
        }
    }
    Tensor::matrix(rows, cols, data).expect("shape by construction")
}

/// Uniform init in `±range`.
pub fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], range: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-range, range).expect("finite range");
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(4, 4), (3, 8), (8, 3)] {
            let w: Tensor<f64> = orthogonal(r, c, 1.0, &mut rng);
            // W Wᵀ = I when r <= c, Wᵀ W = I otherwise
            let (n, vecs): (usize, Vec<Vec<f64>>) = if r <= c {
                (r, (0..r).map(|i| w.row_slice(i).to_vec()).collect())
            } else {
                (c, (0..c).map(|j| (0..r).map(|i| w.at(i, j)).collect()).collect())
            };
            for i in 0..n {
                for j in 0..n {
                    let p: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((p - want).abs() < 1e-10, "{r}x{c} ({i},{j}) = {p}");
                }
            }
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[1, 1])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[1, 1])).is_err());
    }
}
