//! Named-parameter registry shared by the trainable recommender and the
//! explanation policy. Gradients use the same type as parameters.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return invalid(format!(
                "tensor shape {shape:?} does not match {} values",
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn expect_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors.get_mut(name).expect("registered parameter")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// A store with the same names and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(&t.shape)))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape == tb.shape)
    }

    fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            invalid("parameter layouts differ (names or shapes)")
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (t, o) in self.tensors.values_mut().zip(other.tensors.values()) {
            for (x, y) in t.data.iter_mut().zip(&o.data) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Plain gradient descent: `p -= learning_rate * g`.
    pub fn apply_grads(&mut self, grads: &ParamStore, learning_rate: f64) -> Result<()> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return invalid(format!("learning rate must be finite and >= 0, got {learning_rate}"));
        }
        self.add_scaled(grads, -learning_rate)
    }

    pub fn norm(&self) -> f64 {
        self.tensors.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Flat view for coordinate-wise checks: `(name, flat index)` pairs in
    /// deterministic order.
    pub fn coordinates(&self) -> Vec<(String, usize)> {
        self.tensors
            .iter()
            .flat_map(|(k, t)| (0..t.data.len()).map(move |i| (k.clone(), i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(v));
        s
    }

    #[test]
    fn gradient_step_arithmetic() {
        let mut p = scalar_store(1.0);
        p.apply_grads(&scalar_store(2.0), 0.1).unwrap();
        assert!((p.expect("p").data[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_step_and_zero_grad_are_identity() {
        let mut p = scalar_store(1.5);
        p.apply_grads(&scalar_store(0.0), 0.3).unwrap();
        p.apply_grads(&scalar_store(7.0), 0.0).unwrap();
        assert_eq!(p, scalar_store(1.5));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_store(1.0);
        let mut g = ParamStore::new();
        g.insert("p", Tensor::zeros(&[2]));
        assert!(p.apply_grads(&g, 0.1).is_err());
        let mut h = ParamStore::new();
        h.insert("q", Tensor::scalar(0.0));
        assert!(p.apply_grads(&h, 0.1).is_err());
    }
}
