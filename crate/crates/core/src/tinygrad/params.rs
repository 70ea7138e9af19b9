use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use super::GradError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    #[serde(skip, default = "Vec::new")]
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Named tensors with gradient buffers and Adam state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    /// Number of optimizer steps taken, for bias correction.
    steps: u64,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            steps: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let n = value.len();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, GradError> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>, GradError> {
        Ok(&self.params[self.index_of(name)?].value)
    }

    /// Adds every tensor as a graph leaf, in order.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect()
    }

    /// Adds the gradients reached at `vars` (from [`bind`](Self::bind)) to
    /// the stored gradient buffers.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, vars: &[Var]) {
        assert_eq!(vars.len(), self.params.len(), "bound variable count");
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if p.grad.len() != p.value.len() {
                p.grad = vec![T::zero(); p.value.len()];
            }
            if let Some(src) = g.grad(v) {
                for (d, &s) in p.grad.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.clear();
            p.grad.resize(p.value.len(), T::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        let s = T::lit(factor);
        for p in &mut self.params {
            for g in &mut p.grad {
                *g *= s;
            }
        }
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = T::lit(max_norm / norm);
            for p in &mut self.params {
                for g in &mut p.grad {
                    *g *= s;
                }
            }
        }
        norm
    }

    /// One Adam step on the stored gradients, which are then zeroed.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let step = T::lit(cfg.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(cfg.eps);
        for p in &mut self.params {
            if p.grad.len() != p.value.len() {
                p.grad = vec![T::zero(); p.value.len()];
            }
            if p.m.len() != p.value.len() {
                p.m = vec![T::zero(); p.value.len()];
                p.v = vec![T::zero(); p.value.len()];
            }
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + one_b1 * g;
                p.v[i] = b2 * p.v[i] + one_b2 * g * g;
                let v_hat = p.v[i] * inv_bc2;
                p.value.data[i] -= step * p.m[i] / (v_hat.sqrt() + eps);
                p.grad[i] = T::zero();
            }
        }
    }

    /// `self = tau * source + (1 - tau) * self`, parameter by parameter.
    pub fn polyak_from(&mut self, source: &ParamSet<T>, tau: f64) {
        assert_eq!(self.params.len(), source.params.len(), "polyak: parameter count");
        let (a, b) = (T::lit(tau), T::lit(1.0 - tau));
        for (d, s) in self.params.iter_mut().zip(&source.params) {
            assert_eq!(d.value.shape, s.value.shape, "polyak: shape of {}", d.name);
            for (x, &y) in d.value.data.iter_mut().zip(&s.value.data) {
                *x = a * y + b * *x;
            }
        }
    }

    /// Copy of the values only, with fresh optimizer state.
    pub fn values_only(&self) -> Self {
        let mut out = Self::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.clone());
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: conv(&p.grad),
                    m: conv(&p.m),
                    v: conv(&p.v),
                })
                .collect(),
            steps: self.steps,
        }
    }

    /// All values flattened in parameter order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.to_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.data.iter().all(|v| v.is_finite()))
    }
}
