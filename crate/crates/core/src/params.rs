//! Named parameter storage with gradient slots and Adam state.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, ParamId>,
    step_count: u64,
    version: u64,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.index == other.index && self.step_count == other.step_count
    }
}

// Process-wide, so a store and its clones never hand out the same version
// after diverging.
static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.touch();
        let id = ParamId(self.entries.len());
        let shape = value.shape().to_vec();
        self.entries.push(ParamEntry {
            name: name.clone(),
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        self.index.insert(name, id);
        id
    }

    /// Changes whenever any value may have changed.
    pub fn version(&self) -> u64 {
        self.version
    }

    fn touch(&mut self) {
        self.version = NEXT_VERSION.fetch_add(1, Ordering::Relaxed);
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.touch();
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let slot = self.entries[id.0].grad.data_mut();
        debug_assert_eq!(slot.len(), g.len());
        for (s, &v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.entries.iter().all(|e| e.grad.is_finite())
    }

    /// One Adam update over every entry, with bias correction.
    pub fn adam_step(&mut self, lr: f64) {
        self.adam_step_with(lr, AdamConfig::default());
    }

    pub fn adam_step_with(&mut self, lr: f64, cfg: AdamConfig) {
        self.touch();
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in &mut self.entries {
            let g = e.grad.data();
            let m = e.m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = e.v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let m = e.m.data();
            let v = e.v.data();
            for ((p, &mi), &vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// Rounds every value to the nearest single-precision float.
    pub fn round_to_f32(&mut self) {
        self.touch();
        for e in &mut self.entries {
            for v in e.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Copies values from `src` into `self`; layouts must match entry for entry.
    pub fn copy_values_from(&mut self, src: &ParamStore) -> Result<()> {
        self.check_layout(src)?;
        self.touch();
        for (d, s) in self.entries.iter_mut().zip(&src.entries) {
            d.value.data_mut().copy_from_slice(s.value.data());
        }
        Ok(())
    }

    /// `self <- tau * src + (1 - tau) * self`.
    pub fn polyak_from(&mut self, src: &ParamStore, tau: f64) -> Result<()> {
        self.check_layout(src)?;
        self.touch();
        for (d, s) in self.entries.iter_mut().zip(&src.entries) {
            for (dv, &sv) in d.value.data_mut().iter_mut().zip(s.value.data()) {
                *dv = tau * sv + (1.0 - tau) * *dv;
            }
        }
        Ok(())
    }

    fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(TensorError::ShapeMismatch {
                op: "param layout",
                left: vec![self.entries.len()],
                right: vec![other.entries.len()],
            });
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            a.value.ensure_same_shape(&b.value, "param layout")?;
        }
        Ok(())
    }
}

/// Central-difference gradient estimate of `f` with respect to every stored
/// coordinate. `f` must be deterministic; the store is restored afterwards.
pub fn finite_difference_gradient<F>(mut f: F, store: &mut ParamStore, eps: f64) -> Vec<Tensor>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut out = Vec::with_capacity(store.len());
    for id in 0..store.entries.len() {
        let shape = store.entries[id].value.shape().to_vec();
        let mut g = Tensor::zeros(&shape);
        for k in 0..g.len() {
            let orig = store.entries[id].value.data()[k];
            store.entries[id].value.data_mut()[k] = orig + eps;
            store.touch();
            let plus = f(store);
            store.entries[id].value.data_mut()[k] = orig - eps;
            store.touch();
            let minus = f(store);
            store.entries[id].value.data_mut()[k] = orig;
            store.touch();
            g.data_mut()[k] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}
