//! Named trainable tensors and the Adam optimizer state that goes with them.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamKey};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Option<Tensor<S>>,
    first_moment: Tensor<S>,
    second_moment: Tensor<S>,
    step: u64,
}

impl<S: Scalar> Param<S> {
    fn new(name: String, value: Tensor<S>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name,
            value,
            grad: None,
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Insertion-ordered map from parameter name to tensor.
///
/// Every store carries a process-unique id so that gradients computed on a
/// tape holding parameters from several stores (teacher and student) are
/// routed back to the right owner.
#[derive(Debug)]
pub struct ParamStore<S> {
    id: u64,
    params: Vec<Param<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Clone for ParamStore<S> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            params: self.params.clone(),
            index: self.index.clone(),
        }
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamKey> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let idx = self.params.len();
        self.index.insert(name.clone(), idx);
        self.params.push(Param::new(name, value));
        Ok(self.key(idx))
    }

    fn key(&self, index: usize) -> ParamKey {
        ParamKey { store: self.id, index }
    }

    pub fn lookup(&self, name: &str) -> Option<ParamKey> {
        self.index.get(name).map(|&i| self.key(i))
    }

    pub fn key_of(&self, name: &str) -> Result<ParamKey> {
        self.lookup(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn value(&self, key: ParamKey) -> &Tensor<S> {
        debug_assert_eq!(key.store, self.id);
        &self.params[key.index].value
    }

    pub fn value_mut(&mut self, key: ParamKey) -> &mut Tensor<S> {
        debug_assert_eq!(key.store, self.id);
        &mut self.params[key.index].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        (0..self.params.len()).map(|i| self.key(i))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Copies this store's gradients out of `grads`. Parameters the loss
    /// never reached get an explicit zero gradient of their own shape.
    pub fn set_grads(&mut self, grads: &Gradients<S>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            let key = ParamKey {
                store: self.id,
                index: i,
            };
            p.grad = Some(match grads.get(key) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.shape()),
            });
        }
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).and_then(|&i| self.params[i].grad.as_ref())
    }

    /// Extends a matrix parameter with extra rows; optimizer moments for the
    /// new rows start at zero.
    pub fn grow_rows(&mut self, key: ParamKey, rows: &[S]) -> Result<()> {
        let p = &mut self.params[key.index];
        p.value.push_rows(rows)?;
        let zeros = vec![S::zero(); rows.len()];
        p.first_moment.push_rows(&zeros)?;
        p.second_moment.push_rows(&zeros)?;
        p.grad = None;
        Ok(())
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::Contract(format!(
                "adam_step: parameter `{}` has no gradient",
                p.name
            )));
        }
        let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
        let (lr, eps) = (S::of(cfg.lr), S::of(cfg.eps));
        let one = S::one();
        for p in &mut self.params {
            let grad = p.grad.as_ref().expect("checked above");
            p.step += 1;
            let t = p.step as i32;
            let bc1 = one - b1.powi(t);
            let bc2 = one - b2.powi(t);
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            for (((x, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<ParamRecord> {
        self.params
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().iter().map(|x| x.as_f64()).collect(),
            })
            .collect()
    }

    pub fn from_records(records: &[ParamRecord]) -> Result<Self> {
        let mut store = Self::new();
        for r in records {
            let data = r.values.iter().map(|&x| S::of(x)).collect();
            store.insert(r.name.clone(), Tensor::from_vec(&r.shape, data)?)?;
        }
        Ok(store)
    }
}

/// Serialized form of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}
