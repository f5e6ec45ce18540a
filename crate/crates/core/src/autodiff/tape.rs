use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identifies one parameter inside one store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub store: u64,
    pub index: usize,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(super) usize);

#[derive(Debug, Clone)]
pub(super) enum Op<S> {
    Constant,
    Param(ParamKey),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Reshape(Var),
    RowGather(Var, Vec<usize>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Elu(Var),
    LeakyRelu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Clamp(Var, S, S),
    MaskedSoftmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentWeightedSum(Var, Var, Vec<usize>),
    RowDot(Var, Var),
    BlockScores(Var, Var, usize),
    BlockMix(Var, Var, usize),
    Sum(Var),
    WeightedSum(Var, Vec<S>),
    KlDiv(Var, Var),
}

pub(super) struct Node<'a, S: Scalar> {
    pub(super) value: Cow<'a, Tensor<S>>,
    pub(super) op: Op<S>,
    pub(super) needs_grad: bool,
}

/// Operation record for one forward/backward pass.
pub struct Tape<'a, S: Scalar> {
    pub(super) nodes: Vec<Node<'a, S>>,
}

impl<'a, S: Scalar> Default for Tape<'a, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Records a constant. Constants never receive gradients.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable parameter, borrowing its value from `store`.
    pub fn param(&mut self, store: &'a ParamStore<S>, key: ParamKey) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(key)),
            op: Op::Param(key),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, store: &'a ParamStore<S>, name: &str) -> Result<Var> {
        let key = store.key_of(name)?;
        Ok(self.param(store, key))
    }

    /// Copies a value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub(super) fn push(&mut self, op: &'static str, value: Tensor<S>, kind: Op<S>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let needs_grad = inputs(&kind).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Nodes are visited in exact reverse order of recording; a value used
    /// several times accumulates the sum of its incoming gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one()));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(key) = node.op {
                out.accumulate(key, &g);
                continue;
            }
            for (input, contrib) in self.op_backward(i, &g)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(out)
    }
}

pub(super) fn inputs<S>(op: &Op<S>) -> Vec<Var> {
    use Op::*;
    match op {
        Constant | Param(_) => vec![],
        MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | RowDot(a, b) | KlDiv(a, b) => {
            vec![*a, *b]
        }
        BlockScores(a, b, _) | BlockMix(a, b, _) | SegmentWeightedSum(a, b, _) => vec![*a, *b],
        Transpose(a)
        | Scale(a, _)
        | Reshape(a)
        | RowGather(a, _)
        | SliceRows(a, _)
        | Elu(a)
        | LeakyRelu(a)
        | Sigmoid(a)
        | LogSigmoid(a)
        | Exp(a)
        | Clamp(a, _, _)
        | MaskedSoftmax(a)
        | SegmentSoftmax(a, _)
        | Sum(a)
        | WeightedSum(a, _) => vec![*a],
        ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
    }
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    map: HashMap<ParamKey, Tensor<S>>,
}

impl<S> Default for Gradients<S> {
    fn default() -> Self {
        Self { map: HashMap::new() }
    }
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, key: ParamKey) -> Option<&Tensor<S>> {
        self.map.get(&key)
    }

    pub fn insert(&mut self, key: ParamKey, g: Tensor<S>) {
        self.map.insert(key, g);
    }

    fn accumulate(&mut self, key: ParamKey, g: &Tensor<S>) {
        match self.map.get_mut(&key) {
            Some(acc) => {
                for (a, c) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *c;
                }
            }
            None => {
                self.map.insert(key, g.clone());
            }
        }
    }

    /// True when no gradient entry belongs to the store with this id, or
    /// every such entry is identically zero.
    pub fn all_zero_for(&self, store_id: u64) -> bool {
        self.map
            .iter()
            .filter(|(k, _)| k.store == store_id)
            .all(|(_, g)| g.data().iter().all(|x| *x == S::zero()))
    }
}
