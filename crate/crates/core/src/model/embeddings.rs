use std::collections::HashMap;

use crate::graph::NodeId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `H_t`: one `d`-vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings<S> {
    nodes: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    values: Tensor<S>,
}

impl<S: Scalar> NodeEmbeddings<S> {
    /// `values` has one row per entry of `nodes`.
    pub fn new(nodes: Vec<NodeId>, values: Tensor<S>) -> Self {
        assert_eq!(nodes.len(), values.rows(), "one embedding row per node");
        let index = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        Self { nodes, index, values }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.index.contains_key(&u)
    }

    pub fn get(&self, u: NodeId) -> Option<&[S]> {
        self.index.get(&u).map(|&i| self.values.row(i))
    }

    pub fn row_of(&self, u: NodeId) -> Option<usize> {
        self.index.get(&u).copied()
    }

    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }

    pub fn to_f64(&self) -> NodeEmbeddings<f64> {
        NodeEmbeddings {
            nodes: self.nodes.clone(),
            index: self.index.clone(),
            values: self.values.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.all_finite()
    }
}
