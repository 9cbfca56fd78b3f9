//! Finite event trees: the discrete filtered probability space underlying
//! every model in this crate.
//!
//! A tree has a single root at depth 0, every non-terminal node branches into
//! at least two children, and all leaves sit at depth `periods`. Each node
//! carries the conditional probability of being reached from its parent; the
//! product along a path gives the physical probability of a leaf.

use crate::error::{Error, Result};

/// Index of a node inside an [`EventTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A single state of the world at some date.
#[derive(Debug, Clone)]
pub struct Node {
    /// Human-readable identifier (the `id` field of the model file).
    pub label: String,
    pub parent: Option<NodeId>,
    pub depth: usize,
    /// Conditional probability of reaching this node from its parent under
    /// the physical measure; 1.0 at the root.
    pub branch_probability: f64,
    children: Vec<NodeId>,
}

impl Node {
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Finite multi-period information structure.
#[derive(Debug, Clone)]
pub struct EventTree {
    periods: usize,
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
    internal: Vec<NodeId>,
    /// node index -> rank among internal nodes (None for leaves).
    internal_rank: Vec<Option<usize>>,
}

impl EventTree {
    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Terminal nodes, in insertion order. All leaf-indexed vectors in this
    /// crate align with this ordering.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Non-terminal nodes, in insertion order; trading decisions live here.
    pub fn internal_nodes(&self) -> &[NodeId] {
        &self.internal
    }

    /// Rank of `id` among the internal nodes, if it is one.
    pub fn internal_rank(&self, id: NodeId) -> Option<usize> {
        self.internal_rank[id.0]
    }

    /// Position of `id` in [`leaves`](Self::leaves), if it is a leaf.
    pub fn leaf_rank(&self, id: NodeId) -> Option<usize> {
        self.leaves.iter().position(|&l| l == id)
    }

    /// Edges (node, child-taken) on the path from the root to `leaf`.
    pub fn path_edges(&self, leaf: NodeId) -> Vec<(NodeId, NodeId)> {
        let mut edges = Vec::with_capacity(self.periods);
        let mut cur = leaf;
        while let Some(parent) = self.node(cur).parent {
            edges.push((parent, cur));
            cur = parent;
        }
        edges.reverse();
        edges
    }

    /// Physical probability of each leaf (product of branch probabilities).
    pub fn leaf_probabilities(&self) -> Vec<f64> {
        self.leaves
            .iter()
            .map(|&leaf| {
                let mut p = self.node(leaf).branch_probability;
                let mut cur = leaf;
                while let Some(parent) = self.node(cur).parent {
                    if parent != self.root() {
                        p *= self.node(parent).branch_probability;
                    }
                    cur = parent;
                }
                p
            })
            .collect()
    }

    /// Leaves lying in the subtree rooted at `id` (ranks into `leaves()`).
    pub fn subtree_leaf_ranks(&self, id: NodeId) -> Vec<usize> {
        let mut stack = vec![id];
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            if self.node(n).is_leaf() {
                out.push(self.leaf_rank(n).expect("leaf present in leaf list"));
            } else {
                stack.extend_from_slice(self.node(n).children());
            }
        }
        out.sort_unstable();
        out
    }

    pub(crate) fn from_parts(periods: usize, nodes: Vec<Node>) -> Result<Self> {
        if periods == 0 {
            return Err(Error::Validation(
                "tree must span at least one period".into(),
            ));
        }
        if nodes.is_empty() {
            return Err(Error::Validation("tree has no nodes".into()));
        }
        if nodes[0].parent.is_some() || nodes[0].depth != 0 {
            return Err(Error::Validation(
                "first node must be the root at depth 0".into(),
            ));
        }
        for (i, n) in nodes.iter().enumerate().skip(1) {
            if n.parent.is_none() {
                return Err(Error::Validation(format!(
                    "node '{}' has no parent but is not the root",
                    n.label
                )));
            }
            if !(n.branch_probability > 0.0) || n.branch_probability > 1.0 {
                return Err(Error::Validation(format!(
                    "node '{}' has branch probability {} outside (0, 1]",
                    n.label, n.branch_probability
                )));
            }
            if n.depth > periods {
                return Err(Error::Validation(format!(
                    "node '{}' sits at depth {} beyond the horizon {}",
                    n.label, n.depth, periods
                )));
            }
            let _ = i;
        }
        let mut leaves = Vec::new();
        let mut internal = Vec::new();
        let mut internal_rank = vec![None; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if n.is_leaf() {
                if n.depth != periods {
                    return Err(Error::Validation(format!(
                        "node '{}' is childless at depth {}, but all leaves must sit at depth {}",
                        n.label, n.depth, periods
                    )));
                }
                leaves.push(NodeId(i));
            } else {
                if n.children.len() < 2 {
                    return Err(Error::Validation(format!(
                        "node '{}' has {} child(ren); non-terminal nodes need at least 2",
                        n.label,
                        n.children.len()
                    )));
                }
                let psum: f64 = n
                    .children
                    .iter()
                    .map(|&c| nodes[c.0].branch_probability)
                    .sum();
                if (psum - 1.0).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "node '{}': child probabilities sum to {psum:.17}, not 1",
                        n.label
                    )));
                }
                internal_rank[i] = Some(internal.len());
                internal.push(NodeId(i));
            }
        }
        Ok(EventTree {
            periods,
            nodes,
            leaves,
            internal,
            internal_rank,
        })
    }
}

/// Incremental construction of an [`EventTree`]; used by the model builder.
#[derive(Debug, Default)]
pub(crate) struct TreeBuilder {
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        TreeBuilder { nodes: Vec::new() }
    }

    pub fn add_root(&mut self, label: impl Into<String>) -> NodeId {
        debug_assert!(self.nodes.is_empty());
        self.nodes.push(Node {
            label: label.into(),
            parent: None,
            depth: 0,
            branch_probability: 1.0,
            children: Vec::new(),
        });
        NodeId(0)
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        probability: f64,
        label: impl Into<String>,
    ) -> NodeId {
        let depth = self.nodes[parent.0].depth + 1;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            label: label.into(),
            parent: Some(parent),
            depth,
            branch_probability: probability,
            children: Vec::new(),
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    pub fn build(self, periods: usize) -> Result<EventTree> {
        EventTree::from_parts(periods, self.nodes)
    }
}
