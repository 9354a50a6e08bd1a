//! Class taxonomy: a rooted DAG of concepts with per-leaf instance counts.
//!
//! Leaves are the classes of the benchmark; internal nodes are superordinate
//! concepts. Every node carries a cumulative instance count, the sum of
//! `own_instance_count` over its descendant leaves (a leaf reachable through
//! several paths counts once per ancestor — counts are set cardinalities, not
//! path counts). Cumulative counts make "most specific common ancestor"
//! queries well defined on a DAG: among common ancestors we take the one with
//! the smallest cumulative count, breaking ties by lexicographically smallest
//! id.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("invalid taxonomy JSON: {0}")]
    Parse(String),
    #[error("taxonomy has no nodes")]
    Empty,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` references unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("taxonomy has multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("taxonomy contains a directed cycle through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("leaf `{0}` has no instances")]
    LeafWithoutInstances(String),
    #[error("leaf_order mismatch: {0}")]
    LeafOrderMismatch(String),
    #[error("unknown class `{0}` (not a leaf of the taxonomy)")]
    UnknownClass(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

/// One concept in the taxonomy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ConceptNode {
    pub id: String,
    #[serde(rename = "name")]
    pub display_name: String,
    #[serde(rename = "parents", default)]
    pub parent_ids: Vec<String>,
    #[serde(rename = "instances", default)]
    pub own_instance_count: u64,
}

#[derive(Deserialize)]
struct TaxonomyFile {
    nodes: Vec<ConceptNode>,
    #[serde(default)]
    leaf_order: Option<Vec<String>>,
}

#[derive(Serialize)]
struct TaxonomyFileOut<'a> {
    nodes: Vec<&'a ConceptNode>,
    leaf_order: &'a [String],
}

/// A validated taxonomy DAG.
///
/// Immutable after load; all queries are `&self` and safe for concurrent use.
#[derive(Debug)]
pub struct TaxonomyGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    nodes: Vec<ConceptNode>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    root: usize,
    leaf_class_ids: Vec<String>,
    leaf_set: HashSet<usize>,
    cumulative: Vec<u64>,
    /// Node indices ordered by (cumulative count, id): the "specificity" rank.
    node_at_rank: Vec<usize>,
    /// Per node, a bitset over ranks of its ancestors (a node is its own
    /// ancestor). The first set bit of an AND of two of these is the lso.
    anc_bits: Vec<Vec<u64>>,
    bit_words: usize,
}

/// Parse and validate a taxonomy from its JSON representation.
pub fn load_taxonomy(source: &str) -> Result<TaxonomyGraph, TaxonomyError> {
    TaxonomyGraph::from_json(source)
}

impl TaxonomyGraph {
    pub fn from_json(source: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile =
            serde_json::from_str(source).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Self::from_nodes(file.nodes, file.leaf_order)
    }

    pub fn from_nodes(
        mut nodes: Vec<ConceptNode>,
        leaf_order: Option<Vec<String>>,
    ) -> Result<Self, TaxonomyError> {
        if nodes.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        for node in &mut nodes {
            node.parent_ids.sort();
        }

        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateNode(node.id.clone()));
            }
        }

        let n = nodes.len();
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in nodes.iter().enumerate() {
            for pid in &node.parent_ids {
                let &p = index.get(pid).ok_or_else(|| TaxonomyError::UnknownParent {
                    node: node.id.clone(),
                    parent: pid.clone(),
                })?;
                parents[i].push(p);
                children[p].push(i);
            }
        }

        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_empty()).collect();
        if roots.len() > 1 {
            return Err(TaxonomyError::MultipleRoots(
                roots.iter().map(|&i| nodes[i].id.clone()).collect(),
            ));
        }
        if roots.is_empty() {
            // Every node has a parent, so some subset must form a cycle.
            return Err(TaxonomyError::CycleDetected(cycle_kernel(
                &nodes, &parents, &children,
            )));
        }
        let root = roots[0];

        // Kahn's algorithm from the root; leftover nodes sit on or below a cycle.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut topo = Vec::with_capacity(n);
        let mut queue = vec![root];
        while let Some(v) = queue.pop() {
            topo.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if topo.len() != n {
            return Err(TaxonomyError::CycleDetected(cycle_kernel(
                &nodes, &parents, &children,
            )));
        }

        let is_leaf: Vec<bool> = (0..n).map(|i| children[i].is_empty()).collect();
        for i in 0..n {
            if is_leaf[i] && nodes[i].own_instance_count == 0 {
                return Err(TaxonomyError::LeafWithoutInstances(nodes[i].id.clone()));
            }
        }

        let mut leaf_class_ids: Vec<String> = (0..n)
            .filter(|&i| is_leaf[i])
            .map(|i| nodes[i].id.clone())
            .collect();
        if let Some(order) = leaf_order {
            let given: BTreeSet<&String> = order.iter().collect();
            if given.len() != order.len() {
                return Err(TaxonomyError::LeafOrderMismatch(
                    "leaf_order contains duplicates".into(),
                ));
            }
            let actual: BTreeSet<&String> = leaf_class_ids.iter().collect();
            if given != actual {
                return Err(TaxonomyError::LeafOrderMismatch(format!(
                    "leaf_order lists {} ids but the graph has {} leaves (or the sets differ)",
                    order.len(),
                    leaf_class_ids.len()
                )));
            }
            leaf_class_ids = order;
        }

        // Descendant-leaf bitsets, children before parents, so that a leaf
        // reachable through several paths is merged once per ancestor.
        let leaf_pos: HashMap<usize, usize> = leaf_class_ids
            .iter()
            .enumerate()
            .map(|(pos, id)| (index[id], pos))
            .collect();
        let leaf_words = leaf_class_ids.len().div_ceil(64);
        let mut desc: Vec<Vec<u64>> = vec![vec![0u64; leaf_words]; n];
        for &v in topo.iter().rev() {
            if is_leaf[v] {
                let pos = leaf_pos[&v];
                desc[v][pos / 64] |= 1u64 << (pos % 64);
            }
            // Split borrows: children sets are already final (reverse topo).
            for &c in &children[v] {
                let (dst, src) = if c > v {
                    let (lo, hi) = desc.split_at_mut(c);
                    (&mut lo[v], &hi[0])
                } else {
                    let (lo, hi) = desc.split_at_mut(v);
                    (&mut hi[0], &lo[c])
                };
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d |= *s;
                }
            }
        }
        let leaf_own: Vec<u64> = leaf_class_ids
            .iter()
            .map(|id| nodes[index[id]].own_instance_count)
            .collect();
        let mut cumulative = vec![0u64; n];
        for v in 0..n {
            let mut sum = 0u64;
            for (w, &word) in desc[v].iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let b = bits.trailing_zeros() as usize;
                    sum += leaf_own[w * 64 + b];
                    bits &= bits - 1;
                }
            }
            cumulative[v] = sum;
        }

        // Specificity ranking and ancestor bitsets for O(words) lso queries.
        let mut node_at_rank: Vec<usize> = (0..n).collect();
        node_at_rank.sort_by(|&a, &b| (cumulative[a], &nodes[a].id).cmp(&(cumulative[b], &nodes[b].id)));
        let mut rank_of = vec![0usize; n];
        for (r, &v) in node_at_rank.iter().enumerate() {
            rank_of[v] = r;
        }
        let bit_words = n.div_ceil(64);
        let mut anc_bits: Vec<Vec<u64>> = vec![vec![0u64; bit_words]; n];
        for &v in &topo {
            for &p in &parents[v] {
                let (dst, src) = if p > v {
                    let (lo, hi) = anc_bits.split_at_mut(p);
                    (&mut lo[v], &hi[0])
                } else {
                    let (lo, hi) = anc_bits.split_at_mut(v);
                    (&mut hi[0], &lo[p])
                };
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d |= *s;
                }
            }
            let r = rank_of[v];
            anc_bits[v][r / 64] |= 1u64 << (r % 64);
        }

        let leaf_set: HashSet<usize> = leaf_class_ids.iter().map(|id| index[id]).collect();
        let ids = nodes.iter().map(|nd| nd.id.clone()).collect();
        Ok(Self {
            ids,
            index,
            nodes,
            parents,
            children,
            root,
            leaf_class_ids,
            leaf_set,
            cumulative,
            node_at_rank,
            anc_bits,
            bit_words,
        })
    }

    /// Canonical JSON serialization: nodes sorted by id, parent lists sorted,
    /// explicit leaf order. Loading the output and re-serializing reproduces
    /// it byte for byte.
    pub fn to_json(&self) -> String {
        let out = TaxonomyFileOut {
            nodes: self.nodes.iter().collect(),
            leaf_order: &self.leaf_class_ids,
        };
        serde_json::to_string(&out).expect("taxonomy serialization cannot fail")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn content_sha256(&self) -> String {
        crate::manifest::sha256_hex(self.to_json().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn node(&self, id: &str) -> Option<&ConceptNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn root_id(&self) -> &str {
        &self.ids[self.root]
    }

    /// Leaf class ids in canonical order — the index order of every matrix.
    pub fn leaf_class_ids(&self) -> &[String] {
        &self.leaf_class_ids
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.index
            .get(id)
            .is_some_and(|i| self.leaf_set.contains(i))
    }

    pub fn children_of(&self, id: &str) -> Result<Vec<&str>, TaxonomyError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))?;
        Ok(self.children[i].iter().map(|&c| self.ids[c].as_str()).collect())
    }

    /// Sum of `own_instance_count` over the node's descendant leaves (a leaf
    /// is its own descendant). Instance counts are a leaf property; a count
    /// attached to an internal node is preserved on serialization but does
    /// not contribute here.
    pub fn cumulative_count(&self, id: &str) -> Result<u64, TaxonomyError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))?;
        Ok(self.cumulative[i])
    }

    /// All nodes from which `id` is reachable, including `id` itself.
    pub fn ancestor_set(&self, id: &str) -> Result<BTreeSet<String>, TaxonomyError> {
        let &start = self
            .index
            .get(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))?;
        let mut seen = HashSet::new();
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(self.parents[v].iter().copied());
            }
        }
        Ok(seen.into_iter().map(|v| self.ids[v].clone()).collect())
    }

    /// The lowest superordinate of two leaf classes: the common ancestor with
    /// the smallest cumulative instance count, ties broken by id.
    pub fn lowest_superordinate(&self, c1: &str, c2: &str) -> Result<&str, TaxonomyError> {
        let a = self.leaf_index(c1)?;
        let b = self.leaf_index(c2)?;
        for w in 0..self.bit_words {
            let common = self.anc_bits[a][w] & self.anc_bits[b][w];
            if common != 0 {
                let rank = w * 64 + common.trailing_zeros() as usize;
                return Ok(&self.ids[self.node_at_rank[rank]]);
            }
        }
        unreachable!("the root is a common ancestor of every pair of nodes")
    }

    fn leaf_index(&self, id: &str) -> Result<usize, TaxonomyError> {
        match self.index.get(id) {
            Some(&i) if self.leaf_set.contains(&i) => Ok(i),
            _ => Err(TaxonomyError::UnknownClass(id.to_string())),
        }
    }
}

/// Nodes that lie on at least one directed cycle: iteratively strip nodes
/// with no remaining parents or no remaining children until a fixpoint.
fn cycle_kernel(
    nodes: &[ConceptNode],
    parents: &[Vec<usize>],
    children: &[Vec<usize>],
) -> Vec<String> {
    let n = nodes.len();
    let mut alive = vec![true; n];
    let mut changed = true;
    while changed {
        changed = false;
        for v in 0..n {
            if !alive[v] {
                continue;
            }
            let has_parent = parents[v].iter().any(|&p| alive[p]);
            let has_child = children[v].iter().any(|&c| alive[c]);
            if !has_parent || !has_child {
                alive[v] = false;
                changed = true;
            }
        }
    }
    (0..n)
        .filter(|&v| alive[v])
        .map(|v| nodes[v].id.clone())
        .collect()
}
