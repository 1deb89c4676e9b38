use sha2::{Digest, Sha256};

use super::calculus::QvMode;
use super::grid::TimeGrid;
use crate::{Error, Result};

/// A finite information structure: states ordered so that parents come
/// before their children, state 0 is the (trivial) initial state.
pub trait Filtration {
    fn num_states(&self) -> usize;
    fn parent(&self, state: usize) -> Option<usize>;
    fn children(&self, state: usize) -> &[usize];
    /// Conditional probability of reaching `state` from its parent.
    fn branch_prob(&self, state: usize) -> f64;
    /// Number of steps from the initial state.
    fn depth(&self, state: usize) -> usize;
    /// Whether the quadratic variation in `mode` can be computed from the
    /// states alone.
    fn supports(&self, mode: QvMode) -> bool;

    fn is_terminal(&self, state: usize) -> bool {
        self.children(state).is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    parent: Option<usize>,
    children: Vec<usize>,
    prob: f64,
    depth: usize,
    label: usize,
}

/// Finite event tree with branch probabilities. Nodes are stored in
/// breadth-first order; `label` keeps the identifier used by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct FiltrationTree {
    nodes: Vec<Node>,
    grid: TimeGrid,
    by_depth: Vec<Vec<usize>>,
}

/// Incremental construction of a [`FiltrationTree`].
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    grid: TimeGrid,
    parents: Vec<Option<usize>>,
    probs: Vec<f64>,
}

impl TreeBuilder {
    pub fn new(grid: TimeGrid) -> Self {
        Self { grid, parents: vec![None], probs: vec![1.0] }
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Adds a child of `parent` reached with conditional probability `prob`
    /// and returns its id.
    pub fn add_child(&mut self, parent: usize, prob: f64) -> usize {
        self.parents.push(Some(parent));
        self.probs.push(prob);
        self.parents.len() - 1
    }

    pub fn build(self) -> Result<FiltrationTree> {
        FiltrationTree::from_parents(self.grid, &self.parents, &self.probs)
    }
}

impl FiltrationTree {
    /// Builds a tree from parent links. Ids are arbitrary positions in the
    /// slices; exactly one entry must have no parent.
    pub fn from_parents(grid: TimeGrid, parents: &[Option<usize>], probs: &[f64]) -> Result<Self> {
        let n = parents.len();
        if probs.len() != n {
            return Err(Error::ShapeMismatch(format!("{n} parent links but {} probabilities", probs.len())));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!("expected one root, found {}", roots.len())));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == i {
                    return Err(Error::InvalidTree(format!("node {i} has invalid parent {p}")));
                }
                kids[p].push(i);
            }
        }
        // breadth-first relabeling
        let mut order = Vec::with_capacity(n);
        let mut depth = vec![0usize; n];
        order.push(roots[0]);
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &c in &kids[v] {
                depth[c] = depth[v] + 1;
                order.push(c);
            }
        }
        if order.len() != n {
            return Err(Error::InvalidTree("some nodes are not reachable from the root".into()));
        }
        let mut new_id = vec![0usize; n];
        for (k, &old) in order.iter().enumerate() {
            new_id[old] = k;
        }
        let nodes: Vec<Node> = order
            .iter()
            .map(|&old| Node {
                parent: parents[old].map(|p| new_id[p]),
                children: kids[old].iter().map(|&c| new_id[c]).collect(),
                prob: if parents[old].is_none() { 1.0 } else { probs[old] },
                depth: depth[old],
                label: old,
            })
            .collect();
        let tree = Self::assemble(grid, nodes);
        tree.validate()?;
        Ok(tree)
    }

    fn assemble(grid: TimeGrid, nodes: Vec<Node>) -> Self {
        let max_depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
        let mut by_depth = vec![Vec::new(); max_depth + 1];
        for (i, n) in nodes.iter().enumerate() {
            by_depth[n.depth].push(i);
        }
        Self { nodes, grid, by_depth }
    }

    fn validate(&self) -> Result<()> {
        let n_steps = self.grid.n_steps();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.children.is_empty() {
                if node.depth != n_steps {
                    return Err(Error::InvalidTree(format!(
                        "leaf {} sits at depth {} but the grid has {} steps",
                        node.label, node.depth, n_steps
                    )));
                }
                continue;
            }
            let mut total = 0.0;
            for &c in &node.children {
                let p = self.nodes[c].prob;
                if !(p > 0.0) || !p.is_finite() {
                    return Err(Error::InvalidTree(format!(
                        "branch into node {} has probability {p}",
                        self.nodes[c].label
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidTree(format!(
                    "branch probabilities at node {} sum to {total}",
                    self.nodes[i].label
                )));
            }
        }
        Ok(())
    }

    /// Full non-recombining tree where every node branches with the same
    /// conditional probabilities.
    pub fn uniform(grid: TimeGrid, branch_probs: &[f64]) -> Result<Self> {
        let mut b = TreeBuilder::new(grid.clone());
        let mut frontier = vec![b.root()];
        for _ in 0..grid.n_steps() {
            let mut next = Vec::with_capacity(frontier.len() * branch_probs.len());
            for &v in &frontier {
                for &p in branch_probs {
                    next.push(b.add_child(v, p));
                }
            }
            frontier = next;
        }
        b.build()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_periods(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn nodes_at(&self, depth: usize) -> &[usize] {
        self.by_depth.get(depth).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn leaves(&self) -> &[usize] {
        self.nodes_at(self.n_periods())
    }

    /// Identifier the caller used for `node` when building the tree.
    pub fn label(&self, node: usize) -> usize {
        self.nodes[node].label
    }

    pub fn time(&self, node: usize) -> f64 {
        self.grid.times()[self.nodes[node].depth]
    }

    /// Ancestor of `node` at `depth` (the node itself if already there).
    pub fn ancestor_at(&self, mut node: usize, depth: usize) -> usize {
        while self.nodes[node].depth > depth {
            node = self.nodes[node].parent.expect("non-root node has a parent");
        }
        node
    }

    /// Probability of `node` conditional on its ancestor at depth
    /// `from_depth`.
    pub fn conditional_prob(&self, mut node: usize, from_depth: usize) -> f64 {
        let mut p = 1.0;
        while self.nodes[node].depth > from_depth {
            p *= self.nodes[node].prob;
            node = self.nodes[node].parent.expect("non-root node has a parent");
        }
        p
    }

    /// Leaves below `node` with their probabilities conditional on `node`.
    pub fn leaves_below(&self, node: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(node, 1.0)];
        while let Some((v, p)) = stack.pop() {
            let kids = &self.nodes[v].children;
            if kids.is_empty() {
                out.push((v, p));
            } else {
                for &c in kids.iter().rev() {
                    stack.push((c, p * self.nodes[c].prob));
                }
            }
        }
        out
    }

    /// Conditional expectation at `node` of a terminal quantity given per
    /// node (only leaf entries are read).
    pub fn conditional_expectation(&self, node: usize, terminal: &[f64]) -> f64 {
        self.leaves_below(node).iter().map(|&(l, p)| p * terminal[l]).sum()
    }

    /// Stable content hash of the tree structure (labels, probabilities,
    /// grid), used to identify instances in certificates.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.grid.times() {
            h.update(t.to_le_bytes());
        }
        for n in &self.nodes {
            h.update((n.label as u64).to_le_bytes());
            h.update((n.parent.map(|p| self.nodes[p].label as u64).unwrap_or(u64::MAX)).to_le_bytes());
            h.update(n.prob.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl Filtration for FiltrationTree {
    fn num_states(&self) -> usize {
        self.nodes.len()
    }

    fn parent(&self, state: usize) -> Option<usize> {
        self.nodes[state].parent
    }

    fn children(&self, state: usize) -> &[usize] {
        &self.nodes[state].children
    }

    fn branch_prob(&self, state: usize) -> f64 {
        self.nodes[state].prob
    }

    fn depth(&self, state: usize) -> usize {
        self.nodes[state].depth
    }

    fn supports(&self, _mode: QvMode) -> bool {
        true
    }
}

/// The filtration generated by one simulated path: a chain of
/// `n_steps + 1` states. It carries no distributional information, so only
/// realized quadratic variation can be computed on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathChain {
    next: Vec<usize>,
}

impl PathChain {
    pub fn new(n_steps: usize) -> Self {
        Self { next: (1..=n_steps).collect() }
    }

    pub fn n_steps(&self) -> usize {
        self.next.len()
    }
}

impl Filtration for PathChain {
    fn num_states(&self) -> usize {
        self.next.len() + 1
    }

    fn parent(&self, state: usize) -> Option<usize> {
        state.checked_sub(1)
    }

    fn children(&self, state: usize) -> &[usize] {
        if state < self.next.len() {
            &self.next[state..state + 1]
        } else {
            &[]
        }
    }

    fn branch_prob(&self, _state: usize) -> f64 {
        1.0
    }

    fn depth(&self, state: usize) -> usize {
        state
    }

    fn supports(&self, mode: QvMode) -> bool {
        mode == QvMode::Realized
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::uniform(1.0, n).unwrap()
    }

    #[test]
    fn binomial_structure() {
        let t = FiltrationTree::uniform(grid(3), &[0.5, 0.5]).unwrap();
        assert_eq!(t.len(), 15);
        assert_eq!(t.leaves().len(), 8);
        assert_eq!(t.nodes_at(1).len(), 2);
        assert!(t.parent(0).is_none());
        for &leaf in t.leaves() {
            assert_eq!(t.depth(leaf), 3);
            assert!((t.conditional_prob(leaf, 0) - 0.125).abs() < 1e-15);
        }
        let total: f64 = t.leaves_below(0).iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(FiltrationTree::uniform(grid(1), &[0.5, 0.4]).is_err());
        assert!(FiltrationTree::uniform(grid(1), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_short_leaf() {
        let mut b = TreeBuilder::new(grid(2));
        let a = b.add_child(0, 0.5);
        b.add_child(0, 0.5);
        b.add_child(a, 1.0);
        assert!(matches!(b.build(), Err(Error::InvalidTree(_))));
    }

    #[test]
    fn relabels_breadth_first() {
        // children listed before their parent in the input
        let parents = vec![Some(2), Some(2), None];
        let t = FiltrationTree::from_parents(grid(1), &parents, &[0.3, 0.7, 1.0]).unwrap();
        assert_eq!(t.label(0), 2);
        assert_eq!(t.children(0), &[1, 2]);
        assert!((t.branch_prob(2) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn chain_is_a_path() {
        let c = PathChain::new(3);
        assert_eq!(c.num_states(), 4);
        assert_eq!(c.children(2), &[3]);
        assert!(c.children(3).is_empty());
        assert_eq!(c.parent(0), None);
        assert!(!c.supports(QvMode::Predictable));
    }
}
