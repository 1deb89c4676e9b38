//! Plain-text tree definitions.
//!
//! A definition is a TOML document with the grid instants and one
//! `[[node]]` table per node:
//!
//! ```toml
//! times = [0.0, 0.5, 1.0]
//!
//! [[node]]
//! id = 0
//! lambda = 1.75          # market price of risk over the outgoing interval
//!
//! [[node]]
//! id = 1
//! parent = 0
//! prob = 0.5             # conditional probability of the branch into this node
//! dm = 0.1               # driver increment ΔM on that branch
//! lambda = 1.75
//!
//! [[node]]
//! id = 3
//! parent = 1
//! prob = 0.5
//! dm = 0.1
//! weight = 2.0           # optional utility weight, leaves only
//! ```
//!
//! Ids are arbitrary distinct integers; the root is the node without a
//! parent. `lambda` is required on non-leaf nodes. Leaf weights are either
//! given on every leaf or on none.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::calculus::{AdaptedProcess, PredictableControl};
use super::grid::TimeGrid;
use super::market::MarketModel;
use super::tree::{Filtration, FiltrationTree};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDef {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDefinition {
    pub times: Vec<f64>,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeDef>,
}

/// A parsed definition: the market and, if present, per-node leaf weights
/// (zero off the leaves).
#[derive(Debug, Clone)]
pub struct TreeInstance {
    pub model: MarketModel<FiltrationTree>,
    pub weights: Option<Vec<f64>>,
}

impl TreeDefinition {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("tree definitions serialize")
    }

    pub fn build(&self) -> Result<TreeInstance> {
        let grid = TimeGrid::new(self.times.clone())?;
        let n = self.nodes.len();
        let mut pos: HashMap<u64, usize> = HashMap::with_capacity(n);
        for (i, nd) in self.nodes.iter().enumerate() {
            if pos.insert(nd.id, i).is_some() {
                return Err(Error::Parse(format!("duplicate node id {}", nd.id)));
            }
        }
        let mut parents = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for nd in &self.nodes {
            match nd.parent {
                None => {
                    parents.push(None);
                    probs.push(1.0);
                }
                Some(p) => {
                    let &pi = pos.get(&p).ok_or_else(|| Error::Parse(format!("node {}: unknown parent {p}", nd.id)))?;
                    parents.push(Some(pi));
                    probs.push(nd.prob.ok_or_else(|| Error::Parse(format!("node {}: missing `prob`", nd.id)))?);
                }
            }
        }
        let tree = FiltrationTree::from_parents(grid, &parents, &probs)?;
        let m_nodes = tree.len();
        let mut driver = vec![0.0; m_nodes];
        let mut lambda = vec![0.0; m_nodes];
        let mut weights = vec![0.0; m_nodes];
        let mut n_weights = 0;
        for s in 0..m_nodes {
            let nd = &self.nodes[tree.label(s)];
            if let Some(p) = tree.parent(s) {
                let dm = nd.dm.ok_or_else(|| Error::Parse(format!("node {}: missing `dm`", nd.id)))?;
                driver[s] = driver[p] + dm;
            }
            if tree.is_terminal(s) {
                if nd.lambda.is_some() {
                    return Err(Error::Parse(format!("node {}: `lambda` given on a leaf", nd.id)));
                }
                if let Some(w) = nd.weight {
                    if !(w > 0.0) || !w.is_finite() {
                        return Err(Error::Parse(format!("node {}: weight must be positive and finite", nd.id)));
                    }
                    weights[s] = w;
                    n_weights += 1;
                }
            } else {
                if nd.weight.is_some() {
                    return Err(Error::Parse(format!("node {}: `weight` given on a non-leaf", nd.id)));
                }
                lambda[s] = nd.lambda.ok_or_else(|| Error::Parse(format!("node {}: missing `lambda`", nd.id)))?;
            }
        }
        let n_leaves = tree.leaves().len();
        let weights = match n_weights {
            0 => None,
            k if k == n_leaves => Some(weights),
            k => return Err(Error::Parse(format!("weights given on {k} of {n_leaves} leaves"))),
        };
        let model = MarketModel::new(tree, AdaptedProcess(driver), PredictableControl(lambda))?;
        Ok(TreeInstance { model, weights })
    }

    /// Definition of an existing model, node ids being internal positions.
    pub fn from_model(model: &MarketModel<FiltrationTree>, weights: Option<&[f64]>) -> Self {
        let tree = model.filtration();
        let m = model.driver();
        let nodes = (0..tree.len())
            .map(|s| NodeDef {
                id: s as u64,
                parent: tree.parent(s).map(|p| p as u64),
                prob: tree.parent(s).map(|_| tree.branch_prob(s)),
                dm: tree.parent(s).map(|p| m[s] - m[p]),
                lambda: (!tree.is_terminal(s)).then(|| model.lambda()[s]),
                weight: weights.filter(|_| tree.is_terminal(s)).map(|w| w[s]),
            })
            .collect();
        Self { times: tree.grid().times().to_vec(), nodes }
    }
}
