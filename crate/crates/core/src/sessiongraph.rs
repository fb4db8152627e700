//! Directed session graphs and ground-truth masking.
//!
//! Nodes are the distinct history items in first-occurrence order. Each
//! consecutive pair `u → v` in the history is one edge occurrence; the
//! outgoing matrix divides an edge's count by the start node's out-degree and
//! the incoming matrix divides it by the end node's in-degree, so every row
//! with at least one edge sums to one. Repeated items produce self-loops,
//! which are counted like any other edge.

use std::collections::HashMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Timestamped interaction.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Event {
    pub item: String,
    pub ts: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Session {
    pub session_id: String,
    pub events: Vec<Event>,
}

impl Session {
    pub fn items(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.item.as_str()).collect()
    }

    /// Timestamp of the last event.
    pub fn last_ts(&self) -> Option<i64> {
        self.events.last().map(|e| e.ts)
    }
}

/// Takes the last item as the ground truth and removes every occurrence of
/// it from the history. Returns `None` when nothing would be left.
pub fn mask_ground_truth<T: PartialEq + Clone>(items: &[T]) -> Option<(Vec<T>, T)> {
    let gt = items.last()?.clone();
    let history: Vec<T> = items.iter().filter(|i| **i != gt).cloned().collect();
    if history.is_empty() {
        None
    } else {
        Some((history, gt))
    }
}

/// A session graph over item indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionGraph {
    /// Distinct items in first-occurrence order (padding slots hold 0).
    pub nodes: Vec<usize>,
    pub adj_out: Tensor,
    pub adj_in: Tensor,
    /// Masked history, in order.
    pub history: Vec<usize>,
    pub ground_truth: Option<usize>,
    /// Which node rows are real; all `true` unless padded.
    pub mask: Vec<bool>,
}

impl SessionGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Node index of the last history item.
    pub fn last_index(&self) -> usize {
        let last = *self.history.last().expect("graph has a history");
        self.nodes
            .iter()
            .zip(&self.mask)
            .position(|(&n, &m)| m && n == last)
            .expect("last history item is a node")
    }

    /// Indices of the real (unpadded) node rows.
    pub fn valid_rows(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn with_ground_truth(mut self, gt: usize) -> Self {
        self.ground_truth = Some(gt);
        self
    }
}

/// Builds the graph for a (non-empty) history of item indices.
pub fn build_graph(history: &[usize]) -> Result<SessionGraph> {
    if history.is_empty() {
        return Err(Error::domain("build_graph", "empty history"));
    }
    let mut nodes = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for &item in history {
        pos.entry(item).or_insert_with(|| {
            nodes.push(item);
            nodes.len() - 1
        });
    }
    let n = nodes.len();
    let mut counts = vec![0.0f64; n * n];
    for w in history.windows(2) {
        counts[pos[&w[0]] * n + pos[&w[1]]] += 1.0;
    }
    let mut out = vec![0.0; n * n];
    let mut inc = vec![0.0; n * n];
    for i in 0..n {
        let outdeg: f64 = (0..n).map(|j| counts[i * n + j]).sum();
        let indeg: f64 = (0..n).map(|j| counts[j * n + i]).sum();
        for j in 0..n {
            if outdeg > 0.0 {
                out[i * n + j] = counts[i * n + j] / outdeg;
            }
            if indeg > 0.0 {
                inc[i * n + j] = counts[j * n + i] / indeg;
            }
        }
    }
    Ok(SessionGraph {
        nodes,
        adj_out: Tensor::from_parts(vec![n, n], out),
        adj_in: Tensor::from_parts(vec![n, n], inc),
        history: history.to_vec(),
        ground_truth: None,
        mask: vec![true; n],
    })
}

/// Zero-pads every graph to `n_max` nodes.
pub fn batch_graphs(graphs: &[SessionGraph], n_max: usize) -> Result<Vec<SessionGraph>> {
    graphs
        .iter()
        .map(|g| {
            let n = g.len();
            if n > n_max {
                return Err(Error::Config(format!("graph with {n} nodes exceeds pad size {n_max}")));
            }
            let pad = |m: &Tensor| {
                let mut d = vec![0.0; n_max * n_max];
                for i in 0..n {
                    d[i * n_max..i * n_max + n].copy_from_slice(m.row(i));
                }
                Tensor::from_parts(vec![n_max, n_max], d)
            };
            let mut nodes = g.nodes.clone();
            nodes.resize(n_max, 0);
            let mut mask = g.mask.clone();
            mask.resize(n_max, false);
            Ok(SessionGraph {
                nodes,
                adj_out: pad(&g.adj_out),
                adj_in: pad(&g.adj_in),
                history: g.history.clone(),
                ground_truth: g.ground_truth,
                mask,
            })
        })
        .collect()
}
