//! Time-varying communication graphs, the graph shift, and the delayed
//! aggregation buffer.
//!
//! A snapshot stores the shift operator of one time step as CSR adjacency:
//! row `i` holds the agents `j` whose state reaches `i` in one exchange,
//! together with the channel weight `s_ij`. Shifting a node signal mixes
//! each row with its neighbors' rows, and chaining shifts of *past*
//! snapshots is what gives multi-hop information its one-step-per-hop
//! delay. The buffer maintains exactly those chained products with one
//! shift application per tap per step.

use crate::error::{Error, Result};
use crate::mat::Mat;
use std::collections::BTreeSet;

/// Sparse shift operator for one time step.
///
/// Edges are ordered pairs `(src, dst)`: the entry `s[dst][src]` is nonzero
/// and `dst` hears from `src`. The flocking instantiation only ever builds
/// symmetric binary graphs, but nothing here relies on that.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    n_agents: usize,
    // CSR over rows of S: row i lists (j, s_ij) for j in the in-neighborhood
    // of i, j ascending.
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    weights: Vec<f64>,
}

impl GraphSnapshot {
    /// Graph with `n_agents` nodes and no edges.
    pub fn empty(n_agents: usize) -> Self {
        GraphSnapshot {
            n_agents,
            row_ptr: vec![0; n_agents + 1],
            col_idx: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Build from directed weighted edges `(src, dst, weight)`.
    ///
    /// Rejects self-loops, out-of-range indices, non-positive weights and
    /// duplicate pairs.
    pub fn from_weighted_edges(
        n_agents: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut by_row: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_agents];
        for (src, dst, w) in edges {
            if src == dst {
                return Err(Error::InvalidArgument(format!(
                    "self-loop ({src},{dst}) not allowed"
                )));
            }
            if src >= n_agents || dst >= n_agents {
                return Err(Error::InvalidArgument(format!(
                    "edge ({src},{dst}) out of range for {n_agents} agents"
                )));
            }
            if w <= 0.0 || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "edge ({src},{dst}) has non-positive weight {w}"
                )));
            }
            by_row[dst].push((src as u32, w));
        }
        let mut row_ptr = Vec::with_capacity(n_agents + 1);
        let mut col_idx = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for row in &mut by_row {
            row.sort_unstable_by_key(|&(j, _)| j);
            for pair in row.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate edge into node {}",
                        row_ptr.len() - 1
                    )));
                }
            }
            for &(j, w) in row.iter() {
                col_idx.push(j);
                weights.push(w);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(GraphSnapshot {
            n_agents,
            row_ptr,
            col_idx,
            weights,
        })
    }

    /// Build a symmetric binary graph from undirected pairs: each pair adds
    /// both directions with weight 1.
    pub fn symmetric_binary(
        n_agents: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut directed = Vec::new();
        for (i, j) in pairs {
            directed.push((i, j, 1.0));
            directed.push((j, i, 1.0));
        }
        Self::from_weighted_edges(n_agents, directed)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Number of directed edges (nonzero off-diagonal entries of S).
    pub fn n_edges(&self) -> usize {
        self.col_idx.len()
    }

    /// In-neighborhood of `i`: the agents whose transmissions reach `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.weights[lo..hi])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.neighbors(dst).any(|(j, _)| j == src)
    }

    /// Directed edges as `(src, dst, weight)`, sorted by `(src, dst)`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for dst in 0..self.n_agents {
            for (src, w) in self.neighbors(dst) {
                out.push((src, dst, w));
            }
        }
        out.sort_unstable_by_key(|&(s, d, _)| (s, d));
        out
    }

    /// Dense view of S, for oracle checks.
    pub fn to_dense(&self) -> Mat {
        let mut s = Mat::zeros(self.n_agents, self.n_agents);
        for i in 0..self.n_agents {
            for (j, w) in self.neighbors(i) {
                s.set(i, j, w);
            }
        }
        s
    }

    /// One graph shift: `out[i] = sum over in-neighbors j of s_ij * signal[j]`.
    /// Rows of isolated nodes come out zero.
    pub fn shift(&self, signal: &Mat) -> Result<Mat> {
        if signal.rows() != self.n_agents {
            return Err(Error::dims(
                "GraphSnapshot::shift",
                format!("{} rows", self.n_agents),
                format!("{}", signal.rows()),
            ));
        }
        let cols = signal.cols();
        let mut out = Mat::zeros(self.n_agents, cols);
        for i in 0..self.n_agents {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let row_out = out.row_mut(i);
            for idx in lo..hi {
                let j = self.col_idx[idx] as usize;
                let w = self.weights[idx];
                let row_in = signal.row(j);
                for (o, &v) in row_out.iter_mut().zip(row_in) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// Shift by the transposed operator: `out[j] += s_ij * signal[i]`.
    /// This is the adjoint of `shift`, used when backpropagating through
    /// chained shift products.
    pub fn shift_transpose(&self, signal: &Mat) -> Result<Mat> {
        if signal.rows() != self.n_agents {
            return Err(Error::dims(
                "GraphSnapshot::shift_transpose",
                format!("{} rows", self.n_agents),
                format!("{}", signal.rows()),
            ));
        }
        let cols = signal.cols();
        let mut out = Mat::zeros(self.n_agents, cols);
        for i in 0..self.n_agents {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let row_in = signal.row(i).to_vec();
            for idx in lo..hi {
                let j = self.col_idx[idx] as usize;
                let w = self.weights[idx];
                let row_out = out.row_mut(j);
                for (o, &v) in row_out.iter_mut().zip(&row_in) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

/// Graphs for consecutive time steps, constant agent count.
#[derive(Debug, Clone)]
pub struct GraphSequence {
    snapshots: Vec<GraphSnapshot>,
}

impl GraphSequence {
    pub fn new(snapshots: Vec<GraphSnapshot>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty graph sequence".into()))?;
        let n = first.n_agents;
        if snapshots.iter().any(|s| s.n_agents != n) {
            return Err(Error::InvalidArgument(
                "graph sequence must keep a constant agent count".into(),
            ));
        }
        Ok(GraphSequence { snapshots })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.snapshots[0].n_agents
    }

    pub fn get(&self, t: usize) -> &GraphSnapshot {
        &self.snapshots[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GraphSnapshot> {
        self.snapshots.iter()
    }
}

/// Delayed aggregates of a node-signal sequence.
///
/// Tap 0 is the current signal; tap k holds the k-times-shifted signal from
/// k steps ago:
///
/// ```text
/// Y0(t) = X(t)
/// Yk(t) = S(t) * Y{k-1}(t-1)        (zero before the first step)
/// ```
///
/// so that unrolled, `Yk(t) = S(t) S(t-1) ... S(t-k+1) X(t-k)`. Advancing
/// the buffer applies exactly one shift per tap: one communication round
/// per sampling interval.
#[derive(Debug, Clone)]
pub struct AggregationBuffer {
    taps: Vec<Mat>,
}

impl AggregationBuffer {
    /// All-zero history for `n_taps` taps over an `n_agents x width` signal.
    pub fn zeroed(n_taps: usize, n_agents: usize, width: usize) -> Self {
        AggregationBuffer {
            taps: (0..n_taps).map(|_| Mat::zeros(n_agents, width)).collect(),
        }
    }

    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    pub fn tap(&self, k: usize) -> &Mat {
        &self.taps[k]
    }

    pub fn taps(&self) -> &[Mat] {
        &self.taps
    }

    /// Buffer at time t from the buffer at t-1, the graph S(t) and the new
    /// signal X(t).
    pub fn advanced(&self, graph: &GraphSnapshot, new_signal: &Mat) -> Result<Self> {
        let first = self
            .taps
            .first()
            .ok_or_else(|| Error::InvalidArgument("buffer has no taps".into()))?;
        let (n, w) = first.shape();
        if new_signal.shape() != (n, w) {
            return Err(Error::dims(
                "AggregationBuffer::advanced signal",
                format!("{:?}", (n, w)),
                format!("{:?}", new_signal.shape()),
            ));
        }
        if graph.n_agents() != n {
            return Err(Error::dims(
                "AggregationBuffer::advanced graph",
                format!("{n} agents"),
                format!("{}", graph.n_agents()),
            ));
        }
        let mut taps = Vec::with_capacity(self.taps.len());
        taps.push(new_signal.clone());
        for k in 1..self.taps.len() {
            taps.push(graph.shift(&self.taps[k - 1])?);
        }
        Ok(AggregationBuffer { taps })
    }
}

/// The `(agent, time)` pairs whose state can influence agent `i` at time `t`
/// through at most `n_taps - 1` delayed hops.
///
/// Follows the recursion `N_i^k(t) = { j' in N_j^{k-1}(t-1) : j in N_i(t) }`
/// with `N_i^0(t) = {i}`; pairs that would index before the start of the
/// sequence are dropped because pre-history is zero-padded. Test-support
/// only: the production path never materializes these sets.
pub fn delayed_k_hop_cone(
    seq: &GraphSequence,
    agent: usize,
    t: usize,
    n_taps: usize,
) -> Result<BTreeSet<(usize, usize)>> {
    if t >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "time {t} out of range for sequence of length {}",
            seq.len()
        )));
    }
    if agent >= seq.n_agents() {
        return Err(Error::InvalidArgument(format!(
            "agent {agent} out of range for {} agents",
            seq.n_agents()
        )));
    }
    let mut cone = BTreeSet::new();
    // frontier at hop k lives at time t - k
    let mut frontier: BTreeSet<usize> = BTreeSet::from([agent]);
    cone.insert((agent, t));
    for k in 1..n_taps {
        if k > t {
            break;
        }
        let mut next = BTreeSet::new();
        for &node in &frontier {
            // N^k steps through N(t-k+1): one more hop, one more step back.
            for (j, _) in seq.get(t - k + 1).neighbors(node) {
                next.insert(j);
            }
        }
        for &node in &next {
            cone.insert((node, t - k));
        }
        frontier = next;
    }
    Ok(cone)
}
