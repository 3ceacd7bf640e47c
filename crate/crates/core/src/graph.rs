//! Undirected graphs, their Laplacians, and piecewise-constant switching
//! schedules.
//!
//! Node indices are 0-based in the API. The text formats are 1-based.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;

/// λ₂ above this value counts as connected in the eigenvalue cross-check.
pub const CONNECTIVITY_EPS: f64 = 1e-9;

/// An undirected simple graph on `n` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    /// Normalized so that `i < j`, sorted, no duplicates.
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Builds a topology from 0-based edges. Duplicate edges (in either
    /// orientation) and self-loops are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({}, {}) has an endpoint outside 1..={n}",
                    i + 1,
                    j + 1
                )));
            }
            if i == j {
                return Err(Error::InvalidTopology(format!(
                    "self-loop at node {}",
                    i + 1
                )));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidTopology(format!(
                    "duplicate edge ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
        })
    }

    /// Same as [`Topology::new`] with 1-based endpoints.
    pub fn from_one_based(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut shifted = Vec::new();
        for (i, j) in edges {
            if i == 0 || j == 0 {
                return Err(Error::InvalidTopology(
                    "node indices are 1-based; found 0".into(),
                ));
            }
            shifted.push((i - 1, j - 1));
        }
        Self::new(n, shifted)
    }

    pub fn edgeless(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
        }
    }

    pub fn path(n: usize) -> Self {
        Self {
            n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }

    pub fn ring(n: usize) -> Self {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((0, n - 1));
        }
        Self::new(n, edges).expect("ring edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        Self {
            n,
            edges: (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect(),
        }
    }

    /// The three 4-node spanning paths used by the switching example:
    /// {(1,2),(1,4),(2,3)}, {(1,4),(2,3),(3,4)}, {(1,2),(1,4),(3,4)}.
    pub fn switching_trio() -> [Topology; 3] {
        let g = |e: [(usize, usize); 3]| Topology::from_one_based(4, e).expect("valid edges");
        [
            g([(1, 2), (1, 4), (2, 3)]),
            g([(1, 4), (2, 3), (3, 4)]),
            g([(1, 2), (1, 4), (3, 4)]),
        ]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == i || b == i)
            .count()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    /// Parses the edge-list format: a header `n <count>` followed by one
    /// 1-based edge `i j` per line. `#` starts a comment.
    pub fn parse_edge_list(text: &str, source_name: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut n = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens[0] == "n" {
                if tokens.len() != 2 {
                    return Err(perr(line_no, "expected `n <count>`".into()));
                }
                n = Some(
                    tokens[1]
                        .parse::<usize>()
                        .map_err(|e| perr(line_no, format!("bad node count: {e}")))?,
                );
                continue;
            }
            if n.is_none() {
                return Err(perr(line_no, "edge before the `n <count>` header".into()));
            }
            if tokens.len() != 2 {
                return Err(perr(line_no, "expected `i j`".into()));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| perr(line_no, format!("bad node index `{s}`: {e}")))
            };
            edges.push((parse(tokens[0])?, parse(tokens[1])?));
        }
        let n = n.ok_or_else(|| perr(0, "missing `n <count>` header".into()))?;
        Self::from_one_based(n, edges)
    }

    /// Inverse of [`Topology::parse_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for &(i, j) in &self.edges {
            out.push_str(&format!("{} {}\n", i + 1, j + 1));
        }
        out
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} edges=[", self.n)?;
        for (k, (i, j)) in self.edges.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({}, {})", i + 1, j + 1)?;
        }
        write!(f, "]")
    }
}

/// Graph Laplacian with its algebraic connectivity cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
    lambda2: f64,
}

/// Builds `L = D - A` for an unweighted undirected graph.
pub fn build_laplacian(topology: &Topology) -> Result<Laplacian> {
    let n = topology.n();
    if n < 2 {
        return Err(Error::InvalidTopology(format!(
            "a Laplacian needs at least 2 nodes, got {n}"
        )));
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in topology.edges() {
        m[(i, j)] = -1.0;
        m[(j, i)] = -1.0;
        m[(i, i)] += 1.0;
        m[(j, j)] += 1.0;
    }
    let lambda2 = second_smallest(&m);
    Ok(Laplacian { matrix: m, lambda2 })
}

fn second_smallest(m: &DMatrix<f64>) -> f64 {
    let eig = symmetric_eigenvalues(m);
    // Round-off can push the zero eigenvalue slightly negative, and a
    // disconnected graph must report exactly 0.
    let l2 = eig.get(1).copied().unwrap_or(0.0);
    if l2 <= CONNECTIVITY_EPS {
        0.0
    } else {
        l2
    }
}

/// Second-smallest Laplacian eigenvalue; 0 for disconnected graphs.
pub fn algebraic_connectivity(l: &Laplacian) -> f64 {
    l.lambda2
}

impl Laplacian {
    /// The zero Laplacian of the empty graph on `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
            lambda2: 0.0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn is_connected(&self) -> bool {
        self.lambda2 > CONNECTIVITY_EPS
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    /// `L ⊗ I_dim`, the Laplacian acting on stacked `dim`-dimensional
    /// agent coordinates. λ₂ is unchanged (with multiplicity `dim`).
    pub fn kron_identity(&self, dim: usize) -> Laplacian {
        let n = self.n();
        let mut m = DMatrix::zeros(n * dim, n * dim);
        for i in 0..n {
            for j in 0..n {
                for a in 0..dim {
                    m[(i * dim + a, j * dim + a)] = self.matrix[(i, j)];
                }
            }
        }
        Laplacian {
            matrix: m,
            lambda2: self.lambda2,
        }
    }

    /// Row sums, exactly zero for a constructed Laplacian.
    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }
}

/// Which graph is active on one interval of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Active {
    /// 0-based index into the schedule's topology list.
    Graph(usize),
    /// Explicitly flagged interval with no edges.
    Holiday,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub active: Active,
}

/// Piecewise-constant switching among a finite set of connected graphs.
/// Interval `k` covers `[start_k, start_{k+1})`; the last one is open-ended.
#[derive(Debug, Clone)]
pub struct SwitchingSchedule {
    topologies: Vec<Topology>,
    laplacians: Vec<Laplacian>,
    holiday: Laplacian,
    intervals: Vec<Interval>,
    min_dwell: f64,
}

impl SwitchingSchedule {
    pub fn new(
        topologies: Vec<Topology>,
        intervals: Vec<Interval>,
        min_dwell: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidSchedule(m));
        if topologies.is_empty() {
            return bad("no topologies".into());
        }
        if intervals.is_empty() {
            return bad("no intervals".into());
        }
        if !(min_dwell > 0.0 && min_dwell.is_finite()) {
            return bad(format!("minimum dwell must be positive, got {min_dwell}"));
        }
        let n = topologies[0].n();
        let mut laplacians = Vec::with_capacity(topologies.len());
        for (k, g) in topologies.iter().enumerate() {
            if g.n() != n {
                return bad(format!(
                    "topology {} has {} nodes, expected {n}",
                    k + 1,
                    g.n()
                ));
            }
            if !g.is_connected() {
                return bad(format!(
                    "topology {} is not connected; use a holiday interval for an empty graph",
                    k + 1
                ));
            }
            laplacians.push(build_laplacian(g)?);
        }
        for w in intervals.windows(2) {
            if !(w[1].start - w[0].start > min_dwell) {
                return bad(format!(
                    "switch times {} and {} are not separated by more than the dwell {min_dwell}",
                    w[0].start, w[1].start
                ));
            }
        }
        for iv in &intervals {
            if !iv.start.is_finite() {
                return bad("non-finite switch time".into());
            }
            if let Active::Graph(k) = iv.active {
                if k >= topologies.len() {
                    return bad(format!(
                        "interval at t={} references topology {} of {}",
                        iv.start,
                        k + 1,
                        topologies.len()
                    ));
                }
            }
        }
        Ok(Self {
            topologies,
            laplacians,
            holiday: Laplacian::empty(n),
            intervals,
            min_dwell,
        })
    }

    /// Cycles through `topologies` in order, switching every `period` from
    /// `t0` until `t_end`.
    pub fn periodic(topologies: Vec<Topology>, period: f64, t0: f64, t_end: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "period must be positive, got {period}"
            )));
        }
        let count = topologies.len();
        let mut intervals = Vec::new();
        let mut k = 0usize;
        loop {
            let start = t0 + period * k as f64;
            if k > 0 && start >= t_end {
                break;
            }
            intervals.push(Interval {
                start,
                active: Active::Graph(k % count),
            });
            k += 1;
        }
        Self::new(topologies, intervals, 0.5 * period)
    }

    pub fn n(&self) -> usize {
        self.holiday.n()
    }

    pub fn topologies(&self) -> &[Topology] {
        &self.topologies
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn min_dwell(&self) -> f64 {
        self.min_dwell
    }

    pub fn switch_times(&self) -> Vec<f64> {
        self.intervals.iter().map(|iv| iv.start).collect()
    }

    /// Minimum λ₂ over the schedule's graphs. Holiday intervals do not count.
    pub fn min_lambda2(&self) -> Result<f64> {
        let used: BTreeSet<usize> = self
            .intervals
            .iter()
            .filter_map(|iv| match iv.active {
                Active::Graph(k) => Some(k),
                Active::Holiday => None,
            })
            .collect();
        if used.is_empty() {
            return Err(Error::InvalidSchedule("every interval is a holiday".into()));
        }
        Ok(self
            .laplacians
            .iter()
            .map(Laplacian::lambda2)
            .fold(f64::INFINITY, f64::min))
    }

    pub fn has_holiday(&self) -> bool {
        self.intervals.iter().any(|iv| iv.active == Active::Holiday)
    }

    /// Index of the interval containing `t` (closed-left, open-right).
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        if t < self.intervals[0].start {
            return Err(Error::TimeOutOfRange {
                t,
                reason: format!("precedes the first switch time {}", self.intervals[0].start),
            });
        }
        Ok(self.intervals.partition_point(|iv| iv.start <= t) - 1)
    }

    pub fn active_at(&self, t: f64) -> Result<Active> {
        Ok(self.intervals[self.interval_index(t)?].active)
    }

    /// Laplacian of the graph active at `t`.
    pub fn active_laplacian(&self, t: f64) -> Result<&Laplacian> {
        Ok(match self.active_at(t)? {
            Active::Graph(k) => &self.laplacians[k],
            Active::Holiday => &self.holiday,
        })
    }

    /// Parses the schedule format: `dwell <tau>` plus lines `t_k <index>`
    /// where the index is 1-based or the word `holiday`.
    pub fn parse_intervals(text: &str, source_name: &str) -> Result<(f64, Vec<Interval>)> {
        let perr = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut dwell = None;
        let mut intervals = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 2 {
                return Err(perr(line_no, "expected two fields".into()));
            }
            if tokens[0] == "dwell" {
                dwell = Some(
                    tokens[1]
                        .parse::<f64>()
                        .map_err(|e| perr(line_no, format!("bad dwell: {e}")))?,
                );
                continue;
            }
            let start = tokens[0]
                .parse::<f64>()
                .map_err(|e| perr(line_no, format!("bad switch time: {e}")))?;
            let active = if tokens[1] == "holiday" {
                Active::Holiday
            } else {
                let k = tokens[1]
                    .parse::<usize>()
                    .map_err(|e| perr(line_no, format!("bad topology index: {e}")))?;
                if k == 0 {
                    return Err(perr(line_no, "topology indices are 1-based".into()));
                }
                Active::Graph(k - 1)
            };
            intervals.push(Interval { start, active });
        }
        let dwell = dwell.ok_or_else(|| perr(0, "missing `dwell <tau>` line".into()))?;
        Ok((dwell, intervals))
    }
}

/// The communication structure seen by a simulation: one fixed graph or a
/// switching schedule.
#[derive(Debug, Clone)]
pub enum Network {
    Fixed(Laplacian),
    Switching(SwitchingSchedule),
}

impl Network {
    pub fn n(&self) -> usize {
        match self {
            Network::Fixed(l) => l.n(),
            Network::Switching(s) => s.n(),
        }
    }

    pub fn laplacian_at(&self, t: f64) -> Result<&Laplacian> {
        match self {
            Network::Fixed(l) => Ok(l),
            Network::Switching(s) => s.active_laplacian(t),
        }
    }

    /// λ₂ for a fixed graph, λ̄₂ for a schedule.
    pub fn lambda2(&self) -> Result<f64> {
        match self {
            Network::Fixed(l) => Ok(l.lambda2()),
            Network::Switching(s) => s.min_lambda2(),
        }
    }

    /// Times in `(from, to)` at which the active graph changes.
    pub fn switch_times_between(&self, from: f64, to: f64) -> Vec<f64> {
        match self {
            Network::Fixed(_) => Vec::new(),
            Network::Switching(s) => s
                .switch_times()
                .into_iter()
                .filter(|&t| t > from && t < to)
                .collect(),
        }
    }

    pub fn has_holiday(&self) -> bool {
        matches!(self, Network::Switching(s) if s.has_holiday())
    }
}
