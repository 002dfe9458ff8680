//! Dynamic undirected communication graphs, relevant-subgraph extraction,
//! Metropolis consensus weights, and a message ledger that accounts every bit
//! sent over the network.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::models::TargetId;

/// Sensor (network node) identifier.
pub type SensorId = u32;

/// Default width of one transmitted scalar in bits.
pub const DEFAULT_BITS_PER_SCALAR: u64 = 64;

/// What an estimator does when the relevant subgraph is disconnected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectivityPolicy {
    /// Fail the step (benchmark mode).
    Error,
    /// Run the step independently within each connected component
    /// (scenario mode); surfaced through the step diagnostics.
    Components,
}

/// Snapshot of the undirected communication graph at one timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    t: usize,
    adj: BTreeMap<SensorId, BTreeSet<SensorId>>,
}

impl CommGraph {
    /// Builds a graph from explicit vertices and undirected edges. Self-loops
    /// and edges touching unknown vertices are rejected.
    pub fn new(
        t: usize,
        vertices: impl IntoIterator<Item = SensorId>,
        edges: impl IntoIterator<Item = (SensorId, SensorId)>,
    ) -> Result<Self> {
        let mut adj: BTreeMap<SensorId, BTreeSet<SensorId>> =
            vertices.into_iter().map(|v| (v, BTreeSet::new())).collect();
        let vertex_set: BTreeSet<SensorId> = adj.keys().copied().collect();
        for (i, j) in edges {
            if i == j {
                return Err(Error::UnknownEdge(i, j));
            }
            if !vertex_set.contains(&i) {
                return Err(Error::UnknownVertex(i));
            }
            if !vertex_set.contains(&j) {
                return Err(Error::UnknownVertex(j));
            }
            adj.get_mut(&i).unwrap().insert(j);
            adj.get_mut(&j).unwrap().insert(i);
        }
        Ok(Self { t, adj })
    }

    /// Disk graph: an edge joins every pair of nodes at Euclidean distance
    /// at most `radius`.
    pub fn disk_graph(t: usize, positions: &BTreeMap<SensorId, [f64; 2]>, radius: f64) -> Self {
        let ids: Vec<SensorId> = positions.keys().copied().collect();
        let mut adj: BTreeMap<SensorId, BTreeSet<SensorId>> =
            ids.iter().map(|&v| (v, BTreeSet::new())).collect();
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let pi = positions[&i];
                let pj = positions[&j];
                let d = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2)).sqrt();
                if d <= radius {
                    adj.get_mut(&i).unwrap().insert(j);
                    adj.get_mut(&j).unwrap().insert(i);
                }
            }
        }
        Self { t, adj }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn vertices(&self) -> impl Iterator<Item = SensorId> + '_ {
        self.adj.keys().copied()
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn contains(&self, v: SensorId) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn neighbors(&self, v: SensorId) -> Result<&BTreeSet<SensorId>> {
        self.adj.get(&v).ok_or(Error::UnknownVertex(v))
    }

    pub fn degree(&self, v: SensorId) -> Result<usize> {
        Ok(self.neighbors(v)?.len())
    }

    pub fn has_edge(&self, i: SensorId, j: SensorId) -> bool {
        self.adj.get(&i).is_some_and(|n| n.contains(&j))
    }

    /// Undirected edges as ordered pairs (i < j).
    pub fn edges(&self) -> impl Iterator<Item = (SensorId, SensorId)> + '_ {
        self.adj
            .iter()
            .flat_map(|(&i, nbrs)| nbrs.iter().filter(move |&&j| i < j).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// True iff every vertex pair is joined by some path. Empty and
    /// single-vertex graphs count as connected.
    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.adj.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &self.adj[&v] {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen.len() == self.adj.len()
    }

    /// Induced subgraph over the sensors relevant to a target: the observer
    /// set intersected with the vertices, keeping only edges with both
    /// endpoints inside.
    pub fn relevant_subgraph(&self, target_id: TargetId, observers: &BTreeSet<SensorId>) -> RelevantSubgraph {
        let members: BTreeSet<SensorId> = observers
            .iter()
            .copied()
            .filter(|v| self.adj.contains_key(v))
            .collect();
        let adj = members
            .iter()
            .map(|&v| {
                let nbrs = self.adj[&v].intersection(&members).copied().collect();
                (v, nbrs)
            })
            .collect();
        RelevantSubgraph {
            target_id,
            graph: CommGraph { t: self.t, adj },
        }
    }

    /// Connected components, each as its own graph, in ascending order of
    /// smallest member id.
    pub fn components(&self) -> Vec<CommGraph> {
        let mut remaining: BTreeSet<SensorId> = self.adj.keys().copied().collect();
        let mut out = Vec::new();
        while let Some(&start) = remaining.iter().next() {
            let mut comp = BTreeSet::from([start]);
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adj[&v] {
                    if comp.insert(w) {
                        queue.push_back(w);
                    }
                }
            }
            for v in &comp {
                remaining.remove(v);
            }
            let adj = comp
                .iter()
                .map(|&v| (v, self.adj[&v].intersection(&comp).copied().collect()))
                .collect();
            out.push(CommGraph { t: self.t, adj });
        }
        out
    }
}

/// The sensors relevant to one target plus the communication edges among them.
#[derive(Debug, Clone)]
pub struct RelevantSubgraph {
    pub target_id: TargetId,
    pub graph: CommGraph,
}

/// Metropolis consensus weights for one graph snapshot: edge weights
/// `w_ij = 1 / (1 + max(deg_i, deg_j))` and self-weights completing each row
/// to one.
#[derive(Debug, Clone)]
pub struct MetropolisWeights {
    edge: BTreeMap<(SensorId, SensorId), f64>,
    selfw: BTreeMap<SensorId, f64>,
}

impl MetropolisWeights {
    pub fn edge_weight(&self, i: SensorId, j: SensorId) -> Option<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edge.get(&key).copied()
    }

    pub fn self_weight(&self, i: SensorId) -> Option<f64> {
        self.selfw.get(&i).copied()
    }

    pub fn node_count(&self) -> usize {
        self.selfw.len()
    }

    /// Dense weight matrix in ascending vertex-id order (for analysis).
    pub fn matrix(&self) -> DMatrix<f64> {
        let ids: Vec<SensorId> = self.selfw.keys().copied().collect();
        let n = ids.len();
        let index: BTreeMap<SensorId, usize> = ids.iter().copied().zip(0..).collect();
        let mut w = DMatrix::zeros(n, n);
        for (&(i, j), &wij) in &self.edge {
            w[(index[&i], index[&j])] = wij;
            w[(index[&j], index[&i])] = wij;
        }
        for (&i, &wii) in &self.selfw {
            w[(index[&i], index[&i])] = wii;
        }
        w
    }
}

/// Computes Metropolis weights for `g`.
pub fn metropolis_weights(g: &CommGraph) -> MetropolisWeights {
    let mut edge = BTreeMap::new();
    for (i, j) in g.edges() {
        let deg = g.degree(i).unwrap().max(g.degree(j).unwrap());
        edge.insert((i, j), 1.0 / (1.0 + deg as f64));
    }
    let mut selfw = BTreeMap::new();
    for v in g.vertices() {
        let total: f64 = g
            .neighbors(v)
            .unwrap()
            .iter()
            .map(|&u| {
                let key = if v < u { (v, u) } else { (u, v) };
                edge[&key]
            })
            .sum();
        selfw.insert(v, 1.0 - total);
    }
    MetropolisWeights { edge, selfw }
}

/// What a message carries; determines its accounted payload size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    /// A window-estimate vector exchanged during ADMM rounds.
    DrwtIterate,
    /// A measurement-information block exchanged during consensus rounds.
    CkfInformation,
    /// A local information matrix transferred during hand-off.
    HandoffInfo,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::DrwtIterate => "drwt_iterate",
            MessageKind::CkfInformation => "ckf_information",
            MessageKind::HandoffInfo => "handoff_info",
        }
    }
}

/// One directed message: `from -> to` in a given round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub round: u64,
    pub from: SensorId,
    pub to: SensorId,
    pub kind: MessageKind,
    pub scalars: u64,
    pub bits: u64,
}

/// Append-only record of every message sent, with per-node running totals.
#[derive(Debug, Clone)]
pub struct CommLedger {
    bits_per_scalar: u64,
    entries: Vec<LedgerEntry>,
    sent_bits: BTreeMap<SensorId, u64>,
}

impl CommLedger {
    pub fn new(bits_per_scalar: u64) -> Self {
        Self {
            bits_per_scalar,
            entries: Vec::new(),
            sent_bits: BTreeMap::new(),
        }
    }

    pub fn bits_per_scalar(&self) -> u64 {
        self.bits_per_scalar
    }

    /// Records one directed message over an existing edge of `g`.
    pub fn record(
        &mut self,
        g: &CommGraph,
        round: u64,
        from: SensorId,
        to: SensorId,
        kind: MessageKind,
        scalars: u64,
    ) -> Result<()> {
        if !g.has_edge(from, to) {
            return Err(Error::UnknownEdge(from, to));
        }
        let bits = scalars * self.bits_per_scalar;
        self.entries.push(LedgerEntry {
            round,
            from,
            to,
            kind,
            scalars,
            bits,
        });
        *self.sent_bits.entry(from).or_insert(0) += bits;
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total_bits(&self) -> u64 {
        self.entries.iter().map(|e| e.bits).sum()
    }

    /// Bits sent, per sending node.
    pub fn bits_per_node(&self) -> BTreeMap<SensorId, u64> {
        self.sent_bits.clone()
    }

    /// Network total divided by the number of participating nodes; the
    /// communication-per-node axis of the convergence benchmark.
    pub fn mean_bits_per_node(&self, n_nodes: usize) -> f64 {
        if n_nodes == 0 {
            0.0
        } else {
            self.total_bits() as f64 / n_nodes as f64
        }
    }

    /// Writes all entries as CSV with a fixed column order.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "round,edge_i,edge_j,kind,scalars,bits")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.round,
                e.from,
                e.to,
                e.kind.as_str(),
                e.scalars,
                e.bits
            )?;
        }
        Ok(())
    }
}
