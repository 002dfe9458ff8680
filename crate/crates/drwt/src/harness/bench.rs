//! Static-network benchmark problems: a fixed random communication graph in
//! which every sensor observes the target at every step. This is the setting
//! for the convergence-per-bit sweep and the Monte Carlo estimator
//! comparison.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::central::{JointMeasurement, WindowGaussian};
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{self, LinearDynamics, Measurement, SensorModel, TargetState};
use crate::netgraph::{CommGraph, SensorId};

/// Sub-seed derivation so independent random streams never overlap.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 on the combined word.
    let mut z = master
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(0x94d049bb133111eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_nodes: usize,
    pub n_edges: usize,
    /// Window length in transitions (T).
    pub window_steps: usize,
    pub dt: f64,
    pub q_accel: f64,
    pub r_std: f64,
    pub prior_pos_std: f64,
    pub prior_vel_std: f64,
    pub rho: f64,
    pub bits_per_scalar: u64,
}

impl BenchConfig {
    /// Desk-scale benchmark: small enough that full sweeps run in seconds.
    pub fn desk_scale() -> Self {
        Self {
            n_nodes: 20,
            n_edges: 80,
            window_steps: 1,
            dt: 1.0,
            q_accel: 2.0,
            r_std: 0.7,
            prior_pos_std: 1.5,
            prior_vel_std: 1.0,
            rho: 1.0,
            bits_per_scalar: 64,
        }
    }

    /// The 100-node, 400-edge configuration.
    pub fn paper_scale() -> Self {
        Self {
            n_nodes: 100,
            n_edges: 400,
            ..Self::desk_scale()
        }
    }

    pub fn state_dim(&self) -> usize {
        4
    }
}

/// Connected random graph with exactly `n_edges` edges: a random spanning
/// tree plus distinct random extra edges.
pub fn random_graph_exact_edges(seed: u64, n_nodes: usize, n_edges: usize) -> Result<CommGraph> {
    if n_nodes == 0 {
        return Err(Error::Config("graph needs at least one node".into()));
    }
    let min_edges = n_nodes.saturating_sub(1);
    let max_edges = n_nodes * n_nodes.saturating_sub(1) / 2;
    if n_edges < min_edges || n_edges > max_edges {
        return Err(Error::Config(format!(
            "cannot build a connected graph on {n_nodes} nodes with {n_edges} edges"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut edges: BTreeSet<(SensorId, SensorId)> = BTreeSet::new();
    for v in 1..n_nodes as SensorId {
        let parent = rng.random_range(0..v);
        edges.insert((parent, v));
    }
    while edges.len() < n_edges {
        let i = rng.random_range(0..n_nodes as SensorId);
        let j = rng.random_range(0..n_nodes as SensorId);
        if i != j {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    CommGraph::new(0, 0..n_nodes as SensorId, edges)
}

/// A fixed benchmark problem instance: graph, sensor models, dynamics, and
/// the shared initial prior.
pub struct StaticProblem {
    pub cfg: BenchConfig,
    pub graph: CommGraph,
    pub dynamics: LinearDynamics,
    pub sensors: Vec<SensorModel>,
    pub prior: WindowGaussian,
}

impl StaticProblem {
    pub fn generate(cfg: &BenchConfig, seed: u64) -> Result<Self> {
        let graph = random_graph_exact_edges(derive_seed(seed, 0), cfg.n_nodes, cfg.n_edges)?;
        let dynamics = models::double_integrator(cfg.dt, cfg.q_accel)?;
        let sensors = (0..cfg.n_nodes as SensorId)
            .map(|id| models::position_sensor(id, cfg.r_std))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 1));
        let prior_mean = DVector::from_fn(4, |i, _| {
            if i < 2 {
                rng.random_range(-5.0..5.0)
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let mut prior_cov = DMatrix::zeros(4, 4);
        prior_cov[(0, 0)] = cfg.prior_pos_std * cfg.prior_pos_std;
        prior_cov[(1, 1)] = cfg.prior_pos_std * cfg.prior_pos_std;
        prior_cov[(2, 2)] = cfg.prior_vel_std * cfg.prior_vel_std;
        prior_cov[(3, 3)] = cfg.prior_vel_std * cfg.prior_vel_std;
        let prior = WindowGaussian::single(0, prior_mean, prior_cov)?;
        Ok(Self {
            cfg: cfg.clone(),
            graph,
            dynamics,
            sensors,
            prior,
        })
    }

    pub fn members(&self) -> BTreeSet<SensorId> {
        self.graph.vertices().collect()
    }

    /// One noise realization: truth drawn from the prior and propagated,
    /// every sensor observing at every step `1..=n_steps`.
    pub fn episode(&self, run_seed: u64, n_steps: usize) -> Result<BenchEpisode> {
        let mut rng = ChaCha12Rng::seed_from_u64(run_seed);
        let x0 = linalg::sample_gaussian(self.prior.mean(), self.prior.cov(), &mut rng)?;
        let mut truth = TargetState::new(x0, 0);
        let mut truths = vec![truth.clone()];
        let mut measurements = Vec::new();
        for _ in 1..=n_steps {
            truth = models::propagate(&truth, &self.dynamics, &mut rng)?;
            let per_sensor = self
                .sensors
                .iter()
                .map(|s| models::observe(&truth, s, 0, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            truths.push(truth.clone());
            measurements.push(per_sensor);
        }
        Ok(BenchEpisode {
            truths,
            measurements,
        })
    }

    /// Stacked joint measurement for step `t` (1-based) of an episode.
    pub fn joint_at(&self, episode: &BenchEpisode, t: usize) -> Result<JointMeasurement> {
        let parts: Vec<(&SensorModel, &Measurement)> = self
            .sensors
            .iter()
            .zip(&episode.measurements[t - 1])
            .map(|(s, m)| (s, m))
            .collect();
        JointMeasurement::stack(4, t, &parts)
    }

    /// Per-sensor observation map for step `t` (1-based).
    pub fn observations_at<'a>(
        &'a self,
        episode: &'a BenchEpisode,
        t: usize,
    ) -> BTreeMap<SensorId, (&'a SensorModel, &'a Measurement)> {
        self.sensors
            .iter()
            .zip(&episode.measurements[t - 1])
            .map(|(s, m)| (s.sensor_id, (s, m)))
            .collect()
    }
}

/// One Monte Carlo run's ground truth and measurements.
pub struct BenchEpisode {
    /// Truth states for `t = 0..=n_steps`.
    pub truths: Vec<TargetState>,
    /// `measurements[t-1][sensor]` for `t = 1..=n_steps`.
    pub measurements: Vec<Vec<Measurement>>,
}
