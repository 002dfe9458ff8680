//! Distributed rolling-window tracker.
//!
//! Each relevant sensor holds a local quadratic cost built from its own
//! measurement, a share of the network prior, and the dynamics term weighted
//! by `1/|V'|`. The network minimizes the sum of these costs subject to
//! neighbor-agreement constraints by alternating a dual gradient-ascent step
//!
//! ```text
//! p_i <- p_i + rho * sum_j (x_i - x_j)
//! ```
//!
//! with the closed-form primal step
//!
//! ```text
//! (H_i' W_i^-1 H_i + 2 rho |N_i| I) x_i = H_i' W_i^-1 z_i - p_i + rho * sum_j (x_i + x_j),
//! ```
//!
//! run in Jacobi order from the previous round's neighbor iterates. The primal
//! system matrix is fixed within a timestep and factored once, either densely
//! or through the block-tridiagonal Cholesky in [`tridiag`], whose per-update
//! cost is linear in the window length.
//!
//! Priors are carried in information form so that a sensor joining mid-track
//! can start from exactly zero information, keeping the network-wide
//! information sum intact, and so that a departing sensor can hand its local
//! information matrix to one staying neighbor.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::central::WindowGaussian;
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{LinearDynamics, Measurement, SensorModel};
use crate::netgraph::{CommGraph, CommLedger, ConnectivityPolicy, MessageKind, SensorId};

pub mod tridiag;

/// Regularizer added to a singular local normal matrix so that the initial
/// local solve of a zero-information joiner is well posed.
pub const JOINER_EPS: f64 = 1e-9;

/// Which implementation the primal update uses. Both solve the same system;
/// the fast path exploits the block-tridiagonal window structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimalUpdate {
    Dense,
    Fast,
}

/// When a timestep's ADMM loop stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Exactly `max_iters` rounds (the benchmark mode; bit budgets sweep it).
    FixedIters,
    /// Stop once the globally measured max primal residual drops below
    /// `residual_tol`, capped at `max_iters`. The residual is a harness-side
    /// measurement, not a distributed protocol.
    ResidualTol,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrwtConfig {
    pub rho: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub primal_update: PrimalUpdate,
    pub stop: StopRule,
    pub connectivity: ConnectivityPolicy,
}

impl Default for DrwtConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 100,
            residual_tol: 1e-6,
            primal_update: PrimalUpdate::Fast,
            stop: StopRule::FixedIters,
            connectivity: ConnectivityPolicy::Error,
        }
    }
}

impl DrwtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho <= 0.0 {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// A window prior in information form: `info` may be singular (zero for a
/// fresh joiner) but must be PSD.
#[derive(Debug, Clone)]
pub struct AgentPrior {
    pub mean: DVector<f64>,
    pub info: DMatrix<f64>,
}

impl AgentPrior {
    pub fn zero(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            info: DMatrix::zeros(dim, dim),
        }
    }

    /// Converts a covariance-form prior.
    pub fn from_gaussian(g: &WindowGaussian) -> Result<Self> {
        Ok(Self {
            mean: g.mean().clone(),
            info: linalg::spd_inverse(g.cov(), "agent prior covariance")?,
        })
    }
}

/// Splits a centralized prior among `members`: every member keeps the central
/// mean and receives `1/|members|` of the central prior information, returned
/// in covariance form (`|members| * cov`).
pub fn split_prior(
    central_prior: &WindowGaussian,
    members: &BTreeSet<SensorId>,
) -> Result<BTreeMap<SensorId, WindowGaussian>> {
    if members.is_empty() {
        return Err(Error::EmptyMembership);
    }
    let scale = members.len() as f64;
    members
        .iter()
        .map(|&i| {
            let g = WindowGaussian::new(
                central_prior.first(),
                central_prior.last(),
                central_prior.state_dim(),
                central_prior.mean().clone(),
                central_prior.cov() * scale,
            )?;
            Ok((i, g))
        })
        .collect()
}

/// One sensor's state while estimating one target over the current window.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub sensor_id: SensorId,
    state_dim: usize,
    window_len: usize,
    first: usize,
    last: usize,
    dual: DVector<f64>,
    iterate: DVector<f64>,
    local_info: DMatrix<f64>,
    local_rhs: DVector<f64>,
    n_neighbors: usize,
    rho: f64,
    dense_factor: Cholesky<f64, Dyn>,
    /// Absent when the local Hessian has off-band content (a prior whose
    /// information is not block tridiagonal), in which case only the dense
    /// path is usable.
    fast_factor: Option<tridiag::BlockTridiagChol>,
    factors_valid: bool,
}

impl AgentState {
    /// Builds the agent for one timestep: assembles the local normal
    /// equations, solves the local MAP problem for the initial iterate, zeroes
    /// the dual, and factors the primal system matrix once.
    ///
    /// `prior` spans `[first, t-1]`; the new window spans `[first, t]`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        sensor_id: SensorId,
        prior: &AgentPrior,
        first: usize,
        t: usize,
        dynamics: &LinearDynamics,
        n_members: usize,
        observation: Option<(&SensorModel, &Measurement)>,
        rho: f64,
        n_neighbors: usize,
    ) -> Result<Self> {
        if n_members == 0 {
            return Err(Error::EmptyMembership);
        }
        let n = dynamics.state_dim();
        let prior_len = t - first;
        let prior_dim = n * prior_len;
        if prior.mean.len() != prior_dim || prior.info.nrows() != prior_dim {
            return Err(Error::DimensionMismatch {
                context: "agent prior",
                expected: prior_dim,
                got: prior.mean.len(),
            });
        }
        let window_len = prior_len + 1;
        let dim = n * window_len;

        let mut local_info = DMatrix::zeros(dim, dim);
        let mut local_rhs = DVector::zeros(dim);

        // Dynamics term, weighted 1/|V'| so the network sum recovers the full
        // Q^-1 weight.
        let q_inv = linalg::spd_inverse(dynamics.q(), "process noise Q")? / n_members as f64;
        let a = dynamics.a();
        let off_prev = dim - 2 * n;
        let off_t = dim - n;
        let q_inv_a = &q_inv * a;
        local_info
            .view_mut((off_prev, off_prev), (n, n))
            .copy_from(&(a.transpose() * &q_inv_a));
        local_info
            .view_mut((off_prev, off_t), (n, n))
            .copy_from(&(-q_inv_a.transpose()));
        local_info
            .view_mut((off_t, off_prev), (n, n))
            .copy_from(&(-&q_inv_a));
        local_info.view_mut((off_t, off_t), (n, n)).copy_from(&q_inv);

        // Own measurement, if any.
        if let Some((sensor, meas)) = observation {
            if sensor.state_dim() != n {
                return Err(Error::DimensionMismatch {
                    context: "agent measurement model",
                    expected: n,
                    got: sensor.state_dim(),
                });
            }
            if meas.t != t {
                return Err(Error::SpanMismatch {
                    context: "agent measurement",
                    prior_last: t - 1,
                    meas_t: meas.t,
                });
            }
            let r_chol = linalg::cholesky(sensor.r(), "measurement noise R")?;
            let r_inv_c = r_chol.solve(sensor.c());
            let mut omega = sensor.c().transpose() * &r_inv_c;
            linalg::symmetrize(&mut omega);
            {
                let mut blk = local_info.view_mut((off_t, off_t), (n, n));
                blk += &omega;
            }
            {
                let mut r = local_rhs.rows_mut(off_t, n);
                r += r_inv_c.transpose() * &meas.y;
            }
        }

        // Prior share over the first `prior_len` blocks.
        {
            let mut blk = local_info.view_mut((0, 0), (prior_dim, prior_dim));
            blk += &prior.info;
        }
        {
            let mut r = local_rhs.rows_mut(0, prior_dim);
            r += &prior.info * &prior.mean;
        }
        linalg::symmetrize(&mut local_info);

        // Initial iterate: local MAP solve, regularized only if the local
        // normal matrix is singular (a zero-information joiner).
        let init_factor = match Cholesky::new(local_info.clone()) {
            Some(c) => c,
            None => Cholesky::new(&local_info + DMatrix::identity(dim, dim) * JOINER_EPS)
                .ok_or(Error::Singular("local normal matrix"))?,
        };
        let iterate = init_factor.solve(&local_rhs);

        let (dense_factor, fast_factor) =
            factor_primal_system(&local_info, rho, n_neighbors, n, window_len)?;

        Ok(Self {
            sensor_id,
            state_dim: n,
            window_len,
            first,
            last: t,
            dual: DVector::zeros(dim),
            iterate,
            local_info,
            local_rhs,
            n_neighbors,
            rho,
            dense_factor,
            fast_factor,
            factors_valid: true,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn dim(&self) -> usize {
        self.state_dim * self.window_len
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn last(&self) -> usize {
        self.last
    }

    pub fn n_neighbors(&self) -> usize {
        self.n_neighbors
    }

    pub fn iterate(&self) -> &DVector<f64> {
        &self.iterate
    }

    pub fn dual(&self) -> &DVector<f64> {
        &self.dual
    }

    /// The local Hessian `H_i' W_i^-1 H_i`; also the information matrix of the
    /// agent's reported estimate.
    pub fn local_info(&self) -> &DMatrix<f64> {
        &self.local_info
    }

    pub fn local_rhs(&self) -> &DVector<f64> {
        &self.local_rhs
    }

    /// The primal system matrix `H_i' W_i^-1 H_i + 2 rho |N_i| I`.
    pub fn primal_system_matrix(&self) -> DMatrix<f64> {
        &self.local_info
            + DMatrix::identity(self.dim(), self.dim()) * (2.0 * self.rho * self.n_neighbors as f64)
    }

    /// Overwrites iterate and dual (warm starts, fixed-point experiments).
    pub fn inject(&mut self, iterate: DVector<f64>, dual: DVector<f64>) -> Result<()> {
        if iterate.len() != self.dim() || dual.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "inject",
                expected: self.dim(),
                got: iterate.len(),
            });
        }
        self.iterate = iterate;
        self.dual = dual;
        Ok(())
    }

    fn check_round_inputs(&self, neighbor_iterates: &[&DVector<f64>], rho: f64) -> Result<()> {
        if !self.factors_valid {
            return Err(Error::StaleFactorization(
                "agent was mutated after its factorization was built",
            ));
        }
        if neighbor_iterates.len() != self.n_neighbors {
            return Err(Error::StaleFactorization(
                "neighbor count changed after initialization",
            ));
        }
        if rho != self.rho {
            return Err(Error::StaleFactorization("rho changed after initialization"));
        }
        for nbr in neighbor_iterates {
            if nbr.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    context: "neighbor iterate",
                    expected: self.dim(),
                    got: nbr.len(),
                });
            }
        }
        Ok(())
    }

    /// Dual ascent: `p += rho * sum_j (x_i - x_j)` using round-`k` values.
    pub fn dual_update(&mut self, neighbor_iterates: &[&DVector<f64>], rho: f64) -> Result<()> {
        self.check_round_inputs(neighbor_iterates, rho)?;
        for nbr in neighbor_iterates {
            self.dual += (&self.iterate - *nbr) * rho;
        }
        Ok(())
    }

    fn primal_rhs(&self, neighbor_iterates: &[&DVector<f64>], rho: f64) -> DVector<f64> {
        let mut rhs = &self.local_rhs - &self.dual;
        for nbr in neighbor_iterates {
            rhs += (&self.iterate + *nbr) * rho;
        }
        rhs
    }

    /// Primal minimization through the dense cached factorization.
    pub fn primal_update_dense(
        &mut self,
        neighbor_iterates: &[&DVector<f64>],
        rho: f64,
    ) -> Result<()> {
        self.check_round_inputs(neighbor_iterates, rho)?;
        let rhs = self.primal_rhs(neighbor_iterates, rho);
        self.iterate = self.dense_factor.solve(&rhs);
        Ok(())
    }

    /// Primal minimization through the block-tridiagonal factorization:
    /// identical output to the dense path, with per-call cost linear in the
    /// window length.
    pub fn primal_update_fast(
        &mut self,
        neighbor_iterates: &[&DVector<f64>],
        rho: f64,
    ) -> Result<()> {
        self.check_round_inputs(neighbor_iterates, rho)?;
        let fast = self.fast_factor.as_ref().ok_or(Error::StaleFactorization(
            "window Hessian is not block tridiagonal; use the dense primal update",
        ))?;
        let rhs = self.primal_rhs(neighbor_iterates, rho);
        self.iterate = fast.solve(&rhs)?;
        Ok(())
    }

    /// The agent's reported estimate: its current iterate with the local
    /// Hessian as information matrix.
    pub fn estimate(&self) -> AgentEstimate {
        AgentEstimate {
            sensor_id: self.sensor_id,
            first: self.first,
            last: self.last,
            state_dim: self.state_dim,
            mean: self.iterate.clone(),
            info: self.local_info.clone(),
        }
    }

    /// Fuses a departing neighbor's local information matrix into this
    /// agent's. The mean is not transferred. Invalidates the cached
    /// factorizations (they are not needed after the iteration loop).
    pub fn absorb_information(&mut self, info: &DMatrix<f64>) -> Result<()> {
        if info.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "handoff information",
                expected: self.dim(),
                got: info.nrows(),
            });
        }
        self.local_info += info;
        self.factors_valid = false;
        Ok(())
    }
}

fn factor_primal_system(
    local_info: &DMatrix<f64>,
    rho: f64,
    n_neighbors: usize,
    state_dim: usize,
    window_len: usize,
) -> Result<(Cholesky<f64, Dyn>, Option<tridiag::BlockTridiagChol>)> {
    let dim = local_info.nrows();
    let shift = 2.0 * rho * n_neighbors as f64;
    let mut system = local_info + DMatrix::identity(dim, dim) * shift;
    if n_neighbors == 0 && Cholesky::new(system.clone()).is_none() {
        // Isolated zero-information joiner; keep its local solve well posed.
        system += DMatrix::identity(dim, dim) * JOINER_EPS;
    }
    let dense =
        Cholesky::new(system.clone()).ok_or(Error::NotPositiveDefinite("primal system"))?;

    // The fast path is valid only when everything outside the tridiagonal
    // band is (numerically) zero. The recursive pipeline keeps the band
    // structure exact; a hand-supplied dense prior does not.
    let scale = system.amax().max(1e-300);
    let mut fill = 0.0f64;
    for bi in 0..window_len {
        for bj in 0..window_len {
            if bi.abs_diff(bj) > 1 {
                fill = fill.max(
                    system
                        .view((bi * state_dim, bj * state_dim), (state_dim, state_dim))
                        .amax(),
                );
            }
        }
    }
    let fast = if fill <= 1e-7 * scale {
        let mut diag = Vec::with_capacity(window_len);
        let mut sub = Vec::with_capacity(window_len.saturating_sub(1));
        for tau in 0..window_len {
            let off = tau * state_dim;
            diag.push(system.view((off, off), (state_dim, state_dim)).into_owned());
            if tau > 0 {
                sub.push(
                    system
                        .view((off, off - state_dim), (state_dim, state_dim))
                        .into_owned(),
                );
            }
        }
        Some(tridiag::BlockTridiagChol::factor(&diag, &sub)?)
    } else {
        None
    };
    Ok((dense, fast))
}

/// A per-agent window estimate in information form. `info` is singular for
/// agents that have not yet accumulated any prior or measurement information.
#[derive(Debug, Clone)]
pub struct AgentEstimate {
    pub sensor_id: SensorId,
    pub first: usize,
    pub last: usize,
    pub state_dim: usize,
    pub mean: DVector<f64>,
    pub info: DMatrix<f64>,
}

impl AgentEstimate {
    /// Covariance-form view; fails when the information matrix is singular.
    pub fn to_gaussian(&self) -> Result<WindowGaussian> {
        let cov = linalg::spd_inverse(&self.info, "agent estimate information")?;
        WindowGaussian::new(self.first, self.last, self.state_dim, self.mean.clone(), cov)
    }

    /// Mean of the marginal at one timestep.
    pub fn marginal_mean(&self, t: usize) -> Result<DVector<f64>> {
        if t < self.first || t > self.last {
            return Err(Error::SpanMismatch {
                context: "estimate marginal",
                prior_last: self.last,
                meas_t: t,
            });
        }
        let off = (t - self.first) * self.state_dim;
        Ok(self.mean.rows(off, self.state_dim).into_owned())
    }
}

/// One synchronous ADMM round over every agent, in Jacobi order: all dual and
/// primal updates read the previous round's iterates. One estimate-vector
/// message per directed edge is charged to the ledger. Returns the maximum
/// primal residual `max_(i,j) |x_i - x_j|_inf` over the edges, measured on the
/// new iterates.
pub fn admm_round(
    agents: &mut BTreeMap<SensorId, AgentState>,
    subgraph: &CommGraph,
    cfg: &DrwtConfig,
    ledger: &mut CommLedger,
    round: u64,
) -> Result<f64> {
    if !subgraph.is_connected() {
        return Err(Error::Disconnected {
            t: subgraph.t(),
            n_vertices: subgraph.vertex_count(),
        });
    }
    let snapshot: BTreeMap<SensorId, DVector<f64>> = agents
        .iter()
        .map(|(&id, a)| (id, a.iterate.clone()))
        .collect();

    for (&id, agent) in agents.iter_mut() {
        let neighbors = subgraph.neighbors(id)?;
        let neighbor_iterates: Vec<&DVector<f64>> = neighbors
            .iter()
            .map(|j| snapshot.get(j).ok_or(Error::UnknownVertex(*j)))
            .collect::<Result<_>>()?;
        for &j in neighbors {
            ledger.record(
                subgraph,
                round,
                id,
                j,
                MessageKind::DrwtIterate,
                agent.dim() as u64,
            )?;
        }
        agent.dual_update(&neighbor_iterates, cfg.rho)?;
        match cfg.primal_update {
            PrimalUpdate::Dense => agent.primal_update_dense(&neighbor_iterates, cfg.rho)?,
            PrimalUpdate::Fast => agent.primal_update_fast(&neighbor_iterates, cfg.rho)?,
        }
    }

    let mut residual = 0.0f64;
    for (i, j) in subgraph.edges() {
        let d = (&agents[&i].iterate - &agents[&j].iterate).amax();
        residual = residual.max(d);
    }
    Ok(residual)
}

/// Transfers the leaver's local information matrix to the receiver and charges
/// the symmetric-matrix payload to the ledger.
pub fn handoff(
    leaver: &AgentState,
    receiver: &mut AgentState,
    graph: &CommGraph,
    ledger: &mut CommLedger,
    round: u64,
) -> Result<()> {
    receiver.absorb_information(&leaver.local_info)?;
    let d = leaver.dim() as u64;
    ledger.record(
        graph,
        round,
        leaver.sensor_id,
        receiver.sensor_id,
        MessageKind::HandoffInfo,
        d * (d + 1) / 2,
    )?;
    Ok(())
}

/// Marginalizes the oldest timestep out of an information-form Gaussian: the
/// retained information is the generalized Schur complement of the first
/// block. Equals the covariance-form marginal whenever the information matrix
/// is invertible, and stays well defined for singular (joiner) information.
pub fn marginalize_first_block(
    info: &DMatrix<f64>,
    mean: &DVector<f64>,
    state_dim: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let dim = info.nrows();
    if dim < 2 * state_dim {
        return Err(Error::WindowTooShort("marginalization needs at least two blocks"));
    }
    let keep = dim - state_dim;
    let m11 = info.view((0, 0), (state_dim, state_dim)).into_owned();
    let m21 = info.view((state_dim, 0), (keep, state_dim)).into_owned();
    let m22 = info.view((state_dim, state_dim), (keep, keep)).into_owned();
    let m11_pinv = linalg::psd_pseudo_inverse(&m11, 1e-12);
    let mut shifted = &m22 - &m21 * m11_pinv * m21.transpose();
    linalg::symmetrize(&mut shifted);
    Ok((shifted, mean.rows(state_dim, keep).into_owned()))
}

/// Per-timestep inputs for one target's distributed estimation step.
pub struct DrwtStepInputs<'a> {
    pub t: usize,
    /// Relevant subgraph over the current members `V'_t`.
    pub subgraph: &'a CommGraph,
    pub dynamics: &'a LinearDynamics,
    /// Per-member observation at `t`, if the member has one.
    pub observations: &'a BTreeMap<SensorId, (&'a SensorModel, &'a Measurement)>,
    /// Members of the next step, `V'_{t+1}`; drives the hand-off.
    pub next_members: &'a BTreeSet<SensorId>,
}

/// Outcome of one distributed step.
pub struct DrwtStepOutput {
    /// Post-iteration, pre-hand-off estimates, one per member.
    pub estimates: BTreeMap<SensorId, AgentEstimate>,
    pub iterations: usize,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    /// Hand-offs executed, as (leaver, receiver) pairs.
    pub handoffs: Vec<(SensorId, SensorId)>,
    /// Leavers whose information was lost for lack of an eligible receiver.
    pub dropped_info: usize,
    /// Joiners initialized this step.
    pub joiners: Vec<SensorId>,
    /// Number of connected components the step ran over (1 when connected).
    pub components: usize,
    /// Network-wide information sum over all members after the iteration
    /// loop, before any hand-off.
    pub info_sum_before_handoff: DMatrix<f64>,
    /// Information sum over the continuing members after hand-offs; equals
    /// the pre-hand-off sum whenever no information was dropped.
    pub info_sum_after_handoff: DMatrix<f64>,
    /// Information lost with leavers that had no eligible receiver, so that
    /// `before == after + dropped` always holds exactly.
    pub dropped_info_sum: DMatrix<f64>,
}

/// Rolling state of the distributed tracker for one target: the per-agent
/// window priors in information form, plus the shared window span.
pub struct TargetTracker {
    cfg: DrwtConfig,
    state_dim: usize,
    window_steps: usize,
    prior_first: usize,
    prior_last: usize,
    priors: BTreeMap<SensorId, AgentPrior>,
}

impl TargetTracker {
    /// Starts tracking from a centralized single-step prior split among the
    /// initial members.
    pub fn new(
        initial_prior: &WindowGaussian,
        members: &BTreeSet<SensorId>,
        window_steps: usize,
        cfg: DrwtConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if window_steps == 0 {
            return Err(Error::WindowTooShort("window must span at least one transition"));
        }
        if members.is_empty() {
            return Err(Error::EmptyMembership);
        }
        let split = split_prior(initial_prior, members)?;
        let priors = split
            .iter()
            .map(|(&i, g)| Ok((i, AgentPrior::from_gaussian(g)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            cfg,
            state_dim: initial_prior.state_dim(),
            window_steps,
            prior_first: initial_prior.first(),
            prior_last: initial_prior.last(),
            priors,
        })
    }

    pub fn cfg(&self) -> &DrwtConfig {
        &self.cfg
    }

    pub fn members(&self) -> BTreeSet<SensorId> {
        self.priors.keys().copied().collect()
    }

    pub fn priors(&self) -> &BTreeMap<SensorId, AgentPrior> {
        &self.priors
    }

    pub fn prior_span(&self) -> (usize, usize) {
        (self.prior_first, self.prior_last)
    }

    /// Network-wide prior information sum; conservative with respect to the
    /// centralized prior after the first marginalization.
    pub fn prior_info_sum(&self) -> DMatrix<f64> {
        let dim = self.state_dim * (self.prior_last - self.prior_first + 1);
        let mut sum = DMatrix::zeros(dim, dim);
        for p in self.priors.values() {
            sum += &p.info;
        }
        sum
    }

    /// Runs one full distributed timestep: joiner initialization, local init,
    /// ADMM rounds until the stop rule fires, hand-off to continuing
    /// neighbors, and the per-agent window shift. Returns the step outcome and
    /// the next free ledger round index.
    pub fn step(
        &mut self,
        inputs: &DrwtStepInputs,
        ledger: &mut CommLedger,
        round_offset: u64,
    ) -> Result<(DrwtStepOutput, u64)> {
        let t = inputs.t;
        if t != self.prior_last + 1 {
            return Err(Error::SpanMismatch {
                context: "tracker step",
                prior_last: self.prior_last,
                meas_t: t,
            });
        }
        let members: BTreeSet<SensorId> = inputs.subgraph.vertices().collect();
        if members.is_empty() {
            return Err(Error::EmptyMembership);
        }
        for id in self.priors.keys() {
            if !members.contains(id) {
                return Err(Error::Scenario(format!(
                    "sensor {id} still holds a prior but is no longer a member at t={t}; \
                     hand-off bookkeeping out of sync"
                )));
            }
        }
        let n = self.state_dim;
        let prior_dim = n * (self.prior_last - self.prior_first + 1);

        let components = if inputs.subgraph.is_connected() {
            vec![inputs.subgraph.clone()]
        } else {
            match self.cfg.connectivity {
                ConnectivityPolicy::Error => {
                    return Err(Error::Disconnected {
                        t,
                        n_vertices: inputs.subgraph.vertex_count(),
                    })
                }
                ConnectivityPolicy::Components => inputs.subgraph.components(),
            }
        };

        // Joiners: zero information, mean copied from the lowest-id settled
        // neighbor (falling back to the lowest-id settled member of their
        // component, then to zero for an all-new component).
        let mut joiners = Vec::new();
        for comp in &components {
            let comp_members: Vec<SensorId> = comp.vertices().collect();
            for &id in &comp_members {
                if self.priors.contains_key(&id) {
                    continue;
                }
                let source = comp
                    .neighbors(id)?
                    .iter()
                    .find(|j| self.priors.contains_key(j))
                    .copied()
                    .or_else(|| {
                        comp_members
                            .iter()
                            .find(|j| self.priors.contains_key(j))
                            .copied()
                    });
                let mean = match source {
                    Some(s) => self.priors[&s].mean.clone(),
                    None => DVector::zeros(prior_dim),
                };
                self.priors.insert(
                    id,
                    AgentPrior {
                        mean,
                        info: DMatrix::zeros(prior_dim, prior_dim),
                    },
                );
                joiners.push(id);
            }
        }

        // Local initialization and ADMM rounds, per component.
        let mut agents: BTreeMap<SensorId, AgentState> = BTreeMap::new();
        let mut residual_history: Vec<f64> = Vec::new();
        let mut round_end = round_offset;
        for comp in &components {
            let comp_size = comp.vertex_count();
            let mut comp_agents: BTreeMap<SensorId, AgentState> = BTreeMap::new();
            for id in comp.vertices() {
                let agent = AgentState::init(
                    id,
                    &self.priors[&id],
                    self.prior_first,
                    t,
                    inputs.dynamics,
                    comp_size,
                    inputs.observations.get(&id).map(|&(s, m)| (s, m)),
                    self.cfg.rho,
                    comp.degree(id)?,
                )?;
                comp_agents.insert(id, agent);
            }

            let mut round = round_offset;
            for k in 0..self.cfg.max_iters {
                let residual = admm_round(&mut comp_agents, comp, &self.cfg, ledger, round)?;
                if k < residual_history.len() {
                    residual_history[k] = residual_history[k].max(residual);
                } else {
                    residual_history.push(residual);
                }
                round += 1;
                if self.cfg.stop == StopRule::ResidualTol && residual < self.cfg.residual_tol {
                    break;
                }
            }
            round_end = round_end.max(round);
            agents.append(&mut comp_agents);
        }
        let final_residual = residual_history.last().copied().unwrap_or(0.0);

        let estimates: BTreeMap<SensorId, AgentEstimate> =
            agents.iter().map(|(&id, a)| (id, a.estimate())).collect();
        let dim = n * (t - self.prior_first + 1);
        let mut info_sum_before = DMatrix::zeros(dim, dim);
        for a in agents.values() {
            info_sum_before += &a.local_info;
        }

        // Hand-off from leavers to the lowest-id continuing neighbor within
        // their component.
        let mut handoffs = Vec::new();
        let mut dropped_info = 0usize;
        let mut dropped_info_sum = DMatrix::zeros(dim, dim);
        for comp in &components {
            let leavers: Vec<SensorId> = comp
                .vertices()
                .filter(|id| !inputs.next_members.contains(id))
                .collect();
            for leaver_id in leavers {
                let receiver_id = comp
                    .neighbors(leaver_id)?
                    .iter()
                    .find(|j| inputs.next_members.contains(j) && agents.contains_key(j))
                    .copied();
                match receiver_id {
                    Some(rid) => {
                        let leaver = agents[&leaver_id].clone();
                        let receiver = agents.get_mut(&rid).unwrap();
                        handoff(&leaver, receiver, comp, ledger, round_end)?;
                        handoffs.push((leaver_id, rid));
                    }
                    None => {
                        dropped_info += 1;
                        dropped_info_sum += &agents[&leaver_id].local_info;
                    }
                }
            }
        }

        let mut info_sum_after = DMatrix::zeros(dim, dim);
        for (id, a) in &agents {
            if inputs.next_members.contains(id) {
                info_sum_after += &a.local_info;
            }
        }

        // Shift each continuing agent's posterior into its next prior.
        let window_len = t - self.prior_first + 1;
        let at_cap = window_len == self.window_steps + 1;
        let mut next_priors = BTreeMap::new();
        for (&id, agent) in &agents {
            if !inputs.next_members.contains(&id) {
                continue;
            }
            let (info, mean) = if at_cap {
                marginalize_first_block(&agent.local_info, &agent.iterate, n)?
            } else {
                (agent.local_info.clone(), agent.iterate.clone())
            };
            next_priors.insert(id, AgentPrior { mean, info });
        }
        self.priors = next_priors;
        if at_cap {
            self.prior_first += 1;
        }
        self.prior_last = t;

        Ok((
            DrwtStepOutput {
                estimates,
                iterations: residual_history.len(),
                final_residual,
                residual_history,
                handoffs,
                dropped_info,
                joiners,
                components: components.len(),
                info_sum_before_handoff: info_sum_before,
                info_sum_after_handoff: info_sum_after,
                dropped_info_sum,
            },
            round_end,
        ))
    }
}

#[cfg(test)]
mod tests;
