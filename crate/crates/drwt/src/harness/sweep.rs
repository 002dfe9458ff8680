//! Convergence-per-bit sweep: error to the centralized estimate as a
//! function of cumulative communication bits per node, for one timestep's
//! estimation on a static network.

use std::collections::BTreeMap;

use super::bench::{BenchEpisode, StaticProblem};
use super::episode::Method;
use crate::central::{assemble_block_system, solve_map_window};
use crate::ckf::{CkfConsensus, CkfStepInputs};
use crate::drwt::{admm_round, split_prior, AgentPrior, AgentState, DrwtConfig, StopRule};
use crate::error::Result;
use crate::linalg::rel_err_vec;
use crate::netgraph::{CommLedger, ConnectivityPolicy, SensorId};

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub method: Method,
    /// ADMM iterations or consensus rounds completed.
    pub rounds: usize,
    pub bits_per_node: f64,
    /// Relative L2 error of the window mean to the centralized solution,
    /// averaged over nodes.
    pub err_to_central: f64,
}

/// Round counts 0, 1, 2, 3, ... growing by about sqrt(2) up to `max`.
pub fn geometric_checkpoints(max: usize) -> Vec<usize> {
    let mut out = vec![0usize];
    let mut k = 1usize;
    while k < max {
        out.push(k);
        k = ((k as f64) * std::f64::consts::SQRT_2).round().max(k as f64 + 1.0) as usize;
    }
    out.push(max);
    out
}

/// Sweeps both methods over one timestep of `episode` (t = 1), recording the
/// error to the centralized estimate at each checkpoint.
pub fn convergence_sweep(
    problem: &StaticProblem,
    episode: &BenchEpisode,
    drwt_checkpoints: &[usize],
    ckf_checkpoints: &[usize],
) -> Result<Vec<SweepPoint>> {
    let t = 1;
    let members = problem.members();
    let n_members = members.len();
    let joint = problem.joint_at(episode, t)?;
    let central =
        solve_map_window(&assemble_block_system(&problem.prior, &problem.dynamics, &joint)?)?;
    let observations = problem.observations_at(episode, t);

    let mut points = Vec::new();

    // Distributed tracker sweep.
    {
        let split = split_prior(&problem.prior, &members)?;
        let mut agents: BTreeMap<SensorId, AgentState> = BTreeMap::new();
        for &id in &members {
            let prior = AgentPrior::from_gaussian(&split[&id])?;
            agents.insert(
                id,
                AgentState::init(
                    id,
                    &prior,
                    problem.prior.first(),
                    t,
                    &problem.dynamics,
                    n_members,
                    observations.get(&id).copied(),
                    problem.cfg.rho,
                    problem.graph.degree(id)?,
                )?,
            );
        }
        let cfg = DrwtConfig {
            rho: problem.cfg.rho,
            max_iters: 1,
            residual_tol: 0.0,
            primal_update: crate::drwt::PrimalUpdate::Fast,
            stop: StopRule::FixedIters,
            connectivity: ConnectivityPolicy::Error,
        };
        let mut ledger = CommLedger::new(problem.cfg.bits_per_scalar);
        let max_k = drwt_checkpoints.iter().copied().max().unwrap_or(0);
        let record = |agents: &BTreeMap<SensorId, AgentState>, k: usize, ledger: &CommLedger| {
            let err = agents
                .values()
                .map(|a| rel_err_vec(a.iterate(), central.mean()))
                .sum::<f64>()
                / n_members as f64;
            SweepPoint {
                method: Method::Drwt,
                rounds: k,
                bits_per_node: ledger.mean_bits_per_node(n_members),
                err_to_central: err,
            }
        };
        if drwt_checkpoints.contains(&0) {
            points.push(record(&agents, 0, &ledger));
        }
        for k in 1..=max_k {
            admm_round(&mut agents, &problem.graph, &cfg, &mut ledger, k as u64)?;
            if drwt_checkpoints.contains(&k) {
                points.push(record(&agents, k, &ledger));
            }
        }
    }

    // Consensus filter sweep.
    {
        let priors: BTreeMap<SensorId, _> = members.iter().map(|&i| (i, problem.prior.clone())).collect();
        let inputs = CkfStepInputs {
            subgraph: &problem.graph,
            n_members,
            dynamics: &problem.dynamics,
            priors: &priors,
            observations: &observations,
            t,
        };
        let mut consensus = CkfConsensus::init(&inputs)?;
        let mut ledger = CommLedger::new(problem.cfg.bits_per_scalar);
        let max_l = ckf_checkpoints.iter().copied().max().unwrap_or(0);
        for l in 0..=max_l {
            if l > 0 {
                consensus.round(&problem.graph, &mut ledger, l as u64)?;
            }
            if ckf_checkpoints.contains(&l) {
                let estimates = consensus.solve_all(&inputs)?;
                let err = estimates
                    .values()
                    .map(|g| rel_err_vec(g.mean(), central.mean()))
                    .sum::<f64>()
                    / n_members as f64;
                points.push(SweepPoint {
                    method: Method::Ckf,
                    rounds: l,
                    bits_per_node: ledger.mean_bits_per_node(n_members),
                    err_to_central: err,
                });
            }
        }
    }

    Ok(points)
}

/// Step-function comparison of two sweep curves on their common bit range:
/// true when the first curve is at or below the second at every budget, with
/// errors below `floor` treated as converged ties.
pub fn curve_dominates(
    lower: &[SweepPoint],
    upper: &[SweepPoint],
    floor: f64,
    slack: f64,
) -> Option<(f64, f64)> {
    let lo_start = lower.iter().filter(|p| p.bits_per_node > 0.0).map(|p| p.bits_per_node).fold(f64::INFINITY, f64::min);
    let up_start = upper.iter().filter(|p| p.bits_per_node > 0.0).map(|p| p.bits_per_node).fold(f64::INFINITY, f64::min);
    let lo_end = lower.iter().map(|p| p.bits_per_node).fold(0.0, f64::max);
    let up_end = upper.iter().map(|p| p.bits_per_node).fold(0.0, f64::max);
    let start = lo_start.max(up_start);
    let end = lo_end.min(up_end);
    if !(start.is_finite() && end > start) {
        return None;
    }
    let err_at = |curve: &[SweepPoint], bits: f64| {
        curve
            .iter()
            .filter(|p| p.bits_per_node <= bits + 1e-9)
            .map(|p| p.err_to_central)
            .last()
            .unwrap_or(f64::INFINITY)
    };
    let mut budgets: Vec<f64> = lower
        .iter()
        .chain(upper.iter())
        .map(|p| p.bits_per_node)
        .filter(|&b| b >= start && b <= end)
        .collect();
    budgets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &b in &budgets {
        let lo = err_at(lower, b);
        let up = err_at(upper, b);
        if lo > floor && lo > up * (1.0 + slack) {
            return None;
        }
    }
    Some((start, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::bench::{derive_seed, BenchConfig};

    #[test]
    fn checkpoints_grow_geometrically() {
        let ks = geometric_checkpoints(64);
        assert_eq!(ks[0], 0);
        assert_eq!(ks[1], 1);
        assert_eq!(*ks.last().unwrap(), 64);
        for w in ks.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn zero_rounds_points_have_zero_bits() {
        let cfg = BenchConfig {
            n_nodes: 6,
            n_edges: 9,
            ..BenchConfig::desk_scale()
        };
        let problem = StaticProblem::generate(&cfg, 2).unwrap();
        let episode = problem.episode(derive_seed(2, 10_000), 1).unwrap();
        let points = convergence_sweep(&problem, &episode, &[0, 1, 4], &[0, 1, 4]).unwrap();
        for p in &points {
            if p.rounds == 0 {
                assert_eq!(p.bits_per_node, 0.0);
                assert!(p.err_to_central > 0.0, "no communication leaves residual error");
            } else {
                assert!(p.bits_per_node > 0.0);
            }
        }
        // Errors decrease with more rounds for both methods.
        for method in [Method::Drwt, Method::Ckf] {
            let errs: Vec<f64> = points
                .iter()
                .filter(|p| p.method == method)
                .map(|p| p.err_to_central)
                .collect();
            assert!(errs.first().unwrap() > errs.last().unwrap());
        }
    }

    #[test]
    fn ledger_bits_match_closed_form() {
        // iterations * sum_i |N_i| * n(T+1) * 64 / |V| for the tracker sweep.
        let cfg = BenchConfig {
            n_nodes: 6,
            n_edges: 9,
            ..BenchConfig::desk_scale()
        };
        let problem = StaticProblem::generate(&cfg, 3).unwrap();
        let episode = problem.episode(derive_seed(3, 10_000), 1).unwrap();
        let points = convergence_sweep(&problem, &episode, &[0, 5], &[0]).unwrap();
        let p5 = points
            .iter()
            .find(|p| p.method == Method::Drwt && p.rounds == 5)
            .unwrap();
        let dim = 4 * (cfg.window_steps + 1);
        let expect = 5.0 * (2 * cfg.n_edges) as f64 * dim as f64 * 64.0 / cfg.n_nodes as f64;
        assert!((p5.bits_per_node - expect).abs() < 1e-9);
    }

    #[test]
    fn dominance_check_detects_crossings() {
        let mk = |method, pts: &[(f64, f64)]| -> Vec<SweepPoint> {
            pts.iter()
                .enumerate()
                .map(|(k, &(b, e))| SweepPoint {
                    method,
                    rounds: k,
                    bits_per_node: b,
                    err_to_central: e,
                })
                .collect()
        };
        let lower = mk(Method::Drwt, &[(0.0, 1.0), (10.0, 0.1), (100.0, 0.01)]);
        let upper = mk(Method::Ckf, &[(0.0, 1.0), (20.0, 0.5), (100.0, 0.05)]);
        assert!(curve_dominates(&lower, &upper, 1e-12, 0.05).is_some());
        // Swapped order fails.
        assert!(curve_dominates(&upper, &lower, 1e-12, 0.05).is_none());
    }
}
