//! Monte Carlo benchmarking on the static-network problem: repeated noise
//! realizations of the same tracking problem, per-method per-step aggregates.

use std::collections::BTreeMap;

use nalgebra::DVector;

use super::bench::{derive_seed, BenchEpisode, StaticProblem};
use super::episode::Method;
use crate::central::RollingWindow;
use crate::ckf::{CkfTracker, CkfTrackerInputs};
use crate::drwt::{DrwtConfig, DrwtStepInputs, StopRule, TargetTracker};
use crate::error::{Error, Result};
use crate::linalg;
use crate::netgraph::{CommLedger, ConnectivityPolicy, SensorId};

/// Per-step record of one method on one run.
pub struct BenchStep {
    pub t: usize,
    /// Network-mean squared position error to ground truth.
    pub mse_truth: f64,
    /// Network-mean squared position error to the centralized estimate.
    pub mse_central: f64,
    /// Reported covariance trace of the final-timestep marginal: the
    /// network-fused covariance for the distributed tracker, the node mean
    /// for the consensus filter and local-only baselines, the posterior
    /// itself for the centralized oracle.
    pub trace_cov: f64,
    pub bits_per_node: f64,
    /// Network-mean window estimate minus the true window trajectory.
    pub window_error: DVector<f64>,
    /// Smallest eigenvalue of `(sum_i prior_info_i)^-1 - central_prior_cov`
    /// after the step (distributed tracker only, else NaN). Non-negative
    /// means the distributed prior is conservative.
    pub prior_psd_margin: f64,
}

pub struct BenchRun {
    pub method: Method,
    pub per_step: Vec<BenchStep>,
}

/// Iteration/round budgets for the bench methods.
#[derive(Debug, Clone, Copy)]
pub struct BenchBudgets {
    pub drwt_iters: usize,
    pub ckf_rounds: usize,
}

/// Runs one method over one episode of the static problem. The centralized
/// window runs alongside as the oracle.
pub fn run_bench_method(
    problem: &StaticProblem,
    episode: &BenchEpisode,
    method: Method,
    budgets: BenchBudgets,
) -> Result<BenchRun> {
    let n_steps = episode.measurements.len();
    let window_steps = problem.cfg.window_steps;
    let members = problem.members();
    let state_dim = problem.cfg.state_dim();
    let mut ledger = CommLedger::new(problem.cfg.bits_per_scalar);
    let mut round = 0u64;

    let mut central = RollingWindow::new(problem.prior.clone(), window_steps)?;
    let mut drwt_track = match method {
        Method::Drwt => Some(TargetTracker::new(
            &problem.prior,
            &members,
            window_steps,
            DrwtConfig {
                rho: problem.cfg.rho,
                max_iters: budgets.drwt_iters,
                residual_tol: 1e-12,
                primal_update: crate::drwt::PrimalUpdate::Fast,
                stop: StopRule::FixedIters,
                connectivity: ConnectivityPolicy::Error,
            },
        )?),
        _ => None,
    };
    let mut ckf_track = match method {
        Method::Ckf => Some(CkfTracker::new(
            &problem.prior,
            &members,
            window_steps,
            budgets.ckf_rounds,
            ConnectivityPolicy::Error,
        )?),
        _ => None,
    };
    let mut local_tracks: BTreeMap<SensorId, RollingWindow> = match method {
        Method::LocalOnly => members
            .iter()
            .map(|&id| Ok((id, RollingWindow::new(problem.prior.clone(), window_steps)?)))
            .collect::<Result<_>>()?,
        _ => BTreeMap::new(),
    };

    let mut per_step = Vec::with_capacity(n_steps);
    for t in 1..=n_steps {
        let joint = problem.joint_at(episode, t)?;
        central.step(&problem.dynamics, &joint)?;
        let central_post = central.posterior().clone();
        let (central_mean_t, central_cov_t) = central_post.marginal(t)?;

        // True trajectory over the current window.
        let first = central_post.first();
        let truth_window = {
            let mut v = DVector::zeros(central_post.dim());
            for (blk, tau) in (first..=t).enumerate() {
                v.rows_mut(blk * state_dim, state_dim)
                    .copy_from(&episode.truths[tau].x);
            }
            v
        };
        let truth_t = &episode.truths[t].x;

        let record = match method {
            Method::Centralized => BenchStep {
                t,
                mse_truth: pos_sq(&central_mean_t, truth_t),
                mse_central: 0.0,
                trace_cov: central_cov_t.trace(),
                bits_per_node: 0.0,
                window_error: central_post.mean() - &truth_window,
                prior_psd_margin: f64::NAN,
            },
            Method::Drwt => {
                let tracker = drwt_track.as_mut().unwrap();
                let observations = problem.observations_at(episode, t);
                let inputs = DrwtStepInputs {
                    t,
                    subgraph: &problem.graph,
                    dynamics: &problem.dynamics,
                    observations: &observations,
                    next_members: &members,
                };
                let (out, next_round) = tracker.step(&inputs, &mut ledger, round)?;
                round = next_round;

                let mut mse_truth = 0.0;
                let mut mse_central = 0.0;
                let mut mean_window_est = DVector::zeros(central_post.dim());
                for est in out.estimates.values() {
                    let mean_t = est.marginal_mean(t)?;
                    mse_truth += pos_sq(&mean_t, truth_t);
                    mse_central += pos_sq(&mean_t, &central_mean_t);
                    mean_window_est += &est.mean;
                }
                let k = out.estimates.len() as f64;
                mean_window_est /= k;

                let fused_cov = linalg::spd_inverse(&out.info_sum_before_handoff, "fused info")?;
                let dim = fused_cov.nrows();
                let fused_trace = fused_cov
                    .view((dim - state_dim, dim - state_dim), (state_dim, state_dim))
                    .trace();

                // Conservativeness of the carried prior vs the centralized one.
                let prior_sum = tracker.prior_info_sum();
                let central_prior = central.next_prior()?;
                let margin = match linalg::spd_inverse(&prior_sum, "prior sum") {
                    Ok(fused_prior_cov) => {
                        linalg::min_eigenvalue(&(&fused_prior_cov - central_prior.cov()))
                    }
                    Err(_) => f64::NEG_INFINITY,
                };

                BenchStep {
                    t,
                    mse_truth: mse_truth / k,
                    mse_central: mse_central / k,
                    trace_cov: fused_trace,
                    bits_per_node: ledger.mean_bits_per_node(members.len()),
                    window_error: mean_window_est - &truth_window,
                    prior_psd_margin: margin,
                }
            }
            Method::Ckf => {
                let tracker = ckf_track.as_mut().unwrap();
                let observations = problem.observations_at(episode, t);
                let inputs = CkfTrackerInputs {
                    t,
                    subgraph: &problem.graph,
                    dynamics: &problem.dynamics,
                    observations: &observations,
                    next_members: &members,
                };
                let (estimates, next_round) = tracker.step(&inputs, 0, &mut ledger, round)?;
                round = next_round;
                let mut mse_truth = 0.0;
                let mut mse_central = 0.0;
                let mut trace = 0.0;
                let mut mean_window_est = DVector::zeros(central_post.dim());
                for est in estimates.values() {
                    let (mean_t, cov_t) = est.marginal(t)?;
                    mse_truth += pos_sq(&mean_t, truth_t);
                    mse_central += pos_sq(&mean_t, &central_mean_t);
                    trace += cov_t.trace();
                    mean_window_est += est.mean();
                }
                let k = estimates.len() as f64;
                BenchStep {
                    t,
                    mse_truth: mse_truth / k,
                    mse_central: mse_central / k,
                    trace_cov: trace / k,
                    bits_per_node: ledger.mean_bits_per_node(members.len()),
                    window_error: mean_window_est / k - &truth_window,
                    prior_psd_margin: f64::NAN,
                }
            }
            Method::LocalOnly => {
                let mut mse_truth = 0.0;
                let mut mse_central = 0.0;
                let mut trace = 0.0;
                let mut mean_window_est = DVector::zeros(central_post.dim());
                for (&id, window) in local_tracks.iter_mut() {
                    let sensor = &problem.sensors[id as usize];
                    let meas = &episode.measurements[t - 1][id as usize];
                    let own = crate::central::JointMeasurement::stack(4, t, &[(sensor, meas)])?;
                    window.step(&problem.dynamics, &own)?;
                    let post = window.posterior();
                    let (mean_t, cov_t) = post.marginal(t)?;
                    mse_truth += pos_sq(&mean_t, truth_t);
                    mse_central += pos_sq(&mean_t, &central_mean_t);
                    trace += cov_t.trace();
                    mean_window_est += post.mean();
                }
                let k = local_tracks.len() as f64;
                BenchStep {
                    t,
                    mse_truth: mse_truth / k,
                    mse_central: mse_central / k,
                    trace_cov: trace / k,
                    bits_per_node: 0.0,
                    window_error: mean_window_est / k - &truth_window,
                    prior_psd_margin: f64::NAN,
                }
            }
        };
        per_step.push(record);
    }
    Ok(BenchRun { method, per_step })
}

fn pos_sq(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Aggregated Monte Carlo statistics for one (method, timestep).
pub struct McAggregateRow {
    pub method: Method,
    pub t: usize,
    pub n_runs: usize,
    pub mse_truth_mean: f64,
    pub mse_truth_sem: f64,
    pub mse_central_mean: f64,
    pub trace_cov_mean: f64,
    pub bits_per_node_mean: f64,
}

/// Runs `n_runs` independent episodes (seeds derived from `base_seed`) for
/// each method and aggregates the per-step metrics.
pub fn monte_carlo(
    problem: &StaticProblem,
    methods: &[Method],
    n_runs: usize,
    n_steps: usize,
    budgets: BenchBudgets,
    base_seed: u64,
) -> Result<Vec<McAggregateRow>> {
    if n_runs == 0 {
        return Err(Error::Config("monte carlo needs at least one run".into()));
    }
    let mut rows = Vec::new();
    for &method in methods {
        let mut acc: Vec<(f64, f64, f64, f64, f64)> = vec![(0.0, 0.0, 0.0, 0.0, 0.0); n_steps];
        for run in 0..n_runs {
            let episode = problem.episode(derive_seed(base_seed, 10_000 + run as u64), n_steps)?;
            let out = run_bench_method(problem, &episode, method, budgets)?;
            for (k, step) in out.per_step.iter().enumerate() {
                acc[k].0 += step.mse_truth;
                acc[k].1 += step.mse_truth * step.mse_truth;
                acc[k].2 += step.mse_central;
                acc[k].3 += step.trace_cov;
                acc[k].4 += step.bits_per_node;
            }
        }
        let n = n_runs as f64;
        for (k, (s, s2, c, tr, b)) in acc.into_iter().enumerate() {
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0);
            let sem = if n_runs > 1 { (var / (n - 1.0)).sqrt() } else { 0.0 };
            rows.push(McAggregateRow {
                method,
                t: k + 1,
                n_runs,
                mse_truth_mean: mean,
                mse_truth_sem: sem,
                mse_central_mean: c / n,
                trace_cov_mean: tr / n,
                bits_per_node_mean: b / n,
            });
        }
    }
    Ok(rows)
}
