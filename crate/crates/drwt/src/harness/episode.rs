//! Runs one method over one scenario realization, producing per-step metric
//! rows with the centralized estimate always co-computed as the oracle.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use super::scenario::Scenario;
use crate::central::{
    kalman_step, JointMeasurement, RollingWindow, WindowGaussian,
};
use crate::ckf::{CkfTracker, CkfTrackerInputs};
use crate::drwt::{DrwtConfig, DrwtStepInputs, StopRule, TargetTracker};
use crate::error::Result;
use crate::linalg;
use crate::models::{Measurement, SensorModel, TargetId};
use crate::netgraph::{CommLedger, SensorId};

/// Estimation method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Centralized,
    Ckf,
    Drwt,
    LocalOnly,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::Ckf => "ckf",
            Method::Drwt => "drwt",
            Method::LocalOnly => "local-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "centralized" => Some(Method::Centralized),
            "ckf" => Some(Method::Ckf),
            "drwt" => Some(Method::Drwt),
            "local-only" | "local_only" => Some(Method::LocalOnly),
            _ => None,
        }
    }
}

/// One metrics record: per sensor when `sensor` is set, otherwise the network
/// aggregate.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub run_id: u64,
    pub t: usize,
    pub method: Method,
    pub target_id: TargetId,
    pub sensor: Option<SensorId>,
    /// Squared position error against the centralized oracle.
    pub mse_to_centralized: f64,
    /// Squared position error against ground truth.
    pub mse_to_truth: f64,
    /// Trace of the final-timestep marginal covariance (infinite for an
    /// agent that holds no information yet).
    pub trace_cov: f64,
    /// Episode-wide cumulative communication bits at this row's step.
    pub cum_bits: u64,
}

/// Per-sensor information band sample: the trace of the sensor's local
/// information matrix next to the centralized information trace.
#[derive(Debug, Clone)]
pub struct InfoBandRow {
    pub run_id: u64,
    pub t: usize,
    pub target_id: TargetId,
    pub sensor: SensorId,
    pub info_trace: f64,
    pub central_info_trace: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeDiagnostics {
    pub handoffs: usize,
    pub dropped_info: usize,
    pub rebirths: usize,
    pub disconnected_steps: usize,
    pub dormant_steps: usize,
}

pub struct EpisodeOutput {
    pub rows: Vec<MetricsRow>,
    pub info_bands: Vec<InfoBandRow>,
    pub ledger: CommLedger,
    pub diagnostics: EpisodeDiagnostics,
}

fn position_sq_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Trailing-window centralized oracle for one target; never dormant.
struct CentralTrack {
    window: RollingWindow,
}

impl CentralTrack {
    fn step(&mut self, scenario: &Scenario, target: TargetId, t: usize) -> Result<()> {
        let obs = &scenario.observations[target as usize][t - 1];
        let parts: Vec<(&SensorModel, &Measurement)> = obs
            .iter()
            .map(|m| (&scenario.sensors[m.sensor_id as usize], m))
            .collect();
        let joint = JointMeasurement::stack(4, t, &parts)?;
        self.window.step(&scenario.estimator_dynamics, &joint)?;
        Ok(())
    }
}

/// A fresh single-step prior for a target re-acquired at step `t`: position
/// from the mean of the current observations, zero velocity, diffuse
/// covariance.
fn rebirth_prior(scenario: &Scenario, target: TargetId, t: usize) -> Result<WindowGaussian> {
    let cfg = &scenario.cfg;
    let obs = &scenario.observations[target as usize][t - 1];
    let mut pos = DVector::zeros(2);
    for m in obs {
        pos += &m.y;
    }
    pos /= obs.len().max(1) as f64;
    let mean = DVector::from_vec(vec![pos[0], pos[1], 0.0, 0.0]);
    let pos_std = cfg.prior_pos_std_m.max(3.0 * cfg.r_std_m);
    let vel_std = (1.5 * cfg.target_speed_mps).max(cfg.prior_vel_std_mps);
    let mut cov = DMatrix::zeros(4, 4);
    cov[(0, 0)] = pos_std * pos_std;
    cov[(1, 1)] = pos_std * pos_std;
    cov[(2, 2)] = vel_std * vel_std;
    cov[(3, 3)] = vel_std * vel_std;
    WindowGaussian::single(t - 1, mean, cov)
}

/// Runs `method` over the whole scenario. The centralized oracle runs
/// alongside every method to supply the `mse_to_centralized` column.
pub fn run_episode(scenario: &Scenario, method: Method, run_id: u64) -> Result<EpisodeOutput> {
    let cfg = &scenario.cfg;
    let window_steps = scenario.window_steps();
    let n_targets = cfg.n_targets;
    let mut ledger = CommLedger::new(cfg.bits_per_scalar);
    let mut rows = Vec::new();
    let mut info_bands = Vec::new();
    let mut diagnostics = EpisodeDiagnostics::default();
    let mut round: u64 = 0;

    let mut central: Vec<CentralTrack> = (0..n_targets)
        .map(|m| {
            Ok(CentralTrack {
                window: RollingWindow::new(scenario.priors[m].clone(), window_steps)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let drwt_cfg = DrwtConfig {
        rho: cfg.rho,
        max_iters: cfg.drwt_iters,
        residual_tol: 1e-9,
        primal_update: cfg.primal_update,
        stop: StopRule::FixedIters,
        connectivity: cfg.connectivity,
    };
    let mut drwt_tracks: Vec<Option<TargetTracker>> = (0..n_targets).map(|_| None).collect();
    let mut ckf_tracks: Vec<Option<CkfTracker>> = (0..n_targets).map(|_| None).collect();
    // Local-only state: per-target windows per sensor, plus a prediction-only
    // track prior used to seed sensors that become relevant late.
    let mut local_tracks: Vec<BTreeMap<SensorId, RollingWindow>> =
        (0..n_targets).map(|_| BTreeMap::new()).collect();
    let mut pred_priors: Vec<(DVector<f64>, DMatrix<f64>)> = (0..n_targets)
        .map(|m| (scenario.priors[m].mean().clone(), scenario.priors[m].cov().clone()))
        .collect();

    for t in 1..=cfg.n_steps {
        for target in 0..n_targets as TargetId {
            let m = target as usize;
            central[m].step(scenario, target, t)?;
            let central_post = central[m].window.posterior().clone();
            let (central_mean_t, central_cov_t) = central_post.marginal(t)?;
            let truth = &scenario.truths[m][t];
            let central_info_trace = linalg::spd_inverse(central_post.cov(), "central posterior")?
                .trace();

            // Prediction-only prior (seeds late local-only joiners).
            {
                let (pm, pc) = &pred_priors[m];
                let (nm, nc) = kalman_step(
                    pm,
                    pc,
                    &scenario.estimator_dynamics,
                    &JointMeasurement::empty(4, t),
                )?;
                pred_priors[m] = (nm, nc);
            }

            if method == Method::Centralized {
                rows.push(MetricsRow {
                    run_id,
                    t,
                    method,
                    target_id: target,
                    sensor: None,
                    mse_to_centralized: 0.0,
                    mse_to_truth: position_sq_err(&central_mean_t, &truth.x),
                    trace_cov: central_cov_t.trace(),
                    cum_bits: ledger.total_bits(),
                });
                continue;
            }

            let members = &scenario.window_members[m][t - 1];
            if members.is_empty() {
                // Target unobserved over the whole window: distributed tracks
                // go dormant and are re-acquired later.
                drwt_tracks[m] = None;
                ckf_tracks[m] = None;
                local_tracks[m].clear();
                diagnostics.dormant_steps += 1;
                continue;
            }
            let subgraph = scenario.graphs[t].relevant_subgraph(target, members);
            if !subgraph.graph.is_connected() {
                diagnostics.disconnected_steps += 1;
            }
            let next_members = if t < cfg.n_steps {
                scenario.window_members[m][t].clone()
            } else {
                members.clone()
            };
            let observations = scenario.observation_map(target, t);

            match method {
                Method::Drwt => {
                    let needs_birth = match &drwt_tracks[m] {
                        Some(tracker) => tracker.prior_span().1 + 1 != t,
                        None => true,
                    };
                    if needs_birth {
                        let prior = if t == 1 {
                            scenario.priors[m].clone()
                        } else {
                            diagnostics.rebirths += 1;
                            rebirth_prior(scenario, target, t)?
                        };
                        drwt_tracks[m] =
                            Some(TargetTracker::new(&prior, members, window_steps, drwt_cfg)?);
                    }
                    let tracker = drwt_tracks[m].as_mut().unwrap();
                    let inputs = DrwtStepInputs {
                        t,
                        subgraph: &subgraph.graph,
                        dynamics: &scenario.estimator_dynamics,
                        observations: &observations,
                        next_members: &next_members,
                    };
                    let (out, next_round) = tracker.step(&inputs, &mut ledger, round)?;
                    round = next_round;
                    diagnostics.handoffs += out.handoffs.len();
                    diagnostics.dropped_info += out.dropped_info;

                    let mut fused_info =
                        DMatrix::zeros(out.info_sum_before_handoff.nrows(), out.info_sum_before_handoff.ncols());
                    fused_info.copy_from(&out.info_sum_before_handoff);
                    let mut sum_mse_c = 0.0;
                    let mut sum_mse_t = 0.0;
                    for (id, est) in &out.estimates {
                        let mean_t = est.marginal_mean(t)?;
                        let mse_c = position_sq_err(&mean_t, &central_mean_t);
                        let mse_t = position_sq_err(&mean_t, &truth.x);
                        sum_mse_c += mse_c;
                        sum_mse_t += mse_t;
                        let trace_cov = match est.to_gaussian() {
                            Ok(g) => g.marginal(t)?.1.trace(),
                            Err(_) => f64::INFINITY,
                        };
                        rows.push(MetricsRow {
                            run_id,
                            t,
                            method,
                            target_id: target,
                            sensor: Some(*id),
                            mse_to_centralized: mse_c,
                            mse_to_truth: mse_t,
                            trace_cov,
                            cum_bits: ledger.total_bits(),
                        });
                        // One band per member, when the spans line up with
                        // the centralized window.
                        if est.first == central_post.first() && est.last == central_post.last() {
                            info_bands.push(InfoBandRow {
                                run_id,
                                t,
                                target_id: target,
                                sensor: *id,
                                info_trace: est.info.trace(),
                                central_info_trace,
                            });
                        }
                    }
                    let n_members = out.estimates.len() as f64;
                    let fused_trace = match linalg::spd_inverse(&fused_info, "fused info") {
                        Ok(cov) => {
                            let n = 4;
                            let dim = cov.nrows();
                            cov.view((dim - n, dim - n), (n, n)).trace()
                        }
                        Err(_) => f64::INFINITY,
                    };
                    rows.push(MetricsRow {
                        run_id,
                        t,
                        method,
                        target_id: target,
                        sensor: None,
                        mse_to_centralized: sum_mse_c / n_members,
                        mse_to_truth: sum_mse_t / n_members,
                        trace_cov: fused_trace,
                        cum_bits: ledger.total_bits(),
                    });
                }
                Method::Ckf => {
                    let needs_birth = match &ckf_tracks[m] {
                        Some(tr) => tr.priors().values().next().map(|g| g.last() + 1) != Some(t),
                        None => true,
                    };
                    if needs_birth {
                        let prior = if t == 1 {
                            scenario.priors[m].clone()
                        } else {
                            diagnostics.rebirths += 1;
                            rebirth_prior(scenario, target, t)?
                        };
                        ckf_tracks[m] = Some(CkfTracker::new(
                            &prior,
                            members,
                            window_steps,
                            cfg.ckf_rounds,
                            cfg.connectivity,
                        )?);
                    }
                    let tracker = ckf_tracks[m].as_mut().unwrap();
                    let inputs = CkfTrackerInputs {
                        t,
                        subgraph: &subgraph.graph,
                        dynamics: &scenario.estimator_dynamics,
                        observations: &observations,
                        next_members: &next_members,
                    };
                    let (estimates, next_round) = tracker.step(&inputs, target, &mut ledger, round)?;
                    round = next_round;
                    let mut sum_mse_c = 0.0;
                    let mut sum_mse_t = 0.0;
                    let mut sum_trace = 0.0;
                    for (id, est) in &estimates {
                        let (mean_t, cov_t) = est.marginal(t)?;
                        let mse_c = position_sq_err(&mean_t, &central_mean_t);
                        let mse_t = position_sq_err(&mean_t, &truth.x);
                        sum_mse_c += mse_c;
                        sum_mse_t += mse_t;
                        sum_trace += cov_t.trace();
                        rows.push(MetricsRow {
                            run_id,
                            t,
                            method,
                            target_id: target,
                            sensor: Some(*id),
                            mse_to_centralized: mse_c,
                            mse_to_truth: mse_t,
                            trace_cov: cov_t.trace(),
                            cum_bits: ledger.total_bits(),
                        });
                    }
                    let k = estimates.len() as f64;
                    rows.push(MetricsRow {
                        run_id,
                        t,
                        method,
                        target_id: target,
                        sensor: None,
                        mse_to_centralized: sum_mse_c / k,
                        mse_to_truth: sum_mse_t / k,
                        trace_cov: sum_trace / k,
                        cum_bits: ledger.total_bits(),
                    });
                }
                Method::LocalOnly => {
                    local_tracks[m].retain(|id, _| members.contains(id));
                    let mut sum_mse_c = 0.0;
                    let mut sum_mse_t = 0.0;
                    let mut sum_trace = 0.0;
                    let member_list: Vec<SensorId> = members.iter().copied().collect();
                    for &id in &member_list {
                        if !local_tracks[m].contains_key(&id) {
                            let prior = if t == 1 {
                                scenario.priors[m].clone()
                            } else {
                                let (pm, pc) = &pred_priors[m];
                                // The prediction prior is already advanced to t,
                                // so rewinding one step keeps spans aligned.
                                WindowGaussian::single(t - 1, pm.clone(), pc.clone())?
                            };
                            local_tracks[m].insert(id, RollingWindow::new(prior, window_steps)?);
                        }
                        let window = local_tracks[m].get_mut(&id).unwrap();
                        let own: Vec<(&SensorModel, &Measurement)> = scenario.observations[m][t - 1]
                            .iter()
                            .filter(|meas| meas.sensor_id == id)
                            .map(|meas| (&scenario.sensors[id as usize], meas))
                            .collect();
                        let joint = JointMeasurement::stack(4, t, &own)?;
                        window.step(&scenario.estimator_dynamics, &joint)?;
                        let (mean_t, cov_t) = window.posterior().marginal(t)?;
                        let mse_c = position_sq_err(&mean_t, &central_mean_t);
                        let mse_t = position_sq_err(&mean_t, &truth.x);
                        sum_mse_c += mse_c;
                        sum_mse_t += mse_t;
                        sum_trace += cov_t.trace();
                        rows.push(MetricsRow {
                            run_id,
                            t,
                            method,
                            target_id: target,
                            sensor: Some(id),
                            mse_to_centralized: mse_c,
                            mse_to_truth: mse_t,
                            trace_cov: cov_t.trace(),
                            cum_bits: ledger.total_bits(),
                        });
                    }
                    let k = member_list.len() as f64;
                    rows.push(MetricsRow {
                        run_id,
                        t,
                        method,
                        target_id: target,
                        sensor: None,
                        mse_to_centralized: sum_mse_c / k,
                        mse_to_truth: sum_mse_t / k,
                        trace_cov: sum_trace / k,
                        cum_bits: ledger.total_bits(),
                    });
                }
                Method::Centralized => unreachable!(),
            }
        }
    }

    Ok(EpisodeOutput {
        rows,
        info_bands,
        ledger,
        diagnostics,
    })
}

/// Small helper shared by tests and the verification suite: every member set
/// of a scenario target, per step.
pub fn member_counts(scenario: &Scenario, target: TargetId) -> Vec<usize> {
    scenario.window_members[target as usize]
        .iter()
        .map(BTreeSet::len)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ScenarioConfig;
    use crate::harness::scenario::generate_scenario;

    fn tiny_scenario(seed: u64) -> Scenario {
        let cfg = ScenarioConfig {
            n_sensors: 5,
            n_targets: 1,
            area_m: 60.0,
            comm_radius_m: 60.0,
            sensing_radius_m: 80.0,
            dropout_prob: 0.1,
            n_steps: 6,
            window_seconds: 0.75,
            rate_hz: 4.0,
            drwt_iters: 8,
            ckf_rounds: 8,
            ..Default::default()
        };
        generate_scenario(&cfg, seed).unwrap()
    }

    #[test]
    fn centralized_rows_have_zero_oracle_error() {
        let scenario = tiny_scenario(1);
        let out = run_episode(&scenario, Method::Centralized, 0).unwrap();
        assert!(!out.rows.is_empty());
        for row in &out.rows {
            assert_eq!(row.mse_to_centralized, 0.0);
            assert!(row.mse_to_truth.is_finite());
            assert!(row.trace_cov > 0.0);
        }
        assert_eq!(out.ledger.total_bits(), 0);
    }

    #[test]
    fn drwt_episode_produces_member_rows_and_bands() {
        let scenario = tiny_scenario(2);
        let out = run_episode(&scenario, Method::Drwt, 0).unwrap();
        let agg: Vec<&MetricsRow> = out.rows.iter().filter(|r| r.sensor.is_none()).collect();
        assert!(!agg.is_empty());
        assert!(out.ledger.total_bits() > 0);
        assert!(!out.info_bands.is_empty());
        // Bits totals are monotone along the row stream.
        let mut last = 0;
        for row in &out.rows {
            assert!(row.cum_bits >= last);
            last = row.cum_bits;
        }
    }

    #[test]
    fn local_only_single_member_matches_centralized() {
        // One sensor, always observing: local-only degenerates to the
        // centralized estimator.
        let cfg = ScenarioConfig {
            n_sensors: 1,
            n_targets: 1,
            area_m: 40.0,
            comm_radius_m: 50.0,
            sensing_radius_m: 1e9,
            dropout_prob: 0.0,
            n_steps: 5,
            window_seconds: 0.5,
            rate_hz: 4.0,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg, 3).unwrap();
        let out = run_episode(&scenario, Method::LocalOnly, 0).unwrap();
        for row in out.rows.iter().filter(|r| r.sensor.is_some()) {
            assert!(row.mse_to_centralized < 1e-18, "err={}", row.mse_to_centralized);
        }
    }

    #[test]
    fn methods_are_deterministic_per_seed() {
        let scenario = tiny_scenario(4);
        for method in [Method::Drwt, Method::Ckf, Method::LocalOnly] {
            let a = run_episode(&scenario, method, 0).unwrap();
            let b = run_episode(&scenario, method, 0).unwrap();
            assert_eq!(a.rows.len(), b.rows.len());
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                assert_eq!(ra.mse_to_truth.to_bits(), rb.mse_to_truth.to_bits());
                assert_eq!(ra.cum_bits, rb.cum_bits);
            }
        }
    }
}
