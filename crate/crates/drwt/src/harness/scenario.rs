//! Synthetic geometric scenario: sensors on scripted loops, targets on noisy
//! double-integrator trajectories, disk communication graphs, range-limited
//! observations with i.i.d. dropout.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::bench::derive_seed;
use super::config::ScenarioConfig;
use crate::central::WindowGaussian;
use crate::error::{Error, Result};
use crate::models::{self, LinearDynamics, Measurement, SensorModel, TargetId, TargetState};
use crate::netgraph::{CommGraph, SensorId};

pub struct Scenario {
    pub cfg: ScenarioConfig,
    /// Dynamics driving the simulated targets.
    pub truth_dynamics: LinearDynamics,
    /// Dynamics used by every estimator (equals `truth_dynamics` unless
    /// `q_inflation != 1`).
    pub estimator_dynamics: LinearDynamics,
    pub sensors: Vec<SensorModel>,
    /// `sensor_positions[t][k]`, for `t = 0..=n_steps`.
    pub sensor_positions: Vec<Vec<[f64; 2]>>,
    /// Communication graph per timestep.
    pub graphs: Vec<CommGraph>,
    /// `truths[m][t]` for target `m`.
    pub truths: Vec<Vec<TargetState>>,
    /// `observations[m][t-1]`: measurements of target `m` at step `t`,
    /// ascending sensor id.
    pub observations: Vec<Vec<Vec<Measurement>>>,
    /// Instantaneous observer sets, `observers[m][t-1]`.
    pub observers: Vec<Vec<BTreeSet<SensorId>>>,
    /// Relevant members over the trailing window, `window_members[m][t-1]`.
    pub window_members: Vec<Vec<BTreeSet<SensorId>>>,
    /// Shared initial prior per target.
    pub priors: Vec<WindowGaussian>,
}

impl Scenario {
    pub fn window_steps(&self) -> usize {
        self.cfg.window_steps()
    }

    /// Observation map for (target, step) keyed by sensor id.
    pub fn observation_map(&self, target: TargetId, t: usize) -> BTreeMap<SensorId, (&SensorModel, &Measurement)> {
        self.observations[target as usize][t - 1]
            .iter()
            .map(|m| (m.sensor_id, (&self.sensors[m.sensor_id as usize], m)))
            .collect()
    }
}

/// Deterministic scripted sensor path: a circular loop around a grid cell.
fn sensor_position(cfg: &ScenarioConfig, sensor: usize, t: usize) -> [f64; 2] {
    let side = (cfg.n_sensors as f64).sqrt().ceil() as usize;
    let spacing = cfg.area_m / side as f64;
    let cell_x = (sensor % side) as f64 + 0.5;
    let cell_y = (sensor / side) as f64 + 0.5;
    let loop_radius = spacing * 0.3;
    let phase = 2.0 * std::f64::consts::PI * sensor as f64 / cfg.n_sensors.max(1) as f64;
    // One full loop takes 60 seconds of simulated time.
    let omega = 2.0 * std::f64::consts::PI / 60.0;
    let angle = phase + omega * t as f64 * cfg.dt();
    [
        cell_x * spacing + loop_radius * angle.cos(),
        cell_y * spacing + loop_radius * angle.sin(),
    ]
}

/// Generates the full deterministic scenario for `cfg` and `seed`.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let n_steps = cfg.n_steps;
    let window = cfg.window_steps();
    let dt = cfg.dt();

    let truth_dynamics = models::double_integrator(dt, cfg.q_accel)?;
    let estimator_dynamics = truth_dynamics.with_scaled_q(cfg.q_inflation)?;
    let sensors = (0..cfg.n_sensors as SensorId)
        .map(|id| models::position_sensor(id, cfg.r_std_m))
        .collect::<Result<Vec<_>>>()?;

    // Scripted sensor motion and the resulting disk graphs.
    let mut sensor_positions = Vec::with_capacity(n_steps + 1);
    let mut graphs = Vec::with_capacity(n_steps + 1);
    for t in 0..=n_steps {
        let positions: Vec<[f64; 2]> = (0..cfg.n_sensors).map(|k| sensor_position(cfg, k, t)).collect();
        let map: BTreeMap<SensorId, [f64; 2]> = positions
            .iter()
            .enumerate()
            .map(|(k, &p)| (k as SensorId, p))
            .collect();
        graphs.push(CommGraph::disk_graph(t, &map, cfg.comm_radius_m));
        sensor_positions.push(positions);
    }

    // Target trajectories.
    let mut init_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 1));
    let mut truths = Vec::with_capacity(cfg.n_targets);
    for m in 0..cfg.n_targets {
        let mut noise_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 1000 + m as u64));
        let x0 = DVector::from_vec(vec![
            init_rng.random_range(0.1..0.9) * cfg.area_m,
            init_rng.random_range(0.1..0.9) * cfg.area_m,
            init_rng.random_range(-1.0..1.0) * cfg.target_speed_mps,
            init_rng.random_range(-1.0..1.0) * cfg.target_speed_mps,
        ]);
        let mut state = TargetState::new(x0, 0);
        let mut track = vec![state.clone()];
        for _ in 1..=n_steps {
            state = models::propagate(&state, &truth_dynamics, &mut noise_rng)?;
            track.push(state.clone());
        }
        truths.push(track);
    }

    // Observations with range cutoff and dropout.
    let mut observations = vec![Vec::with_capacity(n_steps); cfg.n_targets];
    let mut observers = vec![Vec::with_capacity(n_steps); cfg.n_targets];
    for m in 0..cfg.n_targets {
        let mut meas_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 2000 + m as u64));
        for t in 1..=n_steps {
            let truth = &truths[m][t];
            let mut step_meas = Vec::new();
            let mut step_obs = BTreeSet::new();
            for (k, sensor) in sensors.iter().enumerate() {
                let sp = sensor_positions[t][k];
                let dx = truth.x[0] - sp[0];
                let dy = truth.x[1] - sp[1];
                if (dx * dx + dy * dy).sqrt() > cfg.sensing_radius_m {
                    continue;
                }
                if cfg.dropout_prob > 0.0 && meas_rng.random_range(0.0..1.0) < cfg.dropout_prob {
                    continue;
                }
                step_meas.push(models::observe(truth, sensor, m as TargetId, &mut meas_rng)?);
                step_obs.insert(sensor.sensor_id);
            }
            observations[m].push(step_meas);
            observers[m].push(step_obs);
        }
    }

    // Window membership: observers over the trailing window.
    let mut window_members = vec![Vec::with_capacity(n_steps); cfg.n_targets];
    for m in 0..cfg.n_targets {
        for t in 1..=n_steps {
            let lo = t.saturating_sub(window).max(1);
            let mut members = BTreeSet::new();
            for tau in lo..=t {
                members.extend(observers[m][tau - 1].iter().copied());
            }
            window_members[m].push(members);
        }
    }

    // Every target must be observable at least once, otherwise the scenario
    // cannot produce a single estimate row for it.
    for m in 0..cfg.n_targets {
        if observers[m].iter().all(|o| o.is_empty()) {
            return Err(Error::Scenario(format!(
                "target {m} is never observed; enlarge sensing_radius_m or lower dropout_prob"
            )));
        }
    }

    // Shared initial priors.
    let mut prior_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 3));
    let mut priors = Vec::with_capacity(cfg.n_targets);
    for m in 0..cfg.n_targets {
        let truth0 = &truths[m][0];
        let mean = DVector::from_vec(vec![
            truth0.x[0] + prior_rng.random_range(-1.0..1.0) * cfg.prior_pos_std_m,
            truth0.x[1] + prior_rng.random_range(-1.0..1.0) * cfg.prior_pos_std_m,
            truth0.x[2] + prior_rng.random_range(-1.0..1.0) * cfg.prior_vel_std_mps,
            truth0.x[3] + prior_rng.random_range(-1.0..1.0) * cfg.prior_vel_std_mps,
        ]);
        let mut cov = DMatrix::zeros(4, 4);
        cov[(0, 0)] = cfg.prior_pos_std_m * cfg.prior_pos_std_m;
        cov[(1, 1)] = cfg.prior_pos_std_m * cfg.prior_pos_std_m;
        cov[(2, 2)] = cfg.prior_vel_std_mps * cfg.prior_vel_std_mps;
        cov[(3, 3)] = cfg.prior_vel_std_mps * cfg.prior_vel_std_mps;
        priors.push(WindowGaussian::single(0, mean, cov)?);
    }

    Ok(Scenario {
        cfg: cfg.clone(),
        truth_dynamics,
        estimator_dynamics,
        sensors,
        sensor_positions,
        graphs,
        truths,
        observations,
        observers,
        window_members,
        priors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            n_sensors: 6,
            n_targets: 2,
            area_m: 120.0,
            comm_radius_m: 80.0,
            sensing_radius_m: 100.0,
            n_steps: 8,
            window_seconds: 0.5,
            rate_hz: 4.0,
            ..Default::default()
        }
    }

    #[test]
    fn infinite_radius_no_dropout_sees_everything() {
        let mut cfg = small_cfg();
        cfg.sensing_radius_m = 1e9;
        cfg.dropout_prob = 0.0;
        let s = generate_scenario(&cfg, 3).unwrap();
        for m in 0..cfg.n_targets {
            for t in 1..=cfg.n_steps {
                assert_eq!(s.observers[m][t - 1].len(), cfg.n_sensors);
            }
        }
    }

    #[test]
    fn distant_sensors_never_connect() {
        // Two sensors in far-apart grid cells with a small comm radius.
        let cfg = ScenarioConfig {
            n_sensors: 2,
            n_targets: 1,
            area_m: 1200.0,
            comm_radius_m: 200.0,
            sensing_radius_m: 1e9,
            n_steps: 6,
            window_seconds: 0.5,
            rate_hz: 4.0,
            ..Default::default()
        };
        let s = generate_scenario(&cfg, 1).unwrap();
        // Grid side is 2 and spacing 600 m, so even with the loop motion the
        // sensors never come within 200 m of each other.
        for g in &s.graphs {
            assert_eq!(g.edge_count(), 0);
        }
    }

    #[test]
    fn default_config_scale() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.window_steps(), 20);
        // Generating the full default scenario is exercised by the CLI; here
        // just confirm the scripted geometry stays inside the area bounds.
        for k in [0usize, 10, 49] {
            for t in [0usize, 20, 40] {
                let p = sensor_position(&cfg, k, t);
                assert!(p[0] > 0.0 && p[0] < cfg.area_m);
                assert!(p[1] > 0.0 && p[1] < cfg.area_m);
            }
        }
    }

    #[test]
    fn determinism_per_seed() {
        let cfg = small_cfg();
        let a = generate_scenario(&cfg, 9).unwrap();
        let b = generate_scenario(&cfg, 9).unwrap();
        assert_eq!(a.truths[1][8].x, b.truths[1][8].x);
        assert_eq!(a.observations[0][3].len(), b.observations[0][3].len());
        let c = generate_scenario(&cfg, 10).unwrap();
        assert_ne!(a.truths[1][8].x, c.truths[1][8].x);
    }

    #[test]
    fn unobservable_target_is_an_error() {
        let mut cfg = small_cfg();
        cfg.sensing_radius_m = 1e-6;
        assert!(matches!(
            generate_scenario(&cfg, 1),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn window_members_accumulate_over_window() {
        let cfg = small_cfg();
        let s = generate_scenario(&cfg, 4).unwrap();
        let window = cfg.window_steps();
        for m in 0..cfg.n_targets {
            for t in 1..=cfg.n_steps {
                let lo = t.saturating_sub(window).max(1);
                let mut expect = BTreeSet::new();
                for tau in lo..=t {
                    expect.extend(s.observers[m][tau - 1].iter().copied());
                }
                assert_eq!(s.window_members[m][t - 1], expect);
            }
        }
    }
}
