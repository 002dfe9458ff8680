use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::central::{
    assemble_block_system, solve_map_window, JointMeasurement, RollingWindow, WindowGaussian,
};
use crate::linalg::{random_spd, rel_err_mat, rel_err_vec, standard_normal_vector};
use crate::models::{self, Measurement, SensorModel, TargetState};
use crate::netgraph::{CommGraph, CommLedger, DEFAULT_BITS_PER_SCALAR};

fn ledger() -> CommLedger {
    CommLedger::new(DEFAULT_BITS_PER_SCALAR)
}

/// One-timestep problem on a given graph: a shared single-step central prior,
/// position sensors, and one measurement per sensor.
struct OneStepProblem {
    dynamics: models::LinearDynamics,
    central_prior: WindowGaussian,
    sensors: Vec<SensorModel>,
    measurements: Vec<Measurement>,
    graph: CommGraph,
}

impl OneStepProblem {
    fn random(seed: u64, graph: CommGraph) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let dynamics = models::double_integrator(1.0, 2.0).unwrap();
        let central_prior = WindowGaussian::single(
            0,
            standard_normal_vector(4, &mut rng),
            random_spd(4, &mut rng),
        )
        .unwrap();
        let truth = TargetState::new(standard_normal_vector(4, &mut rng), 1);
        let mut sensors = Vec::new();
        let mut measurements = Vec::new();
        for id in graph.vertices() {
            let sensor = models::position_sensor(id, 0.7).unwrap();
            let meas = models::observe(&truth, &sensor, 0, &mut rng).unwrap();
            sensors.push(sensor);
            measurements.push(meas);
        }
        Self {
            dynamics,
            central_prior,
            sensors,
            measurements,
            graph,
        }
    }

    fn centralized(&self) -> WindowGaussian {
        let parts: Vec<(&SensorModel, &Measurement)> = self
            .sensors
            .iter()
            .zip(&self.measurements)
            .map(|(s, m)| (s, m))
            .collect();
        let joint = JointMeasurement::stack(4, 1, &parts).unwrap();
        solve_map_window(&assemble_block_system(&self.central_prior, &self.dynamics, &joint).unwrap())
            .unwrap()
    }

    fn members(&self) -> BTreeSet<SensorId> {
        self.graph.vertices().collect()
    }

    fn agents(&self, rho: f64) -> BTreeMap<SensorId, AgentState> {
        let members = self.members();
        let split = split_prior(&self.central_prior, &members).unwrap();
        let mut agents = BTreeMap::new();
        for (idx, &id) in members.iter().enumerate() {
            let prior = AgentPrior::from_gaussian(&split[&id]).unwrap();
            let agent = AgentState::init(
                id,
                &prior,
                0,
                1,
                &self.dynamics,
                members.len(),
                Some((&self.sensors[idx], &self.measurements[idx])),
                rho,
                self.graph.degree(id).unwrap(),
            )
            .unwrap();
            agents.insert(id, agent);
        }
        agents
    }
}

fn random_connected_graph(seed: u64, n: usize, extra: usize) -> CommGraph {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for v in 1..n as SensorId {
        edges.push((rng.random_range(0..v), v));
    }
    let mut added = 0;
    while added < extra {
        let i = rng.random_range(0..n as SensorId);
        let j = rng.random_range(0..n as SensorId);
        if i != j {
            edges.push((i.min(j), i.max(j)));
            added += 1;
        }
    }
    CommGraph::new(1, 0..n as SensorId, edges).unwrap()
}

#[test]
fn split_prior_single_member_is_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let prior =
        WindowGaussian::single(0, standard_normal_vector(4, &mut rng), random_spd(4, &mut rng))
            .unwrap();
    let members: BTreeSet<SensorId> = [7].into();
    let split = split_prior(&prior, &members).unwrap();
    assert_eq!(split[&7].mean(), prior.mean());
    assert!(rel_err_mat(split[&7].cov(), prior.cov()) < 1e-15);
}

#[test]
fn split_prior_information_reconstructs() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let prior =
        WindowGaussian::single(0, standard_normal_vector(4, &mut rng), random_spd(4, &mut rng))
            .unwrap();
    let members: BTreeSet<SensorId> = [0, 1, 2, 3].into();
    let split = split_prior(&prior, &members).unwrap();
    let mut info_sum = DMatrix::zeros(4, 4);
    for g in split.values() {
        info_sum += crate::linalg::spd_inverse(g.cov(), "split").unwrap();
    }
    let central_info = crate::linalg::spd_inverse(prior.cov(), "central").unwrap();
    assert!(rel_err_mat(&info_sum, &central_info) < 1e-12);
}

#[test]
fn split_prior_rejects_empty_membership() {
    let prior = WindowGaussian::single(0, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    assert!(split_prior(&prior, &BTreeSet::new()).is_err());
}

#[test]
fn single_agent_init_equals_centralized() {
    let g = CommGraph::new(1, [0], []).unwrap();
    let problem = OneStepProblem::random(3, g);
    let central = problem.centralized();
    let agents = problem.agents(1.0);
    let agent = &agents[&0];
    assert!(rel_err_vec(agent.iterate(), central.mean()) < 1e-10);
    assert_eq!(agent.dual(), &DVector::zeros(8));
}

#[test]
fn init_without_measurement_is_prediction() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let dynamics = models::double_integrator(0.25, 0.8).unwrap();
    let mean = standard_normal_vector(4, &mut rng);
    let info = crate::linalg::spd_inverse(&random_spd(4, &mut rng), "p").unwrap();
    let prior = AgentPrior {
        mean: mean.clone(),
        info,
    };
    let agent = AgentState::init(0, &prior, 0, 1, &dynamics, 3, None, 1.0, 0).unwrap();
    // With no measurement the local optimum keeps the prior and predicts.
    let expected_tail = dynamics.a() * &mean;
    assert!(rel_err_vec(&agent.iterate().rows(0, 4).into_owned(), &mean) < 1e-9);
    assert!(rel_err_vec(&agent.iterate().rows(4, 4).into_owned(), &expected_tail) < 1e-9);
}

#[test]
fn dual_update_fixed_when_iterates_agree() {
    let g = CommGraph::new(1, [0, 1], [(0, 1)]).unwrap();
    let problem = OneStepProblem::random(5, g);
    let mut agents = problem.agents(1.0);
    let shared = agents[&0].iterate().clone();
    for agent in agents.values_mut() {
        agent.inject(shared.clone(), DVector::zeros(8)).unwrap();
    }
    let nbr = [&shared];
    agents.get_mut(&0).unwrap().dual_update(&nbr[..], 1.0).unwrap();
    assert_eq!(agents[&0].dual(), &DVector::zeros(8));
}

#[test]
fn dual_update_antisymmetric_two_agents() {
    let g = CommGraph::new(1, [0, 1], [(0, 1)]).unwrap();
    let problem = OneStepProblem::random(6, g);
    let mut agents = problem.agents(0.7);
    let x0 = agents[&0].iterate().clone();
    let x1 = agents[&1].iterate().clone();
    let d = &x0 - &x1;

    agents.get_mut(&0).unwrap().dual_update(&[&x1], 0.7).unwrap();
    agents.get_mut(&1).unwrap().dual_update(&[&x0], 0.7).unwrap();
    assert!(rel_err_vec(agents[&0].dual(), &(&d * 0.7)) < 1e-14);
    assert!(rel_err_vec(agents[&1].dual(), &(&d * -0.7)) < 1e-14);
    let sum = agents[&0].dual() + agents[&1].dual();
    assert!(sum.amax() < 1e-14);
}

#[test]
fn duals_sum_to_zero_across_rounds() {
    let g = random_connected_graph(7, 8, 10);
    let problem = OneStepProblem::random(7, g.clone());
    let mut agents = problem.agents(1.3);
    let cfg = DrwtConfig {
        rho: 1.3,
        max_iters: 1,
        ..Default::default()
    };
    let mut led = ledger();
    for round in 0..50 {
        admm_round(&mut agents, &g, &cfg, &mut led, round).unwrap();
        let mut sum = DVector::zeros(8);
        let mut scale = 0.0f64;
        for a in agents.values() {
            sum += a.dual();
            scale = scale.max(a.dual().amax());
        }
        assert!(sum.amax() <= 1e-10 * scale.max(1.0), "round {round}: dual sum drifted");
    }
}

#[test]
fn primal_update_without_neighbors_is_local_map() {
    let g = CommGraph::new(1, [0], []).unwrap();
    let problem = OneStepProblem::random(8, g);
    for rho in [0.1, 1.0, 50.0] {
        let mut agents = problem.agents(rho);
        let agent = agents.get_mut(&0).unwrap();
        let x0 = agent.iterate().clone();
        agent.primal_update_dense(&[], rho).unwrap();
        assert!(rel_err_vec(agent.iterate(), &x0) < 1e-12, "rho={rho}");
    }
}

#[test]
fn lemma_fixed_point_is_stationary() {
    for seed in 0..10 {
        let g = random_connected_graph(100 + seed, 6, 6);
        let problem = OneStepProblem::random(100 + seed, g.clone());
        let central = problem.centralized();
        let mut agents = problem.agents(1.0);

        // Inject the centralized mean and the matching stationary duals.
        let mut dual_sum = DVector::zeros(8);
        for agent in agents.values_mut() {
            let p_star = agent.local_rhs() - agent.local_info() * central.mean();
            dual_sum += &p_star;
            agent.inject(central.mean().clone(), p_star).unwrap();
        }
        assert!(dual_sum.amax() < 1e-9, "stationary duals must sum to zero");

        let cfg = DrwtConfig {
            rho: 1.0,
            max_iters: 1,
            primal_update: PrimalUpdate::Dense,
            ..Default::default()
        };
        let mut led = ledger();
        let residual = admm_round(&mut agents, &g, &cfg, &mut led, 0).unwrap();
        for agent in agents.values() {
            assert!(
                rel_err_vec(agent.iterate(), central.mean()) < 1e-10,
                "seed {seed}: saddle point moved"
            );
        }
        assert!(residual < 1e-9 * central.mean().amax().max(1.0));
    }
}

#[test]
fn primal_update_matches_generic_quadratic_solver() {
    // Independent oracle: evaluate the local objective
    //   f(x) = 0.5 (Hx - z)' W^-1 (Hx - z) + x'p + rho * sum_j |x - (xi + xj)/2|^2
    // as a black box, recover its Hessian and gradient by exact quadratic
    // differencing, and solve with LU.
    let g = CommGraph::new(1, [0, 1, 2], [(0, 1), (0, 2)]).unwrap();
    let problem = OneStepProblem::random(9, g);
    let mut agents = problem.agents(0.8);
    let rho = 0.8;

    let members = problem.members();
    let split = split_prior(&problem.central_prior, &members).unwrap();
    let prior0 = &split[&0];

    // Test-side dense H, W, z for agent 0 (window of two blocks).
    let n = 4;
    let dim = 8;
    let n_members = 3.0;
    let sensor = &problem.sensors[0];
    let m = sensor.meas_dim();
    let rows = n + m + n;
    let mut h = DMatrix::zeros(rows, dim);
    h.view_mut((0, 0), (n, n)).copy_from(&(-problem.dynamics.a()));
    h.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    h.view_mut((n, n), (m, n)).copy_from(sensor.c());
    h.view_mut((n + m, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    let mut w = DMatrix::zeros(rows, rows);
    w.view_mut((0, 0), (n, n))
        .copy_from(&(problem.dynamics.q() * n_members));
    w.view_mut((n, n), (m, m)).copy_from(sensor.r());
    w.view_mut((n + m, n + m), (n, n)).copy_from(prior0.cov());
    let mut z = DVector::zeros(rows);
    z.rows_mut(n, m).copy_from(&problem.measurements[0].y);
    z.rows_mut(n + m, n).copy_from(prior0.mean());
    let w_inv = crate::linalg::spd_inverse(&w, "test W").unwrap();

    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let p = standard_normal_vector(dim, &mut rng);
    let x_own = agents[&0].iterate().clone();
    let x_n1 = standard_normal_vector(dim, &mut rng);
    let x_n2 = standard_normal_vector(dim, &mut rng);
    let mids = [(&x_own + &x_n1) * 0.5, (&x_own + &x_n2) * 0.5];

    let objective = |x: &DVector<f64>| -> f64 {
        let r = &h * x - &z;
        let mut f = 0.5 * (r.transpose() * &w_inv * &r)[(0, 0)];
        f += (x.transpose() * &p)[(0, 0)];
        for mid in &mids {
            f += rho * (x - mid).norm_squared();
        }
        f
    };

    // Exact differencing for a quadratic.
    let zero = DVector::zeros(dim);
    let f0 = objective(&zero);
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    let unit = |i: usize| {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        e
    };
    for i in 0..dim {
        let ei = unit(i);
        grad[i] = (objective(&ei) - objective(&(-&ei))) / 2.0;
        for j in 0..dim {
            let ej = unit(j);
            hess[(i, j)] = objective(&(&ei + &ej)) - objective(&ei) - objective(&ej) + f0;
        }
    }
    let oracle_x = hess.lu().solve(&(-grad)).unwrap();

    // Implementation path.
    let agent = agents.get_mut(&0).unwrap();
    agent.inject(x_own.clone(), p.clone()).unwrap();
    agent.primal_update_dense(&[&x_n1, &x_n2], rho).unwrap();
    assert!(
        rel_err_vec(agent.iterate(), &oracle_x) < 1e-9,
        "err={}",
        rel_err_vec(agent.iterate(), &oracle_x)
    );
}

#[test]
fn fast_primal_matches_dense() {
    for seed in 0..20 {
        let g = random_connected_graph(200 + seed, 5, 4);
        let problem = OneStepProblem::random(200 + seed, g.clone());
        let mut dense_agents = problem.agents(1.0);
        let mut fast_agents = problem.agents(1.0);

        let mut led = ledger();
        let cfg_dense = DrwtConfig {
            primal_update: PrimalUpdate::Dense,
            max_iters: 1,
            ..Default::default()
        };
        let cfg_fast = DrwtConfig {
            primal_update: PrimalUpdate::Fast,
            max_iters: 1,
            ..Default::default()
        };
        for round in 0..5 {
            admm_round(&mut dense_agents, &g, &cfg_dense, &mut led, round).unwrap();
            admm_round(&mut fast_agents, &g, &cfg_fast, &mut led, round).unwrap();
        }
        for id in dense_agents.keys() {
            assert!(
                rel_err_vec(fast_agents[id].iterate(), dense_agents[id].iterate()) < 1e-10,
                "seed {seed}"
            );
        }
    }
}

#[test]
fn two_agents_converge_to_centralized() {
    let g = CommGraph::new(1, [0, 1], [(0, 1)]).unwrap();
    let problem = OneStepProblem::random(10, g.clone());
    let central = problem.centralized();
    let mut agents = problem.agents(1.0);
    let cfg = DrwtConfig {
        rho: 1.0,
        max_iters: 1,
        ..Default::default()
    };
    let mut led = ledger();
    for round in 0..200 {
        admm_round(&mut agents, &g, &cfg, &mut led, round).unwrap();
    }
    for agent in agents.values() {
        assert!(rel_err_vec(agent.iterate(), central.mean()) < 1e-6);
    }
}

#[test]
fn residuals_shrink_on_random_graphs() {
    for seed in 0..8 {
        let g = random_connected_graph(300 + seed, 7, 8);
        let problem = OneStepProblem::random(300 + seed, g.clone());
        let mut agents = problem.agents(1.0);
        let cfg = DrwtConfig {
            max_iters: 1,
            ..Default::default()
        };
        let mut led = ledger();
        let mut first = 0.0;
        let mut last = 0.0;
        for round in 0..150 {
            last = admm_round(&mut agents, &g, &cfg, &mut led, round).unwrap();
            if round == 0 {
                first = last;
            }
            assert!(last.is_finite());
        }
        assert!(
            last < 1e-4 * first.max(1e-9),
            "seed {seed}: residual {first} -> {last}"
        );
    }
}

#[test]
fn admm_round_rejects_disconnected_subgraph() {
    let g = CommGraph::new(1, [0, 1], []).unwrap();
    let problem = OneStepProblem::random(11, g.clone());
    let mut agents = problem.agents(1.0);
    let cfg = DrwtConfig::default();
    let mut led = ledger();
    assert!(matches!(
        admm_round(&mut agents, &g, &cfg, &mut led, 0),
        Err(Error::Disconnected { .. })
    ));
}

#[test]
fn stale_factorization_detected() {
    let g = CommGraph::new(1, [0, 1], [(0, 1)]).unwrap();
    let problem = OneStepProblem::random(12, g);
    let mut agents = problem.agents(1.0);
    let x1 = agents[&1].iterate().clone();
    let agent = agents.get_mut(&0).unwrap();
    // rho changed after init.
    assert!(matches!(
        agent.dual_update(&[&x1], 2.0),
        Err(Error::StaleFactorization(_))
    ));
    // neighbor count changed after init.
    assert!(matches!(
        agent.primal_update_dense(&[], 1.0),
        Err(Error::StaleFactorization(_))
    ));
}

#[test]
fn handoff_zero_information_leaves_receiver_unchanged() {
    let g = CommGraph::new(1, [0, 1], [(0, 1)]).unwrap();
    let problem = OneStepProblem::random(13, g.clone());
    let mut agents = problem.agents(1.0);
    let before = agents[&1].local_info().clone();
    let zero = DMatrix::zeros(8, 8);
    agents.get_mut(&1).unwrap().absorb_information(&zero).unwrap();
    assert_eq!(agents[&1].local_info(), &before);
}

#[test]
fn handoff_equal_information_doubles() {
    let g = CommGraph::new(1, [0, 1], [(0, 1)]).unwrap();
    let problem = OneStepProblem::random(14, g.clone());
    let mut agents = problem.agents(1.0);
    let info = agents[&1].local_info().clone();
    agents.get_mut(&1).unwrap().absorb_information(&info).unwrap();
    assert!(rel_err_mat(agents[&1].local_info(), &(&info * 2.0)) < 1e-15);
    // Fused covariance trace halves when the information doubles.
    let cov_before = crate::linalg::spd_inverse(&info, "before").unwrap();
    let cov_after = crate::linalg::spd_inverse(agents[&1].local_info(), "after").unwrap();
    assert!((cov_after.trace() - 0.5 * cov_before.trace()).abs() < 1e-10 * cov_before.trace());
}

#[test]
fn handoff_conserves_network_information() {
    let g = random_connected_graph(15, 5, 5);
    let problem = OneStepProblem::random(15, g.clone());
    let mut agents = problem.agents(1.0);

    let total_before: DMatrix<f64> = agents.values().map(|a| a.local_info().clone()).sum();
    // Sensor with the highest id leaves; lowest-id continuing neighbor receives.
    let leaver_id = *agents.keys().last().unwrap();
    let receiver_id = *g
        .neighbors(leaver_id)
        .unwrap()
        .iter()
        .next()
        .expect("connected graph has a neighbor");
    let leaver = agents[&leaver_id].clone();
    let mut led = ledger();
    handoff(&leaver, agents.get_mut(&receiver_id).unwrap(), &g, &mut led, 0).unwrap();
    agents.remove(&leaver_id);

    let total_after: DMatrix<f64> = agents.values().map(|a| a.local_info().clone()).sum();
    assert!(rel_err_mat(&total_after, &total_before) < 1e-12);
    // Ledger charged the symmetric-matrix payload.
    assert_eq!(led.entries().len(), 1);
    assert_eq!(led.entries()[0].scalars, 8 * 9 / 2);
}

#[test]
fn marginalization_matches_covariance_shift_when_invertible() {
    let mut rng = ChaCha12Rng::seed_from_u64(16);
    // Block-tridiagonal SPD information over 3 blocks of size 2.
    let (m, _, _) = super::tridiag::tests::random_block_tridiag(3, 2, &mut rng);
    let mean = standard_normal_vector(6, &mut rng);
    let (info_shift, mean_shift) = marginalize_first_block(&m, &mean, 2).unwrap();

    let cov = crate::linalg::spd_inverse(&m, "m").unwrap();
    let cov_block = cov.view((2, 2), (4, 4)).into_owned();
    let expect_info = crate::linalg::spd_inverse(&cov_block, "block").unwrap();
    assert!(rel_err_mat(&info_shift, &expect_info) < 1e-9);
    assert_eq!(mean_shift, mean.rows(2, 4).into_owned());
}

#[test]
fn marginalization_of_zero_information_is_zero() {
    let info = DMatrix::zeros(6, 6);
    let mean = DVector::zeros(6);
    let (shifted, _) = marginalize_first_block(&info, &mean, 2).unwrap();
    assert_eq!(shifted, DMatrix::zeros(4, 4));
}

/// Multi-step single-agent run must match the centralized rolling window
/// exactly (the distributed problem degenerates to the centralized one).
#[test]
fn single_agent_trajectory_matches_centralized() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let dynamics = models::double_integrator(0.25, 0.5).unwrap();
    let sensor = models::position_sensor(0, 0.8).unwrap();
    let window_steps = 2;

    let prior = WindowGaussian::single(
        0,
        DVector::from_vec(vec![0.0, 0.0, 1.0, -0.5]),
        DMatrix::identity(4, 4) * 3.0,
    )
    .unwrap();
    let members: BTreeSet<SensorId> = [0].into();
    let cfg = DrwtConfig {
        max_iters: 3,
        ..Default::default()
    };
    let mut tracker = TargetTracker::new(&prior, &members, window_steps, cfg).unwrap();
    let mut central = RollingWindow::new(prior.clone(), window_steps).unwrap();

    let mut truth = TargetState::new(prior.mean().clone(), 0);
    let g = CommGraph::new(0, [0], []).unwrap();
    let mut led = ledger();
    let mut round = 0;
    for t in 1..=8 {
        truth = models::propagate(&truth, &dynamics, &mut rng).unwrap();
        let meas = models::observe(&truth, &sensor, 0, &mut rng).unwrap();

        let joint = JointMeasurement::stack(4, t, &[(&sensor, &meas)]).unwrap();
        central.step(&dynamics, &joint).unwrap();

        let mut observations = BTreeMap::new();
        observations.insert(0, (&sensor, &meas));
        let inputs = DrwtStepInputs {
            t,
            subgraph: &g,
            dynamics: &dynamics,
            observations: &observations,
            next_members: &members,
        };
        let (out, next_round) = tracker.step(&inputs, &mut led, round).unwrap();
        round = next_round;

        let est = &out.estimates[&0];
        assert!(
            rel_err_vec(&est.mean, central.posterior().mean()) < 1e-9,
            "t={t}"
        );
        let est_cov = est.to_gaussian().unwrap();
        assert!(rel_err_mat(est_cov.cov(), central.posterior().cov()) < 1e-8, "t={t}");
    }
    // Single agent never communicates.
    assert_eq!(led.total_bits(), 0);
}

/// Churn run: a sensor leaves (handing off) and a new one joins. The step
/// must succeed, conserve information through the hand-off, and keep the
/// joiner's prior at exactly zero information.
#[test]
fn tracker_handles_churn() {
    let mut rng = ChaCha12Rng::seed_from_u64(18);
    let dynamics = models::double_integrator(0.25, 0.5).unwrap();
    let sensors: Vec<SensorModel> = (0..3)
        .map(|id| models::position_sensor(id, 0.8).unwrap())
        .collect();
    let prior = WindowGaussian::single(
        0,
        DVector::from_vec(vec![0.0, 0.0, 0.5, 0.5]),
        DMatrix::identity(4, 4) * 2.0,
    )
    .unwrap();

    let members01: BTreeSet<SensorId> = [0, 1].into();
    let members12: BTreeSet<SensorId> = [1, 2].into();
    let cfg = DrwtConfig {
        max_iters: 10,
        ..Default::default()
    };
    let mut tracker = TargetTracker::new(&prior, &members01, 2, cfg).unwrap();
    let mut truth = TargetState::new(prior.mean().clone(), 0);
    let mut led = ledger();
    let mut round = 0;

    // t=1: members {0,1}; sensor 0 will leave afterwards.
    truth = models::propagate(&truth, &dynamics, &mut rng).unwrap();
    let m0 = models::observe(&truth, &sensors[0], 0, &mut rng).unwrap();
    let m1 = models::observe(&truth, &sensors[1], 0, &mut rng).unwrap();
    let g1 = CommGraph::new(1, [0, 1], [(0, 1)]).unwrap();
    let mut obs1: BTreeMap<SensorId, (&SensorModel, &Measurement)> = BTreeMap::new();
    obs1.insert(0, (&sensors[0], &m0));
    obs1.insert(1, (&sensors[1], &m1));
    let inputs1 = DrwtStepInputs {
        t: 1,
        subgraph: &g1,
        dynamics: &dynamics,
        observations: &obs1,
        next_members: &members12,
    };
    let (out1, r1) = tracker.step(&inputs1, &mut led, round).unwrap();
    round = r1;
    assert_eq!(out1.handoffs, vec![(0, 1)]);
    assert_eq!(out1.dropped_info, 0);

    // Post-hand-off prior information equals the sum of both estimates'
    // information (conservation through the fuse + shift is checked at the
    // network level in the acceptance suite; here the leaver's share must not
    // vanish).
    assert_eq!(tracker.members(), [1].into());

    // t=2: members {1,2}; 2 is a fresh joiner with zero information.
    truth = models::propagate(&truth, &dynamics, &mut rng).unwrap();
    let m1b = models::observe(&truth, &sensors[1], 0, &mut rng).unwrap();
    let m2 = models::observe(&truth, &sensors[2], 0, &mut rng).unwrap();
    let g2 = CommGraph::new(2, [1, 2], [(1, 2)]).unwrap();
    let mut obs2: BTreeMap<SensorId, (&SensorModel, &Measurement)> = BTreeMap::new();
    obs2.insert(1, (&sensors[1], &m1b));
    obs2.insert(2, (&sensors[2], &m2));
    let inputs2 = DrwtStepInputs {
        t: 2,
        subgraph: &g2,
        dynamics: &dynamics,
        observations: &obs2,
        next_members: &members12,
    };
    let (out2, _) = tracker.step(&inputs2, &mut led, round).unwrap();
    assert_eq!(out2.joiners, vec![2]);
    assert_eq!(out2.estimates.len(), 2);
    // The joiner's reported information contains no prior share, only its
    // own measurement and dynamics terms; its estimate is still finite.
    assert!(out2.estimates[&2].mean.iter().all(|v| v.is_finite()));
}

#[test]
fn random_psd_split_reaches_same_fixed_point_as_equal_split() {
    // Any prior split with the same information sum has the same consensus
    // fixed point: the centralized estimate for that summed prior.
    let g = CommGraph::new(1, [0, 1, 2], [(0, 1), (1, 2)]).unwrap();
    let problem = OneStepProblem::random(19, g.clone());
    let central = problem.centralized();
    let members = problem.members();
    let n_members = members.len();

    let mut rng = ChaCha12Rng::seed_from_u64(20);
    let central_info = crate::linalg::spd_inverse(problem.central_prior.cov(), "prior").unwrap();
    // Random SPD perturbations that cancel in the sum.
    let d01 = random_spd(4, &mut rng) * 0.05;
    let d12 = random_spd(4, &mut rng) * 0.05;
    let shares = [
        &central_info / 3.0 + &d01,
        &central_info / 3.0 - &d01 + &d12,
        &central_info / 3.0 - &d12,
    ];
    let sum: DMatrix<f64> = shares.iter().cloned().sum();
    assert!(rel_err_mat(&sum, &central_info) < 1e-12);

    let mut agents = BTreeMap::new();
    for (idx, &id) in members.iter().enumerate() {
        assert!(crate::linalg::is_spd(&shares[idx]), "share {idx} must stay SPD");
        let prior = AgentPrior {
            mean: problem.central_prior.mean().clone(),
            info: shares[idx].clone(),
        };
        let agent = AgentState::init(
            id,
            &prior,
            0,
            1,
            &problem.dynamics,
            n_members,
            Some((&problem.sensors[idx], &problem.measurements[idx])),
            1.0,
            g.degree(id).unwrap(),
        )
        .unwrap();
        agents.insert(id, agent);
    }
    let cfg = DrwtConfig {
        max_iters: 1,
        ..Default::default()
    };
    let mut led = ledger();
    for round in 0..400 {
        admm_round(&mut agents, &g, &cfg, &mut led, round).unwrap();
    }
    for agent in agents.values() {
        assert!(
            rel_err_vec(agent.iterate(), central.mean()) < 1e-6,
            "err={}",
            rel_err_vec(agent.iterate(), central.mean())
        );
    }
}
