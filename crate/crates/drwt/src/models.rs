//! Linear-Gaussian target dynamics and sensor measurement models, plus
//! ground-truth simulation of both.
//!
//! All randomness flows through an explicit caller-owned RNG so that every
//! simulated trajectory and measurement stream is reproducible from a seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::netgraph::SensorId;

/// Target identifier within a scenario.
pub type TargetId = u32;

/// A target's state vector (positions and velocities) at a timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub x: DVector<f64>,
    pub t: usize,
}

impl TargetState {
    pub fn new(x: DVector<f64>, t: usize) -> Self {
        Self { x, t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Time-invariant linear dynamics `x' = A x + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    q_chol_l: DMatrix<f64>,
}

impl LinearDynamics {
    /// Builds the model, verifying that `A` is square, `Q` matches it, and
    /// `Q` is symmetric positive definite.
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: "dynamics matrix A",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if q.nrows() != a.nrows() || q.ncols() != a.nrows() {
            return Err(Error::DimensionMismatch {
                context: "process noise Q",
                expected: a.nrows(),
                got: q.nrows(),
            });
        }
        if !is_spd_strict(&q) {
            return Err(Error::NotPositiveDefinite("process noise Q"));
        }
        let q_chol_l = linalg::cholesky(&q, "process noise Q")?.l();
        Ok(Self { a, q, q_chol_l })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Same `A` with the process noise scaled by `factor` (model-mismatch
    /// studies).
    pub fn with_scaled_q(&self, factor: f64) -> Result<Self> {
        Self::new(self.a.clone(), &self.q * factor)
    }
}

/// A sensor's linear observation model `y = C x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub sensor_id: SensorId,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    r_chol_l: DMatrix<f64>,
}

impl SensorModel {
    pub fn new(sensor_id: SensorId, c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if c.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                context: "measurement matrix C rows",
                expected: 1,
                got: 0,
            });
        }
        if r.nrows() != c.nrows() || r.ncols() != c.nrows() {
            return Err(Error::DimensionMismatch {
                context: "measurement noise R",
                expected: c.nrows(),
                got: r.nrows(),
            });
        }
        if !is_spd_strict(&r) {
            return Err(Error::NotPositiveDefinite("measurement noise R"));
        }
        let r_chol_l = linalg::cholesky(&r, "measurement noise R")?.l();
        Ok(Self {
            sensor_id,
            c,
            r,
            r_chol_l,
        })
    }

    /// Number of measured components.
    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// One sensor's observation of one target at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub sensor_id: SensorId,
    pub target_id: TargetId,
    pub t: usize,
    pub y: DVector<f64>,
}

/// Advances the state one step: `A x + w` with `w ~ N(0, Q)` drawn from `rng`.
pub fn propagate<R: Rng + ?Sized>(
    state: &TargetState,
    dynamics: &LinearDynamics,
    rng: &mut R,
) -> Result<TargetState> {
    let mut next = propagate_mean(state, dynamics)?;
    next.x += &dynamics.q_chol_l * linalg::standard_normal_vector(dynamics.state_dim(), rng);
    Ok(next)
}

/// The zero-noise propagation `A x`, for analytic tests and mean prediction.
pub fn propagate_mean(state: &TargetState, dynamics: &LinearDynamics) -> Result<TargetState> {
    if state.dim() != dynamics.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "propagate state",
            expected: dynamics.state_dim(),
            got: state.dim(),
        });
    }
    debug_assert!(linalg::is_spd(&dynamics.q), "Q lost positive definiteness");
    Ok(TargetState::new(&dynamics.a * &state.x, state.t + 1))
}

/// Observes the state: `C x + v` with `v ~ N(0, R)` drawn from `rng`.
pub fn observe<R: Rng + ?Sized>(
    state: &TargetState,
    sensor: &SensorModel,
    target_id: TargetId,
    rng: &mut R,
) -> Result<Measurement> {
    let mut meas = observe_mean(state, sensor, target_id)?;
    meas.y += &sensor.r_chol_l * linalg::standard_normal_vector(sensor.meas_dim(), rng);
    Ok(meas)
}

/// The zero-noise observation `C x`.
pub fn observe_mean(
    state: &TargetState,
    sensor: &SensorModel,
    target_id: TargetId,
) -> Result<Measurement> {
    if state.dim() != sensor.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "observe state",
            expected: sensor.state_dim(),
            got: state.dim(),
        });
    }
    debug_assert!(linalg::is_spd(&sensor.r), "R lost positive definiteness");
    Ok(Measurement {
        sensor_id: sensor.sensor_id,
        target_id,
        t: state.t,
        y: &sensor.c * &state.x,
    })
}

/// Planar double-integrator dynamics with state `[px, py, vx, vy]`.
///
/// `A = [[I, dt I], [0, I]]`; `Q` is the white-noise-acceleration
/// discretization scaled by `q_accel`.
pub fn double_integrator(dt: f64, q_accel: f64) -> Result<LinearDynamics> {
    if dt <= 0.0 {
        return Err(Error::Config(format!("double integrator needs dt > 0, got {dt}")));
    }
    if q_accel <= 0.0 {
        return Err(Error::Config(format!(
            "double integrator needs q_accel > 0, got {q_accel}"
        )));
    }
    let mut a = DMatrix::identity(4, 4);
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;

    let q_pp = q_accel * dt.powi(3) / 3.0;
    let q_pv = q_accel * dt.powi(2) / 2.0;
    let q_vv = q_accel * dt;
    let mut q = DMatrix::zeros(4, 4);
    for axis in 0..2 {
        q[(axis, axis)] = q_pp;
        q[(axis, axis + 2)] = q_pv;
        q[(axis + 2, axis)] = q_pv;
        q[(axis + 2, axis + 2)] = q_vv;
    }
    LinearDynamics::new(a, q)
}

/// Position-only planar observation `C = [I2 | 0]` with isotropic noise.
pub fn position_sensor(sensor_id: SensorId, r_std: f64) -> Result<SensorModel> {
    let mut c = DMatrix::zeros(2, 4);
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    SensorModel::new(sensor_id, c, DMatrix::identity(2, 2) * r_std * r_std)
}

fn is_spd_strict(m: &DMatrix<f64>) -> bool {
    linalg::is_spd(m) && linalg::min_eigenvalue(m) > 0.0
}
