//! Centralized rolling-window MAP estimation.
//!
//! The window estimator solves, at each timestep, the normal equations of a
//! stacked linear system over the trailing window `[t-T, t]`: one dynamics row
//! linking the two newest states, one stacked measurement row at `t`, and an
//! identity band tying the older states to the window prior. Marginalizing the
//! oldest state after each solve turns the batch smoother into a constant-size
//! recursion. A standard Kalman filter and RTS smoother are included: the
//! window recursion must reproduce their combination exactly, which the test
//! suite verifies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{LinearDynamics, Measurement, SensorModel};

/// Gaussian over a contiguous span of window timesteps.
///
/// The mean stacks per-timestep state blocks oldest first; the covariance is
/// the matching dense SPD matrix.
#[derive(Debug, Clone)]
pub struct WindowGaussian {
    first: usize,
    last: usize,
    state_dim: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl WindowGaussian {
    pub fn new(
        first: usize,
        last: usize,
        state_dim: usize,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> Result<Self> {
        if last < first {
            return Err(Error::WindowTooShort("span must contain at least one timestep"));
        }
        let len = last - first + 1;
        let dim = state_dim * len;
        if mean.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "window mean",
                expected: dim,
                got: mean.len(),
            });
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch {
                context: "window covariance",
                expected: dim,
                got: cov.nrows(),
            });
        }
        debug_assert!(
            linalg::is_spd(&cov),
            "window covariance must be symmetric positive definite"
        );
        Ok(Self {
            first,
            last,
            state_dim,
            mean,
            cov,
        })
    }

    /// Single-timestep Gaussian, the usual initial prior.
    pub fn single(t: usize, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        Self::new(t, t, n, mean, cov)
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn last(&self) -> usize {
        self.last
    }

    /// Number of timesteps covered.
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Total stacked dimension.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Mean and covariance of the marginal at one covered timestep.
    pub fn marginal(&self, t: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if t < self.first || t > self.last {
            return Err(Error::SpanMismatch {
                context: "marginal",
                prior_last: self.last,
                meas_t: t,
            });
        }
        let n = self.state_dim;
        let off = (t - self.first) * n;
        Ok((
            self.mean.rows(off, n).into_owned(),
            self.cov.view((off, off), (n, n)).into_owned(),
        ))
    }
}

/// Row-wise stack of all observations of one target at one timestep.
///
/// May be empty (`meas_dim() == 0`) when nobody observed the target.
#[derive(Debug, Clone)]
pub struct JointMeasurement {
    t: usize,
    state_dim: usize,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    y: DVector<f64>,
}

impl JointMeasurement {
    /// Stacks per-sensor observations; all must share the same timestep.
    pub fn stack(state_dim: usize, t: usize, parts: &[(&SensorModel, &Measurement)]) -> Result<Self> {
        let m_total: usize = parts.iter().map(|(s, _)| s.meas_dim()).sum();
        let mut c = DMatrix::zeros(m_total, state_dim);
        let mut r = DMatrix::zeros(m_total, m_total);
        let mut y = DVector::zeros(m_total);
        let mut row = 0;
        for (sensor, meas) in parts {
            if sensor.state_dim() != state_dim {
                return Err(Error::DimensionMismatch {
                    context: "stacked measurement state dim",
                    expected: state_dim,
                    got: sensor.state_dim(),
                });
            }
            if meas.t != t {
                return Err(Error::SpanMismatch {
                    context: "stacked measurement timestep",
                    prior_last: t,
                    meas_t: meas.t,
                });
            }
            if meas.y.len() != sensor.meas_dim() {
                return Err(Error::DimensionMismatch {
                    context: "measurement vector",
                    expected: sensor.meas_dim(),
                    got: meas.y.len(),
                });
            }
            let m = sensor.meas_dim();
            c.view_mut((row, 0), (m, state_dim)).copy_from(sensor.c());
            r.view_mut((row, row), (m, m)).copy_from(sensor.r());
            y.rows_mut(row, m).copy_from(&meas.y);
            row += m;
        }
        Ok(Self {
            t,
            state_dim,
            c,
            r,
            y,
        })
    }

    /// An empty stack: no sensor observed the target at `t`.
    pub fn empty(state_dim: usize, t: usize) -> Self {
        Self {
            t,
            state_dim,
            c: DMatrix::zeros(0, state_dim),
            r: DMatrix::zeros(0, 0),
            y: DVector::zeros(0),
        }
    }

    pub fn from_parts(
        state_dim: usize,
        t: usize,
        c: DMatrix<f64>,
        r: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self> {
        if c.ncols() != state_dim || r.nrows() != c.nrows() || r.ncols() != c.nrows() || y.len() != c.nrows()
        {
            return Err(Error::DimensionMismatch {
                context: "joint measurement parts",
                expected: state_dim,
                got: c.ncols(),
            });
        }
        Ok(Self {
            t,
            state_dim,
            c,
            r,
            y,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
}

/// The stacked normal-equation system of one window step.
///
/// `H` carries three row bands: the dynamics row `[0 .. -A  I]`, the
/// measurement row `[0 .. 0  C]`, and the identity prior band `[I .. 0 | 0]`.
/// `W` is block diagonal with blocks `(Q, R, P̄)`, kept as separate blocks so
/// each is factored exactly once.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    first: usize,
    last: usize,
    state_dim: usize,
    h: DMatrix<f64>,
    z: DVector<f64>,
    w_q: DMatrix<f64>,
    w_r: DMatrix<f64>,
    w_p: DMatrix<f64>,
}

impl BlockSystem {
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    /// Dense `W` (for oracles and small problems).
    pub fn w_dense(&self) -> DMatrix<f64> {
        let n = self.w_q.nrows();
        let m = self.w_r.nrows();
        let p = self.w_p.nrows();
        let mut w = DMatrix::zeros(n + m + p, n + m + p);
        w.view_mut((0, 0), (n, n)).copy_from(&self.w_q);
        w.view_mut((n, n), (m, m)).copy_from(&self.w_r);
        w.view_mut((n + m, n + m), (p, p)).copy_from(&self.w_p);
        w
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn last(&self) -> usize {
        self.last
    }

    /// Applies `W^{-1}` to the columns of `rhs`, factoring each diagonal
    /// block once.
    fn w_inv_times(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.w_q.nrows();
        let m = self.w_r.nrows();
        let p = self.w_p.nrows();
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        let q_chol = linalg::cholesky(&self.w_q, "W block Q")?;
        out.view_mut((0, 0), (n, rhs.ncols()))
            .copy_from(&q_chol.solve(&rhs.rows(0, n).into_owned()));
        if m > 0 {
            let r_chol = linalg::cholesky(&self.w_r, "W block R")?;
            out.view_mut((n, 0), (m, rhs.ncols()))
                .copy_from(&r_chol.solve(&rhs.rows(n, m).into_owned()));
        }
        let p_chol = linalg::cholesky(&self.w_p, "W block P")?;
        out.view_mut((n + m, 0), (p, rhs.ncols()))
            .copy_from(&p_chol.solve(&rhs.rows(n + m, p).into_owned()));
        Ok(out)
    }
}

/// Builds the window system for timestep `t = prior.last() + 1` from the
/// window prior, the dynamics, and the stacked measurement at `t`.
pub fn assemble_block_system(
    prior: &WindowGaussian,
    dynamics: &LinearDynamics,
    meas: &JointMeasurement,
) -> Result<BlockSystem> {
    let n = prior.state_dim();
    if dynamics.state_dim() != n {
        return Err(Error::DimensionMismatch {
            context: "assemble dynamics",
            expected: n,
            got: dynamics.state_dim(),
        });
    }
    if meas.state_dim != n {
        return Err(Error::DimensionMismatch {
            context: "assemble measurement",
            expected: n,
            got: meas.state_dim,
        });
    }
    let t = meas.t;
    if prior.last() + 1 != t {
        return Err(Error::SpanMismatch {
            context: "assemble window",
            prior_last: prior.last(),
            meas_t: t,
        });
    }
    debug_assert!(linalg::is_spd(dynamics.q()), "Q must stay SPD");

    let prior_len = prior.len();
    let cols = n * (prior_len + 1);
    let m = meas.meas_dim();
    let prior_dim = prior.dim();
    let rows = n + m + prior_dim;

    let mut h = DMatrix::zeros(rows, cols);
    // Dynamics band: [0 ... -A  I].
    h.view_mut((0, cols - 2 * n), (n, n))
        .copy_from(&(-dynamics.a()));
    h.view_mut((0, cols - n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    // Measurement band: [0 ... 0  C].
    if m > 0 {
        h.view_mut((n, cols - n), (m, n)).copy_from(meas.c());
    }
    // Prior band: identity against the first `prior_len` blocks.
    h.view_mut((n + m, 0), (prior_dim, prior_dim))
        .copy_from(&DMatrix::identity(prior_dim, prior_dim));

    let mut z = DVector::zeros(rows);
    z.rows_mut(n, m).copy_from(meas.y());
    z.rows_mut(n + m, prior_dim).copy_from(prior.mean());

    Ok(BlockSystem {
        first: prior.first(),
        last: t,
        state_dim: n,
        h,
        z,
        w_q: dynamics.q().clone(),
        w_r: meas.r().clone(),
        w_p: prior.cov().clone(),
    })
}

/// Solves the window normal equations: mean `(HᵀW⁻¹H)⁻¹HᵀW⁻¹z`, covariance
/// `(HᵀW⁻¹H)⁻¹`, both realized through one Cholesky factorization.
pub fn solve_map_window(sys: &BlockSystem) -> Result<WindowGaussian> {
    let w_inv_h = sys.w_inv_times(&sys.h)?;
    let mut info = sys.h.transpose() * &w_inv_h;
    linalg::symmetrize(&mut info);
    let rhs = w_inv_h.transpose() * &sys.z;
    let chol = linalg::cholesky(&info, "window normal matrix")?;
    let mean = chol.solve(&rhs);
    let mut cov = chol.inverse();
    linalg::symmetrize(&mut cov);
    WindowGaussian::new(sys.first, sys.last, sys.state_dim, mean, cov)
}

/// Drops the oldest timestep of a posterior, returning the prior for the next
/// window: the retained mean and the lower-right covariance block.
pub fn shift_window(posterior: &WindowGaussian) -> Result<WindowGaussian> {
    if posterior.len() < 2 {
        return Err(Error::WindowTooShort("shift needs at least two timesteps"));
    }
    let n = posterior.state_dim();
    let keep = posterior.dim() - n;
    let mean = posterior.mean().rows(n, keep).into_owned();
    let cov = posterior.cov().view((n, n), (keep, keep)).into_owned();
    WindowGaussian::new(posterior.first() + 1, posterior.last(), n, mean, cov)
}

/// One Kalman predict-update step. With an empty measurement this is the pure
/// prediction `(A x, A P Aᵀ + Q)`.
pub fn kalman_step(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    dynamics: &LinearDynamics,
    meas: &JointMeasurement,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = dynamics.state_dim();
    if prior_mean.len() != n || prior_cov.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "kalman prior",
            expected: n,
            got: prior_mean.len(),
        });
    }
    let x_pred = dynamics.a() * prior_mean;
    let mut p_pred = dynamics.a() * prior_cov * dynamics.a().transpose() + dynamics.q();
    linalg::symmetrize(&mut p_pred);
    if meas.meas_dim() == 0 {
        return Ok((x_pred, p_pred));
    }

    let c = meas.c();
    let mut s = c * &p_pred * c.transpose() + meas.r();
    linalg::symmetrize(&mut s);
    let s_chol = nalgebra::Cholesky::new(s).ok_or(Error::Singular("innovation covariance"))?;
    // K = P Cᵀ S⁻¹, via S Kᵀ = C Pᵀ.
    let k = s_chol.solve(&(c * &p_pred)).transpose();
    let innovation = meas.y() - c * &x_pred;
    let x_post = &x_pred + &k * innovation;
    // Joseph form keeps the covariance symmetric PSD.
    let i_kc = DMatrix::identity(n, n) - &k * c;
    let mut p_post = &i_kc * p_pred * i_kc.transpose() + &k * meas.r() * k.transpose();
    linalg::symmetrize(&mut p_post);
    Ok((x_post, p_post))
}

/// Rauch-Tung-Striebel backward pass over a filtered sequence.
///
/// `transitions[k]` is the dynamics from step `k` to `k+1`. A sequence shorter
/// than two entries is returned unchanged.
pub fn rts_smooth(
    filtered: &[(DVector<f64>, DMatrix<f64>)],
    transitions: &[&LinearDynamics],
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    if filtered.len() < 2 {
        return Ok(filtered.to_vec());
    }
    if transitions.len() != filtered.len() - 1 {
        return Err(Error::DimensionMismatch {
            context: "rts transitions",
            expected: filtered.len() - 1,
            got: transitions.len(),
        });
    }
    let mut smoothed = filtered.to_vec();
    for k in (0..filtered.len() - 1).rev() {
        let dynamics = transitions[k];
        let (x_f, p_f) = &filtered[k];
        let x_pred = dynamics.a() * x_f;
        let mut p_pred = dynamics.a() * p_f * dynamics.a().transpose() + dynamics.q();
        linalg::symmetrize(&mut p_pred);
        let pred_chol =
            nalgebra::Cholesky::new(p_pred.clone()).ok_or(Error::Singular("predicted covariance"))?;
        // G = P_f Aᵀ P_pred⁻¹, via P_pred Gᵀ = A P_fᵀ.
        let gain = pred_chol.solve(&(dynamics.a() * p_f)).transpose();
        let (x_next, p_next) = &smoothed[k + 1];
        let x_s = x_f + &gain * (x_next - x_pred);
        let mut p_s = p_f + &gain * (p_next - p_pred) * gain.transpose();
        linalg::symmetrize(&mut p_s);
        smoothed[k] = (x_s, p_s);
    }
    Ok(smoothed)
}

/// Recursive rolling-window estimator: holds the current window posterior and
/// advances it one timestep per call.
///
/// During warm-up the window grows from the single-step initial prior until it
/// spans `window_steps + 1` timesteps; after that each step drops the oldest
/// state.
#[derive(Debug, Clone)]
pub struct RollingWindow {
    window_steps: usize,
    posterior: WindowGaussian,
}

impl RollingWindow {
    pub fn new(initial_prior: WindowGaussian, window_steps: usize) -> Result<Self> {
        if window_steps == 0 {
            return Err(Error::WindowTooShort("window must span at least one transition"));
        }
        Ok(Self {
            window_steps,
            posterior: initial_prior,
        })
    }

    pub fn window_steps(&self) -> usize {
        self.window_steps
    }

    pub fn posterior(&self) -> &WindowGaussian {
        &self.posterior
    }

    /// The prior the next step will condition on.
    pub fn next_prior(&self) -> Result<WindowGaussian> {
        if self.posterior.len() == self.window_steps + 1 {
            shift_window(&self.posterior)
        } else {
            Ok(self.posterior.clone())
        }
    }

    /// Advances the window to `meas.t()`, which must be the next timestep.
    pub fn step(&mut self, dynamics: &LinearDynamics, meas: &JointMeasurement) -> Result<&WindowGaussian> {
        let prior = self.next_prior()?;
        let sys = assemble_block_system(&prior, dynamics, meas)?;
        self.posterior = solve_map_window(&sys)?;
        Ok(&self.posterior)
    }
}
