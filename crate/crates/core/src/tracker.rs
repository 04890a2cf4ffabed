//! Extended Kalman filter for one RIS with state `[x, y, vx, vy]`,
//! constant known acceleration input and measurements
//! `(xi_1..xi_R, alpha_1..alpha_R)`.

use crate::channel::{OfdmParams, RxFrameSet};
use crate::codebook::PhaseSchedule;
use crate::estimator::{cancel_frame, measure_pair, EstimatorConfig, EstimatorError};
use crate::geometry::{partial_alpha, partial_tau, path_delay, sum_cosines_alpha, GeometryError, Point2, C};
use crate::localizer::Anchors;
use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("measurement has {got} entries, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

/// Filter state and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl EkfState {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x[0], self.x[1])
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.cov.symmetric_eigenvalues().min()
    }
}

/// Velocity columns of the measurement Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianForm {
    /// Velocity columns are `t_s` times the position columns, i.e. the
    /// derivative of `h(p + t_s v)` at the current state.
    #[default]
    Lookahead,
    /// Velocity columns are zero, the exact derivative of `h(p)`.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfConfig {
    pub t_s: f64,
    /// Known acceleration input (m/s^2).
    pub accel: [f64; 2],
    pub q: Matrix4<f64>,
    /// Measurement noise covariance, `2R x 2R`.
    pub c: DMatrix<f64>,
    pub jacobian: JacobianForm,
}

impl EkfConfig {
    /// Diagonal `c` with one variance for path lengths and one for angles.
    pub fn diagonal(t_s: f64, accel: [f64; 2], q_diag: [f64; 4], n_rx: usize, xi_var: f64, alpha_var: f64) -> Self {
        let c = DMatrix::from_fn(2 * n_rx, 2 * n_rx, |i, j| match (i == j, i < n_rx) {
            (true, true) => xi_var,
            (true, false) => alpha_var,
            _ => 0.0,
        });
        Self {
            t_s,
            accel,
            q: Matrix4::from_diagonal(&Vector4::from(q_diag)),
            c,
            jacobian: JacobianForm::default(),
        }
    }
}

/// State transition matrix.
pub fn transition(t_s: f64) -> Matrix4<f64> {
    let mut a = Matrix4::identity();
    a[(0, 2)] = t_s;
    a[(1, 3)] = t_s;
    a
}

/// Input matrix mapping acceleration into the state.
pub fn input_matrix(t_s: f64) -> nalgebra::Matrix4x2<f64> {
    let h = 0.5 * t_s * t_s;
    nalgebra::Matrix4x2::new(h, 0.0, 0.0, h, t_s, 0.0, 0.0, t_s)
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

pub fn predict(state: &EkfState, cfg: &EkfConfig) -> EkfState {
    let a = transition(cfg.t_s);
    let b = input_matrix(cfg.t_s);
    EkfState {
        x: a * state.x + b * Vector2::from(cfg.accel),
        cov: symmetrize(&(a * state.cov * a.transpose() + cfg.q)),
    }
}

/// Path lengths for every receiver followed by angle parameters.
pub fn measurement_fn(x: &Vector4<f64>, anchors: &Anchors, psi: f64) -> Result<DVector<f64>, TrackError> {
    let p = Point2::new(x[0], x[1]);
    let n = anchors.rxs.len();
    let mut h = DVector::zeros(2 * n);
    for (r, rx) in anchors.rxs.iter().enumerate() {
        h[r] = C * path_delay(&anchors.tx, rx, &p);
        h[n + r] = sum_cosines_alpha(&anchors.tx, rx, &p, psi)?;
    }
    Ok(h)
}

pub fn jacobian_h(x: &Vector4<f64>, anchors: &Anchors, psi: f64, t_s: f64, form: JacobianForm) -> Result<DMatrix<f64>, TrackError> {
    let p = Point2::new(x[0], x[1]);
    let n = anchors.rxs.len();
    let v_scale = match form {
        JacobianForm::Lookahead => t_s,
        JacobianForm::Exact => 0.0,
    };
    let mut h = DMatrix::zeros(2 * n, 4);
    for (r, rx) in anchors.rxs.iter().enumerate() {
        let gt = partial_tau(&anchors.tx, rx, &p)?;
        let ga = partial_alpha(&anchors.tx, rx, &p, psi)?;
        for (row, gx, gy) in [(r, C * gt.d_dx, C * gt.d_dy), (n + r, ga.d_dx, ga.d_dy)] {
            h[(row, 0)] = gx;
            h[(row, 1)] = gy;
            h[(row, 2)] = v_scale * gx;
            h[(row, 3)] = v_scale * gy;
        }
    }
    Ok(h)
}

/// Kalman correction for a measurement `nu` with prediction `h_pred` and
/// Jacobian `h_jac`. Also returns the innovation.
pub fn update_linearized(
    pred: &EkfState,
    nu: &DVector<f64>,
    h_pred: &DVector<f64>,
    h_jac: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<(EkfState, DVector<f64>), TrackError> {
    let m = nu.len();
    if h_pred.len() != m || h_jac.nrows() != m || c.nrows() != m || c.ncols() != m {
        return Err(TrackError::Dimension { got: m, expected: h_pred.len() });
    }
    let cov = DMatrix::from_column_slice(4, 4, pred.cov.as_slice());
    let pht = &cov * h_jac.transpose();
    let s = c + h_jac * &pht;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(TrackError::SingularInnovation)?;
    // K = M H^T S^-1, computed as (S^-1 H M)^T.
    let gain = chol.solve(&pht.transpose()).transpose();
    let innovation = nu - h_pred;
    let dx = &gain * &innovation;
    let ikh = DMatrix::<f64>::identity(4, 4) - &gain * h_jac;
    let new_cov = ikh * cov;
    let new_cov = Matrix4::from_column_slice(new_cov.as_slice());
    Ok((
        EkfState {
            x: pred.x + Vector4::from_column_slice(dx.as_slice()),
            cov: symmetrize(&new_cov),
        },
        innovation,
    ))
}

pub fn update(pred: &EkfState, nu: &DVector<f64>, anchors: &Anchors, psi: f64, cfg: &EkfConfig) -> Result<EkfState, TrackError> {
    let h_pred = measurement_fn(&pred.x, anchors, psi)?;
    let h_jac = jacobian_h(&pred.x, anchors, psi, cfg.t_s, cfg.jacobian)?;
    update_linearized(pred, nu, &h_pred, &h_jac, &cfg.c).map(|(s, _)| s)
}

/// One filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackStep {
    pub state: EkfState,
    /// Norm of the innovation; NaN when the update was skipped.
    pub innovation_norm: f64,
    /// The measurement or update failed and only the prediction was kept.
    pub skipped: bool,
}

/// Runs predict, measure, update over a stream of frame sets for RIS `k`.
#[allow(clippy::too_many_arguments)]
pub fn track<I>(
    frames: I,
    sched: &PhaseSchedule,
    ofdm: &OfdmParams,
    k: usize,
    spacing: f64,
    est: &EstimatorConfig,
    anchors: &Anchors,
    psi: f64,
    cfg: &EkfConfig,
    init: EkfState,
) -> Vec<TrackStep>
where
    I: IntoIterator<Item = RxFrameSet>,
{
    let mut state = init;
    let mut out = Vec::new();
    for set in frames {
        let nu = measure_nu(&set, sched, ofdm, k, spacing, est).ok();
        let ts = step(&state, nu.as_ref(), anchors, psi, cfg);
        state = ts.state.clone();
        out.push(ts);
    }
    out
}

/// Predict, then correct with `nu` when available. A missing measurement or
/// a failed correction leaves the prediction in place, flagged as skipped.
pub fn step(state: &EkfState, nu: Option<&DVector<f64>>, anchors: &Anchors, psi: f64, cfg: &EkfConfig) -> TrackStep {
    let pred = predict(state, cfg);
    let corrected = nu.ok_or(()).and_then(|nu| {
        let h_pred = measurement_fn(&pred.x, anchors, psi).map_err(|_| ())?;
        let h_jac = jacobian_h(&pred.x, anchors, psi, cfg.t_s, cfg.jacobian).map_err(|_| ())?;
        update_linearized(&pred, nu, &h_pred, &h_jac, &cfg.c).map_err(|_| ())
    });
    match corrected {
        Ok((s, innov)) => TrackStep { state: s, innovation_norm: innov.norm(), skipped: false },
        Err(()) => TrackStep { state: pred, innovation_norm: f64::NAN, skipped: true },
    }
}

/// Measurement vector `(c * tau_hat per receiver, alpha_hat per receiver)`
/// for RIS `k`.
pub fn measure_nu(
    set: &RxFrameSet,
    sched: &PhaseSchedule,
    ofdm: &OfdmParams,
    k: usize,
    spacing: f64,
    est: &EstimatorConfig,
) -> Result<DVector<f64>, EstimatorError> {
    let n = set.frames.len();
    let mut nu = DVector::zeros(2 * n);
    for (r, y) in set.frames.iter().enumerate() {
        let yp = cancel_frame(y, sched.t)?;
        let m = measure_pair(&yp, sched, k, spacing, ofdm, est)?;
        nu[r] = m.xi_hat;
        nu[n + r] = m.alpha_hat;
    }
    Ok(nu)
}
