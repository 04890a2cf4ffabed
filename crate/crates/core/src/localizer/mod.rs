//! Least-squares RIS position fix from per-receiver path lengths and angle
//! parameters, plus a path-length-only baseline.
//!
//! The objective for one RIS is
//!
//! ```text
//! sum_r  w_xi (|p - p_t| + |p - p_r| - xi_r)^2 + w_alpha (alpha_r(p) - alpha_hat_r)^2
//! ```
//!
//! It is minimized by a coarse grid scan followed by Nelder-Mead refinement
//! from the best cells; `alpha` has absolute-value kinks, so no gradients
//! are used.

pub mod simplex;

use crate::estimator::PairMeasurement;
use crate::geometry::{sum_cosines_alpha, Point2};
use serde::{Deserialize, Serialize};
use simplex::{minimize, SimplexOptions};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizeError {
    #[error("no receiver measurements")]
    NoMeasurements,
    #[error("no grid point with a finite objective")]
    NoFinitePoint,
    #[error("invalid solver configuration: {0}")]
    Config(&'static str),
}

/// Transmitter and receiver positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub tx: Point2,
    pub rxs: Vec<Point2>,
}

/// Measured path length and angle parameter on one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub xi: f64,
    pub alpha: f64,
}

impl From<&PairMeasurement> for Observation {
    fn from(m: &PairMeasurement) -> Self {
        Self { xi: m.xi_hat, alpha: m.alpha_hat }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid_min: Point2,
    pub grid_max: Point2,
    pub grid_step: f64,
    pub refine_max_iters: usize,
    pub refine_tol: f64,
    pub restarts: usize,
    /// Weights of the path-length and angle residuals.
    pub weights: (f64, f64),
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_min: Point2::new(-2.0, 0.25),
            grid_max: Point2::new(20.0, 16.0),
            grid_step: 0.25,
            refine_max_iters: 400,
            refine_tol: 1e-6,
            restarts: 3,
            weights: (1.0, 1.0),
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), LocalizeError> {
        if !(self.grid_step > 0.0) {
            return Err(LocalizeError::Config("grid_step must be positive"));
        }
        if !(self.refine_tol > 0.0) {
            return Err(LocalizeError::Config("refine_tol must be positive"));
        }
        if self.grid_max.x < self.grid_min.x || self.grid_max.y < self.grid_min.y {
            return Err(LocalizeError::Config("empty grid region"));
        }
        if self.restarts == 0 {
            return Err(LocalizeError::Config("restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub p_hat: Point2,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted least-squares objective. `psi = None` drops the angle terms.
/// Returns `+inf` when `p` coincides with an anchor.
pub fn objective(p: &Point2, obs: &[Observation], anchors: &Anchors, psi: Option<f64>, weights: (f64, f64)) -> f64 {
    let mut total = 0.0;
    let dt = p.dist(&anchors.tx);
    for (o, rx) in obs.iter().zip(&anchors.rxs) {
        let r = dt + p.dist(rx) - o.xi;
        total += weights.0 * r * r;
        if let Some(psi) = psi {
            match sum_cosines_alpha(&anchors.tx, rx, p, psi) {
                Ok(a) => total += weights.1 * (a - o.alpha).powi(2),
                Err(_) => return f64::INFINITY,
            }
        }
    }
    total
}

fn solve(obs: &[Observation], anchors: &Anchors, psi: Option<f64>, cfg: &SolverConfig) -> Result<LocalizationResult, LocalizeError> {
    cfg.validate()?;
    if obs.is_empty() || anchors.rxs.is_empty() {
        return Err(LocalizeError::NoMeasurements);
    }
    let f = |x: [f64; 2]| objective(&Point2::new(x[0], x[1]), obs, anchors, psi, cfg.weights);

    let nx = ((cfg.grid_max.x - cfg.grid_min.x) / cfg.grid_step + 1e-9).floor() as usize + 1;
    let ny = ((cfg.grid_max.y - cfg.grid_min.y) / cfg.grid_step + 1e-9).floor() as usize + 1;
    let mut cells: Vec<(f64, [f64; 2])> = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let x = [cfg.grid_min.x + i as f64 * cfg.grid_step, cfg.grid_min.y + j as f64 * cfg.grid_step];
            let v = f(x);
            if v.is_finite() {
                cells.push((v, x));
            }
        }
    }
    if cells.is_empty() {
        return Err(LocalizeError::NoFinitePoint);
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));

    let opts = SimplexOptions {
        scale: cfg.grid_step,
        max_iters: cfg.refine_max_iters,
        x_tol: cfg.refine_tol,
        ..Default::default()
    };
    let mut best: Option<LocalizationResult> = None;
    let mut iterations = 0;
    for &(_, start) in cells.iter().take(cfg.restarts) {
        let r = minimize(f, start, &opts);
        iterations += r.iters;
        if best.as_ref().is_none_or(|b| r.f < b.objective) {
            best = Some(LocalizationResult {
                p_hat: Point2::new(r.x[0], r.x[1]),
                objective: r.f,
                iterations: 0,
                converged: r.converged,
            });
        }
    }
    let mut best = best.ok_or(LocalizeError::NoFinitePoint)?;
    best.iterations = iterations;
    Ok(best)
}

/// Position fix from path lengths and angle parameters.
pub fn localize(obs: &[Observation], anchors: &Anchors, psi: f64, cfg: &SolverConfig) -> Result<LocalizationResult, LocalizeError> {
    solve(obs, anchors, Some(psi), cfg)
}

/// Baseline fix from path lengths only. With a single receiver the problem
/// is an ellipse of minimizers and the result is reported as not converged.
pub fn localize_toa_only(obs: &[Observation], anchors: &Anchors, cfg: &SolverConfig) -> Result<LocalizationResult, LocalizeError> {
    let mut r = solve(obs, anchors, None, cfg)?;
    if obs.len().min(anchors.rxs.len()) < 2 {
        r.converged = false;
    }
    Ok(r)
}

/// Observations of one RIS across receivers.
pub fn observations(meas: &[PairMeasurement]) -> Vec<Observation> {
    meas.iter().map(Observation::from).collect()
}
