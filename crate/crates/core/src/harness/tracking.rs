//! Tracking runs along a constant-acceleration path, with a per-step
//! re-localization baseline, and the Monte Carlo calibration of the
//! measurement noise covariance.

use super::config::{Config, InitMode};
use super::{child_seed, csv_preamble, element_spacing, mean_sem, ris_pose, scenario, trial_seed, HarnessError};
use crate::channel::{simulate_frames, OfdmParams};
use crate::codebook::{build_schedule, PhaseSchedule};
use crate::crlb::crlb_tau_alpha;
use crate::estimator::{cancel_frame, measure_pair, PairMeasurement};
use crate::geometry::{path_delay, sum_cosines_alpha, Point2, C};
use crate::localizer::{localize, observations};
use crate::tracker::{step, EkfConfig, EkfState};
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::fmt::Write;

/// OFDM parameters with the tracking frame layout.
pub fn tracking_ofdm(cfg: &Config) -> OfdmParams {
    let mut o = cfg.ofdm.params();
    o.t = cfg.tracking.t;
    o.n_t = cfg.tracking.n_t;
    o
}

fn tracking_schedule(cfg: &Config) -> Result<PhaseSchedule, HarnessError> {
    let t = cfg.tracking.t;
    Ok(build_schedule(1, t / 2, cfg.scene.elements, t, cfg.tracking.n_t)?)
}

/// True position and velocity after `n` sampling periods.
pub fn truth(cfg: &Config, n: usize) -> ([f64; 2], [f64; 2]) {
    let tr = &cfg.tracking;
    let t = n as f64 * tr.t_s;
    let p = [0, 1].map(|i| tr.start[i] + tr.velocity[i] * t + 0.5 * tr.acceleration[i] * t * t);
    let v = [0, 1].map(|i| tr.velocity[i] + tr.acceleration[i] * t);
    (p, v)
}

/// Measurements of a single RIS at the given kinematic state, one per
/// receiver.
fn measure_at(
    cfg: &Config,
    ofdm: &OfdmParams,
    sched: &PhaseSchedule,
    pos: [f64; 2],
    vel: [f64; 2],
    seed: u64,
) -> Result<Vec<PairMeasurement>, HarnessError> {
    let sc = scenario(cfg, vec![ris_pose(cfg, ofdm, pos.into(), vel, cfg.tracking.acceleration)]);
    let frames = simulate_frames(&sc, ofdm, sched, seed)?;
    let spacing = element_spacing(cfg, ofdm);
    let est = cfg.estimator.config();
    frames
        .frames
        .iter()
        .map(|y| Ok(measure_pair(&cancel_frame(y, sched.t)?, sched, 0, spacing, ofdm, &est)?))
        .collect()
}

fn nu_of(meas: &[PairMeasurement]) -> DVector<f64> {
    let n = meas.len();
    DVector::from_fn(2 * n, |i, _| if i < n { meas[i].xi_hat } else { meas[i - n].alpha_hat })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCalibration {
    /// One ToA grid bin in meters, squared, over 12.
    pub xi_var_quant: f64,
    /// Mean squared path-length error per receiver (m^2).
    pub xi_mse: Vec<f64>,
    /// Mean squared angle-parameter error per receiver.
    pub alpha_mse: Vec<f64>,
    pub csv: String,
}

impl NoiseCalibration {
    pub fn alpha_var(&self) -> f64 {
        self.alpha_mse.iter().sum::<f64>() / self.alpha_mse.len() as f64
    }
}

/// Zero-motion Monte Carlo at the tracking start point.
pub fn calibrate_noise(cfg: &Config) -> Result<NoiseCalibration, HarnessError> {
    cfg.validate()?;
    let ofdm = tracking_ofdm(cfg);
    let sched = tracking_schedule(cfg)?;
    let pos = cfg.tracking.start;
    let base = child_seed(cfg.seed, 0xCA1);
    let runs = (0..cfg.tracking.calibration_trials as u64)
        .into_par_iter()
        .map(|i| measure_at(cfg, &ofdm, &sched, pos, [0.0, 0.0], trial_seed(base, i)))
        .collect::<Result<Vec<_>, _>>()?;

    let anchors = cfg.scene.anchors();
    let p: Point2 = pos.into();
    let n_rx = anchors.rxs.len();
    let mut xi_mse = vec![0.0; n_rx];
    let mut alpha_mse = vec![0.0; n_rx];
    for (r, rx) in anchors.rxs.iter().enumerate() {
        let xi = C * path_delay(&anchors.tx, rx, &p);
        let alpha = sum_cosines_alpha(&anchors.tx, rx, &p, cfg.scene.psi)?;
        let n = runs.len() as f64;
        xi_mse[r] = runs.iter().map(|m| (m[r].xi_hat - xi).powi(2)).sum::<f64>() / n;
        alpha_mse[r] = runs.iter().map(|m| (m[r].alpha_hat - alpha).powi(2)).sum::<f64>() / n;
    }
    let bin = C / (cfg.estimator.n_f_tau as f64 * ofdm.delta_f);
    let xi_var_quant = bin * bin / 12.0;

    let mut csv = csv_preamble(cfg, "calibrate-noise");
    csv.push_str("rx,trials,xi_mse_m2,xi_var_quant_m2,alpha_mse\n");
    for r in 0..n_rx {
        writeln!(csv, "{r},{},{},{},{}", runs.len(), xi_mse[r], xi_var_quant, alpha_mse[r]).expect("writing to a String");
    }
    Ok(NoiseCalibration { xi_var_quant, xi_mse, alpha_mse, csv })
}

/// Per-receiver path-length (m^2) and angle-parameter variances from the
/// Fisher bounds of a static RIS at the tracking start point.
pub fn bound_noise(cfg: &Config) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let ofdm = tracking_ofdm(cfg);
    let sched = tracking_schedule(cfg)?;
    let sc = scenario(cfg, vec![ris_pose(cfg, &ofdm, cfg.tracking.start.into(), [0.0, 0.0], [0.0, 0.0])]);
    let (mut xi, mut alpha) = (Vec::new(), Vec::new());
    for r in 0..sc.rxs.len() {
        let (tau_var, alpha_var) = crlb_tau_alpha(&sc, &sched, &ofdm, 0, r)?;
        xi.push(C * C * tau_var);
        alpha.push(alpha_var);
    }
    Ok((xi, alpha))
}

/// Filter settings for the configured path and noise levels.
pub fn ekf_config(cfg: &Config, xi_var: f64, alpha_var: f64) -> EkfConfig {
    let tr = &cfg.tracking;
    let mut c = EkfConfig::diagonal(tr.t_s, tr.acceleration, tr.q_diag, cfg.scene.rxs.len(), xi_var, alpha_var);
    c.jacobian = tr.jacobian;
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub truth: [f64; 4],
    pub estimate: [f64; 4],
    pub err_track: f64,
    /// Error of an independent fix from this step's measurements.
    pub err_loc: f64,
    pub innovation_norm: f64,
    pub skipped: bool,
    /// Smallest covariance eigenvalue after the step.
    pub min_cov_eigenvalue: f64,
}

/// One trajectory. Record 0 is the initial state.
pub fn tracking_trial(cfg: &Config, seed: u64, ekf: &EkfConfig) -> Result<Vec<StepRecord>, HarnessError> {
    let tr = &cfg.tracking;
    let ofdm = tracking_ofdm(cfg);
    let sched = tracking_schedule(cfg)?;
    let anchors = cfg.scene.anchors();
    let solver = cfg.solver.config();
    let psi = cfg.scene.psi;

    let fix = |meas: &[PairMeasurement]| -> Result<Point2, HarnessError> {
        Ok(localize(&observations(meas), &anchors, psi, &solver)?.p_hat)
    };

    let (p0, v0) = truth(cfg, 0);
    let meas0 = measure_at(cfg, &ofdm, &sched, p0, v0, child_seed(seed, 0))?;
    let loc0 = fix(&meas0)?;
    let init_pos = match tr.init {
        InitMode::Localizer => [loc0.x, loc0.y],
        InitMode::Perturbed => {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, u64::MAX));
            [0, 1].map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                p0[i] + tr.sigma0 * z
            })
        }
    };
    let pos_var = match tr.init {
        InitMode::Localizer => tr.initial_position_var,
        InitMode::Perturbed => (tr.sigma0 * tr.sigma0).max(1e-6),
    };
    let init_vel = if tr.known_initial_velocity { v0 } else { [0.0, 0.0] };
    let mut state = EkfState {
        x: Vector4::new(init_pos[0], init_pos[1], init_vel[0], init_vel[1]),
        cov: Matrix4::from_diagonal(&Vector4::new(pos_var, pos_var, tr.initial_velocity_var, tr.initial_velocity_var)),
    };

    let p_true0: Point2 = p0.into();
    let mut out = vec![StepRecord {
        step: 0,
        truth: [p0[0], p0[1], v0[0], v0[1]],
        estimate: [state.x[0], state.x[1], state.x[2], state.x[3]],
        err_track: state.position().dist(&p_true0),
        err_loc: loc0.dist(&p_true0),
        innovation_norm: f64::NAN,
        skipped: false,
        min_cov_eigenvalue: state.min_eigenvalue(),
    }];
    for n in 1..=tr.steps {
        let (p, v) = truth(cfg, n);
        let p_true: Point2 = p.into();
        let meas = measure_at(cfg, &ofdm, &sched, p, v, child_seed(seed, n as u64));
        let (nu, err_loc) = match &meas {
            Ok(m) => (Some(nu_of(m)), fix(m).map(|q| q.dist(&p_true)).unwrap_or(f64::NAN)),
            Err(_) => (None, f64::NAN),
        };
        let ts = step(&state, nu.as_ref(), &anchors, psi, ekf);
        state = ts.state;
        out.push(StepRecord {
            step: n,
            truth: [p[0], p[1], v[0], v[1]],
            estimate: [state.x[0], state.x[1], state.x[2], state.x[3]],
            err_track: state.position().dist(&p_true),
            err_loc,
            innovation_norm: ts.innovation_norm,
            skipped: ts.skipped,
            min_cov_eigenvalue: state.min_eigenvalue(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub trials: Vec<Vec<StepRecord>>,
    /// Mean tracking and re-localization error per step across trials.
    pub mean_err_track: Vec<f64>,
    pub mean_err_loc: Vec<f64>,
    pub xi_var: f64,
    pub alpha_var: f64,
    pub csv: String,
    pub summary_csv: String,
}

impl TrackingResult {
    /// Mean over steps `1..` of the per-step mean tracking error.
    pub fn path_mean_track(&self) -> f64 {
        mean_sem(&self.mean_err_track[1..]).0
    }

    pub fn path_mean_loc(&self) -> f64 {
        mean_sem(&self.mean_err_loc[1..]).0
    }

    /// Mean tracking error over the first and last quarter of steps `1..`.
    pub fn quarter_means(&self) -> (f64, f64) {
        let e = &self.mean_err_track[1..];
        let q = (e.len() / 4).max(1);
        (mean_sem(&e[..q]).0, mean_sem(&e[e.len() - q..]).0)
    }

    pub fn skipped_steps(&self) -> usize {
        self.trials.iter().flatten().filter(|r| r.skipped).count()
    }
}

pub fn run_tracking_experiment(cfg: &Config) -> Result<TrackingResult, HarnessError> {
    cfg.validate()?;
    let tr = &cfg.tracking;
    let xi_var = if tr.xi_var > 0.0 {
        tr.xi_var
    } else {
        let bin = C / (cfg.estimator.n_f_tau as f64 * cfg.ofdm.delta_f);
        bin * bin / 12.0
    };
    let (xi_var, alpha_var, ekf) = if tr.noise_from_bound {
        let (xi, alpha) = bound_noise(cfg)?;
        let mut ekf = ekf_config(cfg, 0.0, 0.0);
        ekf.c = DMatrix::from_diagonal(&DVector::from_iterator(2 * xi.len(), xi.iter().chain(&alpha).copied()));
        (mean_sem(&xi).0, mean_sem(&alpha).0, ekf)
    } else {
        let alpha_var = if tr.alpha_var > 0.0 { tr.alpha_var } else { calibrate_noise(cfg)?.alpha_var() };
        (xi_var, alpha_var, ekf_config(cfg, xi_var, alpha_var))
    };

    let trials = (0..tr.trials as u64)
        .into_par_iter()
        .map(|i| tracking_trial(cfg, trial_seed(cfg.seed, i), &ekf))
        .collect::<Result<Vec<_>, _>>()?;

    let steps = tr.steps + 1;
    let per_step = |f: fn(&StepRecord) -> f64| -> Vec<f64> {
        (0..steps)
            .map(|s| {
                let v: Vec<f64> = trials.iter().map(|t| f(&t[s])).filter(|x| x.is_finite()).collect();
                mean_sem(&v).0
            })
            .collect()
    };
    let mean_err_track = per_step(|r| r.err_track);
    let mean_err_loc = per_step(|r| r.err_loc);

    let mut csv = csv_preamble(cfg, "track");
    csv.push_str("trial,step,true_x,true_y,true_vx,true_vy,est_x,est_y,est_vx,est_vy,err_track_m,err_loc_m,innovation_norm,skipped\n");
    for (i, t) in trials.iter().enumerate() {
        for r in t {
            let [tx, ty, tvx, tvy] = r.truth;
            let [ex, ey, evx, evy] = r.estimate;
            writeln!(
                csv,
                "{i},{},{tx},{ty},{tvx},{tvy},{ex},{ey},{evx},{evy},{},{},{},{}",
                r.step, r.err_track, r.err_loc, r.innovation_norm, r.skipped as u8
            )
            .expect("writing to a String");
        }
    }
    let mut summary_csv = csv_preamble(cfg, "track-summary");
    summary_csv.push_str("step,mean_err_track_m,mean_err_loc_m\n");
    for s in 0..steps {
        writeln!(summary_csv, "{s},{},{}", mean_err_track[s], mean_err_loc[s]).expect("writing to a String");
    }
    Ok(TrackingResult { trials, mean_err_track, mean_err_loc, xi_var, alpha_var, csv, summary_csv })
}
