//! Localization sweeps: proposed (path length + angle) fix against the
//! path-length-only baseline, for the primary RIS.

use super::config::{Config, ConfigError, SweepVariable};
use super::{csv_preamble, element_spacing, extra_ris_positions, mean_sem, ris_pose, scenario, trial_seed, HarnessError};
use crate::channel::simulate_frames;
use crate::codebook::build_schedule;
use crate::estimator::measure_all;
use crate::geometry::Point2;
use crate::localizer::{localize, localize_toa_only, observations};
use rayon::prelude::*;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub p_true: Point2,
    pub p_proposed: Point2,
    pub p_toa: Point2,
    pub err_proposed: f64,
    pub err_toa: f64,
}

/// One Monte Carlo trial at the configuration as given.
pub fn localization_trial(cfg: &Config, seed: u64) -> Result<TrialOutcome, HarnessError> {
    let ofdm = cfg.ofdm.params();
    let p_true: Point2 = cfg.scene.ris.into();
    let mut ris = vec![ris_pose(cfg, &ofdm, p_true, [0.0, 0.0], [0.0, 0.0])];
    ris.extend(extra_ris_positions(cfg, seed).into_iter().map(|p| ris_pose(cfg, &ofdm, p, [0.0, 0.0], [0.0, 0.0])));
    let sc = scenario(cfg, ris);
    let sched = build_schedule(sc.ris.len(), cfg.k_max(), cfg.scene.elements, ofdm.t, ofdm.n_t)?;
    let frames = simulate_frames(&sc, &ofdm, &sched, seed)?;
    let spacing = vec![element_spacing(cfg, &ofdm); sc.ris.len()];
    let meas = measure_all(&frames, &sched, &ofdm, &spacing, &cfg.estimator.config())?;

    let obs = observations(meas.for_ris(0));
    let anchors = cfg.scene.anchors();
    let solver = cfg.solver.config();
    let prop = localize(&obs, &anchors, cfg.scene.psi, &solver)?;
    let toa = localize_toa_only(&obs, &anchors, &solver)?;
    Ok(TrialOutcome {
        p_true,
        p_proposed: prop.p_hat,
        p_toa: toa.p_hat,
        err_proposed: prop.p_hat.dist(&p_true),
        err_toa: toa.p_hat.dist(&p_true),
    })
}

/// Configuration with one sweep variable set.
pub fn apply_sweep(cfg: &Config, var: SweepVariable, value: f64) -> Result<Config, ConfigError> {
    let mut c = cfg.clone();
    let as_count = |v: f64| -> Result<usize, ConfigError> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(ConfigError::Invalid { field: "sweep.values", reason: format!("{v} is not a positive integer") })
        }
    };
    match var {
        SweepVariable::DeltaF => c.ofdm.delta_f = value,
        SweepVariable::NSubcarriers => {
            c.ofdm.n = as_count(value)?;
            c.estimator.n_f_tau = c.estimator.n_f_tau.max(c.ofdm.n.next_power_of_two());
        }
        SweepVariable::PowerDbm => c.ofdm.power_dbm = value,
        SweepVariable::NRx => {
            let n = as_count(value)?;
            if n > c.scene.rxs.len() {
                return Err(ConfigError::Invalid { field: "sweep.values", reason: format!("only {} receivers configured", c.scene.rxs.len()) });
            }
            c.scene.rxs.truncate(n);
        }
        SweepVariable::NT => c.ofdm.n_t = as_count(value)?,
        SweepVariable::T => c.ofdm.t = as_count(value)?,
        SweepVariable::RisX => c.scene.ris[0] = value,
        SweepVariable::RisY => c.scene.ris[1] = value,
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub mean_proposed: f64,
    pub sem_proposed: f64,
    pub mean_toa: f64,
    pub sem_toa: f64,
    pub trials: Vec<TrialOutcome>,
}

/// Runs `trials` trials at one configuration. Trial `i` uses the same seed
/// at every sweep point, so points share geometry and noise draws.
pub fn run_point(cfg: &Config, value: f64) -> Result<SweepPoint, HarnessError> {
    let trials = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| localization_trial(cfg, trial_seed(cfg.seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let prop: Vec<f64> = trials.iter().map(|t| t.err_proposed).collect();
    let toa: Vec<f64> = trials.iter().map(|t| t.err_toa).collect();
    let (mean_proposed, sem_proposed) = mean_sem(&prop);
    let (mean_toa, sem_toa) = mean_sem(&toa);
    Ok(SweepPoint { value, mean_proposed, sem_proposed, mean_toa, sem_toa, trials })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
    /// Per-point summary CSV.
    pub summary_csv: String,
    /// Per-trial CSV.
    pub trials_csv: String,
}

pub fn run_localization_sweep(cfg: &Config) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let var = cfg.sweep.variable;
    let points = cfg
        .sweep
        .values
        .iter()
        .map(|&v| run_point(&apply_sweep(cfg, var, v)?, v))
        .collect::<Result<Vec<_>, _>>()?;

    let mut summary = csv_preamble(cfg, "localize-sweep");
    summary.push_str("variable,value,trials,mean_err_proposed_m,sem_proposed_m,mean_err_toa_m,sem_toa_m\n");
    let mut trials = csv_preamble(cfg, "localize-sweep-trials");
    trials.push_str("variable,value,trial,true_x,true_y,proposed_x,proposed_y,toa_x,toa_y,err_proposed_m,err_toa_m\n");
    for p in &points {
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            var.name(),
            p.value,
            p.trials.len(),
            p.mean_proposed,
            p.sem_proposed,
            p.mean_toa,
            p.sem_toa
        )
        .expect("writing to a String");
        for (i, t) in p.trials.iter().enumerate() {
            writeln!(
                trials,
                "{},{},{i},{},{},{},{},{},{},{},{}",
                var.name(),
                p.value,
                t.p_true.x,
                t.p_true.y,
                t.p_proposed.x,
                t.p_proposed.y,
                t.p_toa.x,
                t.p_toa.y,
                t.err_proposed,
                t.err_toa
            )
            .expect("writing to a String");
        }
    }
    Ok(SweepResult { variable: var, points, summary_csv: summary, trials_csv: trials })
}
