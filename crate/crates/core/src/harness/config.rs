//! TOML experiment configuration. Every key has a default, so an empty file
//! is a valid configuration describing the baseline scene.

use crate::channel::{dbm_to_watts, OfdmParams, Scatterer};
use crate::estimator::EstimatorConfig;
use crate::localizer::{Anchors, SolverConfig};
use crate::tracker::JacobianForm;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmSection {
    pub n: usize,
    pub delta_f: f64,
    pub f_c: f64,
    /// Total transmit power `N * Es` (dBm).
    pub power_dbm: f64,
    pub n0_dbm_hz: f64,
    pub cp_fraction: f64,
    pub t: usize,
    pub n_t: usize,
}

impl Default for OfdmSection {
    fn default() -> Self {
        Self {
            n: 512,
            delta_f: 120e3,
            f_c: 6e9,
            power_dbm: 30.0,
            n0_dbm_hz: -174.0,
            cp_fraction: 0.25,
            t: 32,
            n_t: 2,
        }
    }
}

impl OfdmSection {
    pub fn params(&self) -> OfdmParams {
        let mut p = OfdmParams {
            n: self.n,
            delta_f: self.delta_f,
            f_c: self.f_c,
            e_s: 0.0,
            n0: dbm_to_watts(self.n0_dbm_hz),
            cp_fraction: self.cp_fraction,
            t: self.t,
            n_t: self.n_t,
        };
        p.set_power_dbm(self.power_dbm);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub n_f_tau: usize,
    pub n_f_fd: usize,
    pub refine: bool,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let d = EstimatorConfig::default();
        Self { n_f_tau: d.n_f_tau, n_f_fd: d.n_f_fd, refine: d.refine }
    }
}

impl EstimatorSection {
    pub fn config(&self) -> EstimatorConfig {
        EstimatorConfig { n_f_tau: self.n_f_tau, n_f_fd: self.n_f_fd, refine: self.refine }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererEntry {
    pub position: [f64; 2],
    pub reflection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub tx: [f64; 2],
    pub rxs: Vec<[f64; 2]>,
    /// Position of the RIS whose error is reported.
    pub ris: [f64; 2],
    /// Additional RISs placed uniformly at random in the region per trial.
    pub extra_ris: usize,
    pub region_min: [f64; 2],
    pub region_max: [f64; 2],
    pub psi: f64,
    pub elements: usize,
    /// Element spacing as a fraction of the wavelength (`d = lambda / L`).
    pub spacing_divisor: usize,
    /// Largest number of RISs the codebook must accommodate; 0 means T/2.
    pub k_max: usize,
    /// Power gain (dB) on top of the free-space cascade.
    pub ris_gain_db: f64,
    pub scatterers: Vec<ScattererEntry>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            tx: [0.0, 0.0],
            rxs: vec![[12.0, 0.0], [14.0, 0.0], [16.0, 0.0]],
            ris: [7.0, 7.0],
            extra_ris: 1,
            region_min: [0.0, 1.0],
            region_max: [16.0, 14.0],
            psi: std::f64::consts::FRAC_PI_6,
            elements: 16,
            spacing_divisor: 4,
            k_max: 0,
            ris_gain_db: 0.0,
            scatterers: vec![
                ScattererEntry { position: [4.0, -3.0], reflection: 0.3 },
                ScattererEntry { position: [9.0, 10.0], reflection: 0.3 },
                ScattererEntry { position: [15.0, 5.0], reflection: 0.3 },
            ],
        }
    }
}

impl SceneSection {
    pub fn anchors(&self) -> Anchors {
        Anchors { tx: self.tx.into(), rxs: self.rxs.iter().map(|&p| p.into()).collect() }
    }

    pub fn scatterers(&self) -> Vec<Scatterer> {
        self.scatterers
            .iter()
            .map(|s| Scatterer { position: s.position.into(), reflection_gain: s.reflection })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub grid_min: [f64; 2],
    pub grid_max: [f64; 2],
    pub grid_step: f64,
    pub refine_max_iters: usize,
    pub refine_tol: f64,
    pub restarts: usize,
    pub weight_xi: f64,
    pub weight_alpha: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            grid_min: [d.grid_min.x, d.grid_min.y],
            grid_max: [d.grid_max.x, d.grid_max.y],
            grid_step: d.grid_step,
            refine_max_iters: d.refine_max_iters,
            refine_tol: d.refine_tol,
            restarts: d.restarts,
            weight_xi: d.weights.0,
            weight_alpha: d.weights.1,
        }
    }
}

impl SolverSection {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            grid_min: self.grid_min.into(),
            grid_max: self.grid_max.into(),
            grid_step: self.grid_step,
            refine_max_iters: self.refine_max_iters,
            refine_tol: self.refine_tol,
            restarts: self.restarts,
            weights: (self.weight_xi, self.weight_alpha),
        }
    }
}

/// Quantity varied by a localization sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    DeltaF,
    NSubcarriers,
    PowerDbm,
    NRx,
    #[serde(rename = "N_T")]
    NT,
    #[serde(rename = "T")]
    T,
    RisX,
    RisY,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            Self::DeltaF => "delta_f",
            Self::NSubcarriers => "n_subcarriers",
            Self::PowerDbm => "power_dbm",
            Self::NRx => "n_rx",
            Self::NT => "N_T",
            Self::T => "T",
            Self::RisX => "ris_x",
            Self::RisY => "ris_y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { variable: SweepVariable::DeltaF, values: vec![30e3, 60e3, 120e3, 240e3] }
    }
}

/// How the filter's initial position is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Position fix from the first frame.
    Localizer,
    /// True position plus Gaussian error of standard deviation `sigma0`.
    Perturbed,
}

/// Fixed-acceleration path followed by the tracked RIS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSection {
    /// Slots per interval and intervals per frame used while tracking.
    pub t: usize,
    pub n_t: usize,
    pub trials: usize,
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub t_s: f64,
    pub steps: usize,
    /// Diagonal of the process noise covariance.
    pub q_diag: [f64; 4],
    /// Path-length measurement variance (m^2); 0 means one ToA bin squared / 12.
    pub xi_var: f64,
    /// Angle-parameter measurement variance; 0 means calibrate by Monte Carlo.
    pub alpha_var: f64,
    /// Trials used when calibrating the angle-parameter variance.
    pub calibration_trials: usize,
    /// Take the measurement covariance from the per-receiver delay and angle
    /// bounds at the start point instead of `xi_var` / `alpha_var`.
    pub noise_from_bound: bool,
    pub init: InitMode,
    /// Standard deviation of the initial position error (m) per axis.
    pub sigma0: f64,
    /// Initial position variance when starting from the localizer.
    pub initial_position_var: f64,
    /// Start the filter from the true velocity instead of zero.
    pub known_initial_velocity: bool,
    pub initial_velocity_var: f64,
    pub jacobian: JacobianForm,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            t: 16,
            n_t: 8,
            trials: 20,
            start: [2.0, 9.0],
            velocity: [10.0, 0.0],
            acceleration: [0.0, -2.0],
            t_s: 0.05,
            steps: 32,
            q_diag: [0.01, 0.01, 0.1, 0.1],
            xi_var: 0.0,
            alpha_var: 0.0,
            calibration_trials: 200,
            noise_from_bound: false,
            init: InitMode::Localizer,
            sigma0: 0.0,
            initial_position_var: 0.25,
            known_initial_velocity: false,
            initial_velocity_var: 100.0,
            jacobian: JacobianForm::Lookahead,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PebSection {
    pub grid_min: [f64; 2],
    pub grid_max: [f64; 2],
    pub step: f64,
    /// Cells closer than this to an anchor are skipped.
    pub exclusion_radius: f64,
}

impl Default for PebSection {
    fn default() -> Self {
        Self { grid_min: [0.0, 1.0], grid_max: [16.0, 14.0], step: 0.5, exclusion_radius: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub trials: usize,
    pub ofdm: OfdmSection,
    pub estimator: EstimatorSection,
    pub scene: SceneSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub tracking: TrackingSection,
    pub peb: PebSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 100,
            ofdm: OfdmSection::default(),
            estimator: EstimatorSection::default(),
            scene: SceneSection::default(),
            solver: SolverSection::default(),
            sweep: SweepSection::default(),
            tracking: TrackingSection::default(),
            peb: PebSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Codebook capacity for the configured slot count.
    pub fn k_max(&self) -> usize {
        if self.scene.k_max == 0 {
            self.ofdm.t / 2
        } else {
            self.scene.k_max
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let o = &self.ofdm;
        if o.n == 0 {
            return Err(invalid("ofdm.n", "must be positive"));
        }
        if !(o.delta_f > 0.0) {
            return Err(invalid("ofdm.delta_f", "must be positive"));
        }
        if !(o.f_c > 0.0) {
            return Err(invalid("ofdm.f_c", "must be positive"));
        }
        if o.t == 0 || !o.t.is_multiple_of(2) {
            return Err(invalid("ofdm.t", "must be even and positive"));
        }
        if o.n_t == 0 || !o.n_t.is_multiple_of(2) {
            return Err(invalid("ofdm.n_t", "must be even and positive"));
        }
        if !(o.cp_fraction >= 0.0) {
            return Err(invalid("ofdm.cp_fraction", "must be nonnegative"));
        }
        if self.estimator.n_f_tau < o.n {
            return Err(invalid("estimator.n_f_tau", "must be at least ofdm.n"));
        }
        if self.estimator.n_f_fd < o.n_t / 2 {
            return Err(invalid("estimator.n_f_fd", "must be at least n_t / 2"));
        }
        let s = &self.scene;
        if s.rxs.is_empty() {
            return Err(invalid("scene.rxs", "need at least one receiver"));
        }
        if s.elements < 2 {
            return Err(invalid("scene.elements", "need at least two elements"));
        }
        if s.spacing_divisor < 4 {
            return Err(invalid("scene.spacing_divisor", "spacing must be lambda / L with L >= 4"));
        }
        if 1 + s.extra_ris > self.k_max() || self.k_max() > o.t / 2 {
            return Err(invalid("scene.k_max", format!("{} RISs do not fit T/2 = {}", 1 + s.extra_ris, o.t / 2)));
        }
        if s.region_max[0] <= s.region_min[0] || s.region_max[1] <= s.region_min[1] {
            return Err(invalid("scene.region_max", "region is empty"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(invalid("sweep.values", "must not be empty"));
        }
        if !(self.solver.grid_step > 0.0) {
            return Err(invalid("solver.grid_step", "must be positive"));
        }
        let tr = &self.tracking;
        if tr.t == 0 || !tr.t.is_multiple_of(2) || tr.n_t == 0 || !tr.n_t.is_multiple_of(2) {
            return Err(invalid("tracking.t", "slot and interval counts must be even and positive"));
        }
        if tr.trials == 0 || tr.steps == 0 {
            return Err(invalid("tracking.trials", "trials and steps must be positive"));
        }
        if !(self.tracking.t_s > 0.0) {
            return Err(invalid("tracking.t_s", "must be positive"));
        }
        if !(self.peb.step > 0.0) {
            return Err(invalid("peb.step", "must be positive"));
        }
        Ok(())
    }
}
