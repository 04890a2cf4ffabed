//! Monte Carlo experiments: localization sweeps, tracking runs, PEB maps
//! and measurement-noise calibration. Every experiment is deterministic for a
//! given configuration and emits CSV headed by a config-hash comment.

pub mod config;
pub mod localization;
pub mod peb;
pub mod tracking;

use crate::channel::{ChannelError, OfdmParams, Scenario};
use crate::codebook::CodebookError;
use crate::crlb::CrlbError;
use crate::estimator::EstimatorError;
use crate::geometry::{GeometryError, Point2, RisPose};
use crate::localizer::LocalizeError;
use config::{Config, ConfigError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Crlb(#[from] CrlbError),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 3,
        }
    }
}

/// SplitMix64 finalizer, used as the seed mixing function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `i`: `base ^ splitmix64(i)`.
pub fn trial_seed(base: u64, i: u64) -> u64 {
    base ^ splitmix64(i)
}

/// Independent child seed for sub-stream `index` of `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index ^ 0xA5A5_A5A5_A5A5_A5A5))
}

/// Comment line opening every CSV file.
pub fn csv_preamble(cfg: &Config, experiment: &str) -> String {
    format!("# experiment={experiment} config_sha256={}\n", cfg.hash())
}

/// RIS with the configured orientation, aperture and element spacing.
pub fn ris_pose(cfg: &Config, ofdm: &OfdmParams, position: Point2, velocity: [f64; 2], acceleration: [f64; 2]) -> RisPose {
    RisPose {
        position,
        orientation_psi: cfg.scene.psi,
        velocity,
        acceleration,
        num_elements: cfg.scene.elements,
        element_spacing: element_spacing(cfg, ofdm),
    }
}

pub fn element_spacing(cfg: &Config, ofdm: &OfdmParams) -> f64 {
    ofdm.lambda() / cfg.scene.spacing_divisor as f64
}

/// Scenario with the configured anchors, scatterers and gain.
pub fn scenario(cfg: &Config, ris: Vec<RisPose>) -> Scenario {
    let a = cfg.scene.anchors();
    Scenario {
        tx: a.tx,
        rxs: a.rxs,
        ris,
        scatterers: cfg.scene.scatterers(),
        ris_gain_db: cfg.scene.ris_gain_db,
    }
}

/// Positions of the additional RISs, uniform over the region and at least
/// 0.5 m from every anchor and from the primary RIS.
pub fn extra_ris_positions(cfg: &Config, seed: u64) -> Vec<Point2> {
    let s = &cfg.scene;
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0x51));
    let avoid: Vec<Point2> = std::iter::once(s.tx)
        .chain(s.rxs.iter().copied())
        .chain([s.ris])
        .map(Point2::from)
        .collect();
    let mut out: Vec<Point2> = Vec::with_capacity(s.extra_ris);
    while out.len() < s.extra_ris {
        let p = Point2::new(
            rng.random_range(s.region_min[0]..s.region_max[0]),
            rng.random_range(s.region_min[1]..s.region_max[1]),
        );
        if avoid.iter().chain(&out).all(|a| a.dist(&p) >= 0.5) {
            out.push(p);
        }
    }
    out
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
