//! OFDM frame synthesis for the Tx -> RIS -> Rx cascades, static paths and
//! receiver noise.
//!
//! A frame for receiver `r` is an `N x (N_T*T)` matrix whose column for slot
//! `t_bar` is
//!
//! ```text
//! sum_k sqrt(Es) g_k d(tau_k) a(theta)^T Phi_k(t_bar) a(phi) e^{j 2 pi f_k Td (t_bar-1)}
//!   + sum_l sqrt(Es) g'_l d(tau'_l) + w
//! ```
//!
//! with `w` circular Gaussian of variance `delta_f * N0` per entry. Geometry
//! is frozen at the frame epoch.

use crate::codebook::PhaseSchedule;
use crate::geometry::{self, GeometryError, Point2, RisPose, C};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scenario has {scenario} RISs but the schedule was built for {schedule}")]
    RisCountMismatch { scenario: usize, schedule: usize },
    #[error("RIS {k} has {got} elements, schedule expects {expected}")]
    ElementMismatch { k: usize, got: usize, expected: usize },
    #[error("zero distance between Tx and Rx")]
    ZeroDistance,
    #[error("frame dump: {0}")]
    Io(#[from] std::io::Error),
}

/// OFDM numerology and link budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    /// Number of subcarriers.
    pub n: usize,
    /// Subcarrier spacing (Hz).
    pub delta_f: f64,
    /// Carrier frequency (Hz).
    pub f_c: f64,
    /// Transmit power per subcarrier (W); each entry carries amplitude
    /// `sqrt(e_s)`.
    pub e_s: f64,
    /// Noise power spectral density (W/Hz).
    pub n0: f64,
    pub cp_fraction: f64,
    /// Slots per interval.
    pub t: usize,
    /// Intervals per frame.
    pub n_t: usize,
}

impl Default for OfdmParams {
    fn default() -> Self {
        let mut p = Self {
            n: 512,
            delta_f: 120e3,
            f_c: 6e9,
            e_s: 0.0,
            n0: dbm_to_watts(-174.0),
            cp_fraction: 0.25,
            t: 32,
            n_t: 2,
        };
        p.set_power_dbm(30.0);
        p
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

impl OfdmParams {
    /// Symbol duration including the cyclic prefix (s).
    pub fn t_d(&self) -> f64 {
        (1.0 + self.cp_fraction) / self.delta_f
    }

    pub fn lambda(&self) -> f64 {
        C / self.f_c
    }

    /// Per-entry noise variance.
    pub fn noise_var(&self) -> f64 {
        self.delta_f * self.n0
    }

    pub fn total_slots(&self) -> usize {
        self.t * self.n_t
    }

    /// Total transmit power `N * Es` in dBm.
    pub fn power_dbm(&self) -> f64 {
        watts_to_dbm(self.n as f64 * self.e_s)
    }

    pub fn set_power_dbm(&mut self, dbm: f64) {
        self.e_s = dbm_to_watts(dbm) / self.n as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Point2,
    /// Reflection coefficient (amplitude).
    pub reflection_gain: f64,
}

/// Anchors, RISs and static scatterers at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tx: Point2,
    pub rxs: Vec<Point2>,
    pub ris: Vec<RisPose>,
    #[serde(default)]
    pub scatterers: Vec<Scatterer>,
    /// Power gain (dB) applied on top of the free-space cascade of every RIS.
    #[serde(default)]
    pub ris_gain_db: f64,
}

/// Parameters of one Tx -> RIS -> Rx path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisPath {
    pub tau: f64,
    pub alpha: f64,
    pub gain: f64,
    pub f_d: f64,
    pub elements: usize,
    pub spacing: f64,
}

/// A path whose response does not change within a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPath {
    pub tau: f64,
    pub gain: f64,
}

/// Per-receiver observation matrices, `N x (N_T*T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RxFrameSet {
    pub frames: Vec<DMatrix<Complex64>>,
}

/// `[1, e^{j 2 pi delta_f tau}, ..., e^{j 2 pi (N-1) delta_f tau}]`.
pub fn delay_vector(tau: f64, n: usize, delta_f: f64) -> Vec<Complex64> {
    let step = 2.0 * PI * delta_f * tau;
    (0..n).map(|i| Complex64::from_polar(1.0, step * i as f64)).collect()
}

/// Free-space cascade amplitude `lambda^2 / ((4 pi)^2 d_tk d_kr)`.
pub fn cascaded_gain(
    p_t: &Point2,
    p_r: &Point2,
    p_k: &Point2,
    lambda: f64,
) -> Result<f64, GeometryError> {
    let (d1, d2) = (p_k.dist(p_t), p_k.dist(p_r));
    if d1 == 0.0 || d2 == 0.0 {
        return Err(GeometryError::Degenerate);
    }
    Ok(lambda * lambda / ((4.0 * PI).powi(2) * d1 * d2))
}

/// Amplitude factor corresponding to a power gain in dB.
pub fn db_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// True path parameters, indexed `[k][receiver]`.
pub fn ris_paths(scenario: &Scenario, ofdm: &OfdmParams) -> Result<Vec<Vec<RisPath>>, ChannelError> {
    let lambda = ofdm.lambda();
    let boost = db_amplitude(scenario.ris_gain_db);
    scenario
        .ris
        .iter()
        .map(|ris| {
            scenario
                .rxs
                .iter()
                .map(|rx| {
                    let p = &ris.position;
                    let alpha = geometry::sum_cosines_alpha(&scenario.tx, rx, p, ris.orientation_psi)?;
                    Ok(RisPath {
                        tau: geometry::path_delay(&scenario.tx, rx, p),
                        alpha,
                        gain: boost * cascaded_gain(&scenario.tx, rx, p, lambda)?,
                        f_d: geometry::doppler_freq(alpha, ris.speed(), ofdm.f_c),
                        elements: ris.num_elements,
                        spacing: ris.element_spacing,
                    })
                })
                .collect()
        })
        .collect()
}

/// Direct path (always present) followed by single-bounce scatterer paths,
/// one list per receiver.
pub fn static_paths(scenario: &Scenario, ofdm: &OfdmParams) -> Result<Vec<Vec<StaticPath>>, ChannelError> {
    let lambda = ofdm.lambda();
    scenario
        .rxs
        .iter()
        .map(|rx| {
            let d = rx.dist(&scenario.tx);
            if d == 0.0 {
                return Err(ChannelError::ZeroDistance);
            }
            let mut paths = vec![StaticPath { tau: d / C, gain: lambda / (4.0 * PI * d) }];
            for s in &scenario.scatterers {
                paths.push(StaticPath {
                    tau: geometry::path_delay(&scenario.tx, rx, &s.position),
                    gain: s.reflection_gain * cascaded_gain(&scenario.tx, rx, &s.position, lambda)?,
                });
            }
            Ok(paths)
        })
        .collect()
}

/// Array factor `a(theta)^T Omega a(phi)` for a diagonal `Omega`.
pub fn array_factor(diag: &[Complex64], alpha: f64, spacing: f64, lambda: f64) -> Complex64 {
    let a = geometry::steering_vector(alpha, diag.len(), spacing, lambda);
    diag.iter().zip(&a).map(|(w, v)| w * v).sum()
}

/// Synthesize frames for the scenario; noise is drawn from `seed` whenever
/// `ofdm.n0 > 0`.
pub fn simulate_frames(
    scenario: &Scenario,
    ofdm: &OfdmParams,
    sched: &PhaseSchedule,
    seed: u64,
) -> Result<RxFrameSet, ChannelError> {
    if scenario.ris.len() != sched.num_ris() {
        return Err(ChannelError::RisCountMismatch {
            scenario: scenario.ris.len(),
            schedule: sched.num_ris(),
        });
    }
    for (k, r) in scenario.ris.iter().enumerate() {
        if r.num_elements != sched.m {
            return Err(ChannelError::ElementMismatch { k, got: r.num_elements, expected: sched.m });
        }
    }
    let paths = ris_paths(scenario, ofdm)?;
    let statics = static_paths(scenario, ofdm)?;
    Ok(simulate_paths(&paths, &statics, ofdm, sched, seed))
}

/// Frame synthesis from explicit path parameters (`paths[k][receiver]`).
pub fn simulate_paths(
    paths: &[Vec<RisPath>],
    statics: &[Vec<StaticPath>],
    ofdm: &OfdmParams,
    sched: &PhaseSchedule,
    seed: u64,
) -> RxFrameSet {
    let n_rx = statics.len();
    let frames = (0..n_rx)
        .map(|r| {
            let ris: Vec<RisPath> = paths.iter().map(|p| p[r]).collect();
            let mut y = noiseless_frame(&ris, &statics[r], ofdm, sched);
            add_noise(&mut y, ofdm, seed, r);
            y
        })
        .collect();
    RxFrameSet { frames }
}

/// Noise-free frame for one receiver; `ris[k]` is the path of RIS `k`.
pub fn noiseless_frame(
    ris: &[RisPath],
    statics: &[StaticPath],
    ofdm: &OfdmParams,
    sched: &PhaseSchedule,
) -> DMatrix<Complex64> {
    let (n, slots) = (ofdm.n, ofdm.total_slots());
    let amp = ofdm.e_s.sqrt();
    let lambda = ofdm.lambda();
    let t_d = ofdm.t_d();

    let mut static_col = vec![Complex64::new(0.0, 0.0); n];
    for p in statics {
        for (acc, d) in static_col.iter_mut().zip(delay_vector(p.tau, n, ofdm.delta_f)) {
            *acc += amp * p.gain * d;
        }
    }

    let mut y = DMatrix::from_fn(n, slots, |i, _| static_col[i]);
    for (k, path) in ris.iter().enumerate() {
        let dv: Vec<Complex64> = delay_vector(path.tau, n, ofdm.delta_f)
            .into_iter()
            .map(|d| amp * path.gain * d)
            .collect();
        let interval_af: Vec<Complex64> = sched.interval_diag[k]
            .iter()
            .map(|diag| array_factor(diag, path.alpha, path.spacing, lambda))
            .collect();
        for col in 0..slots {
            let (interval, slot) = (col / sched.t, col % sched.t);
            let doppler = Complex64::from_polar(1.0, 2.0 * PI * path.f_d * t_d * col as f64);
            let scale = sched.omega[k][slot] * interval_af[interval] * doppler;
            for (entry, d) in y.column_mut(col).iter_mut().zip(&dv) {
                *entry += d * scale;
            }
        }
    }
    y
}

/// Adds circular Gaussian noise. Each (receiver, slot) column draws from its
/// own ChaCha stream, so a given subcarrier sees the same noise sample for
/// every frame size sharing the seed.
fn add_noise(y: &mut DMatrix<Complex64>, ofdm: &OfdmParams, seed: u64, rx: usize) {
    let var = ofdm.noise_var();
    if var <= 0.0 {
        return;
    }
    let sigma = (var / 2.0).sqrt();
    let slots = y.ncols();
    for col in 0..slots {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((rx * slots + col) as u64);
        for entry in y.column_mut(col).iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *entry += Complex64::new(sigma * re, sigma * im);
        }
    }
}

#[derive(Serialize)]
struct DumpSidecar<'a> {
    receivers: usize,
    rows: usize,
    cols: usize,
    layout: &'static str,
    ofdm: &'a OfdmParams,
}

/// Writes `<stem>.bin` (little-endian complex64, receiver-major, then
/// column-major) and `<stem>.json` describing it.
pub fn dump_frames(frames: &RxFrameSet, ofdm: &OfdmParams, stem: &Path) -> Result<(), ChannelError> {
    let mut buf = Vec::new();
    for y in &frames.frames {
        for z in y.iter() {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }
    std::fs::File::create(stem.with_extension("bin"))?.write_all(&buf)?;
    let (rows, cols) = frames.frames.first().map_or((0, 0), |y| y.shape());
    let side = DumpSidecar {
        receivers: frames.frames.len(),
        rows,
        cols,
        layout: "receiver-major, column-major, (re f32, im f32) little-endian",
        ofdm,
    };
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&side).expect("sidecar serializes"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_schedule, phase_diag_at_slot};

    fn pose(p: Point2, m: usize, lambda: f64) -> RisPose {
        RisPose {
            position: p,
            orientation_psi: PI / 6.0,
            velocity: [3.0, 4.0],
            acceleration: [0.0, 0.0],
            num_elements: m,
            element_spacing: lambda / 4.0,
        }
    }

    fn small_ofdm() -> OfdmParams {
        OfdmParams { n: 32, t: 8, n_t: 2, n0: 0.0, ..OfdmParams::default() }
    }

    #[test]
    fn delay_vector_examples() {
        assert!(delay_vector(0.0, 5, 1e5).iter().all(|z| (*z - 1.0).norm() < 1e-15));
        let d = delay_vector(1.0 / (4.0 * 1e5), 4, 1e5);
        let expect = [0.0, 0.5 * PI, PI, 1.5 * PI].map(|p| Complex64::from_polar(1.0, p));
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!(delay_vector(3.3e-7, 64, 1.2e5).iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn cascade_examples() {
        let lambda = C / 6e9;
        let t = Point2::new(0.0, 0.0);
        let g = cascaded_gain(&t, &Point2::new(20.0, 0.0), &Point2::new(10.0, 0.0), lambda).unwrap();
        assert!((g - lambda * lambda / (1600.0 * PI * PI)).abs() < 1e-20);
        assert!((g - 1.58095e-7).abs() < 1e-11, "{g}");
        let g2 = cascaded_gain(&t, &Point2::new(40.0, 0.0), &Point2::new(20.0, 0.0), lambda).unwrap();
        assert!((g / g2 - 4.0).abs() < 1e-12);
        assert!(cascaded_gain(&t, &t, &t, lambda).is_err());
    }

    #[test]
    fn power_conversion_round_trip() {
        let mut o = OfdmParams::default();
        assert!((o.power_dbm() - 30.0).abs() < 1e-12);
        assert!((o.e_s - 1.0 / 512.0).abs() < 1e-15);
        o.set_power_dbm(17.5);
        assert!((o.power_dbm() - 17.5).abs() < 1e-12);
        assert!((o.t_d() - 1.25 / 120e3).abs() < 1e-18);
    }

    #[test]
    fn single_element_matches_direct_loop() {
        // Re-evaluate the received-signal sum sample by sample from the
        // schedule lookup, without the vectorised per-interval factorisation.
        let ofdm = small_ofdm();
        let sched = build_schedule(1, 1, 2, ofdm.t, ofdm.n_t).unwrap();
        let path = RisPath { tau: 71.3e-9, alpha: 0.37, gain: 2e-3, f_d: 180.0, elements: 2, spacing: ofdm.lambda() / 4.0 };
        let y = noiseless_frame(&[path], &[], &ofdm, &sched);
        let lambda = ofdm.lambda();
        for tb in 1..=ofdm.total_slots() {
            let diag = phase_diag_at_slot(&sched, 0, tb).unwrap();
            let mut af = Complex64::new(0.0, 0.0);
            for (m, w) in diag.iter().enumerate() {
                af += w * Complex64::from_polar(1.0, 2.0 * PI / lambda * m as f64 * path.spacing * path.alpha);
            }
            for n in 1..=ofdm.n {
                let expect = ofdm.e_s.sqrt()
                    * path.gain
                    * Complex64::from_polar(1.0, 2.0 * PI * (n - 1) as f64 * ofdm.delta_f * path.tau)
                    * af
                    * Complex64::from_polar(1.0, 2.0 * PI * path.f_d * ofdm.t_d() * (tb - 1) as f64);
                let got = y[(n - 1, tb - 1)];
                assert!((got - expect).norm() <= 1e-12 * expect.norm().max(1e-30), "n={n} tb={tb}");
            }
        }
    }

    #[test]
    fn pure_noise_variance() {
        let ofdm = OfdmParams { n: 1024, t: 32, n_t: 4, ..OfdmParams::default() };
        let sched = build_schedule(0, 1, 2, ofdm.t, ofdm.n_t).unwrap();
        let frames = simulate_paths(&[], &[vec![]], &ofdm, &sched, 7);
        let y = &frames.frames[0];
        assert!(y.len() >= 100_000);
        let var = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len() as f64;
        let rel = (var - ofdm.noise_var()).abs() / ofdm.noise_var();
        assert!(rel < 0.05, "relative variance error {rel}");
    }

    #[test]
    fn direct_path_present_for_every_receiver() {
        let ofdm = small_ofdm();
        let lambda = ofdm.lambda();
        let sc = Scenario {
            tx: Point2::new(0.0, 0.0),
            rxs: vec![Point2::new(12.0, 0.0), Point2::new(14.0, 0.0)],
            ris: vec![],
            scatterers: vec![],
            ris_gain_db: 0.0,
        };
        let sched = build_schedule(0, 1, 4, ofdm.t, ofdm.n_t).unwrap();
        let f = simulate_frames(&sc, &ofdm, &sched, 1).unwrap();
        for (r, y) in f.frames.iter().enumerate() {
            let d = sc.rxs[r].dist(&sc.tx);
            let expect = ofdm.e_s.sqrt() * lambda / (4.0 * PI * d);
            assert!((y[(0, 0)].norm() - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn deterministic_and_linear() {
        let ofdm = OfdmParams { n: 16, t: 8, n_t: 2, ..OfdmParams::default() };
        let lambda = ofdm.lambda();
        let mut sc = Scenario {
            tx: Point2::new(0.0, 0.0),
            rxs: vec![Point2::new(12.0, 0.0)],
            ris: vec![pose(Point2::new(7.0, 7.0), 4, lambda), pose(Point2::new(3.0, 9.0), 4, lambda)],
            scatterers: vec![Scatterer { position: Point2::new(5.0, -3.0), reflection_gain: 0.3 }],
            ris_gain_db: 20.0,
        };
        let sched = build_schedule(2, 2, 4, ofdm.t, ofdm.n_t).unwrap();
        let both = simulate_frames(&sc, &ofdm, &sched, 11).unwrap();
        assert_eq!(both, simulate_frames(&sc, &ofdm, &sched, 11).unwrap());

        // Single-RIS frames share the noise and static terms; subtracting one
        // copy of those leaves the sum of the two RIS contributions.
        let paths = ris_paths(&sc, &ofdm).unwrap();
        let statics = static_paths(&sc, &ofdm).unwrap();
        let one = simulate_paths(&paths, &statics, &ofdm, &sched, 11);
        assert_eq!(one, both);
        let zero_gain = |k: usize| {
            let mut p = paths.clone();
            p[k][0].gain = 0.0;
            simulate_paths(&p, &statics, &ofdm, &sched, 11)
        };
        let only0 = zero_gain(1);
        let only1 = zero_gain(0);
        sc.ris.clear();
        let empty = build_schedule(0, 2, 4, ofdm.t, ofdm.n_t).unwrap();
        let base = simulate_frames(&sc, &ofdm, &empty, 11).unwrap();
        let recon = &only0.frames[0] + &only1.frames[0] - &base.frames[0];
        let err = (&recon - &both.frames[0]).norm() / both.frames[0].norm();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn ris_energy_scaling() {
        let ofdm = OfdmParams { n: 16, t: 4, n_t: 2, n0: 0.0, ..OfdmParams::default() };
        let energy = |m: usize, es_scale: f64| {
            let mut o = ofdm.clone();
            o.e_s *= es_scale;
            let sched = build_schedule(1, 1, m, o.t, o.n_t).unwrap();
            let path = RisPath { tau: 5e-8, alpha: 0.0, gain: 1e-3, f_d: 0.0, elements: m, spacing: o.lambda() / 4.0 };
            // Interval 1 uses all-ones weights, so boresight gives a coherent sum.
            let y = noiseless_frame(&[path], &[], &o, &sched);
            y.column(0).norm_squared()
        };
        assert!((energy(8, 3.0) / energy(8, 1.0) - 3.0).abs() < 1e-12);
        assert!((energy(16, 1.0) / energy(8, 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_schedule_rejected() {
        let ofdm = small_ofdm();
        let sc = Scenario {
            tx: Point2::new(0.0, 0.0),
            rxs: vec![Point2::new(12.0, 0.0)],
            ris: vec![pose(Point2::new(7.0, 7.0), 4, ofdm.lambda())],
            scatterers: vec![],
            ris_gain_db: 0.0,
        };
        let sched = build_schedule(2, 2, 4, ofdm.t, ofdm.n_t).unwrap();
        assert!(matches!(
            simulate_frames(&sc, &ofdm, &sched, 0),
            Err(ChannelError::RisCountMismatch { .. })
        ));
    }
}
