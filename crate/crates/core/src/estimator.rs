//! Measurement chain from raw frames to per-(RIS, receiver) estimates of
//! delay, Doppler and the angle parameter `alpha`.
//!
//! Per receiver and interval the odd/even slot difference removes every path
//! that is constant over the interval. Correlating with the RIS code
//! isolates one RIS, and differencing paired intervals leaves only the
//! element-2 term of the array. Delay and Doppler come from the peak of a
//! zero-padded 2-D DFT of those differences (forward and inverse along the
//! interval axis to resolve the Doppler sign). The code is then re-applied
//! with the Doppler rotation folded in, the delay ramp is removed, and the
//! subcarrier mean of each interval yields `s_hat`, whose paired differences
//! carry `e^{j 2 pi d alpha / lambda}`.

use crate::channel::{delay_vector, OfdmParams, RxFrameSet};
use crate::codebook::{doppler_compensated_gamma, PhaseSchedule};
use crate::geometry::C;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("slot count must be even, got {0}")]
    OddSlots(usize),
    #[error("interval count must be even, got {0}")]
    OddIntervals(usize),
    #[error("empty or degenerate input")]
    Empty,
    #[error("FFT length {fft} shorter than input length {len}")]
    ShortFft { fft: usize, len: usize },
    #[error("paired intervals share the same element-2 weight")]
    ZeroDenominator,
    #[error("frame has {got} columns, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

/// Grid sizes of the delay/Doppler search.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub n_f_tau: usize,
    pub n_f_fd: usize,
    /// Refine delay and Doppler off-grid before the compensation step. The
    /// reported `tau_hat`/`f_d_hat` always stay on the DFT grid.
    pub refine: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { n_f_tau: 8192, n_f_fd: 1024, refine: true }
    }
}

/// Estimates for one (RIS, receiver) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeasurement {
    pub tau_hat: f64,
    pub f_d_hat: f64,
    /// Off-grid delay used for compensation.
    pub tau_fine: f64,
    /// Off-grid Doppler used for compensation.
    pub f_d_fine: f64,
    pub alpha_hat: f64,
    /// One value per interval.
    pub s_hat: Vec<Complex64>,
    /// `c * tau_hat` (m).
    pub xi_hat: f64,
}

/// Estimates indexed `[k][receiver]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub pairs: Vec<Vec<PairMeasurement>>,
}

impl MeasurementSet {
    pub fn get(&self, k: usize, rx: usize) -> &PairMeasurement {
        &self.pairs[k][rx]
    }

    /// Measurements of RIS `k` across receivers.
    pub fn for_ris(&self, k: usize) -> &[PairMeasurement] {
        &self.pairs[k]
    }

    pub const CSV_HEADER: &'static str = "trial,k,rx,tau_hat_s,f_d_hat_hz,alpha_hat,xi_hat_m,s_hat";

    /// One CSV row per (k, receiver); `s_hat` is written as `re:im` pairs
    /// joined by `;`.
    pub fn csv_rows(&self, trial: usize, out: &mut String) {
        for (k, row) in self.pairs.iter().enumerate() {
            for (r, m) in row.iter().enumerate() {
                let s: Vec<String> = m.s_hat.iter().map(|z| format!("{}:{}", z.re, z.im)).collect();
                let _ = writeln!(
                    out,
                    "{trial},{},{},{},{},{},{},{}",
                    k + 1,
                    r + 1,
                    m.tau_hat,
                    m.f_d_hat,
                    m.alpha_hat,
                    m.xi_hat,
                    s.join(";")
                );
            }
        }
    }
}

/// Odd-minus-even slot difference of one interval, halved.
pub fn cancel_scatterers(y: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>, EstimatorError> {
    let t = y.ncols();
    if !t.is_multiple_of(2) {
        return Err(EstimatorError::OddSlots(t));
    }
    Ok(DMatrix::from_fn(y.nrows(), t / 2, |n, i| (y[(n, 2 * i)] - y[(n, 2 * i + 1)]) * 0.5))
}

/// `(2/T) * Y' * conj(code)`.
pub fn extract_ris(y_prime: &DMatrix<Complex64>, code: &[Complex64]) -> Vec<Complex64> {
    let scale = 1.0 / y_prime.ncols() as f64;
    let mut r = vec![Complex64::new(0.0, 0.0); y_prime.nrows()];
    for (col, g) in y_prime.column_iter().zip(code) {
        let w = g.conj() * scale;
        for (acc, v) in r.iter_mut().zip(col.iter()) {
            *acc += v * w;
        }
    }
    r
}

/// Consecutive-interval differences `r_{2n-1} - r_{2n}`.
pub fn difference_pairs(r: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>, EstimatorError> {
    if !r.len().is_multiple_of(2) {
        return Err(EstimatorError::OddIntervals(r.len()));
    }
    Ok(r
        .chunks(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| a - b).collect())
        .collect())
}

/// Grid peak of the delay/Doppler search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaDoppler {
    pub tau_hat: f64,
    pub f_d_hat: f64,
    /// 0-based delay bin of the peak.
    pub tau_bin: usize,
}

/// Peak of `|F_tau R F_fd^T|` over the zero-padded grid, searched row by
/// row with a branch-and-bound on `sum_c |X_c[m]|`, which bounds every
/// Doppler bin of delay row `m`. Ties go to the lowest (delay, Doppler)
/// index.
fn peak_2d(x: &[Vec<Complex64>], n_f_fd: usize, inverse: bool, planner: &mut FftPlanner<f64>) -> (usize, usize, f64) {
    let rows = x[0].len();
    let bound: Vec<f64> = (0..rows).map(|m| x.iter().map(|c| c[m].norm()).sum()).collect();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| bound[b].total_cmp(&bound[a]).then(a.cmp(&b)));

    let fft = if inverse { planner.plan_fft_inverse(n_f_fd) } else { planner.plan_fft_forward(n_f_fd) };
    let mut buf = vec![Complex64::new(0.0, 0.0); n_f_fd];
    let mut best = (usize::MAX, usize::MAX, f64::NEG_INFINITY);
    for m in order {
        if bound[m] * (1.0 + 1e-12) < best.2 {
            break;
        }
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (slot, c) in buf.iter_mut().zip(x) {
            *slot = c[m];
        }
        fft.process(&mut buf);
        for (q, z) in buf.iter().enumerate() {
            let v = z.norm();
            if v > best.2 || (v == best.2 && (m, q) < (best.0, best.1)) {
                best = (m, q, v);
            }
        }
    }
    best
}

/// Joint delay and Doppler estimate from the interval differences
/// (`r[c]` is column `c` of `R`).
pub fn estimate_toa_doppler(
    r: &[Vec<Complex64>],
    n_f_tau: usize,
    n_f_fd: usize,
    delta_f: f64,
    t_d: f64,
    t: usize,
) -> Result<ToaDoppler, EstimatorError> {
    let n = r.first().map_or(0, Vec::len);
    if n == 0 || n_f_fd == 0 {
        return Err(EstimatorError::Empty);
    }
    if n_f_tau < n {
        return Err(EstimatorError::ShortFft { fft: n_f_tau, len: n });
    }
    if n_f_fd < r.len() {
        return Err(EstimatorError::ShortFft { fft: n_f_fd, len: r.len() });
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_f_tau);
    let x: Vec<Vec<Complex64>> = r
        .iter()
        .map(|col| {
            let mut buf = col.clone();
            buf.resize(n_f_tau, Complex64::new(0.0, 0.0));
            fwd.process(&mut buf);
            buf
        })
        .collect();

    let (m1, q1, _) = peak_2d(&x, n_f_fd, false, &mut planner);
    let (_, q2, _) = peak_2d(&x, n_f_fd, true, &mut planner);
    let scale = 1.0 / (2.0 * n_f_fd as f64 * t_d * t as f64);
    let f1 = q1 as f64 * scale;
    let f2 = -(q2 as f64) * scale;
    Ok(ToaDoppler {
        tau_hat: m1 as f64 / (n_f_tau as f64 * delta_f),
        f_d_hat: if f2.abs() < f1.abs() { f2 } else { f1 },
        tau_bin: m1,
    })
}

/// Root of `g` inside `[lo, hi]` by bisection, provided `g` changes sign
/// from positive to negative.
fn bisect_peak(lo: f64, hi: f64, g: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut a, mut b) = (lo, hi);
    if !(g(a) > 0.0 && g(b) < 0.0) {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if g(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// `sum_n x_n e^{-j 2 pi u n}` and its derivative in `u`.
fn dtft_with_slope(x: &[Complex64], u: f64) -> (Complex64, Complex64) {
    let rot = Complex64::from_polar(1.0, -2.0 * PI * u);
    let mut ph = Complex64::new(1.0, 0.0);
    let (mut s, mut ds) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (i, v) in x.iter().enumerate() {
        let term = v * ph;
        s += term;
        ds += term * Complex64::new(0.0, -2.0 * PI * i as f64);
        ph *= rot;
    }
    (s, ds)
}

/// Off-grid maximiser of the summed periodogram of the columns within one
/// bin of the grid estimate. Returns the grid value when no interior
/// stationary point is bracketed.
fn refine_delay(r: &[Vec<Complex64>], tau_hat: f64, n_f_tau: usize, delta_f: f64) -> f64 {
    let u0 = tau_hat * delta_f;
    let du = 1.0 / n_f_tau as f64;
    let slope = |u: f64| {
        r.iter()
            .map(|col| {
                let (s, ds) = dtft_with_slope(col, u);
                (s.conj() * ds).re
            })
            .sum::<f64>()
    };
    bisect_peak(u0 - du, u0 + du, slope).map_or(tau_hat, |u| u / delta_f)
}

fn refine_doppler(r: &[Vec<Complex64>], tau: f64, f_hat: f64, n_f_fd: usize, delta_f: f64, t_d: f64, t: usize) -> f64 {
    if r.len() < 2 {
        return f_hat;
    }
    let z: Vec<Complex64> = r.iter().map(|col| dtft_with_slope(col, tau * delta_f).0).collect();
    let cycles = 2.0 * t_d * t as f64;
    let du = 1.0 / n_f_fd as f64;
    let u0 = f_hat * cycles;
    let slope = |u: f64| {
        let (s, ds) = dtft_with_slope(&z, u);
        (s.conj() * ds).re
    };
    bisect_peak(u0 - du, u0 + du, slope).map_or(f_hat, |u| u / cycles)
}

/// Code-matched extraction with Doppler rotation removed, followed by delay
/// de-rotation: `(2/T) (Y' conj(gamma_n)) * conj(d(tau))`, one vector per
/// interval.
pub fn compensate_and_extract(
    y_prime: &[DMatrix<Complex64>],
    sched: &PhaseSchedule,
    k: usize,
    f_d_hat: f64,
    tau_hat: f64,
    ofdm: &OfdmParams,
) -> Vec<Vec<Complex64>> {
    let n = y_prime.first().map_or(0, |y| y.nrows());
    let d = delay_vector(tau_hat, n, ofdm.delta_f);
    y_prime
        .iter()
        .enumerate()
        .map(|(i, yp)| {
            let code = doppler_compensated_gamma(sched, k, f_d_hat, ofdm.t_d(), i + 1);
            extract_ris(yp, &code).iter().zip(&d).map(|(v, dv)| v * dv.conj()).collect()
        })
        .collect()
}

/// Subcarrier mean.
pub fn estimate_s(r_dprime: &[Complex64]) -> Complex64 {
    r_dprime.iter().sum::<Complex64>() / r_dprime.len() as f64
}

/// Angle parameter from the per-interval `s_hat` values of RIS `k`, on the
/// principal branch and clamped to `[-2, 2]`.
pub fn estimate_alpha(
    s_hats: &[Complex64],
    sched: &PhaseSchedule,
    k: usize,
    spacing: f64,
    lambda: f64,
) -> Result<f64, EstimatorError> {
    if !s_hats.len().is_multiple_of(2) || s_hats.is_empty() {
        return Err(EstimatorError::OddIntervals(s_hats.len()));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (p, pair) in s_hats.chunks(2).enumerate() {
        let denom = sched.toggle(k, 2 * p) - sched.toggle(k, 2 * p + 1);
        if denom.norm() == 0.0 {
            return Err(EstimatorError::ZeroDenominator);
        }
        acc += (pair[0] - pair[1]) / denom;
    }
    acc /= s_hats.len() as f64;
    Ok((lambda / (2.0 * PI * spacing) * acc.arg()).clamp(-2.0, 2.0))
}

/// Interval-wise scatterer cancellation of a whole frame.
pub fn cancel_frame(y: &DMatrix<Complex64>, t: usize) -> Result<Vec<DMatrix<Complex64>>, EstimatorError> {
    if t == 0 || !y.ncols().is_multiple_of(t) {
        return Err(EstimatorError::Dimension { got: y.ncols(), expected: t });
    }
    (0..y.ncols() / t)
        .map(|i| cancel_scatterers(&y.columns(i * t, t).into_owned()))
        .collect()
}

/// Full chain for one RIS on one receiver's cancelled frame.
pub fn measure_pair(
    y_prime: &[DMatrix<Complex64>],
    sched: &PhaseSchedule,
    k: usize,
    spacing: f64,
    ofdm: &OfdmParams,
    cfg: &EstimatorConfig,
) -> Result<PairMeasurement, EstimatorError> {
    let r: Vec<Vec<Complex64>> = y_prime.iter().map(|yp| extract_ris(yp, &sched.gamma[k])).collect();
    let rd = difference_pairs(&r)?;
    let td = estimate_toa_doppler(&rd, cfg.n_f_tau, cfg.n_f_fd, ofdm.delta_f, ofdm.t_d(), ofdm.t)?;
    let (tau_fine, f_d_fine) = if cfg.refine {
        let tau = refine_delay(&rd, td.tau_hat, cfg.n_f_tau, ofdm.delta_f);
        (tau, refine_doppler(&rd, tau, td.f_d_hat, cfg.n_f_fd, ofdm.delta_f, ofdm.t_d(), ofdm.t))
    } else {
        (td.tau_hat, td.f_d_hat)
    };
    let s_hat: Vec<Complex64> = compensate_and_extract(y_prime, sched, k, f_d_fine, tau_fine, ofdm)
        .iter()
        .map(|v| estimate_s(v))
        .collect();
    let alpha_hat = estimate_alpha(&s_hat, sched, k, spacing, ofdm.lambda())?;
    Ok(PairMeasurement {
        tau_hat: td.tau_hat,
        f_d_hat: td.f_d_hat,
        tau_fine,
        f_d_fine,
        alpha_hat,
        s_hat,
        xi_hat: C * td.tau_hat,
    })
}

/// Runs the chain for every (RIS, receiver) pair. `spacing[k]` is the
/// element spacing of RIS `k`.
pub fn measure_all(
    frames: &RxFrameSet,
    sched: &PhaseSchedule,
    ofdm: &OfdmParams,
    spacing: &[f64],
    cfg: &EstimatorConfig,
) -> Result<MeasurementSet, EstimatorError> {
    let expected = sched.total_slots();
    let cancelled = frames
        .frames
        .iter()
        .map(|y| {
            if y.ncols() != expected {
                return Err(EstimatorError::Dimension { got: y.ncols(), expected });
            }
            cancel_frame(y, sched.t)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = (0..sched.num_ris())
        .map(|k| {
            cancelled
                .iter()
                .map(|yp| measure_pair(yp, sched, k, spacing[k], ofdm, cfg))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MeasurementSet { pairs })
}
