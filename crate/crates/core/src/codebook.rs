//! RIS phase-shift schedule.
//!
//! Each frame spans `n_t` intervals of `t` slots. Within an interval RIS `k`
//! applies `omega[k][t] * interval_diag[k][n]`: consecutive slot pairs carry
//! opposite signs so static paths cancel under odd/even differencing, the odd
//! slots follow a DFT column so different RISs are orthogonal, and element 2
//! toggles sign between paired intervals so that a single array phase term
//! survives interval differencing.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodebookError {
    #[error("codebook capacity exceeded: {k} RISs need at most T/2 = {half} columns")]
    CapacityExceeded { k: usize, half: usize },
    #[error("slots per interval must be even and positive, got {0}")]
    OddSlots(usize),
    #[error("interval count must be even and positive, got {0}")]
    OddIntervals(usize),
    #[error("at least two RIS elements are required, got {0}")]
    TooFewElements(usize),
    #[error("RIS index {0} out of range")]
    RisOutOfRange(usize),
    #[error("slot {t_bar} outside 1..={total}")]
    SlotOutOfRange { t_bar: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub k_max: usize,
    /// Slots per interval.
    pub t: usize,
    /// Intervals per frame.
    pub n_t: usize,
    /// Elements per RIS.
    pub m: usize,
    /// Slot weights, `omega[k][slot]`, length `t`.
    pub omega: Vec<Vec<Complex64>>,
    /// Odd-slot codes, `gamma[k][pair]`, length `t / 2`.
    pub gamma: Vec<Vec<Complex64>>,
    /// Per-interval element diagonals, `interval_diag[k][interval][element]`.
    pub interval_diag: Vec<Vec<Vec<Complex64>>>,
}

/// Build the schedule for `k` active RISs. Columns of the `t/2`-point DFT
/// matrix are assigned in order, RIS `k` (0-based) getting column `k`.
pub fn build_schedule(
    k: usize,
    k_max: usize,
    m: usize,
    t: usize,
    n_t: usize,
) -> Result<PhaseSchedule, CodebookError> {
    if t == 0 || !t.is_multiple_of(2) {
        return Err(CodebookError::OddSlots(t));
    }
    if n_t == 0 || !n_t.is_multiple_of(2) {
        return Err(CodebookError::OddIntervals(n_t));
    }
    if m < 2 {
        return Err(CodebookError::TooFewElements(m));
    }
    let half = t / 2;
    if k > k_max || k_max > half {
        return Err(CodebookError::CapacityExceeded { k: k.max(k_max), half });
    }

    let gamma: Vec<Vec<Complex64>> = (0..k)
        .map(|col| {
            (0..half)
                .map(|row| {
                    let phase = -2.0 * PI * ((row * col) % half) as f64 / half as f64;
                    Complex64::from_polar(1.0, phase)
                })
                .collect()
        })
        .collect();
    let omega = gamma
        .iter()
        .map(|g| g.iter().flat_map(|&z| [z, -z]).collect())
        .collect();
    let one = Complex64::new(1.0, 0.0);
    let interval_diag = (0..k)
        .map(|_| {
            (0..n_t)
                .map(|n| {
                    let mut diag = vec![one; m];
                    diag[1] = if n.is_multiple_of(2) { one } else { -one };
                    diag
                })
                .collect()
        })
        .collect();

    Ok(PhaseSchedule { k_max, t, n_t, m, omega, gamma, interval_diag })
}

impl PhaseSchedule {
    pub fn num_ris(&self) -> usize {
        self.gamma.len()
    }

    /// Total slots per frame.
    pub fn total_slots(&self) -> usize {
        self.t * self.n_t
    }

    /// Element-2 entry of the interval diagonal (0-based interval).
    pub fn toggle(&self, k: usize, interval: usize) -> Complex64 {
        self.interval_diag[k][interval][1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

/// Diagonal RIS response at global slot `t_bar` (1-based).
pub fn phase_diag_at_slot(
    sched: &PhaseSchedule,
    k: usize,
    t_bar: usize,
) -> Result<Vec<Complex64>, CodebookError> {
    if k >= sched.num_ris() {
        return Err(CodebookError::RisOutOfRange(k));
    }
    let total = sched.total_slots();
    if t_bar == 0 || t_bar > total {
        return Err(CodebookError::SlotOutOfRange { t_bar, total });
    }
    let interval = (t_bar - 1) / sched.t;
    let slot = (t_bar - 1) % sched.t;
    let w = sched.omega[k][slot];
    Ok(sched.interval_diag[k][interval].iter().map(|&z| w * z).collect())
}

/// Odd-slot code of RIS `k` weighted by the Doppler rotation of interval
/// `n_t` (1-based) and the pairwise slot sums.
pub fn doppler_compensated_gamma(
    sched: &PhaseSchedule,
    k: usize,
    f_d_hat: f64,
    t_d: f64,
    n_t: usize,
) -> Vec<Complex64> {
    let step = 2.0 * PI * f_d_hat * t_d;
    let base = Complex64::from_polar(1.0, step * (sched.t * (n_t - 1)) as f64);
    sched.gamma[k]
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let pair = Complex64::from_polar(1.0, step * (2 * i) as f64)
                + Complex64::from_polar(1.0, step * (2 * i + 1) as f64);
            g * base * pair
        })
        .collect()
}
