//! Fisher information of the received RIS signals and the derived bounds:
//! position error bound per RIS and delay / angle-parameter bounds per link.
//!
//! Parameters per RIS `k`, in order: `p_x, p_y, g_{k,1..R}, f_{d,k,1..R}`.
//! Per link: `tau, alpha, g, f_d`. The FIM is `2 Re{D^H D} / sigma^2` for
//! white circular noise of variance `sigma^2`.

use crate::channel::{array_factor, ris_paths, ChannelError, OfdmParams, RisPath, Scenario};
use crate::codebook::PhaseSchedule;
use crate::geometry::{partial_alpha, partial_tau, Grad2, GeometryError, Point2};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Condition number above which an inverse is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

#[derive(Debug, Error)]
pub enum CrlbError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("Fisher information matrix is singular")]
    Singular,
    #[error("RIS index {0} out of range")]
    RisOutOfRange(usize),
    #[error("receiver index {0} out of range")]
    RxOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Param {
    PosX { k: usize },
    PosY { k: usize },
    Gain { k: usize, rx: usize },
    Doppler { k: usize, rx: usize },
    Delay,
    Alpha,
    LinkGain,
    LinkDoppler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    pub layout: Vec<Param>,
}

/// Inverse of a FIM together with the condition number of its
/// diagonally scaled form.
#[derive(Debug, Clone, PartialEq)]
pub struct Inverse {
    pub matrix: DMatrix<f64>,
    pub condition: f64,
    pub ill_conditioned: bool,
}

impl FisherInfo {
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.matrix;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        (m - m.transpose()).amax() <= tol * scale
    }

    /// Smallest eigenvalue relative to the spectral norm.
    pub fn min_relative_eigenvalue(&self) -> f64 {
        let ev = self.matrix.clone().symmetric_eigenvalues();
        let top = ev.amax();
        if top == 0.0 {
            return 0.0;
        }
        ev.min() / top
    }

    /// Inverse through a Jacobi-scaled symmetric eigendecomposition.
    pub fn invert(&self) -> Result<Inverse, CrlbError> {
        let m = &self.matrix;
        let n = m.nrows();
        let d: DVector<f64> = DVector::from_fn(n, |i, _| {
            let v = m[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        });
        if d.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(CrlbError::Singular);
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * d[i] * d[j]);
        let scaled = (&scaled + scaled.transpose()) * 0.5;
        let eig = scaled.symmetric_eigen();
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        if !(lo > hi * f64::EPSILON * n as f64) {
            return Err(CrlbError::Singular);
        }
        let inv_ev = eig.eigenvalues.map(|v| 1.0 / v);
        let inv_scaled = &eig.eigenvectors * DMatrix::from_diagonal(&inv_ev) * eig.eigenvectors.transpose();
        let matrix = DMatrix::from_fn(n, n, |i, j| inv_scaled[(i, j)] * d[i] * d[j]);
        let condition = hi / lo;
        Ok(Inverse { matrix, condition, ill_conditioned: condition > ILL_CONDITIONED })
    }
}

/// Signal of one RIS on one receiver and its derivative in `alpha`, both
/// `N x slots`.
struct LinkSignal {
    f: DMatrix<Complex64>,
    f_alpha: DMatrix<Complex64>,
}

fn link_signal(path: &RisPath, k: usize, ofdm: &OfdmParams, sched: &PhaseSchedule) -> LinkSignal {
    let (n, slots) = (ofdm.n, ofdm.total_slots());
    let lambda = ofdm.lambda();
    let amp = ofdm.e_s.sqrt() * path.gain;
    let step = 2.0 * PI * ofdm.delta_f * path.tau;
    let dv: Vec<Complex64> = (0..n).map(|i| amp * Complex64::from_polar(1.0, step * i as f64)).collect();
    let af: Vec<(Complex64, Complex64)> = sched.interval_diag[k]
        .iter()
        .map(|diag| {
            let kk = 2.0 * PI / lambda * path.spacing;
            let d_af: Complex64 = diag
                .iter()
                .enumerate()
                .map(|(m, w)| w * Complex64::new(0.0, kk * m as f64) * Complex64::from_polar(1.0, kk * m as f64 * path.alpha))
                .sum();
            (array_factor(diag, path.alpha, path.spacing, lambda), d_af)
        })
        .collect();
    let mut f = DMatrix::zeros(n, slots);
    let mut f_alpha = DMatrix::zeros(n, slots);
    for col in 0..slots {
        let (interval, slot) = (col / sched.t, col % sched.t);
        let dop = Complex64::from_polar(1.0, 2.0 * PI * path.f_d * ofdm.t_d() * col as f64);
        let base = sched.omega[k][slot] * dop;
        let (a0, a1) = af[interval];
        for i in 0..n {
            f[(i, col)] = dv[i] * base * a0;
            f_alpha[(i, col)] = dv[i] * base * a1;
        }
    }
    LinkSignal { f, f_alpha }
}

fn delay_weights(ofdm: &OfdmParams) -> impl Fn(usize, usize) -> Complex64 {
    let w = 2.0 * PI * ofdm.delta_f;
    move |i, _| Complex64::new(0.0, w * i as f64)
}

fn doppler_weights(ofdm: &OfdmParams) -> impl Fn(usize, usize) -> Complex64 {
    let w = 2.0 * PI * ofdm.t_d();
    move |_, col| Complex64::new(0.0, w * col as f64)
}

fn weighted(f: &DMatrix<Complex64>, w: impl Fn(usize, usize) -> Complex64) -> DMatrix<Complex64> {
    DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| f[(i, j)] * w(i, j))
}

/// Derivatives of one link's signal with respect to `tau, alpha, g, f_d`.
pub fn link_derivatives(path: &RisPath, k: usize, ofdm: &OfdmParams, sched: &PhaseSchedule) -> [DMatrix<Complex64>; 4] {
    let s = link_signal(path, k, ofdm, sched);
    [
        weighted(&s.f, delay_weights(ofdm)),
        s.f_alpha,
        s.f.map(|v| v / path.gain),
        weighted(&s.f, doppler_weights(ofdm)),
    ]
}

/// Gradients of `tau` and `alpha`. At an absolute-value kink the
/// right-hand limit is used.
fn position_gradients(tx: &Point2, rx: &Point2, p: &Point2, psi: f64) -> Result<(Grad2, Grad2), GeometryError> {
    let gt = partial_tau(tx, rx, p)?;
    let ga = match partial_alpha(tx, rx, p, psi) {
        Err(GeometryError::Nondifferentiable) => {
            let nudge = 1e-9 * (1.0 + p.x.abs().max(p.y.abs()));
            partial_alpha(tx, rx, &Point2::new(p.x + nudge, p.y + nudge), psi)?
        }
        other => other?,
    };
    Ok((gt, ga))
}

/// Per receiver, the derivatives of RIS `k`'s signal with respect to its
/// position, gains and Doppler shifts. Entry `[rx]` holds
/// `[d/dp_x, d/dp_y, d/dg_rx, d/df_d,rx]`; derivatives with respect to
/// another receiver's gain or Doppler vanish on this receiver.
pub fn signal_derivatives_eta(
    scenario: &Scenario,
    sched: &PhaseSchedule,
    ofdm: &OfdmParams,
    k: usize,
) -> Result<Vec<[DMatrix<Complex64>; 4]>, CrlbError> {
    let ris = scenario.ris.get(k).ok_or(CrlbError::RisOutOfRange(k))?;
    let paths = ris_paths(scenario, ofdm)?;
    scenario
        .rxs
        .iter()
        .enumerate()
        .map(|(r, rx)| {
            let [d_tau, d_alpha, d_g, d_fd] = link_derivatives(&paths[k][r], k, ofdm, sched);
            let (gt, ga) = position_gradients(&scenario.tx, rx, &ris.position, ris.orientation_psi)?;
            let d_x = d_tau.map(|v| v * gt.d_dx) + d_alpha.map(|v| v * ga.d_dx);
            let d_y = d_tau.map(|v| v * gt.d_dy) + d_alpha.map(|v| v * ga.d_dy);
            Ok([d_x, d_y, d_g, d_fd])
        })
        .collect()
}

fn gram(vs: &[&DMatrix<Complex64>]) -> DMatrix<f64> {
    let n = vs.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = 2.0 * vs[i].dotc(vs[j]).re;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// FIM over the parameters of every RIS in the scenario.
pub fn fisher_eta(scenario: &Scenario, sched: &PhaseSchedule, ofdm: &OfdmParams) -> Result<FisherInfo, CrlbError> {
    let (nk, nr) = (scenario.ris.len(), scenario.rxs.len());
    let block = 2 + 2 * nr;
    let mut layout = Vec::with_capacity(block * nk);
    for k in 0..nk {
        layout.push(Param::PosX { k });
        layout.push(Param::PosY { k });
        layout.extend((0..nr).map(|rx| Param::Gain { k, rx }));
        layout.extend((0..nr).map(|rx| Param::Doppler { k, rx }));
    }
    let derivs = (0..nk)
        .map(|k| signal_derivatives_eta(scenario, sched, ofdm, k))
        .collect::<Result<Vec<_>, _>>()?;
    let sigma2 = ofdm.noise_var();
    let mut matrix = DMatrix::zeros(block * nk, block * nk);
    for r in 0..nr {
        let mut vs = Vec::with_capacity(4 * nk);
        let mut idx = Vec::with_capacity(4 * nk);
        for (k, d) in derivs.iter().enumerate() {
            let base = k * block;
            vs.extend(d[r].iter());
            idx.extend([base, base + 1, base + 2 + r, base + 2 + nr + r]);
        }
        let g = gram(&vs);
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                matrix[(ia, ib)] += g[(a, b)] / sigma2;
            }
        }
    }
    Ok(FisherInfo { matrix, layout })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Peb {
    /// Square root of the position-block trace (m).
    pub peb: f64,
    pub trace: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
}

/// Position error bound of RIS `k`.
pub fn peb(scenario: &Scenario, sched: &PhaseSchedule, ofdm: &OfdmParams, k: usize) -> Result<Peb, CrlbError> {
    if k >= scenario.ris.len() {
        return Err(CrlbError::RisOutOfRange(k));
    }
    let info = fisher_eta(scenario, sched, ofdm)?;
    let inv = info.invert()?;
    let i = k * (2 + 2 * scenario.rxs.len());
    let trace = inv.matrix[(i, i)] + inv.matrix[(i + 1, i + 1)];
    if !(trace >= 0.0) {
        return Err(CrlbError::Singular);
    }
    Ok(Peb { peb: trace.sqrt(), trace, condition: inv.condition, ill_conditioned: inv.ill_conditioned })
}

/// FIM of `(tau, alpha, g, f_d)` for RIS `k` on receiver `rx`.
pub fn fisher_beta(scenario: &Scenario, sched: &PhaseSchedule, ofdm: &OfdmParams, k: usize, rx: usize) -> Result<FisherInfo, CrlbError> {
    if k >= scenario.ris.len() {
        return Err(CrlbError::RisOutOfRange(k));
    }
    if rx >= scenario.rxs.len() {
        return Err(CrlbError::RxOutOfRange(rx));
    }
    let paths = ris_paths(scenario, ofdm)?;
    let d = link_derivatives(&paths[k][rx], k, ofdm, sched);
    let matrix = gram(&d.iter().collect::<Vec<_>>()) / ofdm.noise_var();
    Ok(FisherInfo { matrix, layout: vec![Param::Delay, Param::Alpha, Param::LinkGain, Param::LinkDoppler] })
}

/// Bounds on the variance of the delay (s^2) and angle parameter.
pub fn crlb_tau_alpha(scenario: &Scenario, sched: &PhaseSchedule, ofdm: &OfdmParams, k: usize, rx: usize) -> Result<(f64, f64), CrlbError> {
    let inv = fisher_beta(scenario, sched, ofdm, k, rx)?.invert()?;
    Ok((inv.matrix[(0, 0)], inv.matrix[(1, 1)]))
}

/// Rectangular grid of RIS positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub min: Point2,
    pub max: Point2,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<Point2> {
        let nx = ((self.max.x - self.min.x) / self.step + 1e-9).floor() as usize + 1;
        let ny = ((self.max.y - self.min.y) / self.step + 1e-9).floor() as usize + 1;
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push(Point2::new(self.min.x + i as f64 * self.step, self.min.y + j as f64 * self.step));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PebCell {
    pub position: Point2,
    /// `10 log10(PEB)`; `None` for excluded or failed cells.
    pub peb_db: Option<f64>,
}

/// PEB of the first RIS of `template` moved to every grid cell. Cells within
/// `exclusion` of an anchor are skipped.
pub fn peb_heatmap(grid: &Grid, template: &Scenario, sched: &PhaseSchedule, ofdm: &OfdmParams, exclusion: f64) -> Vec<PebCell> {
    let anchors: Vec<Point2> = std::iter::once(template.tx).chain(template.rxs.iter().copied()).collect();
    grid.points()
        .into_iter()
        .map(|p| {
            if anchors.iter().any(|a| a.dist(&p) <= exclusion) {
                return PebCell { position: p, peb_db: None };
            }
            let mut sc = template.clone();
            sc.ris[0].position = p;
            let peb_db = peb(&sc, sched, ofdm, 0).ok().map(|b| 10.0 * b.peb.log10());
            PebCell { position: p, peb_db }
        })
        .collect()
}

/// CSV body `x,y,peb_db` with empty values for missing cells.
pub fn heatmap_csv(cells: &[PebCell], out: &mut String) {
    use std::fmt::Write;
    out.push_str("x,y,peb_db\n");
    for c in cells {
        match c.peb_db {
            Some(v) => writeln!(out, "{},{},{v:.6}", c.position.x, c.position.y),
            None => writeln!(out, "{},{},", c.position.x, c.position.y),
        }
        .expect("writing to a String");
    }
}
