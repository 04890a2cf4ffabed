//! Planar bistatic geometry of a Tx -> RIS -> Rx link.
//!
//! Delays, the sum-of-cosines angle parameter `alpha`, Doppler, array
//! steering vectors and the analytic gradients used by the tracker and the
//! Fisher-information code.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const C: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: RIS coincides with an anchor")]
    Degenerate,
    #[error("nondifferentiable point: RIS shares a coordinate with an anchor")]
    Nondifferentiable,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Gradient with respect to the RIS position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Grad2 {
    pub d_dx: f64,
    pub d_dy: f64,
}

/// State of one RIS mounted on a mobile user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisPose {
    pub position: Point2,
    /// Array axis orientation relative to the Tx-Rx baseline (rad).
    pub orientation_psi: f64,
    /// Velocity (m/s); its norm is the speed entering the Doppler term.
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub acceleration: [f64; 2],
    pub num_elements: usize,
    /// Inter-element spacing (m).
    pub element_spacing: f64,
}

impl RisPose {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

fn check_distinct(a: &Point2, p_k: &Point2) -> Result<f64, GeometryError> {
    let d = p_k.dist(a);
    if d == 0.0 {
        Err(GeometryError::Degenerate)
    } else {
        Ok(d)
    }
}

/// Tx -> RIS -> Rx propagation delay (s).
pub fn path_delay(p_t: &Point2, p_r: &Point2, p_k: &Point2) -> f64 {
    (p_k.dist(p_t) + p_k.dist(p_r)) / C
}

/// Closed-form sum of cosines `cos(phi) + cos(theta)` written with
/// coordinate magnitudes, as used for both synthesis and inversion.
pub fn sum_cosines_alpha(
    p_t: &Point2,
    p_r: &Point2,
    p_k: &Point2,
    psi: f64,
) -> Result<f64, GeometryError> {
    let rt = check_distinct(p_t, p_k)?;
    let rr = check_distinct(p_r, p_k)?;
    let (dxt, dyt) = ((p_k.x - p_t.x).abs(), (p_k.y - p_t.y).abs());
    let (dxr, dyr) = ((p_k.x - p_r.x).abs(), (p_k.y - p_r.y).abs());
    Ok(psi.cos() * (dxt / rt - dxr / rr) + psi.sin() * (dyt / rt + dyr / rr))
}

/// Doppler shift (Hz) for a given speed and angle parameter.
pub fn doppler_freq(alpha: f64, speed: f64, f_c: f64) -> f64 {
    speed * alpha * f_c / C
}

/// Uniform linear array response; element `m` (0-based) has phase
/// `2*pi/lambda * m * d * cos_angle`.
pub fn steering_vector(cos_angle: f64, m: usize, d: f64, lambda: f64) -> Vec<Complex64> {
    let step = 2.0 * PI / lambda * d * cos_angle;
    (0..m)
        .map(|i| Complex64::from_polar(1.0, step * i as f64))
        .collect()
}

/// Gradient of [`path_delay`] with respect to the RIS position.
pub fn partial_tau(p_t: &Point2, p_r: &Point2, p_k: &Point2) -> Result<Grad2, GeometryError> {
    let rt = check_distinct(p_t, p_k)?;
    let rr = check_distinct(p_r, p_k)?;
    Ok(Grad2 {
        d_dx: ((p_k.x - p_t.x) / rt + (p_k.x - p_r.x) / rr) / C,
        d_dy: ((p_k.y - p_t.y) / rt + (p_k.y - p_r.y) / rr) / C,
    })
}

/// Gradient of [`sum_cosines_alpha`] with respect to the RIS position.
///
/// Fails at the absolute-value kinks, i.e. whenever the RIS shares an x or y
/// coordinate with either anchor.
pub fn partial_alpha(
    p_t: &Point2,
    p_r: &Point2,
    p_k: &Point2,
    psi: f64,
) -> Result<Grad2, GeometryError> {
    let rt = check_distinct(p_t, p_k)?;
    let rr = check_distinct(p_r, p_k)?;
    let (xt, yt) = (p_k.x - p_t.x, p_k.y - p_t.y);
    let (xr, yr) = (p_k.x - p_r.x, p_k.y - p_r.y);
    if xt == 0.0 || yt == 0.0 || xr == 0.0 || yr == 0.0 {
        return Err(GeometryError::Nondifferentiable);
    }
    let (rt3, rr3) = (rt.powi(3), rr.powi(3));
    let (c, s) = (psi.cos(), psi.sin());

    let d_dx = c * (xt.signum() / rt - xt * xt.abs() / rt3 - xr.signum() / rr
        + xr * xr.abs() / rr3)
        + s * (-yt.abs() * xt / rt3 - yr.abs() * xr / rr3);
    let d_dy = c * (-xt.abs() * yt / rt3 + xr.abs() * yr / rr3)
        + s * (yt.signum() / rt - yt * yt.abs() / rt3 + yr.signum() / rr
            - yr * yr.abs() / rr3);
    Ok(Grad2 { d_dx, d_dy })
}
