//! Equilibria `(0, ϑ̂, ϑ̂ + kπ)` of the McGehee system on the collision
//! manifold: closed-form Jacobians, eigen-data and stability classes.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::{CentralConfigurations, PotentialError, PotentialSpec};

/// Relative width of the tie band reported as borderline.
pub const BORDERLINE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("angle {theta} is not critical for U (|U'| = {residual:.3e})")]
    NotCritical { theta: f64, residual: f64 },
    #[error("parity k must be 0 or 1, got {0}")]
    BadParity(u8),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Sink,
    Source,
    AsymptoticallyStable,
    Unstable,
    Saddle,
    StableDegenerateNode,
    UnstableDegenerateNode,
    StableTwoTangentNode,
    UnstableTwoTangentNode,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sink => "sink",
            Self::Source => "source",
            Self::AsymptoticallyStable => "asymptotically_stable",
            Self::Unstable => "unstable",
            Self::Saddle => "saddle",
            Self::StableDegenerateNode => "stable_degenerate_node",
            Self::UnstableDegenerateNode => "unstable_degenerate_node",
            Self::StableTwoTangentNode => "stable_two_tangent_node",
            Self::UnstableTwoTangentNode => "unstable_two_tangent_node",
        }
    }
}

/// Eigen-data of the 3-D Jacobian at the ingoing equilibrium `(0, ϑ*, ϑ*+π)`.
///
/// Eigenvectors satisfy `J v = λ v`; the `(ϑ, φ)` ones have the form
/// `(0, 1, 1 − λ/(2U))`, so the stable one `v_minus` carries the larger
/// third component. `None` when the pair is complex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigen3d {
    pub lambda_r: f64,
    pub lambda_minus: Complex64,
    pub lambda_plus: Complex64,
    pub v_r: [f64; 3],
    pub v_minus: Option<[f64; 3]>,
    pub v_plus: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    pub theta_hat: f64,
    pub k: u8,
    pub mu_minus: Complex64,
    pub mu_plus: Complex64,
    pub lambda_r: f64,
    pub lambda_minus: Complex64,
    pub lambda_plus: Complex64,
    pub v_r: [f64; 3],
    pub v_minus: Option<[f64; 3]>,
    pub v_plus: Option<[f64; 3]>,
    pub classification: Classification,
    pub borderline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tangency {
    /// Orbits enter along the weak stable direction `v⁻`.
    Weak,
    /// Orbits enter along the radial direction `v_r`.
    Radial,
}

fn check_critical(spec: &PotentialSpec, theta: f64) -> Result<(f64, f64), EquilibriumError> {
    let (u, du, d2u) = spec.u.derivs(theta);
    let scale = spec.u.derivative_scale(1);
    if du.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(EquilibriumError::NotCritical { theta, residual: du.abs() });
    }
    Ok((u, d2u))
}

fn parity_sign(k: u8) -> Result<f64, EquilibriumError> {
    match k {
        0 => Ok(1.0),
        1 => Ok(-1.0),
        other => Err(EquilibriumError::BadParity(other)),
    }
}

/// `cos(kπ) U [[−2, 2], [U''/U − α, α]]`.
pub fn jacobian_collision(spec: &PotentialSpec, theta_hat: f64, k: u8) -> Result<[[f64; 2]; 2], EquilibriumError> {
    let (u, d2u) = check_critical(spec, theta_hat)?;
    let c = parity_sign(k)? * u;
    let a = spec.alpha;
    Ok([[-2.0 * c, 2.0 * c], [c * (d2u / u - a), c * a]])
}

/// `(μ⁻, μ⁺) = ½ cos(kπ) U {α − 2 ∓ √((α−2)² + 8U''/U)}` with the labels
/// taken literally from the sign in front of the root.
pub fn eigen_collision(spec: &PotentialSpec, theta_hat: f64, k: u8) -> Result<(Complex64, Complex64), EquilibriumError> {
    let (u, d2u) = check_critical(spec, theta_hat)?;
    let c = 0.5 * parity_sign(k)? * u;
    let a = spec.alpha;
    let root = Complex64::new((a - 2.0) * (a - 2.0) + 8.0 * d2u / u, 0.0).sqrt();
    let base = Complex64::new(a - 2.0, 0.0);
    Ok(((base - root) * c, (base + root) * c))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `D = (α − 2)² U + 8U''` with compensated arithmetic; `D` has the sign of
/// the eigenvalue radicand.
pub fn discriminant(alpha: f64, u: f64, d2u: f64) -> f64 {
    let t = alpha - 2.0;
    let (p1, e1) = two_prod(t, t);
    let (p2, e2) = two_prod(p1, u);
    let (s, e3) = two_sum(p2, 8.0 * d2u);
    s + (e2 + e1 * u + e3)
}

/// Stability class and the borderline flag.
pub fn classify(spec: &PotentialSpec, theta_hat: f64, k: u8) -> Result<(Classification, bool), EquilibriumError> {
    let (u, d2u) = check_critical(spec, theta_hat)?;
    let even = parity_sign(k)? > 0.0;
    let a = spec.alpha;
    let d = discriminant(a, u, d2u);
    let d_scale = (a - 2.0) * (a - 2.0) * u + 8.0 * d2u.abs();
    let borderline = d.abs() <= BORDERLINE_TOL * d_scale || d2u.abs() <= BORDERLINE_TOL * u;
    use Classification::*;
    let class = if d < 0.0 {
        if even { Sink } else { Source }
    } else if d == 0.0 {
        if even { AsymptoticallyStable } else { Unstable }
    } else if d2u > 0.0 {
        Saddle
    } else if d2u == 0.0 {
        if even { StableDegenerateNode } else { UnstableDegenerateNode }
    } else if even {
        StableTwoTangentNode
    } else {
        UnstableTwoTangentNode
    };
    Ok((class, borderline))
}

/// Closed-form eigen-data of the full Jacobian at `(0, ϑ*, ϑ*+π)` (`k = 1`).
/// Uses the homogeneous part only; `h` does not enter at `r = 0`.
pub fn eigen_3d(spec: &PotentialSpec, _h: f64, theta_star: f64) -> Result<Eigen3d, EquilibriumError> {
    let (u, d2u) = check_critical(spec, theta_star)?;
    let a = spec.alpha;
    let rad = (2.0 - a) * (2.0 - a) * u * u + 8.0 * u * d2u;
    let root = Complex64::new(rad, 0.0).sqrt();
    let base = Complex64::new(0.5 * (2.0 - a) * u, 0.0);
    let lambda_minus = base - 0.5 * root;
    let lambda_plus = base + 0.5 * root;
    let vec_for = |lam: Complex64| (lam.im == 0.0).then(|| [0.0, 1.0, 1.0 - lam.re / (2.0 * u)]);
    Ok(Eigen3d {
        lambda_r: -2.0 * u,
        lambda_minus,
        lambda_plus,
        v_r: [1.0, 0.0, 0.0],
        v_minus: vec_for(lambda_minus),
        v_plus: vec_for(lambda_plus),
    })
}

/// Direction along which collision orbits enter the saddle: `v⁻` when
/// `U''/U − (4 − α) < 0`, the radial direction otherwise.
pub fn tangency_direction(spec: &PotentialSpec, theta_star: f64) -> Result<Tangency, EquilibriumError> {
    let (u, d2u) = check_critical(spec, theta_star)?;
    Ok(if d2u / u - (4.0 - spec.alpha) < 0.0 {
        Tangency::Weak
    } else {
        Tangency::Radial
    })
}

pub fn record(spec: &PotentialSpec, theta_hat: f64, k: u8) -> Result<EquilibriumRecord, EquilibriumError> {
    let (mu_minus, mu_plus) = eigen_collision(spec, theta_hat, k)?;
    let (classification, borderline) = classify(spec, theta_hat, k)?;
    let e = eigen_3d(spec, 0.0, theta_hat)?;
    Ok(EquilibriumRecord {
        theta_hat,
        k,
        mu_minus,
        mu_plus,
        lambda_r: e.lambda_r,
        lambda_minus: e.lambda_minus,
        lambda_plus: e.lambda_plus,
        v_r: e.v_r,
        v_minus: e.v_minus,
        v_plus: e.v_plus,
        classification,
        borderline,
    })
}

/// Records for every critical angle and both parities. A constant `U` yields
/// an error since its equilibria form a continuum.
pub fn enumerate(spec: &PotentialSpec) -> Result<Vec<EquilibriumRecord>, EquilibriumError> {
    let list = match spec.central_configurations() {
        CentralConfigurations::Continuum => return Err(PotentialError::Continuum.into()),
        CentralConfigurations::Isolated(list) => list,
    };
    let mut out = Vec::with_capacity(2 * list.len());
    for c in list {
        for k in [0u8, 1] {
            out.push(record(spec, c.theta, k)?);
        }
    }
    Ok(out)
}

/// Table with columns `theta_hat,k,mu_minus,mu_plus,lambda_r,lambda_minus,lambda_plus,class`.
pub fn to_csv(records: &[EquilibriumRecord]) -> String {
    let c = |z: Complex64| {
        if z.im == 0.0 {
            format!("{:.12}", z.re)
        } else {
            format!("{:.12}{:+.12}i", z.re, z.im)
        }
    };
    let mut out = String::from("theta_hat,k,mu_minus,mu_plus,lambda_r,lambda_minus,lambda_plus,class\n");
    for r in records {
        out.push_str(&format!(
            "{:.12},{},{},{},{:.12},{},{},{}{}\n",
            r.theta_hat,
            r.k,
            c(r.mu_minus),
            c(r.mu_plus),
            r.lambda_r,
            c(r.lambda_minus),
            c(r.lambda_plus),
            r.classification.as_str(),
            if r.borderline { "?" } else { "" }
        ));
    }
    out
}

/// Unit vector along `v`.
pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Ingoing equilibrium state as an array `(0, ϑ̂, ϑ̂ + π)`.
pub fn ingoing_point(theta_hat: f64) -> [f64; 3] {
    [0.0, theta_hat, theta_hat + PI]
}
