//! Anisotropic homogeneous potentials `V(x) = |x|^{-α} U(ϑ) + W(|x|, ϑ)`.
//!
//! The angular factor `U` is a finite real trigonometric polynomial, which
//! keeps derivatives exact and periodicity exact by construction. An optional
//! lower-order perturbation `W(r, ϑ) = c r^{-β} g(ϑ)` with `β < α` can be
//! attached.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid size used for positivity checks and global extrema of `U`.
pub const EXTREMA_GRID: usize = 4096;
/// Grid size for the sign-change scan of `U'`.
pub const ROOT_SCAN_GRID: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("potential is singular at the origin")]
    AtOrigin,
    #[error("homogeneity exponent alpha = {0} must lie in (0, 2)")]
    AlphaOutOfRange(f64),
    #[error("angular potential is not positive (min {min:.3e} at theta = {theta:.6})")]
    NotPositive { min: f64, theta: f64 },
    #[error("perturbation exponent beta = {beta} must satisfy 0 <= beta < alpha = {alpha}")]
    BetaOutOfRange { beta: f64, alpha: f64 },
    #[error("cosine and sine coefficient lists must have equal length ({cos} vs {sin})")]
    CoefficientMismatch { cos: usize, sin: usize },
    #[error("U' vanishes identically: every angle is a central configuration")]
    Continuum,
    #[error("no nondegenerate global minimum of U found")]
    NoMinimalConfiguration,
    #[error("angle {0} is not a critical point of U")]
    NotCritical(f64),
}

/// Real trigonometric polynomial `a0 + Σ_k (a_k cos kϑ + b_k sin kϑ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularPotential {
    pub a0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl AngularPotential {
    pub fn new(a0: f64, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Self { a0, cos, sin }
    }

    pub fn constant(a0: f64) -> Self {
        Self::new(a0, Vec::new(), Vec::new())
    }

    /// `U(ϑ) = 1 + ε (1 − cos 2ϑ)`, the reflection-symmetric benchmark family.
    pub fn symmetric_two_fold(eps: f64) -> Self {
        Self::new(1.0 + eps, vec![0.0, -eps], vec![0.0, 0.0])
    }

    pub fn degree(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn coeff(&self, k: usize) -> (f64, f64) {
        (
            self.cos.get(k - 1).copied().unwrap_or(0.0),
            self.sin.get(k - 1).copied().unwrap_or(0.0),
        )
    }

    /// Returns `(U, U', U'')` at `theta`.
    pub fn derivs(&self, theta: f64) -> (f64, f64, f64) {
        let mut u = self.a0;
        let mut du = 0.0;
        let mut d2u = 0.0;
        for k in 1..=self.degree() {
            let (a, b) = self.coeff(k);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            u += a * c + b * s;
            du += kf * (b * c - a * s);
            d2u -= kf * kf * (a * c + b * s);
        }
        (u, du, d2u)
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.derivs(theta).0
    }

    pub fn d1(&self, theta: f64) -> f64 {
        self.derivs(theta).1
    }

    pub fn d2(&self, theta: f64) -> f64 {
        self.derivs(theta).2
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(
            self.a0 * c,
            self.cos.iter().map(|a| a * c).collect(),
            self.sin.iter().map(|b| b * c).collect(),
        )
    }

    /// True when every harmonic coefficient is zero, i.e. `U' ≡ 0`.
    pub fn is_constant(&self) -> bool {
        self.cos.iter().chain(self.sin.iter()).all(|&c| c == 0.0)
    }

    /// Sum of `k^n |coeff|` over harmonics: a cheap bound for `|U^{(n)}|`.
    pub fn derivative_scale(&self, order: i32) -> f64 {
        (1..=self.degree())
            .map(|k| {
                let (a, b) = self.coeff(k);
                (k as f64).powi(order) * (a.abs() + b.abs())
            })
            .sum()
    }

    /// `(min, argmin, max, argmax)` over a uniform grid of `n` points.
    pub fn grid_extrema(&self, n: usize) -> (f64, f64, f64, f64) {
        let mut lo = (f64::INFINITY, 0.0);
        let mut hi = (f64::NEG_INFINITY, 0.0);
        for j in 0..n {
            let th = TAU * j as f64 / n as f64;
            let v = self.eval(th);
            if v < lo.0 {
                lo = (v, th);
            }
            if v > hi.0 {
                hi = (v, th);
            }
        }
        (lo.0, lo.1, hi.0, hi.1)
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        if self.cos.len() != self.sin.len() {
            return Err(PotentialError::CoefficientMismatch {
                cos: self.cos.len(),
                sin: self.sin.len(),
            });
        }
        let (min, theta, _, _) = self.grid_extrema(EXTREMA_GRID);
        if !(min > 0.0) {
            return Err(PotentialError::NotPositive { min, theta });
        }
        Ok(())
    }

    /// Minimum of `U`, refined from the grid minimum through the critical points.
    pub fn min_value(&self) -> f64 {
        let (grid_min, _, _, _) = self.grid_extrema(EXTREMA_GRID);
        match critical_angles(self) {
            Some(roots) => roots
                .iter()
                .map(|&t| self.eval(t))
                .fold(grid_min, f64::min),
            None => grid_min,
        }
    }

    pub fn max_value(&self) -> f64 {
        let (_, _, grid_max, _) = self.grid_extrema(EXTREMA_GRID);
        match critical_angles(self) {
            Some(roots) => roots
                .iter()
                .map(|&t| self.eval(t))
                .fold(grid_max, f64::max),
            None => grid_max,
        }
    }
}

/// Lower-order perturbation `W(r, ϑ) = c r^{-β} g(ϑ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub c: f64,
    pub beta: f64,
    pub g: AngularPotential,
}

impl PerturbationSpec {
    pub fn value(&self, r: f64, theta: f64) -> f64 {
        self.c * r.powf(-self.beta) * self.g.eval(theta)
    }

    /// `(W, W_r, W_ϑ)` at polar point `(r, ϑ)`.
    pub fn partials(&self, r: f64, theta: f64) -> (f64, f64, f64) {
        let (g, dg, _) = self.g.derivs(theta);
        let rb = r.powf(-self.beta);
        let w = self.c * rb * g;
        (w, -self.beta * w / r, self.c * rb * dg)
    }

    /// `r^α W` together with `r^α W_ϑ` and `r^{α+1} W_r`: the combinations
    /// appearing in the regularized field, all finite at `r = 0`.
    pub fn regularized(&self, alpha: f64, r: f64, theta: f64) -> (f64, f64, f64) {
        let (g, dg, _) = self.g.derivs(theta);
        let scale = if r == 0.0 { 0.0 } else { self.c * r.powf(alpha - self.beta) };
        (scale * g, scale * dg, -self.beta * scale * g)
    }
}

/// Full potential: exponents, angular factors and perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub alpha: f64,
    #[serde(rename = "U")]
    pub u: AngularPotential,
    #[serde(rename = "W", default)]
    pub w: Option<PerturbationSpec>,
}

/// Central configuration: a critical angle of `U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralConfiguration {
    pub theta: f64,
    pub value: f64,
    pub second_derivative: f64,
    pub is_global_min: bool,
    pub is_nondegenerate: bool,
}

impl CentralConfiguration {
    /// Quadratic-growth constant `μ = U''(ϑ*)/2` of a minimal configuration.
    pub fn growth_constant(&self) -> f64 {
        0.5 * self.second_derivative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CentralConfigurations {
    Isolated(Vec<CentralConfiguration>),
    /// `U` is constant: every direction is critical.
    Continuum,
}

/// Radius below which the moment of inertia is strictly convex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LagrangeJacobiRadius {
    Finite(f64),
    Unbounded,
}

impl LagrangeJacobiRadius {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(r) => Some(r),
            Self::Unbounded => None,
        }
    }
}

impl PotentialSpec {
    pub fn new(alpha: f64, u: AngularPotential) -> Self {
        Self { alpha, u, w: None }
    }

    pub fn with_perturbation(mut self, w: PerturbationSpec) -> Self {
        self.w = Some(w);
        self
    }

    /// `α = 1`, `U = 1 + 0.1(1 − cos 2ϑ)`: the benchmark potential.
    pub fn benchmark() -> Self {
        Self::new(1.0, AngularPotential::symmetric_two_fold(0.1))
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(PotentialError::AlphaOutOfRange(self.alpha));
        }
        self.u.validate()?;
        if let Some(w) = &self.w {
            if !(w.beta >= 0.0 && w.beta < self.alpha) {
                return Err(PotentialError::BetaOutOfRange {
                    beta: w.beta,
                    alpha: self.alpha,
                });
            }
            if w.g.cos.len() != w.g.sin.len() {
                return Err(PotentialError::CoefficientMismatch {
                    cos: w.g.cos.len(),
                    sin: w.g.sin.len(),
                });
            }
        }
        Ok(())
    }

    pub fn eval_v(&self, q: [f64; 2]) -> Result<f64, PotentialError> {
        let (r, theta) = polar(q)?;
        Ok(self.eval_polar(r, theta))
    }

    pub fn eval_polar(&self, r: f64, theta: f64) -> f64 {
        let mut v = r.powf(-self.alpha) * self.u.eval(theta);
        if let Some(w) = &self.w {
            v += w.value(r, theta);
        }
        v
    }

    pub fn grad_v(&self, q: [f64; 2]) -> Result<[f64; 2], PotentialError> {
        let (r, theta) = polar(q)?;
        let (u, du, _) = self.u.derivs(theta);
        let f = r.powf(-self.alpha - 2.0);
        let mut g = [
            f * (-self.alpha * u * q[0] - du * q[1]),
            f * (-self.alpha * u * q[1] + du * q[0]),
        ];
        if let Some(w) = &self.w {
            let (_, w_r, w_t) = w.partials(r, theta);
            // ∇W = W_r e_r + (W_ϑ / r) e_ϑ
            let (c, s) = (q[0] / r, q[1] / r);
            g[0] += w_r * c - w_t / r * s;
            g[1] += w_r * s + w_t / r * c;
        }
        Ok(g)
    }

    /// All critical angles of `U` on `[0, 2π)`, annotated.
    pub fn central_configurations(&self) -> CentralConfigurations {
        let roots = match critical_angles(&self.u) {
            Some(r) => r,
            None => return CentralConfigurations::Continuum,
        };
        let (grid_min, _, _, _) = self.u.grid_extrema(EXTREMA_GRID);
        let values: Vec<f64> = roots.iter().map(|&t| self.u.eval(t)).collect();
        let crit_min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = self.u.a0.abs() + self.u.derivative_scale(0);
        let d2scale = self.u.derivative_scale(2).max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale;
        let list = roots
            .iter()
            .zip(values)
            .map(|(&theta, value)| {
                let d2 = self.u.d2(theta);
                CentralConfiguration {
                    theta,
                    value,
                    second_derivative: d2,
                    is_global_min: value <= crit_min + tol && value <= grid_min + tol,
                    is_nondegenerate: d2.abs() > 1e-10 * d2scale,
                }
            })
            .collect();
        CentralConfigurations::Isolated(list)
    }

    /// The first nondegenerate global minimum of `U` (hypothesis (U1)).
    pub fn minimal_configuration(&self) -> Result<CentralConfiguration, PotentialError> {
        match self.central_configurations() {
            CentralConfigurations::Continuum => Err(PotentialError::Continuum),
            CentralConfigurations::Isolated(list) => list
                .into_iter()
                .find(|c| c.is_global_min && c.is_nondegenerate && c.second_derivative > 0.0)
                .ok_or(PotentialError::NoMinimalConfiguration),
        }
    }

    /// Central configuration record at a given critical angle.
    pub fn configuration_at(&self, theta: f64) -> Result<CentralConfiguration, PotentialError> {
        match self.central_configurations() {
            CentralConfigurations::Continuum => Err(PotentialError::Continuum),
            CentralConfigurations::Isolated(list) => list
                .into_iter()
                .find(|c| wrap_angle(c.theta - theta).abs() < 1e-9)
                .ok_or(PotentialError::NotCritical(theta)),
        }
    }

    /// Half the angular distance from `theta_star` to the nearest other
    /// critical angle of `U`.
    pub fn cone_half_width(&self, theta_star: f64) -> f64 {
        match self.central_configurations() {
            CentralConfigurations::Continuum => 0.0,
            CentralConfigurations::Isolated(list) => {
                let d = list
                    .iter()
                    .map(|c| wrap_angle(c.theta - theta_star).abs())
                    .filter(|&d| d > 1e-9)
                    .fold(PI, f64::min);
                0.5 * d
            }
        }
    }

    pub fn u_min(&self) -> f64 {
        self.u.min_value()
    }

    pub fn u_max(&self) -> f64 {
        self.u.max_value()
    }

    /// Lagrange–Jacobi radius `[(2−α) U_min / (−2h)]^{1/α}`, shrunk when a
    /// perturbation with negative part is present.
    pub fn lagrange_jacobi_radius(&self, h: f64) -> LagrangeJacobiRadius {
        if h >= 0.0 {
            return LagrangeJacobiRadius::Unbounded;
        }
        let a = self.alpha;
        let u_min = self.u_min();
        let r_lj = ((2.0 - a) * u_min / (-2.0 * h)).powf(1.0 / a);
        let w = match &self.w {
            None => return LagrangeJacobiRadius::Finite(r_lj),
            Some(w) => w,
        };
        let w_min = (w.c * w.g.min_value()).min(w.c * w.g.max_value());
        let convexity = |r: f64| {
            (2.0 - a) * u_min * r.powf(-a) + (2.0 - w.beta) * w_min * r.powf(-w.beta) + 2.0 * h
        };
        // log-spaced radii from 1e-6 r_LJ up to r_LJ
        const N: usize = 256;
        let radii: Vec<f64> = (0..N)
            .map(|j| r_lj * 10f64.powf(-6.0 + 6.0 * j as f64 / (N - 1) as f64))
            .collect();
        let mut rho = 1.0;
        for (j, &r) in radii.iter().enumerate() {
            let ok = if j + 1 == N {
                convexity(r) >= -1e-12 * (-h)
            } else {
                convexity(r) > 0.0
            };
            if !ok {
                rho = if j == 0 { 0.0 } else { radii[j - 1] / r_lj };
                break;
            }
        }
        LagrangeJacobiRadius::Finite(rho * r_lj)
    }

    pub fn hill_region_contains(&self, h: f64, q: [f64; 2]) -> Result<bool, PotentialError> {
        Ok(self.eval_v(q)? + h >= 0.0)
    }
}

/// Polar coordinates `(r, ϑ)` with `ϑ ∈ [0, 2π)`.
pub fn polar(q: [f64; 2]) -> Result<(f64, f64), PotentialError> {
    let r = q[0].hypot(q[1]);
    if r == 0.0 {
        return Err(PotentialError::AtOrigin);
    }
    Ok((r, normalize_angle(q[1].atan2(q[0]))))
}

/// Maps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Maps an angle difference into `(−π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let t = (d + PI).rem_euclid(TAU) - PI;
    if t <= -PI {
        t + TAU
    } else {
        t
    }
}

/// Roots of `U'` on `[0, 2π)`: grid scan, bisection to 1e-12, Newton polish.
/// `None` when `U'` vanishes identically.
pub fn critical_angles(u: &AngularPotential) -> Option<Vec<f64>> {
    if u.is_constant() {
        return None;
    }
    let n = ROOT_SCAN_GRID;
    let grid: Vec<f64> = (0..n).map(|j| TAU * j as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| u.d1(t)).collect();
    let scale = u.derivative_scale(1);
    let mut roots = Vec::new();
    for j in 0..n {
        let (a, fa) = (grid[j], vals[j]);
        let (b, fb) = if j + 1 < n {
            (grid[j + 1], vals[j + 1])
        } else {
            (TAU, vals[0])
        };
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fb == 0.0 || fa.signum() == fb.signum() {
            continue;
        }
        roots.push(refine_root(u, a, b, fa));
    }
    let tol = 1e-10 * scale;
    let mut out: Vec<f64> = Vec::new();
    for r in roots {
        let r = normalize_angle(r);
        if u.d1(r).abs() > tol * 100.0 {
            continue;
        }
        if !out.iter().any(|&o| wrap_angle(o - r).abs() < 1e-9) {
            out.push(r);
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    Some(out)
}

fn refine_root(u: &AngularPotential, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    while b - a > 1e-12 {
        let m = 0.5 * (a + b);
        let fm = u.d1(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..3 {
        let (_, d1, d2) = u.derivs(x);
        if d2 == 0.0 || d1 == 0.0 {
            break;
        }
        let next = x - d1 / d2;
        if (next - x).abs() > 1e-9 {
            break;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kepler() -> PotentialSpec {
        PotentialSpec::new(1.0, AngularPotential::constant(1.0))
    }

    #[test]
    fn eval_examples() {
        let k = kepler();
        assert_eq!(k.eval_v([1.0, 0.0]).unwrap(), 1.0);
        assert!((k.eval_v([0.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        let b = PotentialSpec::benchmark();
        assert!((b.eval_v([0.0, 1.0]).unwrap() - 1.2).abs() < 1e-14);
        assert_eq!(k.eval_v([0.0, 0.0]), Err(PotentialError::AtOrigin));
    }

    #[test]
    fn gradient_examples() {
        let k = kepler();
        let g = k.grad_v([1.0, 0.0]).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-15 && g[1].abs() < 1e-15);
        let g = k.grad_v([0.0, 2.0]).unwrap();
        assert!(g[0].abs() < 1e-15 && (g[1] + 0.25).abs() < 1e-15);
        assert!(k.grad_v([0.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences_at_benchmark_point() {
        let b = PotentialSpec::benchmark();
        let q = [1.0, 0.0];
        let g = b.grad_v(q).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (b.eval_v(qp).unwrap() - b.eval_v(qm).unwrap()) / (2.0 * h);
            let err = (fd - g[i]).abs() / g[0].hypot(g[1]);
            assert!(err <= 1e-6, "component {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn perturbed_gradient_matches_differences() {
        let spec = PotentialSpec::benchmark().with_perturbation(PerturbationSpec {
            c: 0.3,
            beta: 0.4,
            g: AngularPotential::new(1.0, vec![0.5], vec![-0.2]),
        });
        for q in [[0.3, 0.1], [-0.7, 0.4], [0.05, -0.2]] {
            let g = spec.grad_v(q).unwrap();
            let r = q[0].hypot(q[1]);
            let h = 1e-6 * r;
            for i in 0..2 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = (spec.eval_v(qp).unwrap() - spec.eval_v(qm).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[0].hypot(g[1]));
            }
        }
    }

    #[test]
    fn benchmark_central_configurations() {
        let b = PotentialSpec::benchmark();
        let CentralConfigurations::Isolated(list) = b.central_configurations() else {
            panic!("expected isolated roots")
        };
        let thetas: Vec<f64> = list.iter().map(|c| c.theta).collect();
        let expected = [0.0, PI / 2.0, PI, 1.5 * PI];
        assert_eq!(thetas.len(), 4);
        for (t, e) in thetas.iter().zip(expected) {
            assert!((t - e).abs() < 1e-10, "{t} vs {e}");
        }
        assert!(list[0].is_global_min && list[2].is_global_min);
        assert!(!list[1].is_global_min && !list[3].is_global_min);
        assert!((list[0].second_derivative - 0.4).abs() < 1e-12);
        assert!((list[0].growth_constant() - 0.2).abs() < 1e-12);
        let star = b.minimal_configuration().unwrap();
        assert_eq!(star.theta, 0.0);
    }

    #[test]
    fn constant_potential_is_a_continuum() {
        assert_eq!(kepler().central_configurations(), CentralConfigurations::Continuum);
        assert_eq!(kepler().minimal_configuration(), Err(PotentialError::Continuum));
    }

    #[test]
    fn one_fold_potential_minimum_at_pi() {
        let spec = PotentialSpec::new(1.0, AngularPotential::new(2.0, vec![1.0], vec![0.0]));
        let CentralConfigurations::Isolated(list) = spec.central_configurations() else {
            panic!()
        };
        assert_eq!(list.len(), 2);
        assert!(list[0].theta.abs() < 1e-12);
        assert!((list[1].theta - PI).abs() < 1e-12);
        let star = spec.minimal_configuration().unwrap();
        assert!((star.theta - PI).abs() < 1e-12);
        assert!((star.value - 1.0).abs() < 1e-12);
        assert!((star.second_derivative - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lagrange_jacobi_examples() {
        let k = kepler();
        assert_eq!(k.lagrange_jacobi_radius(-0.5), LagrangeJacobiRadius::Finite(1.0));
        assert_eq!(k.lagrange_jacobi_radius(-1.0), LagrangeJacobiRadius::Finite(0.5));
        assert_eq!(k.lagrange_jacobi_radius(0.0), LagrangeJacobiRadius::Unbounded);
    }

    #[test]
    fn perturbed_radius_shrinks_only_for_negative_perturbation() {
        let base = PotentialSpec::new(1.0, AngularPotential::constant(1.0));
        let positive = base.clone().with_perturbation(PerturbationSpec {
            c: 0.2,
            beta: 0.5,
            g: AngularPotential::constant(1.0),
        });
        assert_eq!(positive.lagrange_jacobi_radius(-0.5), LagrangeJacobiRadius::Finite(1.0));
        let negative = base.with_perturbation(PerturbationSpec {
            c: -0.2,
            beta: 0.5,
            g: AngularPotential::constant(1.0),
        });
        let r = negative.lagrange_jacobi_radius(-0.5).finite().unwrap();
        assert!(r < 1.0 && r > 0.1, "{r}");
        // convexity holds strictly below the returned radius
        for j in 1..100 {
            let rr = r * j as f64 / 100.0;
            let val = 1.0 / rr - 1.5 * 0.2 / rr.sqrt() - 1.0;
            assert!(val > 0.0);
        }
    }

    #[test]
    fn hill_region_examples() {
        let k = kepler();
        assert!(k.hill_region_contains(-0.5, [1.0, 0.0]).unwrap());
        assert!(!k.hill_region_contains(-0.5, [3.0, 0.0]).unwrap());
        assert!(k.hill_region_contains(0.0, [1e6, 3.0]).unwrap());
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        assert!(matches!(
            PotentialSpec::new(2.0, AngularPotential::constant(1.0)).validate(),
            Err(PotentialError::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            PotentialSpec::new(1.0, AngularPotential::new(0.5, vec![1.0], vec![0.0])).validate(),
            Err(PotentialError::NotPositive { .. })
        ));
        let bad_beta = PotentialSpec::benchmark().with_perturbation(PerturbationSpec {
            c: 1.0,
            beta: 1.0,
            g: AngularPotential::constant(1.0),
        });
        assert!(matches!(bad_beta.validate(), Err(PotentialError::BetaOutOfRange { .. })));
    }

    #[test]
    fn json_shape() {
        let spec = PotentialSpec::benchmark();
        let js = serde_json::to_value(&spec).unwrap();
        assert_eq!(js["alpha"], 1.0);
        assert!(js["U"]["cos"].is_array());
        assert!(js["W"].is_null());
        let back: PotentialSpec = serde_json::from_value(js).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn angle_helpers() {
        assert_eq!(normalize_angle(-1e-20), 0.0);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(-PI), PI);
    }
}
