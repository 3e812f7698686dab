//! Discrete collision arcs and the Maupertuis functional
//! `M_h(u) = ½ ∫|u̇|² ∫(h + V(u))` on paths from `q₀` to the origin.
//!
//! Paths live on a graded parameter mesh stored through `σ_i = 1 − s_i`, so
//! the clustering of nodes at the collision end does not lose precision. The
//! last cell `[s_{N−1}, 1]` is modelled by the collision profile
//! `u_{N−1} (σ/Δs_N)^{2/(2+α)}`, integrated in closed form.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::mcgehee::McGeheeState;
use crate::potential::{normalize_angle, wrap_angle, LagrangeJacobiRadius, PotentialSpec};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationalError {
    #[error("node {node} violates |u| <= |q0| by {excess:.3e}")]
    Infeasible { node: usize, excess: f64 },
    #[error("node {0} sits at the origin before the final node")]
    NodeAtOrigin(usize),
    #[error("potential factor is not positive ({0:.3e})")]
    NonPositivePotential(f64),
    #[error("kinetic factor is not positive ({0:.3e})")]
    NonPositiveKinetic(f64),
    #[error("q0 = ({0:.4}, {1:.4}) lies outside the Lagrange-Jacobi radius {2:.4}")]
    OutsideLagrangeJacobi(f64, f64, f64),
    #[error("q0 lies outside the Hill region")]
    OutsideHillRegion,
    #[error("mesh needs at least {min} nodes, got {got}")]
    MeshTooSmall { min: usize, got: usize },
    #[error("too few samples near collision for the asymptotic fit ({0})")]
    InsufficientSamples(usize),
    #[error("minimization did not converge (stationarity {stationarity:.3e} after {iterations} iterations)")]
    NotConverged { stationarity: f64, iterations: usize },
    #[error("multistart found {0} distinct clusters")]
    Ambiguous(usize),
}

/// How node parameters are distributed along `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grading {
    /// Node radii of the collision profile behave like `(1 − i/N)^p`.
    RadiusPower { p: f64 },
    /// `p = 4/(2 − α)`: second-order convergence of `M` in `N`.
    #[default]
    Optimal,
}

/// Parameter mesh `0 = s_0 < … < s_N = 1`, stored as `σ_i = 1 − s_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub sigma: Vec<f64>,
    /// `ds[j] = s_j − s_{j−1}` for `j ≥ 1`; `ds[0] = 0`.
    pub ds: Vec<f64>,
}

impl Mesh {
    /// `σ_i = (1 − i/N)^e`.
    pub fn power(n: usize, e: f64) -> Self {
        let sigma: Vec<f64> = (0..=n)
            .map(|i| ((n - i) as f64 / n as f64).powf(e))
            .collect();
        let mut ds = vec![0.0; n + 1];
        for j in 1..=n {
            ds[j] = sigma[j - 1] - sigma[j];
        }
        Self { sigma, ds }
    }

    pub fn graded(n: usize, alpha: f64, grading: Grading) -> Self {
        let p = match grading {
            Grading::Optimal => 4.0 / (2.0 - alpha),
            Grading::RadiusPower { p } => p,
        };
        Self::power(n, p * (2.0 + alpha) / 2.0)
    }

    pub fn n(&self) -> usize {
        self.sigma.len() - 1
    }

    pub fn s(&self, i: usize) -> f64 {
        1.0 - self.sigma[i]
    }
}

/// Nodes `u_0 = q₀, …, u_N = 0` on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub nodes: Vec<[f64; 2]>,
    pub mesh: Mesh,
}

impl DiscretePath {
    /// The collision profile `u_i = q₀ σ_i^{2/(2+α)}` plus a tangential bump
    /// `b sin(π s_i)`.
    pub fn homothetic_profile(q0: [f64; 2], alpha: f64, mesh: Mesh, bump: f64) -> Self {
        let r0 = q0[0].hypot(q0[1]);
        let perp = [-q0[1] / r0, q0[0] / r0];
        let e = 2.0 / (2.0 + alpha);
        let n = mesh.n();
        let nodes = (0..=n)
            .map(|i| {
                if i == 0 {
                    return q0;
                }
                if i == n {
                    return [0.0, 0.0];
                }
                let f = mesh.sigma[i].powf(e);
                let b = bump * (PI * mesh.s(i)).sin();
                [q0[0] * f + b * perp[0], q0[1] * f + b * perp[1]]
            })
            .collect();
        Self { nodes, mesh }
    }

    pub fn q0(&self) -> [f64; 2] {
        self.nodes[0]
    }

    pub fn radii(&self) -> Vec<f64> {
        self.nodes.iter().map(|u| u[0].hypot(u[1])).collect()
    }

    /// Largest `|u_i| − |q₀|` over interior nodes.
    pub fn max_excess(&self) -> f64 {
        let r0 = norm(self.q0());
        self.nodes[1..self.nodes.len() - 1]
            .iter()
            .map(|u| norm(*u) - r0)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[inline]
fn norm(u: [f64; 2]) -> f64 {
    u[0].hypot(u[1])
}

/// `κ = 4/(4 − α²)`: kinetic integral of the collision profile.
pub fn profile_kinetic_constant(alpha: f64) -> f64 {
    4.0 / (4.0 - alpha * alpha)
}

/// Homogeneous part `r^{-α}U` and its gradient, plus the perturbation part.
struct Parts {
    v_hom: f64,
    g_hom: [f64; 2],
    v_w: f64,
    g_w: [f64; 2],
}

fn parts(spec: &PotentialSpec, q: [f64; 2]) -> Parts {
    let r = norm(q);
    let theta = q[1].atan2(q[0]);
    let (u, du, _) = spec.u.derivs(theta);
    let ra = r.powf(-spec.alpha);
    let f = ra / (r * r);
    let g_hom = [
        f * (-spec.alpha * u * q[0] - du * q[1]),
        f * (-spec.alpha * u * q[1] + du * q[0]),
    ];
    let (v_w, g_w) = match &spec.w {
        None => (0.0, [0.0, 0.0]),
        Some(w) => {
            let (val, w_r, w_t) = w.partials(r, theta);
            let (c, s) = (q[0] / r, q[1] / r);
            (val, [w_r * c - w_t / r * s, w_r * s + w_t / r * c])
        }
    };
    Parts {
        v_hom: ra * u,
        g_hom,
        v_w,
        g_w,
    }
}

fn potential_and_gradient(spec: &PotentialSpec, q: [f64; 2]) -> (f64, [f64; 2]) {
    let p = parts(spec, q);
    (p.v_hom + p.v_w, [p.g_hom[0] + p.g_w[0], p.g_hom[1] + p.g_w[1]])
}

/// Kinetic and potential factors `K = ∫|u̇|²`, `P = ∫(h + V)` with optional
/// gradients with respect to every node (entries 0 and N stay zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factors {
    pub kinetic: f64,
    pub potential: f64,
}

impl Factors {
    pub fn maupertuis(&self) -> f64 {
        0.5 * self.kinetic * self.potential
    }

    pub fn omega(&self) -> f64 {
        (self.potential / (0.5 * self.kinetic)).sqrt()
    }
}

pub fn factors(
    spec: &PotentialSpec,
    h: f64,
    path: &DiscretePath,
    mut grads: Option<(&mut [[f64; 2]], &mut [[f64; 2]])>,
) -> Result<Factors, VariationalError> {
    let n = path.mesh.n();
    if n < 3 {
        return Err(VariationalError::MeshTooSmall { min: 3, got: n });
    }
    let a = spec.alpha;
    let u = &path.nodes;
    let ds = &path.mesh.ds;
    if let Some((gk, gp)) = grads.as_mut() {
        gk.iter_mut().for_each(|g| *g = [0.0, 0.0]);
        gp.iter_mut().for_each(|g| *g = [0.0, 0.0]);
    }
    let mut k = 0.0;
    let mut p = 0.0;
    for j in 1..n {
        let d = [u[j][0] - u[j - 1][0], u[j][1] - u[j - 1][1]];
        k += (d[0] * d[0] + d[1] * d[1]) / ds[j];
        let m = [0.5 * (u[j][0] + u[j - 1][0]), 0.5 * (u[j][1] + u[j - 1][1])];
        if m == [0.0, 0.0] {
            return Err(VariationalError::NodeAtOrigin(j));
        }
        let (v, gv) = potential_and_gradient(spec, m);
        p += ds[j] * (h + v);
        if let Some((gk, gp)) = grads.as_mut() {
            for c in 0..2 {
                let dk = 2.0 * d[c] / ds[j];
                gk[j][c] += dk;
                gk[j - 1][c] -= dk;
                let dp = 0.5 * ds[j] * gv[c];
                gp[j][c] += dp;
                gp[j - 1][c] += dp;
            }
        }
    }
    // last cell: collision profile through u_{N-1}
    let last = u[n - 1];
    let rl = norm(last);
    if rl == 0.0 {
        return Err(VariationalError::NodeAtOrigin(n - 1));
    }
    let kappa = profile_kinetic_constant(a);
    let dsn = ds[n];
    k += kappa * rl * rl / dsn;
    let gamma = 2.0 * a / (2.0 + a);
    let pt = parts(spec, last);
    let w_fac = match &spec.w {
        Some(w) => 1.0 / (1.0 - 2.0 * w.beta / (2.0 + a)),
        None => 0.0,
    };
    let hom_fac = 1.0 / (1.0 - gamma);
    p += dsn * (h + pt.v_hom * hom_fac + pt.v_w * w_fac);
    if let Some((gk, gp)) = grads.as_mut() {
        for c in 0..2 {
            gk[n - 1][c] += 2.0 * kappa * last[c] / dsn;
            gp[n - 1][c] += dsn * (pt.g_hom[c] * hom_fac + pt.g_w[c] * w_fac);
        }
        gk[0] = [0.0, 0.0];
        gp[0] = [0.0, 0.0];
        gk[n] = [0.0, 0.0];
        gp[n] = [0.0, 0.0];
    }
    if !(k > 0.0) {
        return Err(VariationalError::NonPositiveKinetic(k));
    }
    if !(p > 0.0) {
        return Err(VariationalError::NonPositivePotential(p));
    }
    Ok(Factors {
        kinetic: k,
        potential: p,
    })
}

/// Feasibility check `|u_i| ≤ |q₀| + tol`.
pub fn check_feasible(path: &DiscretePath, tol: f64) -> Result<(), VariationalError> {
    let r0 = norm(path.q0());
    for (i, u) in path.nodes.iter().enumerate() {
        let excess = norm(*u) - r0;
        if excess > tol {
            return Err(VariationalError::Infeasible { node: i, excess });
        }
    }
    Ok(())
}

pub fn maupertuis_value(spec: &PotentialSpec, h: f64, path: &DiscretePath) -> Result<f64, VariationalError> {
    check_feasible(path, 1e-12 * norm(path.q0()))?;
    Ok(factors(spec, h, path, None)?.maupertuis())
}

/// Gradient of the discrete value with respect to every node; the pinned
/// endpoints carry zero.
pub fn maupertuis_gradient(spec: &PotentialSpec, h: f64, path: &DiscretePath) -> Result<Vec<[f64; 2]>, VariationalError> {
    check_feasible(path, 1e-12 * norm(path.q0()))?;
    let n1 = path.nodes.len();
    let mut gk = vec![[0.0; 2]; n1];
    let mut gp = vec![[0.0; 2]; n1];
    let f = factors(spec, h, path, Some((&mut gk, &mut gp)))?;
    Ok((0..n1)
        .map(|i| {
            [
                0.5 * (f.potential * gk[i][0] + f.kinetic * gp[i][0]),
                0.5 * (f.potential * gk[i][1] + f.kinetic * gp[i][1]),
            ]
        })
        .collect())
}

pub fn omega(spec: &PotentialSpec, h: f64, path: &DiscretePath) -> Result<f64, VariationalError> {
    Ok(factors(spec, h, path, None)?.omega())
}

/// `∫₀^R √(h + U ρ^{-α} + W(ρ)) dρ` along the ray at angle `theta`.
pub fn radial_jacobi_length(spec: &PotentialSpec, h: f64, theta: f64, radius: f64) -> f64 {
    if radius <= 0.0 {
        return 0.0;
    }
    let a = spec.alpha;
    let m = 2.0 / (2.0 - a);
    let (x, w) = gauss_legendre(32);
    let panels = 8;
    let mut acc = 0.0;
    for pnl in 0..panels {
        let lo = pnl as f64 / panels as f64;
        let hw = 0.5 / panels as f64;
        for (xi, wi) in x.iter().zip(&w) {
            let t = lo + hw * (1.0 + xi);
            let rho = radius * t.powf(m);
            let v = spec.eval_polar(rho, theta);
            let f = (h + v).max(0.0).sqrt();
            acc += wi * hw * f * radius * m * t.powf(m - 1.0);
        }
    }
    acc
}

/// Jacobi length `Σ|Δu|√(h + V(midpoint))` plus the exact radial last cell.
pub fn jacobi_length(spec: &PotentialSpec, h: f64, path: &DiscretePath) -> Result<f64, VariationalError> {
    let n = path.mesh.n();
    let u = &path.nodes;
    let mut l = 0.0;
    for j in 1..n {
        let d = [u[j][0] - u[j - 1][0], u[j][1] - u[j - 1][1]];
        let m = [0.5 * (u[j][0] + u[j - 1][0]), 0.5 * (u[j][1] + u[j - 1][1])];
        let v = spec.eval_v(m).map_err(|_| VariationalError::NodeAtOrigin(j))?;
        l += norm(d) * (h + v).max(0.0).sqrt();
    }
    let last = u[n - 1];
    l += radial_jacobi_length(spec, h, last[1].atan2(last[0]), norm(last));
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Limited-memory BFGS with the Sobolev preconditioner as initial metric.
    Lbfgs,
    /// Preconditioned projected gradient with Armijo backtracking.
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    pub nodes: usize,
    /// Tangential bump amplitudes relative to `|q₀|`; each nonzero one is
    /// used with both signs.
    pub amplitudes: Vec<f64>,
    pub optimizer: Optimizer,
    pub grading: Grading,
    pub max_iter: usize,
    /// Stop when the preconditioned gradient norm relative to `M` drops below this.
    pub tolerance: f64,
    pub cluster_threshold: f64,
    pub memory: usize,
    pub execution: Execution,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            nodes: 512,
            amplitudes: vec![0.0, 0.1, 0.2],
            optimizer: Optimizer::Lbfgs,
            grading: Grading::Optimal,
            max_iter: 100_000,
            tolerance: 1e-10,
            cluster_threshold: 1e-3,
            memory: 12,
            execution: Execution::Sequential,
        }
    }
}

impl MinimizeOptions {
    pub fn signed_amplitudes(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for &a in &self.amplitudes {
            if a == 0.0 {
                out.push(0.0);
            } else {
                out.push(a.abs());
                out.push(-a.abs());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizationResult {
    pub path: DiscretePath,
    pub value: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub omega: f64,
    /// `√(2(h + V(q₀)))`.
    pub speed: f64,
    pub phi0: f64,
    pub iterations: usize,
    pub stationarity: f64,
    pub converged: bool,
    pub cluster_id: usize,
    /// Tangential amplitude of the initial guess.
    pub start_amplitude: f64,
    /// Nodes on the constraint sphere at exit.
    pub active_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub phi0: f64,
    pub value: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartResult {
    pub runs: Vec<MinimizationResult>,
    pub clusters: Vec<Cluster>,
    /// Index into `runs` of the lowest value.
    pub best: usize,
}

impl MultistartResult {
    pub fn best(&self) -> &MinimizationResult {
        &self.runs[self.best]
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }
}

/// Tridiagonal Sobolev operator on interior nodes `1..N−1`: Hessian of `K/2`.
struct Stiffness {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Stiffness {
    fn new(mesh: &Mesh, alpha: f64) -> Self {
        let n = mesh.n();
        let ds = &mesh.ds;
        let mut diag = vec![0.0; n - 1];
        let mut off = vec![0.0; n - 2];
        for j in 1..n {
            diag[j - 1] = 1.0 / ds[j]
                + if j == n - 1 {
                    profile_kinetic_constant(alpha) / ds[n]
                } else {
                    1.0 / ds[j + 1]
                };
            if j < n - 1 {
                off[j - 1] = -1.0 / ds[j + 1];
            }
        }
        Self { diag, off }
    }

    /// Solves `(scale · A) x = b` for each coordinate (Thomas algorithm).
    fn solve(&self, b: &[[f64; 2]], scale: f64) -> Vec<[f64; 2]> {
        let m = self.diag.len();
        let mut cp = vec![0.0; m];
        let mut dp = vec![[0.0; 2]; m];
        let mut denom = self.diag[0];
        for c in 0..2 {
            dp[0][c] = b[0][c] / denom;
        }
        if m > 1 {
            cp[0] = self.off[0] / denom;
        }
        for i in 1..m {
            denom = self.diag[i] - self.off[i - 1] * cp[i - 1];
            if i < m - 1 {
                cp[i] = self.off[i] / denom;
            }
            for c in 0..2 {
                dp[i][c] = (b[i][c] - self.off[i - 1] * dp[i - 1][c]) / denom;
            }
        }
        for i in (0..m - 1).rev() {
            for c in 0..2 {
                dp[i][c] -= cp[i] * dp[i + 1][c];
            }
        }
        dp.iter().map(|v| [v[0] / scale, v[1] / scale]).collect()
    }
}

fn dot(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).sum()
}

struct Objective<'a> {
    spec: &'a PotentialSpec,
    h: f64,
}

impl Objective<'_> {
    /// Value and interior gradient.
    fn eval(&self, path: &DiscretePath) -> Option<(Factors, Vec<[f64; 2]>)> {
        let n1 = path.nodes.len();
        let mut gk = vec![[0.0; 2]; n1];
        let mut gp = vec![[0.0; 2]; n1];
        let f = factors(self.spec, self.h, path, Some((&mut gk, &mut gp))).ok()?;
        if !f.maupertuis().is_finite() {
            return None;
        }
        let g = (1..n1 - 1)
            .map(|i| {
                [
                    0.5 * (f.potential * gk[i][0] + f.kinetic * gp[i][0]),
                    0.5 * (f.potential * gk[i][1] + f.kinetic * gp[i][1]),
                ]
            })
            .collect();
        Some((f, g))
    }
}

fn project(nodes: &mut [[f64; 2]], r0: f64) -> bool {
    let n = nodes.len();
    let mut active = false;
    for u in &mut nodes[1..n - 1] {
        let r = norm(*u);
        if r > r0 {
            u[0] *= r0 / r;
            u[1] *= r0 / r;
            active = true;
        }
    }
    active
}

/// Local minimization from a given feasible path.
pub fn minimize_path(
    spec: &PotentialSpec,
    h: f64,
    start: DiscretePath,
    opts: &MinimizeOptions,
) -> Result<MinimizationResult, VariationalError> {
    let obj = Objective { spec, h };
    let mut path = start;
    let r0 = norm(path.q0());
    project(&mut path.nodes, r0);
    let stiff = Stiffness::new(&path.mesh, spec.alpha);
    let n = path.mesh.n();
    let (mut f, mut g) = obj.eval(&path).ok_or(VariationalError::NonPositivePotential(f64::NAN))?;
    let mut s_hist: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut y_hist: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;
    let mut converged = false;
    let mut stalls = 0;

    while iterations < opts.max_iter {
        let pg = stiff.solve(&g, f.potential);
        let m_val = f.maupertuis();
        stationarity = dot(&g, &pg).max(0.0).sqrt() / m_val;
        if stationarity <= opts.tolerance {
            converged = true;
            break;
        }
        // search direction
        let dir: Vec<[f64; 2]> = match opts.optimizer {
            Optimizer::ProjectedGradient => pg.iter().map(|v| [-v[0], -v[1]]).collect(),
            Optimizer::Lbfgs => {
                let k = s_hist.len();
                let mut q = g.clone();
                let mut alphas = vec![0.0; k];
                let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y_hist[i], &s_hist[i])).collect();
                for i in (0..k).rev() {
                    alphas[i] = rho[i] * dot(&s_hist[i], &q);
                    for (qv, yv) in q.iter_mut().zip(&y_hist[i]) {
                        qv[0] -= alphas[i] * yv[0];
                        qv[1] -= alphas[i] * yv[1];
                    }
                }
                let mut r = stiff.solve(&q, f.potential);
                if k > 0 {
                    let hy = stiff.solve(&y_hist[k - 1], f.potential);
                    let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &hy);
                    if gamma.is_finite() && gamma > 0.0 {
                        r.iter_mut().for_each(|v| {
                            v[0] *= gamma;
                            v[1] *= gamma;
                        });
                    }
                }
                for i in 0..k {
                    let beta = rho[i] * dot(&y_hist[i], &r);
                    for (rv, sv) in r.iter_mut().zip(&s_hist[i]) {
                        rv[0] += (alphas[i] - beta) * sv[0];
                        rv[1] += (alphas[i] - beta) * sv[1];
                    }
                }
                let d: Vec<[f64; 2]> = r.iter().map(|v| [-v[0], -v[1]]).collect();
                if dot(&d, &g) >= 0.0 {
                    s_hist.clear();
                    y_hist.clear();
                    pg.iter().map(|v| [-v[0], -v[1]]).collect()
                } else {
                    d
                }
            }
        };

        // Armijo backtracking on the projected arc
        let slack = 1e-14 * m_val.abs();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = path.clone();
            for i in 1..n {
                trial.nodes[i][0] += t * dir[i - 1][0];
                trial.nodes[i][1] += t * dir[i - 1][1];
            }
            let active = project(&mut trial.nodes, r0);
            if let Some((ft, gt)) = obj.eval(&trial) {
                let step: Vec<[f64; 2]> = (1..n)
                    .map(|i| {
                        [
                            trial.nodes[i][0] - path.nodes[i][0],
                            trial.nodes[i][1] - path.nodes[i][1],
                        ]
                    })
                    .collect();
                let decrease = dot(&g, &step);
                if ft.maupertuis() <= m_val + 1e-4 * decrease + slack {
                    accepted = Some((trial, ft, gt, step, active));
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((trial, ft, gt, step, active)) = accepted else {
            stalls += 1;
            s_hist.clear();
            y_hist.clear();
            if stalls >= 3 {
                break;
            }
            continue;
        };
        stalls = 0;
        let yv: Vec<[f64; 2]> = gt.iter().zip(&g).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
        let sy = dot(&step, &yv);
        if active {
            s_hist.clear();
            y_hist.clear();
        } else if sy > 1e-300 {
            s_hist.push(step);
            y_hist.push(yv);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        path = trial;
        f = ft;
        g = gt;
    }

    let speed = (2.0 * (h + spec.eval_v(path.q0()).map_err(|_| VariationalError::OutsideHillRegion)?)).sqrt();
    let tangent = initial_tangent(&path);
    let active_nodes = path.nodes[1..n]
        .iter()
        .filter(|u| norm(**u) >= r0 * (1.0 - 1e-12))
        .count();
    Ok(MinimizationResult {
        value: f.maupertuis(),
        kinetic: f.kinetic,
        potential: f.potential,
        omega: f.omega(),
        speed,
        phi0: normalize_angle(tangent[1].atan2(tangent[0])),
        iterations,
        stationarity,
        converged,
        cluster_id: 0,
        start_amplitude: 0.0,
        active_nodes,
        path,
    })
}

/// `u'(0)` from the interpolating cubic through the first four nodes.
pub fn initial_tangent(path: &DiscretePath) -> [f64; 2] {
    let s: Vec<f64> = (0..4).map(|i| path.mesh.s(i)).collect();
    // derivative at s_0 of the Lagrange basis polynomials
    let mut w = [0.0; 4];
    for j in 0..4 {
        if j == 0 {
            w[0] = (1..4).map(|k| 1.0 / (s[0] - s[k])).sum();
        } else {
            let mut num = 1.0;
            let mut den = 1.0;
            for k in 0..4 {
                if k != j {
                    den *= s[j] - s[k];
                    if k != 0 {
                        num *= s[0] - s[k];
                    }
                }
            }
            w[j] = num / den;
        }
    }
    let mut d = [0.0, 0.0];
    for j in 0..4 {
        d[0] += w[j] * path.nodes[j][0];
        d[1] += w[j] * path.nodes[j][1];
    }
    d
}

/// Checks that `q₀` admits the minimization (inside `r_LJ` and the Hill region).
pub fn check_start(spec: &PotentialSpec, h: f64, q0: [f64; 2]) -> Result<(), VariationalError> {
    let r0 = norm(q0);
    if let LagrangeJacobiRadius::Finite(r_lj) = spec.lagrange_jacobi_radius(h) {
        if r0 >= r_lj {
            return Err(VariationalError::OutsideLagrangeJacobi(q0[0], q0[1], r_lj));
        }
    }
    match spec.hill_region_contains(h, q0) {
        Ok(true) => Ok(()),
        _ => Err(VariationalError::OutsideHillRegion),
    }
}

/// Multistart minimization with clustering by initial angle.
pub fn minimize_collision_arc(
    spec: &PotentialSpec,
    h: f64,
    q0: [f64; 2],
    opts: &MinimizeOptions,
) -> Result<MultistartResult, VariationalError> {
    check_start(spec, h, q0)?;
    let r0 = norm(q0);
    let amps = opts.signed_amplitudes();
    let results = opts.execution.map(&amps, |&b| {
        let mesh = Mesh::graded(opts.nodes, spec.alpha, opts.grading);
        let start = DiscretePath::homothetic_profile(q0, spec.alpha, mesh, b * r0);
        minimize_path(spec, h, start, opts).map(|mut r| {
            r.start_amplitude = b;
            r
        })
    });
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }
    let clusters = cluster_runs(&mut runs, opts.cluster_threshold);
    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].value.total_cmp(&runs[b].value))
        .expect("at least one start");
    Ok(MultistartResult { runs, clusters, best })
}

fn cluster_runs(runs: &mut [MinimizationResult], threshold: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for i in 0..runs.len() {
        let found = clusters
            .iter()
            .position(|c| wrap_angle(runs[i].phi0 - c.phi0).abs() <= threshold);
        match found {
            Some(ci) => {
                clusters[ci].members.push(i);
                if runs[i].value < clusters[ci].value {
                    clusters[ci].value = runs[i].value;
                }
                runs[i].cluster_id = ci;
            }
            None => {
                runs[i].cluster_id = clusters.len();
                clusters.push(Cluster {
                    id: clusters.len(),
                    phi0: runs[i].phi0,
                    value: runs[i].value,
                    members: vec![i],
                });
            }
        }
    }
    clusters
}

/// `ψ_h(q) = min M_h` over the multistart.
pub fn psi_h(spec: &PotentialSpec, h: f64, q: [f64; 2], opts: &MinimizeOptions) -> Result<f64, VariationalError> {
    Ok(minimize_collision_arc(spec, h, q, opts)?.best().value)
}

/// `ω_h(q) = min ℒ_h`, evaluated as the Jacobi length of the best minimizer.
pub fn omega_h(spec: &PotentialSpec, h: f64, q: [f64; 2], opts: &MinimizeOptions) -> Result<f64, VariationalError> {
    let res = minimize_collision_arc(spec, h, q, opts)?;
    res.runs
        .iter()
        .map(|r| jacobi_length(spec, h, &r.path))
        .try_fold(f64::INFINITY, |acc, l| l.map(|l| acc.min(l)))
}

/// Largest `|ω² ü − ∇V(u)|` at interior nodes with `s ≤ s_max`, relative to
/// the largest `|∇V|` among them. Second differences on the nonuniform mesh.
pub fn ode_residual(spec: &PotentialSpec, result: &MinimizationResult, s_max: f64) -> f64 {
    let path = &result.path;
    let n = path.mesh.n();
    let ds = &path.mesh.ds;
    let u = &path.nodes;
    let w2 = result.omega * result.omega;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for j in 1..n - 1 {
        if path.mesh.s(j) > s_max {
            break;
        }
        let (_, gv) = potential_and_gradient(spec, u[j]);
        let mut acc = [0.0; 2];
        for c in 0..2 {
            let fwd = (u[j + 1][c] - u[j][c]) / ds[j + 1];
            let bwd = (u[j][c] - u[j - 1][c]) / ds[j];
            acc[c] = 2.0 * (fwd - bwd) / (ds[j] + ds[j + 1]);
        }
        let res = [w2 * acc[0] - gv[0], w2 * acc[1] - gv[1]];
        worst = worst.max(norm(res));
        scale = scale.max(norm(gv));
    }
    worst / scale
}

/// Physical trajectory `x(t) = u(ωt)` and the initial velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalArc {
    pub t: Vec<f64>,
    /// `T − t_i = σ_i/ω`, exact even where `t_i` rounds to `T`.
    pub time_to_collision: Vec<f64>,
    pub x: Vec<[f64; 2]>,
    pub collision_time: f64,
    pub v0: [f64; 2],
    pub phi0: f64,
    pub energy_residual: f64,
}

pub fn to_physical(spec: &PotentialSpec, h: f64, result: &MinimizationResult) -> PhysicalArc {
    let mesh = &result.path.mesh;
    let w = result.omega;
    let v0 = [result.speed * result.phi0.cos(), result.speed * result.phi0.sin()];
    let q0 = result.path.q0();
    let e = 0.5 * (v0[0] * v0[0] + v0[1] * v0[1]) - spec.eval_v(q0).unwrap_or(f64::NAN) - h;
    PhysicalArc {
        t: (0..=mesh.n()).map(|i| mesh.s(i) / w).collect(),
        time_to_collision: mesh.sigma.iter().map(|s| s / w).collect(),
        x: result.path.nodes.clone(),
        collision_time: 1.0 / w,
        v0,
        phi0: result.phi0,
        energy_residual: e,
    }
}

/// McGehee state `(|q₀|, ϑ₀, φ₀)` of a minimizer's initial condition.
pub fn initial_mcgehee(result: &MinimizationResult) -> McGeheeState {
    let q0 = result.path.q0();
    McGeheeState::new(norm(q0), q0[1].atan2(q0[0]), result.phi0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub k: f64,
    pub exponent: f64,
    pub samples: usize,
    /// Window `[lo, hi]` of `T − t` used by the fit.
    pub window: (f64, f64),
}

/// Log–log least squares of `|x|` against `T − t` over the last decade of
/// `T − t` that holds at least `min_samples` samples.
pub fn asymptotic_fit(arc: &PhysicalArc, min_samples: usize) -> Result<AsymptoticFit, VariationalError> {
    let pts: Vec<(f64, f64)> = arc
        .time_to_collision
        .iter()
        .zip(&arc.x)
        .filter(|(tt, x)| **tt > 0.0 && norm(**x) > 0.0)
        .map(|(tt, x)| (*tt, norm(*x)))
        .collect();
    // pts are ordered by decreasing T − t
    let n = pts.len();
    let mut chosen = None;
    for m in 1..n {
        let lo = pts[n - 1 - m].0.min(pts[n - 1].0);
        let lo = lo.max(pts[n - 1].0);
        let lo = pts[n - m].0.max(lo);
        let hi = 10.0 * lo;
        let count = pts.iter().filter(|(tt, _)| *tt >= lo && *tt <= hi).count();
        if count >= min_samples {
            chosen = Some((lo, hi));
            break;
        }
    }
    let (lo, hi) = chosen.ok_or(VariationalError::InsufficientSamples(n))?;
    let sel: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(tt, _)| *tt >= lo && *tt <= hi)
        .map(|(tt, r)| (tt.ln(), r.ln()))
        .collect();
    let m = sel.len() as f64;
    let mx = sel.iter().map(|p| p.0).sum::<f64>() / m;
    let my = sel.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = sel.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = sel.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let exponent = sxy / sxx;
    Ok(AsymptoticFit {
        k: (my - exponent * mx).exp(),
        exponent,
        samples: sel.len(),
        window: (lo, hi),
    })
}

/// Discrete `H¹` distance between two paths on the same mesh.
pub fn h1_distance(a: &DiscretePath, b: &DiscretePath, alpha: f64) -> f64 {
    let n = a.mesh.n();
    let ds = &a.mesh.ds;
    let e: Vec<[f64; 2]> = a
        .nodes
        .iter()
        .zip(&b.nodes)
        .map(|(x, y)| [x[0] - y[0], x[1] - y[1]])
        .collect();
    let mut acc = 0.0;
    for j in 1..n {
        let d = [e[j][0] - e[j - 1][0], e[j][1] - e[j - 1][1]];
        let m = [0.5 * (e[j][0] + e[j - 1][0]), 0.5 * (e[j][1] + e[j - 1][1])];
        acc += (d[0] * d[0] + d[1] * d[1]) / ds[j] + ds[j] * (m[0] * m[0] + m[1] * m[1]);
    }
    let l = e[n - 1];
    let l2 = l[0] * l[0] + l[1] * l[1];
    acc += profile_kinetic_constant(alpha) * l2 / ds[n] + ds[n] * l2 * (2.0 + alpha) / (6.0 + alpha);
    acc.sqrt()
}

/// Max-norm distance over nodes with `s ≤ b`.
pub fn sup_distance(a: &DiscretePath, b: &DiscretePath, s_max: f64) -> f64 {
    (0..=a.mesh.n())
        .take_while(|&i| a.mesh.s(i) <= s_max)
        .map(|i| norm([a.nodes[i][0] - b.nodes[i][0], a.nodes[i][1] - b.nodes[i][1]]))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub q: [f64; 2],
    pub h: f64,
    pub value: f64,
    pub phi0: f64,
    pub h1_to_limit: f64,
    pub sup_to_limit: f64,
    pub h1_to_previous: Option<f64>,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub q_star: [f64; 2],
    pub h_star: f64,
    pub limit_value: f64,
    pub limit_phi0: f64,
    pub points: Vec<ConvergencePoint>,
    pub h1_monotone: bool,
    pub sup_monotone: bool,
    pub final_h1: f64,
    pub final_sup: f64,
}

/// Minimizers along `q_k → q*` (optionally with energies `h_k → h*`) compared
/// with the limit minimizer in discrete `H¹` and in sup norm on `[0, 0.9]`.
pub fn convergence_study(
    spec: &PotentialSpec,
    h_star: f64,
    q_star: [f64; 2],
    sequence: &[[f64; 2]],
    energies: Option<&[f64]>,
    opts: &MinimizeOptions,
) -> Result<ConvergenceReport, VariationalError> {
    const B: f64 = 0.9;
    let limit = minimize_collision_arc(spec, h_star, q_star, opts)?;
    if limit.cluster_count() > 1 {
        return Err(VariationalError::Ambiguous(limit.cluster_count()));
    }
    let lim = limit.best();
    let items: Vec<([f64; 2], f64)> = sequence
        .iter()
        .enumerate()
        .map(|(k, q)| (*q, energies.map(|e| e[k]).unwrap_or(h_star)))
        .collect();
    let inner = MinimizeOptions {
        execution: Execution::Sequential,
        ..opts.clone()
    };
    let results = opts
        .execution
        .map(&items, |(q, hk)| minimize_collision_arc(spec, *hk, *q, &inner));
    let mut points = Vec::with_capacity(items.len());
    let mut prev: Option<DiscretePath> = None;
    for ((q, hk), res) in items.iter().zip(results) {
        let res = res?;
        if res.cluster_count() > 1 {
            return Err(VariationalError::Ambiguous(res.cluster_count()));
        }
        let best = res.best();
        points.push(ConvergencePoint {
            q: *q,
            h: *hk,
            value: best.value,
            phi0: best.phi0,
            h1_to_limit: h1_distance(&best.path, &lim.path, spec.alpha),
            sup_to_limit: sup_distance(&best.path, &lim.path, B),
            h1_to_previous: prev.as_ref().map(|p| h1_distance(&best.path, p, spec.alpha)),
            clusters: res.cluster_count(),
        });
        prev = Some(best.path.clone());
    }
    let h1_monotone = points.windows(2).all(|w| w[1].h1_to_limit < w[0].h1_to_limit);
    let sup_monotone = points.windows(2).all(|w| w[1].sup_to_limit < w[0].sup_to_limit);
    let final_h1 = points.last().map(|p| p.h1_to_limit).unwrap_or(0.0);
    let final_sup = points.last().map(|p| p.sup_to_limit).unwrap_or(0.0);
    Ok(ConvergenceReport {
        q_star,
        h_star,
        limit_value: lim.value,
        limit_phi0: lim.phi0,
        points,
        h1_monotone,
        sup_monotone,
        final_h1,
        final_sup,
    })
}

/// CSV of a path: `s,x,y,r,theta`.
pub fn path_csv(path: &DiscretePath) -> String {
    let mut out = String::from("s,x,y,r,theta\n");
    for (i, u) in path.nodes.iter().enumerate() {
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            path.mesh.s(i),
            u[0],
            u[1],
            norm(*u),
            u[1].atan2(u[0])
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::AngularPotential;

    fn kepler() -> PotentialSpec {
        PotentialSpec::new(1.0, AngularPotential::constant(1.0))
    }

    #[test]
    fn mesh_is_graded_and_exact_at_ends() {
        let m = Mesh::graded(64, 1.0, Grading::Optimal);
        assert_eq!(m.sigma[0], 1.0);
        assert_eq!(m.sigma[64], 0.0);
        assert!(m.ds[1..].iter().all(|&d| d > 0.0));
        assert!((m.ds[1..].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(m.ds[64] < 1e-10);
    }

    #[test]
    fn homothetic_profile_kinetic_factor_is_exact() {
        // for the exact profile every cell but the last is approximated;
        // the last cell matches the closed form exactly
        let mesh = Mesh::graded(8, 1.0, Grading::Optimal);
        let path = DiscretePath::homothetic_profile([0.5, 0.0], 1.0, mesh, 0.0);
        let f = factors(&kepler(), -0.5, &path, None).unwrap();
        assert!(f.kinetic > 0.0 && f.potential > 0.0);
        // exact K of the profile: κ r0² = 4/3 · 0.25
        assert!((f.kinetic - 1.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = PotentialSpec::benchmark();
        let mesh = Mesh::graded(32, 1.0, Grading::Optimal);
        let path = DiscretePath::homothetic_profile([0.2, 0.05], 1.0, mesh, 0.03);
        let g = maupertuis_gradient(&spec, -0.5, &path).unwrap();
        let step = 1e-7 * 0.2;
        for j in [1usize, 5, 12, 20] {
            for c in 0..2 {
                let mut p = path.clone();
                let mut m = path.clone();
                p.nodes[j][c] += step;
                m.nodes[j][c] -= step;
                let fd = (maupertuis_value(&spec, -0.5, &p).unwrap() - maupertuis_value(&spec, -0.5, &m).unwrap()) / (2.0 * step);
                let scale = g[j][0].hypot(g[j][1]);
                assert!((fd - g[j][c]).abs() <= 1e-6 * scale, "node {j} comp {c}: {fd} vs {}", g[j][c]);
            }
        }
    }

    #[test]
    fn homothetic_angular_gradient_vanishes() {
        let spec = PotentialSpec::benchmark();
        let mesh = Mesh::graded(64, 1.0, Grading::Optimal);
        let path = DiscretePath::homothetic_profile([0.2, 0.0], 1.0, mesh, 0.0);
        let g = maupertuis_gradient(&spec, -0.5, &path).unwrap();
        let scale = g.iter().map(|v| v[0].abs()).fold(0.0, f64::max);
        assert!(g.iter().all(|v| v[1].abs() <= 1e-10 * scale));
    }

    #[test]
    fn omega_of_balanced_factors_is_one() {
        let f = Factors { kinetic: 2.0, potential: 1.0 };
        assert_eq!(f.omega(), 1.0);
    }

    #[test]
    fn cauchy_schwarz_between_length_and_value() {
        let spec = PotentialSpec::benchmark();
        for b in [0.0, 0.02, -0.05] {
            let mesh = Mesh::graded(48, 1.0, Grading::Optimal);
            let path = DiscretePath::homothetic_profile([0.15, 0.1], 1.0, mesh, b);
            let m = maupertuis_value(&spec, -0.5, &path).unwrap();
            let l = jacobi_length(&spec, -0.5, &path).unwrap();
            assert!(l * l <= 2.0 * m * (1.0 + 1e-10));
        }
    }

    #[test]
    fn radial_minimizer_matches_quadrature() {
        let spec = kepler();
        let opts = MinimizeOptions { amplitudes: vec![0.0], ..Default::default() };
        let res = minimize_collision_arc(&spec, -0.5, [0.25, 0.0], &opts).unwrap();
        let best = res.best();
        assert!(best.converged, "stationarity {}", best.stationarity);
        let l = radial_jacobi_length(&spec, -0.5, 0.0, 0.25);
        assert!((l - 0.97875746097).abs() < 1e-9, "{l}");
        assert!((best.value - 0.5 * l * l).abs() < 1e-4 * best.value, "{} vs {} iters {} stat {}", best.value, 0.5 * l * l, best.iterations, best.stationarity);
        assert!((best.phi0 - PI).abs() < 1e-9);
    }

    #[test]
    fn tangent_is_exact_for_cubic_paths() {
        let mesh = Mesh::graded(16, 1.0, Grading::Optimal);
        let nodes = (0..=16)
            .map(|i| {
                let s = mesh.s(i);
                [1.0 - 2.0 * s + s * s * s, 3.0 * s - s * s]
            })
            .collect();
        let t = initial_tangent(&DiscretePath { nodes, mesh });
        assert!((t[0] + 2.0).abs() < 1e-9 && (t[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_starts_outside_radius() {
        let spec = kepler();
        assert!(matches!(
            minimize_collision_arc(&spec, -0.5, [1.5, 0.0], &MinimizeOptions::default()),
            Err(VariationalError::OutsideLagrangeJacobi(..))
        ));
    }
}
