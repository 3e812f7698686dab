//! Local stable manifold of the ingoing equilibrium `(0, ϑ*, ϑ* + π)`.
//!
//! Membership of a state is decided by shooting: orbits started at
//! `(r₀, ϑ₀, φ)` leave a neighbourhood of the saddle along one of the two
//! unstable branches unless `φ` lies on the manifold, so the side on which
//! they leave the cone changes sign exactly at `φ = Ψ(r₀, ϑ₀)`. Bisection on
//! that sign locates the manifold; a state is accepted when its `φ` is within
//! tolerance of it.
//!
//! The chart `Ψ` is assembled from backward orbits seeded on the stable
//! eigenplane and interpolated by moving least squares.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibria::{eigen_3d, unit, EquilibriumError};
use crate::exec::Execution;
use crate::mcgehee::{
    ingoing_distance, integrate_with, z_value, Direction, McGeheeState, Termination, Tolerances, Trajectory,
};
use crate::potential::{normalize_angle, wrap_angle, LagrangeJacobiRadius, PotentialError, PotentialSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("ϑ* = {0} is not a nondegenerate global minimum of U")]
    NotMinimal(f64),
    #[error("equilibrium at ϑ* = {0} is not a saddle with real stable eigenvalues")]
    NotSaddle(f64),
    #[error("state lies outside the Hill region")]
    OutsideHillRegion,
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("query (r = {r}, theta = {theta}) lies outside the chart domain")]
    OutOfDomain { r: f64, theta: f64 },
    #[error("chart leaves query cell ({0}, {1}) of the 16x16 grid empty; raise the seed count or the seed radius")]
    InsufficientCoverage(usize, usize),
}

/// Checks hypothesis (U1) at `theta_star` and returns the cone half-width.
fn check_minimal(spec: &PotentialSpec, theta_star: f64) -> Result<f64, ManifoldError> {
    let c = spec.configuration_at(theta_star)?;
    if !(c.is_global_min && c.is_nondegenerate && c.second_derivative > 0.0) {
        return Err(ManifoldError::NotMinimal(theta_star));
    }
    Ok(spec.cone_half_width(theta_star))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MembershipOptions {
    /// Radius of the convergence ball (max norm, wrapped angles).
    pub eps_eq: f64,
    pub dwell: usize,
    /// τ-horizon per shot; `None` means `200/U(ϑ*)`.
    pub horizon: Option<f64>,
    /// Cone half-width; `None` means half the gap to the nearest other critical angle.
    pub delta_cone: Option<f64>,
    /// Largest accepted wrapped distance between `φ₀` and the manifold.
    pub phi_tol: f64,
    /// Bisection stops once the bracket on `φ` is this narrow.
    pub resolution: f64,
    /// Initial half-width of the bracket around `φ₀`.
    pub bracket: f64,
    pub ode_tol: f64,
}

impl Default for MembershipOptions {
    fn default() -> Self {
        Self {
            eps_eq: 1e-6,
            dwell: 5,
            horizon: None,
            delta_cone: None,
            phi_tol: 1e-3,
            resolution: 1e-11,
            bracket: 1e-3,
            ode_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MembershipVerdict {
    pub accepted: bool,
    /// Horizon reached without a decision while still approaching.
    pub inconclusive: bool,
    /// `τ` at which the orbit of the state itself entered the convergence ball.
    pub tau_converged: Option<f64>,
    /// Closest approach to the equilibrium of the best orbit found on the manifold.
    pub terminal_distance: f64,
    /// `τ` of that closest approach.
    pub tau_closest: f64,
    /// The manifold orbit stayed inside `{r ≤ r₀, |ϑ − ϑ*| < δ_cone}` up to
    /// its closest approach.
    pub cone_flag: bool,
    /// `Ψ(r₀, ϑ₀)` located by bisection.
    pub phi_manifold: Option<f64>,
    /// Wrapped `φ₀ − Ψ(r₀, ϑ₀)`.
    pub phi_offset: Option<f64>,
    pub shots: usize,
    /// Forward orbit of the state itself.
    pub trajectory: Trajectory,
}

/// Relative growth of `r` above `r₀` tolerated by the cone flag.
const CONE_RADIUS_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Minus,
    Plus,
    OnManifold,
}

struct Shot {
    side: Option<Side>,
    traj: Trajectory,
    min_dist: f64,
    tau_min: f64,
    /// Largest `|ϑ − ϑ*|` up to the closest approach.
    dev_to_min: f64,
    /// Largest `r` up to the closest approach.
    rmax_to_min: f64,
    tau_converged: Option<f64>,
    decreasing_tail: bool,
}

struct Shooter<'a> {
    spec: &'a PotentialSpec,
    h: f64,
    theta_star: f64,
    delta_cone: f64,
    horizon: f64,
    r_max: f64,
    opts: &'a MembershipOptions,
    tol: Tolerances,
}

impl Shooter<'_> {
    /// The orbit stayed in the truncated cone `{r ≤ r₀, |ϑ − ϑ*| < δ_cone}`
    /// up to its closest approach.
    fn confined(&self, shot: &Shot, r0: f64) -> bool {
        shot.dev_to_min < self.delta_cone && shot.rmax_to_min <= r0 * (1.0 + CONE_RADIUS_SLACK)
    }

    fn shoot(&self, r0: f64, theta0: f64, phi: f64) -> Shot {
        let ts = self.theta_star;
        let (eps, dwell) = (self.opts.eps_eq, self.opts.dwell.max(1));
        let mut inside = 0;
        let mut min_dist = f64::INFINITY;
        let mut tau_min = 0.0;
        let mut dev = 0.0f64;
        let mut dev_to_min = 0.0;
        let mut rmax = 0.0f64;
        let mut rmax_to_min = 0.0;
        let mut tau_conv = None;
        let mut dists: Vec<(f64, f64)> = Vec::new();
        let state = McGeheeState::new(r0, theta0, phi);
        let traj = integrate_with(
            self.spec,
            self.h,
            &state,
            self.horizon,
            Direction::Forward,
            &self.tol,
            |tau, y| {
                let d = ingoing_distance(y, ts);
                let dth = wrap_angle(y[1] - ts).abs();
                dev = dev.max(dth);
                rmax = rmax.max(y[0]);
                dists.push((tau, d));
                if d < min_dist {
                    min_dist = d;
                    tau_min = tau;
                    dev_to_min = dev;
                    rmax_to_min = rmax;
                }
                if d < eps {
                    inside += 1;
                    if inside >= dwell {
                        tau_conv = Some(tau);
                        return Some(Termination::ConvergedToEquilibrium);
                    }
                } else {
                    inside = 0;
                }
                if dth >= self.delta_cone {
                    return Some(Termination::ExitedAngularWindow);
                }
                if y[0] > self.r_max {
                    return Some(Termination::ExitedRadiusWindow);
                }
                None
            },
        );
        let last = traj.states[traj.len() - 1];
        let side = match traj.termination {
            Termination::ConvergedToEquilibrium => Some(Side::OnManifold),
            Termination::StepFailure => None,
            _ => {
                let s = wrap_angle(last[1] - ts);
                if s > 0.0 {
                    Some(Side::Plus)
                } else if s < 0.0 {
                    Some(Side::Minus)
                } else {
                    None
                }
            }
        };
        let tau_end = *traj.tau.last().unwrap();
        let tail: Vec<f64> = dists
            .iter()
            .filter(|(t, _)| *t >= 0.8 * tau_end)
            .map(|(_, d)| *d)
            .collect();
        let decreasing_tail = traj.termination == Termination::HorizonReached
            && tail.len() >= 2
            && tail.windows(2).all(|w| w[1] <= w[0]);
        Shot {
            side,
            traj,
            min_dist,
            tau_min,
            dev_to_min,
            rmax_to_min,
            tau_converged: tau_conv,
            decreasing_tail,
        }
    }
}

/// Decides whether `state` lies on the local stable manifold of `(0, ϑ*, ϑ*+π)`.
pub fn stable_membership(
    spec: &PotentialSpec,
    h: f64,
    state: &McGeheeState,
    theta_star: f64,
    opts: &MembershipOptions,
) -> Result<MembershipVerdict, ManifoldError> {
    let cone = check_minimal(spec, theta_star)?;
    let delta_cone = opts.delta_cone.unwrap_or(cone);
    if !(delta_cone > 0.0) {
        return Err(ManifoldError::InvalidParameter { name: "delta_cone", value: delta_cone });
    }
    if state.r < 0.0 {
        return Err(ManifoldError::InvalidParameter { name: "r", value: state.r });
    }
    if state.r > 0.0 && z_value(spec, h, state.r, state.theta).is_err() {
        return Err(ManifoldError::OutsideHillRegion);
    }
    let u_star = spec.u.eval(theta_star);
    let r_max = match spec.lagrange_jacobi_radius(h) {
        LagrangeJacobiRadius::Finite(r) => 4.0 * r.max(state.r),
        LagrangeJacobiRadius::Unbounded => 10.0 * state.r.max(1.0),
    };
    let shooter = Shooter {
        spec,
        h,
        theta_star,
        delta_cone,
        horizon: opts.horizon.unwrap_or(200.0 / u_star),
        r_max,
        opts,
        tol: Tolerances::uniform(opts.ode_tol),
    };
    let (r0, th0, phi0) = (state.r, state.theta, state.phi);
    let own = shooter.shoot(r0, th0, phi0);
    let mut shots = 1;
    if own.side == Some(Side::OnManifold) {
        return Ok(MembershipVerdict {
            accepted: shooter.confined(&own, r0),
            inconclusive: false,
            tau_converged: own.tau_converged,
            terminal_distance: own.min_dist,
            tau_closest: own.tau_min,
            cone_flag: shooter.confined(&own, r0),
            phi_manifold: Some(phi0),
            phi_offset: Some(0.0),
            shots,
            trajectory: own.traj,
        });
    }

    // bracket the sign change in φ
    let mut bracket: Option<((f64, Side), (f64, Side))> = None;
    let mut hit: Option<(f64, Shot)> = None;
    let mut w = opts.bracket;
    while w < FRAC_PI_2 && bracket.is_none() && hit.is_none() {
        let a = shooter.shoot(r0, th0, phi0 - w);
        let b = shooter.shoot(r0, th0, phi0 + w);
        shots += 2;
        match (a.side, b.side) {
            (Some(Side::OnManifold), _) => hit = Some((phi0 - w, a)),
            (_, Some(Side::OnManifold)) => hit = Some((phi0 + w, b)),
            (Some(sa), Some(sb)) if sa != sb => {
                // prefer the half bracket on the side of φ₀ that already changes sign
                bracket = match own.side {
                    Some(s) if s != sa => Some(((phi0 - w, sa), (phi0, s))),
                    Some(s) if s != sb => Some(((phi0, s), (phi0 + w, sb))),
                    _ => Some(((phi0 - w, sa), (phi0 + w, sb))),
                };
            }
            _ => w *= 4.0,
        }
    }
    if bracket.is_none() && hit.is_none() {
        // coarse scan of the whole circle; take the sign change nearest φ₀
        const SCAN: usize = 16;
        let pts: Vec<(f64, Option<Side>)> = (0..SCAN)
            .map(|k| {
                let p = phi0 + 2.0 * PI * k as f64 / SCAN as f64;
                (p, shooter.shoot(r0, th0, p).side)
            })
            .collect();
        shots += SCAN;
        let mut best: Option<(f64, ((f64, Side), (f64, Side)))> = None;
        for k in 0..SCAN {
            let (pa, sa) = pts[k];
            let (pb, sb) = pts[(k + 1) % SCAN];
            let pb = if k + 1 == SCAN { pb + 2.0 * PI } else { pb };
            if let (Some(sa), Some(sb)) = (sa, sb) {
                if sa != sb && sa != Side::OnManifold && sb != Side::OnManifold {
                    let gap = wrap_angle(0.5 * (pa + pb) - phi0).abs();
                    if best.as_ref().is_none_or(|b| gap < b.0) {
                        best = Some((gap, ((pa, sa), (pb, sb))));
                    }
                }
            }
        }
        bracket = best.map(|b| b.1);
    }

    let witness = match (hit, bracket) {
        (Some((p, s)), _) => Some((p, s)),
        (None, Some(((mut lo, slo), (mut hi, _)))) => {
            let mut lo_shot: Option<Shot> = None;
            let mut hi_shot: Option<Shot> = None;
            let mut found = None;
            while hi - lo > opts.resolution {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let s = shooter.shoot(r0, th0, mid);
                shots += 1;
                match s.side {
                    Some(Side::OnManifold) => {
                        found = Some((mid, s));
                        break;
                    }
                    Some(side) if side == slo => {
                        lo = mid;
                        lo_shot = Some(s);
                    }
                    Some(_) => {
                        hi = mid;
                        hi_shot = Some(s);
                    }
                    None => break,
                }
            }
            found.or_else(|| {
                let mid = 0.5 * (lo + hi);
                match (lo_shot, hi_shot) {
                    (Some(a), Some(b)) => Some((mid, if a.min_dist <= b.min_dist { a } else { b })),
                    (Some(a), None) | (None, Some(a)) => Some((mid, a)),
                    (None, None) => {
                        shots += 1;
                        Some((mid, shooter.shoot(r0, th0, mid)))
                    }
                }
            })
        }
        (None, None) => None,
    };

    Ok(match witness {
        Some((phi_w, w)) => {
            let offset = wrap_angle(phi0 - phi_w);
            let cone_flag = shooter.confined(&w, r0);
            MembershipVerdict {
                accepted: offset.abs() <= opts.phi_tol && cone_flag,
                inconclusive: false,
                tau_converged: None,
                terminal_distance: w.min_dist,
                tau_closest: w.tau_min,
                cone_flag,
                phi_manifold: Some(normalize_angle(phi_w)),
                phi_offset: Some(offset),
                shots,
                trajectory: own.traj,
            }
        }
        None => MembershipVerdict {
            accepted: false,
            inconclusive: own.decreasing_tail,
            tau_converged: None,
            terminal_distance: own.min_dist,
            tau_closest: own.tau_min,
            cone_flag: shooter.confined(&own, r0),
            phi_manifold: None,
            phi_offset: None,
            shots,
            trajectory: own.traj,
        },
    })
}

/// One interpolation node of the chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartSample {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub curve: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChartOptions {
    /// `None`: a quarter of `min(r_LJ, 1)`.
    pub r_loc: Option<f64>,
    /// `None`: half the cone half-width.
    pub delta_loc: Option<f64>,
    pub n_seeds: usize,
    pub eps_seed: f64,
    /// Normalized arc-length spacing of samples along each orbit.
    pub spacing: f64,
    pub ode_tol: f64,
    pub execution: Execution,
}

impl Default for ChartOptions {
    fn default() -> Self {
        Self {
            r_loc: None,
            delta_loc: None,
            n_seeds: 64,
            eps_seed: 1e-4,
            spacing: 0.01,
            ode_tol: 1e-12,
            execution: Execution::Parallel,
        }
    }
}

/// Interpolated chart value with its local fit residual and gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartValue {
    pub phi: f64,
    pub residual: f64,
    /// `(∂Ψ/∂r, ∂Ψ/∂ϑ)`.
    pub gradient: [f64; 2],
}

const NEIGHBOURS: usize = 12;
const PER_CURVE: usize = 4;
const BUCKETS_R: usize = 64;
const BUCKETS_T: usize = 128;
const COVERAGE: usize = 16;

/// Graph `φ = Ψ(r, ϑ)` of the local stable manifold over
/// `[0, r_loc) × (ϑ* − δ_loc, ϑ* + δ_loc)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StableChart {
    pub theta_star: f64,
    pub h: f64,
    pub r_loc: f64,
    pub delta_loc: f64,
    /// `φ` components of the stable eigenvector `(0, 1, c⁻)`.
    pub slope: f64,
    pub samples: Vec<ChartSample>,
    pub curves: usize,
    #[serde(skip)]
    buckets: Vec<Vec<u32>>,
}

impl StableChart {
    fn normalized(&self, r: f64, theta: f64) -> (f64, f64) {
        (r / self.r_loc, wrap_angle(theta - self.theta_star) / self.delta_loc)
    }

    fn bucket_of(x: f64, y: f64) -> (usize, usize) {
        let i = ((x * BUCKETS_R as f64) as isize).clamp(0, BUCKETS_R as isize - 1) as usize;
        let j = (((y + 1.0) * 0.5 * BUCKETS_T as f64) as isize).clamp(0, BUCKETS_T as isize - 1) as usize;
        (i, j)
    }

    fn index(&mut self) {
        let mut buckets = vec![Vec::new(); BUCKETS_R * BUCKETS_T];
        for (k, s) in self.samples.iter().enumerate() {
            let (x, y) = self.normalized(s.r, s.theta);
            let (i, j) = Self::bucket_of(x, y);
            buckets[i * BUCKETS_T + j].push(k as u32);
        }
        self.buckets = buckets;
    }

    pub fn contains(&self, r: f64, theta: f64) -> bool {
        let (x, y) = self.normalized(r, theta);
        (0.0..1.0).contains(&x) && y.abs() < 1.0
    }

    /// Nearest samples, at most `PER_CURVE` from any one orbit.
    fn neighbours(&self, x: f64, y: f64) -> Vec<(f64, usize)> {
        if self.buckets.is_empty() {
            return Vec::new();
        }
        let (bi, bj) = Self::bucket_of(x, y);
        let cell = (1.0 / BUCKETS_R as f64).min(2.0 / BUCKETS_T as f64);
        let mut ring = 1usize;
        loop {
            let mut cand: Vec<(f64, usize)> = Vec::new();
            let (i0, i1) = (bi.saturating_sub(ring), (bi + ring).min(BUCKETS_R - 1));
            let (j0, j1) = (bj.saturating_sub(ring), (bj + ring).min(BUCKETS_T - 1));
            for i in i0..=i1 {
                for j in j0..=j1 {
                    for &k in &self.buckets[i * BUCKETS_T + j] {
                        let s = &self.samples[k as usize];
                        let (sx, sy) = self.normalized(s.r, s.theta);
                        cand.push(((sx - x).hypot(sy - y), k as usize));
                    }
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut per_curve = std::collections::HashMap::new();
            let mut out = Vec::with_capacity(NEIGHBOURS);
            for (d, k) in cand {
                let c = per_curve.entry(self.samples[k].curve).or_insert(0usize);
                if *c < PER_CURVE {
                    *c += 1;
                    out.push((d, k));
                    if out.len() == NEIGHBOURS {
                        break;
                    }
                }
            }
            let whole = i0 == 0 && j0 == 0 && i1 == BUCKETS_R - 1 && j1 == BUCKETS_T - 1;
            if (out.len() == NEIGHBOURS && out[NEIGHBOURS - 1].0 <= ring as f64 * cell) || whole {
                return out;
            }
            ring *= 2;
        }
    }

    /// Moving least-squares value of `Ψ` at a normalized point.
    fn fit(&self, x: f64, y: f64) -> Option<ChartValue> {
        let nb = self.neighbours(x, y);
        if nb.len() < 6 {
            return None;
        }
        let scale = nb.last().unwrap().0.max(1e-300);
        let base = self.theta_star + PI;
        let n = nb.len();
        let mut a = DMatrix::<f64>::zeros(n, 6);
        let mut b = DVector::<f64>::zeros(n);
        let mut weights = Vec::with_capacity(n);
        for (row, &(d, k)) in nb.iter().enumerate() {
            let s = &self.samples[k];
            let (sx, sy) = self.normalized(s.r, s.theta);
            let (dx, dy) = ((sx - x) / scale, (sy - y) / scale);
            let q = d / scale;
            let w = 1.0 / (q * q + 1e-6);
            weights.push(w);
            let sw = w.sqrt();
            let basis = [1.0, dx, dy, dx * dx, dx * dy, dy * dy];
            for (c, v) in basis.iter().enumerate() {
                a[(row, c)] = sw * v;
            }
            b[row] = sw * wrap_angle(s.phi - base);
        }
        let svd = a.clone().svd(true, true);
        let coef = svd.solve(&b, 1e-12).ok()?;
        // leave-one-curve-out prediction errors: samples along one orbit are
        // close together, so only cross-orbit prediction reflects the gaps
        let curves: Vec<usize> = nb.iter().map(|&(_, k)| self.samples[k].curve).collect();
        let mut distinct = curves.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mut ssr = 0.0;
        let mut wsum = 0.0;
        for &c in &distinct {
            let keep: Vec<usize> = (0..n).filter(|&i| curves[i] != c).collect();
            if keep.len() < 6 {
                continue;
            }
            let sub = a.select_rows(&keep);
            let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&i| b[i]));
            let Ok(cf) = sub.svd(true, true).solve(&rhs, 1e-12) else { continue };
            for i in (0..n).filter(|&i| curves[i] == c) {
                let e = (a.row(i) * &cf)[0] - b[i];
                ssr += e * e;
                wsum += weights[i];
            }
        }
        let dof = if wsum > 0.0 { wsum } else { 1.0 };
        Some(ChartValue {
            phi: normalize_angle(base + coef[0]),
            residual: (ssr / dof).sqrt(),
            gradient: [
                coef[1] / (scale * self.r_loc),
                coef[2] / (scale * self.delta_loc),
            ],
        })
    }

    /// `Ψ(r, ϑ)` with its local fit residual.
    pub fn query(&self, r: f64, theta: f64) -> Result<ChartValue, ManifoldError> {
        if !self.contains(r, theta) {
            return Err(ManifoldError::OutOfDomain { r, theta });
        }
        let (x, y) = self.normalized(r, theta);
        self.fit(x, y).ok_or(ManifoldError::OutOfDomain { r, theta })
    }

    /// CSV `r,theta,phi,residual` over all samples.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,theta,phi,residual\n");
        for s in &self.samples {
            let (x, y) = self.normalized(s.r, s.theta);
            let res = self.fit(x, y).map(|v| v.residual).unwrap_or(f64::NAN);
            out.push_str(&format!("{:.17e},{:.17e},{:.17e},{:.6e}\n", s.r, s.theta, s.phi, res));
        }
        out
    }

    fn check_coverage(&self) -> Result<(), ManifoldError> {
        let mut hit = vec![false; COVERAGE * COVERAGE];
        for s in &self.samples {
            let (x, y) = self.normalized(s.r, s.theta);
            let i = ((x * COVERAGE as f64) as usize).min(COVERAGE - 1);
            let j = (((y + 1.0) * 0.5 * COVERAGE as f64) as usize).min(COVERAGE - 1);
            hit[i * COVERAGE + j] = true;
        }
        match hit.iter().position(|h| !h) {
            Some(k) => Err(ManifoldError::InsufficientCoverage(k / COVERAGE, k % COVERAGE)),
            None => Ok(()),
        }
    }
}

/// `Ψ(r, ϑ)` of a built chart.
pub fn chart_query(chart: &StableChart, r: f64, theta: f64) -> Result<ChartValue, ManifoldError> {
    chart.query(r, theta)
}

/// One backward orbit from the stable eigenplane.
struct Curve {
    samples: Vec<[f64; 3]>,
    /// Exit position along the box boundary: `|δϑ|/δ_loc` on the far side
    /// `r = r_loc`, `2 − r/r_loc` on the top `|δϑ| = δ_loc`.
    exit: f64,
}

struct Seeder<'a> {
    spec: &'a PotentialSpec,
    h: f64,
    theta_star: f64,
    r_loc: f64,
    delta_loc: f64,
    eps: f64,
    spacing: f64,
    cap: f64,
    v_minus: [f64; 3],
    tol: Tolerances,
}

impl Seeder<'_> {
    /// Seed at `cos ψ = c`, `sin ψ = ±√(1 − c²)`.
    fn curve(&self, cos_psi: f64, sign: f64) -> Curve {
        let sin_psi = sign * (1.0 - cos_psi * cos_psi).max(0.0).sqrt();
        let ts = self.theta_star;
        let y0 = [
            self.eps * cos_psi,
            ts + self.eps * sin_psi * self.v_minus[1],
            ts + PI + self.eps * sin_psi * self.v_minus[2],
        ];
        let (r_loc, d_loc) = (self.r_loc, self.delta_loc);
        let traj = integrate_with(
            self.spec,
            self.h,
            &McGeheeState { r: y0[0], theta: y0[1], phi: y0[2] },
            self.cap,
            Direction::Backward,
            &self.tol,
            |_, y| {
                if y[0] >= r_loc {
                    Some(Termination::ExitedRadiusWindow)
                } else if (y[1] - ts).abs() >= d_loc {
                    Some(Termination::ExitedAngularWindow)
                } else {
                    None
                }
            },
        );
        let norm = |s: &[f64; 3]| (s[0] / r_loc, (s[1] - ts) / d_loc);
        let mut samples = Vec::new();
        let mut push = |s: [f64; 3]| {
            if s[0] >= 0.0 && s[0] < r_loc && (s[1] - ts).abs() < d_loc {
                samples.push(s);
            }
        };
        push(traj.states[0]);
        for i in 1..traj.len() {
            let (a, b) = (norm(&traj.states[i - 1]), norm(&traj.states[i]));
            let d = (b.0 - a.0).hypot(b.1 - a.1);
            let k = (d / self.spacing).ceil() as usize;
            for m in 1..k {
                let t = traj.tau[i - 1] + (traj.tau[i] - traj.tau[i - 1]) * m as f64 / k as f64;
                push(traj.dense(t));
            }
            push(traj.states[i]);
        }
        let last = traj.states[traj.len() - 1];
        let exit = match traj.termination {
            Termination::ExitedAngularWindow => 2.0 - (last[0] / r_loc).min(1.0),
            _ => ((last[1] - ts).abs() / d_loc).min(1.0),
        };
        Curve { samples, exit }
    }
}

/// Builds the chart by backward shooting from `p* + ε(cos ψ v̂_r + sin ψ v̂⁻)`.
///
/// Backward orbits separate from the `r`-axis only when `cos ψ` is tiny, so
/// seeds are spread as `cos ψ = 10^(−14x)` for `x` uniform in `[0, 1]`, plus
/// the exact curves `ψ = 0` (the homothetic ray) and `ψ = ±π/2` (inside the
/// collision manifold). Further seeds are bisected in `x` until neighbouring
/// orbits leave the box at nearby points.
pub fn build_chart(
    spec: &PotentialSpec,
    h: f64,
    theta_star: f64,
    opts: &ChartOptions,
) -> Result<StableChart, ManifoldError> {
    let cone = check_minimal(spec, theta_star)?;
    let eig = eigen_3d(spec, h, theta_star)?;
    let v_minus = match eig.v_minus {
        Some(v) if eig.lambda_minus.re < 0.0 && eig.lambda_minus.im == 0.0 && eig.lambda_r < 0.0 => unit(v),
        _ => return Err(ManifoldError::NotSaddle(theta_star)),
    };
    let r_loc = match opts.r_loc {
        Some(r) => r,
        None => match spec.lagrange_jacobi_radius(h) {
            LagrangeJacobiRadius::Finite(r) => 0.25 * r.min(1.0),
            LagrangeJacobiRadius::Unbounded => 0.25,
        },
    };
    let delta_loc = opts.delta_loc.unwrap_or(0.5 * cone);
    for (name, value) in [("r_loc", r_loc), ("delta_loc", delta_loc), ("eps_seed", opts.eps_seed)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ManifoldError::InvalidParameter { name, value });
        }
    }
    if delta_loc > cone {
        return Err(ManifoldError::InvalidParameter { name: "delta_loc", value: delta_loc });
    }
    if let LagrangeJacobiRadius::Finite(r) = spec.lagrange_jacobi_radius(h) {
        if r_loc >= r {
            return Err(ManifoldError::InvalidParameter { name: "r_loc", value: r_loc });
        }
    }
    let seeder = Seeder {
        spec,
        h,
        theta_star,
        r_loc,
        delta_loc,
        eps: opts.eps_seed,
        spacing: opts.spacing,
        cap: 30.0 / eig.lambda_minus.re.abs(),
        v_minus,
        tol: Tolerances::uniform(opts.ode_tol),
    };
    let per_side = (opts.n_seeds / 2).max(2);
    let cos_of = |x: f64| if x >= 2.0 { 0.0 } else { 10f64.powf(-14.0 * x) };
    let max_gap = 2.0 / per_side as f64;

    let mut all: Vec<Curve> = Vec::new();
    for sign in [1.0, -1.0] {
        // x = 2 encodes ψ = π/2 exactly
        let mut xs: Vec<f64> = (0..per_side).map(|j| j as f64 / (per_side - 1) as f64).collect();
        xs.push(2.0);
        let mut curves: Vec<(f64, Curve)> = opts
            .execution
            .map(&xs, |&x| seeder.curve(cos_of(x), sign))
            .into_iter()
            .zip(&xs)
            .map(|(c, &x)| (x, c))
            .collect();
        for _ in 0..40 {
            let mut fresh = Vec::new();
            for w in curves.windows(2) {
                let (xa, xb) = (w[0].0, w[1].0);
                if (w[1].1.exit - w[0].1.exit).abs() > max_gap && xb - xa > 1e-9 {
                    fresh.push(0.5 * (xa + xb));
                }
            }
            if fresh.is_empty() {
                break;
            }
            let made = opts.execution.map(&fresh, |&x| seeder.curve(cos_of(x), sign));
            curves.extend(fresh.into_iter().zip(made));
            curves.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        all.extend(curves.into_iter().map(|(_, c)| c));
    }

    let mut chart = StableChart {
        theta_star,
        h,
        r_loc,
        delta_loc,
        slope: v_minus[2] / v_minus[1],
        samples: Vec::new(),
        curves: all.len(),
        buckets: vec![Vec::new(); BUCKETS_R * BUCKETS_T],
    };
    // samples closer than half the spacing to an earlier one add nothing but
    // degenerate neighbourhoods; orbits all start bunched at the equilibrium
    let min_gap = 0.5 * opts.spacing;
    chart.insert_thinned(ChartSample { r: 0.0, theta: theta_star, phi: normalize_angle(theta_star + PI), curve: 0 }, min_gap);
    for (k, c) in all.iter().enumerate() {
        for s in &c.samples {
            let sample = ChartSample {
                r: s[0],
                theta: normalize_angle(s[1]),
                phi: normalize_angle(s[2]),
                curve: k + 1,
            };
            chart.insert_thinned(sample, min_gap);
        }
    }
    chart.check_coverage()?;
    Ok(chart)
}

impl StableChart {
    fn insert_thinned(&mut self, s: ChartSample, min_gap: f64) {
        let (x, y) = self.normalized(s.r, s.theta);
        let (bi, bj) = Self::bucket_of(x, y);
        for i in bi.saturating_sub(1)..=(bi + 1).min(BUCKETS_R - 1) {
            for j in bj.saturating_sub(1)..=(bj + 1).min(BUCKETS_T - 1) {
                for &k in &self.buckets[i * BUCKETS_T + j] {
                    let o = &self.samples[k as usize];
                    let (ox, oy) = self.normalized(o.r, o.theta);
                    if (ox - x).hypot(oy - y) < min_gap {
                        return;
                    }
                }
            }
        }
        self.buckets[bi * BUCKETS_T + bj].push(self.samples.len() as u32);
        self.samples.push(s);
    }

    /// Rebuilds the neighbour index after deserialization.
    pub fn reindex(&mut self) {
        self.index();
    }
}
