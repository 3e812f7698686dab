//! McGehee coordinates `(r, ϑ, φ)` for the planar problem, the regularized
//! vector fields, and trajectory integration on the McGehee time scale.

pub mod general;
pub mod integrator;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::{normalize_angle, polar, wrap_angle, PotentialError, PotentialSpec};
pub use integrator::{Direction, Termination, Tolerances};
use integrator::{OdeSystem, Solution};

/// Energy-shell tolerance for Cartesian states handed to [`to_mcgehee`].
pub const SHELL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McGeheeError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("state is off the energy shell (residual {0:.3e})")]
    OffShell(f64),
    #[error("momentum vanishes: the momentum angle is undefined")]
    ZeroMomentum,
    #[error("no Cartesian momentum exists at r = 0")]
    AtCollision,
    #[error("state lies outside the Hill region (2U + 2hr^alpha = {0:.3e})")]
    OutsideHillRegion(f64),
    #[error("radius must be non-negative, got {0}")]
    NegativeRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianState {
    pub q: [f64; 2],
    pub p: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McGeheeState {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl McGeheeState {
    pub fn new(r: f64, theta: f64, phi: f64) -> Self {
        Self {
            r,
            theta: normalize_angle(theta),
            phi: normalize_angle(phi),
        }
    }

    /// The ingoing collision equilibrium `(0, ϑ̂, ϑ̂ + π)`.
    pub fn ingoing_equilibrium(theta_hat: f64) -> Self {
        Self::new(0.0, theta_hat, theta_hat + PI)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r, self.theta, self.phi]
    }

    /// Max-norm distance to `(0, ϑ*, ϑ* + π)` with wrapped angle differences.
    pub fn distance_to_ingoing(&self, theta_star: f64) -> f64 {
        ingoing_distance(&[self.r, self.theta, self.phi], theta_star)
    }
}

pub(crate) fn ingoing_distance(y: &[f64], theta_star: f64) -> f64 {
    y[0].abs()
        .max(wrap_angle(y[1] - theta_star).abs())
        .max(wrap_angle(y[2] - theta_star - PI).abs())
}

/// `sin Δ, cos Δ` for `Δ = φ − ϑ`, evaluated through the offset from the
/// antipodal direction so that `sin Δ` vanishes exactly on ingoing rays.
#[inline]
pub fn delta_sin_cos(theta: f64, phi: f64) -> (f64, f64) {
    let (s, c) = wrap_angle(phi - theta - PI).sin_cos();
    (-s, -c)
}

/// Regularized speed `z = √(2U + 2r^α W + 2h r^α)`.
pub fn z_value(spec: &PotentialSpec, h: f64, r: f64, theta: f64) -> Result<f64, McGeheeError> {
    let rad = 2.0 * shell_potential(spec, h, r, theta);
    if rad < 0.0 {
        return Err(McGeheeError::OutsideHillRegion(rad));
    }
    Ok(rad.sqrt())
}

/// `U(ϑ) + r^α W(r, ϑ) + h r^α`.
pub fn shell_potential(spec: &PotentialSpec, h: f64, r: f64, theta: f64) -> f64 {
    let ra = if r == 0.0 { 0.0 } else { r.powf(spec.alpha) };
    let mut v = spec.u.eval(theta) + h * ra;
    if let Some(w) = &spec.w {
        v += w.regularized(spec.alpha, r, theta).0;
    }
    v
}

/// `½|p|² − V(q) − h`.
pub fn energy_residual(spec: &PotentialSpec, h: f64, cart: &CartesianState) -> Result<f64, McGeheeError> {
    let v = spec.eval_v(cart.q)?;
    Ok(0.5 * (cart.p[0] * cart.p[0] + cart.p[1] * cart.p[1]) - v - h)
}

pub fn to_mcgehee(spec: &PotentialSpec, h: f64, cart: &CartesianState) -> Result<McGeheeState, McGeheeError> {
    let (r, theta) = polar(cart.q)?;
    if cart.p[0] == 0.0 && cart.p[1] == 0.0 {
        return Err(McGeheeError::ZeroMomentum);
    }
    let res = energy_residual(spec, h, cart)?;
    let scale = 1.0 + spec.eval_v(cart.q)?.abs() + h.abs();
    if res.abs() > SHELL_TOLERANCE * scale {
        return Err(McGeheeError::OffShell(res));
    }
    Ok(McGeheeState::new(r, theta, cart.p[1].atan2(cart.p[0])))
}

pub fn from_mcgehee(spec: &PotentialSpec, h: f64, state: &McGeheeState) -> Result<CartesianState, McGeheeError> {
    if state.r < 0.0 {
        return Err(McGeheeError::NegativeRadius(state.r));
    }
    if state.r == 0.0 {
        return Err(McGeheeError::AtCollision);
    }
    let z = z_value(spec, h, state.r, state.theta)?;
    let speed = state.r.powf(-0.5 * spec.alpha) * z;
    let (st, ct) = state.theta.sin_cos();
    let (sp, cp) = state.phi.sin_cos();
    Ok(CartesianState {
        q: [state.r * ct, state.r * st],
        p: [speed * cp, speed * sp],
    })
}

/// Right-hand side of the planar McGehee system (perturbation included when present).
pub fn field_3d(spec: &PotentialSpec, h: f64, state: &McGeheeState) -> [f64; 3] {
    field_raw(spec, h, state.r, state.theta, state.phi)
}

pub(crate) fn field_raw(spec: &PotentialSpec, h: f64, r: f64, theta: f64, phi: f64) -> [f64; 3] {
    let (sd, cd) = delta_sin_cos(theta, phi);
    let (u, du, _) = spec.u.derivs(theta);
    let ra = if r == 0.0 { 0.0 } else { r.powf(spec.alpha) };
    let mut core = u + h * ra;
    let mut tangential = du;
    let mut radial = spec.alpha * u;
    if let Some(w) = &spec.w {
        let (rw, rw_theta, rw_r) = w.regularized(spec.alpha, r, theta);
        core += rw;
        tangential += rw_theta;
        radial -= rw_r;
    }
    [
        2.0 * r * core * cd,
        2.0 * core * sd,
        tangential * cd + radial * sd,
    ]
}

/// Restriction of [`field_3d`] to the collision manifold `{r = 0}`.
pub fn field_collision(spec: &PotentialSpec, theta: f64, phi: f64) -> [f64; 2] {
    let (sd, cd) = delta_sin_cos(theta, phi);
    let (u, du, _) = spec.u.derivs(theta);
    [2.0 * u * sd, du * cd + spec.alpha * u * sd]
}

/// Sundman-type function `√U(ϑ) cos(φ − ϑ)`.
pub fn sundman_v(spec: &PotentialSpec, theta: f64, phi: f64) -> f64 {
    spec.u.eval(theta).sqrt() * delta_sin_cos(theta, phi).1
}

/// `dt/dτ = z r^{1+α/2}`.
pub fn time_rate(spec: &PotentialSpec, h: f64, r: f64, theta: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let z = z_value(spec, h, r, theta).unwrap_or(0.0);
    z * r.powf(1.0 + 0.5 * spec.alpha)
}

pub(crate) struct PlanarSystem<'a> {
    pub spec: &'a PotentialSpec,
    pub h: f64,
}

impl OdeSystem for PlanarSystem<'_> {
    fn dim(&self) -> usize {
        3
    }
    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let f = field_raw(self.spec, self.h, y[0].max(0.0), y[1], y[2]);
        dy.copy_from_slice(&f);
    }
}

pub(crate) struct CollisionSystem<'a> {
    pub spec: &'a PotentialSpec,
}

impl OdeSystem for CollisionSystem<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        dy.copy_from_slice(&field_collision(self.spec, y[0], y[1]));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// Max-norm distance to `(0, ϑ*, ϑ*+π)` below `eps` for `dwell`
    /// consecutive accepted steps.
    EquilibriumConvergence { theta_star: f64, eps: f64, dwell: usize },
    RadiusExceeds { r_max: f64 },
    AngularWindow { center: f64, half_width: f64 },
    /// `r` dropped below `r_min` without converging.
    CollisionTrapping { r_min: f64 },
}

impl Event {
    pub fn convergence(theta_star: f64) -> Self {
        Self::EquilibriumConvergence {
            theta_star,
            eps: 1e-6,
            dwell: 5,
        }
    }
}

/// Integrated planar orbit. Angles are kept unwrapped in `states`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tau: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub derivs: Vec<[f64; 3]>,
    pub t: Option<Vec<f64>>,
    pub termination: Termination,
}

impl Trajectory {
    fn from_solution(sol: Solution) -> Self {
        let to3 = |v: &Vec<f64>| [v[0], v[1], v[2]];
        Self {
            states: sol.y.iter().map(to3).collect(),
            derivs: sol.dy.iter().map(to3).collect(),
            tau: sol.tau,
            t: None,
            termination: sol.termination,
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn state(&self, i: usize) -> McGeheeState {
        let s = self.states[i];
        McGeheeState::new(s[0], s[1], s[2])
    }

    pub fn last_state(&self) -> McGeheeState {
        self.state(self.len() - 1)
    }

    /// Hermite interpolation of the unwrapped state at `tau`.
    pub fn dense(&self, tau: f64) -> [f64; 3] {
        let n = self.tau.len();
        if n == 1 {
            return self.states[0];
        }
        let increasing = self.tau[n - 1] > self.tau[0];
        let key = |t: f64| if increasing { t } else { -t };
        let j = self.tau.partition_point(|&t| key(t) <= key(tau)).clamp(1, n - 1);
        let v = integrator::hermite(
            self.tau[j - 1],
            &self.states[j - 1],
            &self.derivs[j - 1],
            self.tau[j],
            &self.states[j],
            &self.derivs[j],
            tau,
        );
        [v[0], v[1], v[2]]
    }

    /// Scaled residual `r^α(½|p|² − V − h)` of every sample lifted to
    /// Cartesian variables; samples at `r = 0` report 0.
    pub fn energy_residuals(&self, spec: &PotentialSpec, h: f64) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| {
                let st = McGeheeState::new(s[0], s[1], s[2]);
                if st.r <= 0.0 {
                    return 0.0;
                }
                match from_mcgehee(spec, h, &st) {
                    Ok(c) => {
                        let res = energy_residual(spec, h, &c).unwrap_or(f64::NAN);
                        res * st.r.powf(spec.alpha)
                    }
                    Err(_) => f64::NAN,
                }
            })
            .collect()
    }

    /// CSV with columns `tau,r,theta,phi,t,energy_residual`.
    pub fn to_csv(&self, spec: &PotentialSpec, h: f64) -> String {
        let res = self.energy_residuals(spec, h);
        let mut out = String::from("tau,r,theta,phi,t,energy_residual\n");
        for i in 0..self.len() {
            let s = self.state(i);
            let t = self.t.as_ref().map(|t| t[i]).unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.6e}\n",
                self.tau[i], s.r, s.theta, s.phi, t, res[i]
            ));
        }
        out
    }
}

/// Monitor state shared by the planar event list.
pub(crate) struct EventMonitor<'a> {
    events: &'a [Event],
    inside: usize,
}

impl<'a> EventMonitor<'a> {
    pub fn new(events: &'a [Event]) -> Self {
        Self { events, inside: 0 }
    }

    pub fn check(&mut self, y: &[f64]) -> Option<Termination> {
        for ev in self.events {
            match *ev {
                Event::EquilibriumConvergence { theta_star, eps, dwell } => {
                    if ingoing_distance(y, theta_star) < eps {
                        self.inside += 1;
                        if self.inside >= dwell.max(1) {
                            return Some(Termination::ConvergedToEquilibrium);
                        }
                    } else {
                        self.inside = 0;
                    }
                }
                Event::RadiusExceeds { r_max } => {
                    if y[0] > r_max {
                        return Some(Termination::ExitedRadiusWindow);
                    }
                }
                Event::AngularWindow { center, half_width } => {
                    if wrap_angle(y[1] - center).abs() >= half_width {
                        return Some(Termination::ExitedAngularWindow);
                    }
                }
                Event::CollisionTrapping { r_min } => {
                    if y[0] < r_min {
                        return Some(Termination::CollisionTrapped);
                    }
                }
            }
        }
        None
    }
}

/// Integrates the planar McGehee system.
pub fn integrate(
    spec: &PotentialSpec,
    h: f64,
    state: &McGeheeState,
    horizon: f64,
    direction: Direction,
    events: &[Event],
    tol: &Tolerances,
) -> Trajectory {
    let mut mon = EventMonitor::new(events);
    integrate_with(spec, h, state, horizon, direction, tol, |_, y| mon.check(y))
}

/// Planar integration with a custom monitor.
pub fn integrate_with<M>(
    spec: &PotentialSpec,
    h: f64,
    state: &McGeheeState,
    horizon: f64,
    direction: Direction,
    tol: &Tolerances,
    monitor: M,
) -> Trajectory
where
    M: FnMut(f64, &[f64]) -> Option<Termination>,
{
    let sys = PlanarSystem { spec, h };
    let y0 = state.as_array();
    Trajectory::from_solution(integrator::solve(&sys, &y0, 0.0, horizon, direction, tol, monitor))
}

/// Integrates the collision-manifold system in `(ϑ, φ)`; returned states have `r = 0`.
pub fn integrate_collision(
    spec: &PotentialSpec,
    theta: f64,
    phi: f64,
    horizon: f64,
    tol: &Tolerances,
) -> Trajectory {
    let sys = CollisionSystem { spec };
    let sol = integrator::solve(&sys, &[theta, phi], 0.0, horizon, Direction::Forward, tol, |_, _| None);
    Trajectory {
        states: sol.y.iter().map(|v| [0.0, v[0], v[1]]).collect(),
        derivs: sol.dy.iter().map(|v| [0.0, v[0], v[1]]).collect(),
        tau: sol.tau,
        t: None,
        termination: sol.termination,
    }
}

/// Physical time along a trajectory, starting from `t0`: `dt/dτ` is
/// integrated step by step with Simpson's rule, the midpoint taken from the
/// dense output.
pub fn physical_time(spec: &PotentialSpec, h: f64, traj: &Trajectory, t0: f64) -> Vec<f64> {
    let rate = |s: &[f64; 3]| time_rate(spec, h, s[0].max(0.0), s[1]);
    let mut t = Vec::with_capacity(traj.len());
    let mut acc = t0;
    t.push(acc);
    for i in 1..traj.len() {
        let (a, b) = (traj.tau[i - 1], traj.tau[i]);
        let mid = traj.dense(0.5 * (a + b));
        acc += (b - a) / 6.0 * (rate(&traj.states[i - 1]) + 4.0 * rate(&mid) + rate(&traj.states[i]));
        t.push(acc);
    }
    t
}
