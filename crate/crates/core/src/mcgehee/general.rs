//! McGehee system in arbitrary dimension `d`: `(r, v, s, u)` with `s` on
//! the unit sphere and `u` tangent to it.

use serde::{Deserialize, Serialize};

use super::integrator::{self, Direction, OdeSystem, Solution, Termination, Tolerances};
use crate::potential::AngularPotential;

/// Angular part of a homogeneous potential restricted to `S^{d−1}`.
pub trait SpherePotential: Sync {
    fn dim(&self) -> usize;
    fn value(&self, s: &[f64]) -> f64;
    /// Gradient tangent to the sphere at `s`.
    fn tangent_gradient(&self, s: &[f64], out: &mut [f64]);
}

/// Planar angular potential viewed on `S¹ ⊂ R²`.
pub struct CircleAdapter<'a>(pub &'a AngularPotential);

impl SpherePotential for CircleAdapter<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, s: &[f64]) -> f64 {
        self.0.eval(s[1].atan2(s[0]))
    }
    fn tangent_gradient(&self, s: &[f64], out: &mut [f64]) {
        let du = self.0.d1(s[1].atan2(s[0]));
        let n = s[0].hypot(s[1]);
        out[0] = -du * s[1] / n;
        out[1] = du * s[0] / n;
    }
}

/// `U(s) = c0 + sᵀ A s` for a symmetric matrix `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSphere {
    pub c0: f64,
    pub a: Vec<Vec<f64>>,
}

impl QuadraticSphere {
    pub fn diagonal(c0: f64, diag: &[f64]) -> Self {
        let d = diag.len();
        let a = (0..d)
            .map(|i| (0..d).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self { c0, a }
    }

    fn apply(&self, s: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(s).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl SpherePotential for QuadraticSphere {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn value(&self, s: &[f64]) -> f64 {
        let as_ = self.apply(s);
        self.c0 + s.iter().zip(&as_).map(|(a, b)| a * b).sum::<f64>()
    }
    fn tangent_gradient(&self, s: &[f64], out: &mut [f64]) {
        let as_ = self.apply(s);
        let q: f64 = s.iter().zip(&as_).map(|(a, b)| a * b).sum();
        let n2: f64 = s.iter().map(|x| x * x).sum();
        for i in 0..s.len() {
            out[i] = 2.0 * as_[i] - 2.0 * q / n2 * s[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `v < 0`: moving toward collision.
    Ingoing,
    /// `v > 0`: moving away from collision.
    Outgoing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralState {
    pub r: f64,
    pub v: f64,
    pub s: Vec<f64>,
    pub u: Vec<f64>,
}

impl GeneralState {
    /// State on the energy shell `½(|u|² + v²) − V(s) = r^α h`, with the sign
    /// of `v` set by `branch`. Returns `None` outside the Hill region.
    pub fn on_shell(
        pot: &dyn SpherePotential,
        alpha: f64,
        h: f64,
        r: f64,
        s: Vec<f64>,
        u: Vec<f64>,
        branch: Branch,
    ) -> Option<Self> {
        let ra = if r == 0.0 { 0.0 } else { r.powf(alpha) };
        let u2: f64 = u.iter().map(|x| x * x).sum();
        let v2 = 2.0 * (pot.value(&s) + ra * h) - u2;
        if v2 < 0.0 {
            return None;
        }
        let v = match branch {
            Branch::Ingoing => -v2.sqrt(),
            Branch::Outgoing => v2.sqrt(),
        };
        Some(Self { r, v, s, u })
    }

    /// Collision equilibrium `(0, ∓√(2V(s*)), s*, 0)`.
    pub fn equilibrium(pot: &dyn SpherePotential, s_star: Vec<f64>, branch: Branch) -> Self {
        let d = s_star.len();
        Self::on_shell(pot, 1.0, 0.0, 0.0, s_star, vec![0.0; d], branch).expect("V > 0 on the sphere")
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 + 2 * self.dim());
        y.push(self.r);
        y.push(self.v);
        y.extend_from_slice(&self.s);
        y.extend_from_slice(&self.u);
        y
    }

    fn unpack(y: &[f64]) -> Self {
        let d = (y.len() - 2) / 2;
        Self {
            r: y[0],
            v: y[1],
            s: y[2..2 + d].to_vec(),
            u: y[2 + d..].to_vec(),
        }
    }

    /// `½(|u|² + v²) − V(s) − r^α h`.
    pub fn shell_residual(&self, pot: &dyn SpherePotential, alpha: f64, h: f64) -> f64 {
        let u2: f64 = self.u.iter().map(|x| x * x).sum();
        let ra = if self.r == 0.0 { 0.0 } else { self.r.powf(alpha) };
        0.5 * (u2 + self.v * self.v) - pot.value(&self.s) - ra * h
    }
}

/// General-dimension field. `damping` is the coefficient of `v u` in `u′`;
/// the energy-conserving value is `(2 − α)/2`.
pub struct GeneralField<'a> {
    pub alpha: f64,
    pub potential: &'a dyn SpherePotential,
    pub damping: f64,
}

impl<'a> GeneralField<'a> {
    pub fn new(alpha: f64, potential: &'a dyn SpherePotential) -> Self {
        Self {
            alpha,
            potential,
            damping: 0.5 * (2.0 - alpha),
        }
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    /// `(r′, v′, s′, u′)`.
    pub fn eval(&self, state: &GeneralState) -> GeneralState {
        let y = state.pack();
        let mut dy = vec![0.0; y.len()];
        self.rhs(&y, &mut dy);
        GeneralState::unpack(&dy)
    }
}

impl OdeSystem for GeneralField<'_> {
    fn dim(&self) -> usize {
        2 + 2 * self.potential.dim()
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let d = self.potential.dim();
        let (r, v) = (y[0], y[1]);
        let s = &y[2..2 + d];
        let u = &y[2 + d..];
        let u2: f64 = u.iter().map(|x| x * x).sum();
        let mut grad = vec![0.0; d];
        self.potential.tangent_gradient(s, &mut grad);
        dy[0] = r * v;
        dy[1] = 0.5 * self.alpha * v * v + u2 - self.alpha * self.potential.value(s);
        for i in 0..d {
            dy[2 + i] = u[i];
            dy[2 + d + i] = -self.damping * v * u[i] - u2 * s[i] + grad[i];
        }
    }

    fn project(&self, y: &mut [f64]) -> bool {
        let d = self.potential.dim();
        let n = y[2..2 + d].iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut y[2..2 + d] {
            *x /= n;
        }
        let (head, u) = y.split_at_mut(2 + d);
        let s = &head[2..];
        let dot: f64 = s.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        for i in 0..d {
            u[i] -= dot * s[i];
        }
        true
    }
}

/// Collision-manifold restriction of [`GeneralField`] (`r = 0`).
pub fn field_collision_general(field: &GeneralField<'_>, v: f64, s: &[f64], u: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let st = GeneralState {
        r: 0.0,
        v,
        s: s.to_vec(),
        u: u.to_vec(),
    };
    let d = field.eval(&st);
    (d.v, d.s, d.u)
}

#[derive(Debug, Clone)]
pub struct GeneralTrajectory {
    pub tau: Vec<f64>,
    pub states: Vec<GeneralState>,
    pub t: Option<Vec<f64>>,
    pub termination: Termination,
}

impl GeneralTrajectory {
    fn from_solution(sol: Solution) -> Self {
        Self {
            states: sol.y.iter().map(|y| GeneralState::unpack(y)).collect(),
            tau: sol.tau,
            t: None,
            termination: sol.termination,
        }
    }

    pub fn shell_residuals(&self, pot: &dyn SpherePotential, alpha: f64, h: f64) -> Vec<f64> {
        self.states.iter().map(|s| s.shell_residual(pot, alpha, h)).collect()
    }

    /// Physical time from `dt/dτ = r^{1+α/2}`.
    pub fn physical_time(&self, alpha: f64, t0: f64) -> Vec<f64> {
        let rate = |s: &GeneralState| if s.r <= 0.0 { 0.0 } else { s.r.powf(1.0 + 0.5 * alpha) };
        let mut t = vec![t0];
        for i in 1..self.states.len() {
            let dt = 0.5 * (rate(&self.states[i]) + rate(&self.states[i - 1])) * (self.tau[i] - self.tau[i - 1]);
            t.push(t[i - 1] + dt);
        }
        t
    }

    /// CSV with columns `tau,r,v,s_1..s_d,u_1..u_d,t,energy_residual`.
    pub fn to_csv(&self, pot: &dyn SpherePotential, alpha: f64, h: f64) -> String {
        let d = pot.dim();
        let mut header = vec!["tau".to_string(), "r".into(), "v".into()];
        header.extend((1..=d).map(|i| format!("s_{i}")));
        header.extend((1..=d).map(|i| format!("u_{i}")));
        header.push("t".into());
        header.push("energy_residual".into());
        let mut out = header.join(",");
        out.push('\n');
        let res = self.shell_residuals(pot, alpha, h);
        for (i, s) in self.states.iter().enumerate() {
            let t = self.t.as_ref().map(|t| t[i]).unwrap_or(f64::NAN);
            let mut row = vec![format!("{:.17e}", self.tau[i]), format!("{:.17e}", s.r), format!("{:.17e}", s.v)];
            row.extend(s.s.iter().chain(&s.u).map(|x| format!("{x:.17e}")));
            row.push(format!("{t:.17e}"));
            row.push(format!("{:.6e}", res[i]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn integrate_general(
    field: &GeneralField<'_>,
    state: &GeneralState,
    horizon: f64,
    direction: Direction,
    tol: &Tolerances,
) -> GeneralTrajectory {
    let y0 = state.pack();
    GeneralTrajectory::from_solution(integrator::solve(field, &y0, 0.0, horizon, direction, tol, |_, _| None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcgehee::{delta_sin_cos, field_raw, z_value};
    use crate::potential::PotentialSpec;

    #[test]
    fn equilibrium_is_fixed() {
        let pot = QuadraticSphere::diagonal(1.0, &[0.0, 0.3, 0.5]);
        let field = GeneralField::new(1.0, &pot);
        let eq = GeneralState::equilibrium(&pot, vec![1.0, 0.0, 0.0], Branch::Ingoing);
        assert!((eq.v + 2f64.sqrt()).abs() < 1e-15);
        let d = field.eval(&eq);
        assert_eq!(d.r, 0.0);
        assert!(d.v.abs() < 1e-15);
        assert!(d.s.iter().chain(&d.u).all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn planar_embedding_matches_three_dimensional_field() {
        let spec = PotentialSpec::benchmark();
        let h = -0.5;
        let adapter = CircleAdapter(&spec.u);
        let field = GeneralField::new(spec.alpha, &adapter);
        for j in 0..40 {
            let r = 0.05 + 0.02 * j as f64;
            let th = 0.7 * j as f64;
            let ph = 1.9 * j as f64 + 0.3;
            let z = z_value(&spec, h, r, th).unwrap();
            let (sd, cd) = delta_sin_cos(th, ph);
            let (v, w) = (z * cd, z * sd);
            let e = [-th.sin(), th.cos()];
            let st = GeneralState { r, v, s: vec![th.cos(), th.sin()], u: vec![w * e[0], w * e[1]] };
            let g = field.eval(&st);
            let planar = field_raw(&spec, h, r, th, ph);
            let rp = z * g.r;
            let thp = z * (g.s[0] * e[0] + g.s[1] * e[1]);
            let wp = g.u[0] * e[0] + g.u[1] * e[1];
            let php = thp + z * (v * wp - w * g.v) / (z * z);
            let scale = planar.iter().map(|x| x.abs()).fold(1.0, f64::max);
            assert!((rp - planar[0]).abs() <= 1e-12 * scale);
            assert!((thp - planar[1]).abs() <= 1e-12 * scale);
            assert!((php - planar[2]).abs() <= 1e-12 * scale, "{php} vs {}", planar[2]);
        }
    }

    #[test]
    fn shell_derivative_vanishes() {
        let pot = QuadraticSphere::diagonal(1.0, &[0.2, -0.1, 0.4]);
        let (alpha, h) = (1.3, -0.4);
        let field = GeneralField::new(alpha, &pot);
        let s = vec![0.6, 0.0, 0.8];
        let u = vec![0.4, 0.3, -0.3];
        let st = GeneralState::on_shell(&pot, alpha, h, 0.3, s, u, Branch::Ingoing).unwrap();
        let d = field.eval(&st);
        // d/dτ of the residual: u·u' + v v' − ∇V·s' − α r^{α−1} r' h
        let mut grad = vec![0.0; 3];
        pot.tangent_gradient(&st.s, &mut grad);
        let dres = st.u.iter().zip(&d.u).map(|(a, b)| a * b).sum::<f64>() + st.v * d.v
            - grad.iter().zip(&d.s).map(|(a, b)| a * b).sum::<f64>()
            - alpha * st.r.powf(alpha - 1.0) * d.r * h;
        assert!(dres.abs() < 1e-13, "{dres}");
    }

    #[test]
    fn projection_restores_constraints() {
        let pot = QuadraticSphere::diagonal(1.0, &[0.0, 0.5]);
        let field = GeneralField::new(1.0, &pot);
        let mut y = vec![0.1, -1.0, 1.1, 0.05, 0.2, 0.3];
        field.project(&mut y);
        assert!(((y[2] * y[2] + y[3] * y[3]).sqrt() - 1.0).abs() < 1e-15);
        assert!((y[2] * y[4] + y[3] * y[5]).abs() < 1e-15);
    }
}
