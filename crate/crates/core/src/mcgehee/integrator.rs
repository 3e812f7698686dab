//! Dormand–Prince 5(4) with PI step-size control and cubic Hermite dense output.

use serde::{Deserialize, Serialize};

/// Autonomous first-order system `y' = f(y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], dy: &mut [f64]);
    /// Called after every accepted step; returns true when `y` was modified.
    fn project(&self, _y: &mut [f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    /// Upper bound on the step length (infinite by default).
    pub h_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-9,
            max_steps: 1_000_000,
            h_max: f64::INFINITY,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            atol: tol,
            rtol: tol,
            ..Self::default()
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Self::Forward => 1.0,
            Self::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HorizonReached,
    ConvergedToEquilibrium,
    ExitedRadiusWindow,
    ExitedAngularWindow,
    CollisionTrapped,
    /// Stopped by a caller-supplied monitor.
    Stopped,
    StepFailure,
}

/// Accepted steps `(τ_i, y_i, y'_i)` of one integration.
#[derive(Debug, Clone)]
pub struct Solution {
    pub tau: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    pub termination: Termination,
    pub rejected_steps: usize,
}

impl Solution {
    pub fn last(&self) -> &[f64] {
        self.y.last().expect("solution has at least one sample")
    }

    /// Cubic Hermite interpolation at `tau` (clamped to the integration range).
    pub fn dense(&self, tau: f64) -> Vec<f64> {
        let n = self.tau.len();
        if n == 1 {
            return self.y[0].clone();
        }
        let increasing = self.tau[n - 1] > self.tau[0];
        let key = |t: f64| if increasing { t } else { -t };
        let k = key(tau);
        let idx = self.tau.partition_point(|&t| key(t) <= k);
        let j = idx.clamp(1, n - 1);
        hermite(
            self.tau[j - 1],
            &self.y[j - 1],
            &self.dy[j - 1],
            self.tau[j],
            &self.y[j],
            &self.dy[j],
            tau,
        )
    }
}

/// Cubic Hermite interpolant through `(t0, y0, f0)` and `(t1, y1, f1)`.
pub fn hermite(t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64], t: f64) -> Vec<f64> {
    let h = t1 - t0;
    let th = ((t - t0) / h).clamp(0.0, 1.0);
    let th2 = th * th;
    let th3 = th2 * th;
    let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
    let h10 = th3 - 2.0 * th2 + th;
    let h01 = -2.0 * th3 + 3.0 * th2;
    let h11 = th3 - th2;
    (0..y0.len())
        .map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i])
        .collect()
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Signed<'a, S: OdeSystem> {
    sys: &'a S,
    sign: f64,
}

impl<S: OdeSystem> Signed<'_, S> {
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        self.sys.rhs(y, dy);
        if self.sign < 0.0 {
            dy.iter_mut().for_each(|d| *d = -*d);
        }
    }
}

/// Integrates from `tau0` over a span of length `horizon` in the given direction.
///
/// `monitor(τ, y)` sees every accepted sample including the initial one and
/// may end the run by returning a termination reason; the triggering sample
/// is kept.
pub fn solve<S, M>(
    sys: &S,
    y0: &[f64],
    tau0: f64,
    horizon: f64,
    direction: Direction,
    tol: &Tolerances,
    mut monitor: M,
) -> Solution
where
    S: OdeSystem,
    M: FnMut(f64, &[f64]) -> Option<Termination>,
{
    let n = sys.dim();
    assert_eq!(y0.len(), n, "initial state has wrong dimension");
    let sign = direction.sign();
    let f = Signed { sys, sign };

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    f.eval(&y, &mut k1);
    let true_deriv = |k: &[f64]| k.iter().map(|v| v * sign).collect::<Vec<f64>>();

    let mut out = Solution {
        tau: vec![tau0],
        y: vec![y.clone()],
        dy: vec![true_deriv(&k1)],
        termination: Termination::HorizonReached,
        rejected_steps: 0,
    };
    if let Some(t) = monitor(tau0, &y) {
        out.termination = t;
        return out;
    }
    if horizon <= 0.0 {
        return out;
    }

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    let mut elapsed = 0.0;
    let mut h = initial_step(&f, &y, &k1, tol).min(horizon).min(tol.h_max);
    let mut err_prev: f64 = 1e-4;
    let mut steps = 0usize;

    while elapsed < horizon {
        if steps >= tol.max_steps {
            out.termination = Termination::StepFailure;
            return out;
        }
        let remaining = horizon - elapsed;
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h <= 1e-14 * elapsed.abs().max(1.0) || !h.is_finite() {
            out.termination = Termination::StepFailure;
            return out;
        }

        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f.eval(&tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f.eval(&tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f.eval(&tmp, &mut k6);
        for i in 0..n {
            y_new[i] = y[i]
                + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        f.eval(&y_new, &mut k7);

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 {
            steps += 1;
            elapsed = if last { horizon } else { elapsed + h };
            std::mem::swap(&mut y, &mut y_new);
            if sys.project(&mut y) {
                f.eval(&y, &mut k7);
            }
            std::mem::swap(&mut k1, &mut k7);
            let tau = tau0 + sign * elapsed;
            out.tau.push(tau);
            out.y.push(y.clone());
            out.dy.push(true_deriv(&k1));
            if let Some(t) = monitor(tau, &y) {
                out.termination = t;
                return out;
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.17) * err_prev.powf(0.04)).clamp(0.2, 5.0)
            };
            err_prev = err.max(1e-4);
            h = (h * fac).min(tol.h_max);
        } else {
            out.rejected_steps += 1;
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= fac;
        }
    }
    out.termination = Termination::HorizonReached;
    out
}

fn initial_step<S: OdeSystem>(f: &Signed<'_, S>, y: &[f64], f0: &[f64], tol: &Tolerances) -> f64 {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let norm = |v: &[f64]| {
        (v.iter().zip(&sc).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    f.eval(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let sol = solve(&Oscillator, &[1.0, 0.0], 0.0, 20.0, Direction::Forward, &Tolerances::uniform(1e-12), |_, _| None);
        assert_eq!(sol.termination, Termination::HorizonReached);
        let y = sol.last();
        assert!((y[0] - 20f64.cos()).abs() < 1e-9);
        assert!((y[1] + 20f64.sin()).abs() < 1e-9);
        assert!((sol.tau.last().unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn backward_direction_runs_time_in_reverse() {
        let sol = solve(&Decay, &[1.0], 0.0, 2.0, Direction::Backward, &Tolerances::uniform(1e-12), |_, _| None);
        assert!((sol.last()[0] - 2f64.exp()).abs() < 1e-9);
        assert!(sol.tau.windows(2).all(|w| w[1] < w[0]));
        assert!((sol.dy.last().unwrap()[0] + sol.last()[0]).abs() < 1e-12);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let sol = solve(&Oscillator, &[1.0, 0.0], 0.0, 6.0, Direction::Forward, &Tolerances::uniform(1e-11), |_, _| None);
        for j in 0..60 {
            let t = 0.1 * j as f64 + 0.037;
            let y = sol.dense(t);
            assert!((y[0] - t.cos()).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn monitor_stops_integration() {
        let sol = solve(&Decay, &[1.0], 0.0, 100.0, Direction::Forward, &Tolerances::default(), |_, y| {
            (y[0] < 0.5).then_some(Termination::Stopped)
        });
        assert_eq!(sol.termination, Termination::Stopped);
        assert!(sol.last()[0] < 0.5);
        assert!(sol.tau.last().unwrap() < &100.0);
    }
}
