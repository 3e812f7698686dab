//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use collision_arcs::equilibria::{classify, eigen_3d, eigen_collision, Classification};
use collision_arcs::exec::Execution;
use collision_arcs::mcgehee::general::{integrate_general, Branch, GeneralField, GeneralState, QuadraticSphere};
use collision_arcs::mcgehee::{
    field_3d, field_collision, integrate, integrate_collision, sundman_v, Direction, McGeheeState, Tolerances,
};
use collision_arcs::potential::{AngularPotential, CentralConfigurations, PotentialSpec};
use collision_arcs::scenarios::{verify_main_theorem, ScenarioConfig};
use collision_arcs::variational::{
    asymptotic_fit, convergence_study, jacobi_length, maupertuis_gradient, maupertuis_value, minimize_collision_arc,
    ode_residual, omega_h, radial_jacobi_length, to_physical, DiscretePath, Grading, Mesh, MinimizeOptions,
};

const EIGEN_TOL: f64 = 1e-8;
const ENERGY_TOL: f64 = 1e-7;
const SHELL_RATE_TOL: f64 = 1e-10;
const ALT_DAMPING_DRIFT_MIN: f64 = 1e-4;
const SUNDMAN_TOL: f64 = 1e-9;
const GRADIENT_TOL: f64 = 1e-6;
const ODE_RESIDUAL_TOL: f64 = 1e-4;
const LENGTH_IDENTITY_TOL: f64 = 1e-3;
const AXIS_DEVIATION_TOL: f64 = 1e-6;
const RADIAL_ORACLE_TOL: f64 = 1e-4;
const EXPONENT_REL_TOL: f64 = 0.02;
const PHI_TOL: f64 = 1e-3;
const LIPSCHITZ_SLACK: f64 = 1e-3;
const H1_FINAL_TOL: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_potential(rng: &mut ChaCha8Rng, alpha: f64) -> PotentialSpec {
    let deg = rng.gen_range(1..=3);
    let cos = (0..deg).map(|_| rng.gen_range(-0.15..0.15)).collect();
    let sin = (0..deg).map(|_| rng.gen_range(-0.15..0.15)).collect();
    PotentialSpec::new(alpha, AngularPotential::new(1.0, cos, sin))
}

fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

fn set_distance(a: Vec<Complex64>, b: Vec<Complex64>) -> f64 {
    sorted(a).iter().zip(&sorted(b)).map(|(x, y)| (x - y).norm() / x.norm().max(1.0)).fold(0.0, f64::max)
}

fn numeric_class(ev: [Complex64; 2]) -> Option<Classification> {
    let (a, b) = (ev[0], ev[1]);
    if a.im.abs() > 1e-6 {
        return Some(if a.re < 0.0 { Classification::Sink } else { Classification::Source });
    }
    if a.re * b.re < 0.0 {
        Some(Classification::Saddle)
    } else if a.re < 0.0 && b.re < 0.0 {
        Some(Classification::StableTwoTangentNode)
    } else if a.re > 0.0 && b.re > 0.0 {
        Some(Classification::UnstableTwoTangentNode)
    } else {
        None
    }
}

fn criterion_eigen_data() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = 1e-5;
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    let mut checked = 0;
    for k in 0..50 {
        let alpha = [0.5, 1.0, 1.5][k % 3];
        let spec = random_potential(&mut rng, alpha);
        let CentralConfigurations::Isolated(list) = spec.central_configurations() else {
            return outcome(false, "random potential has a continuum of critical angles".into());
        };
        for c in list {
            for parity in [0u8, 1] {
                let ph = c.theta + parity as f64 * PI;
                let mut j2 = Matrix2::zeros();
                for col in 0..2 {
                    let mut p = [c.theta, ph];
                    let mut m = [c.theta, ph];
                    p[col] += e;
                    m[col] -= e;
                    let (fp, fm) = (field_collision(&spec, p[0], p[1]), field_collision(&spec, m[0], m[1]));
                    for row in 0..2 {
                        j2[(row, col)] = (fp[row] - fm[row]) / (2.0 * e);
                    }
                }
                let ev = j2.complex_eigenvalues();
                let (mm, mp) = eigen_collision(&spec, c.theta, parity).unwrap();
                worst = worst.max(set_distance(vec![mm, mp], vec![ev[0], ev[1]]));
                let (class, borderline) = classify(&spec, c.theta, parity).unwrap();
                if !borderline {
                    checked += 1;
                    if numeric_class([ev[0], ev[1]]) != Some(class) {
                        mismatches += 1;
                    }
                }
            }
            // full Jacobian at the ingoing equilibrium
            let at = |r: f64, th: f64, ph: f64| field_3d(&spec, -0.5, &McGeheeState::new(r, th, ph));
            let mut j3 = Matrix3::zeros();
            let (r1, r2) = (1e-8, 2e-8);
            let (f1, f2) = (at(r1, c.theta, c.theta + PI), at(r2, c.theta, c.theta + PI));
            let w = 2f64.powf(alpha);
            for row in 0..3 {
                j3[(row, 0)] = (w * f1[row] / r1 - f2[row] / r2) / (w - 1.0);
            }
            for col in 1..3 {
                let mut p = [0.0, c.theta, c.theta + PI];
                let mut m = p;
                p[col] += e;
                m[col] -= e;
                let (fp, fm) = (at(p[0], p[1], p[2]), at(m[0], m[1], m[2]));
                for row in 0..3 {
                    j3[(row, col)] = (fp[row] - fm[row]) / (2.0 * e);
                }
            }
            let ev = j3.complex_eigenvalues();
            let closed = eigen_3d(&spec, -0.5, c.theta).unwrap();
            worst = worst.max(set_distance(
                vec![Complex64::new(closed.lambda_r, 0.0), closed.lambda_minus, closed.lambda_plus],
                ev.iter().copied().collect(),
            ));
        }
    }
    outcome(
        worst <= EIGEN_TOL && mismatches == 0 && checked > 0,
        format!("max eigenvalue error {worst:.2e} (tol {EIGEN_TOL:.0e}), {mismatches}/{checked} classification mismatches"),
    )
}

fn criterion_conservation() -> Outcome {
    let spec = PotentialSpec::benchmark();
    let h = -0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let starts: Vec<McGeheeState> = (0..100)
        .map(|_| McGeheeState::new(rng.gen_range(0.05..0.9), rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)))
        .collect();
    let tol = Tolerances::uniform(1e-9);
    let worst = Execution::Parallel
        .map(&starts, |s| {
            let traj = integrate(&spec, h, s, 50.0, Direction::Forward, &[], &tol);
            traj.energy_residuals(&spec, h).iter().fold(0.0f64, |a, b| a.max(b.abs()))
        })
        .into_iter()
        .fold(0.0, f64::max);

    let pot = QuadraticSphere::diagonal(1.0, &[0.0, 0.15, 0.3]);
    let alpha = 1.3;
    let (hg, horizon) = (-0.4, 10.0);
    let s = vec![0.6, 0.64, 0.48];
    let u = vec![0.3, -0.45, 0.2];
    let dot: f64 = s.iter().zip(&u).map(|(a, b)| a * b).sum();
    let u: Vec<f64> = u.iter().zip(&s).map(|(x, si)| x - dot * si).collect();
    let st = GeneralState::on_shell(&pot, alpha, hg, 0.4, s, u, Branch::Ingoing).unwrap();
    let shell_drift = |field: GeneralField<'_>| {
        let traj = integrate_general(&field, &st, horizon, Direction::Forward, &Tolerances::uniform(1e-12));
        traj.shell_residuals(&pot, alpha, hg).iter().fold(0.0f64, |a, b| a.max(b.abs()))
    };
    let good = shell_drift(GeneralField::new(alpha, &pot)) / horizon;
    let alt = shell_drift(GeneralField::new(alpha, &pot).with_damping((2.0 - alpha) / alpha));
    outcome(
        worst <= ENERGY_TOL && good <= SHELL_RATE_TOL && alt > ALT_DAMPING_DRIFT_MIN,
        format!(
            "max energy residual {worst:.2e} (tol {ENERGY_TOL:.0e}); shell drift {good:.2e}/unit tau (tol {SHELL_RATE_TOL:.0e}); (2-a)/a coefficient drifts {alt:.2e} (> {ALT_DAMPING_DRIFT_MIN:.0e})"
        ),
    )
}

fn criterion_sundman() -> Outcome {
    let spec = PotentialSpec::benchmark();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_drop: f64 = 0.0;
    for _ in 0..50 {
        let (th, ph) = (rng.gen_range(-PI..PI), rng.gen_range(-PI..PI));
        let traj = integrate_collision(&spec, th, ph, 30.0, &Tolerances::uniform(1e-11));
        let v: Vec<f64> = traj.states.iter().map(|s| sundman_v(&spec, s[1], s[2])).collect();
        for w in v.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    outcome(worst_drop <= SUNDMAN_TOL, format!("largest decrease of v {worst_drop:.2e} (tol {SUNDMAN_TOL:.0e})"))
}

fn criterion_variational() -> Outcome {
    let spec = PotentialSpec::benchmark();
    let h = -0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut grad_err: f64 = 0.0;
    for _ in 0..20 {
        let r0: f64 = rng.gen_range(0.05..0.3);
        let th: f64 = rng.gen_range(-0.5..0.5);
        let mesh = Mesh::graded(32, spec.alpha, Grading::Optimal);
        let mut path = DiscretePath::homothetic_profile([r0 * th.cos(), r0 * th.sin()], spec.alpha, mesh, rng.gen_range(-0.03..0.03));
        for node in &mut path.nodes[1..31] {
            node[0] *= 1.0 + rng.gen_range(-0.02..0.02);
            node[1] += rng.gen_range(-0.005..0.005);
        }
        let g = maupertuis_gradient(&spec, h, &path).unwrap();
        let scale = g.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
        let step = 1e-7 * r0;
        for j in [1usize, 4, 9, 16, 25, 30] {
            for c in 0..2 {
                let mut p = path.clone();
                let mut m = path.clone();
                p.nodes[j][c] += step;
                m.nodes[j][c] -= step;
                let fd = (maupertuis_value(&spec, h, &p).unwrap() - maupertuis_value(&spec, h, &m).unwrap()) / (2.0 * step);
                grad_err = grad_err.max((fd - g[j][c]).abs() / scale);
            }
        }
    }
    let opts = MinimizeOptions::default();
    let starts: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let (r, th) = (0.08 + 0.03 * k as f64, -0.12 + 0.05 * k as f64);
            [r * th.cos(), r * th.sin()]
        })
        .collect();
    let (mut ode, mut ident, mut bound_violations) = (0.0f64, 0.0f64, 0);
    for q0 in starts {
        let res = minimize_collision_arc(&spec, h, q0, &opts).unwrap();
        let best = res.best();
        ode = ode.max(ode_residual(&spec, best, 0.9));
        let l = jacobi_length(&spec, h, &best.path).unwrap();
        ident = ident.max((2.0 * best.value - l * l).abs() / (2.0 * best.value));
        let bound = -spec.alpha * h * (q0[0] * q0[0] + q0[1] * q0[1]) / (2.0 - spec.alpha);
        if res.runs.iter().any(|r| r.value < bound) {
            bound_violations += 1;
        }
    }
    outcome(
        grad_err <= GRADIENT_TOL && ode <= ODE_RESIDUAL_TOL && ident <= LENGTH_IDENTITY_TOL && bound_violations == 0,
        format!(
            "gradient {grad_err:.2e} (tol {GRADIENT_TOL:.0e}), ODE residual {ode:.2e} (tol {ODE_RESIDUAL_TOL:.0e}), |2M - L^2|/2M {ident:.2e} (tol {LENGTH_IDENTITY_TOL:.0e}), lower-bound violations {bound_violations}"
        ),
    )
}

fn criterion_homothetic() -> Outcome {
    let spec = PotentialSpec::benchmark();
    let h = -0.5;
    let opts = MinimizeOptions::default();
    let (mut dev, mut oracle_err, mut clusters_ok, mut monotone) = (0.0f64, 0.0f64, true, true);
    for r0 in [0.1, 0.2, 0.3] {
        let res = minimize_collision_arc(&spec, h, [r0, 0.0], &opts).unwrap();
        clusters_ok &= res.cluster_count() == 1;
        let best = res.best();
        let radii = best.path.radii();
        monotone &= radii.windows(2).all(|w| w[1] <= w[0]);
        dev = dev.max(best.path.nodes.iter().map(|u| u[1].atan2(u[0]).abs() * (u[0].hypot(u[1]) > 0.0) as u8 as f64).fold(0.0, f64::max));
        dev = dev.max((best.phi0 - PI).abs());
        let l = radial_jacobi_length(&spec, h, 0.0, r0);
        oracle_err = oracle_err.max((best.value - 0.5 * l * l).abs() / (0.5 * l * l));
    }
    outcome(
        clusters_ok && monotone && dev <= AXIS_DEVIATION_TOL && oracle_err <= RADIAL_ORACLE_TOL,
        format!(
            "single cluster {clusters_ok}, radially monotone {monotone}, angle deviation {dev:.2e} (tol {AXIS_DEVIATION_TOL:.0e}), value vs radial quadrature {oracle_err:.2e} (tol {RADIAL_ORACLE_TOL:.0e})"
        ),
    )
}

fn criterion_exponent() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for alpha in [0.5, 1.0, 1.5] {
        let spec = PotentialSpec::new(alpha, AngularPotential::symmetric_two_fold(0.1));
        let q0 = [0.2 * 0.1f64.cos(), 0.2 * 0.1f64.sin()];
        let res = minimize_collision_arc(&spec, -0.5, q0, &MinimizeOptions::default()).unwrap();
        let arc = to_physical(&spec, -0.5, res.best());
        let expected = 2.0 / (2.0 + alpha);
        match asymptotic_fit(&arc, 10) {
            Ok(fit) => {
                let rel = (fit.exponent - expected).abs() / expected;
                worst = worst.max(rel);
                parts.push(format!("a={alpha}: {:.5} vs {expected:.5}", fit.exponent));
            }
            Err(e) => {
                worst = f64::INFINITY;
                parts.push(format!("a={alpha}: {e}"));
            }
        }
    }
    outcome(worst <= EXPONENT_REL_TOL, format!("{}; worst relative error {worst:.2e} (tol {EXPONENT_REL_TOL})", parts.join(", ")))
}

fn criterion_benchmark() -> (Outcome, Option<String>) {
    let cfg = ScenarioConfig::benchmark();
    match verify_main_theorem(&cfg, Execution::Parallel) {
        Ok(rep) => {
            let a = &rep.aggregates;
            let pass = a.pass_rate == 1.0
                && a.max_phi_error <= PHI_TOL
                && !a.any_multiplicity
                && a.inclusion_passed == 30
                && a.inclusion_max_phi_error <= PHI_TOL
                && rep.points.iter().all(|p| p.membership_accepted && p.cone_flag);
            let text = serde_json::to_string_pretty(&rep).unwrap();
            (
                outcome(
                    pass,
                    format!(
                        "pass rate {:.4} ({}/{}), max |phi0 - psi| {:.2e}, multiplicity {}, reverse inclusion {}/{} max {:.2e} (tol {PHI_TOL:.0e})",
                        a.pass_rate, a.passed, a.points, a.max_phi_error, a.any_multiplicity, a.inclusion_passed, a.inclusion_points, a.inclusion_max_phi_error
                    ),
                ),
                Some(text),
            )
        }
        Err(e) => (outcome(false, format!("verification aborted: {e}")), None),
    }
}

fn criterion_lipschitz() -> Outcome {
    let spec = PotentialSpec::benchmark();
    let h = -0.5;
    let r_lj = spec.lagrange_jacobi_radius(h).finite().unwrap();
    let radius = 0.8 * r_lj;
    let lip = r_lj.powf(1.0 - 0.5 * spec.alpha) * spec.u.max_value().sqrt();
    let angles: Vec<f64> = (0..16).map(|k| 2.0 * PI * k as f64 / 16.0).collect();
    let opts = MinimizeOptions::default();
    let omegas = Execution::Parallel.map(&angles, |th| omega_h(&spec, h, [radius * th.cos(), radius * th.sin()], &opts));
    let omegas: Result<Vec<f64>, _> = omegas.into_iter().collect();
    let omegas = match omegas {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("minimization failed: {e}")),
    };
    let mut worst_ratio: f64 = 0.0;
    for k in 0..16 {
        let j = (k + 1) % 16;
        let d = 2.0 * PI / 16.0;
        worst_ratio = worst_ratio.max((omegas[k] - omegas[j]).abs() / (lip * d));
    }
    outcome(
        worst_ratio <= 1.0 + LIPSCHITZ_SLACK,
        format!("largest |dw|/(L |dtheta|) = {worst_ratio:.4} with L = {lip:.4} at radius {radius:.3} (bound 1 + {LIPSCHITZ_SLACK:.0e})"),
    )
}

fn criterion_compactness() -> Outcome {
    let spec = PotentialSpec::benchmark();
    let h = -0.5;
    let q_star = [0.2, 0.0];
    let seq: Vec<[f64; 2]> = (0..8).map(|k| [0.2, 0.04 * 0.5f64.powi(k)]).collect();
    match convergence_study(&spec, h, q_star, &seq, None, &MinimizeOptions::default()) {
        Ok(rep) => outcome(
            rep.h1_monotone && rep.final_h1 <= H1_FINAL_TOL,
            format!("H1 distances decreasing {}, final {:.2e} (tol {H1_FINAL_TOL:.0e})", rep.h1_monotone, rep.final_h1),
        ),
        Err(e) => outcome(false, format!("study failed: {e}")),
    }
}

fn criterion_determinism(first: Option<String>) -> Outcome {
    let Some(first) = first else {
        return outcome(false, "first benchmark run produced no report".into());
    };
    match verify_main_theorem(&ScenarioConfig::benchmark(), Execution::Parallel) {
        Ok(rep) => {
            let second = serde_json::to_string_pretty(&rep).unwrap();
            outcome(first == second, format!("second report identical: {} ({} bytes)", first == second, first.len()))
        }
        Err(e) => outcome(false, format!("second run failed: {e}")),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    let mut report = |id: usize, name: &str, start: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    };
    let t = Instant::now();
    report(1, "closed-form eigen-data", t, criterion_eigen_data());
    let t = Instant::now();
    report(2, "energy and shell conservation", t, criterion_conservation());
    let t = Instant::now();
    report(3, "Sundman monotonicity", t, criterion_sundman());
    let t = Instant::now();
    report(4, "variational correctness", t, criterion_variational());
    let t = Instant::now();
    report(5, "homothetic uniqueness", t, criterion_homothetic());
    let t = Instant::now();
    report(6, "asymptotic exponent", t, criterion_exponent());
    let t = Instant::now();
    let (o, first) = criterion_benchmark();
    report(7, "benchmark verification", t, o);
    let t = Instant::now();
    report(8, "Lipschitz estimate", t, criterion_lipschitz());
    let t = Instant::now();
    report(9, "compactness", t, criterion_compactness());
    let t = Instant::now();
    report(10, "determinism", t, criterion_determinism(first));
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
