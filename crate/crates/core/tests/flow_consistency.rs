use collision_arcs::mcgehee::{
    from_mcgehee, integrate, physical_time, to_mcgehee, CartesianState, Direction, McGeheeState, Tolerances,
};
use collision_arcs::potential::{AngularPotential, PerturbationSpec, PotentialSpec};

fn perturbed() -> PotentialSpec {
    PotentialSpec::benchmark().with_perturbation(PerturbationSpec {
        c: 0.05,
        beta: 0.5,
        g: AngularPotential::new(1.0, vec![0.3], vec![0.1]),
    })
}

fn newton(spec: &PotentialSpec, y: [f64; 4]) -> [f64; 4] {
    let g = spec.grad_v([y[0], y[1]]).unwrap();
    [y[2], y[3], g[0], g[1]]
}

fn rk4(spec: &PotentialSpec, y0: CartesianState, t_end: f64, steps: usize) -> CartesianState {
    let mut y = [y0.q[0], y0.q[1], y0.p[0], y0.p[1]];
    let dt = t_end / steps as f64;
    let add = |a: [f64; 4], b: [f64; 4], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
    for _ in 0..steps {
        let k1 = newton(spec, y);
        let k2 = newton(spec, add(y, k1, 0.5 * dt));
        let k3 = newton(spec, add(y, k2, 0.5 * dt));
        let k4 = newton(spec, add(y, k3, dt));
        for i in 0..4 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    CartesianState { q: [y[0], y[1]], p: [y[2], y[3]] }
}

#[test]
fn regularized_flow_matches_newtonian_flow_with_perturbation() {
    let spec = perturbed();
    let h = -0.5;
    for (r, th, ph) in [(0.4, 0.3, 2.0), (0.6, -1.0, 0.5), (0.3, 2.0, -2.5)] {
        let start = McGeheeState::new(r, th, ph);
        let cart0 = from_mcgehee(&spec, h, &start).unwrap();
        let traj = integrate(&spec, h, &start, 3.0, Direction::Forward, &[], &Tolerances::uniform(1e-12));
        let t = physical_time(&spec, h, &traj, 0.0);
        let k = traj.len() - 1;
        let lifted = from_mcgehee(&spec, h, &traj.state(k)).unwrap();
        let newton = rk4(&spec, cart0, t[k], 20_000);
        let dq = (lifted.q[0] - newton.q[0]).hypot(lifted.q[1] - newton.q[1]);
        let dp = (lifted.p[0] - newton.p[0]).hypot(lifted.p[1] - newton.p[1]);
        let pscale = newton.p[0].hypot(newton.p[1]);
        assert!(dq < 1e-7, "position mismatch {dq} from ({r}, {th}, {ph})");
        assert!(dp < 1e-7 * pscale.max(1.0), "momentum mismatch {dp}");
    }
}

#[test]
fn round_trip_through_cartesian_variables() {
    let spec = perturbed();
    let h = -0.3;
    let s = McGeheeState::new(0.35, 1.2, -0.4);
    let c = from_mcgehee(&spec, h, &s).unwrap();
    let back = to_mcgehee(&spec, h, &c).unwrap();
    assert!((back.r - s.r).abs() < 1e-14);
    assert!((back.theta - s.theta).abs() < 1e-14);
    assert!((back.phi - s.phi).abs() < 1e-14);
}
