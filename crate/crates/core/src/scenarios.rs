//! Scenario configuration, the verification pipeline comparing minimizers
//! with the stable-manifold chart, and the file outputs of every subcommand.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::equilibria::{self, EquilibriumError};
use crate::exec::Execution;
use crate::manifold::{build_chart, stable_membership, ChartOptions, ManifoldError, MembershipOptions, StableChart};
use crate::mcgehee::{
    from_mcgehee, integrate, physical_time, to_mcgehee, CartesianState, Direction, Event, McGeheeError,
    McGeheeState, Tolerances,
};
use crate::potential::{wrap_angle, LagrangeJacobiRadius, PotentialError, PotentialSpec};
use crate::variational::{
    self, convergence_study, initial_mcgehee, minimize_collision_arc, ode_residual, path_csv, to_physical,
    MinimizeOptions, MultistartResult, VariationalError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    McGehee(#[from] McGeheeError),
    #[error(transparent)]
    Variational(#[from] VariationalError),
    #[error("cannot read or write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed scenario file {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Variational(VariationalError::NotConverged { .. }) => EXIT_NONCONVERGENCE,
            _ => EXIT_VALIDATION,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cone {
    pub r_bar: f64,
    pub delta_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub n_r: usize,
    pub n_theta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioTolerances {
    pub membership_eps: f64,
    /// Largest wrapped `|φ₀ − Ψ|` accepted at a grid point.
    pub phi_tol: f64,
    /// Largest chart uncertainty accepted at a grid point.
    pub chart_residual: f64,
    pub cluster_threshold: f64,
    pub minimizer: f64,
}

impl Default for ScenarioTolerances {
    fn default() -> Self {
        Self {
            membership_eps: 1e-6,
            phi_tol: 1e-3,
            chart_residual: 1e-4,
            cluster_threshold: 1e-3,
            minimizer: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub nodes: usize,
    pub multistart_amplitudes: Vec<f64>,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            nodes: 512,
            multistart_amplitudes: vec![0.0, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ChartConfig {
    pub r_loc: Option<f64>,
    pub delta_loc: Option<f64>,
    pub seeds: Option<usize>,
    pub eps_seed: Option<f64>,
}

/// Initial state of the `flow` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowStart {
    Mcgehee { r: f64, theta: f64, phi: f64 },
    Cartesian { q: [f64; 2], p: [f64; 2] },
    /// The stable-manifold point above `(r, ϑ)`.
    Manifold { r: f64, theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub start: FlowStart,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub backward: bool,
    #[serde(default = "default_flow_tol")]
    pub tol: f64,
    #[serde(default)]
    pub events: Vec<Event>,
}

fn default_horizon() -> f64 {
    50.0
}

fn default_flow_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarPoint {
    pub r: f64,
    pub theta: f64,
}

impl PolarPoint {
    pub fn cartesian(&self) -> [f64; 2] {
        [self.r * self.theta.cos(), self.r * self.theta.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub q_star: PolarPoint,
    /// Offset of the first sequence point from `q*`; later points halve it.
    pub offset: [f64; 2],
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Optional energy offset, halved along with the position.
    #[serde(default)]
    pub energy_offset: f64,
}

fn default_steps() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizeConfig {
    pub q0: PolarPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub potential: PotentialSpec,
    pub h: f64,
    pub cone: Cone,
    pub grids: Grids,
    #[serde(default)]
    pub tolerances: ScenarioTolerances,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub chart: ChartConfig,
    /// Chart points re-minimized for the reverse inclusion.
    #[serde(default = "default_inclusion")]
    pub inclusion_samples: usize,
    /// Extra points reported without entering the pass rate.
    #[serde(default)]
    pub controls: Vec<PolarPoint>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub minimize: Option<MinimizeConfig>,
    #[serde(default)]
    pub convergence: Option<ConvergenceConfig>,
}

fn default_inclusion() -> usize {
    30
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        Self::from_json(&text).map_err(|source| ScenarioError::Parse { path: path.into(), source })
    }

    /// The benchmark scenario on `U = 1 + 0.1(1 − cos 2ϑ)`.
    pub fn benchmark() -> Self {
        Self {
            name: Some("benchmark".into()),
            potential: PotentialSpec::benchmark(),
            h: -0.5,
            cone: Cone { r_bar: 0.25, delta_bar: 0.15 },
            grids: Grids { n_r: 11, n_theta: 11 },
            tolerances: ScenarioTolerances::default(),
            discretization: Discretization::default(),
            chart: ChartConfig::default(),
            inclusion_samples: 30,
            controls: Vec::new(),
            seed: 20240607,
            output_dir: None,
            flow: None,
            minimize: None,
            convergence: None,
        }
    }

    pub fn minimize_options(&self, execution: Execution) -> MinimizeOptions {
        MinimizeOptions {
            nodes: self.discretization.nodes,
            amplitudes: self.discretization.multistart_amplitudes.clone(),
            cluster_threshold: self.tolerances.cluster_threshold,
            tolerance: self.tolerances.minimizer,
            execution,
            ..MinimizeOptions::default()
        }
    }

    pub fn membership_options(&self) -> MembershipOptions {
        MembershipOptions {
            eps_eq: self.tolerances.membership_eps,
            phi_tol: self.tolerances.phi_tol,
            ..MembershipOptions::default()
        }
    }

    pub fn chart_options(&self, execution: Execution) -> ChartOptions {
        let d = ChartOptions::default();
        ChartOptions {
            r_loc: self.chart.r_loc,
            delta_loc: self.chart.delta_loc,
            n_seeds: self.chart.seeds.unwrap_or(d.n_seeds),
            eps_seed: self.chart.eps_seed.unwrap_or(d.eps_seed),
            execution,
            ..d
        }
    }

    /// Basic checks that need no chart.
    pub fn validate(&self) -> Result<Validated, ScenarioError> {
        self.potential.validate()?;
        let cc = self.potential.minimal_configuration()?;
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.membership_eps", t.membership_eps),
            ("tolerances.phi_tol", t.phi_tol),
            ("tolerances.chart_residual", t.chart_residual),
            ("tolerances.cluster_threshold", t.cluster_threshold),
            ("tolerances.minimizer", t.minimizer),
            ("cone.r_bar", self.cone.r_bar),
            ("cone.delta_bar", self.cone.delta_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.h.is_finite() {
            return Err(invalid("h must be finite"));
        }
        if self.grids.n_r == 0 || self.grids.n_theta == 0 {
            return Err(invalid("grids.n_r and grids.n_theta must be at least 1"));
        }
        if self.discretization.nodes < 8 {
            return Err(invalid(format!("discretization.nodes must be at least 8, got {}", self.discretization.nodes)));
        }
        if self.discretization.multistart_amplitudes.is_empty() {
            return Err(invalid("discretization.multistart_amplitudes is empty"));
        }
        let r_lj = self.potential.lagrange_jacobi_radius(self.h).finite();
        if let Some(r) = r_lj {
            if self.cone.r_bar > r {
                return Err(invalid(format!(
                    "cone.r_bar = {} exceeds the Lagrange-Jacobi radius {r:.6}",
                    self.cone.r_bar
                )));
            }
        }
        Ok(Validated {
            theta_star: cc.theta,
            u_star: cc.value,
            r_lj,
            delta_cone: self.potential.cone_half_width(cc.theta),
        })
    }

    /// Cone constraints against a built chart.
    pub fn validate_against(&self, chart: &StableChart) -> Result<(), ScenarioError> {
        if self.cone.r_bar > chart.r_loc {
            return Err(invalid(format!(
                "cone.r_bar = {} exceeds the chart radius r_loc = {}",
                self.cone.r_bar, chart.r_loc
            )));
        }
        if self.cone.delta_bar > chart.delta_loc {
            return Err(invalid(format!(
                "cone.delta_bar = {} exceeds the chart half-width delta_loc = {}",
                self.cone.delta_bar, chart.delta_loc
            )));
        }
        Ok(())
    }

    /// Grid strictly inside the open cone, one step away from its edges.
    pub fn grid(&self, theta_star: f64) -> Vec<GridPoint> {
        let (nr, nt) = (self.grids.n_r, self.grids.n_theta);
        let mut out = Vec::with_capacity(nr * nt);
        for i in 0..nr {
            for j in 0..nt {
                let r = self.cone.r_bar * (i + 1) as f64 / (nr + 1) as f64;
                let theta = theta_star - self.cone.delta_bar + 2.0 * self.cone.delta_bar * (j + 1) as f64 / (nt + 1) as f64;
                out.push(GridPoint { index: out.len(), i_r: i, i_theta: j, r, theta });
            }
        }
        out
    }

    /// Canonical JSON and its SHA-256.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validated {
    pub theta_star: f64,
    pub u_star: f64,
    pub r_lj: Option<f64>,
    pub delta_cone: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub i_r: usize,
    pub i_theta: usize,
    pub r: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub index: usize,
    pub r: f64,
    pub theta0: f64,
    pub phi0: Option<f64>,
    pub psi: Option<f64>,
    pub psi_residual: Option<f64>,
    /// Wrapped `|φ₀ − Ψ(r, ϑ₀)|`.
    pub phi_error: Option<f64>,
    pub membership_accepted: bool,
    pub membership_inconclusive: bool,
    /// Wrapped distance from `φ₀` to the manifold located by shooting.
    pub membership_offset: Option<f64>,
    pub cone_flag: bool,
    pub clusters: usize,
    pub value: Option<f64>,
    pub omega: Option<f64>,
    pub converged: bool,
    pub ode_residual: Option<f64>,
    pub pass: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionRow {
    pub index: usize,
    pub r: f64,
    pub theta: f64,
    pub psi: f64,
    pub psi_residual: f64,
    pub phi0: Option<f64>,
    pub phi_error: Option<f64>,
    pub clusters: usize,
    pub converged: bool,
    pub pass: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub points: usize,
    pub passed: usize,
    pub pass_rate: f64,
    pub max_phi_error: f64,
    pub max_chart_residual: f64,
    pub max_membership_offset: f64,
    pub any_multiplicity: bool,
    pub non_converged: usize,
    pub inclusion_points: usize,
    pub inclusion_passed: usize,
    pub inclusion_pass_rate: f64,
    pub inclusion_max_phi_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub theta_star: f64,
    pub h: f64,
    pub r_bar: f64,
    pub delta_bar: f64,
    pub r_loc: f64,
    pub delta_loc: f64,
    pub points: Vec<PointRow>,
    pub inclusion: Vec<InclusionRow>,
    pub controls: Vec<PointRow>,
    pub aggregates: Aggregates,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.aggregates.passed == self.aggregates.points
            && self.aggregates.inclusion_passed == self.aggregates.inclusion_points
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else if self.aggregates.non_converged > 0 {
            EXIT_NONCONVERGENCE
        } else {
            EXIT_VERIFICATION
        }
    }

    pub fn points_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        let mut out = String::from(
            "index,r,theta0,phi0,psi,psi_residual,phi_error,membership,membership_offset,cone,clusters,value,omega,converged,ode_residual,pass\n",
        );
        for p in self.points.iter().chain(&self.controls) {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                p.index,
                p.r,
                p.theta0,
                f(p.phi0),
                f(p.psi),
                f(p.psi_residual),
                f(p.phi_error),
                if p.membership_inconclusive { "inconclusive" } else if p.membership_accepted { "accepted" } else { "rejected" },
                f(p.membership_offset),
                p.cone_flag,
                p.clusters,
                f(p.value),
                f(p.omega),
                p.converged,
                f(p.ode_residual),
                p.pass
            ));
        }
        out
    }

    pub fn inclusion_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        let mut out = String::from("index,r,theta,psi,psi_residual,phi0,phi_error,clusters,converged,pass\n");
        for p in &self.inclusion {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.6e},{},{},{},{},{}\n",
                p.index,
                p.r,
                p.theta,
                p.psi,
                p.psi_residual,
                f(p.phi0),
                f(p.phi_error),
                p.clusters,
                p.converged,
                p.pass
            ));
        }
        out
    }
}

fn evaluate_point(
    cfg: &ScenarioConfig,
    chart: &StableChart,
    theta_star: f64,
    index: usize,
    r: f64,
    theta: f64,
    strict: bool,
) -> PointRow {
    let q0 = [r * theta.cos(), r * theta.sin()];
    let mut reasons = Vec::new();
    let chart_val = chart.query(r, theta);
    let (psi, psi_residual) = match &chart_val {
        Ok(v) => (Some(v.phi), Some(v.residual)),
        Err(e) => {
            reasons.push(format!("chart: {e}"));
            (None, None)
        }
    };
    let mut row = PointRow {
        index,
        r,
        theta0: theta,
        phi0: None,
        psi,
        psi_residual,
        phi_error: None,
        membership_accepted: false,
        membership_inconclusive: false,
        membership_offset: None,
        cone_flag: false,
        clusters: 0,
        value: None,
        omega: None,
        converged: false,
        ode_residual: None,
        pass: false,
        reasons: Vec::new(),
    };
    let res: MultistartResult = match minimize_collision_arc(&cfg.potential, cfg.h, q0, &cfg.minimize_options(Execution::Sequential)) {
        Ok(r) => r,
        Err(e) => {
            reasons.push(format!("minimization: {e}"));
            row.reasons = reasons;
            return row;
        }
    };
    let best = res.best();
    row.phi0 = Some(best.phi0);
    row.clusters = res.cluster_count();
    row.value = Some(best.value);
    row.omega = Some(best.omega);
    row.converged = res.all_converged();
    row.ode_residual = Some(ode_residual(&cfg.potential, best, 0.9));
    if !row.converged {
        reasons.push("minimizer did not reach the stationarity tolerance".into());
    }
    if row.clusters != 1 {
        reasons.push(format!("{} clusters", row.clusters));
    }
    if let Some(p) = psi {
        let err = wrap_angle(best.phi0 - p).abs();
        row.phi_error = Some(err);
        if err > cfg.tolerances.phi_tol {
            reasons.push(format!("|phi0 - psi| = {err:.3e}"));
        }
    }
    if let Some(res) = psi_residual {
        if res > cfg.tolerances.chart_residual {
            reasons.push(format!("chart residual {res:.3e}"));
        }
    }
    match stable_membership(&cfg.potential, cfg.h, &initial_mcgehee(best), theta_star, &cfg.membership_options()) {
        Ok(v) => {
            row.membership_accepted = v.accepted;
            row.membership_inconclusive = v.inconclusive;
            row.membership_offset = v.phi_offset.map(f64::abs);
            row.cone_flag = v.cone_flag;
            if !v.accepted {
                reasons.push(if v.inconclusive { "membership inconclusive".into() } else { "membership rejected".into() });
            }
            if !v.cone_flag {
                reasons.push("orbit leaves the cone".into());
            }
        }
        Err(e) => reasons.push(format!("membership: {e}")),
    }
    row.pass = strict && reasons.is_empty();
    row.reasons = reasons;
    row
}

fn evaluate_inclusion(cfg: &ScenarioConfig, chart: &StableChart, index: usize, r: f64, theta: f64) -> InclusionRow {
    let mut reasons = Vec::new();
    let (psi, psi_residual) = match chart.query(r, theta) {
        Ok(v) => (v.phi, v.residual),
        Err(e) => {
            reasons.push(format!("chart: {e}"));
            (f64::NAN, f64::NAN)
        }
    };
    let mut row = InclusionRow {
        index,
        r,
        theta,
        psi,
        psi_residual,
        phi0: None,
        phi_error: None,
        clusters: 0,
        converged: false,
        pass: false,
        reasons: Vec::new(),
    };
    let q0 = [r * theta.cos(), r * theta.sin()];
    match minimize_collision_arc(&cfg.potential, cfg.h, q0, &cfg.minimize_options(Execution::Sequential)) {
        Ok(res) => {
            let best = res.best();
            row.phi0 = Some(best.phi0);
            row.clusters = res.cluster_count();
            row.converged = res.all_converged();
            let err = wrap_angle(best.phi0 - psi).abs();
            row.phi_error = Some(err);
            if !row.converged {
                reasons.push("minimizer did not reach the stationarity tolerance".into());
            }
            if row.clusters != 1 {
                reasons.push(format!("{} clusters", row.clusters));
            }
            if !(err <= cfg.tolerances.phi_tol) {
                reasons.push(format!("|phi0 - psi| = {err:.3e}"));
            }
        }
        Err(e) => reasons.push(format!("minimization: {e}")),
    }
    row.pass = reasons.is_empty();
    row.reasons = reasons;
    row
}

/// Both inclusions between minimizer initial conditions and the chart.
pub fn verify_main_theorem(cfg: &ScenarioConfig, execution: Execution) -> Result<VerificationReport, ScenarioError> {
    let v = cfg.validate()?;
    let chart = build_chart(&cfg.potential, cfg.h, v.theta_star, &cfg.chart_options(execution))?;
    verify_with_chart(cfg, &chart, execution)
}

/// Verification against an already built chart.
pub fn verify_with_chart(cfg: &ScenarioConfig, chart: &StableChart, execution: Execution) -> Result<VerificationReport, ScenarioError> {
    let v = cfg.validate()?;
    cfg.validate_against(chart)?;
    let grid = cfg.grid(v.theta_star);
    let mut points = execution.map(&grid, |g| evaluate_point(cfg, chart, v.theta_star, g.index, g.r, g.theta, true));
    points.sort_by_key(|p| p.index);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<(usize, f64, f64)> = (0..cfg.inclusion_samples)
        .map(|k| {
            let r = rng.gen_range(0.0..1.0f64).max(1e-3) * cfg.cone.r_bar;
            let th = v.theta_star + (2.0 * rng.gen_range(0.0..1.0f64) - 1.0) * cfg.cone.delta_bar;
            (k, r, th)
        })
        .collect();
    let mut inclusion = execution.map(&samples, |&(k, r, th)| evaluate_inclusion(cfg, chart, k, r, th));
    inclusion.sort_by_key(|p| p.index);

    let base = grid.len();
    let controls_in: Vec<(usize, f64, f64)> =
        cfg.controls.iter().enumerate().map(|(k, p)| (base + k, p.r, p.theta)).collect();
    let mut controls = execution.map(&controls_in, |&(k, r, th)| evaluate_point(cfg, chart, v.theta_star, k, r, th, false));
    controls.sort_by_key(|p| p.index);

    let passed = points.iter().filter(|p| p.pass).count();
    let inc_passed = inclusion.iter().filter(|p| p.pass).count();
    let fmax = |it: &mut dyn Iterator<Item = Option<f64>>| it.flatten().fold(0.0, f64::max);
    let aggregates = Aggregates {
        points: points.len(),
        passed,
        pass_rate: passed as f64 / points.len().max(1) as f64,
        max_phi_error: fmax(&mut points.iter().map(|p| p.phi_error)),
        max_chart_residual: fmax(&mut points.iter().map(|p| p.psi_residual)),
        max_membership_offset: fmax(&mut points.iter().map(|p| p.membership_offset)),
        any_multiplicity: points.iter().chain(&controls).any(|p| p.clusters > 1)
            || inclusion.iter().any(|p| p.clusters > 1),
        non_converged: points.iter().filter(|p| !p.converged).count()
            + inclusion.iter().filter(|p| !p.converged).count(),
        inclusion_points: inclusion.len(),
        inclusion_passed: inc_passed,
        inclusion_pass_rate: if inclusion.is_empty() { 1.0 } else { inc_passed as f64 / inclusion.len() as f64 },
        inclusion_max_phi_error: fmax(&mut inclusion.iter().map(|p| p.phi_error)),
    };
    Ok(VerificationReport {
        theta_star: v.theta_star,
        h: cfg.h,
        r_bar: cfg.cone.r_bar,
        delta_bar: cfg.cone.delta_bar,
        r_loc: chart.r_loc,
        delta_loc: chart.delta_loc,
        points,
        inclusion,
        controls,
        aggregates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Flow,
    Equilibria,
    Chart,
    Minimize,
    Verify,
    Convergence,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Flow => "flow",
            Self::Equilibria => "equilibria",
            Self::Chart => "chart",
            Self::Minimize => "minimize",
            Self::Verify => "verify",
            Self::Convergence => "convergence",
        }
    }
}

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub h: Option<f64>,
    pub r_loc: Option<f64>,
    pub delta_loc: Option<f64>,
    pub seeds: Option<usize>,
    pub q0_r: Option<f64>,
    pub q0_theta: Option<f64>,
    pub nodes: Option<usize>,
    /// Number of multistart initial guesses.
    pub multistart: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<(), ScenarioError> {
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(r) = self.r_loc {
            cfg.chart.r_loc = Some(r);
        }
        if let Some(d) = self.delta_loc {
            cfg.chart.delta_loc = Some(d);
        }
        if let Some(s) = self.seeds {
            cfg.chart.seeds = Some(s);
        }
        if let Some(n) = self.nodes {
            cfg.discretization.nodes = n;
        }
        if let Some(m) = self.multistart {
            if m == 0 {
                return Err(invalid("--multistart must be at least 1"));
            }
            cfg.discretization.multistart_amplitudes = multistart_amplitudes(m);
        }
        if self.q0_r.is_some() || self.q0_theta.is_some() {
            let prev = cfg.minimize.as_ref().map(|m| (m.q0.r, m.q0.theta));
            let r = self.q0_r.or(prev.map(|p| p.0)).ok_or_else(|| invalid("--q0-theta given without --q0-r"))?;
            let theta = self.q0_theta.or(prev.map(|p| p.1)).unwrap_or(0.0);
            cfg.minimize = Some(MinimizeConfig { q0: PolarPoint { r, theta } });
        }
        Ok(())
    }
}

/// Unsigned amplitudes giving `m` starts: `0, ±0.1, ±0.2, …` (the last
/// amplitude enters with one sign only when `m` is even).
pub fn multistart_amplitudes(m: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut count = 1;
    let mut k = 1;
    while count < m {
        out.push(0.1 * k as f64);
        count += 2;
        k += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub config: ScenarioConfig,
    pub outputs: Vec<OutputFile>,
    pub timings: Vec<(String, f64)>,
    pub exit_code: i32,
}

/// Files written by one subcommand and the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub exit_code: i32,
    pub summary: String,
}

struct Writer {
    dir: PathBuf,
    files: Vec<OutputFile>,
    paths: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, ScenarioError> {
        fs::create_dir_all(dir).map_err(|source| ScenarioError::Io { path: dir.into(), source })?;
        Ok(Self { dir: dir.into(), files: Vec::new(), paths: Vec::new() })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), ScenarioError> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
        self.files.push(OutputFile { file: name.into(), sha256: hex::encode(Sha256::digest(content.as_bytes())) });
        self.paths.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ScenarioError> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlowSummary {
    start: McGeheeState,
    termination: crate::mcgehee::Termination,
    steps: usize,
    final_state: McGeheeState,
    final_distance_to_equilibrium: f64,
    closest_approach: f64,
    max_energy_residual: f64,
    final_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MinimizeSummary {
    q0: [f64; 2],
    h: f64,
    nodes: usize,
    value: f64,
    omega: f64,
    phi0: f64,
    v0: [f64; 2],
    collision_time: f64,
    clusters: Vec<variational::Cluster>,
    residuals: MinimizeResiduals,
    runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MinimizeResiduals {
    ode: f64,
    stationarity: f64,
    initial_energy: f64,
    length_identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunSummary {
    amplitude: f64,
    value: f64,
    phi0: f64,
    iterations: usize,
    stationarity: f64,
    converged: bool,
    cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChartSummary {
    theta_star: f64,
    h: f64,
    r_loc: f64,
    delta_loc: f64,
    curves: usize,
    samples: usize,
    eigen_slope: f64,
    psi_at_equilibrium: f64,
    slope_at_equilibrium: f64,
}

/// Runs one subcommand and writes its outputs plus `manifest.json`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    which: Subcommand,
    out_dir: &Path,
    execution: Execution,
) -> Result<RunOutcome, ScenarioError> {
    let start = Instant::now();
    let mut timings = Vec::new();
    let v = cfg.validate()?;
    let mut w = Writer::new(out_dir)?;
    let spec = &cfg.potential;
    let h = cfg.h;
    let mut exit_code = EXIT_OK;
    let summary: String;

    match which {
        Subcommand::Equilibria => {
            let records = equilibria::enumerate(spec)?;
            w.write("equilibria.csv", &equilibria::to_csv(&records))?;
            w.json("equilibria.json", &records)?;
            summary = format!("{} equilibria", records.len());
        }
        Subcommand::Chart => {
            let chart = build_chart(spec, h, v.theta_star, &cfg.chart_options(execution))?;
            timings.push(("chart".into(), start.elapsed().as_secs_f64()));
            let at0 = chart.query(0.0, v.theta_star)?;
            w.write("chart.csv", &chart.to_csv())?;
            w.json(
                "chart.json",
                &ChartSummary {
                    theta_star: v.theta_star,
                    h,
                    r_loc: chart.r_loc,
                    delta_loc: chart.delta_loc,
                    curves: chart.curves,
                    samples: chart.samples.len(),
                    eigen_slope: chart.slope,
                    psi_at_equilibrium: at0.phi,
                    slope_at_equilibrium: at0.gradient[1],
                },
            )?;
            summary = format!("chart with {} samples on {} orbits", chart.samples.len(), chart.curves);
        }
        Subcommand::Flow => {
            let fc = cfg.flow.as_ref().ok_or_else(|| invalid("the flow subcommand needs a \"flow\" section"))?;
            let state = match &fc.start {
                FlowStart::Mcgehee { r, theta, phi } => McGeheeState::new(*r, *theta, *phi),
                FlowStart::Cartesian { q, p } => to_mcgehee(spec, h, &CartesianState { q: *q, p: *p })?,
                FlowStart::Manifold { r, theta } => {
                    let probe = McGeheeState::new(*r, *theta, theta + PI);
                    let verdict = stable_membership(spec, h, &probe, v.theta_star, &cfg.membership_options())?;
                    let phi = verdict
                        .phi_manifold
                        .ok_or_else(|| invalid("no stable-manifold point found above the flow start"))?;
                    McGeheeState::new(*r, *theta, phi)
                }
            };
            let mut events = fc.events.clone();
            if events.is_empty() {
                events.push(Event::EquilibriumConvergence {
                    theta_star: v.theta_star,
                    eps: cfg.tolerances.membership_eps,
                    dwell: 5,
                });
                events.push(Event::AngularWindow { center: v.theta_star, half_width: v.delta_cone });
            }
            let dir = if fc.backward { Direction::Backward } else { Direction::Forward };
            let mut traj = integrate(spec, h, &state, fc.horizon, dir, &events, &Tolerances::uniform(fc.tol));
            let t = physical_time(spec, h, &traj, 0.0);
            let final_time = *t.last().unwrap();
            traj.t = Some(t);
            let res = traj.energy_residuals(spec, h);
            let closest = traj
                .states
                .iter()
                .map(|s| McGeheeState::new(s[0], s[1], s[2]).distance_to_ingoing(v.theta_star))
                .fold(f64::INFINITY, f64::min);
            let last = traj.last_state();
            w.write("trajectory.csv", &traj.to_csv(spec, h))?;
            w.json(
                "flow.json",
                &FlowSummary {
                    start: state,
                    termination: traj.termination,
                    steps: traj.len(),
                    final_state: last,
                    final_distance_to_equilibrium: last.distance_to_ingoing(v.theta_star),
                    closest_approach: closest,
                    max_energy_residual: res.iter().fold(0.0, |a, b| a.max(b.abs())),
                    final_time,
                },
            )?;
            summary = format!("{:?} after {} steps", traj.termination, traj.len());
        }
        Subcommand::Minimize => {
            let mc = cfg
                .minimize
                .as_ref()
                .ok_or_else(|| invalid("the minimize subcommand needs --q0-r/--q0-theta or a \"minimize\" section"))?;
            let q0 = mc.q0.cartesian();
            let res = minimize_collision_arc(spec, h, q0, &cfg.minimize_options(execution))?;
            timings.push(("minimize".into(), start.elapsed().as_secs_f64()));
            let best = res.best();
            let arc = to_physical(spec, h, best);
            let length = variational::jacobi_length(spec, h, &best.path)?;
            w.write("path.csv", &path_csv(&best.path))?;
            w.json(
                "minimize.json",
                &MinimizeSummary {
                    q0,
                    h,
                    nodes: cfg.discretization.nodes,
                    value: best.value,
                    omega: best.omega,
                    phi0: best.phi0,
                    v0: arc.v0,
                    collision_time: arc.collision_time,
                    clusters: res.clusters.clone(),
                    residuals: MinimizeResiduals {
                        ode: ode_residual(spec, best, 0.9),
                        stationarity: best.stationarity,
                        initial_energy: arc.energy_residual,
                        length_identity: (2.0 * best.value - length * length).abs() / (2.0 * best.value),
                    },
                    runs: res
                        .runs
                        .iter()
                        .map(|r| RunSummary {
                            amplitude: r.start_amplitude,
                            value: r.value,
                            phi0: r.phi0,
                            iterations: r.iterations,
                            stationarity: r.stationarity,
                            converged: r.converged,
                            cluster: r.cluster_id,
                        })
                        .collect(),
                },
            )?;
            if !res.all_converged() {
                exit_code = EXIT_NONCONVERGENCE;
            }
            summary = format!("M = {:.10}, phi0 = {:.8}, {} cluster(s)", best.value, best.phi0, res.cluster_count());
        }
        Subcommand::Convergence => {
            let cc = cfg
                .convergence
                .as_ref()
                .ok_or_else(|| invalid("the convergence subcommand needs a \"convergence\" section"))?;
            if cc.steps == 0 {
                return Err(invalid("convergence.steps must be at least 1"));
            }
            let qs = cc.q_star.cartesian();
            let seq: Vec<[f64; 2]> = (1..=cc.steps)
                .map(|k| {
                    let f = 0.5f64.powi(k as i32 - 1);
                    [qs[0] + f * cc.offset[0], qs[1] + f * cc.offset[1]]
                })
                .collect();
            let energies: Vec<f64> = (1..=cc.steps)
                .map(|k| h + 0.5f64.powi(k as i32 - 1) * cc.energy_offset)
                .collect();
            let report = convergence_study(
                spec,
                h,
                qs,
                &seq,
                (cc.energy_offset != 0.0).then_some(&energies[..]),
                &cfg.minimize_options(execution),
            )?;
            timings.push(("convergence".into(), start.elapsed().as_secs_f64()));
            let mut csv = String::from("k,x,y,h,value,phi0,h1_to_limit,sup_to_limit,h1_to_previous\n");
            for (k, p) in report.points.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e},{}\n",
                    k + 1,
                    p.q[0],
                    p.q[1],
                    p.h,
                    p.value,
                    p.phi0,
                    p.h1_to_limit,
                    p.sup_to_limit,
                    p.h1_to_previous.map(|d| format!("{d:.6e}")).unwrap_or_default()
                ));
            }
            w.write("convergence.csv", &csv)?;
            w.json("convergence.json", &report)?;
            if !report.h1_monotone {
                exit_code = EXIT_VERIFICATION;
            }
            summary = format!("final H1 distance {:.3e}, monotone {}", report.final_h1, report.h1_monotone);
        }
        Subcommand::Verify => {
            let chart = build_chart(spec, h, v.theta_star, &cfg.chart_options(execution))?;
            timings.push(("chart".into(), start.elapsed().as_secs_f64()));
            let report = verify_with_chart(cfg, &chart, execution)?;
            timings.push(("verify".into(), start.elapsed().as_secs_f64()));
            w.json("report.json", &report)?;
            w.write("points.csv", &report.points_csv())?;
            w.write("inclusion.csv", &report.inclusion_csv())?;
            exit_code = report.exit_code();
            summary = format!(
                "pass rate {:.4} ({}/{}), reverse inclusion {}/{}, max |phi0 - psi| {:.3e}",
                report.aggregates.pass_rate,
                report.aggregates.passed,
                report.aggregates.points,
                report.aggregates.inclusion_passed,
                report.aggregates.inclusion_points,
                report.aggregates.max_phi_error
            );
        }
    }
    timings.push(("total".into(), start.elapsed().as_secs_f64()));
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: which.as_str().into(),
        config_sha256: cfg.content_hash(),
        config: cfg.clone(),
        outputs: w.files.clone(),
        timings,
        exit_code,
    };
    w.json("manifest.json", &manifest)?;
    Ok(RunOutcome { out_dir: out_dir.into(), files: w.paths, exit_code, summary })
}

/// Cartesian lift of a McGehee state.
pub fn lift(spec: &PotentialSpec, h: f64, state: &McGeheeState) -> Result<CartesianState, ScenarioError> {
    Ok(from_mcgehee(spec, h, state)?)
}

/// True when `r` lies inside the Lagrange–Jacobi disc.
pub fn inside_lagrange_jacobi(spec: &PotentialSpec, h: f64, r: f64) -> bool {
    match spec.lagrange_jacobi_radius(h) {
        LagrangeJacobiRadius::Finite(r_lj) => r < r_lj,
        LagrangeJacobiRadius::Unbounded => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_config_round_trips() {
        let cfg = ScenarioConfig::benchmark();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.content_hash(), back.content_hash());
    }

    #[test]
    fn grid_stays_inside_the_open_cone() {
        let cfg = ScenarioConfig::benchmark();
        let g = cfg.grid(0.0);
        assert_eq!(g.len(), 121);
        assert!(g.iter().all(|p| p.r > 0.0 && p.r < 0.25 && p.theta.abs() < 0.15));
        assert!(g.iter().any(|p| p.theta == 0.0));
    }

    #[test]
    fn validation_rejects_bad_boxes() {
        let mut cfg = ScenarioConfig::benchmark();
        cfg.cone.r_bar = 2.0;
        assert!(matches!(cfg.validate(), Err(ScenarioError::Invalid(_))));
        let mut cfg = ScenarioConfig::benchmark();
        cfg.grids.n_r = 0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), EXIT_VALIDATION);
        let mut cfg = ScenarioConfig::benchmark();
        cfg.potential = PotentialSpec::new(1.0, crate::potential::AngularPotential::constant(1.0));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(ScenarioConfig::benchmark()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ScenarioConfig>(v).is_err());
    }

    #[test]
    fn multistart_counts() {
        assert_eq!(multistart_amplitudes(1), vec![0.0]);
        assert_eq!(multistart_amplitudes(5), vec![0.0, 0.1, 0.2]);
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ScenarioConfig::benchmark();
        Overrides { h: Some(-0.25), q0_r: Some(0.1), nodes: Some(64), ..Default::default() }
            .apply(&mut cfg)
            .unwrap();
        assert_eq!(cfg.h, -0.25);
        assert_eq!(cfg.discretization.nodes, 64);
        assert_eq!(cfg.minimize.unwrap().q0, PolarPoint { r: 0.1, theta: 0.0 });
    }
}
