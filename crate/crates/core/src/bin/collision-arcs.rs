use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use collision_arcs::exec::{with_jobs, Execution};
use collision_arcs::scenarios::{run_scenario, Overrides, ScenarioConfig, Subcommand, EXIT_VALIDATION};

#[derive(Parser, Debug)]
#[command(name = "collision-arcs", version, about = "Collision arcs of homogeneous planar potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the scenario's `output_dir` or `out/<subcommand>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (1 runs sequentially).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(ClapSubcommand, Debug)]
enum Command {
    /// Integrate the regularized flow from the scenario's `flow` start.
    Flow {
        #[command(flatten)]
        common: Common,
    },
    /// List the collision-manifold equilibria with their classification.
    Equilibria {
        #[command(flatten)]
        common: Common,
    },
    /// Build the local stable-manifold chart.
    Chart {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        h: Option<f64>,
        #[arg(long)]
        r_loc: Option<f64>,
        #[arg(long)]
        delta_loc: Option<f64>,
        /// Backward-shooting seeds per side.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Minimize the discrete Maupertuis functional from one start.
    Minimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        q0_r: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        q0_theta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        h: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
        /// Number of multistart initial paths.
        #[arg(long)]
        multistart: Option<usize>,
    },
    /// Check both inclusions between minimizers and the chart on the cone grid.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Minimizers along a sequence of starts approaching a limit point.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (which, common, overrides) = match cli.command {
        Command::Flow { common } => (Subcommand::Flow, common, Overrides::default()),
        Command::Equilibria { common } => (Subcommand::Equilibria, common, Overrides::default()),
        Command::Verify { common } => (Subcommand::Verify, common, Overrides::default()),
        Command::Convergence { common } => (Subcommand::Convergence, common, Overrides::default()),
        Command::Chart { common, h, r_loc, delta_loc, seeds } => {
            (Subcommand::Chart, common, Overrides { h, r_loc, delta_loc, seeds, ..Default::default() })
        }
        Command::Minimize { common, q0_r, q0_theta, h, nodes, multistart } => (
            Subcommand::Minimize,
            common,
            Overrides { h, q0_r, q0_theta, nodes, multistart, ..Default::default() },
        ),
    };

    let mut cfg = match ScenarioConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    if let Err(e) = overrides.apply(&mut cfg) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let out = common
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(which.as_str()));
    let execution = if common.jobs == Some(1) { Execution::Sequential } else { Execution::Parallel };

    match with_jobs(common.jobs, || run_scenario(&cfg, which, &out, execution)) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
