use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levy_spde_cli::{parse_override, run_command, CliError, Command, RunOutcome, RunPlan};

#[derive(Parser)]
#[command(name = "levy-spde", version, about = "Monte Carlo runs for Lévy-driven nonautonomous heat equations")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Ensemble of ‖Y(t)‖² from Y(0) = 0.
    Simulate(Common),
    /// Picard iteration with common random numbers.
    Picard(Common),
    /// Coupled-noise gap between two initial states.
    Stability(Common),
    /// Weighted averages of the pseudo part of the decomposition.
    Ergodic(Common),
    /// Condition table for the declared constants.
    Check(Common),
    /// Conditions, Picard, ergodic and stability stages in order.
    ReproduceExample(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the shipped heat example when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exponential weight for stability gaps (default 0.05·δ).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Dotted-key override, e.g. `--set origin.a=[0.2,0.2,0.2,0.2,0.2,0.2]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn plan(sub: Sub) -> Result<RunPlan, CliError> {
    let (command, c) = match sub {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Picard(c) => (Command::Picard, c),
        Sub::Stability(c) => (Command::Stability, c),
        Sub::Ergodic(c) => (Command::Ergodic, c),
        Sub::Check(c) => (Command::Check, c),
        Sub::ReproduceExample(c) => (Command::ReproduceExample, c),
    };
    let mut plan = RunPlan::new(command, c.out);
    plan.scenario_path = c.scenario;
    plan.epsilon = c.epsilon;
    for s in &c.set {
        plan.overrides.push(parse_override(s)?);
    }
    let flags = [
        ("mc.n_paths", c.paths.map(|v| v.to_string())),
        ("mc.dt", c.dt.map(|v| format!("{v:?}"))),
        ("mc.horizon", c.horizon.map(|v| format!("{v:?}"))),
        ("mc.root_seed", c.seed.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            plan.overrides.push((key.to_string(), v));
        }
    }
    Ok(plan)
}

fn report(outcome: &RunOutcome) {
    if !outcome.conditions.is_empty() {
        println!("{:<20} {:>12} {:>12} {:>8} {:>10}", "condition", "lhs", "rhs", "pass", "L max");
        for c in &outcome.conditions {
            let name = serde_json::to_value(c.name).ok().and_then(|v| v.as_str().map(String::from));
            println!(
                "{:<20} {:>12.6} {:>12.6} {:>8} {:>10.6}",
                name.unwrap_or_default(),
                c.lhs,
                c.rhs,
                c.pass,
                c.l_threshold
            );
        }
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for f in &outcome.failures {
        eprintln!("FAILED: {f}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = plan(cli.command).and_then(|p| run_command(&p));
    let code = match result {
        Ok(outcome) => {
            report(&outcome);
            outcome.code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
