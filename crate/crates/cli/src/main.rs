use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aim_core::control::{lane_names, ControllerKind};
use aim_core::drl::encode_state;
use aim_core::geometry::Movement;
use aim_core::harness::{self, build_geometry, run_episode, ExperimentConfig};
use aim_core::metrics::{summarize, trips_to_csv, SummaryStats};
use aim_core::seeding::derive_seed;
use aim_core::simcore::World;

/// Intersection simulator with reservation-based platoon control.
#[derive(Parser)]
#[command(name = "aim", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set dqn.epsilon=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the platoon-size Q-network.
    Train,
    /// Evaluate a trained checkpoint greedily on the evaluation seeds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run one non-learning controller on the evaluation seeds.
    Baseline {
        /// webster, fcfs, fixed3, fixed6, fixed9 or fixed12.
        #[arg(long)]
        controller: String,
    },
    /// Run every method on the evaluation seeds and write the comparison table.
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the movement conflict matrix as CSV.
    DumpConflicts,
    /// Print the state grids seen at `time` seconds with every lane held.
    DumpState {
        #[arg(long, default_value_t = 60.0)]
        time: f64,
        /// Target lane code, e.g. NS.
        #[arg(long)]
        target: Option<String>,
    },
}

fn print_summary(label: &str, seed: u64, s: &SummaryStats, censored: usize) {
    println!(
        "{label} seed={seed} vehicles={} mean_travel={:.2}s p95_travel={:.2}s mean_fuel={:.2}mL mean_wait={:.2}s censored={censored}",
        s.vehicles, s.mean_travel_time, s.p95_travel_time, s.mean_fuel_ml, s.mean_wait
    );
}

fn run(cli: Cli) -> Result<()> {
    let config = ExperimentConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    match cli.command {
        Command::Train => {
            let out = harness::train(&config, |row| {
                println!(
                    "episode {} decisions={} reward={:.4} loss={:.5} vehicles={}",
                    row.episode, row.decisions, row.mean_reward, row.mean_loss, row.vehicles
                );
            })?;
            println!("checkpoint written to {}", out.checkpoint.display());
        }
        Command::Eval { checkpoint } => {
            let mut agent = harness::load_agent(&config, &checkpoint)?;
            for r in harness::evaluate(&config, &mut agent, &config.eval_seeds)? {
                let s = summarize(&r.trips, &r.releases)?;
                print_summary(config.controller.key(), r.seed, &s, r.in_network + r.backlog);
            }
        }
        Command::Baseline { controller } => {
            let kind = ControllerKind::from_key(&controller)
                .with_context(|| format!("unknown controller `{controller}`"))?;
            if kind.uses_network() {
                bail!("`{controller}` needs a checkpoint; use `eval` instead");
            }
            let dir = config.output_dir();
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let geometry = build_geometry(&config)?;
            for &seed in &config.eval_seeds {
                let r = run_episode(&config, &geometry, kind, seed, None)?;
                let path = dir.join(format!("trips_{}_seed{seed}.csv", kind.key()));
                std::fs::write(&path, trips_to_csv(&r.trips)).with_context(|| format!("writing {}", path.display()))?;
                print_summary(kind.key(), seed, &summarize(&r.trips, &r.releases)?, r.in_network + r.backlog);
            }
        }
        Command::Compare { checkpoint } => {
            let mut agent = harness::load_agent(&config, &checkpoint)?;
            let out = harness::compare_all(&config, &mut agent, &ControllerKind::ALL, |kind, r| {
                eprintln!("{kind} seed {} done: {} trips", r.seed, r.trips.len());
            })?;
            print!("{}", out.report.to_text());
            println!("results written to {}", config.output_dir().display());
        }
        Command::DumpConflicts => {
            let geometry = build_geometry(&config)?;
            print!("{}", geometry.conflicts.to_csv());
        }
        Command::DumpState { time, target } => {
            let target = match target {
                Some(code) => Some(
                    Movement::from_code(&code)
                        .with_context(|| format!("unknown lane `{code}`"))?
                        .entry_lane(),
                ),
                None => None,
            };
            let geometry = build_geometry(&config)?;
            let mut world = World::new(
                geometry,
                config.dynamics.clone(),
                config.fuel.clone(),
                &config.flows,
                derive_seed(config.seed, &[0xA11]),
                time,
            );
            while !world.clock.finished() {
                world.spawn();
                world.advance()?;
            }
            print!("{}", encode_state(&world, target, &config.dqn.encoder).to_csv(&lane_names()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
