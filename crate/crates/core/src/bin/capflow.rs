use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use capflow::harness::{run_command, Command, ExperimentConfig, Outputs, Variant};
use capflow::signals::ElectrodeSet;

#[derive(Parser)]
#[command(name = "capflow", version, about = "Capacitive grasp classification and closed-loop pouring on a simulated gripper")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grasp dataset, random forest, confusion matrices and ablations.
    ClassifySuite(Common),
    /// Train every controller variant and evaluate it on the pour grid.
    PourSuite(Common),
    /// Train one weight predictor and save it to --out.
    TrainPwp(Common),
    /// Fit overpour polynomials with the predictor in --out (trained if absent).
    FitOwe(Common),
    /// One closed-loop pour with a trace plot.
    PourOnce(Common),
    /// One scripted simulator trial written as a log plus plots.
    SimTrial(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `out` in the config, then ./capflow-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// full, no_owe, no_offsets or bc. For pour-suite, evaluates only this one.
    #[arg(long)]
    variant: Option<Variant>,
    /// `all`, a canonical count (10, 6, 2, 1) or a 1-based list such as `1,3,5`.
    #[arg(long)]
    electrodes: Option<String>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (cmd, a) = match cli.command {
        Cmd::ClassifySuite(a) => (Command::ClassifySuite, a),
        Cmd::PourSuite(a) => (Command::PourSuite, a),
        Cmd::TrainPwp(a) => (Command::TrainPwp, a),
        Cmd::FitOwe(a) => (Command::FitOwe, a),
        Cmd::PourOnce(a) => (Command::PourOnce, a),
        Cmd::SimTrial(a) => (Command::SimTrial, a),
    };
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
        if cmd == Command::PourSuite {
            cfg.pouring.variants = vec![v];
        }
    }
    if let Some(e) = &a.electrodes {
        cfg.electrodes = e.parse::<ElectrodeSet>().with_context(|| format!("--electrodes {e}"))?;
    }
    let dir = a.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("capflow-out"));
    let mut out = Outputs::create(&dir)?;
    let m = run_command(cmd, &cfg, &mut out)?;
    println!("wrote {} files to {} (config {})", m.outputs.len() + 1, dir.display(), &m.config_hash[..12]);
    Ok(())
}
