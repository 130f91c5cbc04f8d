use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjb_core::config::RunConfig;
use hjb_core::control::Policy;
use hjb_core::pipeline::{self, Manifest};
use hjb_core::{Error, Result};

#[derive(Parser)]
#[command(name = "hjb-ensemble", version, about = "Ensemble HJB value-network training and closed-loop control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file, or a JSON manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labelled state mesh.
    GenData(Common),
    /// Warm-start the base network on the mesh labels.
    WarmStart(Common),
    /// Refine the ensemble against the HJB residual.
    TrainEnsemble {
        #[command(flatten)]
        common: Common,
        /// Weight of the HJB residual term.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Closed-loop simulation under one policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<Policy>,
        /// Nominal initial condition, e.g. `--ic=-10,-10`.
        #[arg(long, value_parser = parse_ic, allow_hyphen_values = true)]
        ic: Option<[f64; 2]>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Export evaluation surfaces for one member.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        member: Option<usize>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig(Common),
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_ic(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => {
            let a = a.parse::<f64>().map_err(|e| format!("x1: {e}"))?;
            let b = b.parse::<f64>().map_err(|e| format!("x2: {e}"))?;
            Ok([a, b])
        }
        _ => Err(format!("expected `x1,x2`, got `{s}`")),
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<Option<Manifest>> {
    let manifest = match cli.command {
        Command::GenData(c) => pipeline::gen_data(&load(&c)?)?,
        Command::WarmStart(c) => pipeline::warm_start(&load(&c)?)?,
        Command::TrainEnsemble { common, alpha } => {
            let mut cfg = load(&common)?;
            if let Some(a) = alpha {
                cfg.hjb.alpha = a;
            }
            pipeline::train_ensemble_cmd(&cfg)?
        }
        Command::Simulate {
            common,
            policy,
            ic,
            noise_sigma,
        } => {
            let mut cfg = load(&common)?;
            if let Some(p) = policy {
                cfg.sim.policy = p;
            }
            if let Some(x) = ic {
                cfg.sim.ic = x;
            }
            if let Some(s) = noise_sigma {
                cfg.sim.noise_sigma = s;
            }
            pipeline::simulate_cmd(&cfg)?
        }
        Command::Evaluate { common, member } => {
            let mut cfg = load(&common)?;
            if let Some(m) = member {
                cfg.eval.member = m;
            }
            pipeline::evaluate_cmd(&cfg)?
        }
        Command::ShowConfig(c) => {
            let cfg = load(&c)?;
            cfg.validate()?;
            print!("{}", cfg.to_toml_string()?);
            return Ok(None);
        }
    };
    Ok(Some(manifest))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Some(m)) => {
            let _ = pipeline::summarize(&m, &mut std::io::stdout());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
