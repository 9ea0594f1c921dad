//! Command-line front end: config parsing, subcommands, deterministic
//! orchestration, artifact output.

mod commands;
mod config;

use anyhow::Result;
use clap::{Parser, Subcommand};
use config::{KeyMap, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dpqr", version, about = "Distributed private quantile regression harness")]
struct Cli {
    /// Configuration file (flat key = value with [sections])
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force privacy on for every stage
    #[arg(long, global = true, conflicts_with = "no_dp")]
    dp: bool,
    /// Force privacy off for every stage
    #[arg(long = "no-dp", global = true)]
    no_dp: bool,
    /// Privacy budget epsilon override
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Privacy budget delta override
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Quantile level override
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Machine count override
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Selection sparsity override
    #[arg(long, global = true)]
    sparsity: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset drawn from the configured design
    Generate,
    /// Run the private sparse estimation pipeline
    Estimate,
    /// Estimation plus debiased coordinate confidence intervals
    Infer,
    /// Estimation, inference, and the multiplier bootstrap
    Bootstrap,
    /// Multi-replicate experiment grid with CSV outputs
    Experiment,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut map = match &cli.config {
        Some(path) => KeyMap::load(path)?,
        None => KeyMap::default(),
    };
    if let Some(seed) = cli.seed {
        map.set("run.seed", seed);
    }
    if let Some(out) = &cli.out {
        map.set("run.out", out.display());
    }
    if let Some(threads) = cli.threads {
        map.set("run.threads", threads);
    }
    if cli.dp {
        map.set("estimate.dp", "true");
        map.set("infer.dp", "true");
        map.set("bootstrap.dp", "true");
    }
    if cli.no_dp {
        map.set("estimate.dp", "false");
        map.set("infer.dp", "false");
        map.set("bootstrap.dp", "false");
    }
    if let Some(eps) = cli.eps {
        map.set("privacy.eps", eps);
    }
    if let Some(delta) = cli.delta {
        map.set("privacy.delta", delta);
    }
    if let Some(tau) = cli.tau {
        map.set("data.tau", tau);
    }
    if let Some(m) = cli.m {
        map.set("data.m", m);
    }
    if let Some(s) = cli.sparsity {
        map.set("estimate.sparsity", s);
    }
    RunConfig::from_map(&map)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .ok();
    }
    let outcome = match cli.command {
        Command::Generate => commands::cmd_generate(&cfg)?,
        Command::Estimate => commands::cmd_estimate(&cfg)?,
        Command::Infer => commands::cmd_infer(&cfg)?,
        Command::Bootstrap => commands::cmd_bootstrap(&cfg)?,
        Command::Experiment => commands::cmd_experiment(&cfg)?,
    };
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{{\"error\":{}}}", json_escape(&format!("{e:#}")));
        std::process::exit(1);
    }
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
