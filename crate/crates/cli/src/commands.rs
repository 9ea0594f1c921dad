//! Subcommand implementations and run manifests.

use crate::config::{DatasetFormat, RunConfig};
use anyhow::{anyhow, Context, Result};
use dpqr::budget::PrivacyBudget;
use dpqr::data::{partition, Dataset};
use dpqr::engine::dp_sparse_estimate;
use dpqr::format;
use dpqr::sampling::{streams, RngStream};
use dpqr::sim::{
    self, aggregate, generate, l2_error, run_experiment, run_replicate, ExperimentCell,
    ReplicateOutput,
};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub struct CommandOutcome {
    pub files: Vec<PathBuf>,
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))
}

fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    extras: &[(String, String)],
    path: &Path,
) -> Result<()> {
    let mut text = cfg.echo();
    let _ = writeln!(text, "\n[manifest]");
    let _ = writeln!(text, "command = {command}");
    let _ = writeln!(text, "version = {}", env!("CARGO_PKG_VERSION"));
    for (k, v) in extras {
        for (i, line) in v.lines().enumerate() {
            let _ = writeln!(text, "{k}.{i} = {line}");
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset_path {
        Some(path) => {
            let is_binary = path.extension().map(|e| e == "bin").unwrap_or(false);
            if is_binary {
                Ok(format::read_dataset_binary(path)?)
            } else {
                Ok(format::read_dataset_csv(path)?)
            }
        }
        None => {
            let seed = sim::replicate_seed(cfg.seed, &cfg.design.id, 0);
            let mut rng = RngStream::new(seed, streams::DATA);
            Ok(generate(&cfg.design, &mut rng)?)
        }
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<CommandOutcome> {
    ensure_out(cfg)?;
    let data = load_or_generate(cfg)?;
    let data_path = match cfg.dataset_format {
        DatasetFormat::Csv => {
            let p = cfg.out.join("data.csv");
            format::write_dataset_csv(&data, &p)?;
            p
        }
        DatasetFormat::Binary => {
            let p = cfg.out.join("data.bin");
            format::write_dataset_binary(&data, &p)?;
            p
        }
    };
    let manifest = cfg.out.join("manifest.txt");
    write_manifest(
        cfg,
        "generate",
        &[
            ("rows".into(), data.n().to_string()),
            ("columns".into(), (data.dim() + 1).to_string()),
        ],
        &manifest,
    )?;
    Ok(CommandOutcome { files: vec![data_path, manifest] })
}

/// Shared estimate/infer/bootstrap driver; stages are selected by the config.
fn run_pipeline(cfg: &RunConfig, command: &str) -> Result<(ReplicateOutput, CommandOutcome)> {
    ensure_out(cfg)?;
    let out = if cfg.dataset_path.is_some() {
        // file-backed dataset: estimation only, no regeneration
        let data = load_or_generate(cfg)?;
        if data.dim() != cfg.design.p + 1 {
            return Err(anyhow!(
                "dataset has {} covariate columns but config says p = {}",
                data.dim() - 1,
                cfg.design.p
            ));
        }
        let seed = sim::replicate_seed(cfg.seed, &cfg.design.id, 0);
        let mut prng = RngStream::new(seed, streams::PARTITION);
        let plan = partition(&data, cfg.design.m, &mut prng)?;
        let est_cfg = cfg.settings.estimation_config(&cfg.design, cfg.budget)?;
        let ledger = dpqr::budget::BudgetLedger::new(cfg.budget);
        let mut coord_rng = RngStream::new(seed, streams::COORDINATOR);
        let started = std::time::Instant::now();
        let outcome =
            dp_sparse_estimate(&data, &plan, &est_cfg, None, &mut coord_rng, Some(&ledger))?;
        let l2 = l2_error(&outcome.estimate.values, &cfg.design.beta_true)?;
        ReplicateOutput {
            l2,
            estimate: outcome.estimate,
            intervals: Vec::new(),
            coordinate_stats: Vec::new(),
            bootstrap_all_covered: None,
            bootstrap_mean_width: None,
            ledgers: vec![("estimate".into(), ledger.to_string())],
            secs: started.elapsed().as_secs_f64(),
        }
    } else {
        run_replicate(&cfg.design, &cfg.settings, cfg.budget, cfg.seed, 0)?
    };

    let mut files = Vec::new();
    let est_path = cfg.out.join("estimate.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(fs::File::create(&est_path)?);
        writeln!(w, "j,value,in_support")?;
        for (j, v) in out.estimate.values.iter().enumerate() {
            let in_support = out.estimate.support.contains(&j);
            writeln!(w, "{j},{v},{}", if in_support { 1 } else { 0 })?;
        }
    }
    files.push(est_path);

    if !out.intervals.is_empty() {
        let intervals_path = cfg.out.join("intervals.csv");
        let covered: Vec<bool> = out
            .intervals
            .iter()
            .map(|r| {
                cfg.design
                    .beta_true
                    .get(r.coordinate)
                    .map(|t| r.covers(*t))
                    .unwrap_or(false)
            })
            .collect();
        format::write_intervals(&out.intervals, Some(&covered), &intervals_path)?;
        files.push(intervals_path);
    }

    let mut extras: Vec<(String, String)> = Vec::new();
    extras.push(("result_l2".into(), format!("{}", out.l2)));
    if let Some(w) = out.bootstrap_mean_width {
        extras.push(("bootstrap_mean_width".into(), format!("{w}")));
        extras.push((
            "bootstrap_all_covered".into(),
            format!("{}", out.bootstrap_all_covered.unwrap_or(false)),
        ));
    }
    for (stage, ledger) in &out.ledgers {
        extras.push((format!("ledger_{stage}"), ledger.clone()));
    }
    let manifest = cfg.out.join("manifest.txt");
    write_manifest(cfg, command, &extras, &manifest)?;
    files.push(manifest);
    Ok((out, CommandOutcome { files }))
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<CommandOutcome> {
    let mut cfg = cfg.clone();
    cfg.settings.inference = None;
    cfg.settings.bootstrap = None;
    let (out, outcome) = run_pipeline(&cfg, "estimate")?;
    println!("l2 = {}", out.l2);
    Ok(outcome)
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<CommandOutcome> {
    let mut cfg = cfg.clone();
    if cfg.settings.inference.is_none() {
        cfg.settings.inference = Some(Default::default());
    }
    cfg.settings.bootstrap = None;
    if cfg.dataset_path.is_some() {
        return Err(anyhow!("infer requires a generated design (truth needed for coverage)"));
    }
    let (out, outcome) = run_pipeline(&cfg, "infer")?;
    for (j, covered, z) in &out.coordinate_stats {
        println!("coordinate {j}: covered={covered} z={z:.4}");
    }
    Ok(outcome)
}

pub fn cmd_bootstrap(cfg: &RunConfig) -> Result<CommandOutcome> {
    let mut cfg = cfg.clone();
    if cfg.settings.inference.is_none() {
        cfg.settings.inference = Some(Default::default());
    }
    if cfg.settings.bootstrap.is_none() {
        cfg.settings.bootstrap = Some(Default::default());
    }
    if cfg.dataset_path.is_some() {
        return Err(anyhow!("bootstrap requires a generated design"));
    }
    let (out, outcome) = run_pipeline(&cfg, "bootstrap")?;
    println!(
        "simultaneous coverage = {:?}, mean width = {:?}",
        out.bootstrap_all_covered, out.bootstrap_mean_width
    );
    Ok(outcome)
}

pub fn cmd_experiment(cfg: &RunConfig) -> Result<CommandOutcome> {
    ensure_out(cfg)?;
    if cfg.dataset_path.is_some() {
        return Err(anyhow!("experiment grids always generate their own data"));
    }
    let mut cells = Vec::new();
    let s_grid: Vec<Option<usize>> = if cfg.s_grid.is_empty() {
        vec![None]
    } else {
        cfg.s_grid.iter().map(|s| Some(*s)).collect()
    };
    for &eps in &cfg.eps_grid {
        for s in &s_grid {
            let mut design = cfg.design.clone();
            if let Some(s) = s {
                design.id = format!("{}-s{}", design.id, s);
            }
            let delta = if cfg.delta_auto { 1.0 / design.n_total as f64 } else { cfg.budget.delta };
            cells.push((
                ExperimentCell { design, budget: PrivacyBudget::new(eps, delta)? },
                *s,
            ));
        }
    }
    // run cells that share a sparsity together so settings stay uniform
    let mut all_rows = Vec::new();
    for (cell, s) in cells {
        let mut settings = cfg.settings.clone();
        if let Some(s) = s {
            settings.sparsity = s;
        }
        let rows = run_experiment(
            std::slice::from_ref(&cell),
            &settings,
            cfg.experiment_replicates,
            cfg.seed,
        );
        all_rows.extend(rows);
    }
    let raw_path = cfg.out.join("raw.csv");
    format::write_metric_rows(&all_rows, &raw_path)?;
    let agg = aggregate(&all_rows);
    let agg_path = cfg.out.join("aggregates.csv");
    format::write_aggregate_rows(&agg, &agg_path)?;
    let manifest = cfg.out.join("manifest.txt");
    let failed = all_rows.iter().filter(|r| r.error.is_some()).count();
    write_manifest(
        cfg,
        "experiment",
        &[
            ("rows".into(), all_rows.len().to_string()),
            ("failed".into(), failed.to_string()),
        ],
        &manifest,
    )?;
    for a in &agg {
        println!("{}: mean={:.4} std={:.4} count={}", a.cell, a.mean, a.std, a.count);
    }
    Ok(CommandOutcome { files: vec![raw_path, agg_path, manifest] })
}

