//! Flat `key = value` configuration with `[section]` headers.
//!
//! Every key is validated against the registry below before any compute;
//! unknown keys are rejected. The `[manifest]` section is informational
//! (written by runs, ignored on parse) so a manifest file is itself a valid
//! configuration.

use anyhow::{anyhow, bail, Context, Result};
use dpqr::budget::PrivacyBudget;
use dpqr::engine::{BudgetMode, EtaMode, RegressionMethod};
use dpqr::kernel::KernelFamily;
use dpqr::precision::ClimeObjective;
use dpqr::sim::{
    BootstrapSettings, InferenceSettings, ModelKind, NoiseFamily, SimDesign, StudySettings,
};
use dpqr::bootstrap::{BootstrapVariant, VariantChoice};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const KNOWN_KEYS: &[&str] = &[
    "data.model",
    "data.noise",
    "data.noise_scale",
    "data.p",
    "data.n_total",
    "data.m",
    "data.rho",
    "data.tau",
    "data.beta",
    "data.dataset",
    "estimate.sparsity",
    "estimate.outer_iters",
    "estimate.inner_iters",
    "estimate.eta",
    "estimate.eta_scale",
    "estimate.feasibility",
    "estimate.clip",
    "estimate.method",
    "estimate.kernel",
    "estimate.density_floor",
    "estimate.bandwidth",
    "estimate.init_outer",
    "estimate.init_inner",
    "estimate.budget_mode",
    "estimate.dp",
    "privacy.eps",
    "privacy.delta",
    "infer.enabled",
    "infer.alpha",
    "infer.b1",
    "infer.b2",
    "infer.coordinates",
    "infer.c_gamma",
    "infer.gamma",
    "infer.local_bandwidth",
    "infer.clime_objective",
    "infer.dp",
    "bootstrap.enabled",
    "bootstrap.replicates",
    "bootstrap.machine_threshold",
    "bootstrap.alpha",
    "bootstrap.b3",
    "bootstrap.variant",
    "bootstrap.budget_mode",
    "bootstrap.dp",
    "run.seed",
    "run.out",
    "run.threads",
    "run.format",
    "experiment.eps_grid",
    "experiment.s_grid",
    "experiment.replicates",
];

/// Raw parsed key/value map.
#[derive(Debug, Clone, Default)]
pub struct KeyMap(BTreeMap<String, String>);

impl KeyMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value'", lineno + 1))?;
            let key = key.trim();
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            if section != "manifest" {
                if !KNOWN_KEYS.contains(&full.as_str()) {
                    bail!("line {}: unknown key '{full}'", lineno + 1);
                }
                map.insert(full, value.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        assert!(KNOWN_KEYS.contains(&key), "internal: unknown key {key}");
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

/// Fully validated configuration for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub design: SimDesign,
    pub dataset_path: Option<PathBuf>,
    pub settings: StudySettings,
    pub eta_scale: f64,
    pub budget: PrivacyBudget,
    pub delta_auto: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub dataset_format: DatasetFormat,
    pub eps_grid: Vec<f64>,
    pub s_grid: Vec<usize>,
    pub experiment_replicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

fn parse_as<T: std::str::FromStr>(map: &KeyMap, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse::<T>().map_err(|e| anyhow!("key {key}: {e}")),
    }
}

fn parse_opt_or_auto(map: &KeyMap, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some("auto") => Ok(None),
        Some(v) => Ok(Some(v.parse::<f64>().map_err(|e| anyhow!("key {key}: {e}"))?)),
    }
}

fn parse_bool(map: &KeyMap, key: &str, default: bool) -> Result<bool> {
    match map.get(key) {
        None => Ok(default),
        Some("true") | Some("1") => Ok(true),
        Some("false") | Some("0") => Ok(false),
        Some(other) => bail!("key {key}: expected true/false, got '{other}'"),
    }
}

impl RunConfig {
    pub fn from_map(map: &KeyMap) -> Result<Self> {
        let p: usize = parse_as(map, "data.p", 500)?;
        let n_total: usize = parse_as(map, "data.n_total", 20_000)?;
        let m: usize = parse_as(map, "data.m", 40)?;

        let mut design = SimDesign {
            id: String::new(),
            model: ModelKind::parse(map.get("data.model").unwrap_or("homoscedastic"))?,
            noise: NoiseFamily::parse(map.get("data.noise").unwrap_or("normal"))?,
            noise_scale: parse_as(map, "data.noise_scale", 1.0)?,
            p,
            n_total,
            m,
            beta_true: match map.get("data.beta") {
                None | Some("default") => SimDesign::default_beta(p),
                Some(list) => {
                    let mut beta: Vec<f64> = list
                        .split(',')
                        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("data.beta: {e}")))
                        .collect::<Result<_>>()?;
                    if beta.len() > p + 1 {
                        bail!("data.beta has {} entries but p+1 = {}", beta.len(), p + 1);
                    }
                    beta.resize(p + 1, 0.0);
                    beta
                }
            },
            rho: parse_as(map, "data.rho", 0.5)?,
            tau: parse_as(map, "data.tau", 0.5)?,
        };
        design.id = format!(
            "{}-{}-p{}-N{}-m{}",
            design.model.name(),
            design.noise.name(),
            design.p,
            design.n_total,
            design.m
        );
        design.validate().map_err(|e| anyhow!("{e}"))?;

        let eta_scale: f64 = parse_as(map, "estimate.eta_scale", 1.0)?;
        let eta = match map.get("estimate.eta") {
            None | Some("auto") => EtaMode::Auto { scale: eta_scale },
            Some(v) => EtaMode::Fixed(v.parse::<f64>().map_err(|e| anyhow!("estimate.eta: {e}"))?),
        };

        let delta_raw = map.get("privacy.delta").unwrap_or("auto");
        let (delta, delta_auto) = if delta_raw == "auto" {
            (1.0 / n_total as f64, true)
        } else {
            (delta_raw.parse::<f64>().map_err(|e| anyhow!("privacy.delta: {e}"))?, false)
        };
        let eps: f64 = parse_as(map, "privacy.eps", 1.0)?;
        let budget = PrivacyBudget::new(eps, delta).map_err(|e| anyhow!("{e}"))?;

        let inference = if parse_bool(map, "infer.enabled", false)? {
            Some(InferenceSettings {
                alpha: parse_as(map, "infer.alpha", 0.05)?,
                b1: parse_as(map, "infer.b1", 1.0)?,
                b2: parse_as(map, "infer.b2", 1.0)?,
                coordinates: match map.get("infer.coordinates") {
                    None => vec![1],
                    Some(list) => list
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<usize>().map_err(|e| anyhow!("infer.coordinates: {e}"))
                        })
                        .collect::<Result<_>>()?,
                },
                c_gamma: parse_as(map, "infer.c_gamma", 0.05)?,
                gamma_override: parse_opt_or_auto(map, "infer.gamma")?,
                local_bandwidth_override: parse_opt_or_auto(map, "infer.local_bandwidth")?,
                clime_objective: match map.get("infer.clime_objective") {
                    None | Some("l1") => ClimeObjective::L1,
                    Some("linf") => ClimeObjective::LInf,
                    Some(other) => bail!("infer.clime_objective: unknown '{other}'"),
                },
                dp_enabled: parse_bool(map, "infer.dp", true)?,
            })
        } else {
            None
        };

        let bootstrap = if parse_bool(map, "bootstrap.enabled", false)? {
            if inference.is_none() {
                bail!("bootstrap.enabled requires infer.enabled (needs the debiased estimate)");
            }
            Some(BootstrapSettings {
                replicates: parse_as(map, "bootstrap.replicates", 2000)?,
                machine_threshold: parse_as(map, "bootstrap.machine_threshold", 30)?,
                alpha: parse_as(map, "bootstrap.alpha", 0.05)?,
                b3: parse_as(map, "bootstrap.b3", 10.0)?,
                variant: match map.get("bootstrap.variant") {
                    None | Some("auto") => VariantChoice::Auto,
                    Some("kgrad") => VariantChoice::Force(BootstrapVariant::KGrad),
                    Some("nk1grad") => VariantChoice::Force(BootstrapVariant::Nk1Grad),
                    Some(other) => bail!("bootstrap.variant: unknown '{other}'"),
                },
                budget_mode: match map.get("bootstrap.budget_mode") {
                    None | Some("split") => BudgetMode::Split,
                    Some("per_call") => BudgetMode::PerCall,
                    Some(other) => bail!("bootstrap.budget_mode: unknown '{other}'"),
                },
                dp_enabled: parse_bool(map, "bootstrap.dp", true)?,
            })
        } else {
            None
        };

        let settings = StudySettings {
            sparsity: parse_as(map, "estimate.sparsity", 5)?,
            outer_iters: parse_as(map, "estimate.outer_iters", 10)?,
            inner_iters: parse_as(map, "estimate.inner_iters", 10)?,
            eta,
            feasibility: parse_as(map, "estimate.feasibility", 10.0)?,
            clip: parse_as(map, "estimate.clip", 5.0)?,
            dp_enabled: parse_bool(map, "estimate.dp", true)?,
            budget_mode: match map.get("estimate.budget_mode") {
                None | Some("split") => BudgetMode::Split,
                Some("per_call") => BudgetMode::PerCall,
                Some(other) => bail!("estimate.budget_mode: unknown '{other}'"),
            },
            protect_intercept: true,
            method: match map.get("estimate.method") {
                None | Some("quantile") => RegressionMethod::Quantile,
                Some("least_squares") => RegressionMethod::LeastSquares,
                Some(other) => bail!("estimate.method: unknown '{other}'"),
            },
            kernel_family: KernelFamily::parse(map.get("estimate.kernel").unwrap_or("gaussian"))
                .map_err(|e| anyhow!("{e}"))?,
            density_floor: parse_as(map, "estimate.density_floor", 1e-8)?,
            bandwidth_override: parse_opt_or_auto(map, "estimate.bandwidth")?,
            init_outer: parse_as(map, "estimate.init_outer", 15)?,
            init_inner: parse_as(map, "estimate.init_inner", 30)?,
            inference,
            bootstrap,
        };

        let out_default = std::env::var("DPQR_OUT").unwrap_or_else(|_| "dpqr-out".to_string());
        let eps_grid = match map.get("experiment.eps_grid") {
            None => vec![eps],
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("experiment.eps_grid: {e}")))
                .collect::<Result<_>>()?,
        };
        let s_grid = match map.get("experiment.s_grid") {
            None => Vec::new(),
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| anyhow!("experiment.s_grid: {e}")))
                .collect::<Result<_>>()?,
        };

        Ok(Self {
            design,
            dataset_path: map.get("data.dataset").map(PathBuf::from),
            settings,
            eta_scale,
            budget,
            delta_auto,
            seed: parse_as(map, "run.seed", 12345u64)?,
            out: PathBuf::from(map.get("run.out").unwrap_or(&out_default)),
            threads: parse_as(map, "run.threads", 0usize)?,
            dataset_format: match map.get("run.format") {
                None | Some("csv") => DatasetFormat::Csv,
                Some("binary") => DatasetFormat::Binary,
                Some(other) => bail!("run.format: unknown '{other}'"),
            },
            eps_grid,
            s_grid,
            experiment_replicates: parse_as(map, "experiment.replicates", 100)?,
        })
    }

    /// Echoes every effective key as a parseable config file.
    pub fn echo(&self) -> String {
        let s = &self.settings;
        let mut out = String::new();
        let _ = writeln!(out, "[data]");
        let _ = writeln!(out, "model = {}", self.design.model.name());
        let _ = writeln!(out, "noise = {}", self.design.noise.name());
        let _ = writeln!(out, "noise_scale = {}", self.design.noise_scale);
        let _ = writeln!(out, "p = {}", self.design.p);
        let _ = writeln!(out, "n_total = {}", self.design.n_total);
        let _ = writeln!(out, "m = {}", self.design.m);
        let _ = writeln!(out, "rho = {}", self.design.rho);
        let _ = writeln!(out, "tau = {}", self.design.tau);
        let beta = self
            .design
            .beta_true
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "beta = {beta}");
        if let Some(path) = &self.dataset_path {
            let _ = writeln!(out, "dataset = {}", path.display());
        }
        let _ = writeln!(out, "\n[estimate]");
        let _ = writeln!(out, "sparsity = {}", s.sparsity);
        let _ = writeln!(out, "outer_iters = {}", s.outer_iters);
        let _ = writeln!(out, "inner_iters = {}", s.inner_iters);
        match s.eta {
            EtaMode::Auto { .. } => {
                let _ = writeln!(out, "eta = auto");
                let _ = writeln!(out, "eta_scale = {}", self.eta_scale);
            }
            EtaMode::Fixed(v) => {
                let _ = writeln!(out, "eta = {v}");
            }
        }
        let _ = writeln!(out, "feasibility = {}", s.feasibility);
        let _ = writeln!(out, "clip = {}", s.clip);
        let _ = writeln!(
            out,
            "method = {}",
            match s.method {
                RegressionMethod::Quantile => "quantile",
                RegressionMethod::LeastSquares => "least_squares",
            }
        );
        let _ = writeln!(out, "kernel = {}", s.kernel_family.name());
        let _ = writeln!(out, "density_floor = {}", s.density_floor);
        match s.bandwidth_override {
            None => {
                let _ = writeln!(out, "bandwidth = auto");
            }
            Some(h) => {
                let _ = writeln!(out, "bandwidth = {h}");
            }
        }
        let _ = writeln!(out, "init_outer = {}", s.init_outer);
        let _ = writeln!(out, "init_inner = {}", s.init_inner);
        let _ = writeln!(
            out,
            "budget_mode = {}",
            match s.budget_mode {
                BudgetMode::Split => "split",
                BudgetMode::PerCall => "per_call",
            }
        );
        let _ = writeln!(out, "dp = {}", s.dp_enabled);
        let _ = writeln!(out, "\n[privacy]");
        let _ = writeln!(out, "eps = {}", self.budget.epsilon);
        if self.delta_auto {
            let _ = writeln!(out, "delta = auto");
        } else {
            let _ = writeln!(out, "delta = {}", self.budget.delta);
        }
        let _ = writeln!(out, "\n[infer]");
        match &s.inference {
            None => {
                let _ = writeln!(out, "enabled = false");
            }
            Some(inf) => {
                let _ = writeln!(out, "enabled = true");
                let _ = writeln!(out, "alpha = {}", inf.alpha);
                let _ = writeln!(out, "b1 = {}", inf.b1);
                let _ = writeln!(out, "b2 = {}", inf.b2);
                let coords = inf
                    .coordinates
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                let _ = writeln!(out, "coordinates = {coords}");
                let _ = writeln!(out, "c_gamma = {}", inf.c_gamma);
                match inf.gamma_override {
                    None => {
                        let _ = writeln!(out, "gamma = auto");
                    }
                    Some(g) => {
                        let _ = writeln!(out, "gamma = {g}");
                    }
                }
                match inf.local_bandwidth_override {
                    None => {
                        let _ = writeln!(out, "local_bandwidth = auto");
                    }
                    Some(b) => {
                        let _ = writeln!(out, "local_bandwidth = {b}");
                    }
                }
                let _ = writeln!(
                    out,
                    "clime_objective = {}",
                    match inf.clime_objective {
                        ClimeObjective::L1 => "l1",
                        ClimeObjective::LInf => "linf",
                    }
                );
                let _ = writeln!(out, "dp = {}", inf.dp_enabled);
            }
        }
        let _ = writeln!(out, "\n[bootstrap]");
        match &s.bootstrap {
            None => {
                let _ = writeln!(out, "enabled = false");
            }
            Some(b) => {
                let _ = writeln!(out, "enabled = true");
                let _ = writeln!(out, "replicates = {}", b.replicates);
                let _ = writeln!(out, "machine_threshold = {}", b.machine_threshold);
                let _ = writeln!(out, "alpha = {}", b.alpha);
                let _ = writeln!(out, "b3 = {}", b.b3);
                let _ = writeln!(
                    out,
                    "variant = {}",
                    match b.variant {
                        VariantChoice::Auto => "auto",
                        VariantChoice::Force(BootstrapVariant::KGrad) => "kgrad",
                        VariantChoice::Force(BootstrapVariant::Nk1Grad) => "nk1grad",
                    }
                );
                let _ = writeln!(
                    out,
                    "budget_mode = {}",
                    match b.budget_mode {
                        BudgetMode::Split => "split",
                        BudgetMode::PerCall => "per_call",
                    }
                );
                let _ = writeln!(out, "dp = {}", b.dp_enabled);
            }
        }
        let _ = writeln!(out, "\n[run]");
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "out = {}", self.out.display());
        let _ = writeln!(out, "threads = {}", self.threads);
        let _ = writeln!(
            out,
            "format = {}",
            match self.dataset_format {
                DatasetFormat::Csv => "csv",
                DatasetFormat::Binary => "binary",
            }
        );
        let _ = writeln!(out, "\n[experiment]");
        let grid = self.eps_grid.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "eps_grid = {grid}");
        if !self.s_grid.is_empty() {
            let s_grid = self.s_grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            let _ = writeln!(out, "s_grid = {s_grid}");
        }
        let _ = writeln!(out, "replicates = {}", self.experiment_replicates);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = KeyMap::parse("[data]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn manifest_section_ignored() {
        let map = KeyMap::parse("[manifest]\ncommand = estimate\n[data]\np = 10\n").unwrap();
        assert_eq!(map.get("data.p"), Some("10"));
    }

    #[test]
    fn echo_reparses_to_same_config() {
        let map = KeyMap::parse(
            "[data]\np = 20\nn_total = 100\nm = 2\nnoise = t3\n[privacy]\neps = 0.5\n[infer]\nenabled = true\ncoordinates = 1,5\n",
        )
        .unwrap();
        let cfg = RunConfig::from_map(&map).unwrap();
        let echo = cfg.echo();
        let map2 = KeyMap::parse(&echo).unwrap();
        let cfg2 = RunConfig::from_map(&map2).unwrap();
        assert_eq!(cfg2.echo(), echo);
        assert_eq!(cfg2.design.p, 20);
        assert_eq!(cfg2.budget.epsilon, 0.5);
        assert_eq!(cfg2.settings.inference.as_ref().unwrap().coordinates, vec![1, 5]);
    }

    #[test]
    fn uneven_partition_rejected_before_compute() {
        let map = KeyMap::parse("[data]\np = 10\nn_total = 100\nm = 7\n").unwrap();
        assert!(RunConfig::from_map(&map).is_err());
    }
}
