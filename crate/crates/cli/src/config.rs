//! Experiment configuration file (TOML).
//!
//! Relative dataset paths resolve against `$FEDERL_DATA_ROOT` when it is set
//! and against the directory holding the config file otherwise. Unknown keys
//! are rejected in every section.

use std::fs;
use std::path::{Path, PathBuf};

use federl_core::augmix::{check_disjoint, AugMixConfig};
use federl_core::budget::{BudgetCap, CostModel};
use federl_core::dart::DartConfig;
use federl_core::data::{CorruptionFilter, CorruptionSpec};
use federl_core::fed::{EvalMode, FedConfig, Method};
use federl_core::image::Shape;
use federl_core::model::Architecture;
use federl_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DATA_ROOT_ENV: &str = "FEDERL_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Unlabeled server dataset; required by FedERL.
    #[serde(default)]
    pub proxy: Option<PathBuf>,
    /// Second server dataset for the proxy swap comparison.
    #[serde(default)]
    pub proxy_alt: Option<PathBuf>,
    #[serde(default = "default_corruptions")]
    pub corruptions: Vec<String>,
    #[serde(default = "default_severities")]
    pub severities: Vec<u8>,
    #[serde(default)]
    pub corruption_seed: u64,
}

fn default_corruptions() -> Vec<String> {
    CorruptionFilter::ALL.iter().map(|f| f.name().to_string()).collect()
}

fn default_severities() -> Vec<u8> {
    vec![1, 3, 5]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Cnn,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub conv1: usize,
    pub conv2: usize,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Cnn,
            conv1: 8,
            conv2: 16,
            hidden: vec![64],
        }
    }
}

impl ModelSection {
    pub fn build(&self, input: Shape, classes: usize) -> Result<Architecture> {
        match self.kind {
            ModelKind::Cnn => Architecture::small_cnn(input, classes, self.conv1, self.conv2),
            ModelKind::Mlp => Architecture::mlp(input, &self.hidden, classes),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Evaluate every `every` rounds (0: final round and budget points only).
    pub every: usize,
    pub mode: EvalMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            every: 0,
            mode: EvalMode::Curve,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub seeds: Vec<u64>,
    /// Per-client time caps (s) for the iso-budget summary.
    pub time_budgets: Vec<f64>,
    /// Per-client energy caps (J) for the iso-budget summary.
    pub energy_budgets: Vec<f64>,
    /// Robustification periods for the FedERL sweep; a one-shot row is
    /// always added when the list is nonempty.
    pub t_rob: Vec<usize>,
    /// Apply each DART variant to the final CleanFL model.
    pub ablation: bool,
    /// Compare FedERL with `data.proxy` against `data.proxy_alt`.
    pub proxy_swap: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            seeds: vec![0],
            time_budgets: Vec::new(),
            energy_budgets: Vec::new(),
            t_rob: Vec::new(),
            ablation: false,
            proxy_swap: false,
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    /// `fed.seed` and `fed.method` are set per run from `sweep.seeds` and `methods`.
    #[serde(default)]
    pub fed: FedConfig,
    #[serde(default)]
    pub dart: DartConfig,
    #[serde(default)]
    pub augmix: AugMixConfig,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub budget: BudgetCap,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::parse(&text)?;
        let base = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => PathBuf::from(root),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        cfg.resolve_paths(&base);
        if let Some(out) = &cfg.output {
            if out.is_relative() {
                cfg.output = Some(path.parent().unwrap_or(Path::new("")).join(out));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.test);
        self.data.proxy.iter_mut().for_each(fix);
        self.data.proxy_alt.iter_mut().for_each(fix);
    }

    pub fn corruption_specs(&self) -> Result<Vec<CorruptionSpec>> {
        let mut specs = Vec::new();
        for f in &self.data.corruptions {
            for &s in &self.data.severities {
                specs.push(CorruptionSpec::parse(f, s)?);
            }
        }
        Ok(specs)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        for (name, p) in [("train", Some(&self.data.train)), ("test", Some(&self.data.test))]
            .into_iter()
            .chain([("proxy", self.data.proxy.as_ref()), ("proxy_alt", self.data.proxy_alt.as_ref())])
        {
            if let Some(p) = p {
                if !p.is_dir() {
                    return cfg_err(format!("data.{name}: no dataset directory at {}", p.display()));
                }
            }
        }
        if self.data.corruptions.is_empty() || self.data.severities.is_empty() {
            return cfg_err("data.corruptions and data.severities must be nonempty".into());
        }
        let specs = self.corruption_specs()?;
        check_disjoint(&self.augmix.ops, &specs.iter().map(|s| s.filter()).collect::<Vec<_>>())?;
        if self.fed.seed != 0 || self.fed.method != Method::CleanFL {
            return cfg_err("set seeds in sweep.seeds and methods in `methods`, not in [fed]".into());
        }
        self.fed.validate()?;
        self.dart.validate()?;
        self.augmix.validate()?;
        self.cost.validate()?;
        if self.methods.is_empty() {
            return cfg_err("`methods` must list at least one method".into());
        }
        if self.sweep.seeds.is_empty() {
            return cfg_err("sweep.seeds must be nonempty".into());
        }
        if self.sweep.time_budgets.iter().chain(&self.sweep.energy_budgets).any(|b| !(*b > 0.0 && b.is_finite())) {
            return cfg_err("budgets must be positive".into());
        }
        if self.sweep.t_rob.contains(&0) {
            return cfg_err("sweep.t_rob entries must be at least 1".into());
        }
        let needs_proxy = self.methods.contains(&Method::FedERL)
            || self.sweep.ablation
            || self.sweep.proxy_swap
            || !self.sweep.t_rob.is_empty();
        if needs_proxy && self.data.proxy.is_none() {
            return cfg_err("FedERL, ablation and T_rob sweeps need data.proxy".into());
        }
        if self.sweep.proxy_swap && self.data.proxy_alt.is_none() {
            return cfg_err("sweep.proxy_swap needs data.proxy_alt".into());
        }
        Ok(())
    }
}
