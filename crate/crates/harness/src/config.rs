//! Experiment configuration: a TOML file layered over a named preset.

use std::path::{Path, PathBuf};

use napinn::corruption::{NoiseSpec, OutlierSign, OutlierSpec};
use napinn::pde::{BenchmarkKind, ProblemSpec};
use napinn::trainer::{Method, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierConfig {
    pub k1: f64,
    pub k2: f64,
    pub sign: OutlierSign,
}

impl OutlierConfig {
    pub fn at_ratio(&self, ratio: f64) -> OutlierSpec {
        OutlierSpec {
            ratio,
            k1: self.k1,
            k2: self.k2,
            sign: self.sign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub benchmark: BenchmarkKind,
    pub ratio: f64,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub out: PathBuf,
    pub benchmarks: Vec<BenchmarkKind>,
    pub methods: Vec<Method>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Train on the exact field values (ratio 0, no noise).
    pub clean: bool,
    /// Run the gated method staged and unstaged instead of `methods`.
    pub ablation: bool,
    pub snapshots: usize,
    pub solver_grid: usize,
    /// Sensors per spatial axis.
    pub sensors: usize,
    /// Evaluation points per spatial axis, at every snapshot time.
    pub eval_grid: usize,
    /// Seed of the Burgers initial condition; shared by every run.
    pub reference_seed: u64,
    /// A measurement counts as rejected when its final weight is below this.
    pub gate_threshold: f64,
    pub noise: NoiseSpec,
    pub outliers: OutlierConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::Vanilla,
        Method::Lad,
        Method::Orpinn { q: 1.9 },
        Method::Orpinn { q: 2.9 },
        Method::Napinn,
    ]
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (schedule, seeds, snapshots, out) = match preset {
            Preset::Desk => (Schedule::desk(), 3, 10, "out/desk"),
            Preset::Full => (Schedule::full(), 10, 30, "out/full"),
        };
        Self {
            preset,
            out: PathBuf::from(out),
            benchmarks: vec![
                BenchmarkKind::AllenCahn,
                BenchmarkKind::Burgers,
                BenchmarkKind::LambdaOmega,
            ],
            methods: default_methods(),
            ratios: vec![0.05, 0.10, 0.15],
            seeds: (0..seeds).collect(),
            clean: false,
            ablation: false,
            snapshots,
            solver_grid: 256,
            sensors: 15,
            eval_grid: 120,
            reference_seed: 0,
            gate_threshold: 0.5,
            noise: NoiseSpec::default(),
            outliers: OutlierConfig {
                k1: 3.0,
                k2: 10.0,
                sign: OutlierSign::default(),
            },
            train: TrainConfig::with_schedule(schedule),
            sweep: SweepConfig {
                benchmark: BenchmarkKind::AllenCahn,
                ratio: 0.15,
                lambdas: (1..=10).map(|k| k as f64 / 10.0).collect(),
            },
        }
    }

    /// Parses a config file. Keys given in the file replace the preset named by its
    /// `preset` key (default `desk`); nested tables merge key by key.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = toml::from_str(text)?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v.clone().try_into()?,
        };
        let mut base = toml::Table::try_from(Self::preset(preset))?;
        merge(&mut base, user);
        let cfg: Self = base.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn problem(&self, kind: BenchmarkKind) -> ProblemSpec {
        ProblemSpec::for_kind(kind).with_snapshots(self.snapshots)
    }

    /// Number of seeds, for labelling aggregates.
    pub fn scale_label(&self) -> String {
        let name = match self.preset {
            Preset::Desk => "desk",
            Preset::Full => "full",
        };
        format!("{name} ({} seeds)", self.seeds.len())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if self.benchmarks.is_empty() || self.seeds.is_empty() {
            return bad("benchmarks and seeds must be non-empty");
        }
        if !self.ablation && self.methods.is_empty() {
            return bad("methods must be non-empty");
        }
        if !self.clean && self.ratios.is_empty() {
            return bad("ratios must be non-empty");
        }
        if self
            .ratios
            .iter()
            .chain([&self.sweep.ratio])
            .any(|r| !(0.0..1.0).contains(r))
        {
            return bad("outlier ratios must lie in [0, 1)");
        }
        if self.snapshots < 2 || self.solver_grid < 8 || self.sensors < 2 || self.eval_grid < 2 {
            return bad("need at least 2 snapshots, sensors and eval points and an 8-point solver grid");
        }
        if self.sensors > self.solver_grid {
            return bad("more sensors than solver nodes");
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return bad("gate_threshold must lie in [0, 1]");
        }
        if self.sweep.lambdas.is_empty() || self.sweep.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return bad("sweep lambdas must be non-empty and non-negative");
        }
        if !(self.train.lambda_rej >= 0.0) {
            return bad("lambda_rej must be non-negative");
        }
        let s = self.train.schedule;
        if s.collocation_batch == 0 || s.data_batch == 0 || s.ebm_batch < 2 || s.log_every == 0 {
            return bad("batch sizes and log_every must be positive");
        }
        if !(0.0..=100.0).contains(&self.train.tau_percentile) {
            return bad("tau_percentile must lie in [0, 100]");
        }
        self.noise
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.outliers
            .at_ratio(0.0)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
