use serde::{Deserialize, Serialize};

use super::grid::SpatialGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    AllenCahn,
    Burgers,
    LambdaOmega,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 3] = [Self::AllenCahn, Self::Burgers, Self::LambdaOmega];

    pub fn name(self) -> &'static str {
        match self {
            Self::AllenCahn => "allen_cahn",
            Self::Burgers => "burgers",
            Self::LambdaOmega => "lambda_omega",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Self::AllenCahn => 1,
            Self::Burgers | Self::LambdaOmega => 2,
        }
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            Self::AllenCahn => &["u"],
            Self::Burgers | Self::LambdaOmega => &["u", "v"],
        }
    }

    /// Name of the single trainable physical parameter.
    pub fn param_name(self) -> &'static str {
        match self {
            Self::AllenCahn => "eps",
            Self::Burgers => "nu",
            Self::LambdaOmega => "beta",
        }
    }
}

impl std::str::FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "allen_cahn" | "allen-cahn" | "ac" => Ok(Self::AllenCahn),
            "burgers" => Ok(Self::Burgers),
            "lambda_omega" | "lambda-omega" | "rd" => Ok(Self::LambdaOmega),
            other => Err(format!("unknown benchmark {other:?}")),
        }
    }
}

impl std::fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainable physical parameters of a residual operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeParamVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl PdeParamVector {
    pub fn single(name: &str, value: f64) -> Self {
        Self {
            names: vec![name.to_string()],
            values: vec![value],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// One benchmark: domain, horizon, physical constants and data-generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: BenchmarkKind,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Recorded time window (after any burn-in).
    pub t_range: (f64, f64),
    /// Value of the trainable parameter used to generate data.
    pub true_param: f64,
    /// Starting value of the trainable parameter during training.
    pub param_init: f64,
    /// Diffusion coefficients `(d_u, d_v)` of the lambda-omega system.
    pub diffusion: (f64, f64),
    /// Temporal frequency of the Allen-Cahn manufactured solution.
    pub omega_t: f64,
    /// Simulated interval discarded before recording (Burgers).
    pub burn_in: f64,
    /// Spectral decay of the Gaussian random field initial condition (Burgers).
    pub grf_alpha: f64,
    /// Standard deviation the unit-variance GRF initial condition is scaled to (Burgers).
    pub grf_amplitude: f64,
    /// Number of uniformly spaced recorded snapshot times, endpoints included.
    pub snapshots: usize,
}

impl ProblemSpec {
    pub fn allen_cahn() -> Self {
        Self {
            kind: BenchmarkKind::AllenCahn,
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            t_range: (0.0, 1.0),
            true_param: 0.3,
            param_init: 1.0,
            diffusion: (0.0, 0.0),
            omega_t: std::f64::consts::PI,
            burn_in: 0.0,
            grf_alpha: 0.0,
            grf_amplitude: 0.0,
            snapshots: 30,
        }
    }

    pub fn burgers() -> Self {
        Self {
            kind: BenchmarkKind::Burgers,
            x_range: (0.0, 4.0),
            y_range: (0.0, 4.0),
            t_range: (0.0, 3.0),
            true_param: 0.01,
            param_init: 0.0,
            diffusion: (0.0, 0.0),
            omega_t: 0.0,
            burn_in: 0.1,
            grf_alpha: 5.0,
            grf_amplitude: 0.25,
            snapshots: 30,
        }
    }

    pub fn lambda_omega() -> Self {
        Self {
            kind: BenchmarkKind::LambdaOmega,
            x_range: (-10.0, 10.0),
            y_range: (-10.0, 10.0),
            t_range: (0.0, 10.0),
            true_param: 1.0,
            param_init: 0.0,
            diffusion: (1.0, 1.0),
            omega_t: 0.0,
            burn_in: 0.0,
            grf_alpha: 0.0,
            grf_amplitude: 0.0,
            snapshots: 30,
        }
    }

    pub fn for_kind(kind: BenchmarkKind) -> Self {
        match kind {
            BenchmarkKind::AllenCahn => Self::allen_cahn(),
            BenchmarkKind::Burgers => Self::burgers(),
            BenchmarkKind::LambdaOmega => Self::lambda_omega(),
        }
    }

    pub fn with_snapshots(mut self, snapshots: usize) -> Self {
        self.snapshots = snapshots;
        self
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    /// Finite-difference benchmarks live on a periodic domain; Allen-Cahn does not.
    pub fn periodic(&self) -> bool {
        !matches!(self.kind, BenchmarkKind::AllenCahn)
    }

    pub fn initial_params(&self) -> PdeParamVector {
        PdeParamVector::single(self.kind.param_name(), self.param_init)
    }

    pub fn true_params(&self) -> PdeParamVector {
        PdeParamVector::single(self.kind.param_name(), self.true_param)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        linspace(self.t_range.0, self.t_range.1, self.snapshots)
    }

    pub fn grid(&self, n: usize) -> SpatialGrid {
        SpatialGrid::square(self.x_range, self.y_range, n, self.periodic())
    }

    /// Lower/upper corners of the `(x, y, t)` box.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        (
            [self.x_range.0, self.y_range.0, self.t_range.0],
            [self.x_range.1, self.y_range.1, self.t_range.1],
        )
    }
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}
