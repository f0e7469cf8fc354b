//! One-dimensional energy-based density over normalized residuals.
//!
//! `p(r) = exp(-E(r)) / Z` with `Z` from the trapezoid rule on a fixed symmetric grid. Inputs
//! outside the grid are clamped to the nearer endpoint.

use std::io::Write;

use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    backprop_scalar, AdamConfig, AdamState, AutodiffError, Jet2Batch, NetworkParams, NetworkShape, RowLoss,
};

#[derive(Debug, thiserror::Error)]
pub enum EbmError {
    #[error("empty residual batch")]
    EmptyBatch,
    #[error("running std needs at least 2 residuals, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite residual at index {0}")]
    NonFiniteInput(usize),
    #[error("invalid energy model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbmConfig {
    /// Quadrature interval is `[-half_width, half_width]` in normalized units.
    pub half_width: f64,
    pub nodes: usize,
    pub ema_beta: f64,
    pub adam: AdamConfig,
}

impl Default for EbmConfig {
    fn default() -> Self {
        Self {
            half_width: 12.0,
            nodes: 1024,
            ema_beta: 0.05,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub net: NetworkParams,
    half_width: f64,
    grid: Vec<f64>,
    /// log trapezoid weights
    log_w: Vec<f64>,
}

/// One row of the density export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityRow {
    pub r: f64,
    pub energy: f64,
    pub density: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl EnergyModel {
    pub fn new(net: NetworkParams, half_width: f64, nodes: usize) -> Result<Self, EbmError> {
        if net.shape.input_dim != 1 || net.shape.output_dim != 1 {
            return Err(EbmError::InvalidConfig("energy network must map R -> R".into()));
        }
        if !(half_width > 0.0) || nodes < 2 {
            return Err(EbmError::InvalidConfig(format!(
                "need half_width > 0 and at least 2 nodes, got {half_width}, {nodes}"
            )));
        }
        let h = 2.0 * half_width / (nodes - 1) as f64;
        let grid = (0..nodes).map(|k| -half_width + k as f64 * h).collect();
        let log_w = (0..nodes)
            .map(|k| {
                if k == 0 || k == nodes - 1 {
                    (0.5 * h).ln()
                } else {
                    h.ln()
                }
            })
            .collect();
        Ok(Self {
            net,
            half_width,
            grid,
            log_w,
        })
    }

    /// Xavier-initialized 1 -> 3x32 -> 1 tanh network on the configured grid.
    pub fn init(cfg: &EbmConfig, seed: u64) -> Result<Self, EbmError> {
        Self::new(
            NetworkParams::init_xavier(NetworkShape::energy(), seed),
            cfg.half_width,
            cfg.nodes,
        )
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn quad_grid(&self) -> &[f64] {
        &self.grid
    }

    fn column(&self, r: &[f64]) -> Result<Array2<f64>, EbmError> {
        let mut col = Array2::zeros((r.len(), 1));
        for (i, &v) in r.iter().enumerate() {
            if !v.is_finite() {
                return Err(EbmError::NonFiniteInput(i));
            }
            col[[i, 0]] = v.clamp(-self.half_width, self.half_width);
        }
        Ok(col)
    }

    /// `E(r)` for each input, clamped to the quadrature interval.
    pub fn energy(&self, r: &[f64]) -> Result<Vec<f64>, EbmError> {
        let out = self.net.forward(self.column(r)?.view())?;
        Ok(out.column(0).to_vec())
    }

    fn grid_energy(&self) -> Vec<f64> {
        self.energy(&self.grid).expect("grid nodes are finite")
    }

    /// `log Z` by the trapezoid rule, evaluated in log-sum-exp form.
    pub fn log_partition(&self) -> f64 {
        let e = self.grid_energy();
        log_sum_exp(self.log_w.iter().zip(&e).map(|(lw, e)| lw - e))
    }

    /// Trapezoid `log Z` of arbitrary node energies on this model's grid.
    pub fn log_partition_of(&self, energies: impl Fn(f64) -> f64) -> f64 {
        log_sum_exp(self.log_w.iter().zip(&self.grid).map(|(lw, &r)| lw - energies(r)))
    }

    pub fn log_density(&self, r: &[f64]) -> Result<Vec<f64>, EbmError> {
        let lz = self.log_partition();
        Ok(self.energy(r)?.into_iter().map(|e| -e - lz).collect())
    }

    /// `E(r) + log Z`, i.e. `-log p(r)`. Free of the additive offset `E` is only defined up to.
    pub fn normalized_energy(&self, r: &[f64]) -> Result<Vec<f64>, EbmError> {
        let lz = self.log_partition();
        Ok(self.energy(r)?.into_iter().map(|e| e + lz).collect())
    }

    /// Energy and normalized density at every quadrature node.
    pub fn density_table(&self) -> Vec<DensityRow> {
        let e = self.grid_energy();
        let lz = log_sum_exp(self.log_w.iter().zip(&e).map(|(lw, e)| lw - e));
        self.grid
            .iter()
            .zip(e)
            .map(|(&r, energy)| DensityRow {
                r,
                energy,
                density: (-energy - lz).exp(),
            })
            .collect()
    }

    pub fn write_density_csv<W: Write>(&self, w: W) -> Result<(), EbmError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "energy", "density"])?;
        for row in self.density_table() {
            wr.write_record([
                format!("{:.16e}", row.r),
                format!("{:.16e}", row.energy),
                format!("{:.16e}", row.density),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Mean energy of the batch plus `log Z`.
    pub fn nll(&self, batch: &[f64]) -> Result<f64, EbmError> {
        if batch.is_empty() {
            return Err(EbmError::EmptyBatch);
        }
        let e = self.energy(batch)?;
        Ok(e.iter().sum::<f64>() / e.len() as f64 + self.log_partition())
    }

    /// NLL and its gradient with respect to the network parameters. Batch rows and quadrature
    /// nodes go through one forward/backward pass; node cotangents are minus the normalized
    /// quadrature weights `w_k exp(-E_k) / Z`.
    pub fn nll_grad(&self, batch: &[f64]) -> Result<(f64, Vec<f64>), EbmError> {
        if batch.is_empty() {
            return Err(EbmError::EmptyBatch);
        }
        let b = batch.len();
        let k = self.grid.len();
        let mut inputs = self.column(batch)?;
        inputs
            .append(ndarray::Axis(0), self.column(&self.grid)?.view())
            .expect("one column");
        let log_w = &self.log_w;
        let (loss, grad) = backprop_scalar(&self.net, inputs.view(), &[], |jet: &Jet2Batch| {
            let vals = jet.values.column(0);
            let ge = vals.slice(ndarray::s![b..]);
            let lz = log_sum_exp(log_w.iter().zip(ge.iter()).map(|(lw, e)| lw - e));
            let mut seed = jet.zeros_like();
            let mut terms = vec![0.0; b + k];
            for i in 0..b {
                terms[i] = vals[i] / b as f64;
                seed.values[[i, 0]] = 1.0 / b as f64;
            }
            terms[b] = lz;
            for j in 0..k {
                seed.values[[b + j, 0]] = -(log_w[j] - ge[j] - lz).exp();
            }
            RowLoss { terms, seed }
        })?;
        Ok((loss, grad.0))
    }
}

/// Exponential moving average of residual minibatch standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningStd {
    pub sigma_run: f64,
    pub ema_beta: f64,
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

impl RunningStd {
    /// Starts from the sample std of a residual pool.
    pub fn from_pool(pool: &[f64], ema_beta: f64) -> Result<Self, EbmError> {
        if pool.len() < 2 {
            return Err(EbmError::BatchTooSmall(pool.len()));
        }
        Ok(Self {
            sigma_run: sample_std(pool).max(f64::MIN_POSITIVE),
            ema_beta,
        })
    }

    /// EMA step with the batch std, then the batch divided by the new `sigma_run`.
    pub fn update(&mut self, batch: &[f64]) -> Result<Vec<f64>, EbmError> {
        if batch.len() < 2 {
            return Err(EbmError::BatchTooSmall(batch.len()));
        }
        let s = sample_std(batch);
        self.sigma_run = ((1.0 - self.ema_beta) * self.sigma_run + self.ema_beta * s).max(f64::MIN_POSITIVE);
        Ok(self.normalize(batch))
    }

    pub fn normalize(&self, r: &[f64]) -> Vec<f64> {
        r.iter().map(|v| v / self.sigma_run).collect()
    }
}

/// Energy model plus the optimizer state that updates it.
#[derive(Debug, Clone)]
pub struct EbmTrainer {
    pub model: EnergyModel,
    pub running: RunningStd,
    pub adam_cfg: AdamConfig,
    adam: AdamState,
}

impl EbmTrainer {
    pub fn new(model: EnergyModel, running: RunningStd, adam_cfg: AdamConfig) -> Self {
        let adam = AdamState::new(model.net.len());
        Self {
            model,
            running,
            adam_cfg,
            adam,
        }
    }

    /// One Adam step on the NLL of already-normalized residuals.
    pub fn step(&mut self, normalized: &[f64]) -> Result<f64, EbmError> {
        let (loss, grad) = self.model.nll_grad(normalized)?;
        self.adam.step(&self.adam_cfg, &mut self.model.net.values, &grad);
        Ok(loss)
    }

    /// `steps` rounds of: draw a minibatch from `pool`, update `sigma_run`, normalize, update
    /// the energy. Returns the NLL per step.
    pub fn fit_initial(
        &mut self,
        pool: &[f64],
        steps: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Vec<f64>, EbmError> {
        if pool.is_empty() {
            return Err(EbmError::EmptyBatch);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let take = batch.min(pool.len());
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mb: Vec<f64> = index::sample(&mut rng, pool.len(), take)
                .iter()
                .map(|i| pool[i])
                .collect();
            let normalized = self.running.update(&mb)?;
            losses.push(self.step(&normalized)?);
        }
        Ok(losses)
    }
}

/// Number of strict interior local maxima of `values` that rise above `floor * max(values)`.
pub fn count_local_maxima(values: &[f64], floor: f64) -> usize {
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut count = 0;
    let mut i = 1;
    while i + 1 < values.len() {
        // walk plateaus as one feature
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == values[i] {
            j += 1;
        }
        if j + 1 < values.len()
            && values[i] > values[i - 1]
            && values[i] > values[j + 1]
            && values[i] > floor * top
        {
            count += 1;
        }
        i = j + 1;
    }
    count
}
