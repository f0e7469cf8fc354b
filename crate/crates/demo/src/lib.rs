//! WebAssembly bindings behind `www/index.html`: GRF initial conditions, fitting the residual
//! energy model to Gaussian-mixture noise, and the reliability gate curve.
//!
//! Everything also builds natively so the logic is tested with `cargo test`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use napinn::autodiff::AdamConfig;
use napinn::corruption::{sample_gmm, NoiseSpec};
use napinn::ebm::{count_local_maxima, EbmConfig, EbmTrainer, EnergyModel, RunningStd};
use napinn::pde::sample_grf;
use napinn::trainer::GateState;
use wasm_bindgen::prelude::*;

/// Unit-variance Gaussian random field on an `n x n` periodic grid, row-major.
#[wasm_bindgen]
pub fn grf_field(grid_n: usize, alpha: f64, seed: u32) -> Result<Vec<f64>, String> {
    if !(2..=512).contains(&grid_n) {
        return Err(format!("grid size must lie in [2, 512], got {grid_n}"));
    }
    let f = sample_grf(grid_n, alpha, u64::from(seed)).map_err(|e| e.to_string())?;
    Ok(f.into_raw_vec_and_offset().0)
}

/// `sigmoid(a (tau - E))` at each energy; `a` is the steepness itself (not its raw parameter).
#[wasm_bindgen]
pub fn gate_curve(a: f64, tau: f64, energies: Vec<f64>) -> Result<Vec<f64>, String> {
    if !(a > 0.0) {
        return Err(format!("steepness must be positive, got {a}"));
    }
    // softplus^-1(a) = ln(e^a - 1)
    let raw_a = if a > 30.0 { a } else { a.exp_m1().ln() };
    let gate = GateState {
        raw_a,
        tau,
        lambda_rej: 0.0,
    };
    Ok(gate.weights(&energies))
}

/// An energy model trained on draws from the default noise mixture, stepped from the page.
#[wasm_bindgen]
pub struct NoiseFit {
    trainer: EbmTrainer,
    noise: NoiseSpec,
    pool: Vec<f64>,
    batch: usize,
    seed: u64,
    steps: usize,
}

#[wasm_bindgen]
impl NoiseFit {
    #[wasm_bindgen(constructor)]
    pub fn new(samples: usize, batch: usize, lr: f64, seed: u32) -> Result<NoiseFit, String> {
        if samples < 2 || batch < 2 {
            return Err("need at least 2 samples and a batch of 2".into());
        }
        if !(lr > 0.0) {
            return Err(format!("learning rate must be positive, got {lr}"));
        }
        let noise = NoiseSpec::default();
        let seed = u64::from(seed);
        let pool = sample_gmm(&noise, samples, seed).map_err(|e| e.to_string())?;
        let cfg = EbmConfig::default();
        let model = EnergyModel::init(&cfg, seed.wrapping_add(1)).map_err(|e| e.to_string())?;
        let running = RunningStd::from_pool(&pool, cfg.ema_beta).map_err(|e| e.to_string())?;
        Ok(NoiseFit {
            trainer: EbmTrainer::new(model, running, AdamConfig::with_lr(lr)),
            noise,
            pool,
            batch,
            seed,
            steps: 0,
        })
    }

    /// Runs `steps` minibatch updates; returns the last negative log-likelihood.
    pub fn train(&mut self, steps: usize) -> Result<f64, String> {
        let seed = self.seed.wrapping_add(1000 + self.steps as u64);
        let losses = self
            .trainer
            .fit_initial(&self.pool, steps, self.batch, seed)
            .map_err(|e| e.to_string())?;
        self.steps += steps;
        Ok(losses.last().copied().unwrap_or(f64::NAN))
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[wasm_bindgen(getter)]
    pub fn sigma_run(&self) -> f64 {
        self.trainer.running.sigma_run
    }

    /// Quadrature nodes in normalized residual units.
    pub fn grid(&self) -> Vec<f64> {
        self.trainer.model.quad_grid().to_vec()
    }

    pub fn learned(&self) -> Vec<f64> {
        self.trainer
            .model
            .density_table()
            .iter()
            .map(|r| r.density)
            .collect()
    }

    /// Density of the mixture draws divided by `sigma_run`, on the same nodes.
    pub fn truth(&self) -> Vec<f64> {
        let scale = 1.0 / self.sigma_run();
        self.grid()
            .iter()
            .map(|&r| self.noise.scaled_density(scale, r))
            .collect()
    }

    /// `KL(truth || learned)` by the trapezoid rule.
    pub fn kl(&self) -> f64 {
        let (g, p, q) = (self.grid(), self.truth(), self.learned());
        let f: Vec<f64> = p
            .iter()
            .zip(&q)
            .map(|(&p, &q)| {
                if p > 0.0 {
                    p * (p / q.max(f64::MIN_POSITIVE)).ln()
                } else {
                    0.0
                }
            })
            .collect();
        (1..g.len())
            .map(|i| 0.5 * (g[i] - g[i - 1]) * (f[i] + f[i - 1]))
            .sum()
    }

    /// Local maxima of the learned density above 1% of its peak.
    pub fn modes(&self) -> usize {
        count_local_maxima(&self.learned(), 0.01)
    }

    /// `E(r) + log Z` for raw residuals, i.e. the gate's input.
    pub fn energies(&self, raw: Vec<f64>) -> Result<Vec<f64>, String> {
        let r = self.trainer.running.normalize(&raw);
        self.trainer
            .model
            .normalized_energy(&r)
            .map_err(|e| e.to_string())
    }

    /// `n` fresh draws from the mixture, for overlaying inliers on the gate.
    pub fn sample(&self, n: usize, seed: u32) -> Result<Vec<f64>, String> {
        sample_gmm(&self.noise, n, u64::from(seed)).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grf_is_standardized_and_smoother_with_alpha() {
        let n = 32;
        let rough = grf_field(n, 1.5, 1).unwrap();
        let smooth = grf_field(n, 5.0, 1).unwrap();
        let mean = rough.iter().sum::<f64>() / rough.len() as f64;
        let var = rough.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rough.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let jump = |f: &[f64]| (0..n * n - 1).map(|i| (f[i + 1] - f[i]).powi(2)).sum::<f64>();
        assert!(jump(&smooth) < jump(&rough));
        assert!(grf_field(1, 3.0, 0).is_err());
    }

    #[test]
    fn gate_curve_matches_the_sigmoid() {
        let g = gate_curve(2.0, 1.0, vec![1.0, 0.0, 3.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert!((g[1] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!(g[2] < g[0] && g[0] < g[1]);
        let steep = gate_curve(100.0, 0.0, vec![-1.0, 1.0]).unwrap();
        assert!(steep[0] > 1.0 - 1e-12 && steep[1] < 1e-12);
        assert!(gate_curve(0.0, 0.0, vec![]).is_err());
    }

    #[test]
    fn noise_fit_learns_the_mixture() {
        let mut fit = NoiseFit::new(4000, 256, 3e-3, 7).unwrap();
        let kl0 = fit.kl();
        fit.train(400).unwrap();
        assert_eq!(fit.steps(), 400);
        assert!(fit.kl() < 0.5 * kl0, "{} -> {}", kl0, fit.kl());
        let e = fit.energies(vec![0.0, 40.0]).unwrap();
        // far outside the noise the density is tiny, so the normalized energy is large
        assert!(e[1] > e[0]);
        let mass: f64 = {
            let (g, q) = (fit.grid(), fit.learned());
            (1..g.len())
                .map(|i| 0.5 * (g[i] - g[i - 1]) * (q[i] + q[i - 1]))
                .sum()
        };
        assert!((mass - 1.0).abs() < 1e-12);
    }
}
