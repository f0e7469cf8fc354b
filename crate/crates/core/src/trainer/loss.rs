//! Per-measurement data losses and the energy gate.

use serde::{Deserialize, Serialize};

/// Data-fit loss of a baseline, applied to raw residuals `r = y - u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataLoss {
    Mse,
    L1,
    /// Tsallis q-Gaussian negative log-likelihood, `1 < q < 3`.
    QGaussian {
        q: f64,
    },
}

/// `1 / (2 (3 - q))`
pub fn beta_q(q: f64) -> f64 {
    1.0 / (2.0 * (3.0 - q))
}

impl DataLoss {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            Self::Mse => r * r,
            Self::L1 => r.abs(),
            Self::QGaussian { q } => (1.0 / (q - 1.0)) * ((q - 1.0) * beta_q(q) * r * r).ln_1p(),
        }
    }

    /// `d value / d r`; the L1 subgradient at 0 is 0.
    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            Self::Mse => 2.0 * r,
            Self::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::QGaussian { q } => {
                let b = beta_q(q);
                2.0 * b * r / (1.0 + (q - 1.0) * b * r * r)
            }
        }
    }

    pub fn mean(&self, r: &[f64]) -> f64 {
        r.iter().map(|&v| self.value(v)).sum::<f64>() / r.len() as f64
    }
}

pub fn data_loss_mse(r: &[f64]) -> f64 {
    DataLoss::Mse.mean(r)
}

pub fn data_loss_l1(r: &[f64]) -> f64 {
    DataLoss::L1.mean(r)
}

pub fn data_loss_q(r: &[f64], q: f64) -> f64 {
    DataLoss::QGaussian { q }.mean(r)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Linear-interpolation percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Sigmoid reliability gate `g = sigmoid(a (tau - E))` with `a = softplus(raw_a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub raw_a: f64,
    pub tau: f64,
    pub lambda_rej: f64,
}

/// Gated data term, rejection term and their gradients with respect to `(tau, raw_a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateTerms {
    pub data: f64,
    pub rejection: f64,
    pub d_tau: f64,
    pub d_raw_a: f64,
}

impl GateState {
    /// `a = 1` and `tau` at the given percentile of the energies.
    pub fn from_energies(energies: &[f64], percentile_p: f64, lambda_rej: f64) -> Self {
        Self {
            raw_a: (std::f64::consts::E - 1.0).ln(),
            tau: percentile(energies, percentile_p),
            lambda_rej,
        }
    }

    pub fn a(&self) -> f64 {
        softplus(self.raw_a)
    }

    pub fn weight(&self, energy: f64) -> f64 {
        sigmoid(self.a() * (self.tau - energy))
    }

    pub fn weights(&self, energies: &[f64]) -> Vec<f64> {
        energies.iter().map(|&e| self.weight(e)).collect()
    }

    /// `mean(g r^2)` and `lambda_eff * mean(1 - g)` for squared residuals `r2`, with the
    /// rejection cost measured in the units of `r2` (`lambda_eff = lambda_rej * unit^2`).
    pub fn terms(&self, r2: &[f64], energies: &[f64], unit: f64) -> GateTerms {
        let n = r2.len() as f64;
        let a = self.a();
        let lam = self.lambda_rej * unit * unit;
        let da_draw = sigmoid(self.raw_a);
        let mut t = GateTerms {
            data: 0.0,
            rejection: 0.0,
            d_tau: 0.0,
            d_raw_a: 0.0,
        };
        for (&r2, &e) in r2.iter().zip(energies) {
            let g = sigmoid(a * (self.tau - e));
            t.data += g * r2 / n;
            t.rejection += lam * (1.0 - g) / n;
            let dl_dg = (r2 - lam) / n;
            let dg = g * (1.0 - g);
            t.d_tau += dl_dg * dg * a;
            t.d_raw_a += dl_dg * dg * (self.tau - e) * da_draw;
        }
        t
    }
}

/// `L_pde + mean(g r^2) + lambda_rej mean(1 - g)` for given weights.
pub fn gated_objective(pde: f64, r2: &[f64], g: &[f64], lambda_rej: f64) -> f64 {
    let n = r2.len() as f64;
    pde + r2.iter().zip(g).map(|(r, g)| g * r).sum::<f64>() / n
        + lambda_rej * g.iter().map(|g| 1.0 - g).sum::<f64>() / n
}
