//! Residual operators of the three benchmarks and their vector-Jacobian products.
//!
//! Residuals are written as `N[u; param] - f` so a solution has residual zero.

use crate::autodiff::Jet2Batch;

use super::problem::{BenchmarkKind, ProblemSpec};
use super::PdeError;

/// Value and the derivatives the benchmarks need at one point for one channel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointJet {
    pub u: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub xx: f64,
    pub yy: f64,
}

impl PointJet {
    pub fn constant(u: f64) -> Self {
        Self { u, ..Self::default() }
    }

    pub fn laplacian(&self) -> f64 {
        self.xx + self.yy
    }
}

/// Where the `x`, `y` and `t` derivatives sit in a jet's direction list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JetLayout {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

impl JetLayout {
    /// Directions requested in input order `(x, y, t)`.
    pub const XYT: JetLayout = JetLayout { x: 0, y: 1, t: 2 };

    fn max_index(&self) -> usize {
        self.x.max(self.y).max(self.t)
    }
}

/// Per-row [`PointJet`]s of one output channel.
pub fn channel_jets(jets: &Jet2Batch, channel: usize, layout: JetLayout) -> Result<Vec<PointJet>, PdeError> {
    let (Some(d1), Some(d2)) = (&jets.d1, &jets.d2) else {
        return Err(PdeError::MissingDirection);
    };
    if jets.n_dirs() <= layout.max_index() || channel >= jets.outputs() {
        return Err(PdeError::MissingDirection);
    }
    Ok((0..jets.batch())
        .map(|i| PointJet {
            u: jets.values[[i, channel]],
            t: d1[[i, channel, layout.t]],
            x: d1[[i, channel, layout.x]],
            y: d1[[i, channel, layout.y]],
            xx: d2[[i, channel, layout.x]],
            yy: d2[[i, channel, layout.y]],
        })
        .collect())
}

/// Adds a point cotangent into a jet-shaped seed.
pub fn scatter_cotangent(
    seed: &mut Jet2Batch,
    row: usize,
    channel: usize,
    layout: JetLayout,
    cot: &PointJet,
) {
    seed.values[[row, channel]] += cot.u;
    let d1 = seed.d1.as_mut().expect("seed carries first derivatives");
    d1[[row, channel, layout.t]] += cot.t;
    d1[[row, channel, layout.x]] += cot.x;
    d1[[row, channel, layout.y]] += cot.y;
    let d2 = seed.d2.as_mut().expect("seed carries second derivatives");
    d2[[row, channel, layout.x]] += cot.xx;
    d2[[row, channel, layout.y]] += cot.yy;
}

/// `u_t - eps^2 (u_xx + u_yy) + u^3 - u - f`
pub fn allen_cahn_point(u: &PointJet, forcing: f64, eps: f64) -> f64 {
    u.t - eps * eps * u.laplacian() + u.u * u.u * u.u - u.u - forcing
}

/// `(u_t + u u_x + v u_y - nu lap u, v_t + u v_x + v v_y - nu lap v)`
pub fn burgers_point(u: &PointJet, v: &PointJet, nu: f64) -> [f64; 2] {
    [
        u.t + u.u * u.x + v.u * u.y - nu * u.laplacian(),
        v.t + u.u * v.x + v.u * v.y - nu * v.laplacian(),
    ]
}

/// Lambda-omega residual with `lambda = 1 - r^2`, `omega = -beta r^2`.
pub fn lambda_omega_point(u: &PointJet, v: &PointJet, beta: f64, du: f64, dv: f64) -> [f64; 2] {
    let r2 = u.u * u.u + v.u * v.u;
    let lambda = 1.0 - r2;
    let omega = -beta * r2;
    [
        u.t - du * u.laplacian() - lambda * u.u + omega * v.u,
        v.t - dv * v.laplacian() - omega * u.u - lambda * v.u,
    ]
}

pub fn residual_allen_cahn(u: &[PointJet], forcing: &[f64], eps: f64) -> Vec<f64> {
    u.iter()
        .zip(forcing)
        .map(|(p, &f)| allen_cahn_point(p, f, eps))
        .collect()
}

pub fn residual_burgers(u: &[PointJet], v: &[PointJet], nu: f64) -> Vec<[f64; 2]> {
    u.iter().zip(v).map(|(a, b)| burgers_point(a, b, nu)).collect()
}

pub fn residual_lambda_omega(u: &[PointJet], v: &[PointJet], beta: f64, du: f64, dv: f64) -> Vec<[f64; 2]> {
    u.iter()
        .zip(v)
        .map(|(a, b)| lambda_omega_point(a, b, beta, du, dv))
        .collect()
}

/// The residual operator of one benchmark with its fixed constants bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOperator {
    pub kind: BenchmarkKind,
    pub diffusion: (f64, f64),
}

impl ResidualOperator {
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        Self {
            kind: spec.kind,
            diffusion: spec.diffusion,
        }
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    /// Residual per channel; unused channels are zero.
    pub fn point(&self, jets: &[PointJet], forcing: f64, param: f64) -> [f64; 2] {
        match self.kind {
            BenchmarkKind::AllenCahn => [allen_cahn_point(&jets[0], forcing, param), 0.0],
            BenchmarkKind::Burgers => burgers_point(&jets[0], &jets[1], param),
            BenchmarkKind::LambdaOmega => {
                lambda_omega_point(&jets[0], &jets[1], param, self.diffusion.0, self.diffusion.1)
            }
        }
    }

    /// Pulls `seed = dL/d(residual)` back to the point jets and the trainable parameter.
    pub fn point_vjp(&self, jets: &[PointJet], param: f64, seed: [f64; 2]) -> ([PointJet; 2], f64) {
        let mut cu = PointJet::default();
        let mut cv = PointJet::default();
        let dparam;
        match self.kind {
            BenchmarkKind::AllenCahn => {
                let (u, s, eps) = (&jets[0], seed[0], param);
                cu.t = s;
                cu.xx = -eps * eps * s;
                cu.yy = -eps * eps * s;
                cu.u = (3.0 * u.u * u.u - 1.0) * s;
                dparam = -2.0 * eps * u.laplacian() * s;
            }
            BenchmarkKind::Burgers => {
                let (u, v, nu) = (&jets[0], &jets[1], param);
                let [su, sv] = seed;
                cu.t = su;
                cu.x = u.u * su;
                cu.y = v.u * su;
                cu.xx = -nu * su;
                cu.yy = -nu * su;
                cu.u = u.x * su + v.x * sv;
                cv.t = sv;
                cv.x = u.u * sv;
                cv.y = v.u * sv;
                cv.xx = -nu * sv;
                cv.yy = -nu * sv;
                cv.u = u.y * su + v.y * sv;
                dparam = -(u.laplacian() * su + v.laplacian() * sv);
            }
            BenchmarkKind::LambdaOmega => {
                let (u, v, beta) = (&jets[0], &jets[1], param);
                let (du, dv) = self.diffusion;
                let [su, sv] = seed;
                let (a, b) = (u.u, v.u);
                let r2 = a * a + b * b;
                // d r_u / d(u, v) and d r_v / d(u, v)
                let ru_u = -1.0 + r2 + 2.0 * a * a - 2.0 * beta * a * b;
                let ru_v = 2.0 * a * b - beta * (r2 + 2.0 * b * b);
                let rv_u = beta * (r2 + 2.0 * a * a) + 2.0 * a * b;
                let rv_v = 2.0 * beta * a * b - 1.0 + r2 + 2.0 * b * b;
                cu.t = su;
                cu.xx = -du * su;
                cu.yy = -du * su;
                cu.u = ru_u * su + rv_u * sv;
                cv.t = sv;
                cv.xx = -dv * sv;
                cv.yy = -dv * sv;
                cv.u = ru_v * su + rv_v * sv;
                dparam = -r2 * b * su + r2 * a * sv;
            }
        }
        ([cu, cv], dparam)
    }
}
