//! Second-order forward jets through the MLP and reverse accumulation over them.
//!
//! Every layer carries `1 + 2D` stacked streams for a batch of `N` rows: the
//! value, `D` first directional derivatives and `D` pure second derivatives,
//! laid out as row blocks of one `[(1 + 2D) * N, width]` matrix so each affine
//! map is a single matrix product. The bias only enters the value stream.

use ndarray::{linalg::general_mat_mul, s, Array2, Array3, ArrayView2, Axis};

use super::network::{LayerSlot, NetworkParams};
use super::AutodiffError;

/// Network outputs with first and pure second derivatives along requested input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2Batch {
    /// `[batch, output_dim]`
    pub values: Array2<f64>,
    /// `[batch, output_dim, n_dirs]`, `None` when no directions were requested.
    pub d1: Option<Array3<f64>>,
    /// `[batch, output_dim, n_dirs]`
    pub d2: Option<Array3<f64>>,
}

impl Jet2Batch {
    pub fn zeros(batch: usize, outputs: usize, n_dirs: usize) -> Self {
        let derivs = || (n_dirs > 0).then(|| Array3::zeros((batch, outputs, n_dirs)));
        Self {
            values: Array2::zeros((batch, outputs)),
            d1: derivs(),
            d2: derivs(),
        }
    }

    pub fn batch(&self) -> usize {
        self.values.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_dirs(&self) -> usize {
        self.d1.as_ref().map_or(0, |d| d.shape()[2])
    }

    /// Same layout, all zeros: the usual starting point for a cotangent.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.batch(), self.outputs(), self.n_dirs())
    }

    pub fn is_finite(&self) -> bool {
        let fin = |a: &Option<Array3<f64>>| a.as_ref().is_none_or(|a| a.iter().all(|v| v.is_finite()));
        self.values.iter().all(|v| v.is_finite()) && fin(&self.d1) && fin(&self.d2)
    }

    fn from_stacked(stacked: &Array2<f64>, n: usize, n_dirs: usize) -> Self {
        let out = stacked.ncols();
        let mut jet = Self::zeros(n, out, n_dirs);
        jet.values.assign(&stacked.slice(s![0..n, ..]));
        if let (Some(d1), Some(d2)) = (jet.d1.as_mut(), jet.d2.as_mut()) {
            for k in 0..n_dirs {
                let first = stacked.slice(s![(1 + k) * n..(2 + k) * n, ..]);
                let second = stacked.slice(s![(1 + n_dirs + k) * n..(2 + n_dirs + k) * n, ..]);
                d1.index_axis_mut(Axis(2), k).assign(&first);
                d2.index_axis_mut(Axis(2), k).assign(&second);
            }
        }
        jet
    }

    fn to_stacked(&self) -> Array2<f64> {
        let (n, out, d) = (self.batch(), self.outputs(), self.n_dirs());
        let mut stacked = Array2::zeros(((1 + 2 * d) * n, out));
        stacked.slice_mut(s![0..n, ..]).assign(&self.values);
        if let (Some(d1), Some(d2)) = (&self.d1, &self.d2) {
            for k in 0..d {
                stacked
                    .slice_mut(s![(1 + k) * n..(2 + k) * n, ..])
                    .assign(&d1.index_axis(Axis(2), k));
                stacked
                    .slice_mut(s![(1 + d + k) * n..(2 + d + k) * n, ..])
                    .assign(&d2.index_axis(Axis(2), k));
            }
        }
        stacked
    }
}

/// Flat gradient aligned with a [`NetworkParams`] vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator(pub Vec<f64>);

impl GradAccumulator {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn for_params(params: &NetworkParams) -> Self {
        Self::zeros(params.len())
    }

    pub fn add(&mut self, other: &GradAccumulator) {
        assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

struct LayerRecord {
    /// Stacked layer input.
    input: Array2<f64>,
    /// Stacked pre-activation and the tanh of its value stream; empty for the linear head.
    pre: Option<(Array2<f64>, Array2<f64>)>,
}

/// Everything the reverse sweep needs from one jet evaluation.
pub struct JetTape {
    n: usize,
    n_dirs: usize,
    layers: Vec<LayerRecord>,
}

impl NetworkParams {
    /// Values plus first and pure second derivatives along `directions`.
    pub fn forward_jet2(
        &self,
        inputs: ArrayView2<f64>,
        directions: &[usize],
    ) -> Result<Jet2Batch, AutodiffError> {
        self.forward_jet2_taped(inputs, directions).map(|(jet, _)| jet)
    }

    pub fn forward_jet2_taped(
        &self,
        inputs: ArrayView2<f64>,
        directions: &[usize],
    ) -> Result<(Jet2Batch, JetTape), AutodiffError> {
        self.check_inputs(&inputs)?;
        if let Some(&bad) = directions.iter().find(|&&d| d >= self.shape.input_dim) {
            return Err(AutodiffError::Direction {
                index: bad,
                input_dim: self.shape.input_dim,
            });
        }
        let n = inputs.nrows();
        let d = directions.len();
        let streams = 1 + 2 * d;

        let mut h = Array2::zeros((streams * n, self.shape.input_dim));
        h.slice_mut(s![0..n, ..]).assign(&inputs);
        for (k, &dir) in directions.iter().enumerate() {
            h.slice_mut(s![(1 + k) * n..(2 + k) * n, dir]).fill(1.0);
        }

        let slots = self.shape.layer_offsets();
        let last = slots.len() - 1;
        let mut layers = Vec::with_capacity(slots.len());
        for (l, slot) in slots.iter().enumerate() {
            let z = affine(&self.values, slot, &h, n);
            if l == last {
                layers.push(LayerRecord { input: h, pre: None });
                let jet = Jet2Batch::from_stacked(&z, n, d);
                return Ok((jet, JetTape { n, n_dirs: d, layers }));
            }
            let (next, act) = tanh_jet(&z, n, d);
            layers.push(LayerRecord {
                input: h,
                pre: Some((z, act)),
            });
            h = next;
        }
        unreachable!("networks always have an output layer")
    }
}

impl JetTape {
    /// Accumulates `d(loss)/d(params)` given `seed = d(loss)/d(jet outputs)`.
    pub fn backward(&self, params: &NetworkParams, seed: &Jet2Batch, grad: &mut GradAccumulator) {
        assert_eq!(seed.batch(), self.n, "seed batch mismatch");
        assert_eq!(seed.n_dirs(), self.n_dirs, "seed direction mismatch");
        let slots = params.shape.layer_offsets();
        let mut g = seed.to_stacked();
        for (l, slot) in slots.iter().enumerate().rev() {
            let record = &self.layers[l];
            let mut gw = slot.weights_mut(&mut grad.0);
            general_mat_mul(1.0, &g.t(), &record.input, 1.0, &mut gw);
            let mut gb = slot.bias_mut(&mut grad.0);
            gb += &g.slice(s![0..self.n, ..]).sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let mut gh = Array2::zeros((g.nrows(), slot.fan_in));
            general_mat_mul(1.0, &g, &slot.weights(&params.values), 0.0, &mut gh);
            let (pre, act) = self.layers[l - 1]
                .pre
                .as_ref()
                .expect("hidden layers record pre-activations");
            g = tanh_jet_backward(pre, act, &gh, self.n, self.n_dirs);
        }
    }
}

/// Scalar loss assembled from jet outputs: per-row contributions and the cotangent of their sum.
pub struct RowLoss {
    pub terms: Vec<f64>,
    pub seed: Jet2Batch,
}

/// Evaluates a loss built from network jets and returns it with its exact parameter gradient.
///
/// The loss is the sum of `terms` in row order. A non-finite term aborts with its row index.
pub fn backprop_scalar<F>(
    params: &NetworkParams,
    inputs: ArrayView2<f64>,
    directions: &[usize],
    loss: F,
) -> Result<(f64, GradAccumulator), AutodiffError>
where
    F: FnOnce(&Jet2Batch) -> RowLoss,
{
    let (jet, tape) = params.forward_jet2_taped(inputs, directions)?;
    let RowLoss { terms, seed } = loss(&jet);
    if let Some(index) = terms.iter().position(|t| !t.is_finite()) {
        return Err(AutodiffError::NonFiniteLoss { index });
    }
    let mut grad = GradAccumulator::for_params(params);
    tape.backward(params, &seed, &mut grad);
    Ok((terms.iter().sum(), grad))
}

fn affine(flat: &[f64], slot: &LayerSlot, h: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut z = Array2::zeros((h.nrows(), slot.fan_out));
    general_mat_mul(1.0, h, &slot.weights(flat).t(), 0.0, &mut z);
    let b = slot.bias(flat);
    for mut row in z.slice_mut(s![0..n, ..]).rows_mut() {
        row += &b;
    }
    z
}

fn tanh_jet(z: &Array2<f64>, n: usize, d: usize) -> (Array2<f64>, Array2<f64>) {
    let w = z.ncols();
    let block = n * w;
    let zs = z.as_slice().expect("standard layout");
    let mut h = Array2::zeros(z.raw_dim());
    let mut act = Array2::zeros((n, w));
    let hs = h.as_slice_mut().expect("standard layout");
    let acts = act.as_slice_mut().expect("standard layout");
    for i in 0..block {
        let sv = zs[i].tanh();
        let s1 = 1.0 - sv * sv;
        let s2 = -2.0 * sv * s1;
        acts[i] = sv;
        hs[i] = sv;
        for k in 0..d {
            let i1 = (1 + k) * block + i;
            let i2 = (1 + d + k) * block + i;
            let a1 = zs[i1];
            hs[i1] = s1 * a1;
            hs[i2] = s2 * a1 * a1 + s1 * zs[i2];
        }
    }
    (h, act)
}

fn tanh_jet_backward(
    z: &Array2<f64>,
    act: &Array2<f64>,
    gh: &Array2<f64>,
    n: usize,
    d: usize,
) -> Array2<f64> {
    let block = n * z.ncols();
    let zs = z.as_slice().expect("standard layout");
    let acts = act.as_slice().expect("standard layout");
    let ghs = gh.as_slice().expect("standard layout");
    let mut gz = Array2::zeros(z.raw_dim());
    let gzs = gz.as_slice_mut().expect("standard layout");
    for i in 0..block {
        let sv = acts[i];
        let s1 = 1.0 - sv * sv;
        let s2 = -2.0 * sv * s1;
        let s3 = -2.0 * s1 * s1 - 2.0 * sv * s2;
        let mut g0 = ghs[i] * s1;
        for k in 0..d {
            let i1 = (1 + k) * block + i;
            let i2 = (1 + d + k) * block + i;
            let (a1, a2) = (zs[i1], zs[i2]);
            let (g1, g2) = (ghs[i1], ghs[i2]);
            g0 += g1 * s2 * a1 + g2 * (s3 * a1 * a1 + s2 * a2);
            gzs[i1] = g1 * s1 + 2.0 * g2 * s2 * a1;
            gzs[i2] = g2 * s1;
        }
        gzs[i] = g0;
    }
    gz
}
