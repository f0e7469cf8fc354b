//! Dense tanh MLPs stored as a single flat parameter vector.
//!
//! Canonical layout: for every layer in order, the weight matrix in row-major
//! `[fan_out x fan_in]` order followed by the bias vector `[fan_out]`.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl NetworkShape {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
    ) -> Result<Self, AutodiffError> {
        let shape = Self {
            input_dim,
            output_dim,
            hidden_layers,
            hidden_width,
            activation: Activation::Tanh,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// The PINN backbone: five hidden layers of width 80.
    pub fn pinn(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, output_dim, 5, 80).expect("valid backbone shape")
    }

    /// The residual energy network: scalar in, scalar out, three hidden layers of width 32.
    pub fn energy() -> Self {
        Self::new(1, 1, 3, 32).expect("valid energy shape")
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.hidden_layers == 0 || self.input_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(AutodiffError::InvalidShape(*self));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        dims.push((self.input_dim, self.hidden_width));
        for _ in 1..self.hidden_layers {
            dims.push((self.hidden_width, self.hidden_width));
        }
        dims.push((self.hidden_width, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    /// Offsets of (weights, bias) for each layer inside the flat vector.
    pub(crate) fn layer_offsets(&self) -> Vec<LayerSlot> {
        let mut off = 0;
        self.layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let slot = LayerSlot {
                    fan_in,
                    fan_out,
                    weight: off,
                    bias: off + fan_in * fan_out,
                };
                off += fan_in * fan_out + fan_out;
                slot
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl LayerSlot {
    pub fn weights<'a>(&self, flat: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.fan_out, self.fan_in),
            &flat[self.weight..self.weight + self.fan_in * self.fan_out],
        )
        .expect("layer slot in bounds")
    }

    pub fn bias<'a>(&self, flat: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&flat[self.bias..self.bias + self.fan_out])
    }

    pub fn weights_mut<'a>(&self, flat: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape(
            (self.fan_out, self.fan_in),
            &mut flat[self.weight..self.weight + self.fan_in * self.fan_out],
        )
        .expect("layer slot in bounds")
    }

    pub fn bias_mut<'a>(&self, flat: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut flat[self.bias..self.bias + self.fan_out])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub shape: NetworkShape,
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(shape: NetworkShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_vec(shape: NetworkShape, values: Vec<f64>) -> Result<Self, AutodiffError> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(AutodiffError::ParamLength {
                expected: shape.param_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteParam(i));
        }
        Ok(Self { shape, values })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init_xavier(shape: NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(shape);
        for slot in shape.layer_offsets() {
            let bound = xavier_bound(slot.fan_in, slot.fan_out);
            for w in &mut params.values[slot.weight..slot.bias] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        params
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mutable view of the final layer's bias.
    pub fn output_bias_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        let slot = *self.shape.layer_offsets().last().expect("at least one layer");
        slot.bias_mut(&mut self.values)
    }

    pub(crate) fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<(), AutodiffError> {
        if inputs.ncols() != self.shape.input_dim {
            return Err(AutodiffError::InputDim {
                expected: self.shape.input_dim,
                got: inputs.ncols(),
            });
        }
        Ok(())
    }

    /// Plain evaluation: tanh hidden layers, linear output.
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>, AutodiffError> {
        self.check_inputs(&inputs)?;
        let slots = self.shape.layer_offsets();
        let last = slots.len() - 1;
        let mut h = inputs.to_owned();
        for (l, slot) in slots.iter().enumerate() {
            let mut z = Array2::zeros((h.nrows(), slot.fan_out));
            general_mat_mul(1.0, &h, &slot.weights(&self.values).t(), 0.0, &mut z);
            let b = slot.bias(&self.values);
            for mut row in z.rows_mut() {
                row += &b;
            }
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            h = z;
        }
        Ok(h)
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[allow(clippy::needless_range_loop)]
    fn naive_forward(p: &NetworkParams, x: &[f64]) -> Vec<f64> {
        let slots = p.shape.layer_offsets();
        let mut h = x.to_vec();
        for (l, s) in slots.iter().enumerate() {
            let mut z = vec![0.0; s.fan_out];
            for o in 0..s.fan_out {
                let mut acc = p.values[s.bias + o];
                for i in 0..s.fan_in {
                    acc += p.values[s.weight + o * s.fan_in + i] * h[i];
                }
                z[o] = if l + 1 < slots.len() { acc.tanh() } else { acc };
            }
            h = z;
        }
        h
    }

    #[test]
    fn xavier_biases_zero_and_weights_bounded() {
        let shape = NetworkShape::pinn(3, 2);
        let p = NetworkParams::init_xavier(shape, 7);
        assert_eq!(p.len(), shape.param_count());
        for slot in shape.layer_offsets() {
            let bound = xavier_bound(slot.fan_in, slot.fan_out);
            assert!(slot.bias(&p.values).iter().all(|&b| b == 0.0));
            assert!(slot.weights(&p.values).iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn xavier_bound_for_square_three() {
        assert_eq!(xavier_bound(3, 3), 1.0);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let shape = NetworkShape::energy();
        assert_eq!(
            NetworkParams::init_xavier(shape, 11),
            NetworkParams::init_xavier(shape, 11)
        );
        assert_ne!(
            NetworkParams::init_xavier(shape, 11),
            NetworkParams::init_xavier(shape, 12)
        );
    }

    #[test]
    fn param_count_matches_layout() {
        let shape = NetworkShape::pinn(3, 1);
        // 3*80+80 + 4*(80*80+80) + 80*1+1
        assert_eq!(shape.param_count(), 320 + 4 * 6480 + 81);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = NetworkParams::zeros(NetworkShape::pinn(3, 2));
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        assert!(p.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_head_is_affine() {
        let shape = NetworkShape::new(1, 1, 1, 1).unwrap();
        // hidden unit is the constant tanh(atanh(0.5)) = 0.5; the head maps h -> 2h
        let p = NetworkParams::from_vec(shape, vec![0.0, 0.5f64.atanh(), 2.0, 0.0]).unwrap();
        let y = p.forward(array![[123.0]].view()).unwrap();
        assert!((y[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_naive_evaluator() {
        let shape = NetworkShape::pinn(3, 2);
        let p = NetworkParams::init_xavier(shape, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Array2::from_shape_fn((17, 3), |_| rng.random_range(-1.0..1.0));
        let y = p.forward(x.view()).unwrap();
        for (row, out) in x.rows().into_iter().zip(y.rows()) {
            let naive = naive_forward(&p, row.as_slice().unwrap());
            for (a, b) in out.iter().zip(&naive) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = NetworkParams::zeros(NetworkShape::pinn(3, 1));
        let err = p.forward(array![[1.0, 2.0]].view()).unwrap_err();
        assert!(matches!(err, AutodiffError::InputDim { expected: 3, got: 2 }));
    }

    #[test]
    fn forward_is_batch_permutation_equivariant() {
        let p = NetworkParams::init_xavier(NetworkShape::pinn(3, 1), 5);
        let x = array![[0.1, 0.2, 0.3], [-0.5, 0.0, 0.9], [1.0, -1.0, 0.0]];
        let perm = [2usize, 0, 1];
        let xp = Array2::from_shape_fn((3, 3), |(i, j)| x[[perm[i], j]]);
        let y = p.forward(x.view()).unwrap();
        let yp = p.forward(xp.view()).unwrap();
        for i in 0..3 {
            assert_eq!(yp[[i, 0]], y[[perm[i], 0]]);
        }
    }

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        let shape = NetworkShape::energy();
        assert!(matches!(
            NetworkParams::from_vec(shape, vec![0.0; 3]),
            Err(AutodiffError::ParamLength { .. })
        ));
        let mut v = vec![0.0; shape.param_count()];
        v[4] = f64::NAN;
        assert!(matches!(
            NetworkParams::from_vec(shape, v),
            Err(AutodiffError::NonFiniteParam(4))
        ));
    }
}
