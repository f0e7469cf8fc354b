use ndarray::Array2;

use crate::autodiff::{AutodiffError, Jet2Batch, NetworkParams, NetworkShape};
use crate::pde::{JetLayout, PointJet, ProblemSpec};

/// Fully connected tanh network on `(x, y, t)` mapped affinely onto `[-1, 1]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnModel {
    pub net: NetworkParams,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl PinnModel {
    pub fn new(net: NetworkParams, lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { net, lo, hi }
    }

    /// Xavier-initialized 5x80 network sized for the benchmark.
    pub fn init(spec: &ProblemSpec, seed: u64) -> Self {
        let (lo, hi) = spec.bounds();
        let net = NetworkParams::init_xavier(NetworkShape::pinn(3, spec.channels()), seed);
        Self::new(net, lo, hi)
    }

    pub fn channels(&self) -> usize {
        self.net.shape.output_dim
    }

    /// `d(normalized)/d(physical)` per input.
    pub fn scale(&self) -> [f64; 3] {
        std::array::from_fn(|k| {
            let w = self.hi[k] - self.lo[k];
            if w > 0.0 {
                2.0 / w
            } else {
                1.0
            }
        })
    }

    pub fn normalize(&self, pts: &[[f64; 3]]) -> Array2<f64> {
        let c = self.scale();
        Array2::from_shape_fn((pts.len(), 3), |(i, k)| (pts[i][k] - self.lo[k]) * c[k] - 1.0)
    }

    /// Network output `[n, channels]` at physical points.
    pub fn predict(&self, pts: &[[f64; 3]]) -> Result<Array2<f64>, AutodiffError> {
        self.net.forward(self.normalize(pts).view())
    }

    /// Physical-coordinate jets of one channel from a jet over normalized inputs in `XYT` order.
    pub fn physical_jets(&self, jet: &Jet2Batch, channel: usize) -> Vec<PointJet> {
        let c = self.scale();
        let d1 = jet.d1.as_ref().expect("jet carries derivatives");
        let d2 = jet.d2.as_ref().expect("jet carries derivatives");
        let l = JetLayout::XYT;
        (0..jet.batch())
            .map(|i| PointJet {
                u: jet.values[[i, channel]],
                x: c[0] * d1[[i, channel, l.x]],
                y: c[1] * d1[[i, channel, l.y]],
                t: c[2] * d1[[i, channel, l.t]],
                xx: c[0] * c[0] * d2[[i, channel, l.x]],
                yy: c[1] * c[1] * d2[[i, channel, l.y]],
            })
            .collect()
    }

    /// Adds a physical-coordinate cotangent into a normalized-input seed.
    pub fn scatter_physical(&self, seed: &mut Jet2Batch, row: usize, channel: usize, cot: &PointJet) {
        let c = self.scale();
        let scaled = PointJet {
            u: cot.u,
            x: c[0] * cot.x,
            y: c[1] * cot.y,
            t: c[2] * cot.t,
            xx: c[0] * c[0] * cot.xx,
            yy: c[1] * c[1] * cot.yy,
        };
        crate::pde::scatter_cotangent(seed, row, channel, JetLayout::XYT, &scaled);
    }
}
