//! Measurement corruption: scaled Gaussian-mixture noise plus gross outliers on a sensor grid.

use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pde::{ReferenceField, SpatialGrid};

#[derive(Debug, thiserror::Error)]
pub enum CorruptionError {
    #[error("invalid noise or outlier spec: {0}")]
    InvalidSpec(String),
    #[error("channel {0} of the reference field is identically zero; noise scale undefined")]
    ZeroField(usize),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How `target_scale_fraction` sets the noise scale `c` applied to raw mixture draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// `c * raw_std = fraction * mean|u|`.
    Std,
    /// `c = fraction * mean|u|`; raw draws are used in units of the field's mean magnitude.
    #[default]
    Multiplier,
}

/// Gaussian mixture used for the additive noise, before and after scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `(mu, sigma)` per component.
    pub components: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    /// Noise scale as a fraction of the channel's mean absolute value, see [`NoiseScaling`].
    pub target_scale_fraction: f64,
    #[serde(default)]
    pub scaling: NoiseScaling,
    /// Subtract the raw mixture mean before scaling. Off by default: the bias is part of the noise.
    #[serde(default)]
    pub center: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            components: vec![(-9.0, 2.0), (-0.3, 4.0), (2.7, 0.6), (8.5, 1.0)],
            weights: vec![0.25; 4],
            target_scale_fraction: 0.10,
            scaling: NoiseScaling::Multiplier,
            center: false,
        }
    }
}

impl NoiseSpec {
    /// Single Gaussian `N(mu, sigma^2)`.
    pub fn gaussian(mu: f64, sigma: f64) -> Self {
        Self {
            components: vec![(mu, sigma)],
            weights: vec![1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        if self.components.is_empty() || self.components.len() != self.weights.len() {
            return Err(CorruptionError::InvalidSpec(
                "need one weight per mixture component".into(),
            ));
        }
        if self
            .components
            .iter()
            .any(|&(m, s)| !m.is_finite() || !(s > 0.0) || !s.is_finite())
        {
            return Err(CorruptionError::InvalidSpec(
                "component sigma must be positive".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(CorruptionError::InvalidSpec(
                "weights must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.target_scale_fraction > 0.0) {
            return Err(CorruptionError::InvalidSpec(
                "target scale fraction must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Mean of the unscaled mixture.
    pub fn raw_mean(&self) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(&(m, _), w)| w * m)
            .sum()
    }

    /// Standard deviation of the unscaled mixture.
    pub fn raw_std(&self) -> f64 {
        let second: f64 = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(&(m, s), w)| w * (s * s + m * m))
            .sum();
        let mean = self.raw_mean();
        (second - mean * mean).sqrt()
    }

    /// Density of `scale * (X - shift)`, `X` the raw mixture.
    pub fn scaled_density(&self, scale: f64, x: f64) -> f64 {
        let shift = if self.center { self.raw_mean() } else { 0.0 };
        let z = x / scale + shift;
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(&(m, s), w)| {
                let d = (z - m) / s;
                w * (-0.5 * d * d).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum::<f64>()
            / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierSign {
    /// Fair coin per outlier.
    Symmetric,
    /// Always added above the clean value.
    #[default]
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub ratio: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub sign: OutlierSign,
}

impl OutlierSpec {
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            ratio,
            k1: 3.0,
            k2: 10.0,
            sign: OutlierSign::Positive,
        }
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(CorruptionError::InvalidSpec(format!(
                "outlier ratio {} not in [0, 1)",
                self.ratio
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > self.k1) {
            return Err(CorruptionError::InvalidSpec("need 0 < k1 < k2".into()));
        }
        Ok(())
    }

    /// Number of corrupted measurements out of `n`.
    pub fn count(&self, n: usize) -> usize {
        (self.ratio * n as f64).round() as usize
    }
}

/// `n` i.i.d. draws from the raw (unscaled, uncentred) mixture.
pub fn sample_gmm(noise: &NoiseSpec, n: usize, seed: u64) -> Result<Vec<f64>, CorruptionError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_gmm(noise, n, &mut rng))
}

fn draw_gmm<R: Rng>(noise: &NoiseSpec, n: usize, rng: &mut R) -> Vec<f64> {
    let pick = WeightedIndex::new(&noise.weights).expect("validated weights");
    let comps: Vec<Normal<f64>> = noise
        .components
        .iter()
        .map(|&(m, s)| Normal::new(m, s).expect("validated sigma"))
        .collect();
    (0..n).map(|_| comps[pick.sample(rng)].sample(rng)).collect()
}

/// Scale `c` applied to raw mixture draws for one channel.
pub fn calibrate_scale(
    noise: &NoiseSpec,
    field: &ReferenceField,
    channel: usize,
) -> Result<f64, CorruptionError> {
    noise.validate()?;
    let mean_abs = field.mean_abs(channel);
    if !(mean_abs > 0.0) {
        return Err(CorruptionError::ZeroField(channel));
    }
    let c = noise.target_scale_fraction * mean_abs;
    Ok(match noise.scaling {
        NoiseScaling::Std => c / noise.raw_std(),
        NoiseScaling::Multiplier => c,
    })
}

/// One scalar sensor reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub channel: usize,
    pub clean: f64,
    pub observed: f64,
    pub is_outlier: bool,
}

impl Measurement {
    pub fn residual_noise(&self) -> f64 {
        self.observed - self.clean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedDataset {
    pub measurements: Vec<Measurement>,
    /// Multiplier applied to raw mixture draws, per channel.
    pub noise_scale: Vec<f64>,
    /// Standard deviation of the scaled noise, per channel.
    pub sigma_n: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    t: f64,
    channel: usize,
    clean: f64,
    observed: f64,
    is_outlier: u8,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl CorruptedDataset {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn outlier_count(&self) -> usize {
        self.measurements.iter().filter(|m| m.is_outlier).count()
    }

    /// Writes the measurement table (`x,y,t,channel,clean,observed,is_outlier`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CorruptionError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "t", "channel", "clean", "observed", "is_outlier"])?;
        for m in &self.measurements {
            wr.write_record([
                fmt17(m.x),
                fmt17(m.y),
                fmt17(m.t),
                m.channel.to_string(),
                fmt17(m.clean),
                fmt17(m.observed),
                u8::from(m.is_outlier).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a table written by [`Self::write_csv`]. Noise scales are not stored in the table
    /// and come back empty.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, CorruptionError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut measurements = Vec::new();
        for row in rd.deserialize() {
            let row: Row = row?;
            if row.is_outlier > 1 {
                return Err(CorruptionError::Format(format!(
                    "is_outlier must be 0 or 1, got {}",
                    row.is_outlier
                )));
            }
            measurements.push(Measurement {
                x: row.x,
                y: row.y,
                t: row.t,
                channel: row.channel,
                clean: row.clean,
                observed: row.observed,
                is_outlier: row.is_outlier == 1,
            });
        }
        Ok(Self {
            measurements,
            noise_scale: Vec::new(),
            sigma_n: Vec::new(),
        })
    }
}

/// Sensor layout with the same endpoint convention as the field's grid.
pub fn sensor_grid(field: &ReferenceField, n: usize) -> SpatialGrid {
    let g = &field.grid;
    SpatialGrid::square(g.x_range, g.y_range, n, g.periodic)
}

/// Corrupts readings taken at `sensors_n x sensors_n` sensors at every recorded snapshot.
///
/// Sensors snap to the nearest node of the reference grid, so `clean` is an exact field value.
/// Every reading gets scaled mixture noise; `round(ratio * N)` readings chosen uniformly without
/// replacement are instead replaced by `clean +/- U[k1 sigma_n, k2 sigma_n]`.
pub fn inject(
    field: &ReferenceField,
    sensors_n: usize,
    noise: &NoiseSpec,
    outliers: &OutlierSpec,
    seed: u64,
) -> Result<CorruptedDataset, CorruptionError> {
    noise.validate()?;
    outliers.validate()?;
    let channels = field.channels();
    let noise_scale = (0..channels)
        .map(|c| calibrate_scale(noise, field, c))
        .collect::<Result<Vec<_>, _>>()?;
    let raw_std = noise.raw_std();
    let sigma_n: Vec<f64> = noise_scale.iter().map(|c| c * raw_std).collect();
    let shift = if noise.center { noise.raw_mean() } else { 0.0 };

    let sensors = sensor_grid(field, sensors_n).points();
    let mut measurements = Vec::with_capacity(field.n_times() * sensors.len() * channels);
    for ti in 0..field.n_times() {
        let t = field.times[ti];
        for &(sx, sy) in &sensors {
            let ((x, y), vals) = field.sample_nearest(sx, sy, ti);
            for (channel, &clean) in vals.iter().enumerate() {
                measurements.push(Measurement {
                    x,
                    y,
                    t,
                    channel,
                    clean,
                    observed: clean,
                    is_outlier: false,
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = draw_gmm(noise, measurements.len(), &mut rng);
    for (m, d) in measurements.iter_mut().zip(draws) {
        m.observed = m.clean + noise_scale[m.channel] * (d - shift);
    }
    let n_out = outliers.count(measurements.len());
    for k in index::sample(&mut rng, measurements.len(), n_out) {
        let m = &mut measurements[k];
        let s = sigma_n[m.channel];
        let mag = rng.random_range(outliers.k1 * s..=outliers.k2 * s);
        let sign = match outliers.sign {
            OutlierSign::Symmetric if rng.random::<bool>() => -1.0,
            _ => 1.0,
        };
        m.observed = m.clean + sign * mag;
        m.is_outlier = true;
    }
    Ok(CorruptedDataset {
        measurements,
        noise_scale,
        sigma_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{allen_cahn_reference, ProblemSpec};
    use statrs::distribution::{ContinuousCDF, Normal as SNormal};

    fn ac_field(snapshots: usize) -> ReferenceField {
        allen_cahn_reference(&ProblemSpec::allen_cahn().with_snapshots(snapshots), 64)
    }

    #[test]
    fn mixture_mean_matches_analytic() {
        let noise = NoiseSpec::default();
        assert!((noise.raw_mean() - 0.475).abs() < 1e-15);
        let n = 1_000_000;
        let s = sample_gmm(&noise, n, 1).unwrap();
        let mean = s.iter().sum::<f64>() / n as f64;
        let se = noise.raw_std() / (n as f64).sqrt();
        assert!((mean - 0.475).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn single_component_is_normal_by_ks() {
        let noise = NoiseSpec::gaussian(0.0, 1.0);
        let mut s = sample_gmm(&noise, 100_000, 2).unwrap();
        s.sort_by(f64::total_cmp);
        let cdf = SNormal::new(0.0, 1.0).unwrap();
        let n = s.len() as f64;
        let ks = s
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn empty_sample() {
        assert!(sample_gmm(&NoiseSpec::default(), 0, 0).unwrap().is_empty());
    }

    #[test]
    fn mixture_std_matches_monte_carlo() {
        let noise = NoiseSpec {
            scaling: NoiseScaling::Std,
            ..NoiseSpec::default()
        };
        let s = sample_gmm(&noise, 400_000, 3).unwrap();
        let m = s.iter().sum::<f64>() / s.len() as f64;
        let sd = (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
        assert!((sd / noise.raw_std() - 1.0).abs() < 0.01);
        // the scaled noise std hits 10% of mean|field| within 2%
        let field = ac_field(10);
        let c = calibrate_scale(&noise, &field, 0).unwrap();
        assert!((c * sd / (0.1 * field.mean_abs(0)) - 1.0).abs() < 0.02);
    }

    #[test]
    fn calibration_is_linear_and_rejects_zero() {
        let noise = NoiseSpec {
            scaling: NoiseScaling::Std,
            ..NoiseSpec::default()
        };
        let mut f = ac_field(3);
        f.values.fill(1.0);
        let c1 = calibrate_scale(&noise, &f, 0).unwrap();
        assert!((c1 * noise.raw_std() - 0.1).abs() < 1e-15);
        f.values.fill(2.0);
        assert!((calibrate_scale(&noise, &f, 0).unwrap() - 2.0 * c1).abs() < 1e-15);
        f.values.fill(0.0);
        assert!(matches!(
            calibrate_scale(&noise, &f, 0),
            Err(CorruptionError::ZeroField(0))
        ));
    }

    #[test]
    fn multiplier_scaling_uses_fraction_directly() {
        let noise = NoiseSpec::default();
        let mut f = ac_field(3);
        f.values.fill(2.0);
        assert!((calibrate_scale(&noise, &f, 0).unwrap() - 0.2).abs() < 1e-15);
        let d = inject(&f, 15, &noise, &OutlierSpec::with_ratio(0.0), 0).unwrap();
        assert!((d.sigma_n[0] - 0.2 * noise.raw_std()).abs() < 1e-14);
    }

    #[test]
    fn outlier_signs() {
        let f = ac_field(10);
        let pos = inject(&f, 15, &NoiseSpec::default(), &OutlierSpec::with_ratio(0.1), 9).unwrap();
        assert!(pos
            .measurements
            .iter()
            .filter(|m| m.is_outlier)
            .all(|m| m.observed > m.clean));
        let sym = OutlierSpec {
            sign: OutlierSign::Symmetric,
            ..OutlierSpec::with_ratio(0.1)
        };
        let d = inject(&f, 15, &NoiseSpec::default(), &sym, 9).unwrap();
        let below = d
            .measurements
            .iter()
            .filter(|m| m.is_outlier && m.observed < m.clean)
            .count();
        let n = d.outlier_count() as f64;
        assert!((below as f64 / n - 0.5).abs() < 0.1, "{below} of {n}");
    }

    #[test]
    fn scaled_density_integrates_to_one() {
        let noise = NoiseSpec::default();
        let h = 1e-3;
        let total: f64 = (-40_000..40_000)
            .map(|i| noise.scaled_density(0.5, i as f64 * h) * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_ratio_has_no_outliers() {
        let d = inject(
            &ac_field(4),
            15,
            &NoiseSpec::default(),
            &OutlierSpec::with_ratio(0.0),
            0,
        )
        .unwrap();
        assert_eq!(d.len(), 225 * 4);
        assert_eq!(d.outlier_count(), 0);
        for m in &d.measurements {
            let raw = (m.observed - m.clean) / d.noise_scale[0];
            assert!(raw.is_finite());
        }
    }

    #[test]
    fn outlier_count_and_magnitudes() {
        let d = inject(
            &ac_field(30),
            15,
            &NoiseSpec::default(),
            &OutlierSpec::with_ratio(0.15),
            7,
        )
        .unwrap();
        assert_eq!(d.len(), 6750);
        let k = d.outlier_count();
        assert!(k == 1012 || k == 1013, "{k}");
        let s = d.sigma_n[0];
        for m in d.measurements.iter().filter(|m| m.is_outlier) {
            let r = (m.observed - m.clean).abs() / s;
            assert!((3.0..=10.0).contains(&r), "{r}");
        }
    }

    #[test]
    fn two_channel_counts() {
        let spec = ProblemSpec::lambda_omega().with_snapshots(3);
        let f = crate::pde::solve_lambda_omega_fd(&spec, 32, 0.02).unwrap();
        let d = inject(&f, 15, &NoiseSpec::default(), &OutlierSpec::with_ratio(0.1), 1).unwrap();
        assert_eq!(d.len(), 225 * 3 * 2);
        assert_eq!(d.noise_scale.len(), 2);
        assert_eq!(d.outlier_count(), 135);
    }

    #[test]
    fn sensors_lie_on_fifteen_by_fifteen_grid() {
        let f = ac_field(2);
        let d = inject(&f, 15, &NoiseSpec::default(), &OutlierSpec::with_ratio(0.1), 3).unwrap();
        let mut xs: Vec<f64> = d.measurements.iter().map(|m| m.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        assert_eq!(xs.len(), 15);
        assert_eq!((xs[0], xs[14]), (0.0, 1.0));
    }

    #[test]
    fn seed_changes_noise_only() {
        let f = ac_field(3);
        let a = inject(&f, 15, &NoiseSpec::default(), &OutlierSpec::with_ratio(0.1), 1).unwrap();
        let b = inject(&f, 15, &NoiseSpec::default(), &OutlierSpec::with_ratio(0.1), 1).unwrap();
        let c = inject(&f, 15, &NoiseSpec::default(), &OutlierSpec::with_ratio(0.1), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.measurements, c.measurements);
        for (p, q) in a.measurements.iter().zip(&c.measurements) {
            assert_eq!(
                (p.x, p.y, p.t, p.channel, p.clean),
                (q.x, q.y, q.t, q.channel, q.clean)
            );
        }
    }

    #[test]
    fn non_outliers_carry_scaled_mixture_noise() {
        let noise = NoiseSpec::default();
        let f = ac_field(30);
        let d = inject(&f, 15, &noise, &OutlierSpec::with_ratio(0.0), 4).unwrap();
        let e: Vec<f64> = d.measurements.iter().map(|m| m.residual_noise()).collect();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let expected = d.noise_scale[0] * noise.raw_mean();
        let se = d.sigma_n[0] / (e.len() as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se);
    }

    #[test]
    fn csv_round_trip() {
        let d = inject(
            &ac_field(3),
            15,
            &NoiseSpec::default(),
            &OutlierSpec::with_ratio(0.1),
            5,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let header = std::str::from_utf8(&buf)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(header, "x,y,t,channel,clean,observed,is_outlier");
        let back = CorruptedDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.measurements, d.measurements);
    }

    #[test]
    fn invalid_specs() {
        let n = NoiseSpec {
            weights: vec![0.5; 4],
            ..NoiseSpec::default()
        };
        assert!(n.validate().is_err());
        assert!(OutlierSpec::with_ratio(1.0).validate().is_err());
        assert!(OutlierSpec {
            k1: 5.0,
            k2: 3.0,
            ..OutlierSpec::with_ratio(0.1)
        }
        .validate()
        .is_err());
    }
}
