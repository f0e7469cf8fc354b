//! Accuracy metrics, outlier confusion counts and analysis exports for trained runs.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptedDataset, NoiseSpec};
use crate::ebm::{count_local_maxima, EnergyModel};
use crate::pde::{allen_cahn_exact_jet, eval_grid, BenchmarkKind, ProblemSpec, ReferenceField};
use crate::trainer::{PinnModel, TrainError, TrainedRun};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("reference norm is zero; relative error undefined")]
    ZeroNorm,
    #[error("prediction has {pred} values but truth has {truth}")]
    ShapeMismatch { pred: usize, truth: usize },
    #[error("finite-difference benchmark needs a reference field")]
    MissingReference,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    Ok(())
}

/// `||pred - truth||_1 / ||truth||_1`.
pub fn rmae(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check(pred, truth)?;
    let den: f64 = truth.iter().map(|u| u.abs()).sum();
    if !(den > 0.0) {
        return Err(EvalError::ZeroNorm);
    }
    Ok(pred.iter().zip(truth).map(|(p, u)| (p - u).abs()).sum::<f64>() / den)
}

/// `||pred - truth||_2 / ||truth||_2`.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check(pred, truth)?;
    let den: f64 = truth.iter().map(|u| u * u).sum();
    if !(den > 0.0) {
        return Err(EvalError::ZeroNorm);
    }
    Ok((pred.iter().zip(truth).map(|(p, u)| (p - u).powi(2)).sum::<f64>() / den).sqrt())
}

/// Ground truth on the dense evaluation set: `n x n` spatial points at every snapshot time.
#[derive(Debug, Clone)]
pub struct DenseTruth {
    pub points: Vec<[f64; 3]>,
    /// `[points, channels]`
    pub values: Array2<f64>,
}

/// Allen-Cahn uses the closed form at the exact grid points. Finite-difference benchmarks
/// move each point to its nearest solver node and read the stored value there.
pub fn dense_truth(
    spec: &ProblemSpec,
    field: Option<&ReferenceField>,
    n: usize,
) -> Result<DenseTruth, EvalError> {
    let grid = eval_grid(spec, n);
    match spec.kind {
        BenchmarkKind::AllenCahn => {
            let values = Array2::from_shape_fn((grid.len(), 1), |(k, _)| {
                let p = grid[k];
                allen_cahn_exact_jet(p[0], p[1], p[2], spec.omega_t).u
            });
            Ok(DenseTruth { points: grid, values })
        }
        _ => {
            let field = field.ok_or(EvalError::MissingReference)?;
            let c = field.channels();
            let mut points = Vec::with_capacity(grid.len());
            let mut values = Array2::zeros((grid.len(), c));
            for (k, p) in grid.iter().enumerate() {
                let ti = field.time_index(p[2]);
                let ((x, y), v) = field.sample_nearest(p[0], p[1], ti);
                points.push([x, y, field.times[ti]]);
                for (ch, u) in v.into_iter().enumerate() {
                    values[[k, ch]] = u;
                }
            }
            Ok(DenseTruth { points, values })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub rmae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    /// All channels stacked.
    pub rmae: f64,
    pub rmse: f64,
    pub per_channel: Vec<ChannelMetrics>,
}

pub fn field_metrics(
    model: &PinnModel,
    truth: &DenseTruth,
    channel_names: &[&str],
) -> Result<FieldMetrics, EvalError> {
    let pred = model.predict(&truth.points)?;
    if pred.dim() != truth.values.dim() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.len(),
            truth: truth.values.len(),
        });
    }
    let p: Vec<f64> = pred.iter().copied().collect();
    let u: Vec<f64> = truth.values.iter().copied().collect();
    let mut per_channel = Vec::new();
    for c in 0..truth.values.ncols() {
        let pc = pred.column(c).to_vec();
        let uc = truth.values.column(c).to_vec();
        per_channel.push(ChannelMetrics {
            channel: channel_names
                .get(c)
                .map_or_else(|| c.to_string(), |s| s.to_string()),
            rmae: rmae(&pc, &uc)?,
            rmse: rmse(&pc, &uc)?,
        });
    }
    Ok(FieldMetrics {
        rmae: rmae(&p, &u)?,
        rmse: rmse(&p, &u)?,
        per_channel,
    })
}

/// Rejection is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    /// Point `i` is rejected iff `weights[i] < threshold`.
    pub fn from_weights(weights: &[f64], is_outlier: &[bool], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&g, &out) in weights.iter().zip(is_outlier) {
            match (g < threshold, out) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// `tp / (tp + fp)`; 1 when nothing is rejected.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// `tp / (tp + fn)`; 1 when there are no outliers.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn rejected_fraction(&self) -> f64 {
        (self.tp + self.fp) as f64 / self.total().max(1) as f64
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fn_: self.fn_ + other.fn_,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
        }
    }
}

/// Confusion counts of the final gate, `None` for runs without one.
pub fn classify_outliers(
    run: &TrainedRun,
    dataset: &CorruptedDataset,
    threshold: f64,
) -> Result<Option<Confusion>, EvalError> {
    let Some(rows) = run.gate_rows(dataset)? else {
        return Ok(None);
    };
    let g: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let labels: Vec<bool> = dataset.measurements.iter().map(|m| m.is_outlier).collect();
    Ok(Some(Confusion::from_weights(&g, &labels, threshold)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityComparisonRow {
    pub r: f64,
    pub true_density: f64,
    pub learned_density: f64,
}

/// True noise density in normalized residual units next to the learned one, on the energy
/// model's quadrature grid. Multi-channel data pool all channels, so the true density is the
/// equal-weight mixture of each channel's scaled noise (`noise_scales[c] / sigma_run`).
pub fn density_comparison(
    ebm: &EnergyModel,
    noise: &NoiseSpec,
    noise_scales: &[f64],
    sigma_run: f64,
) -> Vec<DensityComparisonRow> {
    let k = noise_scales.len().max(1) as f64;
    ebm.density_table()
        .into_iter()
        .map(|row| DensityComparisonRow {
            r: row.r,
            true_density: noise_scales
                .iter()
                .map(|c| noise.scaled_density(c / sigma_run, row.r))
                .sum::<f64>()
                / k,
            learned_density: row.density,
        })
        .collect()
}

/// `KL(true || learned)` by the trapezoid rule on the rows' grid.
pub fn kl_divergence(rows: &[DensityComparisonRow]) -> f64 {
    let term = |row: &DensityComparisonRow| {
        let p = row.true_density;
        if p > 0.0 {
            p * (p / row.learned_density.max(f64::MIN_POSITIVE)).ln()
        } else {
            0.0
        }
    };
    rows.windows(2)
        .map(|w| 0.5 * (w[1].r - w[0].r) * (term(&w[0]) + term(&w[1])))
        .sum()
}

/// Local maxima of the learned density above `floor`.
pub fn learned_modes(rows: &[DensityComparisonRow], floor: f64) -> usize {
    let d: Vec<f64> = rows.iter().map(|r| r.learned_density).collect();
    count_local_maxima(&d, floor)
}

pub fn write_density_csv<W: Write>(rows: &[DensityComparisonRow], w: W) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["r", "true_density", "learned_density"])?;
    for row in rows {
        wr.write_record([
            format!("{:.16e}", row.r),
            format!("{:.16e}", row.true_density),
            format!("{:.16e}", row.learned_density),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateOverlayRow {
    pub residual: f64,
    pub energy: f64,
    pub g: f64,
    pub is_outlier: bool,
}

/// Final energy, weight and label per measurement; `None` for runs without a gate.
pub fn gate_overlay(
    run: &TrainedRun,
    dataset: &CorruptedDataset,
) -> Result<Option<Vec<GateOverlayRow>>, EvalError> {
    let Some(rows) = run.gate_rows(dataset)? else {
        return Ok(None);
    };
    Ok(Some(
        rows.iter()
            .zip(&dataset.measurements)
            .map(|(r, m)| GateOverlayRow {
                residual: r.residual,
                energy: r.energy,
                g: r.weight,
                is_outlier: m.is_outlier,
            })
            .collect(),
    ))
}

pub fn write_gate_csv<W: Write>(rows: &[GateOverlayRow], w: W) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["energy", "g", "is_outlier", "residual"])?;
    for row in rows {
        wr.write_record([
            format!("{:.16e}", row.energy),
            format!("{:.16e}", row.g),
            u8::from(row.is_outlier).to_string(),
            format!("{:.16e}", row.residual),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Everything recorded about one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub benchmark: String,
    pub method: String,
    pub ratio: f64,
    pub seed: u64,
    pub lambda_rej: f64,
    pub rmae: f64,
    pub rmse: f64,
    pub per_channel: Vec<ChannelMetrics>,
    pub param_name: String,
    pub param_estimate: f64,
    pub param_true: f64,
    pub confusion: Option<Confusion>,
    pub kl_noise: Option<f64>,
    pub density_modes: Option<usize>,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 17] = [
        "benchmark",
        "method",
        "ratio",
        "seed",
        "lambda_rej",
        "rmae",
        "rmse",
        "param_name",
        "param_estimate",
        "param_true",
        "tp",
        "fn",
        "fp",
        "tn",
        "precision",
        "recall",
        "kl_noise",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let c = self.confusion;
        vec![
            self.benchmark.clone(),
            self.method.clone(),
            self.ratio.to_string(),
            self.seed.to_string(),
            self.lambda_rej.to_string(),
            format!("{:.6e}", self.rmae),
            format!("{:.6e}", self.rmse),
            self.param_name.clone(),
            format!("{:.6e}", self.param_estimate),
            self.param_true.to_string(),
            opt(c.map(|c| c.tp.to_string())),
            opt(c.map(|c| c.fn_.to_string())),
            opt(c.map(|c| c.fp.to_string())),
            opt(c.map(|c| c.tn.to_string())),
            opt(c.map(|c| format!("{:.4}", c.precision()))),
            opt(c.map(|c| format!("{:.4}", c.recall()))),
            opt(self.kl_noise.map(|k| format!("{k:.4}"))),
        ]
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebm::{EbmConfig, EnergyModel};
    use crate::pde::allen_cahn_reference;

    #[test]
    fn metric_special_cases() {
        let u = [1.0, -2.0, 0.5, 3.0];
        assert_eq!(rmae(&u, &u).unwrap(), 0.0);
        assert_eq!(rmse(&u, &u).unwrap(), 0.0);
        let zero = [0.0; 4];
        assert!((rmae(&zero, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((rmse(&zero, &u).unwrap() - 1.0).abs() < 1e-15);
        let twice: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        assert!((rmae(&twice, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((rmse(&twice, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(rmse(&u, &zero), Err(EvalError::ZeroNorm)));
        assert!(matches!(rmae(&u[..2], &u), Err(EvalError::ShapeMismatch { .. })));
    }

    #[test]
    fn metrics_are_scale_invariant() {
        let u = [0.3, -1.2, 2.2, 0.7, -0.1];
        let p = [0.2, -1.0, 2.5, 0.6, 0.0];
        for k in [-3.0, 1e-4, 7.5] {
            let us: Vec<f64> = u.iter().map(|v| k * v).collect();
            let ps: Vec<f64> = p.iter().map(|v| k * v).collect();
            assert!((rmae(&ps, &us).unwrap() - rmae(&p, &u).unwrap()).abs() < 1e-12);
            assert!((rmse(&ps, &us).unwrap() - rmse(&p, &u).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn confusion_partitions_the_dataset() {
        let g = [0.9, 0.1, 0.6, 0.2, 0.4, 1.0];
        let o = [false, true, true, false, true, false];
        let c = Confusion::from_weights(&g, &o, 0.5);
        assert_eq!(
            c,
            Confusion {
                tp: 2,
                fn_: 1,
                fp: 1,
                tn: 2
            }
        );
        assert_eq!(c.total(), 6);
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-15);
        let clean = Confusion::from_weights(&[1.0; 4], &[false; 4], 0.5);
        assert_eq!(
            clean,
            Confusion {
                tn: 4,
                ..Confusion::default()
            }
        );
    }

    #[test]
    fn reference_confusion_rates() {
        let c = Confusion {
            tp: 2209,
            fn_: 41,
            fp: 152,
            tn: 20098,
        };
        assert_eq!(c.total(), 22_500);
        assert!((c.recall() - 0.9818).abs() < 1e-4);
        assert!((c.precision() - 0.9356).abs() < 1e-4);
    }

    #[test]
    fn confusion_serializes_fn_field() {
        let s = serde_json::to_string(&Confusion {
            tp: 1,
            fn_: 2,
            fp: 3,
            tn: 4,
        })
        .unwrap();
        assert_eq!(s, r#"{"tp":1,"fn":2,"fp":3,"tn":4}"#);
    }

    #[test]
    fn dense_truth_covers_every_snapshot() {
        let spec = ProblemSpec::allen_cahn().with_snapshots(4);
        let t = dense_truth(&spec, None, 120).unwrap();
        assert_eq!(t.points.len(), 14_400 * 4);
        assert_eq!(t.values.dim(), (14_400 * 4, 1));
        let f = allen_cahn_reference(&spec, 64);
        let lo = ProblemSpec::lambda_omega().with_snapshots(4);
        assert!(matches!(
            dense_truth(&lo, None, 8),
            Err(EvalError::MissingReference)
        ));
        // stored nodes are exact, so snapping onto the reference reproduces the closed form
        let ac_on_nodes = dense_truth(
            &ProblemSpec {
                kind: BenchmarkKind::Burgers,
                ..spec.clone()
            },
            Some(&f),
            30,
        );
        let snapped = ac_on_nodes.unwrap();
        for (p, v) in snapped.points.iter().zip(snapped.values.column(0)) {
            assert!((allen_cahn_exact_jet(p[0], p[1], p[2], spec.omega_t).u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn density_comparison_shape_and_self_kl() {
        let mut m = EnergyModel::init(&EbmConfig::default(), 0).unwrap();
        m.net.values.fill(0.0);
        let rows = density_comparison(&m, &NoiseSpec::gaussian(0.0, 1.0), &[1.0], 1.0);
        assert_eq!(rows.len(), 1024);
        let same: Vec<DensityComparisonRow> = rows
            .iter()
            .map(|r| DensityComparisonRow {
                learned_density: r.true_density,
                ..*r
            })
            .collect();
        assert!(kl_divergence(&same).abs() < 1e-12);
        // constant energy: uniform density over [-12, 12]
        assert!(rows.iter().all(|r| (r.learned_density - 1.0 / 24.0).abs() < 1e-3));
        let kl = kl_divergence(&rows);
        let expected = 24f64.ln() - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((kl - expected).abs() < 1e-3, "{kl} vs {expected}");
        let mut buf = Vec::new();
        write_density_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1025);
    }

    #[test]
    fn gate_overlay_rows_follow_the_dataset() {
        use crate::corruption::Measurement;
        use crate::ebm::RunningStd;
        use crate::trainer::{GateState, Method};
        let spec = ProblemSpec::allen_cahn();
        let m = |x: f64, observed: f64, is_outlier: bool| Measurement {
            x,
            y: 0.5,
            t: 0.2,
            channel: 0,
            clean: 0.0,
            observed,
            is_outlier,
        };
        let ds = CorruptedDataset {
            measurements: vec![m(0.1, 0.0, false), m(0.5, 3.0, true), m(0.9, -0.2, false)],
            noise_scale: vec![0.1],
            sigma_n: vec![0.1],
        };
        let run = TrainedRun {
            method: Method::Napinn,
            model: PinnModel::init(&spec, 0),
            pde_params: spec.initial_params(),
            gate: Some(GateState {
                raw_a: 1.0,
                tau: 2.0,
                lambda_rej: 0.5,
            }),
            ebm: Some(EnergyModel::init(&EbmConfig::default(), 1).unwrap()),
            running: Some(RunningStd {
                sigma_run: 0.5,
                ema_beta: 0.05,
            }),
            traces: Vec::new(),
        };
        let mut rows = gate_overlay(&run, &ds).unwrap().unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows.iter().map(|r| r.is_outlier).collect::<Vec<_>>(),
            [false, true, false]
        );
        assert!(rows.iter().all(|r| r.g > 0.0 && r.g < 1.0));
        rows.sort_by(|a, b| a.energy.total_cmp(&b.energy));
        assert!(rows.windows(2).all(|w| w[0].g >= w[1].g));
        let c = classify_outliers(&run, &ds, 0.5).unwrap().unwrap();
        assert_eq!(c.total(), 3);
        let baseline = TrainedRun {
            gate: None,
            ebm: None,
            running: None,
            ..run
        };
        assert!(gate_overlay(&baseline, &ds).unwrap().is_none());
    }

    #[test]
    fn report_json_round_trip() {
        let r = MetricsReport {
            benchmark: "allen_cahn".into(),
            method: "napinn".into(),
            ratio: 0.1,
            seed: 3,
            lambda_rej: 0.5,
            rmae: 0.1,
            rmse: 0.12,
            per_channel: vec![ChannelMetrics {
                channel: "u".into(),
                rmae: 0.1,
                rmse: 0.12,
            }],
            param_name: "eps".into(),
            param_estimate: 0.31,
            param_true: 0.3,
            confusion: Some(Confusion {
                tp: 1,
                fn_: 0,
                fp: 0,
                tn: 9,
            }),
            kl_noise: None,
            density_modes: Some(3),
        };
        assert_eq!(MetricsReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert_eq!(r.csv_row().len(), MetricsReport::CSV_HEADER.len());
    }
}
