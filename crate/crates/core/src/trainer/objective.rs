//! Loss values and exact gradients with respect to network weights and the PDE parameter.

use crate::autodiff::{backprop_scalar, Jet2Batch, RowLoss};
use crate::corruption::CorruptedDataset;
use crate::pde::{manufactured_solution_ac, BenchmarkKind, PointJet, ProblemSpec, ResidualOperator};

use super::model::PinnModel;
use super::TrainError;

/// Collocation points with their forcing values (zero except for Allen-Cahn).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollocationBatch {
    pub points: Vec<[f64; 3]>,
    pub forcing: Vec<f64>,
}

impl CollocationBatch {
    pub fn new(spec: &ProblemSpec, points: Vec<[f64; 3]>) -> Self {
        let forcing = match spec.kind {
            BenchmarkKind::AllenCahn => points
                .iter()
                .map(|p| manufactured_solution_ac(p[0], p[1], p[2], spec.omega_t, spec.true_param).1)
                .collect(),
            _ => vec![0.0; points.len()],
        };
        Self { points, forcing }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One scalar measurement in training form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub point: [f64; 3],
    pub channel: usize,
    pub observed: f64,
}

pub fn data_points(dataset: &CorruptedDataset) -> Vec<DataPoint> {
    dataset
        .measurements
        .iter()
        .map(|m| DataPoint {
            point: [m.x, m.y, m.t],
            channel: m.channel,
            observed: m.observed,
        })
        .collect()
}

/// Gradient of a loss with respect to the network weights and the PDE parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub theta: Vec<f64>,
    pub param: f64,
}

/// Sum over channels of the mean squared residual, scaled by `weight`.
pub fn pde_loss(
    model: &PinnModel,
    op: &ResidualOperator,
    param: f64,
    batch: &CollocationBatch,
    weight: f64,
) -> Result<f64, TrainError> {
    let jet = model
        .net
        .forward_jet2(model.normalize(&batch.points).view(), &[0, 1, 2])?;
    let jets: Vec<Vec<PointJet>> = (0..op.channels()).map(|c| model.physical_jets(&jet, c)).collect();
    let n = batch.len() as f64;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let pj: Vec<PointJet> = jets.iter().map(|j| j[i]).collect();
        let r = op.point(&pj, batch.forcing[i], param);
        total += (r[0] * r[0] + r[1] * r[1]) * weight / n;
    }
    if !total.is_finite() {
        return Err(TrainError::NonFinite("pde loss".into()));
    }
    Ok(total)
}

pub fn pde_loss_grad(
    model: &PinnModel,
    op: &ResidualOperator,
    param: f64,
    batch: &CollocationBatch,
    weight: f64,
) -> Result<Gradient, TrainError> {
    let n = batch.len() as f64;
    let channels = op.channels();
    let mut dparam = 0.0;
    let (loss, grad) = backprop_scalar(
        &model.net,
        model.normalize(&batch.points).view(),
        &[0, 1, 2],
        |jet: &Jet2Batch| {
            let jets: Vec<Vec<PointJet>> = (0..channels).map(|c| model.physical_jets(jet, c)).collect();
            let mut seed = jet.zeros_like();
            let mut terms = Vec::with_capacity(batch.len());
            for i in 0..batch.len() {
                let pj: Vec<PointJet> = jets.iter().map(|j| j[i]).collect();
                let r = op.point(&pj, batch.forcing[i], param);
                terms.push((r[0] * r[0] + r[1] * r[1]) * weight / n);
                let s = [2.0 * weight * r[0] / n, 2.0 * weight * r[1] / n];
                let (cot, dp) = op.point_vjp(&pj, param, s);
                dparam += dp;
                for (c, ct) in cot.iter().enumerate().take(channels) {
                    model.scatter_physical(&mut seed, i, c, ct);
                }
            }
            RowLoss { terms, seed }
        },
    )?;
    Ok(Gradient {
        loss,
        theta: grad.0,
        param: dparam,
    })
}

/// `y - u(x)` for each measurement.
pub fn data_residuals(model: &PinnModel, batch: &[DataPoint]) -> Result<Vec<f64>, TrainError> {
    let pts: Vec<[f64; 3]> = batch.iter().map(|d| d.point).collect();
    let out = model.predict(&pts)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, d)| d.observed - out[[i, d.channel]])
        .collect())
}

/// Data term `sum_i term(i, r_i)` where `term` returns the loss contribution and its
/// derivative with respect to the residual `r_i = y_i - u(x_i)`.
pub fn data_loss_grad<F>(model: &PinnModel, batch: &[DataPoint], mut term: F) -> Result<Gradient, TrainError>
where
    F: FnMut(usize, f64) -> (f64, f64),
{
    let pts: Vec<[f64; 3]> = batch.iter().map(|d| d.point).collect();
    let (loss, grad) = backprop_scalar(
        &model.net,
        model.normalize(&pts).view(),
        &[],
        |jet: &Jet2Batch| {
            let mut seed = jet.zeros_like();
            let mut terms = Vec::with_capacity(batch.len());
            for (i, d) in batch.iter().enumerate() {
                let r = d.observed - jet.values[[i, d.channel]];
                let (l, dl_dr) = term(i, r);
                terms.push(l);
                seed.values[[i, d.channel]] -= dl_dr;
            }
            RowLoss { terms, seed }
        },
    )?;
    Ok(Gradient {
        loss,
        theta: grad.0,
        param: 0.0,
    })
}
