use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, AutodiffError};
use crate::corruption::CorruptedDataset;
use crate::ebm::{EbmConfig, EbmError, EbmTrainer, EnergyModel, RunningStd};
use crate::pde::{PdeParamVector, ProblemSpec, ResidualOperator};

use super::loss::{DataLoss, GateState};
use super::model::PinnModel;
use super::objective::{
    data_loss_grad, data_points, data_residuals, pde_loss_grad, CollocationBatch, DataPoint,
};
use super::TrainError;

/// Training method: the gated scheme or a single-stage baseline. Serialized by [`Method::name`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Napinn,
    Vanilla,
    Lad,
    Orpinn { q: f64 },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Self::Napinn => "napinn".into(),
            Self::Vanilla => "vanilla".into(),
            Self::Lad => "lad".into(),
            Self::Orpinn { q } => format!("orpinn_q{q}"),
        }
    }

    /// Data loss of a baseline; `None` for the gated method.
    pub fn baseline_loss(&self) -> Option<DataLoss> {
        match *self {
            Self::Napinn => None,
            Self::Vanilla => Some(DataLoss::Mse),
            Self::Lad => Some(DataLoss::L1),
            Self::Orpinn { q } => Some(DataLoss::QGaussian { q }),
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.name()
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    /// Accepts `napinn`, `vanilla`, `lad`, `orpinn_q1.9` and `orpinn:1.9`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "napinn" => Ok(Self::Napinn),
            "vanilla" | "pinn" => Ok(Self::Vanilla),
            "lad" => Ok(Self::Lad),
            other => {
                let q = other
                    .strip_prefix("orpinn_q")
                    .or_else(|| other.strip_prefix("orpinn:"))
                    .ok_or_else(|| format!("unknown method {other:?}"))?;
                let q: f64 = q.parse().map_err(|_| format!("bad q in {other:?}"))?;
                if !(q > 1.0 && q < 3.0) {
                    return Err(format!("orpinn q must lie in (1, 3), got {q}"));
                }
                Ok(Self::Orpinn { q })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup: usize,
    pub ebm_init: usize,
    pub joint: usize,
    pub collocation_batch: usize,
    pub data_batch: usize,
    pub ebm_batch: usize,
    pub log_every: usize,
}

impl Schedule {
    pub fn full() -> Self {
        Self {
            warmup: 5000,
            ebm_init: 5000,
            joint: 25000,
            collocation_batch: 1024,
            data_batch: 512,
            ebm_batch: 512,
            log_every: 100,
        }
    }

    pub fn desk() -> Self {
        Self {
            warmup: 500,
            ebm_init: 500,
            joint: 2500,
            collocation_batch: 256,
            data_batch: 512,
            ebm_batch: 512,
            log_every: 50,
        }
    }

    /// Network updates a single-stage baseline gets: warm-up plus joint budget.
    pub fn baseline_iterations(&self) -> usize {
        self.warmup + self.joint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Schedule,
    /// Optimizer for network weights and the PDE parameter.
    pub adam: AdamConfig,
    /// Optimizer for the gate's `(tau, raw_a)`.
    pub gate_adam: AdamConfig,
    pub ebm: EbmConfig,
    pub lambda_rej: f64,
    /// Measure the rejection cost in units of `sigma_run^2` instead of raw squared residuals.
    #[serde(default)]
    pub relative_rejection: bool,
    pub tau_percentile: f64,
    /// `false` runs the joint objective from the first iteration (no warm-up, no EBM fit).
    pub staged: bool,
    pub w_f: f64,
    pub w_d: f64,
    /// Collocation points are drawn from this `n x n` grid crossed with the snapshot times.
    pub collocation_grid: usize,
}

impl TrainConfig {
    pub fn with_schedule(schedule: Schedule) -> Self {
        Self {
            schedule,
            adam: AdamConfig::with_lr(3e-3),
            gate_adam: AdamConfig::with_lr(1e-2),
            ebm: EbmConfig {
                adam: AdamConfig::with_lr(3e-3),
                ..EbmConfig::default()
            },
            lambda_rej: 0.5,
            relative_rejection: false,
            tau_percentile: 90.0,
            staged: true,
            w_f: 1.0,
            w_d: 1.0,
            collocation_grid: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    EbmInit,
    Joint,
    Baseline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Warmup => "warmup",
            Self::EbmInit => "ebm_init",
            Self::Joint => "joint",
            Self::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub stage: Stage,
    pub loss_pde: f64,
    pub loss_data: f64,
    pub loss_rej: Option<f64>,
    pub a: Option<f64>,
    pub tau: Option<f64>,
    pub sigma_run: Option<f64>,
    pub pde_param: f64,
}

/// Per-measurement gate diagnostics for a finished run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateRow {
    pub residual: f64,
    pub energy: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub method: Method,
    pub model: PinnModel,
    pub pde_params: PdeParamVector,
    pub gate: Option<GateState>,
    pub ebm: Option<EnergyModel>,
    pub running: Option<RunningStd>,
    pub traces: Vec<TraceRow>,
}

impl TrainedRun {
    /// Final residual, energy and weight of every measurement, normalized by the final
    /// running std without updating it. `None` for baselines.
    pub fn gate_rows(&self, dataset: &CorruptedDataset) -> Result<Option<Vec<GateRow>>, TrainError> {
        let (Some(gate), Some(ebm), Some(running)) = (&self.gate, &self.ebm, &self.running) else {
            return Ok(None);
        };
        let r = data_residuals(&self.model, &data_points(dataset))?;
        let e = ebm.normalized_energy(&running.normalize(&r))?;
        Ok(Some(
            r.iter()
                .zip(e)
                .map(|(&residual, energy)| GateRow {
                    residual,
                    energy,
                    weight: gate.weight(energy),
                })
                .collect(),
        ))
    }

    /// Trace table: `iter,stage,loss_pde,loss_data,loss_rej,a,tau,sigma_run,<param name>`.
    /// Gate columns are empty outside the joint stage.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut wr = csv::Writer::from_writer(w);
        let pname = self
            .pde_params
            .names
            .first()
            .cloned()
            .unwrap_or_else(|| "param".into());
        wr.write_record([
            "iter",
            "stage",
            "loss_pde",
            "loss_data",
            "loss_rej",
            "a",
            "tau",
            "sigma_run",
            pname.as_str(),
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for t in &self.traces {
            wr.write_record([
                t.iter.to_string(),
                t.stage.name().to_string(),
                format!("{:.16e}", t.loss_pde),
                format!("{:.16e}", t.loss_data),
                opt(t.loss_rej),
                opt(t.a),
                opt(t.tau),
                opt(t.sigma_run),
                format!("{:.16e}", t.pde_param),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn is_divergence(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::NonFinite(_)
            | TrainError::Autodiff(AutodiffError::NonFiniteLoss { .. })
            | TrainError::Ebm(EbmError::NonFiniteInput(_))
    )
}

struct Runner<'a> {
    spec: &'a ProblemSpec,
    cfg: &'a TrainConfig,
    op: ResidualOperator,
    data: Vec<DataPoint>,
    model: PinnModel,
    param: f64,
    adam: AdamState,
    rng: ChaCha8Rng,
    times: Vec<f64>,
    colloc: crate::pde::SpatialGrid,
    traces: Vec<TraceRow>,
}

struct GateParts {
    gate: GateState,
    adam: AdamState,
    ebm: EbmTrainer,
}

impl<'a> Runner<'a> {
    fn sample_collocation(&mut self) -> CollocationBatch {
        let n = self.cfg.schedule.collocation_batch;
        let g = self.colloc;
        let pts = (0..n)
            .map(|_| {
                let i = self.rng.random_range(0..g.nx);
                let j = self.rng.random_range(0..g.ny);
                let t = self.times[self.rng.random_range(0..self.times.len())];
                [g.x(i), g.y(j), t]
            })
            .collect();
        CollocationBatch::new(self.spec, pts)
    }

    fn sample_data(&mut self) -> Vec<DataPoint> {
        let n = self.cfg.schedule.data_batch.min(self.data.len());
        rand::seq::index::sample(&mut self.rng, self.data.len(), n)
            .iter()
            .map(|k| self.data[k])
            .collect()
    }

    fn apply(&mut self, mut theta: Vec<f64>, param_grad: f64) -> Result<(), TrainError> {
        theta.push(param_grad);
        if theta.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite("gradient".into()));
        }
        let mut flat = std::mem::take(&mut self.model.net.values);
        flat.push(self.param);
        self.adam.step(&self.cfg.adam, &mut flat, &theta);
        self.param = flat.pop().expect("param slot");
        self.model.net.values = flat;
        Ok(())
    }

    fn log_due(&self, iter: usize, last: usize) -> bool {
        let every = self.cfg.schedule.log_every.max(1);
        iter.is_multiple_of(every) || iter + 1 == last
    }

    /// One update of `(theta, param)` on `w_f L_pde + w_d mean(loss(r))`.
    fn baseline_step(
        &mut self,
        loss: DataLoss,
        stage: Stage,
        iter: usize,
        total: usize,
    ) -> Result<(), TrainError> {
        let cb = self.sample_collocation();
        let db = self.sample_data();
        let pde = pde_loss_grad(&self.model, &self.op, self.param, &cb, self.cfg.w_f)?;
        let n = db.len() as f64;
        let w_d = self.cfg.w_d;
        let data = data_loss_grad(&self.model, &db, |_, r| {
            (w_d * loss.value(r) / n, w_d * loss.derivative(r) / n)
        })?;
        let theta: Vec<f64> = pde.theta.iter().zip(&data.theta).map(|(a, b)| a + b).collect();
        if self.log_due(iter, total) {
            self.traces.push(TraceRow {
                iter,
                stage,
                loss_pde: pde.loss,
                loss_data: data.loss,
                loss_rej: None,
                a: None,
                tau: None,
                sigma_run: None,
                pde_param: self.param,
            });
        }
        if !(pde.loss + data.loss).is_finite() {
            return Err(TrainError::NonFinite("loss".into()));
        }
        self.apply(theta, pde.param)
    }

    fn joint_step(&mut self, parts: &mut GateParts, iter: usize, total: usize) -> Result<(), TrainError> {
        let cb = self.sample_collocation();
        let db = self.sample_data();
        let pde = pde_loss_grad(&self.model, &self.op, self.param, &cb, self.cfg.w_f)?;
        let r = data_residuals(&self.model, &db)?;
        let rt = parts.ebm.running.update(&r)?;
        let e = parts.ebm.model.normalized_energy(&rt)?;
        let g = parts.gate.weights(&e);
        let w_d = self.cfg.w_d;
        let r2: Vec<f64> = r.iter().map(|v| w_d * v * v).collect();
        let unit = if self.cfg.relative_rejection {
            parts.ebm.running.sigma_run
        } else {
            1.0
        };
        let terms = parts.gate.terms(&r2, &e, unit);
        let n = db.len() as f64;
        // energies are scores: g is constant with respect to the network weights
        let data = data_loss_grad(&self.model, &db, |i, r| {
            (w_d * g[i] * r * r / n, 2.0 * w_d * g[i] * r / n)
        })?;
        let theta: Vec<f64> = pde.theta.iter().zip(&data.theta).map(|(a, b)| a + b).collect();
        if self.log_due(iter, total) {
            self.traces.push(TraceRow {
                iter,
                stage: Stage::Joint,
                loss_pde: pde.loss,
                loss_data: terms.data,
                loss_rej: Some(terms.rejection),
                a: Some(parts.gate.a()),
                tau: Some(parts.gate.tau),
                sigma_run: Some(parts.ebm.running.sigma_run),
                pde_param: self.param,
            });
        }
        if !(pde.loss + terms.data + terms.rejection).is_finite() {
            return Err(TrainError::NonFinite("loss".into()));
        }
        self.apply(theta, pde.param)?;
        let mut gp = [parts.gate.tau, parts.gate.raw_a];
        parts
            .adam
            .step(&self.cfg.gate_adam, &mut gp, &[terms.d_tau, terms.d_raw_a]);
        parts.gate.tau = gp[0];
        parts.gate.raw_a = gp[1];
        parts.ebm.step(&rt)?;
        Ok(())
    }

    /// Residual pool of the current predictor, the running std seeded from it, a fitted
    /// energy model and a gate initialized on the pool's energies.
    fn init_gate(&mut self, ebm_seed: u64, fit_seed: u64, fit_steps: usize) -> Result<GateParts, TrainError> {
        let pool = data_residuals(&self.model, &self.data)?;
        let running = RunningStd::from_pool(&pool, self.cfg.ebm.ema_beta)?;
        let model = EnergyModel::init(&self.cfg.ebm, ebm_seed)?;
        let mut ebm = EbmTrainer::new(model, running, self.cfg.ebm.adam);
        let losses = ebm.fit_initial(&pool, fit_steps, self.cfg.schedule.ebm_batch, fit_seed)?;
        let every = self.cfg.schedule.log_every.max(1);
        for (k, l) in losses.iter().enumerate() {
            if k % every == 0 || k + 1 == losses.len() {
                self.traces.push(TraceRow {
                    iter: k,
                    stage: Stage::EbmInit,
                    loss_pde: f64::NAN,
                    loss_data: *l,
                    loss_rej: None,
                    a: None,
                    tau: None,
                    sigma_run: Some(ebm.running.sigma_run),
                    pde_param: self.param,
                });
            }
        }
        let e = ebm.model.normalized_energy(&ebm.running.normalize(&pool))?;
        let gate = GateState::from_energies(&e, self.cfg.tau_percentile, self.cfg.lambda_rej);
        Ok(GateParts {
            gate,
            adam: AdamState::new(2),
            ebm,
        })
    }
}

fn run_stage<F>(stage: Stage, total: usize, mut step: F) -> Result<(), TrainError>
where
    F: FnMut(usize) -> Result<(), TrainError>,
{
    for iter in 0..total {
        if let Err(e) = step(iter) {
            if is_divergence(&e) {
                return Err(TrainError::Diverged {
                    stage: stage.name(),
                    iter,
                    cause: e.to_string(),
                });
            }
            return Err(e);
        }
    }
    Ok(())
}

/// Trains one method on one corrupted dataset. Deterministic given `seed`.
///
/// The gated method runs warm-up (MSE), energy-model fitting on the frozen predictor's
/// residuals, then the joint phase with one network/gate update and one energy update per
/// iteration. With `staged = false` it starts the joint phase immediately and runs it for
/// `warmup + joint` iterations. Baselines run `warmup + joint` single-stage iterations.
pub fn train(
    spec: &ProblemSpec,
    dataset: &CorruptedDataset,
    method: Method,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedRun, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if dataset.measurements.iter().any(|m| m.channel >= spec.channels()) {
        return Err(TrainError::InvalidConfig(
            "dataset channel exceeds the benchmark's channels".into(),
        ));
    }
    if cfg.schedule.collocation_batch == 0 || cfg.schedule.data_batch == 0 {
        return Err(TrainError::InvalidConfig("batch sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net_seed = rng.next_u64();
    let ebm_seed = rng.next_u64();
    let fit_seed = rng.next_u64();
    let mut runner = Runner {
        spec,
        cfg,
        op: ResidualOperator::from_spec(spec),
        data: data_points(dataset),
        model: PinnModel::init(spec, net_seed),
        param: spec.param_init,
        adam: AdamState::new(0),
        rng,
        times: spec.snapshot_times(),
        colloc: spec.grid(cfg.collocation_grid),
        traces: Vec::new(),
    };
    runner.adam = AdamState::new(runner.model.net.len() + 1);
    let s = cfg.schedule;

    let mut gate_parts = None;
    match method.baseline_loss() {
        Some(loss) => {
            let total = s.baseline_iterations();
            run_stage(Stage::Baseline, total, |it| {
                runner.baseline_step(loss, Stage::Baseline, it, total)
            })?;
        }
        None if cfg.staged => {
            run_stage(Stage::Warmup, s.warmup, |it| {
                runner.baseline_step(DataLoss::Mse, Stage::Warmup, it, s.warmup)
            })?;
            let mut parts = runner
                .init_gate(ebm_seed, fit_seed, s.ebm_init)
                .map_err(|e| match e {
                    e if is_divergence(&e) => TrainError::Diverged {
                        stage: Stage::EbmInit.name(),
                        iter: 0,
                        cause: e.to_string(),
                    },
                    e => e,
                })?;
            run_stage(Stage::Joint, s.joint, |it| {
                runner.joint_step(&mut parts, it, s.joint)
            })?;
            gate_parts = Some(parts);
        }
        None => {
            let mut parts = runner.init_gate(ebm_seed, fit_seed, 0)?;
            let total = s.warmup + s.joint;
            run_stage(Stage::Joint, total, |it| runner.joint_step(&mut parts, it, total))?;
            gate_parts = Some(parts);
        }
    }

    let (gate, ebm, running) = match gate_parts {
        Some(p) => (Some(p.gate), Some(p.ebm.model), Some(p.ebm.running)),
        None => (None, None, None),
    };
    Ok(TrainedRun {
        method,
        model: runner.model,
        pde_params: PdeParamVector::single(spec.kind.param_name(), runner.param),
        gate,
        ebm,
        running,
        traces: runner.traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{inject, NoiseSpec, OutlierSpec};
    use crate::pde::allen_cahn_reference;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_problem() -> (ProblemSpec, CorruptedDataset) {
        let spec = ProblemSpec::allen_cahn().with_snapshots(3);
        let field = allen_cahn_reference(&spec, 32);
        let ds = inject(&field, 8, &NoiseSpec::default(), &OutlierSpec::with_ratio(0.1), 0).unwrap();
        (spec, ds)
    }

    fn schedule(warmup: usize, ebm_init: usize, joint: usize) -> TrainConfig {
        TrainConfig::with_schedule(Schedule {
            warmup,
            ebm_init,
            joint,
            collocation_batch: 32,
            data_batch: 64,
            ebm_batch: 64,
            log_every: 1,
        })
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Napinn,
            Method::Vanilla,
            Method::Lad,
            Method::Orpinn { q: 2.9 },
        ] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("orpinn:1.9".parse::<Method>().unwrap(), Method::Orpinn { q: 1.9 });
        assert!("orpinn_q3.5".parse::<Method>().is_err());
        assert!("bpinn".parse::<Method>().is_err());
    }

    #[test]
    fn empty_schedule_returns_initial_state() {
        let (spec, ds) = tiny_problem();
        let cfg = schedule(0, 0, 0);
        let a = train(&spec, &ds, Method::Vanilla, &cfg, 5).unwrap();
        let b = train(&spec, &ds, Method::Vanilla, &cfg, 5).unwrap();
        assert_eq!(a.model.net.values, b.model.net.values);
        assert_eq!(a.pde_params.values, vec![spec.param_init]);
        assert!(a.traces.is_empty());
        let moved = train(&spec, &ds, Method::Vanilla, &schedule(1, 0, 0), 5).unwrap();
        assert_ne!(moved.model.net.values, a.model.net.values);

        let g = train(&spec, &ds, Method::Napinn, &cfg, 5).unwrap();
        assert_eq!(g.model.net.values, a.model.net.values);
        let gate = g.gate.unwrap();
        assert!((gate.a() - 1.0).abs() < 1e-12);
        let rows = g.gate_rows(&ds).unwrap().unwrap();
        let e: Vec<f64> = rows.iter().map(|r| r.energy).collect();
        assert!((gate.tau - super::super::percentile(&e, 90.0)).abs() < 1e-9);
    }

    #[test]
    fn ebm_initialization_leaves_the_network_frozen() {
        let (spec, ds) = tiny_problem();
        let a = train(&spec, &ds, Method::Napinn, &schedule(3, 0, 0), 2).unwrap();
        let b = train(&spec, &ds, Method::Napinn, &schedule(3, 25, 0), 2).unwrap();
        assert_eq!(a.model.net.values, b.model.net.values);
        assert_eq!(a.pde_params.values, b.pde_params.values);
        assert_ne!(a.ebm.unwrap().net.values, b.ebm.as_ref().unwrap().net.values);
        let stages: Vec<Stage> = b.traces.iter().map(|t| t.stage).collect();
        assert_eq!(stages.iter().filter(|s| **s == Stage::Warmup).count(), 3);
        assert_eq!(stages.iter().filter(|s| **s == Stage::EbmInit).count(), 25);
    }

    #[test]
    fn joint_and_ablation_runs_record_gate_traces() {
        let (spec, ds) = tiny_problem();
        for staged in [true, false] {
            let mut cfg = schedule(2, 2, 3);
            cfg.staged = staged;
            let run = train(&spec, &ds, Method::Napinn, &cfg, 1).unwrap();
            let joint: Vec<&TraceRow> = run.traces.iter().filter(|t| t.stage == Stage::Joint).collect();
            assert_eq!(joint.len(), if staged { 3 } else { 5 });
            assert!(joint.iter().all(|t| t.a.unwrap() > 0.0 && t.loss_rej.is_some()));
            let mut buf = Vec::new();
            run.write_trace_csv(&mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            assert!(text.starts_with("iter,stage,loss_pde,loss_data,loss_rej,a,tau,sigma_run,eps\n"));
        }
    }

    #[test]
    fn baselines_are_deterministic_and_finite() {
        let (spec, ds) = tiny_problem();
        for m in [Method::Vanilla, Method::Lad, Method::Orpinn { q: 1.9 }] {
            let a = train(&spec, &ds, m, &schedule(2, 0, 2), 9).unwrap();
            let b = train(&spec, &ds, m, &schedule(2, 0, 2), 9).unwrap();
            assert_eq!(a.model.net.values, b.model.net.values);
            assert_eq!(a.traces.len(), 4);
            assert!(a
                .traces
                .iter()
                .all(|t| t.stage == Stage::Baseline && t.loss_data.is_finite()));
            assert!(a.gate.is_none());
        }
    }

    #[test]
    fn divergence_reports_stage_and_iteration() {
        let (spec, ds) = tiny_problem();
        let mut cfg = schedule(5, 0, 0);
        cfg.w_d = f64::INFINITY;
        match train(&spec, &ds, Method::Vanilla, &cfg, 0) {
            Err(TrainError::Diverged { stage, iter, .. }) => assert_eq!((stage, iter), ("baseline", 0)),
            other => panic!("{other:?}"),
        }
    }

    /// Gate and energy model trained on frozen residuals: Gaussian noise with 10% outliers
    /// spread over 8 to 12 noise deviations. (Identical outlier values would form a
    /// high-density spike, which an energy gate rightly treats as in-distribution.)
    #[test]
    fn gate_separates_fixed_outliers() {
        let sigma = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let mut r = Vec::with_capacity(n);
        let mut is_out = Vec::with_capacity(n);
        for i in 0..n {
            if i % 10 == 0 {
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                r.push(s * rng.random_range(8.0..12.0) * sigma);
                is_out.push(true);
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                r.push(sigma * z);
                is_out.push(false);
            }
        }
        let cfg = TrainConfig::with_schedule(Schedule::desk());
        let running = RunningStd::from_pool(&r, cfg.ebm.ema_beta).unwrap();
        let model = EnergyModel::init(&cfg.ebm, 1).unwrap();
        let mut ebm = EbmTrainer::new(model, running, cfg.ebm.adam);
        ebm.fit_initial(&r, 500, 512, 2).unwrap();
        let e = ebm.model.normalized_energy(&ebm.running.normalize(&r)).unwrap();
        let mut gate = GateState::from_energies(&e, 90.0, 0.5);
        let mut adam = AdamState::new(2);
        let r2: Vec<f64> = r.iter().map(|v| v * v).collect();
        for _ in 0..2500 {
            let rt = ebm.running.update(&r).unwrap();
            let e = ebm.model.normalized_energy(&rt).unwrap();
            let t = gate.terms(&r2, &e, 1.0);
            let mut p = [gate.tau, gate.raw_a];
            adam.step(&cfg.gate_adam, &mut p, &[t.d_tau, t.d_raw_a]);
            gate.tau = p[0];
            gate.raw_a = p[1];
            ebm.step(&rt).unwrap();
        }
        let e = ebm.model.normalized_energy(&ebm.running.normalize(&r)).unwrap();
        let g = gate.weights(&e);
        let out_max = g
            .iter()
            .zip(&is_out)
            .filter(|(_, o)| **o)
            .map(|(g, _)| *g)
            .fold(0.0, f64::max);
        let kept = g.iter().zip(&is_out).filter(|(g, o)| !**o && **g > 0.9).count();
        assert!(out_max < 0.1, "outlier weight {out_max}");
        assert!(kept as f64 >= 0.95 * 0.9 * n as f64, "kept {kept}");
    }
}
