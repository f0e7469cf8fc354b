//! Reference generation, single runs and the experiment matrix.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use napinn::autodiff::checkpoint::{load_params, save_params};
use napinn::autodiff::AutodiffError;
use napinn::corruption::{inject, CorruptedDataset, CorruptionError};
use napinn::ebm::{count_local_maxima, EbmError, EnergyModel, RunningStd};
use napinn::evaluation::{
    classify_outliers, dense_truth, density_comparison, field_metrics, gate_overlay, kl_divergence,
    write_density_csv, write_gate_csv, DenseTruth, EvalError, MetricsReport,
};
use napinn::pde::{
    allen_cahn_reference, default_dt, solve_burgers_fd, solve_lambda_omega_fd, BenchmarkKind, PdeError,
    PdeParamVector, ProblemSpec, ReferenceField,
};
use napinn::trainer::{train, GateState, Method, PinnModel, TrainError, TrainedRun};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ExperimentConfig};

/// Density floor below which local maxima of the learned noise density are ignored.
pub const MODE_FLOOR: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Ebm(#[from] EbmError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Failed(String),
    #[error("no metrics.json found under {0}")]
    NoResults(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Solves (or samples) the reference field of one benchmark.
pub fn solve_reference(spec: &ProblemSpec, grid_n: usize, seed: u64) -> Result<ReferenceField, PdeError> {
    match spec.kind {
        BenchmarkKind::AllenCahn => Ok(allen_cahn_reference(spec, grid_n)),
        BenchmarkKind::Burgers => solve_burgers_fd(spec, grid_n, default_dt(spec, grid_n), seed),
        BenchmarkKind::LambdaOmega => solve_lambda_omega_fd(spec, grid_n, default_dt(spec, grid_n)),
    }
}

/// Reference fields on disk, keyed by a hash of everything that determines them.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key(spec: &ProblemSpec, grid_n: usize, seed: u64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            format: u32,
            spec: &'a ProblemSpec,
            grid_n: usize,
            dt: f64,
            seed: u64,
        }
        let key = Key {
            format: 1,
            spec,
            grid_n,
            dt: default_dt(spec, grid_n),
            seed,
        };
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("plain data serializes"));
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }

    pub fn path(&self, spec: &ProblemSpec, grid_n: usize, seed: u64) -> PathBuf {
        self.dir.join(format!(
            "{}-{}.field",
            spec.kind.name(),
            Self::key(spec, grid_n, seed)
        ))
    }

    pub fn get(&self, spec: &ProblemSpec, grid_n: usize, seed: u64) -> Result<ReferenceField, RunError> {
        let path = self.path(spec, grid_n, seed);
        if path.exists() {
            return Ok(ReferenceField::load(&path)?);
        }
        let field = solve_reference(spec, grid_n, seed)?;
        create_dir(&self.dir)?;
        let tmp = path.with_extension("partial");
        field.save(&tmp)?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(field)
    }
}

/// Everything a run of one benchmark needs besides its dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ProblemSpec,
    pub field: ReferenceField,
    pub truth: DenseTruth,
}

pub fn prepare(
    cfg: &ExperimentConfig,
    cache: &ReferenceCache,
    kind: BenchmarkKind,
) -> Result<Prepared, RunError> {
    let spec = cfg.problem(kind);
    let field = cache.get(&spec, cfg.solver_grid, cfg.reference_seed)?;
    let truth = dense_truth(&spec, Some(&field), cfg.eval_grid)?;
    Ok(Prepared { spec, field, truth })
}

/// Sensor data for one seed. Clean mode keeps the exact field values and marks nothing.
pub fn make_dataset(
    cfg: &ExperimentConfig,
    field: &ReferenceField,
    ratio: f64,
    seed: u64,
) -> Result<CorruptedDataset, RunError> {
    let ratio = if cfg.clean { 0.0 } else { ratio };
    let mut ds = inject(
        field,
        cfg.sensors,
        &cfg.noise,
        &cfg.outliers.at_ratio(ratio),
        seed,
    )?;
    if cfg.clean {
        for m in &mut ds.measurements {
            m.observed = m.clean;
        }
    }
    Ok(ds)
}

/// One (benchmark, method, ratio, seed) cell of the matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub benchmark: BenchmarkKind,
    pub method: Method,
    /// Only meaningful for the gated method.
    pub staged: bool,
    pub ratio: f64,
    pub seed: u64,
    pub lambda_rej: f64,
}

impl Cell {
    pub fn label(&self) -> String {
        match (self.method, self.staged) {
            (Method::Napinn, false) => "napinn_unstaged".into(),
            (m, _) => m.name(),
        }
    }

    /// `<benchmark>/<method>/<ratio>/<seed>`
    pub fn relative_dir(&self) -> PathBuf {
        PathBuf::from(self.benchmark.name())
            .join(self.label())
            .join(format!("{:.2}", self.ratio))
            .join(self.seed.to_string())
    }
}

/// Cells of the configured matrix, benchmark-major. `seed_offset` shifts every seed.
pub fn matrix_cells(cfg: &ExperimentConfig, seed_offset: u64) -> Vec<Cell> {
    let methods: Vec<(Method, bool)> = if cfg.ablation {
        vec![(Method::Napinn, true), (Method::Napinn, false)]
    } else {
        cfg.methods.iter().map(|&m| (m, cfg.train.staged)).collect()
    };
    let ratios = if cfg.clean { vec![0.0] } else { cfg.ratios.clone() };
    let mut cells = Vec::new();
    for &benchmark in &cfg.benchmarks {
        for &(method, staged) in &methods {
            for &ratio in &ratios {
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        benchmark,
                        method,
                        staged,
                        ratio,
                        seed: seed + seed_offset,
                        lambda_rej: cfg.train.lambda_rej,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub benchmark: BenchmarkKind,
    pub method: Method,
    pub staged: bool,
    pub ratio: f64,
    pub seed: u64,
    pub lambda_rej: f64,
    pub pde_params: PdeParamVector,
    pub gate: Option<GateState>,
    pub running: Option<RunningStd>,
    pub ebm_half_width: Option<f64>,
    pub ebm_nodes: Option<usize>,
}

fn write_checkpoint(dir: &Path, cell: &Cell, run: &TrainedRun) -> Result<(), RunError> {
    create_dir(dir)?;
    save_params(&dir.join("pinn.params"), &run.model.net)?;
    if let Some(ebm) = &run.ebm {
        save_params(&dir.join("ebm.params"), &ebm.net)?;
    }
    let state = CheckpointState {
        benchmark: cell.benchmark,
        method: run.method,
        staged: cell.staged,
        ratio: cell.ratio,
        seed: cell.seed,
        lambda_rej: cell.lambda_rej,
        pde_params: run.pde_params.clone(),
        gate: run.gate,
        running: run.running,
        ebm_half_width: run.ebm.as_ref().map(EnergyModel::half_width),
        ebm_nodes: run.ebm.as_ref().map(|e| e.quad_grid().len()),
    };
    let path = dir.join("state.json");
    serde_json::to_writer_pretty(create(&path)?, &state)?;
    Ok(())
}

/// Metrics of a finished run against the dense ground truth.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    cell: &Cell,
    run: &TrainedRun,
    dataset: &CorruptedDataset,
) -> Result<MetricsReport, RunError> {
    let names = cell.benchmark.channel_names();
    let fm = field_metrics(&run.model, &prepared.truth, names)?;
    let confusion = classify_outliers(run, dataset, cfg.gate_threshold)?;
    let density = match (&run.ebm, &run.running) {
        (Some(ebm), Some(rs)) => Some(density_comparison(
            ebm,
            &cfg.noise,
            &dataset.noise_scale,
            rs.sigma_run,
        )),
        _ => None,
    };
    let param_name = prepared.spec.kind.param_name().to_owned();
    Ok(MetricsReport {
        benchmark: cell.benchmark.name().to_owned(),
        method: cell.label(),
        ratio: cell.ratio,
        seed: cell.seed,
        lambda_rej: cell.lambda_rej,
        rmae: fm.rmae,
        rmse: fm.rmse,
        per_channel: fm.per_channel,
        param_estimate: run.pde_params.get(&param_name).unwrap_or(f64::NAN),
        param_name,
        param_true: prepared.spec.true_param,
        confusion,
        kl_noise: density.as_deref().map(kl_divergence),
        density_modes: density.as_deref().map(|rows| {
            let d: Vec<f64> = rows.iter().map(|r| r.learned_density).collect();
            count_local_maxima(&d, MODE_FLOOR)
        }),
    })
}

/// Rebuilds a finished run from `<run dir>/checkpoint` and evaluates it again on the
/// regenerated dataset. Traces are not restored.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, run_dir: &Path) -> Result<MetricsReport, RunError> {
    let ck = run_dir.join("checkpoint");
    let state_path = ck.join("state.json");
    let text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
    let state: CheckpointState = serde_json::from_str(&text)?;
    let cache = ReferenceCache::new(cfg.out.join("cache"));
    let prepared = prepare(cfg, &cache, state.benchmark)?;
    let (lo, hi) = prepared.spec.bounds();
    let ebm = match (state.ebm_half_width, state.ebm_nodes) {
        (Some(hw), Some(nodes)) => Some(EnergyModel::new(load_params(&ck.join("ebm.params"))?, hw, nodes)?),
        _ => None,
    };
    let run = TrainedRun {
        method: state.method,
        model: PinnModel::new(load_params(&ck.join("pinn.params"))?, lo, hi),
        pde_params: state.pde_params,
        gate: state.gate,
        ebm,
        running: state.running,
        traces: Vec::new(),
    };
    let dataset = make_dataset(cfg, &prepared.field, state.ratio, state.seed)?;
    let cell = Cell {
        benchmark: state.benchmark,
        method: state.method,
        staged: state.staged,
        ratio: state.ratio,
        seed: state.seed,
        lambda_rej: state.lambda_rej,
    };
    evaluate_run(cfg, &prepared, &cell, &run, &dataset)
}

/// A trained and evaluated cell, kept in memory for callers that need more than the report.
pub struct CellOutput {
    pub report: MetricsReport,
    pub run: TrainedRun,
    pub dataset: CorruptedDataset,
}

/// Trains and evaluates one cell. With `dir` set, writes the run's files there.
pub fn run_cell(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    cell: &Cell,
    dir: Option<&Path>,
) -> Result<CellOutput, RunError> {
    let dataset = make_dataset(cfg, &prepared.field, cell.ratio, cell.seed)?;
    let mut tc = cfg.train;
    tc.lambda_rej = cell.lambda_rej;
    tc.staged = cell.staged;
    let run = train(&prepared.spec, &dataset, cell.method, &tc, cell.seed)?;
    let report = evaluate_run(cfg, prepared, cell, &run, &dataset)?;
    if let Some(dir) = dir {
        write_cell(cfg, dir, cell, &report, &run, &dataset)?;
    }
    Ok(CellOutput { report, run, dataset })
}

fn write_cell(
    cfg: &ExperimentConfig,
    dir: &Path,
    cell: &Cell,
    report: &MetricsReport,
    run: &TrainedRun,
    dataset: &CorruptedDataset,
) -> Result<(), RunError> {
    create_dir(dir)?;
    dataset.write_csv(create(&dir.join("dataset.csv"))?)?;
    run.write_trace_csv(create(&dir.join("trace.csv"))?)?;
    if let (Some(ebm), Some(rs)) = (&run.ebm, &run.running) {
        let rows = density_comparison(ebm, &cfg.noise, &dataset.noise_scale, rs.sigma_run);
        write_density_csv(&rows, create(&dir.join("density.csv"))?)?;
    }
    if let Some(rows) = gate_overlay(run, dataset)? {
        write_gate_csv(&rows, create(&dir.join("gate.csv"))?)?;
    }
    write_checkpoint(&dir.join("checkpoint"), cell, run)?;
    let path = dir.join("metrics.json");
    fs::write(&path, report.to_json()?).map_err(io_err(&path))?;
    Ok(())
}

#[derive(Debug)]
pub struct Failure {
    pub cell: Cell,
    pub cause: String,
}

#[derive(Debug, Default)]
pub struct MatrixOutcome {
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<Failure>,
}

/// Writes the resolved config next to the results.
pub fn echo_config(cfg: &ExperimentConfig, out: &Path) -> Result<(), RunError> {
    create_dir(out)?;
    let path = out.join("config.toml");
    fs::write(&path, cfg.to_toml_string()?).map_err(io_err(&path))
}

pub(crate) fn thread_pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
}

/// Runs `cells` on `jobs` workers, writing each under `root`. Failed cells are recorded and
/// the rest continue. Reports come back in cell order.
pub fn run_cells(
    cfg: &ExperimentConfig,
    cells: &[Cell],
    root: &Path,
    jobs: usize,
) -> Result<MatrixOutcome, RunError> {
    let cache = ReferenceCache::new(cfg.out.join("cache"));
    let mut benchmarks: Vec<BenchmarkKind> = Vec::new();
    for c in cells {
        if !benchmarks.contains(&c.benchmark) {
            benchmarks.push(c.benchmark);
        }
    }
    let prepared = benchmarks
        .iter()
        .map(|&b| prepare(cfg, &cache, b).map(|p| (b, p)))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Result<MetricsReport, RunError>> = thread_pool(jobs).install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let p = &prepared
                    .iter()
                    .find(|(b, _)| *b == cell.benchmark)
                    .expect("prepared")
                    .1;
                let t0 = std::time::Instant::now();
                let out = run_cell(cfg, p, cell, Some(&root.join(cell.relative_dir())));
                match &out {
                    Ok(o) => log::info!(
                        "{} done in {:.0}s: rmse {:.4}",
                        cell.relative_dir().display(),
                        t0.elapsed().as_secs_f64(),
                        o.report.rmse
                    ),
                    Err(e) => log::error!("{} failed: {e}", cell.relative_dir().display()),
                }
                out.map(|o| o.report)
            })
            .collect()
    });
    let mut outcome = MatrixOutcome::default();
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(rep) => outcome.reports.push(rep),
            Err(e) => outcome.failures.push(Failure {
                cell: *cell,
                cause: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

/// The full matrix: every cell, then `results.csv`, `summary.csv` and `failures.csv` in `cfg.out`.
pub fn run_matrix(cfg: &ExperimentConfig, seed_offset: u64, jobs: usize) -> Result<MatrixOutcome, RunError> {
    cfg.validate()?;
    echo_config(cfg, &cfg.out)?;
    let cells = matrix_cells(cfg, seed_offset);
    let outcome = run_cells(cfg, &cells, &cfg.out, jobs)?;
    crate::report::write_results(&cfg.out.join("results.csv"), &outcome.reports)?;
    crate::report::write_summary(&cfg.out.join("summary.csv"), &cfg.scale_label(), &outcome.reports)?;
    crate::report::write_failures(&cfg.out.join("failures.csv"), &outcome.failures)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda_rej: f64,
    pub seed: u64,
    pub rmae: f64,
    pub rmse: f64,
    pub rejected_fraction: f64,
}

/// Gated runs on the sweep benchmark and ratio for each configured `lambda_rej`, same seeds
/// throughout. Writes `sweep/sweep.csv` under `cfg.out`.
pub fn sweep_rejection_cost(
    cfg: &ExperimentConfig,
    seed_offset: u64,
    jobs: usize,
) -> Result<Vec<SweepRow>, RunError> {
    cfg.validate()?;
    let root = cfg.out.join("sweep");
    echo_config(cfg, &root)?;
    let mut cells = Vec::new();
    for &lambda_rej in &cfg.sweep.lambdas {
        for &seed in &cfg.seeds {
            cells.push(Cell {
                benchmark: cfg.sweep.benchmark,
                method: Method::Napinn,
                staged: cfg.train.staged,
                ratio: cfg.sweep.ratio,
                seed: seed + seed_offset,
                lambda_rej,
            });
        }
    }
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.clean = false;
    let mut rows = Vec::new();
    // one directory per lambda so cells with equal seeds do not collide
    for lambda_cells in cells.chunks(cfg.seeds.len()) {
        let lam = lambda_cells[0].lambda_rej;
        let outcome = run_cells(
            &sweep_cfg,
            lambda_cells,
            &root.join(format!("lambda_{lam:.2}")),
            jobs,
        )?;
        if let Some(f) = outcome.failures.first() {
            return Err(RunError::Failed(format!(
                "sweep run lambda_rej={lam} seed={} failed: {}",
                f.cell.seed, f.cause
            )));
        }
        rows.extend(outcome.reports.iter().map(|r| SweepRow {
            lambda_rej: lam,
            seed: r.seed,
            rmae: r.rmae,
            rmse: r.rmse,
            rejected_fraction: r.confusion.map(|c| c.rejected_fraction()).unwrap_or(0.0),
        }));
    }
    crate::report::write_sweep(&root.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// References and sensor datasets of every (benchmark, ratio, seed), without training.
/// Datasets go to `<out>/<benchmark>/data/<ratio>/<seed>/dataset.csv`.
pub fn generate(cfg: &ExperimentConfig, seed_offset: u64) -> Result<Vec<PathBuf>, RunError> {
    cfg.validate()?;
    echo_config(cfg, &cfg.out)?;
    let cache = ReferenceCache::new(cfg.out.join("cache"));
    let ratios = if cfg.clean { vec![0.0] } else { cfg.ratios.clone() };
    let mut written = Vec::new();
    for &kind in &cfg.benchmarks {
        let spec = cfg.problem(kind);
        let field = cache.get(&spec, cfg.solver_grid, cfg.reference_seed)?;
        written.push(cache.path(&spec, cfg.solver_grid, cfg.reference_seed));
        for &ratio in &ratios {
            for &seed in &cfg.seeds {
                let seed = seed + seed_offset;
                let dir = cfg
                    .out
                    .join(kind.name())
                    .join("data")
                    .join(format!("{ratio:.2}"))
                    .join(seed.to_string());
                create_dir(&dir)?;
                let path = dir.join("dataset.csv");
                make_dataset(cfg, &field, ratio, seed)?.write_csv(create(&path)?)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
