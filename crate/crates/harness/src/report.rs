//! Aggregate tables and figure-data CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use napinn::evaluation::MetricsReport;
use walkdir::WalkDir;

use crate::pipeline::{create, create_dir, io_err, Failure, RunError, SweepRow};

/// Label of the row holding naPINN's relative improvement over the best baseline, in percent.
pub const IMPROVEMENT: &str = "improvement_pct";

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub benchmark: String,
    pub method: String,
    pub ratio: f64,
    pub n: usize,
    pub rmae: (f64, f64),
    pub rmse: (f64, f64),
    pub param: (f64, f64),
}

/// Mean +- std per (benchmark, method, ratio) in first-seen order, followed per
/// (benchmark, ratio) by naPINN's improvement over the best baseline.
pub fn summarize(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, f64)> = Vec::new();
    for r in reports {
        let k = (r.benchmark.clone(), r.method.clone(), r.ratio);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut rows: Vec<SummaryRow> = keys
        .into_iter()
        .map(|(benchmark, method, ratio)| {
            let group: Vec<&MetricsReport> = reports
                .iter()
                .filter(|r| r.benchmark == benchmark && r.method == method && r.ratio == ratio)
                .collect();
            let col =
                |f: fn(&MetricsReport) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                n: group.len(),
                rmae: col(|r| r.rmae),
                rmse: col(|r| r.rmse),
                param: col(|r| r.param_estimate),
                benchmark,
                method,
                ratio,
            }
        })
        .collect();

    let mut improvements = Vec::new();
    for napinn in rows.iter().filter(|r| r.method == "napinn") {
        let baselines: Vec<&SummaryRow> = rows
            .iter()
            .filter(|r| {
                r.benchmark == napinn.benchmark && r.ratio == napinn.ratio && !r.method.starts_with("napinn")
            })
            .collect();
        if baselines.is_empty() {
            continue;
        }
        let best = |f: fn(&SummaryRow) -> f64| baselines.iter().map(|r| f(r)).fold(f64::INFINITY, f64::min);
        let gain = |best: f64, ours: f64| 100.0 * (best - ours) / best;
        improvements.push(SummaryRow {
            benchmark: napinn.benchmark.clone(),
            method: IMPROVEMENT.into(),
            ratio: napinn.ratio,
            n: napinn.n,
            rmae: (gain(best(|r| r.rmae.0), napinn.rmae.0), 0.0),
            rmse: (gain(best(|r| r.rmse.0), napinn.rmse.0), 0.0),
            param: (f64::NAN, f64::NAN),
        });
    }
    rows.extend(improvements);
    rows
}

pub fn write_results(path: &Path, reports: &[MetricsReport]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(MetricsReport::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_row())?;
    }
    w.flush().map_err(io_err(path))
}

/// `summary.csv`: `scale` names the preset and seed count of the runs behind each row.
pub fn write_summary(path: &Path, scale: &str, reports: &[MetricsReport]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "scale",
        "benchmark",
        "method",
        "ratio",
        "n",
        "rmae_mean",
        "rmae_std",
        "rmse_mean",
        "rmse_std",
        "param_mean",
        "param_std",
    ])?;
    let f = |v: f64| {
        if v.is_nan() {
            String::new()
        } else {
            format!("{v:.6e}")
        }
    };
    for row in summarize(reports) {
        w.write_record([
            scale.to_owned(),
            row.benchmark,
            row.method,
            format!("{:.2}", row.ratio),
            row.n.to_string(),
            f(row.rmae.0),
            f(row.rmae.1),
            f(row.rmse.0),
            f(row.rmse.1),
            f(row.param.0),
            f(row.param.1),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_failures(path: &Path, failures: &[Failure]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["run", "cause"])?;
    for f in failures {
        w.write_record([f.cell.relative_dir().display().to_string(), f.cause.clone()])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["lambda_rej", "seed", "rmae", "rmse", "rejected_fraction"])?;
    for r in rows {
        w.write_record([
            r.lambda_rej.to_string(),
            r.seed.to_string(),
            format!("{:.6e}", r.rmae),
            format!("{:.6e}", r.rmse),
            format!("{:.6}", r.rejected_fraction),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

fn skipped(entry: &walkdir::DirEntry) -> bool {
    entry.depth() == 1 && matches!(entry.file_name().to_str(), Some("cache" | "plots" | "sweep"))
}

/// Every `metrics.json` under `root` (outside `cache`, `plots` and `sweep`), sorted by path.
pub fn collect_runs(root: &Path) -> Result<Vec<(PathBuf, MetricsReport)>, RunError> {
    let mut runs = Vec::new();
    for entry in WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !skipped(e))
    {
        let entry = entry.map_err(|e| RunError::Failed(e.to_string()))?;
        if entry.file_name() == "metrics.json" {
            let text = fs::read_to_string(entry.path()).map_err(io_err(entry.path()))?;
            let dir = entry.path().parent().unwrap_or(root).to_owned();
            runs.push((dir, MetricsReport::from_json(&text)?));
        }
    }
    Ok(runs)
}

/// Files written by [`emit_plot_data`] and the figures that had no input.
#[derive(Debug, Default)]
pub struct PlotOutput {
    pub written: Vec<PathBuf>,
    pub missing: Vec<String>,
}

/// Figure data under `<root>/plots`:
///
/// - `robustness_<benchmark>.csv`: `method,ratio,n,rmse_mean,rmse_std,rmae_mean,rmae_std`
/// - `density_<run>.csv`: `r,true_density,learned_density`
/// - `gate_overlay_<run>.csv`: `energy,g,is_outlier,residual`
/// - `gate_trace_<run>.csv`: `iter,a,tau` over the joint stage
/// - `rejection_sweep.csv`: `lambda_rej,n,rmae_mean,rmse_mean,rmse_median,rejected_fraction_mean`
///
/// `<run>` is `<benchmark>_<method>_<ratio>_<seed>`.
pub fn emit_plot_data(root: &Path) -> Result<PlotOutput, RunError> {
    let runs = collect_runs(root)?;
    if runs.is_empty() {
        return Err(RunError::NoResults(root.to_owned()));
    }
    let plots = root.join("plots");
    create_dir(&plots)?;
    let mut out = PlotOutput::default();

    let mut by_bench: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for (_, r) in &runs {
        by_bench.entry(r.benchmark.clone()).or_default().push(r.clone());
    }
    for (bench, reports) in &by_bench {
        let path = plots.join(format!("robustness_{bench}.csv"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record([
            "method",
            "ratio",
            "n",
            "rmse_mean",
            "rmse_std",
            "rmae_mean",
            "rmae_std",
        ])?;
        for row in summarize(reports).into_iter().filter(|r| r.method != IMPROVEMENT) {
            w.write_record([
                row.method,
                format!("{:.2}", row.ratio),
                row.n.to_string(),
                format!("{:.6e}", row.rmse.0),
                format!("{:.6e}", row.rmse.1),
                format!("{:.6e}", row.rmae.0),
                format!("{:.6e}", row.rmae.1),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;
        out.written.push(path);
    }

    let (mut densities, mut overlays, mut traces) = (0, 0, 0);
    for (dir, r) in &runs {
        let tag = format!("{}_{}_{:.2}_{}", r.benchmark, r.method, r.ratio, r.seed);
        for (src, name, count) in [
            ("density.csv", format!("density_{tag}.csv"), &mut densities),
            ("gate.csv", format!("gate_overlay_{tag}.csv"), &mut overlays),
        ] {
            let from = dir.join(src);
            if from.exists() {
                let to = plots.join(name);
                fs::copy(&from, &to).map_err(io_err(&from))?;
                out.written.push(to);
                *count += 1;
            }
        }
        let trace = dir.join("trace.csv");
        if r.confusion.is_some() && trace.exists() {
            let to = plots.join(format!("gate_trace_{tag}.csv"));
            if write_gate_trace(&trace, &to)? {
                out.written.push(to);
                traces += 1;
            }
        }
    }
    for (count, what) in [
        (densities, "density comparison"),
        (overlays, "gate overlay"),
        (traces, "gate parameter trace"),
    ] {
        if count == 0 {
            out.missing
                .push(format!("{what}: no gated runs under {}", root.display()));
        }
    }

    let sweep = root.join("sweep").join("sweep.csv");
    if sweep.exists() {
        let to = plots.join("rejection_sweep.csv");
        write_sweep_curve(&sweep, &to)?;
        out.written.push(to);
    } else {
        out.missing
            .push(format!("rejection sweep: {} not found", sweep.display()));
    }
    Ok(out)
}

/// Joint-stage `iter,a,tau` rows of a trace; false if there are none.
fn write_gate_trace(trace: &Path, to: &Path) -> Result<bool, RunError> {
    let mut rd = csv::Reader::from_path(trace)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RunError::Failed(format!("{}: no {name} column", trace.display())))
    };
    let (it, a, tau) = (col("iter")?, col("a")?, col("tau")?);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if !rec[a].is_empty() {
            rows.push([rec[it].to_owned(), rec[a].to_owned(), rec[tau].to_owned()]);
        }
    }
    if rows.is_empty() {
        return Ok(false);
    }
    let mut w = csv::Writer::from_writer(create(to)?);
    w.write_record(["iter", "a", "tau"])?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(to))?;
    Ok(true)
}

fn write_sweep_curve(sweep: &Path, to: &Path) -> Result<(), RunError> {
    let mut groups: Vec<(f64, Vec<[f64; 3]>)> = Vec::new();
    for rec in csv::Reader::from_path(sweep)?.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| RunError::Failed(format!("{}: {e}", sweep.display())))
        };
        let (lam, vals) = (num(0)?, [num(2)?, num(3)?, num(4)?]);
        match groups.iter_mut().find(|(l, _)| *l == lam) {
            Some((_, v)) => v.push(vals),
            None => groups.push((lam, vec![vals])),
        }
    }
    let mut w = csv::Writer::from_writer(create(to)?);
    w.write_record([
        "lambda_rej",
        "n",
        "rmae_mean",
        "rmse_mean",
        "rmse_median",
        "rejected_fraction_mean",
    ])?;
    for (lam, v) in groups {
        let col = |k: usize| v.iter().map(|r| r[k]).collect::<Vec<_>>();
        w.write_record([
            lam.to_string(),
            v.len().to_string(),
            format!("{:.6e}", mean_std(&col(0)).0),
            format!("{:.6e}", mean_std(&col(1)).0),
            format!("{:.6e}", median(&col(1))),
            format!("{:.6}", mean_std(&col(2)).0),
        ])?;
    }
    w.flush().map_err(io_err(to))
}
