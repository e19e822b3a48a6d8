//! CSV and JSON emission.
//!
//! Floats are written in shortest round-trip form and rows follow the
//! canonical cell order, so identical specs give byte-identical CSV files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::runner::{CellResult, ExperimentResult, Outcome};
use crate::spec::ExperimentSpec;

pub const TRAJECTORY_HEADER: [&str; 9] =
    ["experiment_id", "algorithm", "sweep_param", "sweep_value", "seed", "iter", "oracle_calls", "residual", "norm_z"];

pub const SUMMARY_HEADER: [&str; 16] = [
    "experiment_id",
    "algorithm",
    "sweep_param",
    "sweep_value",
    "seed",
    "status",
    "iterations",
    "oracle_calls",
    "initial_residual",
    "final_residual",
    "initial_norm",
    "final_norm",
    "output_index",
    "output_residual",
    "config_digest",
    "message",
];

pub const AGGREGATE_HEADER: [&str; 13] = [
    "experiment_id",
    "algorithm",
    "sweep_param",
    "sweep_value",
    "runs",
    "finished",
    "diverged",
    "rejected",
    "mean_initial_residual",
    "mean_final_residual",
    "mean_final_norm",
    "mean_output_residual",
    "mean_oracle_calls",
];

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_sweep(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        fmt_f64(x)
    }
}

fn prefix(spec: &ExperimentSpec, c: &CellResult) -> Vec<String> {
    vec![
        spec.experiment_id.clone(),
        c.cell.algorithm.clone(),
        spec.sweep_param_name().to_string(),
        fmt_sweep(c.cell.sweep_value),
    ]
}

/// One row per logged iteration of every finished run.
pub fn write_trajectory<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for c in &result.results {
        let Some(rec) = c.record() else { continue };
        let head = prefix(&result.spec, c);
        for e in &rec.log {
            let mut row = head.clone();
            row.extend([
                c.cell.seed.to_string(),
                e.iteration.to_string(),
                e.oracle_calls.to_string(),
                fmt_f64(e.residual),
                fmt_f64(e.norm_z),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per run, rejected cells included.
pub fn write_summary<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for c in &result.results {
        let mut row = prefix(&result.spec, c);
        row.push(c.cell.seed.to_string());
        match &c.outcome {
            Outcome::Finished(r) => row.extend([
                r.stop_reason.as_str().to_string(),
                r.iterations.to_string(),
                r.oracle_calls.to_string(),
                fmt_f64(r.initial_residual),
                fmt_f64(r.final_residual()),
                fmt_f64(r.initial_norm),
                fmt_f64(r.final_norm()),
                r.output_index.to_string(),
                fmt_f64(r.output_residual),
                r.config_digest.clone(),
                String::new(),
            ]),
            Outcome::Rejected(msg) => {
                row.push("rejected".into());
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push(msg.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Seed means per (algorithm, sweep value) over finished runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub algorithm: String,
    pub sweep_value: f64,
    pub runs: usize,
    pub finished: usize,
    pub diverged: usize,
    pub rejected: usize,
    pub mean_initial_residual: f64,
    pub mean_final_residual: f64,
    pub mean_final_norm: f64,
    pub mean_output_residual: f64,
    pub mean_oracle_calls: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn aggregates(result: &ExperimentResult) -> Vec<Aggregate> {
    let mut groups: Vec<(usize, f64, Vec<&CellResult>)> = Vec::new();
    for c in &result.results {
        let key = (c.cell.algorithm_index, c.cell.sweep_value);
        match groups.iter_mut().find(|g| g.0 == key.0 && g.1.total_cmp(&key.1).is_eq()) {
            Some(g) => g.2.push(c),
            None => groups.push((key.0, key.1, vec![c])),
        }
    }
    groups
        .into_iter()
        .map(|(_, value, cells)| {
            let recs: Vec<_> = cells.iter().filter_map(|c| c.record()).collect();
            Aggregate {
                algorithm: cells[0].cell.algorithm.clone(),
                sweep_value: value,
                runs: cells.len(),
                finished: recs.len(),
                diverged: recs.iter().filter(|r| r.diverged()).count(),
                rejected: cells.len() - recs.len(),
                mean_initial_residual: mean(recs.iter().map(|r| r.initial_residual)),
                mean_final_residual: mean(recs.iter().map(|r| r.final_residual())),
                mean_final_norm: mean(recs.iter().map(|r| r.final_norm())),
                mean_output_residual: mean(recs.iter().map(|r| r.output_residual)),
                mean_oracle_calls: mean(recs.iter().map(|r| r.oracle_calls as f64)),
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for a in aggregates(result) {
        w.write_record([
            result.spec.experiment_id.clone(),
            a.algorithm,
            result.spec.sweep_param_name().to_string(),
            fmt_sweep(a.sweep_value),
            a.runs.to_string(),
            a.finished.to_string(),
            a.diverged.to_string(),
            a.rejected.to_string(),
            fmt_f64(a.mean_initial_residual),
            fmt_f64(a.mean_final_residual),
            fmt_f64(a.mean_final_norm),
            fmt_f64(a.mean_output_residual),
            fmt_f64(a.mean_oracle_calls),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Iterates `z_0, z_1, ...` of runs that recorded them, one row per point.
pub fn write_points<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let dim = result.spec.initial_point.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["experiment_id", "algorithm", "sweep_param", "sweep_value", "seed", "iter"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for c in &result.results {
        let Some(rec) = c.record() else { continue };
        let head = prefix(&result.spec, c);
        for (k, z) in rec.points.iter().enumerate() {
            let mut row = head.clone();
            row.extend([c.cell.seed.to_string(), k.to_string()]);
            row.extend(z.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment_id: &'a str,
    library_version: &'static str,
    wall_clock_seconds: f64,
    workers: usize,
    seed_base: u64,
    cells: usize,
    rejected: usize,
    files: Vec<String>,
    spec: &'a ExperimentSpec,
}

/// Paths of the files written by [`write_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub aggregate: PathBuf,
    pub points: Option<PathBuf>,
    pub manifest: PathBuf,
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

/// Writes all outputs into `dir`, creating it when needed.
pub fn write_all(result: &ExperimentResult, dir: &Path) -> Result<OutputFiles> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = OutputFiles {
        trajectory: dir.join("trajectory.csv"),
        summary: dir.join("summary.csv"),
        aggregate: dir.join("aggregate.csv"),
        points: result.spec.record_points.then(|| dir.join("points.csv")),
        manifest: dir.join("manifest.json"),
    };
    write_trajectory(result, create(&files.trajectory)?)?;
    write_summary(result, create(&files.summary)?)?;
    write_aggregate(result, create(&files.aggregate)?)?;
    if let Some(p) = &files.points {
        write_points(result, create(p)?)?;
    }
    let mut names = vec!["trajectory.csv", "summary.csv", "aggregate.csv"];
    if files.points.is_some() {
        names.push("points.csv");
    }
    let manifest = Manifest {
        experiment_id: &result.spec.experiment_id,
        library_version: env!("CARGO_PKG_VERSION"),
        wall_clock_seconds: result.wall_seconds,
        workers: result.options.workers,
        seed_base: result.options.seed_base,
        cells: result.results.len(),
        rejected: result.results.iter().filter(|c| c.record().is_none()).count(),
        files: names.into_iter().map(String::from).collect(),
        spec: &result.spec,
    };
    serde_json::to_writer_pretty(create(&files.manifest)?, &manifest)?;
    Ok(files)
}
