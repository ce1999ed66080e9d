//! The five batch commands. Each writes into `config.out` and finishes with
//! the resolved config and an artifact manifest.

use std::path::PathBuf;
use std::time::Instant;

use edl_core::eval::{evaluate, run_point, sweep_points, ExperimentResult, ExperimentSpec, Method, MetricRow, SweepKind};
use edl_core::model::train;
use edl_core::rng::{derive, tag};
use edl_core::teachers::distill;
use edl_core::uncertainty::report;
use edl_core::{LabeledSet, LossSpec, MetaModel};

use crate::config::RunConfig;
use crate::csvio::{self, labeled_bytes};
use crate::error::{LabError, Result};
use crate::outputs::{sha256_hex, OutputDir};
use crate::runner::Pool;
use crate::svg::{bar_chart, line_chart, Series};
use crate::{bank, checkpoint};

/// Where a command wrote its outputs, plus a one-line summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out: PathBuf,
    pub summary: String,
}

fn finish(out: OutputDir, command: &str, config: &RunConfig, summary: String) -> Result<Outcome> {
    let root = out.root().to_path_buf();
    out.finish(command, config)?;
    Ok(Outcome { out: root, summary })
}

/// The training set: the CSV at `data.train_path`, or a fresh seeded sample
/// identical to the one an experiment run draws.
fn training_set(config: &RunConfig) -> Result<LabeledSet> {
    match &config.data.train_path {
        Some(path) => csvio::read_labeled(path, config.classes()),
        None => {
            if config.data.n_train == 0 {
                return Err(LabError::config("data.n_train must be positive"));
            }
            Ok(config.mixture()?.sample(config.data.n_train, derive(config.seed, tag::TRAIN_DATA))?)
        }
    }
}

fn result_of(loss: String, lambda: Option<f64>, n_train: usize, seed: u64, rows: Vec<MetricRow>) -> ExperimentResult {
    ExperimentResult { loss, lambda, n_train, seed, rows, runtime_s: 0.0 }
}

fn write_reports(out: &mut OutputDir, model: &MetaModel, spec: &ExperimentSpec, seed: u64) -> Result<()> {
    let (test, _) = edl_core::eval::eval_data(spec, seed)?;
    let reports = test.points().rows().map(|x| model.forward(x).map(|d| report(&d))).collect::<Result<Vec<_>, _>>()?;
    csvio::write_reports(&out.file("reports.csv"), &reports)
}

pub fn gen_data(config: &RunConfig) -> Result<Outcome> {
    let d = &config.data;
    if d.n_train == 0 || d.n_test == 0 {
        return Err(LabError::config("data.n_train and data.n_test must be positive"));
    }
    let spec = config.experiment(config.edl_method()?)?;
    let mut out = OutputDir::create(&config.out)?;
    let train = spec.mixture.sample(d.n_train, derive(config.seed, tag::TRAIN_DATA))?;
    csvio::write_labeled(&out.file("train.csv"), &train)?;
    let (test, ood) = edl_core::eval::eval_data(&spec, config.seed)?;
    csvio::write_labeled(&out.file("test.csv"), &test)?;
    for (source, points) in spec.ood_sources.iter().zip(&ood) {
        csvio::write_points(&out.file(&format!("ood_{}.csv", source.name())), points)?;
    }
    let summary = format!("wrote {} train, {} test and {} OOD sets", train.len(), test.len(), ood.len());
    finish(out, "gen-data", config, summary)
}

pub fn train_model(config: &RunConfig) -> Result<Outcome> {
    let loss: LossSpec = config.loss_spec()?;
    let spec = config.experiment(config.edl_method()?)?;
    let set = training_set(config)?;
    let mut out = OutputDir::create(&config.out)?;
    let model = MetaModel::new(spec.architecture(&set), derive(config.seed, tag::INIT))?;
    let started = Instant::now();
    let (model, history) = train(model, &set, &loss, &spec.schedule, config.seed)?;
    let elapsed = started.elapsed().as_secs_f64();
    checkpoint::save(&out.file("model.ckpt"), &model)?;
    csvio::write_history(&out.file("history.csv"), &history)?;
    let rows = evaluate(&model, &spec, config.seed)?;
    let mut result = result_of(loss.kind.name().into(), Some(loss.lambda), set.len(), config.seed, rows);
    result.runtime_s = elapsed;
    csvio::write_tidy(&out.file("results.csv"), &[result.clone()], config.record_runtime)?;
    if config.eval.reports {
        write_reports(&mut out, &model, &spec, config.seed)?;
    }
    let acc = result.value("id", "accuracy").unwrap_or(f64::NAN);
    let summary = format!("trained {} for {} epochs, test accuracy {acc:.4}", loss.kind, history.epochs());
    finish(out, "train", config, summary)
}

pub fn distill_model(config: &RunConfig) -> Result<Outcome> {
    let method = config.distill_method()?;
    let Method::Distill { teachers, anneal } = &method else { unreachable!("distill_method builds Distill") };
    let spec = config.experiment(method.clone())?;
    let set = training_set(config)?;
    let pool = Pool::new(config.workers)?;
    let mut out = OutputDir::create(&config.out)?;

    let bank_dir = config.out.join("bank");
    let (bank, built) = bank::build(&bank_dir, teachers, &set, config.seed, sha256_hex(&labeled_bytes(&set)), &pool)?;
    let mut member_files: Vec<String> = std::fs::read_dir(&bank_dir)
        .map_err(|e| LabError::io(&bank_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".ckpt") || n == bank::MANIFEST)
        .collect();
    member_files.sort();
    for name in member_files {
        out.file(&format!("bank/{name}"));
    }

    let student = MetaModel::new(spec.architecture(&set), derive(config.seed, tag::INIT))?;
    let (student, history) = distill(&bank, student, &set, anneal, &spec.schedule, config.seed)?;
    checkpoint::save(&out.file("student.ckpt"), &student)?;
    csvio::write_history(&out.file("history.csv"), &history)?;

    let mut rows = evaluate(&student, &spec, config.seed)?;
    rows.extend(evaluate(&bank, &spec, config.seed)?.into_iter().map(|r| MetricRow { task: format!("bank/{}", r.task), ..r }));
    let result = result_of(method.label(), None, set.len(), config.seed, rows);
    csvio::write_tidy(&out.file("results.csv"), &[result.clone()], false)?;
    if config.eval.reports {
        write_reports(&mut out, &student, &spec, config.seed)?;
    }
    let summary = format!(
        "{} bank of {} ({} trained, {} reused); student accuracy {:.4}, mean MI {:.3e}",
        teachers.kind,
        teachers.members,
        built.trained,
        built.reused,
        result.value("id", "accuracy").unwrap_or(f64::NAN),
        result.value("id", "mean_mi").unwrap_or(f64::NAN),
    );
    finish(out, "distill", config, summary)
}

fn bars_for(rows: &[MetricRow], metric: &str) -> Vec<(String, Option<f64>)> {
    rows.iter().filter(|r| r.metric == metric).map(|r| (r.task.clone(), r.value)).collect()
}

/// Evaluates `eval.checkpoint` if set; otherwise trains and evaluates the
/// configured method once.
pub fn eval(config: &RunConfig, plot: bool) -> Result<Outcome> {
    let mut out;
    let result = match &config.eval.checkpoint {
        Some(path) => {
            let model = checkpoint::load(path)?;
            let spec = config.experiment(config.edl_method()?)?;
            if model.classes() != spec.mixture.classes() || model.architecture().input_dim != spec.mixture.dim() {
                return Err(LabError::config(format!("{} does not match the configured data", path.display())));
            }
            out = OutputDir::create(&config.out)?;
            let rows = evaluate(&model, &spec, config.seed)?;
            if config.eval.reports {
                write_reports(&mut out, &model, &spec, config.seed)?;
            }
            result_of("checkpoint".into(), None, 0, config.seed, rows)
        }
        None => {
            let spec = config.experiment(config.method()?)?;
            out = OutputDir::create(&config.out)?;
            let started = Instant::now();
            let mut r = run_point(&spec, config.seed)?;
            r.runtime_s = started.elapsed().as_secs_f64();
            r
        }
    };
    csvio::write_tidy(&out.file("results.csv"), &[result.clone()], config.record_runtime)?;
    if plot {
        let metric = &config.eval.plot_metric;
        let bars = bars_for(&result.rows, metric);
        if bars.is_empty() {
            return Err(LabError::config(format!("no result rows carry the metric `{metric}`")));
        }
        let svg = bar_chart(&format!("{} by task", metric), metric, &bars);
        csvio::write_bytes(&out.file(&format!("eval_{metric}.svg")), svg.as_bytes())?;
    }
    let summary = format!("{} result rows", result.rows.len());
    finish(out, "eval", config, summary)
}

/// Mean, sample standard deviation and count of the available values.
fn summarize(values: &[f64]) -> (f64, f64, usize) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, sd, n)
}

/// One summary row per (grid point, task, metric), in grid then row order.
pub struct SummaryRow {
    pub grid_value: f64,
    pub loss: String,
    pub lambda: Option<f64>,
    pub n_train: usize,
    pub task: String,
    pub metric: String,
    /// Mean, standard deviation and count over seeds with a value.
    pub stats: Option<(f64, f64, usize)>,
}

pub fn summarize_sweep(kind: SweepKind, grid: &[f64], results: &[ExperimentResult]) -> Vec<SummaryRow> {
    let grid_of = |r: &ExperimentResult| match kind {
        SweepKind::Lambda => r.lambda.unwrap_or(f64::NAN),
        SweepKind::SampleSize => r.n_train as f64,
    };
    let mut out = Vec::new();
    for &g in grid {
        let group: Vec<&ExperimentResult> = results.iter().filter(|r| grid_of(r) == g).collect();
        let Some(first) = group.first() else { continue };
        for row in &first.rows {
            let values: Vec<f64> = group.iter().filter_map(|r| r.value(&row.task, &row.metric)).collect();
            out.push(SummaryRow {
                grid_value: g,
                loss: first.loss.clone(),
                lambda: first.lambda,
                n_train: first.n_train,
                task: row.task.clone(),
                metric: row.metric.clone(),
                stats: (!values.is_empty()).then(|| summarize(&values)),
            });
        }
    }
    out
}

fn summary_bytes(rows: &[SummaryRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "loss", "lambda", "n_train", "metric", "mean", "sd", "count"]).expect("in-memory write");
    for r in rows {
        let (mean, sd, n) = r.stats.map_or((None, None, 0), |(m, s, n)| (Some(m), Some(s), n));
        w.write_record([
            r.task.as_str(),
            r.loss.as_str(),
            &csvio::fmt_opt(r.lambda),
            &r.n_train.to_string(),
            r.metric.as_str(),
            &csvio::fmt_opt(mean),
            &csvio::fmt_opt(sd),
            &n.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Runs every (grid point, seed) job on the worker pool.
pub fn run_sweep(config: &RunConfig) -> Result<(SweepKind, Vec<f64>, Vec<ExperimentResult>)> {
    let kind = config.sweep_kind()?;
    let grid = config.sweep_grid()?;
    let base = config.experiment(config.method()?)?;
    let jobs = sweep_points(&base, kind, &grid, &config.sweep.seeds)?;
    let pool = Pool::new(config.workers)?;
    let results = pool.map(jobs, |(spec, seed)| {
        let started = Instant::now();
        let mut r = run_point(&spec, seed)?;
        r.runtime_s = started.elapsed().as_secs_f64();
        Ok(r)
    })?;
    Ok((kind, grid, results))
}

pub fn sweep(config: &RunConfig) -> Result<Outcome> {
    let plots: Vec<(String, String)> = config
        .sweep
        .plot
        .iter()
        .map(|c| {
            c.split_once(':')
                .map(|(t, m)| (t.to_string(), m.to_string()))
                .ok_or_else(|| LabError::config(format!("sweep.plot entry `{c}` is not task:metric")))
        })
        .collect::<Result<_>>()?;
    let (kind, grid, results) = run_sweep(config)?;
    let mut out = OutputDir::create(&config.out)?;
    csvio::write_tidy(&out.file("sweep.csv"), &results, config.record_runtime)?;
    let summary = summarize_sweep(kind, &grid, &results);
    csvio::write_bytes(&out.file("summary.csv"), &summary_bytes(&summary))?;
    for (task, metric) in &plots {
        let points: Vec<(f64, f64)> = summary
            .iter()
            .filter(|r| &r.task == task && &r.metric == metric)
            .filter_map(|r| r.stats.map(|s| (r.grid_value, s.0)))
            .collect();
        if points.is_empty() {
            return Err(LabError::config(format!("sweep results have no column {task}:{metric}")));
        }
        let label = results.first().map(|r| r.loss.clone()).unwrap_or_default();
        let chart = line_chart(
            &format!("{task} {metric} (mean over {} seeds)", config.sweep.seeds.len()),
            kind.name(),
            metric,
            &[Series { name: label, points }],
            true,
        );
        let file = format!("sweep_{}_{}.svg", task.replace('/', "-"), metric);
        csvio::write_bytes(&out.file(&file), chart.as_bytes())?;
    }
    let summary_line = format!("{} sweep: {} grid points x {} seeds", kind.name(), grid.len(), config.sweep.seeds.len());
    finish(out, "sweep", config, summary_line)
}
