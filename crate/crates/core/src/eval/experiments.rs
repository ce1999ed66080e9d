//! OOD-detection and selective-classification runners, and seeded sweeps.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::metrics::{aupr, auroc, ScoredBinary};
use crate::data::{LabeledSet, MixtureSpec, OodSource, Points};
use crate::dirichlet::argmax;
use crate::error::{Error, Result};
use crate::model::{train, Architecture, HeadSpec, MetaModel, Schedule};
use crate::objectives::{LossKind, LossSpec};
use crate::rng::{derive, tag};
use crate::teachers::{bank_meta_report, distill, teacher_probs, train_teachers, AnnealSchedule, TeacherBank, TeacherConfig};
use crate::uncertainty::{report, UqReport};

/// Anything that yields a prediction and an uncertainty report per input.
pub trait UqSource {
    fn uq(&self, x: &[f64]) -> Result<UqReport>;
    fn predict(&self, x: &[f64]) -> Result<usize>;
}

impl UqSource for MetaModel {
    fn uq(&self, x: &[f64]) -> Result<UqReport> {
        Ok(report(&self.forward(x)?))
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(self.forward(x)?.alpha()))
    }
}

impl UqSource for TeacherBank {
    fn uq(&self, x: &[f64]) -> Result<UqReport> {
        bank_meta_report(self, x)
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        let probs = teacher_probs(self, x, 1.0)?;
        let mut mean = vec![0.0; self.classes()];
        for p in &probs {
            mean.iter_mut().zip(p.as_slice()).for_each(|(m, v)| *m += v);
        }
        Ok(argmax(&mean))
    }
}

/// Uncertainty score used for ranking; larger means more uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreMetric {
    Mi,
    Dent,
    Energy,
    Ent,
    /// Scored as −maxp.
    MaxP,
}

impl ScoreMetric {
    pub const ALL: [ScoreMetric; 5] =
        [ScoreMetric::Mi, ScoreMetric::Dent, ScoreMetric::Energy, ScoreMetric::Ent, ScoreMetric::MaxP];
    pub const EPISTEMIC: [ScoreMetric; 3] = [ScoreMetric::Mi, ScoreMetric::Dent, ScoreMetric::Energy];
    pub const TOTAL: [ScoreMetric; 2] = [ScoreMetric::Ent, ScoreMetric::MaxP];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMetric::Mi => "mi",
            ScoreMetric::Dent => "dent",
            ScoreMetric::Energy => "energy",
            ScoreMetric::Ent => "ent",
            ScoreMetric::MaxP => "maxp",
        }
    }

    /// `None` when the report does not carry this quantity.
    pub fn score(self, r: &UqReport) -> Option<f64> {
        match self {
            ScoreMetric::Mi => Some(r.mi),
            ScoreMetric::Dent => r.dent,
            ScoreMetric::Energy => r.energy,
            ScoreMetric::Ent => Some(r.ent),
            ScoreMetric::MaxP => Some(-r.maxp),
        }
    }
}

impl core::str::FromStr for ScoreMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|m| m.name() == s.to_ascii_lowercase()).ok_or_else(|| {
            Error::config(format!("unknown score metric `{s}` (valid: mi, dent, energy, ent, maxp)"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMetrics {
    pub auroc: f64,
    pub aupr: f64,
}

impl RankMetrics {
    pub fn of(s: &ScoredBinary) -> Self {
        RankMetrics { auroc: auroc(s), aupr: aupr(s) }
    }
}

fn reports_of(src: &dyn UqSource, points: &Points) -> Result<Vec<UqReport>> {
    points.rows().map(|x| src.uq(x)).collect()
}

fn scores_of(reports: &[UqReport], metric: ScoreMetric) -> Result<Vec<f64>> {
    reports
        .iter()
        .map(|r| metric.score(r).ok_or(Error::NotApplicable(metric.name())))
        .collect()
}

/// ID scores as negatives and OOD scores as positives.
pub fn ood_scores(src: &dyn UqSource, id: &Points, ood: &Points, metric: ScoreMetric) -> Result<ScoredBinary> {
    ScoredBinary::new(scores_of(&reports_of(src, ood)?, metric)?, scores_of(&reports_of(src, id)?, metric)?)
}

pub fn ood_metrics(src: &dyn UqSource, id: &Points, ood: &Points, metric: ScoreMetric) -> Result<RankMetrics> {
    Ok(RankMetrics::of(&ood_scores(src, id, ood, metric)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectiveOutcome {
    pub accuracy: f64,
    /// Absent when every prediction is correct (or every one is wrong).
    pub metrics: Option<RankMetrics>,
}

/// Misclassified test points are the positive class.
pub fn selective_experiment(src: &dyn UqSource, test: &LabeledSet, metric: ScoreMetric) -> Result<SelectiveOutcome> {
    let reports = reports_of(src, test.points())?;
    let correct: Vec<bool> =
        (0..test.len()).map(|i| src.predict(test.x(i)).map(|p| p == test.y(i))).collect::<Result<_>>()?;
    selective_from(&reports, &correct, metric)
}

fn selective_from(reports: &[UqReport], correct: &[bool], metric: ScoreMetric) -> Result<SelectiveOutcome> {
    if reports.is_empty() {
        return Err(Error::EmptyScores);
    }
    let scores = scores_of(reports, metric)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (s, &ok) in scores.into_iter().zip(correct) {
        if ok {
            neg.push(s);
        } else {
            pos.push(s);
        }
    }
    let accuracy = neg.len() as f64 / correct.len() as f64;
    let metrics = ScoredBinary::new(pos, neg).ok().map(|s| RankMetrics::of(&s));
    Ok(SelectiveOutcome { accuracy, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Direct,
    Density { latent_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// A single evidential model trained with a closed-form objective.
    Edl { loss: LossSpec, head: HeadKind },
    /// A teacher bank distilled into a direct-head student.
    Distill { teachers: TeacherConfig, anneal: AnnealSchedule },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Edl { loss, .. } => loss.kind.name().to_string(),
            Method::Distill { teachers, .. } => format!("distill-{}", teachers.kind.name()),
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Method::Edl { loss, .. } => Some(loss.lambda),
            Method::Distill { .. } => None,
        }
    }
}

/// One fully specified train-and-evaluate run on synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub method: Method,
    pub mixture: MixtureSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub hidden: Vec<usize>,
    pub schedule: Schedule,
    pub ood_sources: Vec<OodSource>,
    pub ood_metrics: Vec<ScoreMetric>,
    pub selective_metrics: Vec<ScoreMetric>,
}

impl ExperimentSpec {
    /// Toy defaults: noiseless 3-class mixture, 1000/2000 points, every OOD source.
    pub fn toy(method: Method) -> Self {
        let mixture = MixtureSpec::toy(0.0);
        let ood_sources = vec![OodSource::uniform_box(&mixture), OodSource::ring(), OodSource::shifted_gaussian()];
        ExperimentSpec {
            method,
            mixture,
            n_train: 1000,
            n_test: 2000,
            n_ood: 1000,
            hidden: vec![64, 64, 64],
            schedule: Schedule::default(),
            ood_sources,
            ood_metrics: ScoreMetric::EPISTEMIC.to_vec(),
            selective_metrics: ScoreMetric::TOTAL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        self.schedule.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("n_train and n_test must be positive"));
        }
        if !self.ood_sources.is_empty() && self.n_ood == 0 {
            return Err(Error::config("n_ood must be positive when OOD sources are listed"));
        }
        match &self.method {
            Method::Edl { loss, head } => {
                if loss.kind == LossKind::Distill {
                    return Err(Error::config("use the distill method for the distillation loss"));
                }
                loss.validate(self.mixture.classes())?;
                if let HeadKind::Density { latent_dim: 0 } = head {
                    return Err(Error::config("latent_dim must be positive"));
                }
            }
            Method::Distill { teachers, anneal } => {
                teachers.validate()?;
                anneal.validate()?;
            }
        }
        Ok(())
    }

    /// Model shape for a run on `train_set`.
    pub fn architecture(&self, train_set: &LabeledSet) -> Architecture {
        let head = match &self.method {
            Method::Edl { loss, head: HeadKind::Density { latent_dim } } => {
                HeadSpec::density_for(train_set, *latent_dim, loss.alpha0.clone())
            }
            _ => HeadSpec::direct(),
        };
        Architecture {
            input_dim: self.mixture.dim(),
            hidden: self.hidden.clone(),
            classes: self.mixture.classes(),
            head,
            dropout: 0.0,
        }
    }
}

/// One tidy result value; `None` serializes as a not-available marker.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task: String,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub loss: String,
    pub lambda: Option<f64>,
    pub n_train: usize,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Wall-clock seconds; filled by callers that can measure time.
    pub runtime_s: f64,
}

impl ExperimentResult {
    pub fn value(&self, task: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.task == task && r.metric == metric).and_then(|r| r.value)
    }
}

fn push(rows: &mut Vec<MetricRow>, task: &str, metric: impl Into<String>, value: Option<f64>) {
    rows.push(MetricRow { task: task.to_string(), metric: metric.into(), value });
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Rows of the `id`, `selective` and `ood/<source>` tasks for one source.
fn evaluate_source(
    src: &dyn UqSource,
    task_prefix: &str,
    spec: &ExperimentSpec,
    test: &LabeledSet,
    ood_sets: &[Points],
    rows: &mut Vec<MetricRow>,
) -> Result<()> {
    let id_reports = reports_of(src, test.points())?;
    let correct: Vec<bool> =
        (0..test.len()).map(|i| src.predict(test.x(i)).map(|p| p == test.y(i))).collect::<Result<_>>()?;
    let id_task = format!("{task_prefix}id");
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / test.len() as f64;
    push(rows, &id_task, "accuracy", Some(accuracy));
    push(rows, &id_task, "mean_mi", Some(mean(id_reports.iter().map(|r| r.mi))));
    push(rows, &id_task, "mean_aleatoric", Some(mean(id_reports.iter().map(|r| r.aleatoric))));
    push(rows, &id_task, "mean_ent", Some(mean(id_reports.iter().map(|r| r.ent))));
    let energy = id_reports.iter().map(|r| r.energy).collect::<Option<Vec<f64>>>();
    push(rows, &id_task, "mean_energy", energy.map(|e| mean(e.into_iter())));

    let sel_task = format!("{task_prefix}selective");
    for &metric in &spec.selective_metrics {
        let (a, p) = match selective_from(&id_reports, &correct, metric) {
            Ok(SelectiveOutcome { metrics: Some(m), .. }) => (Some(m.auroc), Some(m.aupr)),
            Ok(_) | Err(Error::NotApplicable(_)) => (None, None),
            Err(e) => return Err(e),
        };
        push(rows, &sel_task, format!("auroc_{}", metric.name()), a);
        push(rows, &sel_task, format!("aupr_{}", metric.name()), p);
    }

    for (source, ood) in spec.ood_sources.iter().zip(ood_sets) {
        let ood_reports = reports_of(src, ood)?;
        let task = format!("{task_prefix}ood/{}", source.name());
        for &metric in &spec.ood_metrics {
            let m = match (scores_of(&ood_reports, metric), scores_of(&id_reports, metric)) {
                (Ok(pos), Ok(neg)) => Some(RankMetrics::of(&ScoredBinary::new(pos, neg)?)),
                (Err(Error::NotApplicable(_)), _) | (_, Err(Error::NotApplicable(_))) => None,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            push(rows, &task, format!("auroc_{}", metric.name()), m.map(|m| m.auroc));
            push(rows, &task, format!("aupr_{}", metric.name()), m.map(|m| m.aupr));
        }
    }
    Ok(())
}

/// The seeded ID test set and one OOD set per configured source.
pub fn eval_data(spec: &ExperimentSpec, seed: u64) -> Result<(LabeledSet, Vec<Points>)> {
    let test = spec.mixture.sample(spec.n_test, derive(seed, tag::TEST_DATA))?;
    let ood_sets = spec
        .ood_sources
        .iter()
        .enumerate()
        .map(|(k, s)| s.sample(spec.n_ood, derive(derive(seed, tag::OOD_EVAL), k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((test, ood_sets))
}

/// Scores an already trained source on the evaluation data of `run_point`
/// for the same spec and seed.
pub fn evaluate(src: &dyn UqSource, spec: &ExperimentSpec, seed: u64) -> Result<Vec<MetricRow>> {
    let (test, ood_sets) = eval_data(spec, seed)?;
    let mut rows = Vec::new();
    evaluate_source(src, "", spec, &test, &ood_sets, &mut rows)?;
    Ok(rows)
}

/// Trains the configured method on fresh seeded data and evaluates it.
///
/// Rows cover ID accuracy and mean uncertainties (`id`), misclassification
/// detection (`selective`) and OOD detection (`ood/<source>`). A distilled
/// run also reports its teacher bank under the `bank/` prefix.
pub fn run_point(spec: &ExperimentSpec, seed: u64) -> Result<ExperimentResult> {
    spec.validate()?;
    let train_set = spec.mixture.sample(spec.n_train, derive(seed, tag::TRAIN_DATA))?;
    let (test, ood_sets) = eval_data(spec, seed)?;
    let arch = spec.architecture(&train_set);
    let model = MetaModel::new(arch, derive(seed, tag::INIT))?;
    let mut rows = Vec::new();
    match &spec.method {
        Method::Edl { loss, .. } => {
            let (model, _) = train(model, &train_set, loss, &spec.schedule, seed)?;
            evaluate_source(&model, "", spec, &test, &ood_sets, &mut rows)?;
        }
        Method::Distill { teachers, anneal } => {
            let bank = train_teachers(teachers, &train_set, seed)?;
            let (student, _) = distill(&bank, model, &train_set, anneal, &spec.schedule, seed)?;
            evaluate_source(&student, "", spec, &test, &ood_sets, &mut rows)?;
            evaluate_source(&bank, "bank/", spec, &test, &ood_sets, &mut rows)?;
        }
    }
    Ok(ExperimentResult {
        loss: spec.method.label(),
        lambda: spec.method.lambda(),
        n_train: spec.n_train,
        seed,
        rows,
        runtime_s: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepKind {
    Lambda,
    SampleSize,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Lambda => "lambda",
            SweepKind::SampleSize => "samplesize",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepKind::Lambda => vec![1e-4, 1e-3, 1e-2, 1e-1],
            SweepKind::SampleSize => vec![300.0, 3000.0, 30000.0],
        }
    }
}

impl core::str::FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda" => Ok(SweepKind::Lambda),
            "samplesize" | "sample-size" | "n" => Ok(SweepKind::SampleSize),
            _ => Err(Error::config(format!("unknown sweep kind `{s}` (valid: lambda, samplesize)"))),
        }
    }
}

/// The independent (spec, seed) jobs of a sweep, grid-major.
pub fn sweep_points(
    base: &ExperimentSpec,
    kind: SweepKind,
    grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<(ExperimentSpec, u64)>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::config("a sweep needs a non-empty grid and at least one seed"));
    }
    let mut jobs = Vec::with_capacity(grid.len() * seeds.len());
    for &g in grid {
        let mut spec = base.clone();
        match kind {
            SweepKind::Lambda => match &mut spec.method {
                Method::Edl { loss, .. } => loss.lambda = g,
                Method::Distill { .. } => return Err(Error::config("a distilled method has no lambda to sweep")),
            },
            SweepKind::SampleSize => {
                if !(g >= 1.0 && libm::trunc(g) == g) {
                    return Err(Error::config(format!("sample sizes must be positive integers, got {g}")));
                }
                spec.n_train = g as usize;
            }
        }
        spec.validate()?;
        jobs.extend(seeds.iter().map(|&s| (spec.clone(), s)));
    }
    Ok(jobs)
}

/// Runs every sweep job in order.
pub fn sweep(base: &ExperimentSpec, kind: SweepKind, grid: &[f64], seeds: &[u64]) -> Result<Vec<ExperimentResult>> {
    sweep_points(base, kind, grid, seeds)?.iter().map(|(spec, seed)| run_point(spec, *seed)).collect()
}
