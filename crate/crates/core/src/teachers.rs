//! Banks of classifiers sampled from a model-uncertainty source, and
//! distillation of their spread into a single Dirichlet-output student.
//!
//! Members are ordinary softmax classifiers: a direct-head [`MetaModel`]
//! trained with cross-entropy, whose logits are `ln α`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};

use crate::data::{bootstrap_indices, LabeledSet, Points};
use crate::dirichlet::ProbVector;
use crate::error::{Error, Result};
use crate::model::{
    fit, Architecture, DropoutMasks, EpochRecord, HeadSpec, History, LabelTargets, MetaModel, Mode, Schedule, Tape,
    TargetProvider,
};
use crate::objectives::{LossKind, LossSpec, Target, TeacherSummary};
use crate::rng::{derive, from_seed, tag};
use crate::uncertainty::{empirical_report, UqReport};

/// Uniform smoothing applied to every teacher probability vector.
pub const TEACHER_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TeacherKind {
    Ensemble,
    Bootstrap,
    Dropout,
}

impl TeacherKind {
    pub const ALL: [TeacherKind; 3] = [TeacherKind::Ensemble, TeacherKind::Bootstrap, TeacherKind::Dropout];

    pub fn name(self) -> &'static str {
        match self {
            TeacherKind::Ensemble => "ensemble",
            TeacherKind::Bootstrap => "bootstrap",
            TeacherKind::Dropout => "dropout",
        }
    }
}

impl core::str::FromStr for TeacherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s.to_ascii_lowercase()).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::config(format!("unknown teacher kind `{s}` (valid: {})", valid.join(", ")))
        })
    }
}

impl core::fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub kind: TeacherKind,
    /// Number of members, or of mask draws for a dropout bank.
    pub members: usize,
    /// Bootstrap subset ratio; the rest of the data validates the member.
    pub ratio: f64,
    pub dropout_rate: f64,
    pub hidden: Vec<usize>,
    pub schedule: Schedule,
}

impl TeacherConfig {
    pub fn new(kind: TeacherKind, members: usize) -> Self {
        TeacherConfig {
            kind,
            members,
            ratio: 0.8,
            dropout_rate: 0.2,
            hidden: vec![64, 64, 64],
            schedule: Schedule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::config(format!("a teacher bank needs at least 2 members, got {}", self.members)));
        }
        if self.kind == TeacherKind::Dropout && !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::config(format!("dropout rate must lie in (0, 1), got {}", self.dropout_rate)));
        }
        if self.kind == TeacherKind::Bootstrap && !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::config(format!("bootstrap ratio must lie in (0, 1), got {}", self.ratio)));
        }
        self.schedule.validate()
    }

    fn architecture(&self, set: &LabeledSet) -> Architecture {
        Architecture {
            input_dim: set.dim(),
            hidden: self.hidden.clone(),
            classes: set.classes(),
            head: HeadSpec::direct(),
            dropout: if self.kind == TeacherKind::Dropout { self.dropout_rate } else { 0.0 },
        }
    }

    /// Independent training jobs; a dropout bank has a single job.
    pub fn member_jobs(&self, set: &LabeledSet, seed: u64) -> Result<Vec<MemberJob>> {
        self.validate()?;
        let n = set.len();
        let member_seed = |j: usize| derive(derive(seed, tag::MEMBER), j as u64);
        match self.kind {
            TeacherKind::Ensemble | TeacherKind::Dropout => {
                let count = if self.kind == TeacherKind::Ensemble { self.members } else { 1 };
                (0..count)
                    .map(|j| {
                        let s = member_seed(j);
                        let (train, val) = crate::model::split_indices(n, self.schedule.val_fraction, s)?;
                        Ok(MemberJob { index: j, seed: s, train, val })
                    })
                    .collect()
            }
            TeacherKind::Bootstrap => {
                let subsets = bootstrap_indices(n, self.members, self.ratio, seed)?;
                Ok(subsets
                    .into_iter()
                    .enumerate()
                    .map(|(j, train)| {
                        let mut used = vec![false; n];
                        train.iter().for_each(|&i| used[i] = true);
                        let val = (0..n).filter(|&i| !used[i]).collect();
                        MemberJob { index: j, seed: member_seed(j), train, val }
                    })
                    .collect())
            }
        }
    }

    /// Trains the classifier of one job.
    pub fn train_member(&self, set: &LabeledSet, job: &MemberJob) -> Result<(MetaModel, History)> {
        if job.train.is_empty() {
            return Err(Error::InsufficientData(format!("member {} has no training data", job.index)));
        }
        let model = MetaModel::new(self.architecture(set), derive(job.seed, tag::INIT))?;
        let spec = LossSpec::new(LossKind::CrossEntropy, set.classes());
        let targets = LabelTargets { labels: set.labels() };
        fit(model, set.points(), &job.train, &job.val, &spec, &self.schedule, targets, job.seed, None)
    }

    /// Builds the bank from trained members, in job order.
    pub fn assemble(&self, members: Vec<MetaModel>, seed: u64) -> Result<TeacherBank> {
        let (seeds, masks) = match self.kind {
            TeacherKind::Dropout => {
                let model = members.first().ok_or_else(|| Error::config("dropout bank needs its model"))?;
                let mut rng = from_seed(derive(seed, tag::MASKS));
                let masks: Vec<DropoutMasks> = (0..self.members).map(|_| model.sample_masks(&mut rng)).collect();
                (vec![derive(derive(seed, tag::MEMBER), 0)], masks)
            }
            _ => ((0..members.len()).map(|j| derive(derive(seed, tag::MEMBER), j as u64)).collect(), Vec::new()),
        };
        TeacherBank::from_parts(self.kind, members, masks, seeds)
    }
}

/// One member's seed and data split; indices refer to the base set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberJob {
    pub index: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Linear temperature decay `T(e) = max(1, T₀ − (T₀ − 1)·e / decay_epochs)`
/// where `e` counts completed epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub decay_epochs: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { t0: 5.0, decay_epochs: 30 }
    }
}

impl AnnealSchedule {
    pub fn none() -> Self {
        AnnealSchedule { t0: 1.0, decay_epochs: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 >= 1.0 && self.t0.is_finite()) {
            return Err(Error::config(format!("initial temperature must be >= 1, got {}", self.t0)));
        }
        if self.decay_epochs == 0 {
            return Err(Error::config("decay_epochs must be positive"));
        }
        Ok(())
    }

    pub fn temperature(&self, completed_epochs: usize) -> f64 {
        let t = self.t0 - (self.t0 - 1.0) * completed_epochs as f64 / self.decay_epochs as f64;
        t.max(1.0)
    }
}

/// Trained members of a model-uncertainty source.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherBank {
    kind: TeacherKind,
    models: Vec<MetaModel>,
    /// Dropout banks: one mask set per member.
    masks: Vec<DropoutMasks>,
    seeds: Vec<u64>,
}

impl TeacherBank {
    pub fn from_parts(
        kind: TeacherKind,
        models: Vec<MetaModel>,
        masks: Vec<DropoutMasks>,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::config("teacher bank has no models"))?;
        let arch = first.architecture();
        if models.iter().any(|m| m.architecture() != arch) {
            return Err(Error::config("teacher members have different architectures"));
        }
        if !matches!(arch.head, HeadSpec::Direct { .. }) {
            return Err(Error::config("teacher members must use the direct head"));
        }
        match kind {
            TeacherKind::Dropout => {
                if models.len() != 1 || masks.len() < 2 {
                    return Err(Error::config("dropout bank needs one model and at least 2 mask sets"));
                }
                if !(arch.dropout > 0.0) {
                    return Err(Error::config("dropout bank model has no dropout"));
                }
            }
            _ => {
                if models.len() < 2 || !masks.is_empty() {
                    return Err(Error::config(format!("{kind} bank needs at least 2 models and no masks")));
                }
            }
        }
        if seeds.len() != models.len() {
            return Err(Error::LengthMismatch { expected: models.len(), found: seeds.len() });
        }
        Ok(TeacherBank { kind, models, masks, seeds })
    }

    pub fn kind(&self) -> TeacherKind {
        self.kind
    }

    /// Number of predictive members M.
    pub fn len(&self) -> usize {
        match self.kind {
            TeacherKind::Dropout => self.masks.len(),
            _ => self.models.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn models(&self) -> &[MetaModel] {
        &self.models
    }

    pub fn masks(&self) -> &[DropoutMasks] {
        &self.masks
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn classes(&self) -> usize {
        self.models[0].classes()
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].architecture().input_dim
    }

    /// Member logits at x, written as M consecutive blocks of C values.
    fn logits_into(&self, x: &[f64], tape: &mut Tape, out: &mut Vec<f64>) -> Result<()> {
        self.models[0].check_input(x)?;
        out.clear();
        match self.kind {
            TeacherKind::Dropout => {
                for m in &self.masks {
                    self.models[0].run(x, tape, Mode::Fixed(m));
                    out.extend(tape.alpha.iter().map(|&a| log(a)));
                }
            }
            _ => {
                for model in &self.models {
                    model.run(x, tape, Mode::Eval);
                    out.extend(tape.alpha.iter().map(|&a| log(a)));
                }
            }
        }
        Ok(())
    }

    /// Member logits at x, one vector per member.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(self.models[0].architecture());
        let mut flat = Vec::new();
        self.logits_into(x, &mut tape, &mut flat)?;
        Ok(flat.chunks(self.classes()).map(|c| c.to_vec()).collect())
    }
}

/// Tempered softmax of one logit vector, smoothed toward uniform by ε.
fn tempered_softmax(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = exp((l - max) / temperature);
        z += *o;
    }
    let c = logits.len() as f64;
    for o in out.iter_mut() {
        *o = (1.0 - TEACHER_EPS) * *o / z + TEACHER_EPS / c;
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t >= 1.0 && !t.is_nan() {
        Ok(())
    } else {
        Err(Error::config(format!("teacher temperature must be >= 1, got {t}")))
    }
}

/// Member predictions at x: softmax(logits / T), smoothed by [`TEACHER_EPS`].
pub fn teacher_probs(bank: &TeacherBank, x: &[f64], temperature: f64) -> Result<Vec<ProbVector>> {
    check_temperature(temperature)?;
    let c = bank.classes();
    let mut tape = Tape::new(bank.models[0].architecture());
    let mut flat = Vec::new();
    bank.logits_into(x, &mut tape, &mut flat)?;
    Ok(flat
        .chunks(c)
        .map(|l| {
            let mut p = vec![0.0; c];
            tempered_softmax(l, temperature, &mut p);
            ProbVector::from_normalized(p)
        })
        .collect())
}

/// Monte-Carlo uncertainty of the bank itself; `dent` and `energy` are absent.
pub fn bank_meta_report(bank: &TeacherBank, x: &[f64]) -> Result<UqReport> {
    empirical_report(&teacher_probs(bank, x, 1.0)?)
}

/// Precomputed member logits and the per-row Dirichlet-NLL targets.
struct DistillTargets {
    classes: usize,
    members: usize,
    /// Row-major: n × M × C.
    logits: Vec<f64>,
    anneal: AnnealSchedule,
    current: Vec<TeacherSummary>,
    validation: Vec<TeacherSummary>,
}

impl DistillTargets {
    fn new(bank: &TeacherBank, points: &Points, anneal: AnnealSchedule) -> Result<Self> {
        let (c, m) = (bank.classes(), bank.len());
        let mut logits = Vec::with_capacity(points.len() * m * c);
        let mut tape = Tape::new(bank.models[0].architecture());
        let mut buf = Vec::with_capacity(m * c);
        for x in points.rows() {
            bank.logits_into(x, &mut tape, &mut buf)?;
            logits.extend_from_slice(&buf);
        }
        let mut t = DistillTargets { classes: c, members: m, logits, anneal, current: Vec::new(), validation: Vec::new() };
        t.validation = t.summaries(1.0);
        Ok(t)
    }

    fn summaries(&self, temperature: f64) -> Vec<TeacherSummary> {
        let (c, m) = (self.classes, self.members);
        let mut p = vec![0.0; c];
        self.logits
            .chunks(m * c)
            .map(|row| {
                let mut mean_log = vec![0.0; c];
                for l in row.chunks(c) {
                    tempered_softmax(l, temperature, &mut p);
                    for (s, v) in mean_log.iter_mut().zip(&p) {
                        *s += log(*v);
                    }
                }
                mean_log.iter_mut().for_each(|s| *s /= m as f64);
                TeacherSummary::from_mean_log(mean_log, m)
            })
            .collect()
    }
}

impl TargetProvider for DistillTargets {
    fn begin_epoch(&mut self, epoch: usize) -> Result<()> {
        let t = self.anneal.temperature(epoch - 1);
        if epoch == 1 || t != self.anneal.temperature(epoch - 2) {
            self.current = if t == 1.0 { self.validation.clone() } else { self.summaries(t) };
        }
        Ok(())
    }

    fn train_target(&self, index: usize) -> Target<'_> {
        Target::Teachers(&self.current[index])
    }

    // validation always at T = 1 so losses are comparable across epochs
    fn val_target(&self, index: usize) -> Target<'_> {
        Target::Teachers(&self.validation[index])
    }

    // selection starts once the targets themselves are at T = 1
    fn selectable(&self, epoch: usize) -> bool {
        self.anneal.temperature(epoch - 1) == 1.0
    }
}

/// Fits a direct-head student to the bank by Dirichlet maximum likelihood on
/// annealed teacher predictions; returns the best-validation student.
pub fn distill(
    bank: &TeacherBank,
    student: MetaModel,
    set: &LabeledSet,
    anneal: &AnnealSchedule,
    schedule: &Schedule,
    seed: u64,
) -> Result<(MetaModel, History)> {
    distill_observed(bank, student, set, anneal, schedule, seed, None)
}

/// [`distill`] with a callback after every epoch, before early stopping
/// restores the best parameters.
pub fn distill_observed(
    bank: &TeacherBank,
    student: MetaModel,
    set: &LabeledSet,
    anneal: &AnnealSchedule,
    schedule: &Schedule,
    seed: u64,
    observer: Option<&mut dyn FnMut(&EpochRecord, &MetaModel)>,
) -> Result<(MetaModel, History)> {
    anneal.validate()?;
    schedule.validate()?;
    if !matches!(student.architecture().head, HeadSpec::Direct { .. }) {
        return Err(Error::config("the distilled student must use the direct head"));
    }
    if student.classes() != bank.classes() || student.architecture().input_dim != bank.input_dim() {
        return Err(Error::config(String::from("student and teacher shapes differ")));
    }
    if set.dim() != bank.input_dim() {
        return Err(Error::LengthMismatch { expected: bank.input_dim(), found: set.dim() });
    }
    let student_seed = derive(seed, tag::STUDENT);
    let (train_idx, val_idx) = crate::model::split_indices(set.len(), schedule.val_fraction, student_seed)?;
    let targets = DistillTargets::new(bank, set.points(), *anneal)?;
    let spec = LossSpec::new(LossKind::Distill, bank.classes());
    fit(student, set.points(), &train_idx, &val_idx, &spec, schedule, targets, student_seed, observer)
}

/// Trains every member sequentially and assembles the bank.
pub fn train_teachers(config: &TeacherConfig, set: &LabeledSet, seed: u64) -> Result<TeacherBank> {
    let jobs = config.member_jobs(set, seed)?;
    let members = jobs
        .iter()
        .map(|job| config.train_member(set, job).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    config.assemble(members, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_mixture;

    fn tiny(kind: TeacherKind, m: usize) -> TeacherConfig {
        TeacherConfig {
            hidden: vec![16, 16],
            schedule: Schedule { max_epochs: 12, learning_rate: 1e-2, ..Schedule::default() },
            ..TeacherConfig::new(kind, m)
        }
    }

    #[test]
    fn anneal_schedule() {
        let a = AnnealSchedule::default();
        assert_eq!(a.temperature(0), 5.0);
        assert!((a.temperature(15) - 3.0).abs() < 1e-12);
        assert_eq!(a.temperature(30), 1.0);
        assert_eq!(a.temperature(100), 1.0);
        assert!(AnnealSchedule::none().temperature(0) == 1.0);
        assert!(AnnealSchedule { t0: 0.5, decay_epochs: 3 }.validate().is_err());
    }

    #[test]
    fn tempered_softmax_limits() {
        let mut p = [0.0; 3];
        tempered_softmax(&[3.0, -1.0, 0.5], 1e12, &mut p);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-9));
        tempered_softmax(&[200.0, -200.0, 0.0], 1.0, &mut p);
        assert!(p.iter().all(|&v| v >= TEACHER_EPS / 3.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bank_config_validation() {
        assert!(TeacherConfig::new(TeacherKind::Ensemble, 1).validate().is_err());
        let mut d = TeacherConfig::new(TeacherKind::Dropout, 10);
        d.dropout_rate = 1.0;
        assert!(d.validate().is_err());
        assert_eq!("Bootstrap".parse::<TeacherKind>().unwrap(), TeacherKind::Bootstrap);
        assert!("bagging".parse::<TeacherKind>().is_err());
    }

    #[test]
    fn bootstrap_jobs_are_distinct_and_held_out() {
        let set = make_gaussian_mixture(200, 0.0, 1).unwrap();
        let jobs = tiny(TeacherKind::Bootstrap, 5).member_jobs(&set, 9).unwrap();
        assert_eq!(jobs.len(), 5);
        for (i, a) in jobs.iter().enumerate() {
            assert_eq!((a.train.len(), a.val.len()), (160, 40));
            assert!(a.val.iter().all(|v| !a.train.contains(v)));
            for b in &jobs[i + 1..] {
                let mut x = a.train.clone();
                let mut y = b.train.clone();
                x.sort_unstable();
                y.sort_unstable();
                assert_ne!(x, y);
            }
        }
    }

    #[test]
    fn identical_members_have_no_mutual_information() {
        let set = make_gaussian_mixture(60, 0.0, 1).unwrap();
        let cfg = tiny(TeacherKind::Ensemble, 2);
        let model = MetaModel::new(cfg.architecture(&set), 3).unwrap();
        let bank = TeacherBank::from_parts(TeacherKind::Ensemble, vec![model.clone(), model], Vec::new(), vec![1, 2])
            .unwrap();
        let probs = teacher_probs(&bank, &[0.2, 0.1], 1.0).unwrap();
        assert_eq!(probs[0], probs[1]);
        assert!(bank_meta_report(&bank, &[0.2, 0.1]).unwrap().mi.abs() < 1e-15);
        assert!(teacher_probs(&bank, &[0.2, 0.1], 0.5).is_err());
    }

    #[test]
    fn ensemble_bank_is_deterministic_and_accurate() {
        let set = make_gaussian_mixture(300, 0.0, 2).unwrap();
        let test = make_gaussian_mixture(300, 0.0, 3).unwrap();
        let cfg = tiny(TeacherKind::Ensemble, 3);
        let bank = train_teachers(&cfg, &set, 5).unwrap();
        assert_eq!(bank, train_teachers(&cfg, &set, 5).unwrap());
        for j in 0..bank.len() {
            let correct = (0..test.len())
                .filter(|&i| {
                    let l = &bank.logits(test.x(i)).unwrap()[j];
                    crate::dirichlet::argmax(l) == test.y(i)
                })
                .count();
            assert!(correct as f64 / test.len() as f64 >= 0.9);
        }
        // deep inside the middle class every member agrees
        let probs = teacher_probs(&bank, &[0.0, 0.0], 1.0).unwrap();
        assert!(probs.iter().all(|p| p.argmax() == 1));
    }

    #[test]
    fn dropout_bank_uses_masks() {
        let set = make_gaussian_mixture(150, 0.0, 2).unwrap();
        let bank = train_teachers(&tiny(TeacherKind::Dropout, 6), &set, 5).unwrap();
        assert_eq!((bank.len(), bank.models().len()), (6, 1));
        let probs = teacher_probs(&bank, &[5.0, -4.0], 1.0).unwrap();
        assert!(probs.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn distill_rejects_density_student() {
        let set = make_gaussian_mixture(60, 0.0, 1).unwrap();
        let cfg = tiny(TeacherKind::Ensemble, 2);
        let m = MetaModel::new(cfg.architecture(&set), 3).unwrap();
        let bank = TeacherBank::from_parts(TeacherKind::Ensemble, vec![m.clone(), m], Vec::new(), vec![1, 2]).unwrap();
        let arch = Architecture::mlp(2, 3, HeadSpec::density_for(&set, 4, vec![1.0; 3]));
        let student = MetaModel::new(arch, 1).unwrap();
        assert!(distill(&bank, student, &set, &AnnealSchedule::default(), &Schedule::default(), 0).is_err());
    }

    #[test]
    fn distilled_student_fits_agreeing_teachers() {
        let set = make_gaussian_mixture(300, 0.0, 2).unwrap();
        let cfg = tiny(TeacherKind::Ensemble, 2);
        let teacher = cfg.train_member(&set, &cfg.member_jobs(&set, 1).unwrap()[0]).unwrap().0;
        let bank = TeacherBank::from_parts(TeacherKind::Ensemble, vec![teacher.clone(), teacher], Vec::new(), vec![1, 2])
            .unwrap();
        let student = MetaModel::new(cfg.architecture(&set), 8).unwrap();
        let probe = make_gaussian_mixture(50, 0.0, 4).unwrap();
        let mean_total = |m: &MetaModel| -> f64 {
            probe.points().rows().map(|x| m.forward(x).unwrap().total()).sum::<f64>() / probe.len() as f64
        };
        let mut totals = Vec::new();
        let mut observe = |_: &EpochRecord, m: &MetaModel| totals.push(mean_total(m));
        let sched = Schedule { max_epochs: 10, learning_rate: 1e-2, ..Schedule::default() };
        distill_observed(&bank, student, &set, &AnnealSchedule::none(), &sched, 3, Some(&mut observe)).unwrap();
        assert!(totals.last().unwrap() > &(5.0 * totals[0]), "{totals:?}");
    }
}
