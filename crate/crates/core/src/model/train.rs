//! Mini-batch training with Adam and early stopping on a held-out split.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::{Adam, MetaModel, Mode, Tape};
use crate::data::{LabeledSet, Points};
use crate::error::{Error, Result};
use crate::objectives::{accumulate_batch, ood_sample_loss, IdSample, LossKind, LossSpec, Target};
use crate::rng::{derive, from_seed, tag};

/// Optimization settings shared by every training entry point.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Fraction of the training set held out for early stopping.
    pub val_fraction: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { max_epochs: 50, batch_size: 64, patience: 10, learning_rate: 1e-3, val_fraction: 0.2 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Validation accuracy; absent for objectives without labels.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn epochs(&self) -> usize {
        self.records.len()
    }
}

/// Supplies per-sample targets; indices refer to the training set rows.
pub(crate) trait TargetProvider {
    fn begin_epoch(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }
    fn train_target(&self, index: usize) -> Target<'_>;
    fn val_target(&self, index: usize) -> Target<'_> {
        self.train_target(index)
    }
    /// Whether `epoch` may be selected as the best one and counts toward
    /// patience.
    fn selectable(&self, _epoch: usize) -> bool {
        true
    }
}

pub(crate) struct LabelTargets<'a> {
    pub(crate) labels: &'a [usize],
}

impl TargetProvider for LabelTargets<'_> {
    fn train_target(&self, index: usize) -> Target<'_> {
        Target::Class(self.labels[index])
    }
}

/// Trains `model` on `set` with a seeded train/validation split and returns
/// the parameters of the epoch with the lowest validation loss.
pub fn train(
    model: MetaModel,
    set: &LabeledSet,
    spec: &LossSpec,
    schedule: &Schedule,
    seed: u64,
) -> Result<(MetaModel, History)> {
    if spec.kind == LossKind::Distill {
        return Err(Error::config("the distillation loss is trained through `distill`"));
    }
    if set.classes() != model.classes() {
        return Err(Error::config(format!(
            "dataset has {} classes, model has {}",
            set.classes(),
            model.classes()
        )));
    }
    schedule.validate()?;
    let (train_idx, val_idx) = split_indices(set.len(), schedule.val_fraction, seed)?;
    let mut model = model;
    if schedule.max_epochs > 0 {
        let fit_rows = set.subset(&train_idx);
        model.init_density_from(fit_rows.points(), fit_rows.labels())?;
    }
    let targets = LabelTargets { labels: set.labels() };
    fit(model, set.points(), &train_idx, &val_idx, spec, schedule, targets, seed, None)
}

/// Seeded shuffle; the trailing `val_fraction` becomes the validation split.
pub(crate) fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut from_seed(derive(seed, tag::SPLIT)));
    let mut n_val = libm::round(val_fraction * n as f64) as usize;
    if val_fraction > 0.0 && n_val == 0 && n >= 2 {
        n_val = 1;
    }
    if n_val >= n {
        return Err(Error::InsufficientData(format!("{n} samples leave no training data")));
    }
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Core loop shared by label training, teachers and distillation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit<P: TargetProvider>(
    mut model: MetaModel,
    points: &Points,
    train_idx: &[usize],
    val_idx: &[usize],
    spec: &LossSpec,
    schedule: &Schedule,
    mut targets: P,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(&EpochRecord, &MetaModel)>,
) -> Result<(MetaModel, History)> {
    spec.validate(model.classes())?;
    schedule.validate()?;
    if points.dim() != model.architecture().input_dim {
        return Err(Error::LengthMismatch { expected: model.architecture().input_dim, found: points.dim() });
    }
    if train_idx.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    let mut history = History::default();
    if schedule.max_epochs == 0 {
        return Ok((model, history));
    }

    let (ood_train, ood_val) = match (&spec.ood, spec.gamma_ood > 0.0) {
        (Some(source), true) => {
            let n_val = val_idx.len().max(1);
            let pool = source.sample(train_idx.len() + n_val, derive(seed, tag::OOD_POOL))?;
            let rows: Vec<Vec<f64>> = pool.rows().map(|r| r.to_vec()).collect();
            let (a, b) = rows.split_at(train_idx.len());
            (a.to_vec(), b.to_vec())
        }
        _ => (Vec::new(), Vec::new()),
    };

    let mut shuffle_rng = from_seed(derive(seed, tag::SHUFFLE));
    let mut dropout_rng = from_seed(derive(seed, tag::DROPOUT));
    let use_dropout = model.architecture().dropout > 0.0;
    let mut opt = Adam::new(model.param_count(), schedule.learning_rate);
    let mut tape = Tape::new(model.architecture());
    let mut grads = alloc::vec![0.0; model.param_count()];
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut ood_order: Vec<usize> = (0..ood_train.len()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut waited = 0;

    for epoch in 1..=schedule.max_epochs {
        targets.begin_epoch(epoch)?;
        order.shuffle(&mut shuffle_rng);
        ood_order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let id: Vec<IdSample<'_>> =
                chunk.iter().map(|&i| IdSample { x: points.row(i), target: targets.train_target(i) }).collect();
            let ood: Vec<&[f64]> = if ood_order.is_empty() {
                Vec::new()
            } else {
                (0..chunk.len())
                    .map(|k| ood_train[ood_order[(b * schedule.batch_size + k) % ood_order.len()]].as_slice())
                    .collect()
            };
            grads.iter_mut().for_each(|g| *g = 0.0);
            let rng: Option<&mut dyn RngCore> = if use_dropout { Some(&mut dropout_rng) } else { None };
            let (id_loss, ood_loss, _) =
                accumulate_batch(spec, &model, &mut tape, &id, Some(&ood), rng, Some(&mut grads))?;
            let loss = id_loss + spec.gamma_ood * ood_loss;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { what: "training loss", epoch });
            }
            total += loss * chunk.len() as f64;
            opt.step(model.params_mut(), &grads);
        }
        let train_loss = total / order.len() as f64;

        let (val_loss, val_acc) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (loss, acc) = evaluate(&model, points, val_idx, &ood_val, spec, schedule.batch_size, &targets, &mut tape)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "validation loss", epoch });
            }
            (Some(loss), acc)
        };
        let record = EpochRecord { epoch, train_loss, val_loss, val_acc };
        if let Some(f) = observer.as_deref_mut() {
            f(&record, &model);
        }
        history.records.push(record);

        let score = val_loss.unwrap_or(train_loss);
        if !targets.selectable(epoch) {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.params().to_vec()));
            history.best_epoch = Some(epoch);
            waited = 0;
        } else {
            waited += 1;
            if val_loss.is_some() && waited >= schedule.patience {
                history.stopped_early = epoch < schedule.max_epochs;
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    Ok((model, history))
}

#[allow(clippy::too_many_arguments)]
fn evaluate<P: TargetProvider>(
    model: &MetaModel,
    points: &Points,
    val_idx: &[usize],
    ood_val: &[Vec<f64>],
    spec: &LossSpec,
    batch_size: usize,
    targets: &P,
    tape: &mut Tape,
) -> Result<(f64, Option<f64>)> {
    // ID part per batch; the OOD part once over the whole validation pool
    let id_spec = LossSpec { gamma_ood: 0.0, ..spec.clone() };
    let mut total = 0.0;
    let mut correct = 0;
    let mut labelled = false;
    for chunk in val_idx.chunks(batch_size) {
        let id: Vec<IdSample<'_>> = chunk
            .iter()
            .map(|&i| IdSample { x: points.row(i), target: targets.val_target(i) })
            .collect();
        labelled |= id.iter().any(|s| matches!(s.target, Target::Class(_)));
        let (l, _, c) = accumulate_batch(&id_spec, model, tape, &id, None, None, None)?;
        total += l * chunk.len() as f64;
        correct += c;
    }
    let mut loss = total / val_idx.len() as f64;
    if spec.gamma_ood > 0.0 && !ood_val.is_empty() {
        let mut scratch = alloc::vec![0.0; model.classes()];
        let mut ood = 0.0;
        for x in ood_val {
            model.run(x, tape, Mode::Eval);
            ood += ood_sample_loss(spec, &tape.alpha, &mut scratch);
        }
        loss += spec.gamma_ood * ood / ood_val.len() as f64;
    }
    let acc = labelled.then(|| correct as f64 / val_idx.len() as f64);
    Ok((loss, acc))
}
