//! Evidential objectives in closed form, with gradients with respect to α.
//!
//! Every per-sample loss is a sum of a few Dirichlet functionals; each
//! functional below returns its value and adds its weighted gradient into a
//! caller buffer, so a loss and its derivative are assembled from the same
//! pieces. Class indices are zero-based.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::log;
use rand::RngCore;

use crate::data::OodSource;
use crate::dirichlet::{argmax, ProbVector};
use crate::error::{Error, Result};
use crate::model::{MetaModel, Mode, Tape};
use crate::specialfn::{digamma_unchecked as psi, log_beta_unchecked, trigamma_unchecked as psi1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossKind {
    /// Forward KL to the tempered posterior, plus an auxiliary cross-entropy.
    Fkl,
    /// Reverse KL to the tempered posterior.
    Rkl,
    /// Expected squared error plus λ · reverse-KL regularizer.
    Mse,
    /// Expected negative log-likelihood plus λ · KL to the prior.
    Vi,
    /// Expected negative log-likelihood minus λ · differential entropy.
    Uce,
    /// Squared error between log α and log(α₀ + e_y/λ).
    LogMse,
    /// Dirichlet negative log-likelihood of teacher probability vectors.
    Distill,
    /// Plain cross-entropy of the mean, used to train teacher classifiers.
    CrossEntropy,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Fkl,
        LossKind::Rkl,
        LossKind::Mse,
        LossKind::Vi,
        LossKind::Uce,
        LossKind::LogMse,
        LossKind::Distill,
        LossKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Fkl => "fkl",
            LossKind::Rkl => "rkl",
            LossKind::Mse => "mse",
            LossKind::Vi => "vi",
            LossKind::Uce => "uce",
            LossKind::LogMse => "logmse",
            LossKind::Distill => "distill",
            LossKind::CrossEntropy => "ce",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }

    /// Whether the loss is defined through class labels.
    pub fn uses_labels(self) -> bool {
        self != LossKind::Distill
    }
}

impl core::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == lower.replace(['-', '_'], ""))
            .ok_or_else(|| {
                Error::config(format!("unknown loss kind `{s}` (valid: {})", Self::valid_names()))
            })
    }
}

impl core::fmt::Display for LossKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which objective to train and its hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub alpha0: Vec<f64>,
    /// Regularization weight λ; the tempering parameter is ν = 1/λ.
    pub lambda: f64,
    pub gamma_ood: f64,
    pub ood: Option<OodSource>,
    pub fkl_aux_weight: f64,
}

impl LossSpec {
    /// Defaults: α₀ = 𝟙_C, λ = 1e-4, no OOD term, auxiliary weight 1.
    pub fn new(kind: LossKind, classes: usize) -> Self {
        LossSpec {
            kind,
            alpha0: vec![1.0; classes],
            lambda: 1e-4,
            gamma_ood: 0.0,
            ood: None,
            fkl_aux_weight: 1.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_ood(mut self, gamma: f64, source: OodSource) -> Self {
        self.gamma_ood = gamma;
        self.ood = Some(source);
        self
    }

    pub fn nu(&self) -> f64 {
        1.0 / self.lambda
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.alpha0.len() != classes {
            return Err(Error::config(format!(
                "alpha0 has {} components for {classes} classes",
                self.alpha0.len()
            )));
        }
        if self.alpha0.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::config("alpha0 must be positive and finite"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gamma_ood >= 0.0 && self.gamma_ood.is_finite()) {
            return Err(Error::config("gamma_ood must be non-negative"));
        }
        if self.gamma_ood > 0.0 && self.ood.is_none() {
            return Err(Error::config("gamma_ood > 0 requires an OOD source"));
        }
        if !(self.fkl_aux_weight >= 0.0) {
            return Err(Error::config("fkl_aux_weight must be non-negative"));
        }
        Ok(())
    }
}

/// Sufficient statistic of a set of teacher probability vectors for the
/// Dirichlet likelihood: the component-wise mean of ln π.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSummary {
    mean_log: Vec<f64>,
    members: usize,
}

impl TeacherSummary {
    pub fn from_probs(teachers: &[ProbVector]) -> Result<Self> {
        let first = teachers.first().ok_or_else(|| Error::InsufficientData("no teachers".into()))?;
        let c = first.len();
        let mut mean_log = vec![0.0; c];
        for t in teachers {
            if t.len() != c {
                return Err(Error::LengthMismatch { expected: c, found: t.len() });
            }
            for (m, &p) in mean_log.iter_mut().zip(t.as_slice()) {
                if !(p > 0.0) {
                    return Err(Error::InvalidProbVector("teacher vector is not interior".into()));
                }
                *m += log(p);
            }
        }
        let m = teachers.len() as f64;
        mean_log.iter_mut().for_each(|v| *v /= m);
        Ok(TeacherSummary { mean_log, members: teachers.len() })
    }

    pub(crate) fn from_mean_log(mean_log: Vec<f64>, members: usize) -> Self {
        TeacherSummary { mean_log, members }
    }

    pub fn mean_log(&self) -> &[f64] {
        &self.mean_log
    }

    pub fn members(&self) -> usize {
        self.members
    }
}

/// What a per-sample loss is fitted to.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Class(usize),
    Teachers(&'a TeacherSummary),
}

// --- Dirichlet functionals with gradients -----------------------------------

/// w · KL(Dir(α) ‖ Dir(β)).
fn add_kl_reverse(alpha: &[f64], beta: &[f64], w: f64, grad: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let (psi_s, psi1_s) = (psi(s), psi1(s));
    let mut value = log_beta_unchecked(beta) - log_beta_unchecked(alpha);
    let mut diff_sum = 0.0;
    for (&a, &b) in alpha.iter().zip(beta) {
        value += (a - b) * (psi(a) - psi_s);
        diff_sum += a - b;
    }
    for ((g, &a), &b) in grad.iter_mut().zip(alpha).zip(beta) {
        *g += w * ((a - b) * psi1(a) - psi1_s * diff_sum);
    }
    w * value
}

/// w · KL(Dir(β) ‖ Dir(α)), differentiated in α.
fn add_kl_forward(beta: &[f64], alpha: &[f64], w: f64, grad: &mut [f64]) -> f64 {
    let sb: f64 = beta.iter().sum();
    let s: f64 = alpha.iter().sum();
    let (psi_sb, psi_s) = (psi(sb), psi(s));
    let mut value = log_beta_unchecked(alpha) - log_beta_unchecked(beta);
    for ((g, &a), &b) in grad.iter_mut().zip(alpha).zip(beta) {
        let psi_b = psi(b) - psi_sb;
        value += (b - a) * psi_b;
        *g += w * (psi(a) - psi_s - psi_b);
    }
    w * value
}

/// w · E_{Dir(α)}[ln 1/π_y] = w · (ψ(S) − ψ(α_y)).
fn add_expected_nll(alpha: &[f64], y: usize, w: f64, grad: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let psi1_s = psi1(s);
    for g in grad.iter_mut() {
        *g += w * psi1_s;
    }
    grad[y] -= w * psi1(alpha[y]);
    w * (psi(s) - psi(alpha[y]))
}

/// w · h(Dir(α)).
fn add_diff_entropy(alpha: &[f64], w: f64, grad: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let c = alpha.len() as f64;
    let psi1_s = psi1(s);
    let mut value = log_beta_unchecked(alpha) + (s - c) * psi(s);
    for (g, &a) in grad.iter_mut().zip(alpha) {
        value -= (a - 1.0) * psi(a);
        *g += w * ((s - c) * psi1_s - (a - 1.0) * psi1(a));
    }
    w * value
}

/// w · E_{Dir(α)}‖π − e_y‖² = w · (Σα_k(α_k+1)/(S(S+1)) − 2α_y/S + 1).
fn add_expected_sq_err(alpha: &[f64], y: usize, w: f64, grad: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let q: f64 = alpha.iter().map(|a| a * (a + 1.0)).sum();
    let denom = s * (s + 1.0);
    let d_denom = 2.0 * s + 1.0;
    for (k, (g, &a)) in grad.iter_mut().zip(alpha).enumerate() {
        let mut d = (2.0 * a + 1.0) / denom - q * d_denom / (denom * denom);
        d += 2.0 * alpha[y] / (s * s);
        if k == y {
            d -= 2.0 / s;
        }
        *g += w * d;
    }
    w * (q / denom - 2.0 * alpha[y] / s + 1.0)
}

/// w · ‖ln α − ln t‖².
fn add_log_sq(alpha: &[f64], target: &[f64], w: f64, grad: &mut [f64]) -> f64 {
    let mut value = 0.0;
    for ((g, &a), &t) in grad.iter_mut().zip(alpha).zip(target) {
        let r = log(a) - log(t);
        value += r * r;
        *g += w * 2.0 * r / a;
    }
    w * value
}

/// w · (−ln(α_y / S)).
fn add_neg_log_mean(alpha: &[f64], y: usize, w: f64, grad: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    for g in grad.iter_mut() {
        *g += w / s;
    }
    grad[y] -= w / alpha[y];
    w * (log(s) - log(alpha[y]))
}

/// w · (−mean_j ln Dir(π_j; α)) = w · (ln B(α) − Σ(α_k − 1)·mean_j ln π_jk).
fn add_dirichlet_nll(alpha: &[f64], mean_log: &[f64], w: f64, grad: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let psi_s = psi(s);
    let mut value = log_beta_unchecked(alpha);
    for ((g, &a), &m) in grad.iter_mut().zip(alpha).zip(mean_log) {
        value -= (a - 1.0) * m;
        *g += w * (psi(a) - psi_s - m);
    }
    w * value
}

fn tempered(alpha0: &[f64], nu: f64, y: usize) -> Vec<f64> {
    let mut t = alpha0.to_vec();
    t[y] += nu;
    t
}

fn check_class(alpha: &[f64], y: usize) {
    assert!(y < alpha.len(), "class {y} out of range for {} classes", alpha.len());
}

// --- public per-sample losses ------------------------------------------------

/// VI loss: E[ln 1/π_y] + λ · KL(Dir(α) ‖ Dir(α₀)); writes ∂/∂α into `grad`.
pub fn loss_vi_grad(alpha: &[f64], y: usize, alpha0: &[f64], lambda: f64, grad: &mut [f64]) -> f64 {
    check_class(alpha, y);
    grad.iter_mut().for_each(|g| *g = 0.0);
    add_expected_nll(alpha, y, 1.0, grad) + add_kl_reverse(alpha, alpha0, lambda, grad)
}

/// UCE loss: E[ln 1/π_y] − λ · h(Dir(α)).
pub fn loss_uce_grad(alpha: &[f64], y: usize, lambda: f64, grad: &mut [f64]) -> f64 {
    check_class(alpha, y);
    grad.iter_mut().for_each(|g| *g = 0.0);
    add_expected_nll(alpha, y, 1.0, grad) + add_diff_entropy(alpha, -lambda, grad)
}

/// MSE loss: E‖π − e_y‖² + λ · KL(Dir(α) ‖ Dir(α₀)).
pub fn loss_mse_grad(alpha: &[f64], y: usize, alpha0: &[f64], lambda: f64, grad: &mut [f64]) -> f64 {
    check_class(alpha, y);
    grad.iter_mut().for_each(|g| *g = 0.0);
    add_expected_sq_err(alpha, y, 1.0, grad) + add_kl_reverse(alpha, alpha0, lambda, grad)
}

/// Forward-KL PriorNet loss: KL(Dir(α₀+νe_y) ‖ Dir(α)) + aux · (−ln mean_y).
pub fn loss_fkl_grad(alpha: &[f64], y: usize, alpha0: &[f64], nu: f64, aux_weight: f64, grad: &mut [f64]) -> f64 {
    check_class(alpha, y);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let target = tempered(alpha0, nu, y);
    add_kl_forward(&target, alpha, 1.0, grad) + add_neg_log_mean(alpha, y, aux_weight, grad)
}

/// Reverse-KL PriorNet loss: KL(Dir(α) ‖ Dir(α₀+νe_y)).
pub fn loss_rkl_grad(alpha: &[f64], y: usize, alpha0: &[f64], nu: f64, grad: &mut [f64]) -> f64 {
    check_class(alpha, y);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let target = tempered(alpha0, nu, y);
    add_kl_reverse(alpha, &target, 1.0, grad)
}

/// ‖ln α − ln(α₀ + e_y/λ)‖².
pub fn loss_logmse_grad(alpha: &[f64], y: usize, alpha0: &[f64], lambda: f64, grad: &mut [f64]) -> f64 {
    check_class(alpha, y);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let target = tempered(alpha0, 1.0 / lambda, y);
    add_log_sq(alpha, &target, 1.0, grad)
}

/// −(1/M) Σ_j ln Dir(π_j; α) from the teachers' summary.
pub fn loss_distill_grad(alpha: &[f64], teachers: &TeacherSummary, grad: &mut [f64]) -> f64 {
    assert_eq!(alpha.len(), teachers.mean_log.len(), "teacher summary has the wrong length");
    grad.iter_mut().for_each(|g| *g = 0.0);
    add_dirichlet_nll(alpha, &teachers.mean_log, 1.0, grad)
}

/// −ln(α_y / Σα).
pub fn loss_ce_grad(alpha: &[f64], y: usize, grad: &mut [f64]) -> f64 {
    check_class(alpha, y);
    grad.iter_mut().for_each(|g| *g = 0.0);
    add_neg_log_mean(alpha, y, 1.0, grad)
}

macro_rules! value_only {
    ($(#[$m:meta])* $name:ident => $grad:ident($($arg:ident: $ty:ty),*)) => {
        $(#[$m])*
        pub fn $name(alpha: &[f64], $($arg: $ty),*) -> f64 {
            let mut scratch = vec![0.0; alpha.len()];
            $grad(alpha, $($arg,)* &mut scratch)
        }
    };
}

value_only!(
    /// See [`loss_vi_grad`].
    loss_vi => loss_vi_grad(y: usize, alpha0: &[f64], lambda: f64)
);
value_only!(
    /// See [`loss_uce_grad`].
    loss_uce => loss_uce_grad(y: usize, lambda: f64)
);
value_only!(
    /// See [`loss_mse_grad`].
    loss_mse => loss_mse_grad(y: usize, alpha0: &[f64], lambda: f64)
);
value_only!(
    /// See [`loss_fkl_grad`].
    loss_fkl => loss_fkl_grad(y: usize, alpha0: &[f64], nu: f64, aux_weight: f64)
);
value_only!(
    /// See [`loss_rkl_grad`].
    loss_rkl => loss_rkl_grad(y: usize, alpha0: &[f64], nu: f64)
);
value_only!(
    /// See [`loss_logmse_grad`].
    loss_logmse => loss_logmse_grad(y: usize, alpha0: &[f64], lambda: f64)
);
value_only!(
    /// See [`loss_ce_grad`].
    loss_ce => loss_ce_grad(y: usize)
);

/// Dirichlet NLL of raw teacher vectors; they must be strictly interior.
pub fn loss_distill(alpha: &[f64], teachers: &[ProbVector]) -> Result<f64> {
    let summary = TeacherSummary::from_probs(teachers)?;
    if summary.mean_log.len() != alpha.len() {
        return Err(Error::LengthMismatch { expected: alpha.len(), found: summary.mean_log.len() });
    }
    let mut scratch = vec![0.0; alpha.len()];
    Ok(loss_distill_grad(alpha, &summary, &mut scratch))
}

/// Per-sample loss of `spec` at α; overwrites `grad` with ∂loss/∂α.
pub fn sample_loss(spec: &LossSpec, alpha: &[f64], target: Target<'_>, grad: &mut [f64]) -> Result<f64> {
    let c = alpha.len();
    if grad.len() != c {
        return Err(Error::LengthMismatch { expected: c, found: grad.len() });
    }
    let y = match (spec.kind, target) {
        (LossKind::Distill, Target::Teachers(t)) => {
            if t.mean_log.len() != c {
                return Err(Error::LengthMismatch { expected: c, found: t.mean_log.len() });
            }
            return Ok(loss_distill_grad(alpha, t, grad));
        }
        (LossKind::Distill, Target::Class(_)) => {
            return Err(Error::config("the distillation loss needs teacher targets"));
        }
        (_, Target::Class(y)) => y,
        (_, Target::Teachers(_)) => {
            return Err(Error::config(format!("loss `{}` needs class labels", spec.kind)));
        }
    };
    if y >= c {
        return Err(Error::ClassOutOfRange { class: y, classes: c });
    }
    if spec.alpha0.len() != c {
        return Err(Error::LengthMismatch { expected: c, found: spec.alpha0.len() });
    }
    let a0 = &spec.alpha0;
    Ok(match spec.kind {
        LossKind::Fkl => loss_fkl_grad(alpha, y, a0, spec.nu(), spec.fkl_aux_weight, grad),
        LossKind::Rkl => loss_rkl_grad(alpha, y, a0, spec.nu(), grad),
        LossKind::Mse => loss_mse_grad(alpha, y, a0, spec.lambda, grad),
        LossKind::Vi => loss_vi_grad(alpha, y, a0, spec.lambda, grad),
        LossKind::Uce => loss_uce_grad(alpha, y, spec.lambda, grad),
        LossKind::LogMse => loss_logmse_grad(alpha, y, a0, spec.lambda, grad),
        LossKind::CrossEntropy => loss_ce_grad(alpha, y, grad),
        LossKind::Distill => unreachable!("handled above"),
    })
}

/// Divergence of the model output to the prior on an OOD input: forward KL
/// for the forward-KL objective, reverse KL otherwise. Overwrites `grad`.
pub fn ood_sample_loss(spec: &LossSpec, alpha: &[f64], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    match spec.kind {
        LossKind::Fkl => add_kl_forward(&spec.alpha0, alpha, 1.0, grad),
        _ => add_kl_reverse(alpha, &spec.alpha0, 1.0, grad),
    }
}

/// One labelled (or teacher-targeted) input.
#[derive(Debug, Clone, Copy)]
pub struct IdSample<'a> {
    pub x: &'a [f64],
    pub target: Target<'a>,
}

/// Mean loss of a batch and its gradient over the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub id_loss: f64,
    pub ood_loss: f64,
    pub grad: Vec<f64>,
    /// ID samples whose predicted class matched their label.
    pub correct: usize,
}

/// Unified objective on a batch: mean ID loss + γ_ood · mean OOD divergence.
pub fn batch_loss(
    spec: &LossSpec,
    model: &MetaModel,
    batch_id: &[IdSample<'_>],
    batch_ood: Option<&[&[f64]]>,
) -> Result<BatchLoss> {
    let mut tape = Tape::new(model.architecture());
    let mut grad = vec![0.0; model.param_count()];
    let (id_loss, ood_loss, correct) =
        accumulate_batch(spec, model, &mut tape, batch_id, batch_ood, None, Some(&mut grad))?;
    Ok(BatchLoss { loss: id_loss + spec.gamma_ood * ood_loss, id_loss, ood_loss, grad, correct })
}

/// Shared batch evaluation; returns (mean ID loss, mean OOD loss, correct).
/// `grads`, when given, receives the gradient of the combined objective.
pub(crate) fn accumulate_batch(
    spec: &LossSpec,
    model: &MetaModel,
    tape: &mut Tape,
    batch_id: &[IdSample<'_>],
    batch_ood: Option<&[&[f64]]>,
    mut dropout_rng: Option<&mut dyn RngCore>,
    mut grads: Option<&mut [f64]>,
) -> Result<(f64, f64, usize)> {
    if batch_id.is_empty() {
        return Err(Error::InsufficientData("empty ID batch".into()));
    }
    if spec.gamma_ood > 0.0 && batch_ood.map_or(true, |b| b.is_empty()) {
        return Err(Error::config("gamma_ood > 0 requires an OOD batch"));
    }
    let c = model.classes();
    let mut d_alpha = vec![0.0; c];
    let inv_n = 1.0 / batch_id.len() as f64;
    let mut id_total = 0.0;
    let mut correct = 0;
    for s in batch_id {
        model.check_input(s.x)?;
        run(model, s.x, tape, &mut dropout_rng);
        id_total += sample_loss(spec, &tape.alpha, s.target, &mut d_alpha)?;
        if let Target::Class(y) = s.target {
            if argmax(&tape.alpha) == y {
                correct += 1;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            d_alpha.iter_mut().for_each(|d| *d *= inv_n);
            model.accumulate(tape, &d_alpha, g);
        }
    }
    let mut ood_mean = 0.0;
    if let Some(ood) = batch_ood.filter(|b| !b.is_empty() && spec.gamma_ood > 0.0) {
        let scale = spec.gamma_ood / ood.len() as f64;
        let mut total = 0.0;
        for x in ood {
            model.check_input(x)?;
            run(model, x, tape, &mut dropout_rng);
            total += ood_sample_loss(spec, &tape.alpha, &mut d_alpha);
            if let Some(g) = grads.as_deref_mut() {
                d_alpha.iter_mut().for_each(|d| *d *= scale);
                model.accumulate(tape, &d_alpha, g);
            }
        }
        ood_mean = total / ood.len() as f64;
    }
    Ok((id_total * inv_n, ood_mean, correct))
}

fn run(model: &MetaModel, x: &[f64], tape: &mut Tape, rng: &mut Option<&mut dyn RngCore>) {
    match rng.as_deref_mut() {
        Some(r) => model.run(x, tape, Mode::Train(r)),
        None => model.run(x, tape, Mode::Eval),
    }
}
