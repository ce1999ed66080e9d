//! Feed-forward meta-models mapping x to the concentration α_ψ(x).
//!
//! The backbone is a stack of affine maps with ReLU (optionally followed by
//! inverted dropout). Two heads turn the last hidden layer into α:
//!
//! * direct: `α = exp(clamp(W h + b, −L, L))`;
//! * density: a latent projection `z = W h + b` scored by one diagonal
//!   Gaussian per class, `α_y = α₀,y + N_y · B · p(z | y)`. The budget `B`
//!   defaults to `(4π)^{d/2}` for latent dimension `d`, so a point at the
//!   mode of a unit-variance class receives `N_y · 2^{d/2}` evidence.
//!
//! All parameters live in one flat vector so the optimizer and checkpoints
//! see a single buffer.

mod adam;
mod train;

pub use adam::Adam;
pub use train::{train, EpochRecord, History, Schedule};
pub(crate) use train::{fit, split_indices, LabelTargets, TargetProvider};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};
use rand::{Rng, RngCore};

use crate::data::{LabeledSet, Points};
use crate::dirichlet::Dirichlet;
use crate::error::{Error, Result};
use crate::rng::from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default logit clamp of the direct head.
pub const DEFAULT_LOGIT_CLAMP: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub enum HeadSpec {
    Direct {
        logit_clamp: f64,
    },
    Density {
        latent_dim: usize,
        alpha0: Vec<f64>,
        class_counts: Vec<f64>,
        /// ln of the certainty budget multiplying every class density.
        log_budget: f64,
        /// Upper bound on ln(N_y · budget · p(z|y)).
        log_evidence_clamp: f64,
    },
}

impl HeadSpec {
    pub fn direct() -> Self {
        HeadSpec::Direct { logit_clamp: DEFAULT_LOGIT_CLAMP }
    }

    /// Density head whose class counts come from `set`, with budget
    /// `(4π)^{latent/2}` so a unit-variance density peaks at `2^{latent/2}`.
    pub fn density_for(set: &LabeledSet, latent_dim: usize, alpha0: Vec<f64>) -> Self {
        HeadSpec::Density {
            latent_dim,
            alpha0,
            class_counts: set.class_counts().into_iter().map(|c| c as f64).collect(),
            log_budget: 0.5 * latent_dim as f64 * log(4.0 * core::f64::consts::PI),
            log_evidence_clamp: DEFAULT_LOGIT_CLAMP,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadSpec::Direct { .. } => "direct",
            HeadSpec::Density { .. } => "density",
        }
    }
}

/// Shape of a [`MetaModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub head: HeadSpec,
    /// Dropout rate on hidden activations during training; 0 disables it.
    pub dropout: f64,
}

impl Architecture {
    /// Three hidden layers of 64 units.
    pub fn mlp(input_dim: usize, classes: usize, head: HeadSpec) -> Self {
        Architecture { input_dim, hidden: vec![64, 64, 64], classes, head, dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::config("need input_dim >= 1 and classes >= 2"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        match &self.head {
            HeadSpec::Direct { logit_clamp } => {
                if !(*logit_clamp > 0.0) {
                    return Err(Error::config("logit clamp must be positive"));
                }
            }
            HeadSpec::Density { latent_dim, alpha0, class_counts, log_budget, log_evidence_clamp } => {
                if !log_budget.is_finite() {
                    return Err(Error::config("log_budget must be finite"));
                }
                if *latent_dim == 0 {
                    return Err(Error::config("latent_dim must be positive"));
                }
                if alpha0.len() != self.classes || class_counts.len() != self.classes {
                    return Err(Error::config("density head needs one alpha0 and count per class"));
                }
                if alpha0.iter().any(|&a| !(a > 0.0)) || class_counts.iter().any(|&c| c < 0.0) {
                    return Err(Error::config("alpha0 must be positive and counts non-negative"));
                }
                if !(*log_evidence_clamp > 0.0) {
                    return Err(Error::config("evidence clamp must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Affine {
    fn apply(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        let w = &params[self.w..self.w + self.fan_in * self.fan_out];
        let b = &params[self.b..self.b + self.fan_out];
        for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(self.fan_in).zip(b)) {
            *o = bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
        }
    }

    /// Accumulates ∂W, ∂b and (optionally) writes ∂input.
    fn backprop(
        &self,
        params: &[f64],
        input: &[f64],
        delta: &[f64],
        grads: &mut [f64],
        d_input: Option<&mut [f64]>,
    ) {
        let gw = &mut grads[self.w..self.w + self.fan_in * self.fan_out];
        for (row, &d) in gw.chunks_exact_mut(self.fan_in).zip(delta) {
            if d != 0.0 {
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
        }
        for (g, d) in grads[self.b..self.b + self.fan_out].iter_mut().zip(delta) {
            *g += d;
        }
        if let Some(d_input) = d_input {
            d_input.iter_mut().for_each(|v| *v = 0.0);
            let w = &params[self.w..self.w + self.fan_in * self.fan_out];
            for (row, &d) in w.chunks_exact(self.fan_in).zip(delta) {
                if d != 0.0 {
                    for (di, a) in d_input.iter_mut().zip(row) {
                        *di += d * a;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    hidden: Vec<Affine>,
    out: Affine,
    /// Density head: class means and log-variances, each C × latent.
    means: usize,
    log_vars: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut offset = 0;
        let mut affine = |fan_in: usize, fan_out: usize| {
            let a = Affine { w: offset, b: offset + fan_in * fan_out, fan_in, fan_out };
            offset += fan_in * fan_out + fan_out;
            a
        };
        let mut fan_in = arch.input_dim;
        let mut hidden = Vec::with_capacity(arch.hidden.len());
        for &w in &arch.hidden {
            hidden.push(affine(fan_in, w));
            fan_in = w;
        }
        let out_width = match &arch.head {
            HeadSpec::Direct { .. } => arch.classes,
            HeadSpec::Density { latent_dim, .. } => *latent_dim,
        };
        let out = affine(fan_in, out_width);
        let (means, log_vars) = match &arch.head {
            HeadSpec::Direct { .. } => (offset, offset),
            HeadSpec::Density { latent_dim, .. } => {
                let block = arch.classes * latent_dim;
                let m = offset;
                offset += 2 * block;
                (m, m + block)
            }
        };
        Layout { hidden, out, means, log_vars, total: offset }
    }
}

/// Per-layer dropout scale factors (0 or 1/(1−p)) for one forward pass.
pub type DropoutMasks = Vec<Vec<f64>>;

/// How hidden activations are treated during a forward pass.
pub(crate) enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
    Fixed(&'a DropoutMasks),
}

/// Intermediate values of one forward pass, reused across samples.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    /// acts[0] is the input, acts[l + 1] the output of hidden layer l.
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    masked: bool,
    /// Logits (direct) or latent code z (density).
    out: Vec<f64>,
    /// Density head: clamped-or-not flags and evidence values per class.
    evidence: Vec<f64>,
    evidence_active: Vec<bool>,
    pub(crate) alpha: Vec<f64>,
    d_acts: Vec<Vec<f64>>,
    d_out: Vec<f64>,
}

impl Tape {
    pub(crate) fn new(arch: &Architecture) -> Self {
        let mut widths = vec![arch.input_dim];
        widths.extend_from_slice(&arch.hidden);
        let out_width = match &arch.head {
            HeadSpec::Direct { .. } => arch.classes,
            HeadSpec::Density { latent_dim, .. } => *latent_dim,
        };
        Tape {
            acts: widths.iter().map(|&w| vec![0.0; w]).collect(),
            masks: arch.hidden.iter().map(|&w| vec![1.0; w]).collect(),
            masked: false,
            out: vec![0.0; out_width],
            evidence: vec![0.0; arch.classes],
            evidence_active: vec![false; arch.classes],
            alpha: vec![0.0; arch.classes],
            d_acts: widths.iter().map(|&w| vec![0.0; w]).collect(),
            d_out: vec![0.0; out_width],
        }
    }
}

/// A meta-model ψ with its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    arch: Architecture,
    params: Vec<f64>,
    layout: Layout,
}

impl MetaModel {
    /// He-style uniform initialization: weights ∼ U(±√(6/fan_in)), biases 0.
    /// Density means ∼ U(±1), log-variances 0.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = from_seed(seed);
        for a in layout.hidden.iter().chain(core::iter::once(&layout.out)) {
            let bound = sqrt(6.0 / a.fan_in as f64);
            for w in &mut params[a.w..a.w + a.fan_in * a.fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        if let HeadSpec::Density { latent_dim, .. } = &arch.head {
            let block = arch.classes * latent_dim;
            for m in &mut params[layout.means..layout.means + block] {
                *m = rng.random_range(-1.0..1.0);
            }
        }
        Ok(MetaModel { arch, params, layout })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::LengthMismatch { expected: layout.total, found: params.len() });
        }
        Ok(MetaModel { arch, params, layout })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Dir(α_ψ(x)) with dropout disabled.
    pub fn forward(&self, x: &[f64]) -> Result<Dirichlet> {
        self.check_input(x)?;
        let mut tape = Tape::new(&self.arch);
        self.run(x, &mut tape, Mode::Eval);
        Dirichlet::new(tape.alpha)
    }

    /// Concentration with the given dropout masks applied.
    pub fn forward_masked(&self, x: &[f64], masks: &DropoutMasks) -> Result<Dirichlet> {
        self.check_input(x)?;
        if masks.len() != self.arch.hidden.len()
            || masks.iter().zip(&self.arch.hidden).any(|(m, &w)| m.len() != w)
        {
            return Err(Error::config("dropout masks do not match the hidden widths"));
        }
        let mut tape = Tape::new(&self.arch);
        self.run(x, &mut tape, Mode::Fixed(masks));
        Dirichlet::new(tape.alpha)
    }

    /// Gradient of a scalar loss over the parameters, given ∂loss/∂α at x.
    pub fn backward(&self, x: &[f64], loss_grad_wrt_alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if loss_grad_wrt_alpha.len() != self.arch.classes {
            return Err(Error::LengthMismatch {
                expected: self.arch.classes,
                found: loss_grad_wrt_alpha.len(),
            });
        }
        let mut tape = Tape::new(&self.arch);
        self.run(x, &mut tape, Mode::Eval);
        let mut grads = vec![0.0; self.params.len()];
        self.accumulate(&mut tape, loss_grad_wrt_alpha, &mut grads);
        Ok(grads)
    }

    /// Density head only: sets each class Gaussian to the mean and variance of
    /// the latent codes of that class's rows. Classes without rows are left
    /// unchanged. No-op for the direct head.
    pub fn init_density_from(&mut self, points: &Points, labels: &[usize]) -> Result<()> {
        let HeadSpec::Density { latent_dim, .. } = &self.arch.head else {
            return Ok(());
        };
        let ld = *latent_dim;
        if points.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: points.len(), found: labels.len() });
        }
        let c = self.arch.classes;
        let mut sum = vec![0.0; c * ld];
        let mut sq = vec![0.0; c * ld];
        let mut count = vec![0usize; c];
        let mut tape = Tape::new(&self.arch);
        for (x, &y) in points.rows().zip(labels) {
            if y >= c {
                return Err(Error::ClassOutOfRange { class: y, classes: c });
            }
            self.check_input(x)?;
            self.run(x, &mut tape, Mode::Eval);
            count[y] += 1;
            for (d, &z) in tape.out.iter().enumerate() {
                sum[y * ld + d] += z;
                sq[y * ld + d] += z * z;
            }
        }
        for y in (0..c).filter(|&y| count[y] > 0) {
            let n = count[y] as f64;
            for d in 0..ld {
                let mean = sum[y * ld + d] / n;
                let var = (sq[y * ld + d] / n - mean * mean).max(0.0) + 1e-3;
                self.params[self.layout.means + y * ld + d] = mean;
                self.params[self.layout.log_vars + y * ld + d] = log(var);
            }
        }
        Ok(())
    }

    /// Draws an independent set of dropout masks at this model's rate.
    pub fn sample_masks<R: RngCore + ?Sized>(&self, rng: &mut R) -> DropoutMasks {
        let p = self.arch.dropout;
        let keep = 1.0 / (1.0 - p);
        self.arch
            .hidden
            .iter()
            .map(|&w| (0..w).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
            .collect()
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.arch.input_dim {
            Ok(())
        } else {
            Err(Error::LengthMismatch { expected: self.arch.input_dim, found: x.len() })
        }
    }

    /// Forward pass filling `tape`; `tape.alpha` holds the result.
    pub(crate) fn run(&self, x: &[f64], tape: &mut Tape, mode: Mode<'_>) {
        tape.acts[0].copy_from_slice(x);
        let p = self.arch.dropout;
        let (masked, mut rng) = match mode {
            Mode::Eval => (false, None),
            Mode::Train(rng) => (p > 0.0, Some(rng)),
            Mode::Fixed(masks) => {
                for (dst, src) in tape.masks.iter_mut().zip(masks) {
                    dst.copy_from_slice(src);
                }
                (true, None)
            }
        };
        tape.masked = masked;
        for (l, affine) in self.layout.hidden.iter().enumerate() {
            let (before, after) = tape.acts.split_at_mut(l + 1);
            let out = &mut after[0];
            affine.apply(&self.params, &before[l], out);
            if masked {
                if let Some(rng) = rng.as_deref_mut() {
                    let keep = 1.0 / (1.0 - p);
                    for m in tape.masks[l].iter_mut() {
                        *m = if rng.random::<f64>() < p { 0.0 } else { keep };
                    }
                }
                for (v, m) in out.iter_mut().zip(&tape.masks[l]) {
                    *v = if *v > 0.0 { *v * m } else { 0.0 };
                }
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        let last = tape.acts.last().expect("input layer is always present");
        self.layout.out.apply(&self.params, last, &mut tape.out);
        match &self.arch.head {
            HeadSpec::Direct { logit_clamp } => {
                for (a, &l) in tape.alpha.iter_mut().zip(&tape.out) {
                    *a = exp(l.clamp(-logit_clamp, *logit_clamp));
                }
            }
            HeadSpec::Density { latent_dim, alpha0, class_counts, log_budget, log_evidence_clamp } => {
                let ld = *latent_dim;
                for y in 0..self.arch.classes {
                    let mu = &self.params[self.layout.means + y * ld..self.layout.means + (y + 1) * ld];
                    let lv = &self.params[self.layout.log_vars + y * ld..self.layout.log_vars + (y + 1) * ld];
                    let mut log_p = -0.5 * ld as f64 * LN_2PI;
                    for d in 0..ld {
                        let diff = tape.out[d] - mu[d];
                        log_p -= 0.5 * (diff * diff * exp(-lv[d]) + lv[d]);
                    }
                    let count = class_counts[y];
                    let (ev, active) = if count > 0.0 {
                        let le = log(count) + log_budget + log_p;
                        if le < *log_evidence_clamp {
                            (exp(le), true)
                        } else {
                            (exp(*log_evidence_clamp), false)
                        }
                    } else {
                        (0.0, false)
                    };
                    tape.evidence[y] = ev;
                    tape.evidence_active[y] = active;
                    tape.alpha[y] = alpha0[y] + ev;
                }
            }
        }
    }

    /// Reverse pass for the tape of the latest `run`, adding into `grads`.
    pub(crate) fn accumulate(&self, tape: &mut Tape, d_alpha: &[f64], grads: &mut [f64]) {
        match &self.arch.head {
            HeadSpec::Direct { logit_clamp } => {
                for ((d, &l), (&a, &g)) in
                    tape.d_out.iter_mut().zip(&tape.out).zip(tape.alpha.iter().zip(d_alpha))
                {
                    *d = if l.abs() < *logit_clamp { g * a } else { 0.0 };
                }
            }
            HeadSpec::Density { latent_dim, .. } => {
                let ld = *latent_dim;
                tape.d_out.iter_mut().for_each(|v| *v = 0.0);
                for y in 0..self.arch.classes {
                    if !tape.evidence_active[y] {
                        continue;
                    }
                    // ∂α_y/∂log p(z|y) = evidence_y
                    let g = d_alpha[y] * tape.evidence[y];
                    if g == 0.0 {
                        continue;
                    }
                    let m_off = self.layout.means + y * ld;
                    let v_off = self.layout.log_vars + y * ld;
                    for d in 0..ld {
                        let inv_var = exp(-self.params[v_off + d]);
                        let diff = tape.out[d] - self.params[m_off + d];
                        tape.d_out[d] -= g * diff * inv_var;
                        grads[m_off + d] += g * diff * inv_var;
                        grads[v_off + d] += g * 0.5 * (diff * diff * inv_var - 1.0);
                    }
                }
            }
        }

        let n_hidden = self.layout.hidden.len();
        {
            let input = &tape.acts[n_hidden];
            let d_in = if n_hidden > 0 { Some(&mut tape.d_acts[n_hidden][..]) } else { None };
            self.layout.out.backprop(&self.params, input, &tape.d_out, grads, d_in);
        }
        for l in (0..n_hidden).rev() {
            // ReLU (and mask) derivative on the output of hidden layer l
            let (lower, upper) = tape.d_acts.split_at_mut(l + 1);
            let delta = &mut upper[0];
            let act = &tape.acts[l + 1];
            if tape.masked {
                for ((d, &a), &m) in delta.iter_mut().zip(act).zip(&tape.masks[l]) {
                    *d = if a > 0.0 { *d * m } else { 0.0 };
                }
            } else {
                for (d, &a) in delta.iter_mut().zip(act) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let d_in = if l > 0 { Some(&mut lower[l][..]) } else { None };
            self.layout.hidden[l].backprop(&self.params, &tape.acts[l], delta, grads, d_in);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_mixture;

    fn direct(hidden: Vec<usize>) -> Architecture {
        Architecture { input_dim: 2, hidden, classes: 3, head: HeadSpec::direct(), dropout: 0.0 }
    }

    fn density(hidden: Vec<usize>) -> Architecture {
        let set = make_gaussian_mixture(90, 0.0, 1).unwrap();
        Architecture {
            input_dim: 2,
            hidden,
            classes: 3,
            head: HeadSpec::density_for(&set, 4, vec![1.0; 3]),
            dropout: 0.0,
        }
    }

    #[test]
    fn zero_weights_give_uniform_dirichlet() {
        let arch = direct(vec![8, 8]);
        let n = arch.param_count();
        let m = MetaModel::from_params(arch, vec![0.0; n]).unwrap();
        assert_eq!(m.forward(&[3.0, -1.0]).unwrap().alpha(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn logits_are_clamped() {
        let arch = direct(vec![]);
        let mut params = vec![0.0; arch.param_count()];
        params[0] = 100.0; // w[0][0]
        let m = MetaModel::from_params(arch, params).unwrap();
        let d = m.forward(&[10.0, 0.0]).unwrap();
        assert_eq!(d.alpha()[0], exp(15.0));
        assert!(d.alpha().iter().all(|a| a.is_finite()));
        // no gradient through a saturated logit
        let g = m.backward(&[10.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn density_head_at_class_mean() {
        let arch = density(vec![]);
        let n = arch.param_count();
        // projector = 0 so z = b = 0; set class-1 mean to 0, others far away
        let mut params = vec![0.0; n];
        let layout = Layout::new(&arch);
        for y in [0usize, 2] {
            for d in 0..4 {
                params[layout.means + y * 4 + d] = 50.0;
            }
        }
        let counts = match &arch.head {
            HeadSpec::Density { class_counts, .. } => class_counts.clone(),
            _ => unreachable!(),
        };
        let m = MetaModel::from_params(arch, params).unwrap();
        let alpha = m.forward(&[0.3, 0.7]).unwrap();
        // budget (4π)² times the peak (2π)⁻² of a unit Gaussian in 4 dimensions
        let expected = 1.0 + 4.0 * counts[1];
        assert!((alpha.alpha()[1] - expected).abs() < 1e-12);
        assert!((alpha.alpha()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_layer_gradient_is_exp_times_input() {
        let arch = direct(vec![]);
        let m = MetaModel::new(arch, 4).unwrap();
        let x = [0.3, -0.2];
        let a0 = m.forward(&x).unwrap().alpha()[0];
        let g = m.backward(&x, &[1.0, 0.0, 0.0]).unwrap();
        // row 0 of W, then bias 0
        assert!((g[0] - a0 * x[0]).abs() < 1e-12);
        assert!((g[1] - a0 * x[1]).abs() < 1e-12);
        assert!((g[6] - a0).abs() < 1e-12);
        assert!(g[2..6].iter().chain(&g[7..]).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gradient_is_zero() {
        for arch in [direct(vec![5, 4]), density(vec![5])] {
            let m = MetaModel::new(arch, 2).unwrap();
            let g = m.backward(&[0.1, 0.2], &[0.0; 3]).unwrap();
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    fn check_fd(m: &MetaModel, x: &[f64], weights: &[f64]) {
        // loss = Σ w_k log α_k
        let loss = |m: &MetaModel| -> f64 {
            m.forward(x).unwrap().alpha().iter().zip(weights).map(|(a, w)| w * log(*a)).sum()
        };
        let alpha = m.forward(x).unwrap();
        let d_alpha: Vec<f64> = alpha.alpha().iter().zip(weights).map(|(a, w)| w / a).collect();
        let g = m.backward(x, &d_alpha).unwrap();
        let mut probe = m.clone();
        let mut worst: f64 = 0.0;
        for i in 0..m.param_count() {
            let orig = probe.params[i];
            let h = 1e-5 * orig.abs().max(1.0);
            probe.params[i] = orig + h;
            let up = loss(&probe);
            probe.params[i] = orig - h;
            let down = loss(&probe);
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_fd(&MetaModel::new(direct(vec![6, 5]), 9).unwrap(), &[0.4, -1.3], &[0.7, -0.2, 1.1]);
        check_fd(&MetaModel::new(density(vec![6]), 10).unwrap(), &[0.1, 0.2], &[0.5, 1.0, -0.3]);
    }

    #[test]
    fn forward_is_pure_and_checks_dimensions() {
        let m = MetaModel::new(direct(vec![4]), 1).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), m.forward(&[1.0, 2.0]).unwrap());
        assert!(m.forward(&[1.0]).is_err());
        assert!(m.backward(&[1.0, 2.0], &[1.0]).is_err());
        assert!(MetaModel::from_params(direct(vec![4]), vec![0.0; 3]).is_err());
    }

    #[test]
    fn masked_forward_uses_masks() {
        let mut arch = direct(vec![4]);
        arch.dropout = 0.5;
        let m = MetaModel::new(arch, 1).unwrap();
        let zero = vec![vec![0.0; 4]];
        // all hidden units dropped: logits equal the output bias (zero)
        assert_eq!(m.forward_masked(&[1.0, 2.0], &zero).unwrap().alpha(), &[1.0; 3]);
        let ones = vec![vec![1.0; 4]];
        assert_eq!(m.forward_masked(&[1.0, 2.0], &ones).unwrap(), m.forward(&[1.0, 2.0]).unwrap());
        assert!(m.forward_masked(&[1.0, 2.0], &vec![vec![1.0; 3]]).is_err());
    }
}
