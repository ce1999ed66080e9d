//! The Dirichlet meta-distribution and its closed-form functionals.
//!
//! Entropies and divergences are in nats. The slice-level helpers at the
//! bottom of the file are shared with the objectives, which evaluate the same
//! quantities on raw concentration buffers during training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::specialfn::{digamma_unchecked, log_beta_unchecked};

/// Tolerance on Σp = 1 for [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidProbVector("empty".into()));
        }
        let mut sum = 0.0;
        for &v in &p {
            if !(0.0..=1.0 + SIMPLEX_TOL).contains(&v) {
                return Err(Error::InvalidProbVector(format!("component {v} outside [0, 1]")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidProbVector(format!("components sum to {sum}")));
        }
        Ok(ProbVector(p))
    }

    pub fn uniform(classes: usize) -> Self {
        ProbVector(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::ClassOutOfRange { class, classes });
        }
        let mut p = vec![0.0; classes];
        p[class] = 1.0;
        Ok(ProbVector(p))
    }

    /// Builds a vector the caller already knows lies on the simplex.
    pub(crate) fn from_normalized(p: Vec<f64>) -> Self {
        debug_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        ProbVector(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy in nats, with 0·ln 0 = 0.
    pub fn entropy(&self) -> f64 {
        shannon_entropy(&self.0)
    }

    /// Index of the largest component; the first one wins on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total-variation distance ½‖p − q‖₁.
    pub fn total_variation(&self, other: &ProbVector) -> Result<f64> {
        same_len(self.len(), other.len())?;
        Ok(0.5 * self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

impl core::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dir(π; α) over C ≥ 2 classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet {
    alpha: Vec<f64>,
}

impl Dirichlet {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        validate_alpha(&alpha)?;
        Ok(Dirichlet { alpha })
    }

    /// Dir(𝟙_C), the uniform distribution on the simplex.
    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(vec![1.0; classes])
    }

    /// Posterior of the ν-tempered categorical likelihood: Dir(α₀ + ν·e_y).
    pub fn tempered_posterior(alpha0: &[f64], nu: f64, class: usize) -> Result<Self> {
        if class >= alpha0.len() {
            return Err(Error::ClassOutOfRange { class, classes: alpha0.len() });
        }
        check_nu(nu)?;
        let mut alpha = alpha0.to_vec();
        alpha[class] += nu;
        Self::new(alpha)
    }

    /// Fixed target of the reverse-KL objective: Dir(α₀ + ν·η).
    pub fn optimal_target(alpha0: &[f64], nu: f64, eta: &ProbVector) -> Result<Self> {
        same_len(alpha0.len(), eta.len())?;
        check_nu(nu)?;
        Self::new(alpha0.iter().zip(eta.as_slice()).map(|(a, e)| a + nu * e).collect())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    /// Total concentration Σα.
    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn log_pdf(&self, pi: &ProbVector) -> Result<f64> {
        same_len(self.classes(), pi.len())?;
        let mut acc = -log_beta_unchecked(&self.alpha);
        for (&a, &p) in self.alpha.iter().zip(pi.as_slice()) {
            if p > 0.0 {
                acc += (a - 1.0) * log(p);
            } else if a != 1.0 {
                return Err(Error::Domain { function: "log_pdf", value: p });
            }
        }
        Ok(acc)
    }

    /// KL(self ‖ other).
    pub fn kl(&self, other: &Dirichlet) -> Result<f64> {
        same_len(self.classes(), other.classes())?;
        Ok(kl_slices(&self.alpha, &other.alpha).max(0.0))
    }

    pub fn diff_entropy(&self) -> f64 {
        diff_entropy_slice(&self.alpha)
    }

    /// Induced predictive distribution αᵢ / Σα.
    pub fn mean(&self) -> ProbVector {
        let s = self.total();
        ProbVector::from_normalized(self.alpha.iter().map(|a| a / s).collect())
    }

    /// E_{π∼Dir(α)}[H(Cat(π))], the aleatoric part of the decomposition.
    pub fn expected_cat_entropy(&self) -> f64 {
        expected_cat_entropy_slice(&self.alpha)
    }

    /// H(mean) − E[H(Cat(π))], clipped at zero.
    pub fn mutual_info(&self) -> f64 {
        (shannon_entropy_of_mean(&self.alpha) - self.expected_cat_entropy()).max(0.0)
    }

    /// Free energy −ln Σα.
    pub fn energy(&self) -> f64 {
        -log(self.total())
    }

    /// Draws π by normalizing independent Gamma(αᵢ, 1) variates.
    ///
    /// Variates are generated in log space so that very small shapes cannot
    /// underflow the whole vector to zero.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> ProbVector {
        let mut logs: Vec<f64> = self.alpha.iter().map(|&a| log_gamma_variate(a, rng)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logs.iter_mut() {
            *l = exp(*l - max);
            sum += *l;
        }
        for l in logs.iter_mut() {
            *l /= sum;
        }
        ProbVector::from_normalized(logs)
    }
}

/// Log of a Gamma(shape, 1) variate (Marsaglia–Tsang; shapes below one are
/// boosted via Γ(a) = Γ(a+1)·U^{1/a}).
pub(crate) fn log_gamma_variate<R: RngCore + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = open_unit(rng);
        return log_gamma_variate(shape + 1.0, rng) + log(u) / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = open_unit(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || log(u) < 0.5 * x2 + d * (1.0 - v + log(v)) {
            return log(d) + log(v);
        }
    }
}

fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn validate_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.len() < 2 {
        return Err(Error::InvalidDirichlet(format!("need C >= 2, got {}", alpha.len())));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidDirichlet(format!("component {a} is not positive and finite")));
    }
    Ok(())
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { function: "tempering", value: nu })
    }
}

pub(crate) fn same_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * log(v)).sum::<f64>()
}

pub(crate) fn shannon_entropy_of_mean(alpha: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    -alpha.iter().map(|&a| (a / s) * log(a / s)).sum::<f64>()
}

/// KL(Dir(α) ‖ Dir(β)).
pub(crate) fn kl_slices(alpha: &[f64], beta: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let psi_s = digamma_unchecked(s);
    let mut acc = log_beta_unchecked(beta) - log_beta_unchecked(alpha);
    for (&a, &b) in alpha.iter().zip(beta) {
        acc += (a - b) * (digamma_unchecked(a) - psi_s);
    }
    acc
}

pub(crate) fn diff_entropy_slice(alpha: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let c = alpha.len() as f64;
    let mut acc = log_beta_unchecked(alpha) + (s - c) * digamma_unchecked(s);
    for &a in alpha {
        acc -= (a - 1.0) * digamma_unchecked(a);
    }
    acc
}

pub(crate) fn expected_cat_entropy_slice(alpha: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let psi = digamma_unchecked(s + 1.0);
    alpha.iter().map(|&a| (a / s) * (psi - digamma_unchecked(a + 1.0))).sum::<f64>().max(0.0)
}
