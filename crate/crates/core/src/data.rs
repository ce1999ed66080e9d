//! Synthetic Gaussian-mixture data with an exact Bayes oracle, geometric
//! out-of-distribution sources and bootstrap subsampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, exp, sin, sqrt};
use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::dirichlet::ProbVector;
use crate::error::{Error, Result};
use crate::rng::{derive, from_seed, tag};

/// A row-major collection of feature vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::LengthMismatch { expected: dim, found: data.len() });
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::LengthMismatch { expected: dim, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Points::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Points {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Points { dim: self.dim, data }
    }
}

/// Isotropic Gaussian mixture with optional symmetric label noise.
///
/// With probability `noise_rate` the drawn label is replaced by one of the
/// other classes chosen uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub priors: Vec<f64>,
    pub noise_rate: f64,
}

impl MixtureSpec {
    /// Three equiprobable 2D classes at (−2, 3), (0, 0), (2, 3) with variance 0.25.
    pub fn toy(noise_rate: f64) -> Self {
        MixtureSpec {
            means: vec![vec![-2.0, 3.0], vec![0.0, 0.0], vec![2.0, 3.0]],
            variance: 0.25,
            priors: vec![1.0 / 3.0; 3],
            noise_rate,
        }
    }

    pub fn with_variance(mut self, variance: f64) -> Self {
        self.variance = variance;
        self
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn std_dev(&self) -> f64 {
        sqrt(self.variance)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes();
        if c < 2 || self.priors.len() != c {
            return Err(Error::config("mixture needs >= 2 classes with one prior each"));
        }
        if self.means.iter().any(|m| m.len() != self.dim() || m.is_empty()) {
            return Err(Error::config("mixture means must share a dimension"));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::config(format!("variance must be positive, got {}", self.variance)));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::config(format!("noise_rate must lie in [0, 1), got {}", self.noise_rate)));
        }
        if (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.priors.iter().any(|&p| p <= 0.0) {
            return Err(Error::config("class priors must be positive and sum to one"));
        }
        Ok(())
    }

    /// Draws `n` labelled points.
    pub fn sample(&self, n: usize, seed: u64) -> Result<LabeledSet> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InsufficientData("n must be at least 1".into()));
        }
        let mut rng = from_seed(seed);
        let c = self.classes();
        let d = self.dim();
        let sd = self.std_dev();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let component = draw_categorical(&self.priors, &mut rng);
            for k in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                data.push(self.means[component][k] + sd * z);
            }
            let mut y = component;
            if self.noise_rate > 0.0 && rng.random::<f64>() < self.noise_rate {
                let shift = rng.random_range(1..c);
                y = (component + shift) % c;
            }
            labels.push(y);
        }
        Ok(LabeledSet { points: Points { dim: d, data }, labels, classes: c, generator: Some(self.clone()) })
    }

    /// Exact p(y | x) of the (noisy) generating process.
    pub fn eta(&self, x: &[f64]) -> Result<ProbVector> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain { function: "eta_oracle", value: f64::NAN });
        }
        let c = self.classes();
        // log prior + log likelihood, shared normalizer dropped
        let logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.priors)
            .map(|(m, &p)| {
                let d2: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                libm::log(p) - 0.5 * d2 / self.variance
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut clean: Vec<f64> = logits.iter().map(|l| exp(l - max)).collect();
        let z: f64 = clean.iter().sum();
        clean.iter_mut().for_each(|v| *v /= z);
        let r = self.noise_rate;
        let other = if c > 1 { r / (c - 1) as f64 } else { 0.0 };
        let eta = clean.iter().map(|&b| (1.0 - r) * b + other * (1.0 - b)).collect::<Vec<_>>();
        let s: f64 = eta.iter().sum();
        Ok(ProbVector::from_normalized(eta.into_iter().map(|v| v / s).collect()))
    }
}

fn draw_categorical<R: RngCore + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Features, labels and (for synthetic data) the generating mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    points: Points,
    labels: Vec<usize>,
    classes: usize,
    generator: Option<MixtureSpec>,
}

impl LabeledSet {
    pub fn new(points: Points, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: points.len(), found: labels.len() });
        }
        if let Some(&class) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::ClassOutOfRange { class, classes });
        }
        Ok(LabeledSet { points, labels, classes, generator: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn generator(&self) -> Option<&MixtureSpec> {
        self.generator.as_ref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            points: self.points.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            generator: self.generator.clone(),
        }
    }
}

/// The toy training distribution: `n` points of the three-class mixture.
pub fn make_gaussian_mixture(n: usize, noise_rate: f64, seed: u64) -> Result<LabeledSet> {
    MixtureSpec::toy(noise_rate).sample(n, seed)
}

/// Bayes posterior η(x) of a synthetic set's generator.
pub fn eta_oracle(generator: &MixtureSpec, x: &[f64]) -> Result<ProbVector> {
    generator.eta(x)
}

/// Geometric out-of-distribution sources in the feature plane.
#[derive(Debug, Clone, PartialEq)]
pub enum OodSource {
    /// Uniform on the square `[lo, hi]²`, rejecting points closer than
    /// `exclusion_radius` to any of `exclude`.
    UniformBox { lo: f64, hi: f64, exclude: Vec<Vec<f64>>, exclusion_radius: f64 },
    /// Uniform angle, radius uniform in `[radius − width/2, radius + width/2]`.
    Ring { center: Vec<f64>, radius: f64, width: f64 },
    /// Isotropic Gaussian around `center`.
    ShiftedGaussian { center: Vec<f64>, std_dev: f64 },
}

impl OodSource {
    pub const KINDS: [&'static str; 3] = ["uniform-box", "ring", "shifted-gaussian"];

    /// `[−8, 8]²` with a 3σ hole around every component mean.
    pub fn uniform_box(mixture: &MixtureSpec) -> Self {
        OodSource::UniformBox {
            lo: -8.0,
            hi: 8.0,
            exclude: mixture.means.clone(),
            exclusion_radius: 3.0 * mixture.std_dev(),
        }
    }

    /// Thin shell of radius 10 and width 0.2 around the origin.
    pub fn ring() -> Self {
        OodSource::Ring { center: vec![0.0, 0.0], radius: 10.0, width: 0.2 }
    }

    /// Unit-variance Gaussian centred at (20, 20).
    pub fn shifted_gaussian() -> Self {
        OodSource::ShiftedGaussian { center: vec![20.0, 20.0], std_dev: 1.0 }
    }

    /// Default source by name (`uniform-box`, `ring`, `shifted-gaussian`).
    pub fn by_name(name: &str, mixture: &MixtureSpec) -> Result<Self> {
        match name {
            "uniform-box" => Ok(Self::uniform_box(mixture)),
            "ring" => Ok(Self::ring()),
            "shifted-gaussian" => Ok(Self::shifted_gaussian()),
            other => Err(Error::config(format!(
                "unknown OOD source `{other}` (valid: {})",
                Self::KINDS.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OodSource::UniformBox { .. } => "uniform-box",
            OodSource::Ring { .. } => "ring",
            OodSource::ShiftedGaussian { .. } => "shifted-gaussian",
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Points> {
        if n == 0 {
            return Err(Error::InsufficientData("n must be at least 1".into()));
        }
        let mut rng = from_seed(seed);
        let mut data = Vec::with_capacity(2 * n);
        match self {
            OodSource::UniformBox { lo, hi, exclude, exclusion_radius } => {
                if !(hi > lo) {
                    return Err(Error::config("uniform box needs lo < hi"));
                }
                let r2 = exclusion_radius * exclusion_radius;
                let mut accepted = 0;
                let mut attempts = 0usize;
                while accepted < n {
                    attempts += 1;
                    if attempts > 1000 * n + 1000 {
                        return Err(Error::config("uniform box is covered by its exclusion zones"));
                    }
                    let p = [rng.random_range(*lo..*hi), rng.random_range(*lo..*hi)];
                    let blocked = exclude.iter().any(|m| {
                        let dx = p[0] - m[0];
                        let dy = p[1] - m[1];
                        dx * dx + dy * dy < r2
                    });
                    if !blocked {
                        data.extend_from_slice(&p);
                        accepted += 1;
                    }
                }
            }
            OodSource::Ring { center, radius, width } => {
                for _ in 0..n {
                    let theta = rng.random_range(0.0..core::f64::consts::TAU);
                    let r = radius - 0.5 * width + width * rng.random::<f64>();
                    data.push(center[0] + r * cos(theta));
                    data.push(center[1] + r * sin(theta));
                }
            }
            OodSource::ShiftedGaussian { center, std_dev } => {
                for _ in 0..n {
                    for c in center.iter().take(2) {
                        let z: f64 = rng.sample(StandardNormal);
                        data.push(c + std_dev * z);
                    }
                }
            }
        }
        Points::new(2, data)
    }
}

/// `n` i.i.d. draws from `source`.
pub fn sample_ood(source: &OodSource, n: usize, seed: u64) -> Result<Points> {
    source.sample(n, seed)
}

/// Index lists of `m` subsets of size ⌊ratio·N⌋, each drawn without
/// replacement, independently across subsets.
pub fn bootstrap_indices(n: usize, m: usize, ratio: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("bootstrap ratio must lie in (0, 1], got {ratio}")));
    }
    if m == 0 {
        return Err(Error::config("bootstrap needs at least one subset"));
    }
    let size = libm::floor(ratio * n as f64) as usize;
    if size == 0 {
        return Err(Error::InsufficientData(format!("ratio {ratio} of {n} points is empty")));
    }
    Ok((0..m)
        .map(|j| {
            let mut rng = from_seed(derive(derive(seed, tag::BOOTSTRAP), j as u64));
            let mut idx = index::sample(&mut rng, n, size).into_vec();
            if size == n {
                idx.shuffle(&mut rng);
            }
            idx
        })
        .collect())
}

/// The subsets named by [`bootstrap_indices`].
pub fn bootstrap_split(set: &LabeledSet, m: usize, ratio: f64, seed: u64) -> Result<Vec<LabeledSet>> {
    Ok(bootstrap_indices(set.len(), m, ratio, seed)?.iter().map(|idx| set.subset(idx)).collect())
}
