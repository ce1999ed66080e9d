//! Versioned TOML run configuration.
//!
//! Every section and key is optional; omitted values take the toy defaults.
//! Unknown keys are rejected. Commands write the fully resolved document next
//! to their outputs as `config.toml`, which loads back to the same run.

use std::path::{Path, PathBuf};

use edl_core::eval::{ExperimentSpec, HeadKind, Method, ScoreMetric, SweepKind};
use edl_core::{AnnealSchedule, LossKind, LossSpec, MixtureSpec, OodSource, Schedule, TeacherConfig, TeacherKind};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Worker threads for independent jobs.
    pub workers: usize,
    pub out: PathBuf,
    /// `edl` or `distill`; selects what `eval` (without a checkpoint) and `sweep` run.
    pub method: String,
    /// Fill the `runtime_s` CSV column with wall-clock time. Off by default
    /// because timings make outputs differ between identical runs.
    pub record_runtime: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
    pub teachers: TeachersConfig,
    pub anneal: AnnealConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub noise_rate: f64,
    pub variance: f64,
    /// Train on this `x0,x1,y` CSV instead of a freshly sampled set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// `direct` or `density`.
    pub head: String,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: String,
    pub lambda: f64,
    /// Uniform prior concentration α₀ per class.
    pub alpha0: f64,
    pub gamma_ood: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood_source: Option<String>,
    pub fkl_aux_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeachersConfig {
    /// `ensemble`, `bootstrap` or `dropout`.
    pub kind: String,
    pub members: usize,
    pub ratio: f64,
    pub dropout_rate: f64,
    /// Teacher epochs; the rest of the teacher schedule follows `[schedule]`.
    pub max_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealConfig {
    pub t0: f64,
    pub decay_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub ood_sources: Vec<String>,
    pub ood_metrics: Vec<String>,
    pub selective_metrics: Vec<String>,
    /// Write per-sample uncertainty reports for the ID test set.
    pub reports: bool,
    /// Metric charted by `--plot`, e.g. `auroc_mi`.
    pub plot_metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `lambda` or `samplesize`.
    pub kind: String,
    /// Defaults to the kind's standard grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
    /// `task:metric` columns charted against the grid.
    pub plot: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            workers: 1,
            out: PathBuf::from("runs/out"),
            method: "edl".into(),
            record_runtime: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            schedule: ScheduleConfig::default(),
            teachers: TeachersConfig::default(),
            anneal: AnnealConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        let toy = MixtureSpec::toy(0.0);
        DataConfig { n_train: 1000, n_test: 2000, n_ood: 1000, noise_rate: 0.0, variance: toy.variance, train_path: None }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![64, 64, 64], head: "direct".into(), latent_dim: 6 }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        let spec = LossSpec::new(LossKind::Rkl, 2);
        LossConfig {
            kind: LossKind::Rkl.name().into(),
            lambda: spec.lambda,
            alpha0: 1.0,
            gamma_ood: 0.0,
            ood_source: None,
            fkl_aux_weight: spec.fkl_aux_weight,
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = Schedule::default();
        ScheduleConfig {
            max_epochs: s.max_epochs,
            batch_size: s.batch_size,
            patience: s.patience,
            learning_rate: s.learning_rate,
            val_fraction: s.val_fraction,
        }
    }
}

impl Default for TeachersConfig {
    fn default() -> Self {
        let t = TeacherConfig::new(TeacherKind::Bootstrap, 10);
        TeachersConfig {
            kind: TeacherKind::Bootstrap.name().into(),
            members: t.members,
            ratio: t.ratio,
            dropout_rate: t.dropout_rate,
            max_epochs: t.schedule.max_epochs,
        }
    }
}

impl Default for AnnealConfig {
    fn default() -> Self {
        let a = AnnealSchedule::default();
        AnnealConfig { t0: a.t0, decay_epochs: a.decay_epochs }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            ood_sources: OodSource::KINDS.iter().map(|s| s.to_string()).collect(),
            ood_metrics: ScoreMetric::EPISTEMIC.iter().map(|m| m.name().to_string()).collect(),
            selective_metrics: ScoreMetric::TOTAL.iter().map(|m| m.name().to_string()).collect(),
            reports: false,
            plot_metric: "auroc_mi".into(),
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: SweepKind::Lambda.name().into(),
            grid: None,
            seeds: (0..5).collect(),
            plot: vec!["id:accuracy".into(), "id:mean_mi".into(), "id:mean_aleatoric".into()],
        }
    }
}

fn parse<T: std::str::FromStr<Err = edl_core::Error>>(s: &str) -> Result<T> {
    s.parse::<T>().map_err(LabError::from)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| LabError::config(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(LabError::config(format!(
                "unsupported config version {} (this build reads version {CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            LabError::Config(msg) => LabError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        let m = MixtureSpec::toy(self.data.noise_rate).with_variance(self.data.variance);
        m.validate()?;
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        MixtureSpec::toy(0.0).classes()
    }

    pub fn schedule(&self) -> Schedule {
        let s = &self.schedule;
        Schedule {
            max_epochs: s.max_epochs,
            batch_size: s.batch_size,
            patience: s.patience,
            learning_rate: s.learning_rate,
            val_fraction: s.val_fraction,
        }
    }

    pub fn head(&self) -> Result<HeadKind> {
        match self.model.head.as_str() {
            "direct" => Ok(HeadKind::Direct),
            "density" => Ok(HeadKind::Density { latent_dim: self.model.latent_dim }),
            other => Err(LabError::config(format!("unknown head `{other}` (valid: direct, density)"))),
        }
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        let mixture = self.mixture()?;
        let kind: LossKind = parse(&self.loss.kind)?;
        let mut spec = LossSpec::new(kind, mixture.classes()).with_lambda(self.loss.lambda);
        spec.alpha0 = vec![self.loss.alpha0; mixture.classes()];
        spec.fkl_aux_weight = self.loss.fkl_aux_weight;
        spec.gamma_ood = self.loss.gamma_ood;
        spec.ood = self.loss.ood_source.as_deref().map(|s| OodSource::by_name(s, &mixture)).transpose()?;
        spec.validate(mixture.classes())?;
        Ok(spec)
    }

    pub fn teacher_config(&self) -> Result<TeacherConfig> {
        let t = &self.teachers;
        let mut config = TeacherConfig::new(parse(&t.kind)?, t.members);
        config.ratio = t.ratio;
        config.dropout_rate = t.dropout_rate;
        config.hidden = self.model.hidden.clone();
        config.schedule = Schedule { max_epochs: t.max_epochs, ..self.schedule() };
        config.validate()?;
        Ok(config)
    }

    pub fn anneal(&self) -> Result<AnnealSchedule> {
        let a = AnnealSchedule { t0: self.anneal.t0, decay_epochs: self.anneal.decay_epochs };
        a.validate()?;
        Ok(a)
    }

    pub fn edl_method(&self) -> Result<Method> {
        Ok(Method::Edl { loss: self.loss_spec()?, head: self.head()? })
    }

    pub fn distill_method(&self) -> Result<Method> {
        Ok(Method::Distill { teachers: self.teacher_config()?, anneal: self.anneal()? })
    }

    /// The method named by `method`.
    pub fn method(&self) -> Result<Method> {
        match self.method.as_str() {
            "edl" => self.edl_method(),
            "distill" => self.distill_method(),
            other => Err(LabError::config(format!("unknown method `{other}` (valid: edl, distill)"))),
        }
    }

    /// Experiment spec for `method`, with the evaluation settings applied.
    pub fn experiment(&self, method: Method) -> Result<ExperimentSpec> {
        let mixture = self.mixture()?;
        let mut spec = ExperimentSpec::toy(method);
        spec.n_train = self.data.n_train;
        spec.n_test = self.data.n_test;
        spec.n_ood = self.data.n_ood;
        spec.hidden = self.model.hidden.clone();
        spec.schedule = self.schedule();
        spec.ood_sources =
            self.eval.ood_sources.iter().map(|s| OodSource::by_name(s, &mixture)).collect::<Result<_, _>>()?;
        spec.ood_metrics = self.eval.ood_metrics.iter().map(|m| parse(m)).collect::<Result<_>>()?;
        spec.selective_metrics = self.eval.selective_metrics.iter().map(|m| parse(m)).collect::<Result<_>>()?;
        spec.mixture = mixture;
        spec.validate()?;
        Ok(spec)
    }

    pub fn sweep_kind(&self) -> Result<SweepKind> {
        parse(&self.sweep.kind)
    }

    pub fn sweep_grid(&self) -> Result<Vec<f64>> {
        Ok(self.sweep.grid.clone().unwrap_or_else(|| self.sweep_kind().map(|k| k.default_grid()).unwrap_or_default()))
    }

    /// Checks every section a command might read.
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(LabError::config("workers must be at least 1"));
        }
        // TOML integers are signed, so larger seeds could not be written back.
        if self.seed > i64::MAX as u64 || self.sweep.seeds.iter().any(|&s| s > i64::MAX as u64) {
            return Err(LabError::config(format!("seeds must be at most {}", i64::MAX)));
        }
        self.mixture()?;
        self.head()?;
        self.experiment(self.edl_method()?)?;
        if self.method == "distill" {
            self.distill_method()?;
        } else {
            self.method()?;
        }
        self.sweep_kind()?;
        if self.sweep.seeds.is_empty() {
            return Err(LabError::config("sweep.seeds must not be empty"));
        }
        Ok(())
    }
}
