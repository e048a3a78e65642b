//! Experiment configuration files.
//!
//! A config is a TOML document with an `[experiment]` table naming the kind,
//! seeds and output directory, plus one section for the kind's settings.
//! Loading fills in every default, so the returned record is complete.

use std::path::{Path, PathBuf};

use forgetting::attacks::Statistic;
use forgetting::kmeans::ClusterConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    ForgetPoison,
    ForgetInject,
    DeterministicMi,
    MeanEstTheory,
    KmeansCx,
    ExposureSweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::ForgetPoison => "forget_poison",
            Kind::ForgetInject => "forget_inject",
            Kind::DeterministicMi => "deterministic_mi",
            Kind::MeanEstTheory => "mean_est_theory",
            Kind::KmeansCx => "kmeans_cx",
            Kind::ExposureSweep => "exposure_sweep",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub kind: Kind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Logistic,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub classes: usize,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKind::Logistic, classes: 2, init_scale: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    TwoClass { dim: usize, n: usize, separation: f64 },
    Gaussian { dim: usize, n: usize, mean: f64, scale: f64 },
    File { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::TwoClass { dim: 20, n: 2000, separation: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    #[default]
    Shuffled,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub ordering: OrderingKind,
    pub lr: f64,
    /// `(step, factor)` pairs; the rate is multiplied by `factor` from `step` on.
    pub decay: Vec<(usize, f64)>,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            batch_size: 100,
            ordering: OrderingKind::Shuffled,
            lr: 0.1,
            decay: Vec::new(),
            momentum: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanaryConfig {
    pub count: usize,
    pub scale: f64,
}

impl Default for CanaryConfig {
    fn default() -> Self {
        Self { count: 5, scale: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    Threshold,
    Exposure,
    Simulation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    #[default]
    Checkpoint,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub fpr_target: f64,
    pub calibration: CalibrationMode,
    pub statistic: Statistic,
    /// Held-out canaries; with the threshold attack a nonzero count scores
    /// canaries against these on the treated model instead of pairing.
    pub holdout: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Threshold,
            fpr_target: forgetting::attacks::DEFAULT_FPR_TARGET,
            calibration: CalibrationMode::Checkpoint,
            statistic: Statistic::LogitMargin,
            holdout: 0,
        }
    }
}

/// Settings shared by the paired-run experiment kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgetConfig {
    pub model: ModelConfig,
    pub data: DataSource,
    pub train: TrainConfig,
    pub canaries: CanaryConfig,
    pub attack: AttackConfig,
    /// Canary steps per injection (ignored when poisoning).
    pub repeats: Vec<usize>,
    /// Injection steps, or removal steps when poisoning.
    pub injection_steps: Vec<usize>,
    pub eval_every: usize,
}

impl Default for ForgetConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataSource::default(),
            train: TrainConfig::default(),
            canaries: CanaryConfig::default(),
            attack: AttackConfig::default(),
            repeats: vec![1],
            injection_steps: vec![100],
            eval_every: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub eta: f64,
    pub ks: Vec<usize>,
    pub trials: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { eta: 0.1, ks: vec![1, 10, 100, 1000], trials: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// Injected vector `v`.
    pub v: Vec<f64>,
    /// Data covariance as rows; identity when empty.
    pub sigma: Vec<Vec<f64>>,
    /// Data mean; zeros when empty.
    pub mu: Vec<f64>,
    /// Starting parameters; zeros when empty.
    pub theta0: Vec<f64>,
    pub etas: Vec<f64>,
    pub ks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub monte_carlo: MonteCarloConfig,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            v: vec![1.0],
            sigma: Vec::new(),
            mu: Vec::new(),
            theta0: Vec::new(),
            etas: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.49],
            ks: vec![1, 10, 100, 1000],
            alphas: vec![1.5, 2.0, 10.0],
            monte_carlo: MonteCarloConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureConfig {
    pub dim: usize,
    pub n: usize,
    pub secrets: usize,
    pub injected: usize,
    pub secret_scale: f64,
    pub repeats: Vec<usize>,
    pub references: usize,
    pub subsample: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub injection_step: usize,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n: 1000,
            secrets: 256,
            injected: 8,
            secret_scale: 1.0,
            repeats: vec![1, 4],
            references: 11,
            subsample: 0.8,
            total_steps: 400,
            batch_size: 50,
            lr: 0.05,
            injection_step: 380,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictConfig {
    pub metric: String,
    pub alpha: f64,
    /// Steps after the marker from which the metric must stay at or below
    /// `alpha`; the last recorded step when absent.
    pub offset: Option<usize>,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        Self { metric: "accuracy".into(), alpha: 0.55, offset: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forget: Option<ForgetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmeans: Option<ClusterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<ExposureConfig>,
    #[serde(default)]
    pub verdict: VerdictConfig,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config: ExperimentConfig = toml::from_str(text)?;
    config.materialize()?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    fn materialize(&mut self) -> Result<(), ConfigError> {
        let kind = self.experiment.kind;
        let uses_forget = matches!(kind, Kind::ForgetPoison | Kind::ForgetInject | Kind::DeterministicMi);
        let sections = [
            ("forget", self.forget.is_some(), uses_forget),
            ("theory", self.theory.is_some(), kind == Kind::MeanEstTheory),
            ("kmeans", self.kmeans.is_some(), kind == Kind::KmeansCx),
            ("exposure", self.exposure.is_some(), kind == Kind::ExposureSweep),
        ];
        for (name, present, used) in sections {
            if present && !used {
                return Err(invalid(format!("section [{name}] is not used by kind {}", kind.name())));
            }
        }
        if uses_forget {
            self.forget.get_or_insert_with(ForgetConfig::default);
        }
        match kind {
            Kind::MeanEstTheory => {
                let theory = self.theory.get_or_insert_with(TheoryConfig::default);
                let d = theory.v.len();
                if theory.sigma.is_empty() {
                    theory.sigma = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
                }
                if theory.mu.is_empty() {
                    theory.mu = vec![0.0; d];
                }
                if theory.theta0.is_empty() {
                    theory.theta0 = vec![0.0; d];
                }
            }
            Kind::KmeansCx => {
                self.kmeans.get_or_insert_with(ClusterConfig::default);
            }
            Kind::ExposureSweep => {
                self.exposure.get_or_insert_with(ExposureConfig::default);
            }
            _ => {}
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.verdict.alpha.is_finite()) {
            return Err(invalid("verdict.alpha must be finite"));
        }
        if let Some(f) = &self.forget {
            validate_forget(f, self.experiment.kind)?;
        }
        if let Some(t) = &self.theory {
            validate_theory(t)?;
        }
        if let Some(k) = &self.kmeans {
            k.validate().map_err(|e| invalid(format!("kmeans: {e}")))?;
        }
        if let Some(e) = &self.exposure {
            validate_exposure(e)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the materialized config, with
    /// the output directory left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.experiment.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn validate_forget(f: &ForgetConfig, kind: Kind) -> Result<(), ConfigError> {
    let t = &f.train;
    if t.total_steps == 0 || t.batch_size == 0 {
        return Err(invalid("train.total_steps and train.batch_size must be positive"));
    }
    if !(t.lr > 0.0 && t.lr.is_finite()) {
        return Err(invalid(format!("train.lr must be positive, got {}", t.lr)));
    }
    if !(0.0..1.0).contains(&t.momentum) {
        return Err(invalid(format!("train.momentum must lie in [0, 1), got {}", t.momentum)));
    }
    if f.eval_every == 0 {
        return Err(invalid("eval_every must be positive"));
    }
    if let Some(&s) = f.injection_steps.iter().find(|&&s| s > t.total_steps) {
        return Err(invalid(format!("injection step {s} exceeds train.total_steps {}", t.total_steps)));
    }
    if kind != Kind::ForgetPoison && f.repeats.contains(&0) {
        return Err(invalid("repeats must be at least 1"));
    }
    if !(f.attack.fpr_target > 0.0 && f.attack.fpr_target < 1.0) {
        return Err(invalid(format!("attack.fpr_target must lie in (0, 1), got {}", f.attack.fpr_target)));
    }
    if f.attack.kind == AttackKind::Exposure && f.attack.holdout == 0 {
        return Err(invalid("the exposure attack needs attack.holdout > 0"));
    }
    if f.model.kind == ModelKind::Logistic && f.model.classes < 2 {
        return Err(invalid("a logistic model needs at least 2 classes"));
    }
    match &f.data {
        DataSource::TwoClass { dim, n, .. } | DataSource::Gaussian { dim, n, .. } if *dim == 0 || *n == 0 => {
            Err(invalid("synthetic data needs dim > 0 and n > 0"))
        }
        DataSource::TwoClass { .. } if f.model.kind == ModelKind::Mean => {
            Err(invalid("two_class data is labeled; use gaussian data with the mean model"))
        }
        DataSource::Gaussian { .. } if f.model.kind == ModelKind::Logistic => {
            Err(invalid("gaussian data is unlabeled; use two_class data with the logistic model"))
        }
        _ => Ok(()),
    }
}

fn validate_eta(eta: f64, what: &str) -> Result<(), ConfigError> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(invalid(format!("{what} {eta} must lie in (0, 1/2)")));
    }
    Ok(())
}

fn validate_theory(t: &TheoryConfig) -> Result<(), ConfigError> {
    let d = t.v.len();
    if d == 0 {
        return Err(invalid("theory.v must be nonempty"));
    }
    if t.sigma.len() != d || t.sigma.iter().any(|row| row.len() != d) {
        return Err(invalid(format!("theory.sigma must be {d}x{d}")));
    }
    if t.mu.len() != d || t.theta0.len() != d {
        return Err(invalid(format!("theory.mu and theory.theta0 must have length {d}")));
    }
    for &eta in &t.etas {
        validate_eta(eta, "learning rate")?;
    }
    validate_eta(t.monte_carlo.eta, "monte_carlo.eta")?;
    if t.ks.contains(&0) || t.monte_carlo.ks.contains(&0) {
        return Err(invalid("step counts must be at least 1"));
    }
    if let Some(a) = t.alphas.iter().find(|&&a| !(a > 1.0)) {
        return Err(invalid(format!("Rényi order {a} must exceed 1")));
    }
    if t.monte_carlo.trials < 100 {
        return Err(invalid("monte_carlo.trials must be at least 100"));
    }
    Ok(())
}

fn validate_exposure(e: &ExposureConfig) -> Result<(), ConfigError> {
    if e.dim == 0 || e.n == 0 || e.batch_size == 0 || e.total_steps == 0 {
        return Err(invalid("exposure: dim, n, batch_size and total_steps must be positive"));
    }
    if e.secrets < 2 || e.injected == 0 || e.injected > e.secrets {
        return Err(invalid("exposure: need 2 <= secrets and 1 <= injected <= secrets"));
    }
    if e.references == 0 {
        return Err(invalid("exposure: need at least one reference model"));
    }
    if !(e.subsample > 0.0 && e.subsample <= 1.0) {
        return Err(invalid("exposure: subsample must lie in (0, 1]"));
    }
    if e.injection_step > e.total_steps {
        return Err(invalid("exposure: injection_step exceeds total_steps"));
    }
    if e.repeats.contains(&0) {
        return Err(invalid("exposure: repeats must be at least 1"));
    }
    validate_eta(e.lr, "exposure.lr")
}
