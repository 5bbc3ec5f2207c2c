//! Run configuration: a TOML file layered with `--section.key=value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mofit_core::attack::{EmbeddingConfig, SuiteConfig, SurrogateConfig, SurrogateMode};
use mofit_core::data::DatasetConfig;
use mofit_core::diffusion::{ImageShape, NoiseSchedule};
use mofit_core::metrics::FusionConfig;
use mofit_core::nn::Architecture;
use mofit_core::train::{BlurConfig, TrainConfig};
use mofit_core::{Error, Result};
use mofit_oracle::RemoteConfig;

pub const BUILD: &str = concat!("mofit-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_member: usize,
    pub n_holdout: usize,
    pub cond_dim: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            height: d.image.height,
            width: d.image.width,
            channels: d.image.channels,
            n_member: d.n_member,
            n_holdout: d.n_holdout,
            cond_dim: d.cond_dim,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub init_seed: u64,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = Architecture::default();
        Self {
            hidden: a.hidden,
            time_dim: a.time_dim,
            init_seed: 0,
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cfg_drop_prob: f64,
    pub blur: bool,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let b = BlurConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            cfg_drop_prob: t.cfg_drop_prob,
            blur: false,
            blur_sigma_min: b.sigma_range.0,
            blur_sigma_max: b.sigma_range.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub approx_fidelity: f64,
    /// `model_fitted`, `adversarial_max` or `random_uniform:<eps>`.
    pub mode: String,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            approx_fidelity: 0.5,
            mode: "model_fitted".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    pub t_star: usize,
    pub alpha0: f64,
    pub iters: usize,
    pub delta_init_range: f64,
    /// Negative disables early stopping.
    pub early_stop_loss: f64,
    pub eps_seed: u64,
    pub clamp: bool,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let s = SurrogateConfig::default();
        Self {
            t_star: s.t_star,
            alpha0: s.alpha0,
            iters: s.iters,
            delta_init_range: s.delta_init_range,
            early_stop_loss: -1.0,
            eps_seed: s.eps_seed,
            clamp: s.clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub lr: f64,
    pub iters: usize,
    /// Negative disables early stopping.
    pub early_stop_loss: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        let e = EmbeddingConfig::default();
        Self {
            lr: e.lr,
            iters: e.iters,
            early_stop_loss: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub gamma_step: f64,
    pub aux_column: String,
    /// Fraction of each class used to fit the robust scalers; 1 pools everything.
    pub calibration_fraction: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        let f = FusionConfig::default();
        Self {
            gamma_step: f.gamma_step,
            aux_column: f.aux_column,
            calibration_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub kde_grid_points: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { kde_grid_points: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// `host:port` of a remote oracle; empty audits the local checkpoint.
    pub endpoint: String,
    pub max_in_flight: usize,
    pub retries: usize,
    pub timeout_ms: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        let r = RemoteConfig::default();
        Self {
            endpoint: String::new(),
            max_in_flight: r.max_in_flight,
            retries: r.retries,
            timeout_ms: r.timeout_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub random_eps: Vec<f64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            random_eps: (1..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub eps_seeds: Vec<u64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            eps_seeds: vec![0, 1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub models: usize,
    pub probes: usize,
    pub h: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            models: 20,
            probes: 16,
            h: 1e-5,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub surrogate: SurrogateSection,
    pub embedding: EmbeddingSection,
    pub fusion: FusionSection,
    pub metrics: MetricsSection,
    pub oracle: OracleSection,
    pub ablate: AblateSection,
    pub stability: StabilitySection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("run"),
            dataset: Default::default(),
            model: Default::default(),
            train: Default::default(),
            attack: Default::default(),
            surrogate: Default::default(),
            embedding: Default::default(),
            fusion: Default::default(),
            metrics: Default::default(),
            oracle: Default::default(),
            ablate: Default::default(),
            stability: Default::default(),
            gradcheck: Default::default(),
        }
    }
}

fn opt(v: f64) -> Option<f64> {
    (v >= 0.0).then_some(v)
}

fn parse_value(raw: &str) -> toml::Value {
    // reuse TOML's own literal grammar; anything else is a bare string
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `section.key=value` overrides, and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config("config", format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::config("config", e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            let parts: Vec<&str> = key.split('.').collect();
            let (last, sections) = parts.split_last().expect("split yields one part");
            let mut cur = &mut table;
            for s in sections {
                cur = cur
                    .entry(s.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(key.as_str(), format!("`{s}` is not a section")))?;
            }
            cur.insert(last.to_string(), parse_value(raw));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.schedule()?;
        self.suite_config()?.surrogate.validate(self.model.steps)?;
        self.suite_config()?.embedding.validate()?;
        self.fusion_config().gamma_count()?;
        if !(0.0..=1.0).contains(&self.attack.approx_fidelity) {
            return Err(Error::config("attack.approx_fidelity", "must be in [0, 1]"));
        }
        if !(self.fusion.calibration_fraction > 0.0 && self.fusion.calibration_fraction <= 1.0) {
            return Err(Error::config("fusion.calibration_fraction", "must be in (0, 1]"));
        }
        if self.dataset.height * self.dataset.width * self.dataset.channels == 0 {
            return Err(Error::config("dataset", "image shape must be nonzero"));
        }
        if self.metrics.kde_grid_points < 2 {
            return Err(Error::config("metrics.kde_grid_points", "must be at least 2"));
        }
        if self.gradcheck.probes == 0 || !(self.gradcheck.h > 0.0) {
            return Err(Error::config("gradcheck", "probes ≥ 1 and h > 0 required"));
        }
        if self.stability.eps_seeds.is_empty() {
            return Err(Error::config("stability.eps_seeds", "must not be empty"));
        }
        if self.ablate.random_eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::config("ablate.random_eps", "noise levels must be non-negative"));
        }
        Ok(())
    }

    pub fn image(&self) -> ImageShape {
        ImageShape::new(self.dataset.height, self.dataset.width, self.dataset.channels)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            image: self.image(),
            n_member: self.dataset.n_member,
            n_holdout: self.dataset.n_holdout,
            cond_dim: self.dataset.cond_dim,
            seed: self.dataset.seed,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            image: self.image(),
            hidden: self.model.hidden.clone(),
            time_dim: self.model.time_dim,
            cond_dim: self.dataset.cond_dim,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.model.steps, self.model.beta_start, self.model.beta_end)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            cfg_drop_prob: t.cfg_drop_prob,
            blur_augment: t.blur.then_some(BlurConfig {
                sigma_range: (t.blur_sigma_min, t.blur_sigma_max),
            }),
            master_seed: self.master_seed,
        }
    }

    pub fn suite_config(&self) -> Result<SuiteConfig> {
        let s = &self.surrogate;
        let e = &self.embedding;
        Ok(SuiteConfig {
            surrogate: SurrogateConfig {
                t_star: s.t_star,
                alpha0: s.alpha0,
                iters: s.iters,
                delta_init_range: s.delta_init_range,
                early_stop_loss: opt(s.early_stop_loss),
                eps_seed: s.eps_seed,
                clamp: s.clamp,
            },
            embedding: EmbeddingConfig {
                lr: e.lr,
                iters: e.iters,
                early_stop_loss: opt(e.early_stop_loss),
            },
            mode: SurrogateMode::parse(&self.attack.mode)?,
            master_seed: self.master_seed,
        })
    }

    pub fn fusion_config(&self) -> FusionConfig {
        use mofit_core::metrics::Calibration;
        FusionConfig {
            gamma_step: self.fusion.gamma_step,
            aux_column: self.fusion.aux_column.clone(),
            calibration: if self.fusion.calibration_fraction >= 1.0 {
                Calibration::Pooled
            } else {
                Calibration::Subset {
                    fraction: self.fusion.calibration_fraction,
                }
            },
        }
    }

    pub fn remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            max_in_flight: self.oracle.max_in_flight,
            retries: self.oracle.retries,
            timeout_ms: self.oracle.timeout_ms,
        }
    }
}
