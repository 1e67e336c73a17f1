//! Experiment configuration: one JSON document that pins every knob of a
//! run. Parsing rejects unknown keys, and the canonical serialization is
//! hashed into every output file so results stay traceable to the exact
//! configuration that produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelMode;
use crate::checkpoint::hash_bytes;
use crate::denoiser::DenoiserModel;
use crate::jscc::{JointTrainConfig, JsccDecoder, JsccEncoder};
use crate::rng::{tags, RngStream};
use crate::schedule::{NoiseSchedule, TargetFactor};
use crate::source::{SourceKind, SourceSampler};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub alpha_first: f64,
    pub alpha_last: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_steps: 1000,
            alpha_first: 0.9999,
            alpha_last: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub kind: SourceKind,
    /// Mixture component count (gaussian_mixture only).
    pub components: usize,
    /// Mixture component spread (gaussian_mixture only).
    pub component_std: f64,
    /// Spike count (sparse_spike only).
    pub nonzeros: usize,
    /// Patch side length (tiny_image only; side^2 must equal n).
    pub side: usize,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::GaussianMixture,
            components: 4,
            component_std: 0.25,
            nonzeros: 16,
            side: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            time_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub snr_grid_db: Vec<f64>,
    pub mse_trials: usize,
    pub psnr_trials: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            mse_trials: 500,
            psnr_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistCheckConfig {
    pub sigma2_grid: Vec<f64>,
    pub trials: usize,
    /// Fault-injection hook: multiplies the channel noise draw. Anything
    /// other than 1.0 is a deliberately broken pipeline.
    pub noise_scale: f64,
}

impl Default for DistCheckConfig {
    fn default() -> Self {
        Self {
            sigma2_grid: vec![0.005, 0.05, 0.5],
            trials: 100_000,
            noise_scale: 1.0,
        }
    }
}

/// Everything a full experiment needs, JSON-serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Channel family used by the sweeps (training stages carry their own).
    pub mode: ChannelMode,
    /// Channel uses per transmission.
    pub k: usize,
    /// Source dimension.
    pub n: usize,
    pub schedule: ScheduleConfig,
    pub target_factor: TargetFactor,
    pub source: SourceConfig,
    pub denoiser: DenoiserConfig,
    /// Hidden widths of both codec networks.
    pub jscc_hidden: Vec<usize>,
    pub train: JointTrainConfig,
    pub sweep: SweepConfig,
    pub dist_check: DistCheckConfig,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: ChannelMode::Rayleigh,
            k: 32,
            n: 256,
            schedule: ScheduleConfig::default(),
            target_factor: TargetFactor::Sigma2,
            source: SourceConfig::default(),
            denoiser: DenoiserConfig::default(),
            jscc_hidden: vec![128, 128],
            train: JointTrainConfig::default(),
            sweep: SweepConfig::default(),
            dist_check: DistCheckConfig::default(),
            out_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 || self.n == 0 {
            return Err(ConfigError::Invalid(format!(
                "k and n must be >= 1, got k={} n={}",
                self.k, self.n
            )));
        }
        self.build_schedule()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.build_source(RngStream::new(0, 0))
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.sweep.snr_grid_db.is_empty() {
            return Err(ConfigError::Invalid("sweep.snr_grid_db is empty".into()));
        }
        if self.sweep.mse_trials == 0 || self.sweep.psnr_trials == 0 {
            return Err(ConfigError::Invalid(
                "sweep trial counts must be >= 1".into(),
            ));
        }
        if self
            .dist_check
            .sigma2_grid
            .iter()
            .any(|s| *s < 0.0 || !s.is_finite())
        {
            return Err(ConfigError::Invalid(
                "dist_check.sigma2_grid invalid".into(),
            ));
        }
        if self.dist_check.trials == 0 {
            return Err(ConfigError::Invalid(
                "dist_check.trials must be >= 1".into(),
            ));
        }
        if self.denoiser.time_dim == 0 {
            return Err(ConfigError::Invalid(
                "denoiser.time_dim must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Hash of the canonical serialization; embedded in every output file.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config always serializes");
        hash_bytes(canonical.as_bytes())
    }

    /// Root stream everything in a run derives from.
    pub fn root_stream(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule, crate::schedule::ScheduleError> {
        NoiseSchedule::linear(
            self.schedule.t_steps,
            self.schedule.alpha_first,
            self.schedule.alpha_last,
        )
    }

    pub fn build_source(&self, root: RngStream) -> Result<SourceSampler, ConfigError> {
        let setup = root.derive(tags::SOURCE_SETUP);
        let src = match self.source.kind {
            SourceKind::GaussianMixture => SourceSampler::gaussian_mixture(
                self.n,
                self.source.components,
                self.source.component_std,
                setup,
            ),
            SourceKind::SparseSpike => SourceSampler::sparse_spike(self.n, self.source.nonzeros),
            SourceKind::TinyImage => {
                if self.source.side * self.source.side != self.n {
                    return Err(ConfigError::Invalid(format!(
                        "tiny_image side {} squared must equal n={}",
                        self.source.side, self.n
                    )));
                }
                SourceSampler::tiny_image(self.source.side)
            }
        };
        src.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_denoiser(&self, root: RngStream) -> Result<DenoiserModel, ConfigError> {
        DenoiserModel::init_with(
            self.k,
            &self.denoiser.hidden,
            self.denoiser.time_dim,
            self.schedule.t_steps,
            root.derive(tags::DENOISER_INIT),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_encoder(&self, root: RngStream) -> Result<JsccEncoder, ConfigError> {
        JsccEncoder::init(
            self.n,
            self.k,
            &self.jscc_hidden,
            root.derive(tags::ENCODER_INIT),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_decoder(&self, root: RngStream) -> Result<JsccDecoder, ConfigError> {
        JsccDecoder::init(
            self.n,
            self.k,
            &self.jscc_hidden,
            root.derive(tags::DECODER_INIT),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
