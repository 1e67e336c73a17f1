//! Channel-matched denoising diffusion for wireless transmission.
//!
//! The receiver-side residual noise after MMSE equalization of a fading (or
//! AWGN) channel has a known per-dimension Gaussian shape. This crate builds
//! a diffusion model whose forward process is matched to exactly that shape,
//! so a trained noise predictor can pick up the actual receiver output at an
//! interior step of the schedule and denoise it in a handful of
//! deterministic reverse steps.
//!
//! The pieces, bottom to top:
//!
//! - [`rng`]: seeded, replayable random streams (nothing reads OS entropy).
//! - [`signal`] / [`channel`]: complex symbols over Rayleigh/AWGN channels,
//!   MMSE equalization, and the equalized-output reparameterization with its
//!   closed-form moments.
//! - [`schedule`] / [`diffusion`]: the retention schedule, the
//!   channel-weighted forward process, noise-prediction training, and the
//!   deterministic truncated sampler.
//! - [`nn`] / [`denoiser`]: a from-scratch dense network with Adam, wrapped
//!   as a conditional noise predictor (input, channel gains, step embedding).
//! - [`source`] / [`jscc`]: toy sources and a variational encoder/decoder
//!   pair with the three-stage joint training procedure.
//! - [`bench`] / [`config`] / [`pipeline`] / [`checkpoint`]: SNR sweeps with
//!   paired arms, JSON configuration with hash embedding, binary
//!   checkpoints, and the reproducible end-to-end run.

pub mod bench;
pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod jscc;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod signal;
pub mod source;

pub use bench::{
    check_distribution, gain_db, mse_per_dim, mse_sweep, psnr, psnr_sweep, sweep_trial, BenchError,
    DistCheckReport, SweepRecord,
};
pub use channel::{
    mmse_equalize, receive_pipeline, receive_reparam, sample_channel, sigma2_from_snr_db,
    snr_db_from_sigma2, transmit, ChannelError, ChannelMode, ChannelRealization,
};
pub use checkpoint::{
    load_decoder, load_denoiser, load_encoder, save_decoder, save_denoiser, save_encoder,
    CheckpointError,
};
pub use config::{ConfigError, ExperimentConfig};
pub use denoiser::{DenoiserError, DenoiserModel, EpsilonPredictor};
pub use diffusion::{
    cddm_loss, estimate_x0, forward_closed, forward_step, make_x0, reverse_step, sample,
    train_cddm, DiffusionError, SignalSource, TrainConfig, TrainLog,
};
pub use jscc::{
    stage1_loss, stage3_loss, train_joint, JointArtifacts, JointTrainConfig, JsccDecoder,
    JsccEncoder, JsccError,
};
pub use pipeline::{run_pipeline, Manifest, PipelineError, PipelineOutcome};
pub use rng::RngStream;
pub use schedule::{select_m, NoiseSchedule, ScheduleError, TargetFactor};
pub use signal::{ComplexSignal, RealSignal, SignalError};
pub use source::{SourceKind, SourceSampler};
