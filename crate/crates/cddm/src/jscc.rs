//! Variational codec mapping source vectors to channel symbols and back,
//! plus the three-stage joint training procedure.
//!
//! The encoder is a dense network with a stochastic head: it emits a mean
//! and a nonnegative spread per channel dimension and samples the
//! transmitted signal from them. Transmit power is enforced per batch by
//! rescaling whenever the average complex-symbol power exceeds one; the
//! scale is treated as a constant in the backward pass. The decoder is a
//! plain dense network from equalized channel output back to source space.
//!
//! Joint training runs three stages: (1) encoder+decoder through the raw
//! channel with a KL regularizer on the stochastic head, (2) the noise
//! predictor on encoded signals with the encoder frozen, (3) the decoder
//! alone through the full channel + denoiser chain at a fixed operating
//! noise level. Freezes are asserted with parameter hashes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    receive_pipeline, receive_reparam_with_eps, sample_channel, sigma2_from_snr_db, ChannelError,
    ChannelMode, ChannelRealization,
};
use crate::checkpoint::hash_f64s;
use crate::denoiser::DenoiserModel;
use crate::diffusion::{
    lr_at, sample, train_cddm, DiffusionError, SignalSource, TrainConfig, TrainLog,
};
use crate::nn::{AdamState, Mlp, NnError};
use crate::rng::{standard_normal_vec, tags, RngStream};
use crate::schedule::{select_m, NoiseSchedule, ScheduleError, TargetFactor};
use crate::signal::RealSignal;
use crate::source::SourceSampler;

/// Default weight of the KL regularizer in stage 1.
pub const DEFAULT_KL_WEIGHT: f64 = 5e-5;

#[derive(Debug, Error, PartialEq)]
pub enum JsccError {
    #[error("bad codec dims n={n}, k={k}")]
    BadDims { n: usize, k: usize },
    #[error("input has {got} dims, expected {expected}")]
    BadInput { got: usize, expected: usize },
    #[error("batch lengths differ: {a} vs {b}")]
    BatchMismatch { a: usize, b: usize },
    #[error("{stage} diverged at step {step}: loss {loss}")]
    Divergence {
        stage: &'static str,
        step: usize,
        loss: f64,
    },
    #[error("bad joint training config: {0}")]
    BadConfig(String),
    #[error("restored codec parts inconsistent: {0}")]
    BadParts(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// KL divergence of a diagonal Gaussian against the standard normal,
/// summed over dimensions: sum of (mu^2 + sigma^2 - 1 - ln sigma^2) / 2.
pub fn kl_diag_gaussian(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// How per-example squared error is reduced over source dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    fn norm(self, n: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0 / n as f64,
            Reduction::Sum => 1.0,
        }
    }
}

/// Encoder from source space to channel symbols, with a stochastic head.
#[derive(Debug, Clone, PartialEq)]
pub struct JsccEncoder {
    n: usize,
    k: usize,
    net: Mlp,
    params: Vec<f64>,
    opt: AdamState,
    stochastic: bool,
}

impl JsccEncoder {
    pub fn init(
        n: usize,
        k: usize,
        hidden: &[usize],
        stream: RngStream,
    ) -> Result<Self, JsccError> {
        if n == 0 || k == 0 {
            return Err(JsccError::BadDims { n, k });
        }
        let net = Mlp::new(n, hidden, 4 * k);
        let params = net.init_params(&mut stream.rng());
        let opt = AdamState::new(params.len());
        Ok(Self {
            n,
            k,
            net,
            params,
            opt,
            stochastic: true,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n: usize,
        k: usize,
        hidden: &[usize],
        stochastic: bool,
        params: Vec<f64>,
        opt_m: Vec<f64>,
        opt_v: Vec<f64>,
        step_count: u64,
    ) -> Result<Self, JsccError> {
        if n == 0 || k == 0 {
            return Err(JsccError::BadDims { n, k });
        }
        let net = Mlp::new(n, hidden, 4 * k);
        if params.len() != net.param_count() {
            return Err(JsccError::BadParts(format!(
                "encoder params length {} != {}",
                params.len(),
                net.param_count()
            )));
        }
        if opt_m.len() != params.len() || opt_v.len() != params.len() {
            return Err(JsccError::BadParts(
                "encoder optimizer length mismatch".into(),
            ));
        }
        Ok(Self {
            n,
            k,
            net,
            params,
            opt: AdamState::from_parts(opt_m, opt_v, step_count),
            stochastic,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hidden_widths(&self) -> &[usize] {
        self.net.hidden()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn opt_m(&self) -> &[f64] {
        self.opt.m()
    }

    pub fn opt_v(&self) -> &[f64] {
        self.opt.v()
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step_count()
    }

    pub fn stochastic(&self) -> bool {
        self.stochastic
    }

    /// Disable the stochastic head so the encoder emits its mean directly.
    pub fn set_stochastic(&mut self, stochastic: bool) {
        self.stochastic = stochastic;
    }

    fn opt_step(&mut self, grads: &[f64], lr: f64) -> Result<(), NnError> {
        self.opt.step(&mut self.params, grads, lr)
    }

    /// Mean and spread of the transmit distribution for one source vector.
    pub fn heads(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>), JsccError> {
        if s.len() != self.n {
            return Err(JsccError::BadInput {
                got: s.len(),
                expected: self.n,
            });
        }
        let out = self.net.forward(&self.params, s)?;
        let mu = out[..2 * self.k].to_vec();
        let sigma = out[2 * self.k..].iter().map(|&p| softplus(p)).collect();
        Ok((mu, sigma))
    }

    /// Encode a batch. Samples each signal from the head distribution and
    /// rescales the whole batch when its average complex-symbol power
    /// exceeds one; also returns the scale applied.
    pub fn encode_batch(
        &self,
        batch: &[Vec<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<RealSignal>, f64), JsccError> {
        let mut xs = Vec::with_capacity(batch.len());
        for s in batch {
            let (mu, sigma) = self.heads(s)?;
            let x: Vec<f64> = if self.stochastic {
                let xi = standard_normal_vec(rng, 2 * self.k);
                (0..2 * self.k).map(|i| mu[i] + sigma[i] * xi[i]).collect()
            } else {
                mu
            };
            xs.push(RealSignal::new(x).expect("2k >= 2"));
        }
        let scale = normalize_batch_power(&mut xs);
        Ok((xs, scale))
    }

    /// Encode one source vector (a batch of one).
    pub fn encode(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Result<RealSignal, JsccError> {
        let (mut xs, _) = self.encode_batch(std::slice::from_ref(&s.to_vec()), rng)?;
        Ok(xs.pop().expect("one signal"))
    }
}

/// Average power per complex symbol over a batch of transmit signals.
pub fn batch_power(xs: &[RealSignal]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let k = xs[0].k();
    let total: f64 = xs.iter().flat_map(|x| x.values()).map(|v| v * v).sum();
    total / (xs.len() * k) as f64
}

/// Rescale a batch in place so its average complex-symbol power is at most
/// one; returns the scale applied (1 when already within the constraint).
pub fn normalize_batch_power(xs: &mut [RealSignal]) -> f64 {
    let power = batch_power(xs);
    if power <= 1.0 {
        return 1.0;
    }
    let scale = (1.0 / power).sqrt();
    for x in xs.iter_mut() {
        for v in x.values_mut() {
            *v *= scale;
        }
    }
    scale
}

/// Decoder from equalized channel output back to source space.
#[derive(Debug, Clone, PartialEq)]
pub struct JsccDecoder {
    n: usize,
    k: usize,
    net: Mlp,
    params: Vec<f64>,
    opt: AdamState,
}

impl JsccDecoder {
    pub fn init(
        n: usize,
        k: usize,
        hidden: &[usize],
        stream: RngStream,
    ) -> Result<Self, JsccError> {
        if n == 0 || k == 0 {
            return Err(JsccError::BadDims { n, k });
        }
        let net = Mlp::new(2 * k, hidden, n);
        let params = net.init_params(&mut stream.rng());
        let opt = AdamState::new(params.len());
        Ok(Self {
            n,
            k,
            net,
            params,
            opt,
        })
    }

    pub fn from_parts(
        n: usize,
        k: usize,
        hidden: &[usize],
        params: Vec<f64>,
        opt_m: Vec<f64>,
        opt_v: Vec<f64>,
        step_count: u64,
    ) -> Result<Self, JsccError> {
        if n == 0 || k == 0 {
            return Err(JsccError::BadDims { n, k });
        }
        let net = Mlp::new(2 * k, hidden, n);
        if params.len() != net.param_count() {
            return Err(JsccError::BadParts(format!(
                "decoder params length {} != {}",
                params.len(),
                net.param_count()
            )));
        }
        if opt_m.len() != params.len() || opt_v.len() != params.len() {
            return Err(JsccError::BadParts(
                "decoder optimizer length mismatch".into(),
            ));
        }
        Ok(Self {
            n,
            k,
            net,
            params,
            opt: AdamState::from_parts(opt_m, opt_v, step_count),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hidden_widths(&self) -> &[usize] {
        self.net.hidden()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn opt_m(&self) -> &[f64] {
        self.opt.m()
    }

    pub fn opt_v(&self) -> &[f64] {
        self.opt.v()
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step_count()
    }

    fn opt_step(&mut self, grads: &[f64], lr: f64) -> Result<(), NnError> {
        self.opt.step(&mut self.params, grads, lr)
    }

    /// Deterministic reconstruction of a source vector.
    pub fn decode(&self, y: &RealSignal) -> Result<Vec<f64>, JsccError> {
        if y.len() != 2 * self.k {
            return Err(JsccError::BadInput {
                got: y.len(),
                expected: 2 * self.k,
            });
        }
        Ok(self.net.forward(&self.params, y.values())?)
    }
}

/// Stage-1 objective on one batch: reconstruction error through the raw
/// channel plus `lambda` times the head KL, averaged over the batch.
pub fn stage1_loss(
    enc: &JsccEncoder,
    dec: &JsccDecoder,
    s_batch: &[Vec<f64>],
    ch_batch: &[ChannelRealization],
    lambda: f64,
    red: Reduction,
    rng: &mut ChaCha8Rng,
) -> Result<f64, JsccError> {
    if s_batch.len() != ch_batch.len() {
        return Err(JsccError::BatchMismatch {
            a: s_batch.len(),
            b: ch_batch.len(),
        });
    }
    if s_batch.is_empty() {
        return Ok(0.0);
    }
    let mut kls = Vec::with_capacity(s_batch.len());
    let mut xs = Vec::with_capacity(s_batch.len());
    for s in s_batch {
        let (mu, sigma) = enc.heads(s)?;
        kls.push(kl_diag_gaussian(&mu, &sigma));
        let x: Vec<f64> = if enc.stochastic {
            let xi = standard_normal_vec(rng, 2 * enc.k);
            (0..2 * enc.k).map(|i| mu[i] + sigma[i] * xi[i]).collect()
        } else {
            mu
        };
        xs.push(RealSignal::new(x).expect("2k >= 2"));
    }
    normalize_batch_power(&mut xs);
    let norm = red.norm(enc.n);
    let mut acc = 0.0;
    for b in 0..s_batch.len() {
        let eps = standard_normal_vec(rng, 2 * enc.k);
        let y_r = receive_reparam_with_eps(&xs[b], &ch_batch[b], &eps)?;
        let s_hat = dec.decode(&y_r)?;
        let mse: f64 = s_hat
            .iter()
            .zip(&s_batch[b])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * norm;
        acc += mse + lambda * kls[b];
    }
    Ok(acc / s_batch.len() as f64)
}

/// Stage-3 objective: plain reconstruction error of decoded signals against
/// their sources, averaged over the batch.
pub fn stage3_loss(
    dec: &JsccDecoder,
    s_batch: &[Vec<f64>],
    y_batch: &[RealSignal],
    red: Reduction,
) -> Result<f64, JsccError> {
    if s_batch.len() != y_batch.len() {
        return Err(JsccError::BatchMismatch {
            a: s_batch.len(),
            b: y_batch.len(),
        });
    }
    if s_batch.is_empty() {
        return Ok(0.0);
    }
    let norm = red.norm(dec.n);
    let mut acc = 0.0;
    for (s, y) in s_batch.iter().zip(y_batch) {
        let s_hat = dec.decode(y)?;
        acc += s_hat
            .iter()
            .zip(s)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * norm;
    }
    Ok(acc / s_batch.len() as f64)
}

/// Adapter exposing "source draw, then encode" as a training signal source
/// for the noise predictor. The encoder is borrowed immutably, which is the
/// stage-2 freeze by construction.
pub struct EncodedSource<'a> {
    pub enc: &'a JsccEncoder,
    pub src: &'a SourceSampler,
}

impl SignalSource for EncodedSource<'_> {
    fn k(&self) -> usize {
        self.enc.k
    }

    fn draw_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<RealSignal> {
        let s_batch = self.src.sample_batch(count, rng);
        let (xs, _) = self
            .enc
            .encode_batch(&s_batch, rng)
            .expect("sampler dim fixed to encoder input");
        xs
    }
}

/// Knobs for the three-stage joint run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointTrainConfig {
    pub stage1_steps: usize,
    pub stage1_batch: usize,
    pub stage1_lr: f64,
    /// Stage-1 noise level is redrawn per batch, uniform in dB.
    pub stage1_snr_range_db: (f64, f64),
    pub lambda: f64,
    pub stage2: TrainConfig,
    pub stage3_steps: usize,
    pub stage3_batch: usize,
    pub stage3_lr: f64,
    /// Fixed operating noise level for stage 3 (and the truncation pick).
    pub stage3_snr_db: f64,
    /// Channel family for stages 1 and 3.
    pub mode: ChannelMode,
    pub target_factor: TargetFactor,
    pub reduction: Reduction,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            stage1_steps: 3000,
            stage1_batch: 32,
            stage1_lr: 1e-3,
            stage1_snr_range_db: (0.0, 25.0),
            lambda: DEFAULT_KL_WEIGHT,
            stage2: TrainConfig::default(),
            stage3_steps: 400,
            stage3_batch: 16,
            stage3_lr: 1e-3,
            stage3_snr_db: 5.0,
            mode: ChannelMode::Rayleigh,
            target_factor: TargetFactor::Sigma2,
            reduction: Reduction::Mean,
        }
    }
}

impl JointTrainConfig {
    pub fn validate(&self) -> Result<(), JsccError> {
        if self.stage1_batch == 0 || self.stage3_batch == 0 {
            return Err(JsccError::BadConfig("batch sizes must be >= 1".into()));
        }
        for (name, lr) in [("stage1_lr", self.stage1_lr), ("stage3_lr", self.stage3_lr)] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(JsccError::BadConfig(format!("bad {name}: {lr}")));
            }
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(JsccError::BadConfig(format!("bad lambda {}", self.lambda)));
        }
        let (lo, hi) = self.stage1_snr_range_db;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(JsccError::BadConfig(format!("bad snr range {lo}..{hi}")));
        }
        if !self.stage3_snr_db.is_finite() {
            return Err(JsccError::BadConfig("bad stage3 snr".into()));
        }
        self.stage2.validate()?;
        Ok(())
    }
}

/// One logged training step of stage 1 or 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointTrainLog {
    pub stage1: Vec<StagePoint>,
    pub stage2: TrainLog,
    pub stage3: Vec<StagePoint>,
}

/// Everything the joint run produces. `stage1_decoder` is the decoder as of
/// the stage-1 boundary — the receiver used when benchmarking without the
/// denoiser — while `decoder` is the stage-3 result.
#[derive(Debug, Clone, PartialEq)]
pub struct JointArtifacts {
    pub encoder: JsccEncoder,
    pub decoder: JsccDecoder,
    pub stage1_decoder: JsccDecoder,
    pub model: DenoiserModel,
    pub log: JointTrainLog,
}

/// Train encoder+decoder through the raw channel (stage 1).
fn run_stage1(
    enc: &mut JsccEncoder,
    dec: &mut JsccDecoder,
    src: &SourceSampler,
    cfg: &JointTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StagePoint>, JsccError> {
    let k2 = 2 * enc.k;
    let norm = cfg.reduction.norm(enc.n);
    let (lo, hi) = cfg.stage1_snr_range_db;
    let mut points = Vec::with_capacity(cfg.stage1_steps);
    for step in 0..cfg.stage1_steps {
        let snr_db = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let sigma2 = sigma2_from_snr_db(snr_db);
        let s_batch = src.sample_batch(cfg.stage1_batch, rng);
        // encoder forward, keeping per-example caches for the backward pass
        let mut caches = Vec::with_capacity(s_batch.len());
        let mut mus = Vec::with_capacity(s_batch.len());
        let mut sigmas = Vec::with_capacity(s_batch.len());
        let mut pres = Vec::with_capacity(s_batch.len());
        let mut xis = Vec::with_capacity(s_batch.len());
        let mut xs = Vec::with_capacity(s_batch.len());
        for s in &s_batch {
            let (out, cache) = enc.net.forward_cached(&enc.params, s)?;
            let mu = out[..k2].to_vec();
            let pre = out[k2..].to_vec();
            let sigma: Vec<f64> = pre.iter().map(|&p| softplus(p)).collect();
            let xi = if enc.stochastic {
                standard_normal_vec(rng, k2)
            } else {
                vec![0.0; k2]
            };
            let x: Vec<f64> = (0..k2).map(|i| mu[i] + sigma[i] * xi[i]).collect();
            xs.push(RealSignal::new(x).expect("2k >= 2"));
            caches.push(cache);
            mus.push(mu);
            sigmas.push(sigma);
            pres.push(pre);
            xis.push(xi);
        }
        // power constraint; the scale is a constant to the backward pass
        let scale = normalize_batch_power(&mut xs);
        let mut enc_grads = vec![0.0; enc.params.len()];
        let mut dec_grads = vec![0.0; dec.params.len()];
        let mut loss_acc = 0.0;
        let slope = scale / (1.0 + sigma2).sqrt();
        for b in 0..s_batch.len() {
            let ch = sample_channel(cfg.mode, enc.k, sigma2, rng)?;
            let eps = standard_normal_vec(rng, k2);
            let y_r = receive_reparam_with_eps(&xs[b], &ch, &eps)?;
            let (s_hat, dcache) = dec.net.forward_cached(&dec.params, y_r.values())?;
            let mut mse = 0.0;
            let mut g_shat = vec![0.0; dec.n];
            for i in 0..dec.n {
                let r = s_hat[i] - s_batch[b][i];
                mse += r * r;
                g_shat[i] = 2.0 * norm * r;
            }
            loss_acc += mse * norm + cfg.lambda * kl_diag_gaussian(&mus[b], &sigmas[b]);
            let g_y = dec
                .net
                .backward(&dec.params, &dcache, &g_shat, &mut dec_grads);
            let mut g_out = vec![0.0; 2 * k2];
            for i in 0..k2 {
                let g_x = g_y[i] * ch.w_s()[i] * slope;
                g_out[i] = g_x + cfg.lambda * mus[b][i];
                let g_sigma = g_x * xis[b][i] + cfg.lambda * (sigmas[b][i] - 1.0 / sigmas[b][i]);
                g_out[k2 + i] = g_sigma * sigmoid(pres[b][i]);
            }
            enc.net
                .backward(&enc.params, &caches[b], &g_out, &mut enc_grads);
        }
        let inv_b = 1.0 / s_batch.len() as f64;
        let loss = loss_acc * inv_b;
        if !loss.is_finite() {
            return Err(JsccError::Divergence {
                stage: "stage1",
                step,
                loss,
            });
        }
        for g in &mut enc_grads {
            *g *= inv_b;
        }
        for g in &mut dec_grads {
            *g *= inv_b;
        }
        let lr = lr_at(cfg.stage1_lr, step, cfg.stage1_steps);
        enc.opt_step(&enc_grads, lr)?;
        dec.opt_step(&dec_grads, lr)?;
        points.push(StagePoint { step, loss });
    }
    Ok(points)
}

/// Retrain the decoder through the full channel + denoiser chain (stage 3).
fn run_stage3(
    enc: &JsccEncoder,
    dec: &mut JsccDecoder,
    model: &DenoiserModel,
    src: &SourceSampler,
    s: &NoiseSchedule,
    cfg: &JointTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StagePoint>, JsccError> {
    let sigma2 = sigma2_from_snr_db(cfg.stage3_snr_db);
    let m = select_m(s, sigma2, cfg.target_factor)?;
    let norm = cfg.reduction.norm(dec.n);
    let mut points = Vec::with_capacity(cfg.stage3_steps);
    for step in 0..cfg.stage3_steps {
        let s_batch = src.sample_batch(cfg.stage3_batch, rng);
        let (xs, _) = enc.encode_batch(&s_batch, rng)?;
        let mut dec_grads = vec![0.0; dec.params.len()];
        let mut loss_acc = 0.0;
        for b in 0..s_batch.len() {
            let ch = sample_channel(cfg.mode, enc.k, sigma2, rng)?;
            let y_r = receive_pipeline(&xs[b], &ch, rng)?;
            let y_hat = sample(model, &y_r, &ch, s, m)?;
            let (s_hat, dcache) = dec.net.forward_cached(&dec.params, y_hat.values())?;
            let mut g_shat = vec![0.0; dec.n];
            let mut mse = 0.0;
            for i in 0..dec.n {
                let r = s_hat[i] - s_batch[b][i];
                mse += r * r;
                g_shat[i] = 2.0 * norm * r;
            }
            loss_acc += mse * norm;
            dec.net
                .backward(&dec.params, &dcache, &g_shat, &mut dec_grads);
        }
        let inv_b = 1.0 / s_batch.len() as f64;
        let loss = loss_acc * inv_b;
        if !loss.is_finite() {
            return Err(JsccError::Divergence {
                stage: "stage3",
                step,
                loss,
            });
        }
        for g in &mut dec_grads {
            *g *= inv_b;
        }
        dec.opt_step(&dec_grads, lr_at(cfg.stage3_lr, step, cfg.stage3_steps))?;
        points.push(StagePoint { step, loss });
    }
    Ok(points)
}

/// Rerun stage 3 alone against a fixed encoder and noise predictor, e.g.
/// to retune the decoder for a different operating noise level. The frozen
/// components are hash-checked like in the full joint run.
pub fn retrain_decoder(
    enc: &JsccEncoder,
    dec: JsccDecoder,
    model: &DenoiserModel,
    src: &SourceSampler,
    s: &NoiseSchedule,
    cfg: &JointTrainConfig,
    stream: RngStream,
) -> Result<(JsccDecoder, Vec<StagePoint>), JsccError> {
    cfg.validate()?;
    let mut dec = dec;
    let enc_hash = hash_f64s(&enc.params);
    let model_hash = hash_f64s(model.params());
    let mut rng = stream.derive(tags::STAGE3).rng();
    let points = run_stage3(enc, &mut dec, model, src, s, cfg, &mut rng)?;
    assert_eq!(
        enc_hash,
        hash_f64s(&enc.params),
        "encoder must stay frozen during decoder retraining"
    );
    assert_eq!(
        model_hash,
        hash_f64s(model.params()),
        "noise predictor must stay frozen during decoder retraining"
    );
    Ok((dec, points))
}

/// Run the three training stages in order. The encoder only learns in
/// stage 1 and the noise predictor only in stage 2; both freezes are
/// asserted by parameter hashes around the later stages.
pub fn train_joint(
    enc: JsccEncoder,
    dec: JsccDecoder,
    model: DenoiserModel,
    src: &SourceSampler,
    s: &NoiseSchedule,
    cfg: &JointTrainConfig,
    stream: RngStream,
) -> Result<JointArtifacts, JsccError> {
    cfg.validate()?;
    if src.dim() != enc.n {
        return Err(JsccError::BadInput {
            got: src.dim(),
            expected: enc.n,
        });
    }
    if enc.k != dec.k || enc.n != dec.n || enc.k != model.k() {
        return Err(JsccError::BadDims { n: enc.n, k: enc.k });
    }
    let mut enc = enc;
    let mut dec = dec;

    let mut rng1 = stream.derive(tags::STAGE1).rng();
    let stage1 = run_stage1(&mut enc, &mut dec, src, cfg, &mut rng1)?;
    let stage1_decoder = dec.clone();

    let enc_hash = hash_f64s(&enc.params);
    let (model, stage2) = train_cddm(
        model,
        &EncodedSource { enc: &enc, src },
        s,
        &cfg.stage2,
        stream.derive(tags::STAGE2),
    )?;
    assert_eq!(
        enc_hash,
        hash_f64s(&enc.params),
        "encoder must stay frozen during noise-predictor training"
    );

    let model_hash = hash_f64s(model.params());
    let mut rng3 = stream.derive(tags::STAGE3).rng();
    let stage3 = run_stage3(&enc, &mut dec, &model, src, s, cfg, &mut rng3)?;
    assert_eq!(
        enc_hash,
        hash_f64s(&enc.params),
        "encoder must stay frozen during decoder retraining"
    );
    assert_eq!(
        model_hash,
        hash_f64s(model.params()),
        "noise predictor must stay frozen during decoder retraining"
    );

    Ok(JointArtifacts {
        encoder: enc,
        decoder: dec,
        stage1_decoder,
        model,
        log: JointTrainLog {
            stage1,
            stage2,
            stage3,
        },
    })
}
