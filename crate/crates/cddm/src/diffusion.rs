//! Channel-matched forward diffusion, training, and deterministic sampling.
//!
//! The forward process diffuses `x_0 = w_s . x` with noise shaped by `w_n`,
//! so its marginal at the matched step coincides with the receiver output
//! distribution. Training therefore never touches received signals: batches
//! are built entirely from source draws, fresh channel realizations, and the
//! closed-form forward map. Sampling starts from the actual receiver output
//! at the truncation step m and runs the zero-posterior-variance reverse
//! recursion, which is fully deterministic given the model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    sample_channel, sigma2_from_snr_db, ChannelError, ChannelMode, ChannelRealization,
};
use crate::denoiser::{DenoiserError, DenoiserModel, EpsilonPredictor};
use crate::rng::{standard_normal_vec, RngStream};
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::signal::RealSignal;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error("signal has {got} real dims, expected {expected}")]
    Dims { got: usize, expected: usize },
    #[error("truncation step {m} outside schedule range 1..={t_steps}")]
    BadTruncation { m: usize, t_steps: usize },
    #[error("training diverged at step {step}: batch loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("training config invalid: {0}")]
    BadConfig(String),
}

/// Anything that can produce transmit-ready signals for training: the codec
/// encoder applied to source draws in production, synthetic fixtures in
/// tests. Batches are drawn jointly so batch-level power normalization can
/// apply.
pub trait SignalSource {
    /// Channel uses per signal.
    fn k(&self) -> usize;
    fn draw_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<RealSignal>;
}

/// Scale the signal by the channel's per-dimension signal weights.
pub fn make_x0(x: &RealSignal, ch: &ChannelRealization) -> Result<RealSignal, DiffusionError> {
    if x.len() != ch.w_s().len() {
        return Err(DiffusionError::Dims {
            got: x.len(),
            expected: ch.w_s().len(),
        });
    }
    let values = x
        .values()
        .iter()
        .zip(ch.w_s())
        .map(|(v, w)| v * w)
        .collect();
    Ok(RealSignal::new(values).expect("length preserved"))
}

/// One stochastic forward step with explicit retention `alpha_t` and noise
/// draw. Kernel form so degenerate retention values (the alpha = 1 limit)
/// stay testable without relaxing the schedule type.
pub fn forward_step_with_alpha(
    x_prev: &RealSignal,
    alpha_t: f64,
    ch: &ChannelRealization,
    eps: &[f64],
) -> Result<RealSignal, DiffusionError> {
    if x_prev.len() != ch.w_n().len() || eps.len() != x_prev.len() {
        return Err(DiffusionError::Dims {
            got: x_prev.len().max(eps.len()),
            expected: ch.w_n().len(),
        });
    }
    let a = alpha_t.sqrt();
    let b = (1.0 - alpha_t).sqrt();
    let values = (0..x_prev.len())
        .map(|i| a * x_prev.values()[i] + b * ch.w_n()[i] * eps[i])
        .collect();
    Ok(RealSignal::new(values).expect("length preserved"))
}

/// One stochastic forward step `x_t = sqrt(a_t) x_{t-1} + sqrt(1-a_t) w_n . eps`.
pub fn forward_step(
    x_prev: &RealSignal,
    t: usize,
    s: &NoiseSchedule,
    ch: &ChannelRealization,
    rng: &mut ChaCha8Rng,
) -> Result<RealSignal, DiffusionError> {
    s.check_step(t)?;
    let eps = standard_normal_vec(rng, x_prev.len());
    forward_step_with_alpha(x_prev, s.alpha(t), ch, &eps)
}

/// Closed-form jump to step t:
/// `x_t = sqrt(abar_t) x_0 + sqrt(1-abar_t) w_n . eps`, with the noise draw
/// supplied by the caller so oracle tests can replay it.
pub fn forward_closed(
    x0: &RealSignal,
    t: usize,
    s: &NoiseSchedule,
    ch: &ChannelRealization,
    eps: &[f64],
) -> Result<RealSignal, DiffusionError> {
    s.check_step(t)?;
    if x0.len() != ch.w_n().len() || eps.len() != x0.len() {
        return Err(DiffusionError::Dims {
            got: x0.len().max(eps.len()),
            expected: ch.w_n().len(),
        });
    }
    let ab = s.alpha_bar(t);
    let a = ab.sqrt();
    let b = (1.0 - ab).sqrt();
    let values = (0..x0.len())
        .map(|i| a * x0.values()[i] + b * ch.w_n()[i] * eps[i])
        .collect();
    Ok(RealSignal::new(values).expect("length preserved"))
}

/// Noise-prediction loss on one example: squared L2 distance between the
/// true draw and the model's prediction at the diffused input.
pub fn cddm_loss(
    model: &(impl EpsilonPredictor + ?Sized),
    x: &RealSignal,
    ch: &ChannelRealization,
    t: usize,
    eps: &[f64],
    s: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    let x0 = make_x0(x, ch)?;
    let x_t = forward_closed(&x0, t, s, ch, eps)?;
    let eps_hat = model.predict_eps(x_t.values(), ch.h_r(), t)?;
    Ok(eps
        .iter()
        .zip(&eps_hat)
        .map(|(e, eh)| (e - eh) * (e - eh))
        .sum())
}

/// Variant weighting each dimension's residual by `w_n`; exposed behind the
/// training config flag, default off.
pub fn cddm_loss_weighted(
    model: &(impl EpsilonPredictor + ?Sized),
    x: &RealSignal,
    ch: &ChannelRealization,
    t: usize,
    eps: &[f64],
    s: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    let x0 = make_x0(x, ch)?;
    let x_t = forward_closed(&x0, t, s, ch, eps)?;
    let eps_hat = model.predict_eps(x_t.values(), ch.h_r(), t)?;
    Ok((0..eps.len())
        .map(|i| {
            let r = ch.w_n()[i] * (eps[i] - eps_hat[i]);
            r * r
        })
        .sum())
}

/// Invert the closed-form forward map using the model's noise estimate:
/// `x0_hat = (x_t - sqrt(1-abar_t) w_n . eps_hat) / sqrt(abar_t)`.
pub fn estimate_x0(
    model: &(impl EpsilonPredictor + ?Sized),
    x_t: &RealSignal,
    t: usize,
    s: &NoiseSchedule,
    ch: &ChannelRealization,
) -> Result<RealSignal, DiffusionError> {
    s.check_step(t)?;
    if x_t.len() != ch.w_n().len() {
        return Err(DiffusionError::Dims {
            got: x_t.len(),
            expected: ch.w_n().len(),
        });
    }
    let eps_hat = model.predict_eps(x_t.values(), ch.h_r(), t)?;
    let ab = s.alpha_bar(t);
    let a = ab.sqrt();
    let b = (1.0 - ab).sqrt();
    let values = (0..x_t.len())
        .map(|i| (x_t.values()[i] - b * ch.w_n()[i] * eps_hat[i]) / a)
        .collect();
    Ok(RealSignal::new(values).expect("length preserved"))
}

/// Deterministic reverse kernel with explicit `alpha_bar` values for the
/// current and previous step.
pub fn reverse_step_with(
    x_t: &RealSignal,
    eps_hat: &[f64],
    alpha_bar_prev: f64,
    alpha_bar_t: f64,
    ch: &ChannelRealization,
) -> Result<RealSignal, DiffusionError> {
    if x_t.len() != ch.w_n().len() || eps_hat.len() != x_t.len() {
        return Err(DiffusionError::Dims {
            got: x_t.len().max(eps_hat.len()),
            expected: ch.w_n().len(),
        });
    }
    let a_t = alpha_bar_t.sqrt();
    let b_t = (1.0 - alpha_bar_t).sqrt();
    let a_p = alpha_bar_prev.sqrt();
    let b_p = (1.0 - alpha_bar_prev).sqrt();
    let values = (0..x_t.len())
        .map(|i| {
            let wn_eps = ch.w_n()[i] * eps_hat[i];
            let x0_hat = (x_t.values()[i] - b_t * wn_eps) / a_t;
            a_p * x0_hat + b_p * wn_eps
        })
        .collect();
    Ok(RealSignal::new(values).expect("length preserved"))
}

/// One deterministic reverse step from t to t-1 (valid for 2 <= t <= T):
/// re-noise the estimated origin at the previous step's level, reusing the
/// model's own noise estimate instead of a fresh draw.
pub fn reverse_step(
    model: &(impl EpsilonPredictor + ?Sized),
    x_t: &RealSignal,
    t: usize,
    s: &NoiseSchedule,
    ch: &ChannelRealization,
) -> Result<RealSignal, DiffusionError> {
    s.check_step(t)?;
    if t < 2 {
        return Err(DiffusionError::Schedule(ScheduleError::StepOutOfRange {
            t,
            t_steps: s.t_steps(),
        }));
    }
    let eps_hat = model.predict_eps(x_t.values(), ch.h_r(), t)?;
    reverse_step_with(x_t, &eps_hat, s.alpha_bar(t - 1), s.alpha_bar(t), ch)
}

/// Denoise a receiver output: start the reverse recursion at `x_m = y_r`,
/// walk t = m..2, then apply the final origin estimate at t = 1. Fully
/// deterministic given the model.
pub fn sample(
    model: &(impl EpsilonPredictor + ?Sized),
    y_r: &RealSignal,
    ch: &ChannelRealization,
    s: &NoiseSchedule,
    m: usize,
) -> Result<RealSignal, DiffusionError> {
    if !(1..=s.t_steps()).contains(&m) {
        return Err(DiffusionError::BadTruncation {
            m,
            t_steps: s.t_steps(),
        });
    }
    if y_r.len() != ch.w_n().len() {
        return Err(DiffusionError::Dims {
            got: y_r.len(),
            expected: ch.w_n().len(),
        });
    }
    let mut x = y_r.clone();
    for t in (2..=m).rev() {
        x = reverse_step(model, &x, t, s, ch)?;
    }
    estimate_x0(model, &x, 1, s, ch)
}

/// Knobs for the noise-predictor training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-batch noise level is drawn uniformly (in dB) over this range.
    pub snr_range_db: (f64, f64),
    pub mode: ChannelMode,
    /// Train on the `w_n`-weighted residual instead of the plain one.
    pub weighted_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 32,
            lr: 1e-3,
            snr_range_db: (0.0, 25.0),
            mode: ChannelMode::Rayleigh,
            weighted_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.batch_size == 0 {
            return Err(DiffusionError::BadConfig("batch_size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(DiffusionError::BadConfig(format!("bad lr {}", self.lr)));
        }
        let (lo, hi) = self.snr_range_db;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(DiffusionError::BadConfig(format!(
                "bad snr range {lo}..{hi}"
            )));
        }
        Ok(())
    }
}

/// Scalar diagnostics for one training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainBatchReport {
    pub step: usize,
    /// Mean per-example loss over the batch.
    pub loss: f64,
    /// L2 norm of the averaged gradient.
    pub grad_norm: f64,
    /// t of the batch's first example (diagnostic sample of the t draw).
    pub t_drawn: usize,
}

/// Loss trace of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub reports: Vec<TrainBatchReport>,
}

impl TrainLog {
    /// Trailing moving average of the loss with the given window.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let mut out = Vec::with_capacity(self.reports.len());
        let mut acc = 0.0;
        for (i, r) in self.reports.iter().enumerate() {
            acc += r.loss;
            if i >= w {
                acc -= self.reports[i - w].loss;
            }
            out.push(acc / w.min(i + 1) as f64);
        }
        out
    }
}

/// Step-size policy: base rate halved at 60% and again at 85% of the run.
pub fn lr_at(base: f64, step: usize, total_steps: usize) -> f64 {
    let mut lr = base;
    if step >= (0.6 * total_steps as f64) as usize {
        lr *= 0.5;
    }
    if step >= (0.85 * total_steps as f64) as usize {
        lr *= 0.5;
    }
    lr
}

/// Train the noise predictor. Per batch: one noise level drawn from the SNR
/// range, one fresh channel realization, then per example a source draw, a
/// uniform step t, and a noise draw; gradients are averaged in batch order.
/// Nothing in here touches the receive pipeline: the model never sees a
/// received signal or a fixed operating noise level.
pub fn train_cddm(
    model: DenoiserModel,
    source: &dyn SignalSource,
    s: &NoiseSchedule,
    cfg: &TrainConfig,
    stream: RngStream,
) -> Result<(DenoiserModel, TrainLog), DiffusionError> {
    cfg.validate()?;
    let mut model = model;
    if source.k() != model.k() {
        return Err(DiffusionError::Dims {
            got: 2 * source.k(),
            expected: 2 * model.k(),
        });
    }
    let mut rng = stream.rng();
    let mut log = TrainLog::default();
    let dim = 2 * model.k();
    let (lo, hi) = cfg.snr_range_db;
    for step in 0..cfg.steps {
        let snr_db = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let sigma2 = sigma2_from_snr_db(snr_db);
        let ch = sample_channel(cfg.mode, model.k(), sigma2, &mut rng)?;
        let xs = source.draw_batch(cfg.batch_size, &mut rng);
        let mut grad_acc = vec![0.0; model.param_count()];
        let mut loss_acc = 0.0;
        let mut t_drawn = 1;
        for (b, x) in xs.iter().enumerate() {
            let t = rng.random_range(1..=s.t_steps());
            if b == 0 {
                t_drawn = t;
            }
            let eps = standard_normal_vec(&mut rng, dim);
            let x0 = make_x0(x, &ch)?;
            let x_t = forward_closed(&x0, t, s, &ch, &eps)?;
            let (loss, grads) = if cfg.weighted_loss {
                let (out, cache) = model.forward_cached(x_t.values(), ch.h_r(), t)?;
                let mut loss = 0.0;
                let mut g_out = vec![0.0; dim];
                for i in 0..dim {
                    let w2 = ch.w_n()[i] * ch.w_n()[i];
                    let r = out[i] - eps[i];
                    loss += w2 * r * r;
                    g_out[i] = 2.0 * w2 * r;
                }
                (loss, model.backprop_from_gout(&cache, &g_out))
            } else {
                model.backprop(x_t.values(), ch.h_r(), t, &eps)?
            };
            loss_acc += loss;
            for (a, g) in grad_acc.iter_mut().zip(&grads) {
                *a += g;
            }
        }
        let inv_b = 1.0 / cfg.batch_size as f64;
        let mean_loss = loss_acc * inv_b;
        if !mean_loss.is_finite() {
            return Err(DiffusionError::Divergence {
                step,
                loss: mean_loss,
            });
        }
        for g in &mut grad_acc {
            *g *= inv_b;
        }
        let grad_norm = grad_acc.iter().map(|g| g * g).sum::<f64>().sqrt();
        model.opt_step(&grad_acc, lr_at(cfg.lr, step, cfg.steps))?;
        log.reports.push(TrainBatchReport {
            step,
            loss: mean_loss,
            grad_norm,
            t_drawn,
        });
    }
    Ok((model, log))
}
