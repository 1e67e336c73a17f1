//! Diffusion noise schedule and channel matching.
//!
//! A schedule is the per-step retention sequence `alpha_t` together with its
//! running product `alpha_bar_t`. Matching the truncated forward process to
//! the link happens entirely through `alpha_bar`: the forward marginal at
//! step t equals the receiver output distribution exactly when
//! `alpha_bar_t = 1 / (1 + sigma2)`, so the sampler starts at the step whose
//! noise-to-signal ratio `(1 - alpha_bar_t) / alpha_bar_t` sits closest to the
//! channel's.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::signal::RealSignal;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs at least one step")]
    Empty,
    #[error("alpha values must satisfy 0 < alpha_last <= alpha_first < 1, got {first} .. {last}")]
    BadRange { first: f64, last: f64 },
    #[error("alpha value out of (0, 1): {0}")]
    BadAlpha(f64),
    #[error("step {t} outside schedule range 1..={t_steps}")]
    StepOutOfRange { t: usize, t_steps: usize },
    #[error("sigma2 must be finite and nonnegative, got {0}")]
    BadSigma2(f64),
    #[error("channel was built for sigma2 = {channel}, got {given}")]
    SigmaMismatch { channel: f64, given: f64 },
    #[error("x0 has {x0} real dims but channel has {channel}")]
    DimensionMismatch { x0: usize, channel: usize },
}

/// Weight applied to `sigma2` when matching the truncation step.
///
/// Matching against `sigma2` targets the per-real-dimension noise ratio;
/// `TwoSigma2` targets the total complex noise power instead. Both are useful
/// reference points; the per-dimension form is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TargetFactor {
    #[default]
    Sigma2,
    TwoSigma2,
}

impl TargetFactor {
    pub fn factor(self) -> f64 {
        match self {
            TargetFactor::Sigma2 => 1.0,
            TargetFactor::TwoSigma2 => 2.0,
        }
    }
}

impl TryFrom<u8> for TargetFactor {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(TargetFactor::Sigma2),
            2 => Ok(TargetFactor::TwoSigma2),
            other => Err(format!("target_factor must be 1 or 2, got {other}")),
        }
    }
}

impl From<TargetFactor> for u8 {
    fn from(v: TargetFactor) -> u8 {
        match v {
            TargetFactor::Sigma2 => 1,
            TargetFactor::TwoSigma2 => 2,
        }
    }
}

/// Retention schedule: `alpha_t` and `alpha_bar_t`, both indexed 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear ramp from `alpha_first` down to `alpha_last` over `t_steps`.
    ///
    /// Both endpoints are reproduced exactly; interior points interpolate.
    /// A single-step schedule holds just `alpha_first`.
    pub fn linear(
        t_steps: usize,
        alpha_first: f64,
        alpha_last: f64,
    ) -> Result<Self, ScheduleError> {
        if t_steps == 0 {
            return Err(ScheduleError::Empty);
        }
        let ok = alpha_first.is_finite()
            && alpha_last.is_finite()
            && 0.0 < alpha_last
            && alpha_last <= alpha_first
            && alpha_first < 1.0;
        if !ok {
            return Err(ScheduleError::BadRange {
                first: alpha_first,
                last: alpha_last,
            });
        }
        let mut alpha = Vec::with_capacity(t_steps);
        for i in 0..t_steps {
            let a = if i == 0 {
                alpha_first
            } else if i == t_steps - 1 {
                alpha_last
            } else {
                let f = i as f64 / (t_steps - 1) as f64;
                alpha_first + f * (alpha_last - alpha_first)
            };
            alpha.push(a);
        }
        Self::from_alphas(alpha)
    }

    /// Build from explicit per-step retention values, each in (0, 1).
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self, ScheduleError> {
        if alpha.is_empty() {
            return Err(ScheduleError::Empty);
        }
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut prod = 1.0;
        for &a in &alpha {
            if !a.is_finite() || a <= 0.0 || a >= 1.0 {
                return Err(ScheduleError::BadAlpha(a));
            }
            prod *= a;
            alpha_bar.push(prod);
        }
        Ok(Self { alpha, alpha_bar })
    }

    pub fn t_steps(&self) -> usize {
        self.alpha.len()
    }

    /// `alpha_t`, 1-based. Panics when t is outside 1..=T; operations that
    /// take user-controlled t validate first.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(
            (1..=self.alpha.len()).contains(&t),
            "alpha({t}) outside 1..={}",
            self.alpha.len()
        );
        self.alpha[t - 1]
    }

    /// `alpha_bar_t`, 1-based. Same range contract as [`Self::alpha`].
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(
            (1..=self.alpha_bar.len()).contains(&t),
            "alpha_bar({t}) outside 1..={}",
            self.alpha_bar.len()
        );
        self.alpha_bar[t - 1]
    }

    pub fn check_step(&self, t: usize) -> Result<(), ScheduleError> {
        if (1..=self.t_steps()).contains(&t) {
            Ok(())
        } else {
            Err(ScheduleError::StepOutOfRange {
                t,
                t_steps: self.t_steps(),
            })
        }
    }
}

/// The `alpha_bar` value that makes the forward marginal coincide with the
/// receiver output: `1 / (1 + sigma2)`.
pub fn matched_alpha_bar(sigma2: f64) -> f64 {
    1.0 / (1.0 + sigma2)
}

/// Truncation step for a given noise level: the t minimizing
/// `|factor * sigma2 - (1 - alpha_bar_t) / alpha_bar_t|`, ties resolved
/// toward smaller t. Zero noise selects t = 1.
pub fn select_m(
    s: &NoiseSchedule,
    sigma2: f64,
    target_factor: TargetFactor,
) -> Result<usize, ScheduleError> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(ScheduleError::BadSigma2(sigma2));
    }
    let target = target_factor.factor() * sigma2;
    let mut best_t = 1;
    let mut best = f64::INFINITY;
    for t in 1..=s.t_steps() {
        let ab = s.alpha_bar(t);
        let gap = (target - (1.0 - ab) / ab).abs();
        if gap < best {
            best = gap;
            best_t = t;
        }
    }
    Ok(best_t)
}

/// KL divergence from the forward marginal at step t to the receiver output
/// distribution, both conditioned on `x0` and the realization.
///
/// Both laws are diagonal Gaussians sharing the `w_n` shape:
/// q = N(sqrt(alpha_bar_t) x0, (1 - alpha_bar_t) w_n^2) and
/// p = N(x0 / sqrt(1 + sigma2), sigma2 w_n^2 / (1 + sigma2)). Dimensions where
/// both laws degenerate to the same point contribute zero; a degenerate pair
/// with distinct means (or zero `sigma2` against a live q) yields infinity.
pub fn kl_forward_vs_channel(
    s: &NoiseSchedule,
    t: usize,
    sigma2: f64,
    ch: &ChannelRealization,
    x0: &RealSignal,
) -> Result<f64, ScheduleError> {
    s.check_step(t)?;
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(ScheduleError::BadSigma2(sigma2));
    }
    if ch.sigma2() != sigma2 {
        return Err(ScheduleError::SigmaMismatch {
            channel: ch.sigma2(),
            given: sigma2,
        });
    }
    if x0.len() != ch.w_n().len() {
        return Err(ScheduleError::DimensionMismatch {
            x0: x0.len(),
            channel: ch.w_n().len(),
        });
    }
    let ab = s.alpha_bar(t);
    let sq_scale = 1.0 - ab;
    let sp_scale = sigma2 / (1.0 + sigma2);
    let mq_scale = ab.sqrt();
    let mp_scale = 1.0 / (1.0 + sigma2).sqrt();
    let mut total = 0.0;
    for i in 0..x0.len() {
        let wn2 = ch.w_n()[i] * ch.w_n()[i];
        let vq = sq_scale * wn2;
        let vp = sp_scale * wn2;
        let dm = (mq_scale - mp_scale) * x0.values()[i];
        if vp == 0.0 {
            if vq == 0.0 && dm == 0.0 {
                continue;
            }
            return Ok(f64::INFINITY);
        }
        total += 0.5 * ((vp / vq).ln() + (vq + dm * dm) / vp - 1.0);
    }
    Ok(total)
}
