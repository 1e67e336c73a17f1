//! Wireless link simulation and the receiver-side pipeline.
//!
//! The link applies per-symbol fading and circular complex noise:
//! `y_i = h_i * x_i + n_i` with `n_i ~ CN(0, 2*sigma2)`. The receiver runs an
//! MMSE equalizer and then rescales into the real coordinates the diffusion
//! engine works in. Conditioned on the realization, the pipeline output is
//! exactly Gaussian:
//!
//! `y_r = (w_s . x + sigma * w_n . eps) / sqrt(1 + sigma2)`, eps ~ N(0, I),
//!
//! where `w_s_i = |h_i|^2 / (|h_i|^2 + 2*sigma2)` and
//! `w_n_i = |h_i| / (|h_i|^2 + 2*sigma2)`. [`receive_reparam`] draws from that
//! form directly; it is the differentiable path training uses, and the Monte
//! Carlo conformance checks pin both routes to the same closed-form moments.
//!
//! Only `|h|` ever enters the receiver math, so Rayleigh realizations store
//! the modulus and no phase is materialized anywhere.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::standard_normal_vec;
use crate::signal::{complex_from_real, real_from_complex, ComplexSignal, RealSignal};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("k must be at least 1")]
    EmptyChannel,
    #[error("sigma2 must be finite and nonnegative, got {0}")]
    BadSigma2(f64),
    #[error("|h| entries must be finite and nonnegative, got {0}")]
    BadGain(f64),
    #[error("AWGN realizations require |h| = 1 on every symbol")]
    AwgnGainNotUnit,
    #[error("zero gain with zero noise: equalizer is singular")]
    Singular,
    #[error("signal has {signal} symbols but channel has {channel}")]
    DimensionMismatch { signal: usize, channel: usize },
}

/// Fading model for the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Awgn,
    Rayleigh,
}

impl std::fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelMode::Awgn => write!(f, "awgn"),
            ChannelMode::Rayleigh => write!(f, "rayleigh"),
        }
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "awgn" => Ok(ChannelMode::Awgn),
            "rayleigh" => Ok(ChannelMode::Rayleigh),
            other => Err(format!("unknown channel mode `{other}`")),
        }
    }
}

/// One draw of the link: gains, noise level, and the derived MMSE weights.
///
/// `w_s`, `w_n`, and `h_r` are stored at length 2k (per real dimension, the
/// per-symbol value replicated across the I and Q halves) because that is the
/// shape every consumer wants. The identity `w_s = h_r . w_n` holds by
/// construction. In AWGN mode both weight vectors are all ones regardless of
/// `sigma2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    mode: ChannelMode,
    sigma2: f64,
    h_abs: Vec<f64>,
    h_r: Vec<f64>,
    w_s: Vec<f64>,
    w_n: Vec<f64>,
}

impl ChannelRealization {
    /// Build a realization from explicit per-symbol gain moduli.
    ///
    /// # Errors
    /// Rejects empty or negative/non-finite inputs, AWGN gains that are not
    /// all one, and the singular combination of a zero gain with zero noise.
    pub fn from_h_abs(
        mode: ChannelMode,
        h_abs: Vec<f64>,
        sigma2: f64,
    ) -> Result<Self, ChannelError> {
        if h_abs.is_empty() {
            return Err(ChannelError::EmptyChannel);
        }
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(ChannelError::BadSigma2(sigma2));
        }
        for &h in &h_abs {
            if !h.is_finite() || h < 0.0 {
                return Err(ChannelError::BadGain(h));
            }
            if h == 0.0 && sigma2 == 0.0 {
                return Err(ChannelError::Singular);
            }
        }
        if mode == ChannelMode::Awgn && h_abs.iter().any(|&h| h != 1.0) {
            return Err(ChannelError::AwgnGainNotUnit);
        }
        let k = h_abs.len();
        let mut h_r = Vec::with_capacity(2 * k);
        let mut w_s = Vec::with_capacity(2 * k);
        let mut w_n = Vec::with_capacity(2 * k);
        for half in 0..2 {
            let _ = half;
            for &h in &h_abs {
                let (ws, wn) = match mode {
                    ChannelMode::Awgn => (1.0, 1.0),
                    ChannelMode::Rayleigh => {
                        let d = h * h + 2.0 * sigma2;
                        if d == 0.0 {
                            // excluded above: h = 0 and sigma2 = 0
                            unreachable!("singular channel slipped through validation");
                        }
                        (h * h / d, h / d)
                    }
                };
                h_r.push(h);
                w_s.push(ws);
                w_n.push(wn);
            }
        }
        Ok(Self {
            mode,
            sigma2,
            h_abs,
            h_r,
            w_s,
            w_n,
        })
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn k(&self) -> usize {
        self.h_abs.len()
    }

    /// Per-symbol gain modulus, length k.
    pub fn h_abs(&self) -> &[f64] {
        &self.h_abs
    }

    /// Gain modulus per real dimension, length 2k.
    pub fn h_r(&self) -> &[f64] {
        &self.h_r
    }

    /// Signal weight per real dimension, length 2k.
    pub fn w_s(&self) -> &[f64] {
        &self.w_s
    }

    /// Noise weight per real dimension, length 2k.
    pub fn w_n(&self) -> &[f64] {
        &self.w_n
    }
}

/// Draw a fresh channel realization.
///
/// Rayleigh gains are `|CN(0,1)|`; AWGN fixes every gain to one.
pub fn sample_channel(
    mode: ChannelMode,
    k: usize,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ChannelRealization, ChannelError> {
    if k == 0 {
        return Err(ChannelError::EmptyChannel);
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(ChannelError::BadSigma2(sigma2));
    }
    let h_abs: Vec<f64> = match mode {
        ChannelMode::Awgn => vec![1.0; k],
        ChannelMode::Rayleigh => (0..k)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                (0.5 * (re * re + im * im)).sqrt()
            })
            .collect(),
    };
    ChannelRealization::from_h_abs(mode, h_abs, sigma2)
}

/// Noise variance for an SNR given in dB: `sigma2 = 10^(-snr/10) / 2`.
///
/// SNR is defined against unit average symbol power and total complex noise
/// power `2*sigma2`, so `snr_db = 10*log10(1 / (2*sigma2))`.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    0.5 * 10f64.powf(-snr_db / 10.0)
}

/// Inverse of [`sigma2_from_snr_db`]. Zero noise maps to infinity.
pub fn snr_db_from_sigma2(sigma2: f64) -> f64 {
    10.0 * (1.0 / (2.0 * sigma2)).log10()
}

/// Push symbols through the link: `y_i = h_i * x_i + n_i`.
pub fn transmit(
    x_c: &ComplexSignal,
    ch: &ChannelRealization,
    rng: &mut ChaCha8Rng,
) -> Result<ComplexSignal, ChannelError> {
    transmit_with_noise_scale(x_c, ch, 1.0, rng)
}

/// [`transmit`] with the noise standard deviation multiplied by `noise_scale`.
///
/// The conformance checker uses a non-unit scale to prove it can detect a
/// miscalibrated link; production paths always pass 1.
pub fn transmit_with_noise_scale(
    x_c: &ComplexSignal,
    ch: &ChannelRealization,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ComplexSignal, ChannelError> {
    if x_c.k() != ch.k() {
        return Err(ChannelError::DimensionMismatch {
            signal: x_c.k(),
            channel: ch.k(),
        });
    }
    let std = ch.sigma2.sqrt() * noise_scale;
    let k = ch.k();
    let mut re = Vec::with_capacity(k);
    let mut im = Vec::with_capacity(k);
    for i in 0..k {
        let nr: f64 = StandardNormal.sample(rng);
        let ni: f64 = StandardNormal.sample(rng);
        re.push(ch.h_abs[i] * x_c.re()[i] + std * nr);
        im.push(ch.h_abs[i] * x_c.im()[i] + std * ni);
    }
    ComplexSignal::new(re, im).map_err(|_| ChannelError::EmptyChannel)
}

/// Per-symbol MMSE equalizer: `y_eq_i = |h_i| * y_i / (|h_i|^2 + 2*sigma2)`.
///
/// AWGN mode passes the signal through untouched; the unit-gain link needs no
/// equalization and the matched weights are identity anyway.
pub fn mmse_equalize(
    y_c: &ComplexSignal,
    ch: &ChannelRealization,
) -> Result<ComplexSignal, ChannelError> {
    if y_c.k() != ch.k() {
        return Err(ChannelError::DimensionMismatch {
            signal: y_c.k(),
            channel: ch.k(),
        });
    }
    if ch.mode == ChannelMode::Awgn {
        return Ok(y_c.clone());
    }
    let k = ch.k();
    let mut re = Vec::with_capacity(k);
    let mut im = Vec::with_capacity(k);
    for i in 0..k {
        let h = ch.h_abs[i];
        let g = if h == 0.0 {
            0.0 // sigma2 > 0 guaranteed at construction; MMSE weight vanishes
        } else {
            h / (h * h + 2.0 * ch.sigma2)
        };
        re.push(g * y_c.re()[i]);
        im.push(g * y_c.im()[i]);
    }
    ComplexSignal::new(re, im).map_err(|_| ChannelError::EmptyChannel)
}

/// Stack the equalized symbols into real coordinates and divide by
/// `sqrt(1 + sigma2)`.
pub fn normalize_reshape(y_eq: &ComplexSignal, sigma2: f64) -> Result<RealSignal, ChannelError> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(ChannelError::BadSigma2(sigma2));
    }
    let scale = 1.0 / (1.0 + sigma2).sqrt();
    let mut y = real_from_complex(y_eq);
    for v in y.values_mut() {
        *v *= scale;
    }
    Ok(y)
}

/// Run the full receiver pipeline (transmit, equalize, reshape) in one call.
pub fn receive_pipeline(
    x: &RealSignal,
    ch: &ChannelRealization,
    rng: &mut ChaCha8Rng,
) -> Result<RealSignal, ChannelError> {
    let x_c = complex_from_real(x);
    let y_c = transmit(&x_c, ch, rng)?;
    let y_eq = mmse_equalize(&y_c, ch)?;
    normalize_reshape(&y_eq, ch.sigma2)
}

/// Draw the receiver output from its reparameterized Gaussian form.
///
/// Distributionally identical to [`receive_pipeline`]; this is the
/// differentiable path, linear in `x` with per-dimension slope
/// `w_s / sqrt(1 + sigma2)`.
pub fn receive_reparam(
    x: &RealSignal,
    ch: &ChannelRealization,
    rng: &mut ChaCha8Rng,
) -> Result<RealSignal, ChannelError> {
    let eps = standard_normal_vec(rng, x.len());
    receive_reparam_with_eps(x, ch, &eps)
}

/// [`receive_reparam`] with the caller supplying the noise draw.
pub fn receive_reparam_with_eps(
    x: &RealSignal,
    ch: &ChannelRealization,
    eps: &[f64],
) -> Result<RealSignal, ChannelError> {
    if x.k() != ch.k() || eps.len() != x.len() {
        return Err(ChannelError::DimensionMismatch {
            signal: x.k(),
            channel: ch.k(),
        });
    }
    let sigma = ch.sigma2.sqrt();
    let scale = 1.0 / (1.0 + ch.sigma2).sqrt();
    let values = (0..x.len())
        .map(|i| scale * (ch.w_s[i] * x.values()[i] + sigma * ch.w_n[i] * eps[i]))
        .collect();
    RealSignal::new(values).map_err(|_| ChannelError::EmptyChannel)
}

/// Closed-form mean of the receiver output given `x` and the realization.
pub fn yr_closed_mean(x: &RealSignal, ch: &ChannelRealization) -> Vec<f64> {
    let scale = 1.0 / (1.0 + ch.sigma2).sqrt();
    (0..x.len())
        .map(|i| scale * ch.w_s[i] * x.values()[i])
        .collect()
}

/// Closed-form per-dimension variance of the receiver output.
pub fn yr_closed_var(ch: &ChannelRealization) -> Vec<f64> {
    let f = ch.sigma2 / (1.0 + ch.sigma2);
    ch.w_n.iter().map(|&w| f * w * w).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn unit_power_x(k: usize) -> RealSignal {
        // alternating signs, |x_i| = 1/sqrt(2): exactly unit power per symbol
        let v = (0..2 * k)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } / 2f64.sqrt())
            .collect();
        RealSignal::new(v).unwrap()
    }

    #[test]
    fn snr_convention_fixed_points() {
        assert_eq!(sigma2_from_snr_db(0.0), 0.5);
        assert!((sigma2_from_snr_db(10.0) - 0.05).abs() < 1e-15);
        assert!((sigma2_from_snr_db(20.0) - 0.005).abs() < 1e-15);
        assert!((snr_db_from_sigma2(0.05) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn awgn_weights_are_identity_at_any_noise_level() {
        for sigma2 in [0.0, 0.05, 0.5, 3.0] {
            let ch = sample_channel(
                ChannelMode::Awgn,
                4,
                sigma2,
                &mut RngStream::new(1, 0).rng(),
            )
            .unwrap();
            assert!(ch.w_s().iter().all(|&w| w == 1.0));
            assert!(ch.w_n().iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn ws_equals_hr_times_wn() {
        let mut rng = RngStream::new(9, 0).rng();
        for sigma2 in [1e-4, 0.05, 0.5, 2.0] {
            let ch = sample_channel(ChannelMode::Rayleigh, 16, sigma2, &mut rng).unwrap();
            for i in 0..32 {
                assert!(
                    (ch.w_s()[i] - ch.h_r()[i] * ch.w_n()[i]).abs() <= 1e-15,
                    "identity broken at dim {i}"
                );
            }
        }
    }

    #[test]
    fn noiseless_awgn_pipeline_is_identity() {
        let x = unit_power_x(8);
        let ch =
            sample_channel(ChannelMode::Awgn, 8, 0.0, &mut RngStream::new(2, 0).rng()).unwrap();
        let y = receive_pipeline(&x, &ch, &mut RngStream::new(2, 1).rng()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn noiseless_rayleigh_pipeline_inverts_fading() {
        let x = unit_power_x(8);
        let ch = sample_channel(
            ChannelMode::Rayleigh,
            8,
            0.0,
            &mut RngStream::new(3, 0).rng(),
        )
        .unwrap();
        let y = receive_pipeline(&x, &ch, &mut RngStream::new(3, 1).rng()).unwrap();
        for (a, b) in x.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn equalizer_gain_fixed_point() {
        // |h| = 1, 2*sigma2 = 0.1: output = input / 1.1
        let ch = ChannelRealization::from_h_abs(ChannelMode::Rayleigh, vec![1.0], 0.05).unwrap();
        let y = ComplexSignal::new(vec![1.0], vec![-2.0]).unwrap();
        let eq = mmse_equalize(&y, &ch).unwrap();
        assert!((eq.re()[0] - 1.0 / 1.1).abs() < 1e-15);
        assert!((eq.im()[0] + 2.0 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn normalize_reshape_fixed_point() {
        // sigma2 = 1: [1, 1] -> [1/sqrt(2), 1/sqrt(2)]
        let y = ComplexSignal::new(vec![1.0], vec![1.0]).unwrap();
        let out = normalize_reshape(&y, 1.0).unwrap();
        let e = 1.0 / 2f64.sqrt();
        assert!((out.values()[0] - e).abs() < 1e-15);
        assert!((out.values()[1] - e).abs() < 1e-15);
    }

    #[test]
    fn singular_channel_rejected() {
        let err = ChannelRealization::from_h_abs(ChannelMode::Rayleigh, vec![0.0, 1.0], 0.0);
        assert_eq!(err, Err(ChannelError::Singular));
    }

    #[test]
    fn zero_gain_with_noise_zeroes_the_weights() {
        let ch =
            ChannelRealization::from_h_abs(ChannelMode::Rayleigh, vec![0.0, 1.0], 0.1).unwrap();
        assert_eq!(ch.w_s()[0], 0.0);
        assert_eq!(ch.w_n()[0], 0.0);
        assert!(ch.w_s()[1] > 0.0);
    }

    #[test]
    fn rayleigh_gain_power_is_unit_on_average() {
        let mut rng = RngStream::new(11, 0).rng();
        let mut acc = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            let ch = sample_channel(ChannelMode::Rayleigh, 1, 0.1, &mut rng).unwrap();
            acc += ch.h_abs()[0] * ch.h_abs()[0];
        }
        let mean = acc / draws as f64;
        assert!((0.99..=1.01).contains(&mean), "E|h|^2 = {mean}");
    }

    #[test]
    fn reparam_matches_closed_form_moments() {
        let k = 4;
        let x = unit_power_x(k);
        let ch =
            ChannelRealization::from_h_abs(ChannelMode::Rayleigh, vec![1.3, 0.9, 1.7, 1.1], 0.2)
                .unwrap();
        let mut rng = RngStream::new(21, 0).rng();
        let trials = 200_000;
        let mut sum = vec![0.0; 2 * k];
        let mut sum_sq = vec![0.0; 2 * k];
        for _ in 0..trials {
            let y = receive_reparam(&x, &ch, &mut rng).unwrap();
            for (i, v) in y.values().iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        let mean_e = yr_closed_mean(&x, &ch);
        let var_e = yr_closed_var(&ch);
        for i in 0..2 * k {
            let m = sum[i] / trials as f64;
            let v = sum_sq[i] / trials as f64 - m * m;
            assert!(
                (m - mean_e[i]).abs() / mean_e[i].abs() < 0.02,
                "mean dim {i}: {m} vs {}",
                mean_e[i]
            );
            assert!(
                (v - var_e[i]).abs() / var_e[i] < 0.03,
                "var dim {i}: {v} vs {}",
                var_e[i]
            );
        }
    }

    #[test]
    fn pipeline_and_reparam_agree_in_distribution() {
        // two-sample moment comparison on a fixed Rayleigh realization
        let k = 4;
        let x = unit_power_x(k);
        let ch =
            ChannelRealization::from_h_abs(ChannelMode::Rayleigh, vec![0.8, 1.2, 1.5, 1.0], 0.1)
                .unwrap();
        let trials = 200_000;
        let mut acc = [[0.0f64; 8]; 4]; // sum/sumsq for each route
        let mut rng_a = RngStream::new(33, 0).rng();
        let mut rng_b = RngStream::new(33, 1).rng();
        for _ in 0..trials {
            let a = receive_pipeline(&x, &ch, &mut rng_a).unwrap();
            let b = receive_reparam(&x, &ch, &mut rng_b).unwrap();
            for (i, (av, bv)) in a.values().iter().zip(b.values()).enumerate() {
                acc[0][i] += av;
                acc[1][i] += av * av;
                acc[2][i] += bv;
                acc[3][i] += bv * bv;
            }
        }
        for (i, sum_a) in acc[0].iter().enumerate() {
            let (ma, mb) = (sum_a / trials as f64, acc[2][i] / trials as f64);
            let va = acc[1][i] / trials as f64 - ma * ma;
            let vb = acc[3][i] / trials as f64 - mb * mb;
            let se = (2.0 * (va + vb) / trials as f64).sqrt();
            assert!((ma - mb).abs() < 6.0 * se, "mean dim {i}: {ma} vs {mb}");
            assert!((va - vb).abs() / vb < 0.05, "var dim {i}: {va} vs {vb}");
        }
    }

    proptest! {
        #[test]
        fn reparam_slope_is_ws_scaled(seed in 0u64..1000, sigma2 in 1e-3f64..1.0) {
            // with eps = 0 the reparam path is exactly the linear map diag(w_s)/sqrt(1+sigma2)
            let ch = sample_channel(ChannelMode::Rayleigh, 4, sigma2,
                &mut RngStream::new(seed, 0).rng()).unwrap();
            let x = unit_power_x(4);
            let y = receive_reparam_with_eps(&x, &ch, &[0.0; 8]).unwrap();
            let scale = 1.0 / (1.0 + sigma2).sqrt();
            for i in 0..8 {
                let expect = scale * ch.w_s()[i] * x.values()[i];
                prop_assert!((y.values()[i] - expect).abs() <= 1e-15);
            }
        }
    }
}
