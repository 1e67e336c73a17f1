//! The trainable noise predictor.
//!
//! A residual MLP estimates the noise component of a diffused signal given
//! the per-dimension gain profile and the step index: input is the
//! concatenation of `x_t`, `h_r`, and a sinusoidal embedding of t; each hidden
//! block applies an affine layer plus a learned affine of the time embedding,
//! a SiLU, and a skip connection where widths allow. Everything is exact
//! 64-bit arithmetic with hand-written backpropagation, which keeps the
//! finite-difference gradient checks sharp.

use thiserror::Error;

use crate::nn::{silu, silu_prime, AdamState, Linear, NnError};
use crate::rng::RngStream;
use crate::signal::RealSignal;

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];
pub const DEFAULT_TIME_DIM: usize = 64;
pub const DEFAULT_T_STEPS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiserError {
    #[error("input has {got} dims, model expects {expected}")]
    BadDims { got: usize, expected: usize },
    #[error("step {t} outside model range 1..={t_steps}")]
    StepOutOfRange { t: usize, t_steps: usize },
    #[error("non-finite value in model input")]
    NonFiniteInput,
    #[error("time embedding dim must be even and >= 2, got {0}")]
    BadTimeDim(usize),
    #[error("k must be >= 1")]
    BadK,
    #[error("inconsistent checkpoint payload: {0}")]
    BadParts(String),
    #[error(transparent)]
    Opt(#[from] NnError),
}

/// Sinusoidal embedding of a step index: `dim/2` sine channels over
/// geometrically spaced frequencies followed by their cosines. A pure
/// function of t, so conditioning is deterministic.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    debug_assert!(dim >= 2 && dim.is_multiple_of(2));
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(j as f64) / half as f64 * 10_000f64.ln()).exp();
        let arg = t as f64 * freq;
        e[j] = arg.sin();
        e[half + j] = arg.cos();
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    lin: Linear,
    time: Linear,
    residual: bool,
}

/// Noise predictor with flat parameters and its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    k: usize,
    t_steps: usize,
    time_dim: usize,
    hidden_widths: Vec<usize>,
    blocks: Vec<Block>,
    out_layer: Linear,
    params: Vec<f64>,
    opt: AdamState,
}

/// Intermediate values of one forward pass, consumed by backprop.
pub struct ForwardCache {
    embed: Vec<f64>,
    /// zs[0] is the concatenated input; zs[i+1] the output of block i.
    zs: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

impl DenoiserModel {
    /// Fresh model with the default architecture (3 residual blocks of
    /// width 256, 64-dim time embedding, 1000-step range).
    pub fn init(
        k: usize,
        hidden_widths: &[usize],
        stream: RngStream,
    ) -> Result<Self, DenoiserError> {
        Self::init_with(k, hidden_widths, DEFAULT_TIME_DIM, DEFAULT_T_STEPS, stream)
    }

    /// Fresh model with explicit time-embedding width and step range.
    /// Weights use fan-in scaled uniform init, biases start at zero, and the
    /// draw order is fixed, so the same stream always yields the same bits.
    pub fn init_with(
        k: usize,
        hidden_widths: &[usize],
        time_dim: usize,
        t_steps: usize,
        stream: RngStream,
    ) -> Result<Self, DenoiserError> {
        let (blocks, out_layer, param_count) = Self::lay_out(k, hidden_widths, time_dim)?;
        if t_steps == 0 {
            return Err(DenoiserError::BadParts("t_steps must be >= 1".into()));
        }
        let mut params = vec![0.0; param_count];
        let mut rng = stream.rng();
        for b in &blocks {
            b.lin.init(&mut params, &mut rng);
            b.time.init(&mut params, &mut rng);
        }
        out_layer.init(&mut params, &mut rng);
        Ok(Self {
            k,
            t_steps,
            time_dim,
            hidden_widths: hidden_widths.to_vec(),
            blocks,
            out_layer,
            params,
            opt: AdamState::new(param_count),
        })
    }

    /// Reassemble a model from checkpoint payload.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        k: usize,
        t_steps: usize,
        time_dim: usize,
        hidden_widths: &[usize],
        params: Vec<f64>,
        opt_m: Vec<f64>,
        opt_v: Vec<f64>,
        step_count: u64,
    ) -> Result<Self, DenoiserError> {
        let (blocks, out_layer, param_count) = Self::lay_out(k, hidden_widths, time_dim)?;
        if t_steps == 0 {
            return Err(DenoiserError::BadParts("t_steps must be >= 1".into()));
        }
        if params.len() != param_count {
            return Err(DenoiserError::BadParts(format!(
                "params length {} does not match architecture count {param_count}",
                params.len()
            )));
        }
        if opt_m.len() != param_count || opt_v.len() != param_count {
            return Err(DenoiserError::BadParts(
                "optimizer state length does not match parameter count".into(),
            ));
        }
        Ok(Self {
            k,
            t_steps,
            time_dim,
            hidden_widths: hidden_widths.to_vec(),
            blocks,
            out_layer,
            params,
            opt: AdamState::from_parts(opt_m, opt_v, step_count),
        })
    }

    fn lay_out(
        k: usize,
        hidden_widths: &[usize],
        time_dim: usize,
    ) -> Result<(Vec<Block>, Linear, usize), DenoiserError> {
        if k == 0 {
            return Err(DenoiserError::BadK);
        }
        if time_dim < 2 || !time_dim.is_multiple_of(2) {
            return Err(DenoiserError::BadTimeDim(time_dim));
        }
        if hidden_widths.contains(&0) {
            return Err(DenoiserError::BadParts("zero-width hidden block".into()));
        }
        let in_dim = 4 * k + time_dim;
        let mut blocks = Vec::with_capacity(hidden_widths.len());
        let mut offset = 0;
        let mut prev = in_dim;
        for &w in hidden_widths {
            let (lin, next) = Linear::lay_out(prev, w, offset);
            let (time, next) = Linear::lay_out(time_dim, w, next);
            blocks.push(Block {
                lin,
                time,
                residual: w == prev,
            });
            offset = next;
            prev = w;
        }
        let (out_layer, total) = Linear::lay_out(prev, 2 * k, offset);
        Ok((blocks, out_layer, total))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
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

    /// Evaluate the predictor. Pure: no state is touched.
    pub fn predict(
        &self,
        x_t: &RealSignal,
        h_r: &[f64],
        t: usize,
    ) -> Result<Vec<f64>, DenoiserError> {
        Ok(self.forward_cached(x_t.values(), h_r, t)?.0)
    }

    pub fn forward_cached(
        &self,
        x_t: &[f64],
        h_r: &[f64],
        t: usize,
    ) -> Result<(Vec<f64>, ForwardCache), DenoiserError> {
        let d = 2 * self.k;
        if x_t.len() != d || h_r.len() != d {
            return Err(DenoiserError::BadDims {
                got: if x_t.len() != d { x_t.len() } else { h_r.len() },
                expected: d,
            });
        }
        if !(1..=self.t_steps).contains(&t) {
            return Err(DenoiserError::StepOutOfRange {
                t,
                t_steps: self.t_steps,
            });
        }
        if x_t.iter().chain(h_r).any(|v| !v.is_finite()) {
            return Err(DenoiserError::NonFiniteInput);
        }
        let embed = time_embedding(t, self.time_dim);
        let mut z0 = Vec::with_capacity(2 * d + self.time_dim);
        z0.extend_from_slice(x_t);
        z0.extend_from_slice(h_r);
        z0.extend_from_slice(&embed);

        let mut zs = Vec::with_capacity(self.blocks.len() + 1);
        let mut pres = Vec::with_capacity(self.blocks.len());
        zs.push(z0);
        for block in &self.blocks {
            let w = block.lin.out_dim;
            let mut pre = vec![0.0; w];
            block
                .lin
                .forward(&self.params, zs.last().unwrap(), &mut pre);
            let mut tadd = vec![0.0; w];
            block.time.forward(&self.params, &embed, &mut tadd);
            for (p, a) in pre.iter_mut().zip(&tadd) {
                *p += a;
            }
            let mut z: Vec<f64> = pre.iter().map(|&p| silu(p)).collect();
            if block.residual {
                for (zi, prev) in z.iter_mut().zip(zs.last().unwrap()) {
                    *zi += prev;
                }
            }
            pres.push(pre);
            zs.push(z);
        }
        let mut out = vec![0.0; d];
        self.out_layer
            .forward(&self.params, zs.last().unwrap(), &mut out);
        Ok((out, ForwardCache { embed, zs, pres }))
    }

    /// Gradient of `|target_eps - predict(x_t, h_r, t)|^2` with respect to
    /// every parameter, in parameter layout. Also returns the loss value.
    pub fn backprop(
        &self,
        x_t: &[f64],
        h_r: &[f64],
        t: usize,
        target_eps: &[f64],
    ) -> Result<(f64, Vec<f64>), DenoiserError> {
        if target_eps.len() != 2 * self.k {
            return Err(DenoiserError::BadDims {
                got: target_eps.len(),
                expected: 2 * self.k,
            });
        }
        let (out, cache) = self.forward_cached(x_t, h_r, t)?;
        let loss = out
            .iter()
            .zip(target_eps)
            .map(|(o, e)| (o - e) * (o - e))
            .sum();
        let g_out: Vec<f64> = out
            .iter()
            .zip(target_eps)
            .map(|(o, e)| 2.0 * (o - e))
            .collect();
        Ok((loss, self.backprop_from_gout(&cache, &g_out)))
    }

    /// Backpropagate an arbitrary output gradient through the cached pass.
    /// This is the hook the weighted loss variant uses.
    pub fn backprop_from_gout(&self, cache: &ForwardCache, g_out: &[f64]) -> Vec<f64> {
        assert_eq!(g_out.len(), 2 * self.k);
        let mut grads = vec![0.0; self.params.len()];
        let mut g_z = vec![0.0; self.out_layer.in_dim];
        self.out_layer.backward(
            &self.params,
            cache.zs.last().unwrap(),
            g_out,
            &mut grads,
            Some(&mut g_z),
        );
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let mut g_pre = g_z.clone();
            for (g, pre) in g_pre.iter_mut().zip(&cache.pres[i]) {
                *g *= silu_prime(*pre);
            }
            block
                .time
                .backward(&self.params, &cache.embed, &g_pre, &mut grads, None);
            let mut g_prev = vec![0.0; block.lin.in_dim];
            block.lin.backward(
                &self.params,
                &cache.zs[i],
                &g_pre,
                &mut grads,
                Some(&mut g_prev),
            );
            if block.residual {
                for (gp, gz) in g_prev.iter_mut().zip(&g_z) {
                    *gp += gz;
                }
            }
            g_z = g_prev;
        }
        grads
    }

    /// Apply one adaptive-moment update. Exclusive access by construction.
    pub fn opt_step(&mut self, grads: &[f64], lr: f64) -> Result<(), DenoiserError> {
        self.opt.step(&mut self.params, grads, lr)?;
        Ok(())
    }

    /// Test support: overwrite all parameters (e.g. zeros for hand-derived
    /// gradient fixtures). Length must match.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), DenoiserError> {
        if params.len() != self.params.len() {
            return Err(DenoiserError::BadDims {
                got: params.len(),
                expected: self.params.len(),
            });
        }
        self.params = params;
        Ok(())
    }
}

/// Anything that can stand in for the noise predictor during sampling.
///
/// The production implementation is [`DenoiserModel`]; tests drive the
/// sampler with [`FixedEpsilon`] to turn the reverse recursion into an exact
/// algebraic identity.
pub trait EpsilonPredictor {
    /// Signal dimension 2k.
    fn signal_dim(&self) -> usize;
    fn predict_eps(&self, x_t: &[f64], h_r: &[f64], t: usize) -> Result<Vec<f64>, DenoiserError>;
}

impl EpsilonPredictor for DenoiserModel {
    fn signal_dim(&self) -> usize {
        2 * self.k
    }

    fn predict_eps(&self, x_t: &[f64], h_r: &[f64], t: usize) -> Result<Vec<f64>, DenoiserError> {
        Ok(self.forward_cached(x_t, h_r, t)?.0)
    }
}

/// Oracle predictor returning a fixed vector regardless of input. With the
/// vector set to the true noise draw, sampling must invert the forward
/// process exactly; the validation suite leans on this.
#[derive(Debug, Clone)]
pub struct FixedEpsilon(pub Vec<f64>);

impl EpsilonPredictor for FixedEpsilon {
    fn signal_dim(&self) -> usize {
        self.0.len()
    }

    fn predict_eps(&self, x_t: &[f64], _h_r: &[f64], _t: usize) -> Result<Vec<f64>, DenoiserError> {
        if x_t.len() != self.0.len() {
            return Err(DenoiserError::BadDims {
                got: x_t.len(),
                expected: self.0.len(),
            });
        }
        Ok(self.0.clone())
    }
}
