//! Flat-parameter network building blocks.
//!
//! All models in this crate keep their weights in one `Vec<f64>` and describe
//! structure with offset views ([`Linear`]). Gradients are accumulated into a
//! flat vector of the same layout, which keeps the optimizer and the
//! finite-difference checks trivial: parameter i is just index i everywhere.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("input has {got} dims, expected {expected}")]
    BadInput { got: usize, expected: usize },
    #[error("gradient length {got} does not match parameter length {expected}")]
    BadGradLength { got: usize, expected: usize },
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Offset view of one affine layer inside a flat parameter vector.
///
/// Weights are row-major (`w[out][in]` at `w_off + out * in_dim + in`),
/// followed by `out_dim` biases at `b_off`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Linear {
    /// Lay the layer out at `offset`; returns the descriptor and the offset
    /// just past it.
    pub fn lay_out(in_dim: usize, out_dim: usize, offset: usize) -> (Self, usize) {
        let w_off = offset;
        let b_off = offset + in_dim * out_dim;
        (
            Self {
                in_dim,
                out_dim,
                w_off,
                b_off,
            },
            b_off + out_dim,
        )
    }

    pub fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for j in 0..self.out_dim {
            let row = &params[self.w_off + j * self.in_dim..self.w_off + (j + 1) * self.in_dim];
            let mut acc = params[self.b_off + j];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out[j] = acc;
        }
    }

    /// Accumulate parameter gradients for this layer and add the gradient
    /// with respect to its input into `g_in`.
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        g_out: &[f64],
        grads: &mut [f64],
        g_in: Option<&mut [f64]>,
    ) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(g_out.len(), self.out_dim);
        for j in 0..self.out_dim {
            let g = g_out[j];
            grads[self.b_off + j] += g;
            let grow = &mut grads[self.w_off + j * self.in_dim..self.w_off + (j + 1) * self.in_dim];
            for (gw, x) in grow.iter_mut().zip(input) {
                *gw += g * x;
            }
        }
        if let Some(g_in) = g_in {
            debug_assert_eq!(g_in.len(), self.in_dim);
            for j in 0..self.out_dim {
                let g = g_out[j];
                let row = &params[self.w_off + j * self.in_dim..self.w_off + (j + 1) * self.in_dim];
                for (gi, w) in g_in.iter_mut().zip(row) {
                    *gi += g * w;
                }
            }
        }
    }

    /// Fan-in scaled uniform init for the weights; biases stay zero.
    pub fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        let bound = (1.0 / self.in_dim as f64).sqrt();
        for w in &mut params[self.w_off..self.w_off + self.in_dim * self.out_dim] {
            *w = rng.random_range(-bound..bound);
        }
        for b in &mut params[self.b_off..self.b_off + self.out_dim] {
            *b = 0.0;
        }
    }
}

/// Plain feedforward net: SiLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Linear>,
    param_count: usize,
}

/// Intermediate values of one [`Mlp::forward_cached`] pass.
pub struct MlpCache {
    /// acts[0] is the input; acts[l+1] is the activated output of layer l.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pres: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "zero-width layer");
        assert!(hidden.iter().all(|&w| w > 0), "zero-width hidden layer");
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for w in dims.windows(2) {
            let (layer, next) = Linear::lay_out(w[0], w[1], offset);
            layers.push(layer);
            offset = next;
        }
        Self {
            dims,
            layers,
            param_count: offset,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count];
        for layer in &self.layers {
            layer.init(&mut params, rng);
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(params, x)?.0)
    }

    pub fn forward_cached(
        &self,
        params: &[f64],
        x: &[f64],
    ) -> Result<(Vec<f64>, MlpCache), NnError> {
        if x.len() != self.in_dim() {
            return Err(NnError::BadInput {
                got: x.len(),
                expected: self.in_dim(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("network input"));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = vec![0.0; layer.out_dim];
            layer.forward(params, &acts[l], &mut pre);
            let last = l == self.layers.len() - 1;
            let act = if last {
                pre.clone()
            } else {
                pre.iter().map(|&p| silu(p)).collect()
            };
            pres.push(pre);
            acts.push(act);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, MlpCache { acts, pres }))
    }

    /// Backpropagate `g_out = dL/d(output)`, accumulating parameter
    /// gradients; returns `dL/d(input)`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        g_out: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(grads.len(), self.param_count);
        assert_eq!(g_out.len(), self.out_dim());
        let mut g = g_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let last = l == self.layers.len() - 1;
            if !last {
                for (gi, pre) in g.iter_mut().zip(&cache.pres[l]) {
                    *gi *= silu_prime(*pre);
                }
            }
            let mut g_in = vec![0.0; layer.in_dim];
            layer.backward(params, &cache.acts[l], &g, grads, Some(&mut g_in));
            g = g_in;
        }
        g
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, step_count: u64) -> Self {
        assert_eq!(m.len(), v.len());
        Self {
            m,
            v,
            step_count,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// One update. Rejects non-finite gradients before touching anything and
    /// guarantees the parameters stay finite afterwards.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NnError> {
        if grads.len() != params.len() {
            return Err(NnError::BadGradLength {
                got: grads.len(),
                expected: params.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite("gradient"));
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(NnError::NonFinite("learning rate"));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.epsilon);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFinite("parameters after update"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut params = vec![1.5, -0.25, 3.0];
        let before = params.clone();
        let mut opt = AdamState::new(3);
        opt.step(&mut params, &[0.0, 0.0, 0.0], 1e-2).unwrap();
        assert_eq!(params, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn single_step_moves_toward_quadratic_minimum() {
        let mut p = vec![0.0];
        let mut opt = AdamState::new(1);
        let g = 2.0 * (p[0] - 3.0);
        opt.step(&mut p, &[g], 1e-2).unwrap();
        assert!(p[0] > 0.0 && p[0] < 3.0, "p = {}", p[0]);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // frozen behavior: reaches 1e-6 around step 1.4e3, well under 1e4
        let mut p = vec![0.0];
        let mut opt = AdamState::new(1);
        for _ in 0..10_000 {
            let g = 2.0 * (p[0] - 3.0);
            opt.step(&mut p, &[g], 1e-2).unwrap();
        }
        assert!((p[0] - 3.0).abs() <= 1e-6, "p = {}", p[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut p = vec![1.0];
        let before = p.clone();
        let mut opt = AdamState::new(1);
        assert_eq!(
            opt.step(&mut p, &[f64::NAN], 1e-2),
            Err(NnError::NonFinite("gradient"))
        );
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn mlp_layout_and_param_count() {
        let net = Mlp::new(4, &[8, 8], 2);
        assert_eq!(net.param_count(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
        let params = net.init_params(&mut RngStream::new(5, 0).rng());
        assert_eq!(params.len(), net.param_count());
        // biases of the first layer start at zero
        assert!(params[4 * 8..4 * 8 + 8].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let net = Mlp::new(3, &[5], 2);
        let mut params = net.init_params(&mut RngStream::new(6, 0).rng());
        let x = [0.3, -1.2, 0.7];
        let target = [0.5, -0.25];
        let loss = |p: &[f64]| {
            let out = net.forward(p, &x).unwrap();
            out.iter()
                .zip(&target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
        };
        let (out, cache) = net.forward_cached(&params, &x).unwrap();
        let g_out: Vec<f64> = out
            .iter()
            .zip(&target)
            .map(|(o, t)| 2.0 * (o - t))
            .collect();
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&params, &cache, &g_out, &mut grads);
        let h = 1e-5;
        for i in 0..net.param_count() {
            let orig = params[i];
            params[i] = orig + h;
            let lp = loss(&params);
            params[i] = orig - h;
            let lm = loss(&params);
            params[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let rel = (num - grads[i]).abs() / (num.abs() + grads[i].abs()).max(1e-8);
            assert!(
                rel < 1e-6,
                "param {i}: numeric {num} vs analytic {}",
                grads[i]
            );
        }
    }

    #[test]
    fn mlp_input_gradient_matches_finite_differences() {
        let net = Mlp::new(3, &[4], 2);
        let params = net.init_params(&mut RngStream::new(7, 0).rng());
        let x = vec![0.1, 0.4, -0.9];
        let target = [1.0, 0.0];
        let loss = |x: &[f64]| {
            let out = net.forward(&params, x).unwrap();
            out.iter()
                .zip(&target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
        };
        let (out, cache) = net.forward_cached(&params, &x).unwrap();
        let g_out: Vec<f64> = out
            .iter()
            .zip(&target)
            .map(|(o, t)| 2.0 * (o - t))
            .collect();
        let mut grads = vec![0.0; net.param_count()];
        let g_in = net.backward(&params, &cache, &g_out, &mut grads);
        let h = 1e-5;
        for i in 0..3 {
            let mut xp = x.clone();
            xp[i] += h;
            let lp = loss(&xp);
            xp[i] -= 2.0 * h;
            let lm = loss(&xp);
            let num = (lp - lm) / (2.0 * h);
            let rel = (num - g_in[i]).abs() / (num.abs() + g_in[i].abs()).max(1e-8);
            assert!(
                rel < 1e-6,
                "input {i}: numeric {num} vs analytic {}",
                g_in[i]
            );
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = Mlp::new(2, &[], 1);
        let params = net.init_params(&mut RngStream::new(8, 0).rng());
        assert_eq!(
            net.forward(&params, &[f64::NAN, 0.0]),
            Err(NnError::NonFinite("network input"))
        );
    }
}
