//! Tanh MLPs with exact reverse-mode gradients, a diagonal-Gaussian action
//! head with state-independent log-stds, and Adam. Everything is f64 and
//! deterministic given the RNG; no graph library, gradients are hand-derived.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_INIT: f64 = -0.5;

pub const LN_2PI: f64 = 1.8378770664093453;

/// One dense layer. Weights are row-major with shape `(out_dim, in_dim)`:
/// row `o` starts at `w[o * in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// Uniform init on [-b, b] with b = sqrt(6 / (fan_in + fan_out)); zero biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Layer::zeros(in_dim, out_dim);
        for w in layer.w.iter_mut() {
            *w = rng.random_range(-bound..=bound);
        }
        layer
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.w[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

/// Parameters of one MLP: tanh on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

impl ParamSet {
    /// `dims` lists layer widths input-first, e.g. `[9, 64, 64, 2]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|d| Layer::init(d[0], d[1], rng))
            .collect();
        Ok(ParamSet { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect();
        Ok(ParamSet { layers })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::invalid(
                "mlp dims",
                "need at least input and output widths",
            ));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("mlp dims", "zero-width layer"));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    pub fn fill(&mut self, value: f64) {
        for l in &mut self.layers {
            l.w.fill(value);
            l.b.fill(value);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Dot product over eight independent accumulator lanes. The fixed summation
/// order keeps results reproducible; the `chunks_exact` shape is what lets
/// the compiler drop bounds checks and vectorize the lanes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    acc.iter().sum::<f64>() + tail
}

/// tanh computed through one exp. Cheaper than the libm call and, because
/// d/dx (e-1)/(e+1) = 4e/(e+1)^2 = 1 - t^2 exactly, the backward pass's
/// 1 - a^2 factor stays consistent with the forward to the last bit.
#[inline]
pub fn tanh_consistent(x: f64) -> f64 {
    let ax = 2.0 * x.abs();
    if ax > 38.0 {
        // exp(38) > 3e16: t rounds to 1 anyway, avoid overflow for huge x.
        return 1.0f64.copysign(x);
    }
    let e = ax.exp();
    ((e - 1.0) / (e + 1.0)).copysign(x)
}

/// `y[i] += alpha * x[i]`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Reusable activation storage for one MLP. `acts[0]` is the input,
/// `acts[k + 1]` the post-activation output of layer `k`.
#[derive(Debug, Clone)]
pub struct Scratch {
    pub acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    pub fn for_params(params: &ParamSet) -> Self {
        let mut acts = Vec::with_capacity(params.layers.len() + 1);
        acts.push(vec![0.0; params.in_dim()]);
        for l in &params.layers {
            acts.push(vec![0.0; l.out_dim]);
        }
        let widest = params.dims().into_iter().max().unwrap();
        Scratch {
            acts,
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn check_input(params: &ParamSet, input: &[f64]) -> Result<()> {
    if input.len() != params.in_dim() {
        return Err(Error::Shape {
            context: "mlp input",
            expected: params.in_dim(),
            got: input.len(),
        });
    }
    Ok(())
}

/// Forward pass into `scratch`; returns nothing, read `scratch.output()`.
/// Hidden activations are tanh, so every hidden entry lies in (-1, 1).
#[allow(clippy::needless_range_loop)] // row-major kernel, index feeds row() and b[] together
pub fn mlp_forward_scratch(params: &ParamSet, input: &[f64], scratch: &mut Scratch) {
    debug_assert_eq!(input.len(), params.in_dim());
    scratch.acts[0].copy_from_slice(input);
    let n_layers = params.layers.len();
    for (k, layer) in params.layers.iter().enumerate() {
        let (lo, hi) = scratch.acts.split_at_mut(k + 1);
        let x = lo[k].as_slice();
        let out = &mut hi[0];
        let last = k + 1 == n_layers;
        for o in 0..layer.out_dim {
            let z = dot(layer.row(o), x) + layer.b[o];
            out[o] = if last { z } else { tanh_consistent(z) };
        }
    }
}

/// Forward pass of a tanh MLP (identity output layer).
pub fn mlp_forward(params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
    check_input(params, input)?;
    let mut scratch = Scratch::for_params(params);
    mlp_forward_scratch(params, input, &mut scratch);
    Ok(scratch.output().to_vec())
}

/// Backward pass for the scalar loss `dot(upstream, output)`. Requires the
/// activations of a prior `mlp_forward_scratch` call with the same params.
/// Gradients are accumulated (`+=`) into `grads`; `input_grad` is overwritten.
#[allow(clippy::needless_range_loop)] // row-major kernel, index feeds row() and b[] together
pub fn mlp_backward_scratch(
    params: &ParamSet,
    scratch: &mut Scratch,
    upstream: &[f64],
    grads: &mut ParamSet,
    mut input_grad: Option<&mut [f64]>,
) {
    debug_assert_eq!(upstream.len(), params.out_dim());
    debug_assert!(params.same_shape(grads));
    let n_layers = params.layers.len();
    scratch.delta[..upstream.len()].copy_from_slice(upstream);
    for k in (0..n_layers).rev() {
        let layer = &params.layers[k];
        let g = &mut grads.layers[k];
        let x = scratch.acts[k].as_slice();
        let delta = &scratch.delta[..layer.out_dim];

        for o in 0..layer.out_dim {
            let d = delta[o];
            g.b[o] += d;
            axpy(d, x, &mut g.w[o * layer.in_dim..(o + 1) * layer.in_dim]);
        }

        let want_input_grad = k > 0 || input_grad.is_some();
        if !want_input_grad {
            continue;
        }
        let dp = &mut scratch.delta_prev[..layer.in_dim];
        dp.fill(0.0);
        for o in 0..layer.out_dim {
            axpy(delta[o], layer.row(o), dp);
        }
        if k > 0 {
            // Pre-activation delta of the previous tanh layer: tanh'(z) = 1 - a^2.
            let a = scratch.acts[k].as_slice();
            for (d, &ai) in dp.iter_mut().zip(a) {
                *d *= 1.0 - ai * ai;
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
        } else if let Some(ig) = input_grad.as_deref_mut() {
            ig.copy_from_slice(dp);
        }
    }
}

/// Gradient of `dot(upstream, mlp(input))` with respect to all parameters and
/// the input, via one reverse-mode sweep.
pub fn mlp_gradient(
    params: &ParamSet,
    input: &[f64],
    upstream: &[f64],
) -> Result<(ParamSet, Vec<f64>)> {
    check_input(params, input)?;
    if upstream.len() != params.out_dim() {
        return Err(Error::Shape {
            context: "mlp upstream",
            expected: params.out_dim(),
            got: upstream.len(),
        });
    }
    let mut scratch = Scratch::for_params(params);
    mlp_forward_scratch(params, input, &mut scratch);
    let mut grads = params.zeros_like();
    let mut input_grad = vec![0.0; input.len()];
    mlp_backward_scratch(
        params,
        &mut scratch,
        upstream,
        &mut grads,
        Some(&mut input_grad),
    );
    Ok((grads, input_grad))
}

/// Log-density of a diagonal Gaussian at `action`.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], action: &[f64]) -> Result<f64> {
    if mean.len() != log_std.len() {
        return Err(Error::Shape {
            context: "gaussian log_std",
            expected: mean.len(),
            got: log_std.len(),
        });
    }
    if mean.len() != action.len() {
        return Err(Error::Shape {
            context: "gaussian action",
            expected: mean.len(),
            got: action.len(),
        });
    }
    let mut lp = -0.5 * mean.len() as f64 * LN_2PI;
    for k in 0..mean.len() {
        let u = (action[k] - mean[k]) * (-log_std[k]).exp();
        lp -= 0.5 * u * u + log_std[k];
    }
    Ok(lp)
}

/// Gradients of `gaussian_logprob` with respect to mean and log_std:
/// d/d mean_k = u_k / sigma_k, d/d log_std_k = u_k^2 - 1, u = (a - mean) / sigma.
pub fn gaussian_logprob_grads(
    mean: &[f64],
    log_std: &[f64],
    action: &[f64],
    d_mean: &mut [f64],
    d_log_std: &mut [f64],
) {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), action.len());
    for k in 0..mean.len() {
        let inv_sigma = (-log_std[k]).exp();
        let u = (action[k] - mean[k]) * inv_sigma;
        d_mean[k] = u * inv_sigma;
        d_log_std[k] = u * u - 1.0;
    }
}

/// State-independent log standard deviations for a Gaussian policy.
/// Values are kept inside [LOG_STD_MIN, LOG_STD_MAX] by `clamp`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(action_dim: usize) -> Self {
        GaussianHead {
            log_std: vec![LOG_STD_INIT; action_dim],
        }
    }

    pub fn clamp(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        debug_assert_eq!(mean.len(), self.log_std.len());
        mean.iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| {
                let n: f64 = rng.sample(StandardNormal);
                m + ls.exp() * n
            })
            .collect()
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> Result<f64> {
        gaussian_logprob(mean, &self.log_std, action)
    }
}

fn check_finite_grads(grads: &ParamSet, what: &'static str) -> Result<()> {
    for (k, l) in grads.layers.iter().enumerate() {
        for (i, &g) in l.w.iter().chain(l.b.iter()).enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what,
                    location: format!("layer {k}, entry {i}"),
                    value: g,
                });
            }
        }
    }
    Ok(())
}

/// Adam moments mirroring one ParamSet. `step` applies one descent update;
/// a non-finite gradient aborts with an error instead of poisoning moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::invalid(
                "adam step",
                "parameter and gradient shapes differ",
            ));
        }
        check_finite_grads(grads, "gradient")?;
        self.t += 1;
        let hp = (self.lr, self.beta1, self.beta2, self.eps);
        let (c1, c2) = bias_corrections(self.beta1, self.beta2, self.t);
        for ((pl, gl), (ml, vl)) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()))
        {
            adam_update(&mut pl.w, &gl.w, &mut ml.w, &mut vl.w, hp, c1, c2);
            adam_update(&mut pl.b, &gl.b, &mut ml.b, &mut vl.b, hp, c1, c2);
        }
        Ok(())
    }
}

fn bias_corrections(beta1: f64, beta2: f64, t: u64) -> (f64, f64) {
    (
        1.0 / (1.0 - beta1.powi(t as i32)),
        1.0 / (1.0 - beta2.powi(t as i32)),
    )
}

fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    (lr, beta1, beta2, eps): (f64, f64, f64, f64),
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over one flat vector (used for the policy log-stds).
#[derive(Debug, Clone)]
pub struct AdamVec {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamVec {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamVec {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(
                "adam step",
                "parameter and gradient shapes differ",
            ));
        }
        for (i, &g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    location: format!("vector entry {i}"),
                    value: g,
                });
            }
        }
        self.t += 1;
        let (c1, c2) = bias_corrections(self.beta1, self.beta2, self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= self.lr * (self.m[i] * c1) / ((self.v[i] * c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Textbook forward pass with nested loops, kept independent of the
    /// production kernels on purpose.
    #[allow(clippy::needless_range_loop)]
    fn naive_forward(params: &ParamSet, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for (k, layer) in params.layers.iter().enumerate() {
            let mut y = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let mut z = layer.b[o];
                for i in 0..layer.in_dim {
                    z += layer.w[o * layer.in_dim + i] * x[i];
                }
                y[o] = if k + 1 == params.layers.len() {
                    z
                } else {
                    z.tanh()
                };
            }
            x = y;
        }
        x
    }

    fn loss(params: &ParamSet, input: &[f64], upstream: &[f64]) -> f64 {
        let out = mlp_forward(params, input).unwrap();
        dot(upstream, &out)
    }

    /// Central finite differences over every parameter and input entry.
    fn fd_check(params: &ParamSet, input: &[f64], upstream: &[f64], tol: f64) {
        let h = 1e-5;
        let (grads, input_grad) = mlp_gradient(params, input, upstream).unwrap();
        let mut checked = 0usize;
        for k in 0..params.layers.len() {
            let n_w = params.layers[k].w.len();
            let n_b = params.layers[k].b.len();
            for idx in 0..n_w + n_b {
                let mut plus = params.clone();
                let mut minus = params.clone();
                {
                    let (p, m) = (&mut plus.layers[k], &mut minus.layers[k]);
                    if idx < n_w {
                        p.w[idx] += h;
                        m.w[idx] -= h;
                    } else {
                        p.b[idx - n_w] += h;
                        m.b[idx - n_w] -= h;
                    }
                }
                let fd = (loss(&plus, input, upstream) - loss(&minus, input, upstream)) / (2.0 * h);
                let an = if idx < n_w {
                    grads.layers[k].w[idx]
                } else {
                    grads.layers[k].b[idx - n_w]
                };
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "param grad mismatch layer {k} idx {idx}: fd {fd} vs an {an}"
                );
                checked += 1;
            }
        }
        for i in 0..input.len() {
            let mut plus = input.to_vec();
            let mut minus = input.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss(params, &plus, upstream) - loss(params, &minus, upstream)) / (2.0 * h);
            let denom = fd.abs().max(input_grad[i].abs()).max(1e-8);
            assert!(
                (fd - input_grad[i]).abs() / denom < tol,
                "input grad mismatch idx {i}: fd {fd} vs an {}",
                input_grad[i]
            );
            checked += 1;
        }
        assert_eq!(checked, params.param_count() + input.len());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let params = ParamSet::zeros(&[3, 8, 2]).unwrap();
        let out = mlp_forward(&params, &[0.3, -1.7, 2.4]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut params = ParamSet::zeros(&[2, 1]).unwrap();
        params.layers[0].w.copy_from_slice(&[2.0, -1.0]);
        params.layers[0].b[0] = 0.5;
        let out = mlp_forward(&params, &[1.0, 0.0]).unwrap();
        assert_eq!(out, vec![2.5]);
    }

    #[test]
    fn forward_matches_naive_reference() {
        let mut r = rng(7);
        for dims in [vec![4, 16, 3], vec![9, 64, 64, 2], vec![2, 5, 5, 5, 1]] {
            let params = ParamSet::init(&dims, &mut r).unwrap();
            let input: Vec<f64> = (0..dims[0]).map(|_| r.random_range(-2.0..2.0)).collect();
            let fast = mlp_forward(&params, &input).unwrap();
            let slow = naive_forward(&params, &input);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let mut r = rng(3);
        let params = ParamSet::init(&[5, 32, 32, 4], &mut r).unwrap();
        let input: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = mlp_forward(&params, &input).unwrap();
        let b = mlp_forward(&params, &input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hidden_activations_bounded() {
        let mut r = rng(11);
        let mut params = ParamSet::init(&[3, 16, 16, 2], &mut r).unwrap();
        for l in params.layers.iter_mut() {
            for w in l.w.iter_mut() {
                *w *= 50.0;
            }
        }
        let mut scratch = Scratch::for_params(&params);
        mlp_forward_scratch(&params, &[5.0, -5.0, 5.0], &mut scratch);
        // tanh saturates to exactly +-1.0 in f64 for large inputs.
        for hidden in &scratch.acts[1..scratch.acts.len() - 1] {
            for &a in hidden {
                assert!((-1.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input_len() {
        let params = ParamSet::zeros(&[3, 4, 2]).unwrap();
        assert!(mlp_forward(&params, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut r = rng(5);
        let params = ParamSet::init(&[4, 8, 3], &mut r).unwrap();
        let input = [0.1, -0.2, 0.3, -0.4];
        let (grads, input_grad) = mlp_gradient(&params, &input, &[0.0, 0.0, 0.0]).unwrap();
        for l in &grads.layers {
            assert!(l.w.iter().all(|&g| g == 0.0));
            assert!(l.b.iter().all(|&g| g == 0.0));
        }
        assert!(input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identity_net_weight_grad_is_input() {
        // One affine layer, upstream [1]: d(w.x + b)/dw = x, /db = 1, /dx = w.
        let mut params = ParamSet::zeros(&[3, 1]).unwrap();
        params.layers[0].w.copy_from_slice(&[0.5, -1.5, 2.0]);
        let input = [1.0, 2.0, 3.0];
        let (grads, input_grad) = mlp_gradient(&params, &input, &[1.0]).unwrap();
        assert_eq!(grads.layers[0].w, vec![1.0, 2.0, 3.0]);
        assert_eq!(grads.layers[0].b, vec![1.0]);
        assert_eq!(input_grad, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(17);
        for dims in [vec![4, 8, 8, 2], vec![6, 12, 3], vec![2, 64, 64, 2]] {
            let params = ParamSet::init(&dims, &mut r).unwrap();
            let input: Vec<f64> = (0..dims[0]).map(|_| r.random_range(-1.5..1.5)).collect();
            let upstream: Vec<f64> = (0..*dims.last().unwrap())
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            fd_check(&params, &input, &upstream, 1e-4);
        }
    }

    #[test]
    fn backward_accumulates() {
        let mut r = rng(23);
        let params = ParamSet::init(&[3, 6, 2], &mut r).unwrap();
        let input = [0.2, -0.4, 0.9];
        let upstream = [1.0, -2.0];
        let mut scratch = Scratch::for_params(&params);
        mlp_forward_scratch(&params, &input, &mut scratch);
        let mut grads = params.zeros_like();
        mlp_backward_scratch(&params, &mut scratch, &upstream, &mut grads, None);
        mlp_forward_scratch(&params, &input, &mut scratch);
        mlp_backward_scratch(&params, &mut scratch, &upstream, &mut grads, None);
        let (single, _) = mlp_gradient(&params, &input, &upstream).unwrap();
        for (l2, l1) in grads.layers.iter().zip(&single.layers) {
            for (a, b) in l2.w.iter().zip(&l1.w) {
                assert!((a - 2.0 * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_respects_fan_bound() {
        let mut r = rng(31);
        let params = ParamSet::init(&[10, 20, 5], &mut r).unwrap();
        for l in &params.layers {
            let bound = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            assert!(l.w.iter().all(|&w| w.abs() <= bound));
            assert!(l.b.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn logprob_standard_normal_at_mean() {
        // -0.5 * ln(2 pi) for one dimension at the mean with sigma = 1.
        let lp = gaussian_logprob(&[0.0], &[0.0], &[0.0]).unwrap();
        assert!((lp - (-0.9189385332046727)).abs() < 1e-12);
        let lp1 = gaussian_logprob(&[0.0], &[0.0], &[1.0]).unwrap();
        assert!((lp1 - (-1.4189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn logprob_maximized_at_mean() {
        let mut r = rng(41);
        let mean = [0.3, -0.7];
        let log_std = [-0.5, 0.2];
        let at_mean = gaussian_logprob(&mean, &log_std, &mean).unwrap();
        for _ in 0..200 {
            let a = [
                mean[0] + r.random_range(-3.0..3.0),
                mean[1] + r.random_range(-3.0..3.0),
            ];
            assert!(gaussian_logprob(&mean, &log_std, &a).unwrap() <= at_mean);
        }
    }

    #[test]
    fn logprob_density_integrates_to_one() {
        // Trapezoid quadrature of exp(logprob) over [-8 sigma, 8 sigma].
        let mean = [0.4];
        let log_std: [f64; 1] = [-0.3];
        let sigma = log_std[0].exp();
        let (lo, hi) = (mean[0] - 8.0 * sigma, mean[0] + 8.0 * sigma);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * h * gaussian_logprob(&mean, &log_std, &[x]).unwrap().exp();
        }
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn logprob_grads_match_finite_differences() {
        let mut r = rng(47);
        let h = 1e-6;
        for _ in 0..50 {
            let k = 2;
            let mean: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
            let log_std: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..0.5)).collect();
            let action: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut d_mean = vec![0.0; k];
            let mut d_ls = vec![0.0; k];
            gaussian_logprob_grads(&mean, &log_std, &action, &mut d_mean, &mut d_ls);
            for i in 0..k {
                let mut mp = mean.clone();
                let mut mm = mean.clone();
                mp[i] += h;
                mm[i] -= h;
                let fd = (gaussian_logprob(&mp, &log_std, &action).unwrap()
                    - gaussian_logprob(&mm, &log_std, &action).unwrap())
                    / (2.0 * h);
                assert!((fd - d_mean[i]).abs() < 1e-6);

                let mut lp = log_std.clone();
                let mut lm = log_std.clone();
                lp[i] += h;
                lm[i] -= h;
                let fd = (gaussian_logprob(&mean, &lp, &action).unwrap()
                    - gaussian_logprob(&mean, &lm, &action).unwrap())
                    / (2.0 * h);
                assert!((fd - d_ls[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn head_clamps_and_samples_deterministically() {
        let mut head = GaussianHead::new(2);
        assert_eq!(head.log_std, vec![-0.5, -0.5]);
        head.log_std = vec![-9.0, 9.0];
        head.clamp();
        assert_eq!(head.log_std, vec![LOG_STD_MIN, LOG_STD_MAX]);

        let head = GaussianHead::new(2);
        let a = head.sample(&[0.1, -0.1], &mut rng(99));
        let b = head.sample(&[0.1, -0.1], &mut rng(99));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_and_std_match_head() {
        let head = GaussianHead::new(1);
        let mut r = rng(13);
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let a = head.sample(&[0.5], &mut r)[0];
            s1 += a;
            s2 += a * a;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 5e-3);
        assert!((var.sqrt() - (-0.5f64).exp()).abs() < 5e-3);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut r = rng(53);
        let mut params = ParamSet::init(&[3, 4, 1], &mut r).unwrap();
        let before = params.clone();
        let zero_grads = params.zeros_like();
        let mut opt = AdamState::new(&params, 3e-4);
        opt.step(&mut params, &zero_grads).unwrap();
        assert_eq!(params, before);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // With bias correction, step one moves by lr * g / (|g| + eps).
        let mut params = ParamSet::zeros(&[1, 1]).unwrap();
        let mut grads = params.zeros_like();
        grads.layers[0].w[0] = 0.1;
        let mut opt = AdamState::new(&params, 3e-4);
        opt.step(&mut params, &grads).unwrap();
        let expected = -3e-4 * 0.1 / (0.1 + 1e-8);
        assert!((params.layers[0].w[0] - expected).abs() < 1e-12);
        assert!((params.layers[0].w[0] + 3.0e-4).abs() < 1e-9);
    }

    #[test]
    fn adam_matches_textbook_reference_and_descends_quadratic() {
        // Minimize f(x) = x^2 from x = 1; compare against a literal
        // transcription of the update equations.
        let mut params = ParamSet::zeros(&[1, 1]).unwrap();
        params.layers[0].w[0] = 1.0;
        let mut opt = AdamState::new(&params, 0.1);

        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let mut prev_f = x * x;
        for t in 1..=5u32 {
            let mut grads = params.zeros_like();
            grads.layers[0].w[0] = 2.0 * params.layers[0].w[0];
            opt.step(&mut params, &grads).unwrap();

            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            x -= lr * m_hat / (v_hat.sqrt() + eps);

            assert!((params.layers[0].w[0] - x).abs() < 1e-15);
            let f = x * x;
            assert!(f < prev_f, "f not decreasing at step {t}: {f} vs {prev_f}");
            prev_f = f;
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = ParamSet::zeros(&[2, 2]).unwrap();
        let mut grads = params.zeros_like();
        grads.layers[0].w[2] = f64::NAN;
        let mut opt = AdamState::new(&params, 1e-3);
        let err = opt.step(&mut params, &grads).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        // Moments untouched so the epoch can be retried after diagnosis.
        assert_eq!(opt.t, 0);
    }

    #[test]
    fn adam_vec_tracks_param_set() {
        // The same gradient sequence must produce the same trajectory
        // through AdamVec and AdamState.
        let mut params = ParamSet::zeros(&[1, 2]).unwrap();
        let mut opt = AdamState::new(&params, 1e-2);
        let mut flat = vec![0.0; 2];
        let mut opt_vec = AdamVec::new(2, 1e-2);
        for t in 0..7 {
            let g = [0.3 + t as f64 * 0.1, -0.2];
            let mut grads = params.zeros_like();
            grads.layers[0].w.copy_from_slice(&g);
            opt.step(&mut params, &grads).unwrap();
            opt_vec.step(&mut flat, &g).unwrap();
            assert_eq!(params.layers[0].w, flat);
        }
    }

    #[test]
    fn tanh_consistent_matches_libm() {
        assert_eq!(tanh_consistent(0.0), 0.0);
        assert_eq!(tanh_consistent(100.0), 1.0);
        assert_eq!(tanh_consistent(-100.0), -1.0);
        let mut x = -25.0;
        while x <= 25.0 {
            let t = tanh_consistent(x);
            let r = x.tanh();
            assert!(
                (t - r).abs() <= 1e-15 + 1e-14 * r.abs(),
                "x {x}: {t} vs {r}"
            );
            assert_eq!(tanh_consistent(-x), -t);
            assert!(t.abs() <= 1.0);
            x += 0.00173;
        }
    }

    #[test]
    fn dot_and_axpy_basics() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, -1.0, 0.5, 1.0, -2.0];
        assert!((dot(&a, &b) - (2.0 - 2.0 + 1.5 + 4.0 - 10.0)).abs() < 1e-15);
        let mut y = vec![1.0, 1.0, 1.0, 1.0, 1.0];
        axpy(2.0, &a, &mut y);
        assert_eq!(y, vec![3.0, 5.0, 7.0, 9.0, 11.0]);
    }
}
