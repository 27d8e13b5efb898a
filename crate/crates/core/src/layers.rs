//! Parameterized building blocks: linear maps, layer norms, MLP heads and
//! pre-LN Transformer blocks.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::params::{uniform_tensor, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// `U(±1/√fan_in)` for weight and bias.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        Linear {
            weight: store.add(format!("{name}.weight"), uniform_tensor(rng, &[fan_in, fan_out], bound)),
            bias: store.add(format!("{name}.bias"), uniform_tensor(rng, &[fan_out], bound)),
            fan_in,
            fan_out,
        }
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, eps: f64) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps,
        }
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, T::of(self.eps))
    }
}

/// Two-layer perceptron `fc2(GELU([LN](fc1(x))))`.
#[derive(Debug, Clone, Copy)]
pub struct MlpHead {
    pub fc1: Linear,
    pub norm: Option<LayerNorm>,
    pub fc2: Linear,
}

impl MlpHead {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: [usize; 3],
        norm_eps: Option<f64>,
        rng: &mut Rng,
    ) -> Self {
        let fc1 = Linear::new(store, &format!("{name}.fc1"), dims[0], dims[1], rng);
        let norm = norm_eps.map(|eps| LayerNorm::new(store, &format!("{name}.norm"), dims[1], eps));
        let fc2 = Linear::new(store, &format!("{name}.fc2"), dims[1], dims[2], rng);
        MlpHead { fc1, norm, fc2 }
    }

    pub fn param_count(dims: [usize; 3], with_norm: bool) -> usize {
        Linear::param_count(dims[0], dims[1])
            + if with_norm { LayerNorm::param_count(dims[1]) } else { 0 }
            + Linear::param_count(dims[1], dims[2])
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = self.fc1.forward(g, store, x)?;
        if let Some(norm) = &self.norm {
            h = norm.forward(g, store, h)?;
        }
        let h = g.gelu(h)?;
        self.fc2.forward(g, store, h)
    }
}

/// Inverted dropout; identity when `rng` is `None` or `rate == 0`.
pub fn dropout<T: Real>(g: &mut Graph<T>, x: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    if rate >= 1.0 {
        return Err(invalid("dropout rate must be < 1"));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let m = g.constant(Tensor::from_parts(shape, mask));
    g.mul(x, m)
}

/// Pre-LN Transformer encoder block: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub out: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
}

impl EncoderBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        mlp: usize,
        eps: f64,
        rng: &mut Rng,
    ) -> Self {
        EncoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d, eps),
            qkv: Linear::new(store, &format!("{name}.attn.qkv"), d, 3 * d, rng),
            out: Linear::new(store, &format!("{name}.attn.out"), d, d, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d, eps),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), d, mlp, rng),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), mlp, d, rng),
            heads,
        }
    }

    pub fn param_count(d: usize, mlp: usize) -> usize {
        2 * LayerNorm::param_count(d)
            + Linear::param_count(d, 3 * d)
            + Linear::param_count(d, d)
            + Linear::param_count(d, mlp)
            + Linear::param_count(mlp, d)
    }

    /// `x[B, L, d]` → (`[B, L, d]`, attention probabilities `[B·H, L, L]`).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        dropout_rate: f64,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        let [b, l, d] = shape[..] else {
            return Err(invalid(format!("encoder block expects [B, L, d], got {shape:?}")));
        };
        let h = self.heads;
        let dh = d / h;
        let normed = self.ln1.forward(g, store, x)?;
        let qkv = self.qkv.forward(g, store, normed)?;
        let qkv = g.reshape(qkv, &[b, l, 3, h, dh])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?; // [3, B, H, L, dh]
        let take = |g: &mut Graph<T>, i: usize| -> Result<Var> {
            let t = g.narrow(qkv, 0, i, 1)?;
            g.reshape(t, &[b * h, l, dh])
        };
        let q = take(g, 0)?;
        let k = take(g, 1)?;
        let v = take(g, 2)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, T::of(1.0 / libm::sqrt(dh as f64)))?;
        let attn = g.softmax(scores)?;
        let ctx = g.matmul(attn, v)?; // [B·H, L, dh]
        let ctx = g.reshape(ctx, &[b, h, l, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, l, d])?;
        let o = self.out.forward(g, store, ctx)?;
        let o = dropout(g, o, dropout_rate, rng.as_deref_mut())?;
        let x = g.add(x, o)?;

        let normed = self.ln2.forward(g, store, x)?;
        let m = self.fc1.forward(g, store, normed)?;
        let m = g.gelu(m)?;
        let m = self.fc2.forward(g, store, m)?;
        let m = dropout(g, m, dropout_rate, rng)?;
        Ok((g.add(x, m)?, attn))
    }
}

/// Fixed sinusoidal position table `[n, d]`:
/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(…)`.
pub fn sinusoidal_pe<T: Real>(n: usize, d: usize) -> Result<Tensor<T>> {
    if d % 2 != 0 {
        return Err(invalid(format!("positional encoding needs an even width, got {d}")));
    }
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d / 2 {
            let angle = pos as f64 / libm::pow(10000.0, (2 * i) as f64 / d as f64);
            data.push(T::of(libm::sin(angle)));
            data.push(T::of(libm::cos(angle)));
        }
    }
    Ok(Tensor::from_parts(alloc::vec![n, d], data))
}
