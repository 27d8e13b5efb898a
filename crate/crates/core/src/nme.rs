//! Numerically multi-scaled embedding of real scalars.
//!
//! A basic block maps a scalar `x` to `LN(x·w + k·b)`. Its output saturates to a
//! constant once `|x|` is far from `k`, so the embedding runs one block per scale
//! `kᵢ` and mixes them with weights proportional to `1/|ln(|x|/kᵢ + ε)|`, which
//! peak at the scale closest to `|x|`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::params::{normal_tensor, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmeConfig {
    /// Strictly increasing positive bias multipliers.
    pub scales: Vec<f64>,
    pub epsilon: f64,
    pub embed_dim: usize,
    /// Upper clamp on raw weights, reached when `|x|/kᵢ + ε` is exactly 1.
    pub weight_clamp: f64,
    /// `false` averages the blocks uniformly.
    pub weighted: bool,
    /// Std of the Gaussian initialization of `w` and `b`.
    pub init_std: f64,
}

impl Default for NmeConfig {
    fn default() -> Self {
        NmeConfig::centered(9)
    }
}

impl NmeConfig {
    /// `n` decades centred on 1: n = 9 gives 10⁻⁴ … 10⁴.
    pub fn centered(n: usize) -> Self {
        let half = (n as i32 - 1) / 2;
        let lo = -half;
        NmeConfig {
            scales: (0..n as i32).map(|i| libm::pow(10.0, f64::from(lo + i))).collect(),
            epsilon: 1e-6,
            embed_dim: 32,
            weight_clamp: 1e12,
            weighted: true,
            init_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(invalid("NME needs at least one scale"));
        }
        if self.scales.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(invalid("NME scales must be positive and finite"));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("NME scales must be strictly increasing"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("NME epsilon must be positive"));
        }
        if self.embed_dim < 2 {
            return Err(invalid(format!("NME embed_dim must be >= 2, got {}", self.embed_dim)));
        }
        if !(self.weight_clamp > 0.0) {
            return Err(invalid("NME weight_clamp must be positive"));
        }
        Ok(())
    }
}

/// Mixing weights over scales for one scalar; a probability simplex.
pub fn scale_weights(x: f64, cfg: &NmeConfig) -> Vec<f64> {
    let n = cfg.scales.len();
    if !cfg.weighted {
        return vec![1.0 / n as f64; n];
    }
    let ax = x.abs();
    let raw: Vec<f64> = cfg
        .scales
        .iter()
        .map(|&k| {
            let l = libm::log(ax / k + cfg.epsilon).abs();
            let w = 1.0 / l;
            if w.is_finite() {
                w.min(cfg.weight_clamp)
            } else {
                cfg.weight_clamp
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Parameters of one basic block.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub w: ParamId,
    pub b: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// One embedder: a basic block per configured scale.
#[derive(Debug, Clone)]
pub struct Nme {
    pub config: NmeConfig,
    pub blocks: Vec<BlockParams>,
}

impl Nme {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, config: NmeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let blocks = (0..config.scales.len())
            .map(|i| BlockParams {
                w: store.add(format!("{prefix}.scale{i}.w"), normal_tensor(rng, &[d], config.init_std)),
                b: store.add(format!("{prefix}.scale{i}.b"), normal_tensor(rng, &[d], config.init_std)),
                gamma: store.add(format!("{prefix}.scale{i}.gamma"), Tensor::ones(&[d])),
                beta: store.add(format!("{prefix}.scale{i}.beta"), Tensor::zeros(&[d])),
            })
            .collect();
        Ok(Nme { config, blocks })
    }

    pub fn param_count(config: &NmeConfig) -> usize {
        4 * config.embed_dim * config.scales.len()
    }

    /// Embeds a batch of scalars into `[B, embed_dim]`.
    pub fn embed<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, xs: &[f64], ln_eps: f64) -> Result<Var> {
        let d = self.config.embed_dim;
        let b = xs.len();
        let x = g.constant(Tensor::from_parts(vec![b, 1], xs.iter().map(|&v| T::of(v)).collect()));
        let n = self.blocks.len();
        if n == 1 {
            return basic_block(g, store, x, self.config.scales[0], &self.blocks[0], ln_eps);
        }
        let weights: Vec<Vec<f64>> = xs.iter().map(|&v| scale_weights(v, &self.config)).collect();
        let mut acc: Option<Var> = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let y = basic_block(g, store, x, self.config.scales[i], block, ln_eps)?;
            let mut alpha = Vec::with_capacity(b * d);
            for w in &weights {
                alpha.extend(core::iter::repeat(T::of(w[i])).take(d));
            }
            let alpha = g.constant(Tensor::from_parts(vec![b, d], alpha));
            let term = g.mul(y, alpha)?;
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(a, term)?,
            });
        }
        Ok(acc.expect("at least one scale"))
    }
}

/// `LN(x·w + k·b)` with affine `(γ, β)`, for `x[B, 1]`; returns `[B, D]`.
///
/// The normalization epsilon is `ln_eps·k²`, so the block depends on `x` only
/// through `x/k` and stays normalized for scales far below 1.
pub fn basic_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    k: f64,
    p: &BlockParams,
    ln_eps: f64,
) -> Result<Var> {
    let w = g.param(store, p.w);
    let d = g.shape(w)[0];
    let w_row = g.reshape(w, &[1, d])?;
    let b = g.param(store, p.b);
    let gamma = g.param(store, p.gamma);
    let beta = g.param(store, p.beta);
    let xw = g.matmul(x, w_row)?;
    let kb = g.scale(b, T::of(k))?;
    let z = g.add(xw, kb)?;
    g.layer_norm(z, gamma, beta, T::of(ln_eps * k * k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn default_scales() {
        let c = NmeConfig::default();
        assert_eq!(c.scales.len(), 9);
        assert_eq!(c.scales[0], 1e-4);
        assert_eq!(c.scales[4], 1.0);
        assert_eq!(c.scales[8], 1e4);
        assert_eq!(NmeConfig::centered(3).scales, vec![0.1, 1.0, 10.0]);
        assert_eq!(NmeConfig::centered(1).scales, vec![1.0]);
    }

    #[test]
    fn weights_at_zero_are_uniform() {
        let c = NmeConfig::default();
        for a in scale_weights(0.0, &c) {
            assert!((a - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_hand_example() {
        let c = NmeConfig {
            scales: vec![1.0, 10.0, 100.0],
            ..NmeConfig::default()
        };
        let a = scale_weights(10.0, &c);
        // raw: 1/ln(10.000001), 1/ln(1.000001), 1/|ln(0.100001)|
        let raw = [
            1.0 / 10.000001f64.ln(),
            1.0 / 1.000001f64.ln(),
            1.0 / 0.100001f64.ln().abs(),
        ];
        assert!((raw[0] - 0.434).abs() < 1e-3 && (raw[1] - 1.0e6).abs() < 1.0);
        let total: f64 = raw.iter().sum();
        for (x, r) in a.iter().zip(raw) {
            assert!((x - r / total).abs() < 1e-12);
        }
        assert!((a[0] - 4.3e-7).abs() < 1e-8 && (a[1] - 0.9999991).abs() < 1e-7);
    }

    #[test]
    fn exact_singularity_hits_clamp() {
        let c = NmeConfig {
            scales: vec![1.0, 10.0],
            epsilon: 0.5,
            ..NmeConfig::default()
        };
        // |x|/k + eps == 1 exactly at x = 0.5, k = 1
        let a = scale_weights(0.5, &c);
        assert!(a[0] > 1.0 - 1e-9);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unweighted_is_uniform() {
        let c = NmeConfig {
            weighted: false,
            ..NmeConfig::default()
        };
        assert!(scale_weights(123.0, &c).iter().all(|&a| (a - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn validation() {
        let mut c = NmeConfig::default();
        c.scales = vec![1.0, 1.0];
        assert!(c.validate().is_err());
        c.scales = vec![-1.0];
        assert!(c.validate().is_err());
        c = NmeConfig::default();
        c.embed_dim = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_input_is_independent_of_k() {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng::stream(3, 0);
        let nme = Nme::new(&mut store, "n", NmeConfig::centered(3), &mut r).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1]));
        let a = basic_block(&mut g, &store, x, 0.01, &nme.blocks[0], 1e-5).unwrap();
        let b = basic_block(&mut g, &store, x, 100.0, &nme.blocks[0], 1e-5).unwrap();
        for (u, v) in g.value(a).data().iter().zip(g.value(b).data()) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
