//! The NuTime encoder: window tokens → embeddings → [CLS] + sinusoidal
//! positions → pre-LN Transformer → [CLS] representation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::layers::{sinusoidal_pe, EncoderBlock, LayerNorm, Linear, MlpHead};
use crate::nme::{Nme, NmeConfig};
use crate::params::{normal_tensor, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::tokenizer::{tokenize_window, RawSeries};

/// How raw windows are turned into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    /// Shape/mean/std decomposition with multi-scale scalar embeddings.
    Nme,
    /// Dataset-level standardization, then linear + LayerNorm on raw windows.
    Zscore,
    /// Per-sample standardization, then linear + LayerNorm on raw windows.
    InstanceNorm,
    /// Linear + LayerNorm on untouched raw windows.
    Identity,
}

impl core::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nme" => Ok(EncodingMode::Nme),
            "zscore" => Ok(EncodingMode::Zscore),
            "instance_norm" => Ok(EncodingMode::InstanceNorm),
            "identity" => Ok(EncodingMode::Identity),
            other => Err(invalid(format!("unknown encoding mode {other:?}"))),
        }
    }
}

/// Global mean and population std over every value of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: f64,
    pub std: f64,
}

impl DatasetStats {
    pub fn compute(series: &[RawSeries]) -> Result<Self> {
        let n: usize = series.iter().map(|s| s.values().len()).sum();
        if n == 0 {
            return Err(Error::InsufficientData("empty dataset".into()));
        }
        let mean = series.iter().flat_map(|s| s.values()).sum::<f64>() / n as f64;
        let var = series
            .iter()
            .flat_map(|s| s.values())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        Ok(DatasetStats {
            mean,
            std: libm::sqrt(var),
        })
    }
}

/// `(x − μ_dataset) / σ_dataset`.
pub fn zscore(series: &RawSeries, stats: &DatasetStats) -> Result<RawSeries> {
    if !(stats.std > 0.0) {
        return Err(invalid("z-score needs a dataset std > 0"));
    }
    let values = series.values().iter().map(|v| (v - stats.mean) / stats.std).collect();
    series.with_values(series.channels(), values)
}

/// Standardizes each channel of one sample to zero mean and unit std.
pub fn instance_norm(series: &RawSeries) -> Result<RawSeries> {
    let mut values = Vec::with_capacity(series.values().len());
    for c in 0..series.channels() {
        let ch = series.channel(c);
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let std = libm::sqrt(ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        let d = if std > 0.0 { std } else { 1.0 };
        values.extend(ch.iter().map(|v| (v - mean) / d));
    }
    series.with_values(series.channels(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_dim: usize,
    pub window_size: usize,
    pub shape_embed_dim: usize,
    pub mean_std_embed_dim: usize,
    pub nme: NmeConfig,
    pub max_tokens: usize,
    pub n_channels: usize,
    /// Classification head width; 0 builds an encoder without a head.
    pub n_classes: usize,
    pub encoding: EncodingMode,
    /// Required by `Zscore` encoding.
    pub dataset_stats: Option<DatasetStats>,
    pub ln_eps: f64,
    pub std_floor: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 6,
            n_heads: 8,
            mlp_dim: 512,
            window_size: 16,
            shape_embed_dim: 64,
            mean_std_embed_dim: 32,
            nme: NmeConfig::default(),
            max_tokens: 256,
            n_channels: 1,
            n_classes: 0,
            encoding: EncodingMode::Nme,
            dataset_stats: None,
            ln_eps: 1e-5,
            std_floor: crate::tokenizer::DEFAULT_STD_FLOOR,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// Reduced trunk for single-CPU experiments (2 layers, 4 heads, width 64).
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            mlp_dim: 128,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(invalid(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(invalid("d_model must be even for sinusoidal positions"));
        }
        if self.window_size < 2 {
            return Err(invalid("window_size must be >= 2"));
        }
        if self.nme.embed_dim != self.mean_std_embed_dim {
            return Err(invalid(format!(
                "nme.embed_dim {} differs from mean_std_embed_dim {}",
                self.nme.embed_dim, self.mean_std_embed_dim
            )));
        }
        if self.shape_embed_dim < 2 || self.mlp_dim == 0 || self.max_tokens == 0 || self.n_channels == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        if self.n_classes == 1 {
            return Err(invalid("a classification head needs n_classes >= 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must be in [0, 1)"));
        }
        if self.encoding == EncodingMode::Zscore {
            match self.dataset_stats {
                Some(s) if s.std > 0.0 => {}
                _ => return Err(invalid("z-score encoding needs dataset stats with std > 0")),
            }
        }
        self.nme.validate()
    }

    /// Width of `concat(shape, mean, std)` before the token projection.
    pub fn concat_width(&self) -> usize {
        self.shape_embed_dim + 2 * self.mean_std_embed_dim
    }

    /// Exact number of scalar parameters of the model built from this config.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let embed = match self.encoding {
            EncodingMode::Nme => {
                Linear::param_count(self.window_size, self.shape_embed_dim)
                    + LayerNorm::param_count(self.shape_embed_dim)
                    + 2 * Nme::param_count(&self.nme)
                    + Linear::param_count(self.concat_width(), d)
            }
            _ => Linear::param_count(self.window_size, d) + LayerNorm::param_count(d),
        };
        let merge = if self.n_channels > 1 {
            Linear::param_count(self.n_channels * d, d)
        } else {
            0
        };
        let head = if self.n_classes >= 2 {
            MlpHead::param_count([d, d, self.n_classes], false)
        } else {
            0
        };
        embed
            + merge
            + d
            + self.n_layers * EncoderBlock::param_count(d, self.mlp_dim)
            + LayerNorm::param_count(d)
            + head
    }
}

#[derive(Debug, Clone)]
enum TokenEmbed {
    Nme {
        shape: Linear,
        shape_ln: LayerNorm,
        mean: Nme,
        std: Nme,
        proj: Linear,
    },
    Raw {
        linear: Linear,
        ln: LayerNorm,
    },
}

/// Output of a batched encoder pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[B, d_model]` final-layer [CLS] outputs.
    pub cls: Var,
    /// Per layer, attention probabilities `[B·H, L, L]` with `L = N + 1`.
    pub attention: Vec<Var>,
}

/// Per-layer, per-head attention rows of the [CLS] query for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// `rows[layer][head]` has `N + 1` entries; index 0 is [CLS] itself.
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl AttentionMap {
    /// Scores on the N patch tokens (the [CLS] self-score dropped).
    pub fn patch_scores(&self, layer: usize, head: usize) -> &[f64] {
        &self.rows[layer][head][1..]
    }

    /// Head-averaged patch scores of one layer.
    pub fn head_mean(&self, layer: usize) -> Vec<f64> {
        let heads = &self.rows[layer];
        let n = heads[0].len() - 1;
        (0..n)
            .map(|j| heads.iter().map(|h| h[j + 1]).sum::<f64>() / heads.len() as f64)
            .collect()
    }

    pub fn last_layer(&self) -> &[Vec<f64>] {
        self.rows.last().map_or(&[], Vec::as_slice)
    }
}

/// Model structure; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct NuTime {
    pub config: ModelConfig,
    embed: TokenEmbed,
    merge: Option<Linear>,
    cls: ParamId,
    blocks: Vec<EncoderBlock>,
    final_ln: LayerNorm,
    head: Option<MlpHead>,
}

impl NuTime {
    /// Registers every parameter in `store` (encoder first, head last).
    pub fn new<T: Real>(config: ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, rng::INIT);
        let d = config.d_model;
        let eps = config.ln_eps;
        let embed = match config.encoding {
            EncodingMode::Nme => {
                let mut nme = config.nme.clone();
                nme.embed_dim = config.mean_std_embed_dim;
                TokenEmbed::Nme {
                    shape: Linear::new(store, "encoder.shape_embed", config.window_size, config.shape_embed_dim, &mut rng),
                    shape_ln: LayerNorm::new(store, "encoder.shape_ln", config.shape_embed_dim, eps),
                    mean: Nme::new(store, "encoder.mean_embed", nme.clone(), &mut rng)?,
                    std: Nme::new(store, "encoder.std_embed", nme, &mut rng)?,
                    proj: Linear::new(store, "encoder.token_proj", config.concat_width(), d, &mut rng),
                }
            }
            _ => TokenEmbed::Raw {
                linear: Linear::new(store, "encoder.window_embed", config.window_size, d, &mut rng),
                ln: LayerNorm::new(store, "encoder.window_ln", d, eps),
            },
        };
        let merge = (config.n_channels > 1).then(|| new_channel_merge(store, config.n_channels, d, &mut rng));
        let cls = store.add("encoder.cls", normal_tensor(&mut rng, &[d], 0.02));
        let blocks = (0..config.n_layers)
            .map(|i| {
                EncoderBlock::new(store, &format!("encoder.blocks.{i}"), d, config.n_heads, config.mlp_dim, eps, &mut rng)
            })
            .collect();
        let final_ln = LayerNorm::new(store, "encoder.final_ln", d, eps);
        let head = (config.n_classes >= 2).then(|| MlpHead::new(store, "head", [d, d, config.n_classes], None, &mut rng));
        Ok(NuTime {
            config,
            embed,
            merge,
            cls,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    /// Checks that a batch is non-empty, homogeneous and tokenizable.
    pub fn check_batch(&self, batch: &[&RawSeries]) -> Result<(usize, usize)> {
        let first = batch.first().ok_or_else(|| invalid("empty batch"))?;
        let (c, t) = (first.channels(), first.len());
        if batch.iter().any(|s| s.channels() != c || s.len() != t) {
            return Err(invalid("batch series differ in channel count or length"));
        }
        if c != self.config.n_channels {
            return Err(invalid(format!(
                "model expects {} channels, series has {c}",
                self.config.n_channels
            )));
        }
        let w = self.config.window_size;
        if t % w != 0 {
            return Err(invalid(format!("series length {t} is not a multiple of window size {w}")));
        }
        let n = t / w;
        if n > self.config.max_tokens {
            return Err(invalid(format!("{n} windows exceed max_tokens {}", self.config.max_tokens)));
        }
        Ok((c, n))
    }

    fn preprocess(&self, s: &RawSeries) -> Result<RawSeries> {
        match self.config.encoding {
            EncodingMode::Zscore => zscore(s, self.config.dataset_stats.as_ref().expect("validated")),
            EncodingMode::InstanceNorm => instance_norm(s),
            EncodingMode::Nme | EncodingMode::Identity => Ok(s.clone()),
        }
    }

    /// `LN(shape·W + b)` for shape rows `[B, window_size]`.
    pub fn embed_shape<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, shapes: Var) -> Result<Var> {
        let TokenEmbed::Nme { shape, shape_ln, .. } = &self.embed else {
            return Err(invalid("shape embedding exists only in NME encoding"));
        };
        let dims = g.shape(shapes).to_vec();
        if dims.len() != 2 || dims[1] != self.config.window_size {
            return Err(Error::Shape {
                op: "embed_shape",
                lhs: dims,
                rhs: vec![self.config.window_size],
            });
        }
        let h = shape.forward(g, store, shapes)?;
        shape_ln.forward(g, store, h)
    }

    /// Pre-projection token features `concat(shape, mean, std)` of every
    /// window: `[B·C·N, concat_width]` (NME encoding only).
    pub fn token_features<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &[&RawSeries]) -> Result<Var> {
        let (c, _) = self.check_batch(batch)?;
        let TokenEmbed::Nme { mean, std, .. } = &self.embed else {
            return Err(invalid("token features exist only in NME encoding"));
        };
        let w = self.config.window_size;
        let mut shapes = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for s in batch {
            for ch in 0..c {
                for win in s.channel(ch).chunks(w) {
                    let tok = tokenize_window(win, self.config.std_floor);
                    shapes.extend(tok.shape.iter().map(|&v| T::of(v)));
                    means.push(tok.mean);
                    stds.push(tok.std);
                }
            }
        }
        let rows = means.len();
        let x = g.constant(Tensor::new(vec![rows, w], shapes)?);
        let se = self.embed_shape(g, store, x)?;
        let me = mean.embed(g, store, &means, self.config.ln_eps)?;
        let sd = std.embed(g, store, &stds, self.config.ln_eps)?;
        g.concat(&[se, me, sd], 1)
    }

    /// Embeds every window of every channel: `[B·C·N, d_model]`, rows ordered
    /// by series, then channel, then window. Positions are not yet added.
    pub fn embed_tokens<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &[&RawSeries]) -> Result<Var> {
        let (c, n) = self.check_batch(batch)?;
        let w = self.config.window_size;
        let rows = batch.len() * c * n;
        match &self.embed {
            TokenEmbed::Nme { proj, .. } => {
                let cat = self.token_features(g, store, batch)?;
                proj.forward(g, store, cat)
            }
            TokenEmbed::Raw { linear, ln } => {
                let mut raw = Vec::with_capacity(rows * w);
                for s in batch {
                    let p = self.preprocess(s)?;
                    raw.extend(p.values().iter().map(|&v| T::of(v)));
                }
                let x = g.constant(Tensor::new(vec![rows, w], raw)?);
                let h = linear.forward(g, store, x)?;
                ln.forward(g, store, h)
            }
        }
    }

    /// Concatenates per-channel tokens `[B·C·N, d]` at each position and maps
    /// them back to `[B, N, d]`.
    pub fn merge_channels<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        tokens: Var,
        batch: usize,
        channels: usize,
    ) -> Result<Var> {
        let d = self.config.d_model;
        let rows = g.shape(tokens)[0];
        if channels == 0 || rows % (batch * channels) != 0 {
            return Err(invalid("token rows do not match batch × channels"));
        }
        let n = rows / (batch * channels);
        match &self.merge {
            Some(merge) => {
                if merge.fan_in != channels * d {
                    return Err(invalid(format!(
                        "channel merge expects {} channels, got {channels}",
                        merge.fan_in / d
                    )));
                }
                merge_with(g, store, merge, tokens, batch, channels, n, d)
            }
            None if channels == 1 => g.reshape(tokens, &[batch, n, d]),
            None => Err(invalid(format!("model has no channel merge for {channels} channels"))),
        }
    }

    /// Batched encoder pass. `rng` enables dropout (training only).
    pub fn encode_batch<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: &[&RawSeries],
        mut rng: Option<&mut Rng>,
    ) -> Result<Encoded> {
        let (c, n) = self.check_batch(batch)?;
        let b = batch.len();
        let d = self.config.d_model;
        let tokens = self.embed_tokens(g, store, batch)?;
        let tokens = self.merge_channels(g, store, tokens, b, c)?;

        let cls = g.param(store, self.cls);
        let zeros = g.constant(Tensor::zeros(&[b, 1, d]));
        let cls_rows = g.add(zeros, cls)?;
        let x = g.concat(&[cls_rows, tokens], 1)?;
        let pe = g.constant(sinusoidal_pe(n + 1, d)?);
        let mut x = g.add(x, pe)?;

        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, attn) = block.forward(g, store, x, self.config.dropout, rng.as_deref_mut())?;
            x = y;
            attention.push(attn);
        }
        let x = self.final_ln.forward(g, store, x)?;
        let first = g.narrow(x, 1, 0, 1)?;
        let cls = g.reshape(first, &[b, d])?;
        Ok(Encoded { cls, attention })
    }

    /// Raw class logits `[B, n_classes]` for a batch of representations `[B, d]`.
    pub fn head_logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, rep: Var) -> Result<Var> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| invalid("model has no classification head (n_classes = 0)"))?;
        head.forward(g, store, rep)
    }

    pub fn classify_batch<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: &[&RawSeries],
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        if self.head.is_none() {
            return Err(invalid("model has no classification head (n_classes = 0)"));
        }
        let enc = self.encode_batch(g, store, batch, rng)?;
        self.head_logits(g, store, enc.cls)
    }

    /// Final [CLS] representation of every series, computed in chunks of `chunk`.
    pub fn represent<T: Real>(&self, store: &ParamStore<T>, series: &[RawSeries], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(series.len());
        for part in series.chunks(chunk.max(1)) {
            let refs: Vec<&RawSeries> = part.iter().collect();
            let mut g = Graph::new();
            let enc = self.encode_batch(&mut g, store, &refs, None)?;
            let v = g.value(enc.cls);
            out.extend((0..part.len()).map(|i| v.row(i).iter().map(|x| x.f64()).collect()));
        }
        Ok(out)
    }

    /// Class logits of every series.
    pub fn logits<T: Real>(&self, store: &ParamStore<T>, series: &[RawSeries], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(series.len());
        for part in series.chunks(chunk.max(1)) {
            let refs: Vec<&RawSeries> = part.iter().collect();
            let mut g = Graph::new();
            let l = self.classify_batch(&mut g, store, &refs, None)?;
            let v = g.value(l);
            out.extend((0..part.len()).map(|i| v.row(i).iter().map(|x| x.f64()).collect()));
        }
        Ok(out)
    }

    /// [CLS]-query attention rows of every layer and head for one series.
    pub fn cls_attention<T: Real>(&self, store: &ParamStore<T>, series: &RawSeries) -> Result<AttentionMap> {
        let mut g = Graph::new();
        let enc = self.encode_batch(&mut g, store, &[series], None)?;
        let rows = enc
            .attention
            .iter()
            .map(|&a| {
                let t = g.value(a);
                let l = t.shape()[1];
                (0..self.config.n_heads)
                    .map(|h| t.data()[h * l * l..h * l * l + l].iter().map(|v| v.f64()).collect())
                    .collect()
            })
            .collect();
        Ok(AttentionMap { rows })
    }

    /// Names of every parameter that belongs to the encoder trunk.
    pub fn encoder_param_names<T: Real>(store: &ParamStore<T>) -> Vec<String> {
        store
            .iter()
            .filter(|(_, n, _)| n.starts_with("encoder."))
            .map(|(_, n, _)| String::from(n))
            .collect()
    }
}

fn new_channel_merge<T: Real>(store: &mut ParamStore<T>, channels: usize, d: usize, rng: &mut Rng) -> Linear {
    // Stacked identity blocks scaled by 1/C plus small noise; at C = 1 this is near-identity.
    let lin = Linear::new(store, "merge", channels * d, d, rng);
    let noise: Tensor<T> = normal_tensor(rng, &[channels * d, d], 0.01);
    let mut w = noise.into_data();
    let inv = 1.0 / channels as f64;
    for c in 0..channels {
        for i in 0..d {
            w[(c * d + i) * d + i] += T::of(inv);
        }
    }
    store
        .set(lin.weight, Tensor::from_parts(vec![channels * d, d], w))
        .expect("same shape");
    store.set(lin.bias, Tensor::zeros(&[d])).expect("same shape");
    lin
}

#[allow(clippy::too_many_arguments)]
fn merge_with<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    merge: &Linear,
    tokens: Var,
    b: usize,
    c: usize,
    n: usize,
    d: usize,
) -> Result<Var> {
    let t = g.reshape(tokens, &[b, c, n, d])?;
    let t = g.permute(t, &[0, 2, 1, 3])?;
    let t = g.reshape(t, &[b * n, c * d])?;
    let m = merge.forward(g, store, t)?;
    g.reshape(m, &[b, n, d])
}

/// Standalone channel merge (used to test the operation in isolation).
pub fn channel_merge_layer<T: Real>(store: &mut ParamStore<T>, channels: usize, d: usize, seed: u64) -> Linear {
    let mut rng = rng::stream(seed, rng::INIT);
    new_channel_merge(store, channels, d, &mut rng)
}

/// `[B·C·N, d]` per-channel tokens → `[B, N, d]` through `merge`.
pub fn merge_channels_with<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    merge: &Linear,
    tokens: Var,
    batch: usize,
    channels: usize,
) -> Result<Var> {
    let shape = g.shape(tokens).to_vec();
    let d = merge.fan_out;
    if shape.len() != 2 || shape[1] != d || merge.fan_in != channels * d || shape[0] % (batch * channels) != 0 {
        return Err(Error::Shape {
            op: "merge_channels",
            lhs: shape,
            rhs: vec![merge.fan_in, merge.fan_out],
        });
    }
    let n = shape[0] / (batch * channels);
    merge_with(g, store, merge, tokens, batch, channels, n, d)
}
