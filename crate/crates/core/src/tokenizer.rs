//! Raw series and their decomposition into non-overlapping window tokens.
//!
//! Each window of each channel is described by three factors: its normalized
//! shape (zero mean, unit std), its mean and its standard deviation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::rng;

/// Default floor under the window std used when normalizing shapes.
pub const DEFAULT_STD_FLOOR: f64 = 1e-5;

/// A C×T real matrix with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub id: String,
    pub label: Option<usize>,
    channels: usize,
    len: usize,
    values: Vec<f64>,
}

impl RawSeries {
    /// `values` is channel-major: channel `c` occupies `values[c*len..(c+1)*len]`.
    pub fn new(id: impl Into<String>, label: Option<usize>, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || values.is_empty() || values.len() % channels != 0 {
            return Err(invalid(format!(
                "series needs C >= 1 and T >= 1 with C*T values (C={channels}, {} values)",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("series value {i} is not finite")));
        }
        let len = values.len() / channels;
        Ok(RawSeries {
            id: id.into(),
            label,
            channels,
            len,
            values,
        })
    }

    pub fn univariate(id: impl Into<String>, label: Option<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(id, label, 1, values)
    }

    pub fn from_channels(id: impl Into<String>, label: Option<usize>, channels: &[Vec<f64>]) -> Result<Self> {
        let t = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != t) {
            return Err(invalid("channels differ in length"));
        }
        Self::new(id, label, channels.len(), channels.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same id and label with new channel-major values.
    pub fn with_values(&self, channels: usize, values: Vec<f64>) -> Result<Self> {
        RawSeries::new(self.id.clone(), self.label, channels, values)
    }
}

/// Splits a C-channel series into C univariate series named `{id}_ch{c}`.
pub fn split_multivariate(series: &RawSeries) -> Vec<RawSeries> {
    (0..series.channels)
        .map(|c| RawSeries {
            id: format!("{}_ch{c}", series.id),
            label: series.label,
            channels: 1,
            len: series.len,
            values: series.channel(c).to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowToken {
    pub shape: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Tokens of every channel, channel-major (`tokens[c * n_windows + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub channels: usize,
    pub n_windows: usize,
    pub window_size: usize,
    /// Floor the shapes were normalized with.
    pub std_floor: f64,
    pub tokens: Vec<WindowToken>,
}

impl TokenGrid {
    pub fn token(&self, channel: usize, window: usize) -> &WindowToken {
        &self.tokens[channel * self.n_windows + window]
    }
}

/// Mean and population std of `w`; constant windows return their exact value and 0.
pub fn window_stats(w: &[f64]) -> (f64, f64) {
    if w.iter().all(|&v| v == w[0]) {
        return (w[0], 0.0);
    }
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

pub fn tokenize_window(w: &[f64], std_floor: f64) -> WindowToken {
    let (mean, std) = window_stats(w);
    let shape = if std == 0.0 {
        vec![0.0; w.len()]
    } else {
        let d = std.max(std_floor);
        w.iter().map(|&v| (v - mean) / d).collect()
    };
    WindowToken { shape, mean, std }
}

pub fn decompose(series: &RawSeries, window: usize, std_floor: f64) -> Result<TokenGrid> {
    if window < 2 {
        return Err(invalid(format!("window size must be >= 2, got {window}")));
    }
    if series.len % window != 0 {
        return Err(invalid(format!(
            "series length {} is not divisible by window size {window}",
            series.len
        )));
    }
    let n_windows = series.len / window;
    let tokens = (0..series.channels)
        .flat_map(|c| series.channel(c).chunks(window))
        .map(|w| tokenize_window(w, std_floor))
        .collect();
    Ok(TokenGrid {
        channels: series.channels,
        n_windows,
        window_size: window,
        std_floor,
        tokens,
    })
}

/// Inverse of [`decompose`]: `shape·max(σ, floor) + μ` per window, which is
/// `shape·σ + μ` whenever σ is above the floor or zero.
pub fn reconstruct(grid: &TokenGrid) -> Result<RawSeries> {
    let mut values = Vec::with_capacity(grid.tokens.len() * grid.window_size);
    for tok in &grid.tokens {
        let d = if tok.std == 0.0 { 0.0 } else { tok.std.max(grid.std_floor) };
        values.extend(tok.shape.iter().map(|&s| s * d + tok.mean));
    }
    RawSeries::new("reconstructed", None, grid.channels, values)
}

fn interpolate(src: &[f64], target_len: usize, out: &mut Vec<f64>) {
    let t = src.len();
    if t == 1 {
        out.extend(core::iter::repeat(src[0]).take(target_len));
        return;
    }
    let step = (t - 1) as f64 / (target_len - 1) as f64;
    for j in 0..target_len {
        let pos = j as f64 * step;
        let i0 = (libm::floor(pos) as usize).min(t - 2);
        let frac = pos - i0 as f64;
        let (a, b) = (src[i0], src[i0 + 1]);
        out.push(if frac == 0.0 { a } else { a + (b - a) * frac });
    }
}

/// Per-channel linear interpolation to `target_len` points, endpoints preserved.
pub fn resize_linear(series: &RawSeries, target_len: usize) -> Result<RawSeries> {
    if target_len < 2 {
        return Err(invalid(format!("target length must be >= 2, got {target_len}")));
    }
    let mut values = Vec::with_capacity(series.channels * target_len);
    for c in 0..series.channels {
        interpolate(series.channel(c), target_len, &mut values);
    }
    series.with_values(series.channels, values)
}

/// Crops a uniformly sized (`min_frac..=1` of T) sub-sequence at a uniform
/// offset and resizes it to `out_len`.
pub fn random_resized_crop(series: &RawSeries, seed: u64, min_frac: f64, out_len: usize) -> Result<RawSeries> {
    let t = series.len;
    if t < 2 {
        return Err(invalid("random_resized_crop needs T >= 2"));
    }
    if !(0.0..=1.0).contains(&min_frac) {
        return Err(invalid(format!("min_frac must be in [0, 1], got {min_frac}")));
    }
    let mut rng = rng::stream(seed, rng::AUGMENT);
    let frac = if min_frac >= 1.0 {
        1.0
    } else {
        rng.random_range(min_frac..=1.0)
    };
    let crop = (libm::round(frac * t as f64) as usize).clamp(2, t);
    let start = if crop == t { 0 } else { rng.random_range(0..=t - crop) };
    let mut values = Vec::with_capacity(series.channels * crop);
    for c in 0..series.channels {
        values.extend_from_slice(&series.channel(c)[start..start + crop]);
    }
    resize_linear(&series.with_values(series.channels, values)?, out_len)
}

/// Length a fine-tuning input is resized to: the next multiple of `window`, capped at `cap`.
pub fn fit_length(len: usize, window: usize, cap: usize) -> usize {
    let up = len.div_ceil(window) * window;
    let cap = (cap / window) * window;
    up.min(cap).max(window)
}
