//! Synthetic multi-scale classification data.
//!
//! Every sample is `10^s · (m_j + amp·(v_t − v̄_j))` where `v` is a noisy
//! periodic prototype, `j` indexes 16-point windows, `v̄_j` is the window mean of
//! `v` and `m_j ~ U[0.5, 1.5]`. Window means are therefore exactly `10^s·m_j`.
//! In scale mode classes share the prototype family and differ only in `s`; in
//! shape mode they share `s` and differ only in the family.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;
use crate::tokenizer::RawSeries;

/// Window length the generator draws means for.
pub const SYNTH_WINDOW: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Sine,
    Square,
    Sawtooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    Scale,
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// Decimal exponent `s` of the class's value scale.
    pub exponent: f64,
    pub family: ShapeFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub mode: SynthMode,
    pub classes: Vec<ClassSpec>,
    /// Samples per class in each split.
    pub samples_per_class: SplitCounts,
    pub length: usize,
    /// Std of the Gaussian noise added to the prototype.
    pub noise: f64,
    /// Relative amplitude of the within-window shape.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Two classes at 10⁻² and 10², 128/32/64 series per class, length 512.
    fn default() -> Self {
        let counts = SplitCounts {
            train: 128,
            val: 32,
            test: 64,
        };
        SynthSpec::scale_mode(&[-2.0, 2.0], counts, 512, 0)
    }
}

impl SynthSpec {
    /// Scale-mode spec: shared sine family, one class per exponent.
    pub fn scale_mode(exponents: &[f64], counts: SplitCounts, length: usize, seed: u64) -> Self {
        SynthSpec {
            mode: SynthMode::Scale,
            classes: exponents
                .iter()
                .map(|&exponent| ClassSpec {
                    exponent,
                    family: ShapeFamily::Sine,
                })
                .collect(),
            samples_per_class: counts,
            length,
            noise: 0.1,
            amplitude: 0.3,
            seed,
        }
    }

    /// Shape-mode spec: shared exponent, one class per family.
    pub fn shape_mode(families: &[ShapeFamily], exponent: f64, counts: SplitCounts, length: usize, seed: u64) -> Self {
        SynthSpec {
            mode: SynthMode::Shape,
            classes: families.iter().map(|&family| ClassSpec { exponent, family }).collect(),
            samples_per_class: counts,
            length,
            noise: 0.1,
            amplitude: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(invalid("synthetic data needs at least two classes"));
        }
        if self.length == 0 || self.length % SYNTH_WINDOW != 0 {
            return Err(invalid(format!(
                "length {} must be a positive multiple of {SYNTH_WINDOW}",
                self.length
            )));
        }
        if self.classes.iter().any(|c| !(-4.0..=4.0).contains(&c.exponent)) {
            return Err(invalid("class exponents must lie in [-4, 4]"));
        }
        if !(self.noise >= 0.0) || !(self.amplitude >= 0.0) {
            return Err(invalid("noise and amplitude must be >= 0"));
        }
        let c = &self.classes;
        let distinct = |same: &dyn Fn(&ClassSpec, &ClassSpec) -> bool| {
            (0..c.len()).all(|i| (i + 1..c.len()).all(|j| !same(&c[i], &c[j])))
        };
        match self.mode {
            SynthMode::Scale => {
                if c.iter().any(|x| x.family != c[0].family) {
                    return Err(invalid("scale mode needs one shared shape family"));
                }
                if !distinct(&|a, b| a.exponent == b.exponent) {
                    return Err(invalid("scale mode needs distinct exponents"));
                }
            }
            SynthMode::Shape => {
                if c.iter().any(|x| x.exponent != c[0].exponent) {
                    return Err(invalid("shape mode needs one shared exponent"));
                }
                if !distinct(&|a, b| a.family == b.family) {
                    return Err(invalid("shape mode needs distinct shape families"));
                }
            }
        }
        Ok(())
    }
}

/// Train/validation/test splits of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: Vec<RawSeries>,
    pub val: Vec<RawSeries>,
    pub test: Vec<RawSeries>,
}

fn prototype(family: ShapeFamily, t: f64, period: f64, phase: f64) -> f64 {
    let u = t / period + phase;
    match family {
        ShapeFamily::Sine => libm::sin(2.0 * PI * u),
        ShapeFamily::Square => {
            if libm::sin(2.0 * PI * u) >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
        ShapeFamily::Sawtooth => 2.0 * (u - libm::floor(u)) - 1.0,
    }
}

fn sample(spec: &SynthSpec, class: usize, seed: u64, id: &str) -> Result<RawSeries> {
    let mut r = rng::stream(seed, rng::SYNTH);
    let c = spec.classes[class];
    let period = r.random_range(16.0..128.0);
    let phase = r.random_range(0.0..1.0);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).map_err(|e| invalid(format!("{e}")))?;
    let scale = libm::pow(10.0, c.exponent);
    let mut values = Vec::with_capacity(spec.length);
    for j in 0..spec.length / SYNTH_WINDOW {
        let m = r.random_range(0.5..1.5);
        let v: Vec<f64> = (0..SYNTH_WINDOW)
            .map(|i| {
                let t = (j * SYNTH_WINDOW + i) as f64;
                let n = if spec.noise > 0.0 { noise.sample(&mut r) } else { 0.0 };
                prototype(c.family, t, period, phase) + n
            })
            .collect();
        let vbar = v.iter().sum::<f64>() / SYNTH_WINDOW as f64;
        values.extend(v.iter().map(|x| scale * (m + spec.amplitude * (x - vbar))));
    }
    RawSeries::univariate(id, Some(class), values)
}

/// Deterministic in `spec.seed`. Samples are ordered by class within each split.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let counts = spec.samples_per_class;
    let split = |tag: u64, name: &str, n: usize| -> Result<Vec<RawSeries>> {
        let mut out = Vec::with_capacity(n * spec.classes.len());
        for class in 0..spec.classes.len() {
            for i in 0..n {
                let seed = rng::mix(&[spec.seed, tag, class as u64, i as u64]);
                out.push(sample(spec, class, seed, &format!("{name}_{class}_{i}"))?);
            }
        }
        Ok(out)
    };
    Ok(SynthData {
        train: split(0, "train", counts.train)?,
        val: split(1, "val", counts.val)?,
        test: split(2, "test", counts.test)?,
    })
}
