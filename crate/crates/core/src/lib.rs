//! Numerically multi-scaled time-series encoder with self-supervised
//! pretraining. Works under `no_std` with `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod byol;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod nme;
pub mod optim;
pub mod params;
pub mod real;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tokenizer;

pub use autograd::{GradientSet, Graph, Var};
pub use error::{Error, Result};
pub use model::{AttentionMap, DatasetStats, EncodingMode, ModelConfig, NuTime};
pub use nme::{Nme, NmeConfig};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
pub use tokenizer::RawSeries;
