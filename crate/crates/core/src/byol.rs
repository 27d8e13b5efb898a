//! BYOL pretraining: an online encoder + projector + predictor learns to
//! predict a momentum-averaged target's projection of another crop.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::layers::MlpHead;
use crate::model::{ModelConfig, NuTime};
use crate::optim::{adamw_step, lr_at, AdamWConfig, LrSchedule, OptimizerState};
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng;
use crate::tokenizer::{random_resized_crop, resize_linear, RawSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ByolConfig {
    /// `[hidden, out]` of the projector; its input is `d_model`.
    pub projector: [usize; 2],
    /// `[hidden, out]` of the predictor; `out` must equal the projector output.
    pub predictor: [usize; 2],
    pub tau_base: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub crop_min_frac: f64,
    /// Length every crop is resized to.
    pub crop_len: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
}

impl Default for ByolConfig {
    fn default() -> Self {
        ByolConfig {
            projector: [256, 64],
            predictor: [256, 64],
            tau_base: 0.99,
            epochs: 100,
            warmup_epochs: 10,
            base_lr: 2e-3 * 64.0 / 2048.0,
            batch_size: 64,
            crop_min_frac: 0.8,
            crop_len: 512,
            adamw: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl ByolConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_base) {
            return Err(invalid(format!("tau_base must be in [0, 1], got {}", self.tau_base)));
        }
        if self.projector.contains(&0) || self.predictor.contains(&0) {
            return Err(invalid("projector/predictor dims must be positive"));
        }
        if self.predictor[1] != self.projector[1] {
            return Err(invalid("predictor output must match the projector output"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if self.crop_len % model.window_size != 0 || self.crop_len / model.window_size > model.max_tokens {
            return Err(invalid(format!(
                "crop_len {} must be a multiple of window_size {} within max_tokens",
                self.crop_len, model.window_size
            )));
        }
        if self.warmup_epochs > self.epochs {
            return Err(invalid("warmup_epochs exceeds epochs"));
        }
        Ok(())
    }
}

/// Mean over rows of `2 − 2·cos(pᵢ, zᵢ)`. `z` is detached first.
pub fn byol_loss<T: Real>(g: &mut Graph<T>, p: Var, z: Var) -> Result<Var> {
    if g.shape(p) != g.shape(z) || g.shape(p).len() != 2 {
        return Err(Error::Shape {
            op: "byol_loss",
            lhs: g.shape(p).to_vec(),
            rhs: g.shape(z).to_vec(),
        });
    }
    let z = g.detach(z);
    let pn = g.l2_normalize(p)?;
    let zn = g.l2_normalize(z)?;
    let prod = g.mul(pn, zn)?;
    let cos = g.sum_axis(prod, 1)?;
    let mean_cos = g.mean(cos)?;
    let neg = g.scale(mean_cos, T::of(-2.0))?;
    g.add_scalar(neg, T::of(2.0))
}

/// `½·(loss(p₁, z₂) + loss(p₂, z₁))`; lies in `[0, 4]`.
pub fn symmetric_byol_loss<T: Real>(g: &mut Graph<T>, p1: Var, z2: Var, p2: Var, z1: Var) -> Result<Var> {
    let a = byol_loss(g, p1, z2)?;
    let b = byol_loss(g, p2, z1)?;
    let s = g.add(a, b)?;
    g.scale(s, T::of(0.5))
}

/// `target ← τ·target + (1−τ)·online` for every parameter of `target`, matched by id.
pub fn momentum_update<T: Real>(online: &ParamStore<T>, target: &mut ParamStore<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("momentum must be in [0, 1], got {tau}")));
    }
    if target.len() > online.len() {
        return Err(invalid("target has more parameters than the online network"));
    }
    for id in target.ids().collect::<Vec<_>>() {
        let (o, t) = (online.get(id), target.get(id));
        if o.shape() != t.shape() {
            return Err(Error::Shape {
                op: "momentum_update",
                lhs: t.shape().to_vec(),
                rhs: o.shape().to_vec(),
            });
        }
    }
    if tau == 1.0 {
        return Ok(());
    }
    let (a, b) = (T::of(tau), T::of(1.0 - tau));
    for id in target.ids().collect::<Vec<_>>() {
        let src = online.get(id).data();
        let dst = target.get_mut(id).data_mut();
        if tau == 0.0 {
            dst.copy_from_slice(src);
            continue;
        }
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = a * *d + b * s;
        }
    }
    Ok(())
}

/// `τ_k = 1 − (1 − τ₀)·(cos(πk/K) + 1)/2`, rising from τ₀ to 1.
pub fn tau_at(tau_base: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return tau_base;
    }
    let k = step.min(total_steps) as f64 / total_steps as f64;
    1.0 - (1.0 - tau_base) * (libm::cos(PI * k) + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Momentum of the epoch's last step.
    pub tau: f64,
}

/// Online and target networks with the optimizer state.
#[derive(Debug, Clone)]
pub struct SiameseState<T: Real> {
    pub model: NuTime,
    pub projector: MlpHead,
    pub predictor: MlpHead,
    /// Encoder, projector, predictor (in that registration order).
    pub online: ParamStore<T>,
    /// Encoder and projector only; same ids as the online prefix.
    pub target: ParamStore<T>,
    pub optimizer: OptimizerState<T>,
    pub step: usize,
}

impl<T: Real> SiameseState<T> {
    pub fn new(model_cfg: ModelConfig, cfg: &ByolConfig) -> Result<Self> {
        if model_cfg.n_channels != 1 {
            return Err(invalid("pretraining is univariate; split multivariate data first"));
        }
        if model_cfg.n_classes != 0 {
            return Err(invalid("the pretraining encoder carries no classification head"));
        }
        cfg.validate(&model_cfg)?;
        let mut online = ParamStore::new();
        let model = NuTime::new(model_cfg, &mut online, cfg.seed)?;
        let mut r = rng::stream(rng::mix(&[cfg.seed, 0xB701]), rng::INIT);
        let d = model.config.d_model;
        let eps = Some(model.config.ln_eps);
        let projector = MlpHead::new(&mut online, "projector", [d, cfg.projector[0], cfg.projector[1]], eps, &mut r);
        let n_target = online.len();
        let predictor = MlpHead::new(
            &mut online,
            "predictor",
            [cfg.projector[1], cfg.predictor[0], cfg.predictor[1]],
            eps,
            &mut r,
        );
        let target = online.prefix(n_target);
        let optimizer = OptimizerState::new(&online, cfg.adamw);
        Ok(SiameseState {
            model,
            projector,
            predictor,
            online,
            target,
            optimizer,
            step: 0,
        })
    }

    /// The online encoder weights alone (what downstream tasks load).
    pub fn encoder_store(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (_, name, t) in self.online.iter() {
            if name.starts_with("encoder.") {
                out.add(name, t.clone());
            }
        }
        out
    }

    /// Online prediction `[B, out]` and its projection `[B, out]` for a view.
    fn online_branch(&self, g: &mut Graph<T>, view: &[&RawSeries]) -> Result<Var> {
        let enc = self.model.encode_batch(g, &self.online, view, None)?;
        let z = self.projector.forward(g, &self.online, enc.cls)?;
        self.predictor.forward(g, &self.online, z)
    }

    fn target_branch(&self, g: &mut Graph<T>, view: &[&RawSeries]) -> Result<Var> {
        let enc = self.model.encode_batch(g, &self.target, view, None)?;
        let z = self.projector.forward(g, &self.target, enc.cls)?;
        Ok(g.detach(z))
    }

    /// Builds the symmetric loss for a pair of views on a graph tracking the online store.
    pub fn loss_graph(&self, view1: &[&RawSeries], view2: &[&RawSeries]) -> Result<(Graph<T>, Var)> {
        let mut g = Graph::tracking(&self.online);
        let p1 = self.online_branch(&mut g, view1)?;
        let p2 = self.online_branch(&mut g, view2)?;
        let z1 = self.target_branch(&mut g, view1)?;
        let z2 = self.target_branch(&mut g, view2)?;
        let loss = symmetric_byol_loss(&mut g, p1, z2, p2, z1)?;
        Ok((g, loss))
    }

    /// Mean over output dims of the across-batch std of L2-normalized online
    /// projections; near zero signals collapse.
    pub fn projection_spread(&self, series: &[RawSeries], crop_len: usize) -> Result<f64> {
        if series.len() < 2 {
            return Err(Error::InsufficientData("projection spread needs >= 2 series".into()));
        }
        let resized = series
            .iter()
            .map(|s| resize_linear(s, crop_len))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&RawSeries> = resized.iter().collect();
        let mut g = Graph::new();
        let enc = self.model.encode_batch(&mut g, &self.online, &refs, None)?;
        let z = self.projector.forward(&mut g, &self.online, enc.cls)?;
        let zn = g.l2_normalize(z)?;
        let v = g.value(zn);
        let (b, d) = (v.shape()[0], v.shape()[1]);
        let mut total = 0.0;
        for j in 0..d {
            let col: Vec<f64> = (0..b).map(|i| v.data()[i * d + j].f64()).collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            total += libm::sqrt(col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / b as f64);
        }
        Ok(total / d as f64)
    }
}

/// Runs the full pretraining loop. `on_epoch` sees every epoch record as it completes.
pub fn pretrain<T: Real>(
    dataset: &[RawSeries],
    model_cfg: ModelConfig,
    cfg: &ByolConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(SiameseState<T>, Vec<EpochLog>)> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("pretraining dataset is empty".into()));
    }
    if let Some(s) = dataset.iter().find(|s| s.channels() != 1) {
        return Err(invalid(format!(
            "series {:?} has {} channels; pretraining takes univariate series",
            s.id,
            s.channels()
        )));
    }
    let mut state = SiameseState::<T>::new(model_cfg, cfg)?;
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let schedule = LrSchedule::new(cfg.base_lr, cfg.warmup_epochs, cfg.epochs, steps_per_epoch)?;
    let total = schedule.total_steps();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut recent: Vec<f64> = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut shuffle = rng::stream(rng::mix(&[cfg.seed, epoch as u64]), rng::SHUFFLE);
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let (mut lr, mut tau) = (0.0, cfg.tau_base);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let views = |v: u64| -> Result<Vec<RawSeries>> {
                idx.iter()
                    .map(|&i| {
                        let seed = rng::mix(&[cfg.seed, epoch as u64, b as u64, i as u64, v]);
                        random_resized_crop(&dataset[i], seed, cfg.crop_min_frac, cfg.crop_len)
                    })
                    .collect()
            };
            let (v1, v2) = (views(1)?, views(2)?);
            let r1: Vec<&RawSeries> = v1.iter().collect();
            let r2: Vec<&RawSeries> = v2.iter().collect();
            lr = lr_at(&schedule, state.step)?;
            tau = tau_at(cfg.tau_base, state.step, total);
            let diverged = |state: &SiameseState<T>, detail: String, recent: &[f64]| Error::Diverged {
                epoch,
                step: state.step,
                dump: diagnostic_dump(state, &detail, lr, tau, recent),
            };
            let (g, loss) = match state.loss_graph(&r1, &r2) {
                Ok(x) => x,
                Err(e) if e.is_numeric() => return Err(diverged(&state, format!("{e}"), &recent)),
                Err(e) => return Err(e),
            };
            let value = g.value(loss).item()?.f64();
            let grads = match g.backward(loss) {
                Ok(gr) => gr,
                Err(e) => return Err(diverged(&state, format!("{e}"), &recent)),
            };
            if let Err(e) = adamw_step(&mut state.online, &grads, &mut state.optimizer, lr) {
                return Err(diverged(&state, format!("{e}"), &recent));
            }
            momentum_update(&state.online, &mut state.target, tau)?;
            state.step += 1;
            loss_sum += value;
            recent.push(value);
            if recent.len() > 8 {
                recent.remove(0);
            }
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / steps_per_epoch as f64,
            lr,
            tau,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((state, logs))
}

fn diagnostic_dump<T: Real>(state: &SiameseState<T>, detail: &str, lr: f64, tau: f64, recent: &[f64]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cause: {detail}");
    let _ = writeln!(s, "lr: {lr:e}  tau: {tau}  optimizer steps: {}", state.optimizer.step());
    let _ = writeln!(s, "recent losses: {recent:?}");
    for (_, name, t) in state.online.iter() {
        let bad = t.data().iter().filter(|v| !v.is_finite()).count();
        let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.f64().abs()));
        let _ = writeln!(s, "  {name} {:?} max|.|={max:e} non-finite={bad}", t.shape());
    }
    s
}
