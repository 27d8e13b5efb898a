//! Supervised fine-tuning, linear probing and few-shot episodes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{invalid, Error, Result};
use crate::eval::metrics::{argmax, Metrics};
use crate::model::{ModelConfig, NuTime};
use crate::optim::{adamw_step, AdamWConfig, OptimizerState};
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;
use crate::tokenizer::{fit_length, resize_linear, RawSeries};

/// A model with a classification head and its parameters.
#[derive(Debug, Clone)]
pub struct Classifier<T: Real> {
    pub model: NuTime,
    pub store: ParamStore<T>,
}

impl<T: Real> Classifier<T> {
    /// Fresh classifier; parameters named like those of `pretrained` (and of equal
    /// shape) are copied over. Returns the copied names.
    pub fn new<U: Real>(config: ModelConfig, pretrained: Option<&ParamStore<U>>, seed: u64) -> Result<(Self, Vec<String>)> {
        if config.n_classes < 2 {
            return Err(invalid("a classifier needs n_classes >= 2"));
        }
        let mut store = ParamStore::new();
        let model = NuTime::new(config, &mut store, seed)?;
        let loaded = pretrained.map(|p| store.load_matching(p)).unwrap_or_default();
        Ok((Classifier { model, store }, loaded))
    }

    pub fn n_classes(&self) -> usize {
        self.model.config.n_classes
    }

    /// Resizes series whose length is not a usable multiple of the window size.
    pub fn prepare(&self, series: &[RawSeries]) -> Result<Vec<RawSeries>> {
        prepare_series(&self.model.config, series)
    }

    pub fn logits(&self, series: &[RawSeries], chunk: usize) -> Result<Vec<Vec<f64>>> {
        self.model.logits(&self.store, &self.prepare(series)?, chunk)
    }

    pub fn predict(&self, series: &[RawSeries], chunk: usize) -> Result<Vec<usize>> {
        Ok(self.logits(series, chunk)?.iter().map(|l| argmax(l)).collect())
    }
}

/// Resizes to the next multiple of the window size (capped at `max_tokens` windows)
/// when needed; series that already fit are returned unchanged.
pub fn prepare_series(config: &ModelConfig, series: &[RawSeries]) -> Result<Vec<RawSeries>> {
    let w = config.window_size;
    let cap = config.max_tokens * w;
    series
        .iter()
        .map(|s| {
            if s.len() % w == 0 && s.len() <= cap {
                Ok(s.clone())
            } else {
                resize_linear(s, fit_length(s.len(), w, cap))
            }
        })
        .collect()
}

fn labels_of(series: &[RawSeries], k: usize) -> Result<Vec<usize>> {
    series
        .iter()
        .map(|s| match s.label {
            Some(l) if l < k => Ok(l),
            Some(l) => Err(invalid(format!("label {l} of {:?} outside 0..{k}", s.id))),
            None => Err(invalid(format!("series {:?} has no label", s.id))),
        })
        .collect()
}

/// Accuracy and macro-F1 of the classifier on labelled series.
pub fn evaluate<T: Real>(clf: &Classifier<T>, data: &[RawSeries], chunk: usize) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::InsufficientData("evaluation set is empty".into()));
    }
    let k = clf.n_classes();
    let truth = labels_of(data, k)?;
    let pred = clf.predict(data, chunk)?;
    Metrics::from_predictions(&truth, &pred, k)
}

/// Like [`evaluate`], predicting from the mean logits of several classifiers.
pub fn evaluate_ensemble<T: Real>(clfs: &[Classifier<T>], data: &[RawSeries], chunk: usize) -> Result<Metrics> {
    let Some(first) = clfs.first() else {
        return Err(invalid("ensemble needs at least one classifier"));
    };
    if data.is_empty() {
        return Err(Error::InsufficientData("evaluation set is empty".into()));
    }
    let k = first.n_classes();
    if clfs.iter().any(|c| c.n_classes() != k) {
        return Err(invalid("ensemble members disagree on n_classes"));
    }
    let truth = labels_of(data, k)?;
    let mut sum = vec![vec![0.0; k]; data.len()];
    for c in clfs {
        for (acc, row) in sum.iter_mut().zip(c.logits(data, chunk)?) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    let pred: Vec<usize> = sum.iter().map(|l| argmax(l)).collect();
    Metrics::from_predictions(&truth, &pred, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
    /// Series per forward pass during evaluation.
    pub eval_chunk: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 100,
            lr: 2e-4,
            batch_size: 32,
            adamw: AdamWConfig::default(),
            seed: 0,
            eval_chunk: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult<T: Real> {
    /// Parameters of the best validation epoch (0 = before any update).
    pub classifier: Classifier<T>,
    pub best_epoch: usize,
    pub val: Metrics,
    pub history: Vec<FinetuneEpoch>,
}

fn better(a: &Metrics, b: &Metrics) -> bool {
    a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.macro_f1 > b.macro_f1)
}

/// One optimizer step of cross-entropy on `batch`; returns the loss.
pub fn train_step<T: Real>(
    clf: &mut Classifier<T>,
    batch: &[&RawSeries],
    labels: &[usize],
    opt: &mut OptimizerState<T>,
    lr: f64,
    dropout_seed: u64,
) -> Result<f64> {
    let mut g = Graph::tracking(&clf.store);
    let mut drop = rng::stream(dropout_seed, rng::DROPOUT);
    let use_drop = clf.model.config.dropout > 0.0;
    let logits = clf
        .model
        .classify_batch(&mut g, &clf.store, batch, use_drop.then_some(&mut drop))?;
    let loss = g.cross_entropy(logits, labels)?;
    let value = g.value(loss).item()?.f64();
    let grads = g.backward(loss)?;
    adamw_step(&mut clf.store, &grads, opt, lr)?;
    Ok(value)
}

/// Full-model cross-entropy training keeping the best parameters on `val`.
pub fn finetune<T: Real>(
    mut clf: Classifier<T>,
    train: &[RawSeries],
    val: &[RawSeries],
    cfg: &FinetuneConfig,
    mut on_epoch: impl FnMut(&FinetuneEpoch),
) -> Result<FinetuneResult<T>> {
    let k = clf.n_classes();
    let train = clf.prepare(train)?;
    let val = clf.prepare(val)?;
    let labels = labels_of(&train, k)?;
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData("training set holds a single class".into()));
    }
    if val.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0) {
        return Err(invalid("batch_size must be positive and lr >= 0"));
    }
    let mut opt = OptimizerState::new(&clf.store, cfg.adamw);
    let mut best = (0, evaluate(&clf, &val, cfg.eval_chunk)?, clf.store.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut shuffle = rng::stream(rng::mix(&[cfg.seed, epoch as u64]), rng::SHUFFLE);
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&RawSeries> = idx.iter().map(|&i| &train[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let seed = rng::mix(&[cfg.seed, epoch as u64, b as u64]);
            loss_sum += train_step(&mut clf, &batch, &y, &mut opt, cfg.lr, seed)?;
            batches += 1;
        }
        let m = evaluate(&clf, &val, cfg.eval_chunk)?;
        let rec = FinetuneEpoch {
            epoch,
            train_loss: loss_sum / batches as f64,
            val: m,
        };
        on_epoch(&rec);
        history.push(rec);
        if better(&m, &best.1) {
            best = (epoch, m, clf.store.clone());
        }
    }
    clf.store = best.2;
    Ok(FinetuneResult {
        classifier: clf,
        best_epoch: best.0,
        val: best.1,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 500,
            lr: 1e-2,
            weight_decay: 0.0,
        }
    }
}

/// Softmax regression on standardized features, trained full-batch with
/// AdamW from zero weights.
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<Metrics> {
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::InsufficientData("linear probe needs train and test features".into()));
    }
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(invalid("one label per feature vector required"));
    }
    if n_classes < 2 || train_y.iter().chain(test_y).any(|&y| y >= n_classes) {
        return Err(invalid("labels must lie in 0..n_classes with n_classes >= 2"));
    }
    let d = train_x[0].len();
    if train_x.iter().chain(test_x).any(|x| x.len() != d) {
        return Err(invalid("feature vectors differ in dimension"));
    }
    let n = train_x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train_x.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let s = libm::sqrt(train_x.iter().map(|x| (x[j] - mean[j]) * (x[j] - mean[j])).sum::<f64>() / n);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let standardize = |xs: &[Vec<f64>]| -> Result<Tensor<f64>> {
        let data = xs
            .iter()
            .flat_map(|x| x.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]))
            .collect();
        Tensor::new(vec![xs.len(), d], data)
    };
    let xtr = standardize(train_x)?;
    let xte = standardize(test_x)?;

    let mut store = ParamStore::<f64>::new();
    let w = store.add("probe.weight", Tensor::zeros(&[d, n_classes]));
    let b = store.add("probe.bias", Tensor::zeros(&[n_classes]));
    let mut opt = OptimizerState::new(
        &store,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    for _ in 0..cfg.steps {
        let mut g = Graph::tracking(&store);
        let x = g.constant(xtr.clone());
        let (wv, bv) = (g.param(&store, w), g.param(&store, b));
        let logits = g.linear(x, wv, bv)?;
        let loss = g.cross_entropy(logits, train_y)?;
        let grads = g.backward(loss)?;
        adamw_step(&mut store, &grads, &mut opt, cfg.lr)?;
    }
    let logits = xte.matmul(store.get(w))?.add(store.get(b))?;
    let pred: Vec<usize> = (0..test_x.len()).map(|i| argmax(logits.row(i))).collect();
    Metrics::from_predictions(test_y, &pred, n_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_shots: usize,
    pub n_episodes: usize,
    /// Query series per class drawn from the query pool (fewer if unavailable).
    pub n_query: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            n_shots: 5,
            n_episodes: 100,
            n_query: 15,
            steps: 50,
            lr: 2e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSummary {
    pub mean: Metrics,
    /// Sample std over episodes; zero for a single episode.
    pub std: Metrics,
    pub episodes: Vec<Metrics>,
}

/// Mean and sample std of per-episode metrics, in episode order.
pub fn summarize(episodes: Vec<Metrics>) -> Result<FewShotSummary> {
    if episodes.is_empty() {
        return Err(Error::InsufficientData("no episodes".into()));
    }
    let n = episodes.len() as f64;
    let stat = |f: fn(&Metrics) -> f64| {
        let mean = episodes.iter().map(f).sum::<f64>() / n;
        let std = if episodes.len() > 1 {
            libm::sqrt(episodes.iter().map(|m| (f(m) - mean) * (f(m) - mean)).sum::<f64>() / (n - 1.0))
        } else {
            0.0
        };
        (mean, std)
    };
    let (acc, acc_sd) = stat(|m| m.accuracy);
    let (f1, f1_sd) = stat(|m| m.macro_f1);
    Ok(FewShotSummary {
        mean: Metrics {
            accuracy: acc,
            macro_f1: f1,
        },
        std: Metrics {
            accuracy: acc_sd,
            macro_f1: f1_sd,
        },
        episodes,
    })
}

fn by_class(series: &[RawSeries], k: usize) -> Result<Vec<Vec<usize>>> {
    let labels = labels_of(series, k)?;
    let mut out = vec![Vec::new(); k];
    for (i, l) in labels.into_iter().enumerate() {
        out[l].push(i);
    }
    Ok(out)
}

/// One episode: `n_shots` support series per class from `support_pool`, a
/// fresh head, `steps` full-batch updates, then metrics on the query draw.
pub fn few_shot_episode<T: Real, U: Real>(
    config: &ModelConfig,
    pretrained: Option<&ParamStore<U>>,
    support_pool: &[RawSeries],
    query_pool: &[RawSeries],
    spec: &EpisodeSpec,
    episode: usize,
) -> Result<Metrics> {
    let k = config.n_classes;
    let support_idx = by_class(support_pool, k)?;
    let query_idx = by_class(query_pool, k)?;
    check_episode_pools(&support_idx, &query_idx, spec.n_shots)?;
    let seed = rng::mix(&[spec.seed, episode as u64]);
    let mut r = rng::stream(seed, rng::EPISODE);
    let mut support = Vec::new();
    let mut query = Vec::new();
    for c in 0..k {
        let mut s = support_idx[c].clone();
        s.shuffle(&mut r);
        support.extend(s[..spec.n_shots].iter().map(|&i| support_pool[i].clone()));
        let mut q = query_idx[c].clone();
        q.shuffle(&mut r);
        query.extend(q.iter().take(spec.n_query).map(|&i| query_pool[i].clone()));
    }
    let (mut clf, _) = Classifier::<T>::new(config.clone(), pretrained, seed)?;
    let support = clf.prepare(&support)?;
    let labels = labels_of(&support, k)?;
    let batch: Vec<&RawSeries> = support.iter().collect();
    let mut opt = OptimizerState::new(&clf.store, AdamWConfig::default());
    for step in 0..spec.steps {
        train_step(&mut clf, &batch, &labels, &mut opt, spec.lr, rng::mix(&[seed, step as u64]))?;
    }
    evaluate(&clf, &query, 64)
}

fn check_episode_pools(support: &[Vec<usize>], query: &[Vec<usize>], shots: usize) -> Result<()> {
    if shots == 0 {
        return Err(invalid("n_shots must be >= 1"));
    }
    for (c, idx) in support.iter().enumerate() {
        if idx.len() < shots {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} support series, {shots} shots requested",
                idx.len()
            )));
        }
    }
    if query.iter().all(Vec::is_empty) {
        return Err(Error::InsufficientData("query pool is empty".into()));
    }
    Ok(())
}

/// Runs `spec.n_episodes` episodes in order and aggregates them.
pub fn few_shot_eval<T: Real, U: Real>(
    config: &ModelConfig,
    pretrained: Option<&ParamStore<U>>,
    support_pool: &[RawSeries],
    query_pool: &[RawSeries],
    spec: &EpisodeSpec,
) -> Result<FewShotSummary> {
    if spec.n_episodes == 0 {
        return Err(invalid("n_episodes must be >= 1"));
    }
    let episodes = (0..spec.n_episodes)
        .map(|e| few_shot_episode::<T, U>(config, pretrained, support_pool, query_pool, spec, e))
        .collect::<Result<Vec<_>>>()?;
    summarize(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_probe_is_perfect() {
        let y = [0, 1, 2, 1, 0, 2, 2];
        let x: Vec<Vec<f64>> = y.iter().map(|&c| (0..3).map(|j| f64::from(u8::from(j == c))).collect()).collect();
        let m = linear_probe(&x, &y, &x, &y, 3, &ProbeConfig::default()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn summary_of_one_episode() {
        let m = Metrics {
            accuracy: 0.8,
            macro_f1: 0.7,
        };
        let s = summarize(vec![m]).unwrap();
        assert_eq!(s.mean, m);
        assert_eq!(s.std.accuracy, 0.0);
    }

    #[test]
    fn ensemble_of_copies_matches_single_model() {
        let config = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            mlp_dim: 8,
            window_size: 4,
            shape_embed_dim: 4,
            mean_std_embed_dim: 4,
            nme: crate::nme::NmeConfig {
                embed_dim: 4,
                ..crate::nme::NmeConfig::default()
            },
            max_tokens: 4,
            n_classes: 3,
            ..ModelConfig::default()
        };
        let (clf, _) = Classifier::<f64>::new::<f64>(config, None, 3).unwrap();
        let data: Vec<RawSeries> = (0..9)
            .map(|i| RawSeries::univariate(format!("s{i}"), Some(i % 3), (0..8).map(|t| (t * i) as f64).collect()).unwrap())
            .collect();
        let one = evaluate(&clf, &data, 4).unwrap();
        assert_eq!(evaluate_ensemble(&[clf.clone(), clf.clone()], &data, 4).unwrap(), one);
        assert!(evaluate_ensemble::<f64>(&[], &data, 4).is_err());
    }
}
