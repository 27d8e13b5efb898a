//! The `nutime` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nutime_core::byol::{pretrain, EpochLog};
use nutime_core::eval::train::{few_shot_episode, prepare_series, summarize, FinetuneEpoch};
use nutime_core::eval::{anomaly_eval, cluster_eval, evaluate, evaluate_ensemble, finetune, Classifier, Metrics};
use nutime_core::model::DatasetStats;
use nutime_core::synth::{generate, SynthSpec};
use nutime_core::tokenizer::split_multivariate;
use nutime_core::{EncodingMode, ModelConfig, NuTime, ParamStore, RawSeries, Real};
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, CheckpointKind, Metadata, Provenance};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{combine_channels, load_dir, DatasetManifest, MANIFEST_FILE};
use crate::records::{append_record, write_json, write_table, SeriesAttention};
use crate::tsv::{filter_max_len, read_all, write_ucr_tsv, LabelMap};

/// Series per forward pass when embedding.
const CHUNK: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "nutime", version, about = "Multi-scale time-series encoder: pretraining, fine-tuning and evaluation")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 makes every run bitwise reproducible.
    #[arg(long, global = true, env = "NUTIME_THREADS")]
    pub threads: Option<usize>,
    /// Compute in f64. Checkpoints still store f32.
    #[arg(long = "f64", global = true)]
    pub f64: bool,
    /// Skip series longer than this many points.
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Self-supervised pretraining on the train split of a dataset directory.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        encoding: Option<EncodingMode>,
    },
    /// Supervised fine-tuning, from a checkpoint or from scratch.
    Finetune {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        data: SplitArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Input encoding for from-scratch runs.
        #[arg(long)]
        encoding: Option<EncodingMode>,
    },
    /// Test accuracy and macro-F1 of a fine-tuned checkpoint. Repeating
    /// `--ckpt` averages the logits of all given runs.
    Eval {
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[command(flatten)]
        data: SplitArgs,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Few-shot episodes: support from train, queries from test.
    Fewshot {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// K-means on test-split representations.
    Cluster {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Distance-to-centroid anomaly scoring. Test labels seen in `--normal` are normal.
    Anomaly {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        normal: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        test: Vec<PathBuf>,
        #[arg(long)]
        quantile: Option<f64>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// CLS representations, one CSV row per series.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CLS attention over patches as JSON.
    Attn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a synthetic multi-scale dataset directory.
    Synth {
        /// TOML generator spec; defaults to two scale-mode classes at 10^-2 and 10^2.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A dataset directory, or explicit per-split channel files.
#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Directory holding a manifest.toml.
    #[arg(long, conflicts_with_all = ["train", "val", "test"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub train: Option<Vec<PathBuf>>,
    #[arg(long, value_delimiter = ',')]
    pub val: Option<Vec<PathBuf>>,
    #[arg(long, value_delimiter = ',')]
    pub test: Option<Vec<PathBuf>>,
}

struct Splits {
    name: String,
    labels: LabelMap,
    stats: Option<DatasetStats>,
    train: Vec<RawSeries>,
    val: Vec<RawSeries>,
    test: Vec<RawSeries>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

fn load_dataset(dir: &Path, max_len: Option<usize>) -> Result<Splits> {
    let d = load_dir(dir, max_len)?;
    Ok(Splits {
        name: d.manifest.name.clone(),
        labels: d.labels,
        stats: d.manifest.stats,
        train: d.train,
        val: d.val,
        test: d.test,
    })
}

/// Loads each non-empty group of channel files under one shared label map.
fn load_files(groups: &[&[PathBuf]], max_len: Option<usize>) -> Result<(Vec<Vec<RawSeries>>, LabelMap)> {
    let flat: Vec<PathBuf> = groups.iter().flat_map(|g| g.iter().cloned()).collect();
    let mut tables = read_all(&flat)?.into_iter();
    let grouped: Vec<Vec<_>> = groups.iter().map(|g| tables.by_ref().take(g.len()).collect()).collect();
    let labels = LabelMap::from_tables(grouped.iter().flatten());
    let splits = grouped
        .iter()
        .map(|t| Ok(filter_max_len(combine_channels(t, &labels)?, max_len)))
        .collect::<Result<_>>()?;
    Ok((splits, labels))
}

impl SplitArgs {
    fn load(&self, need_train: bool, max_len: Option<usize>) -> Result<Splits> {
        if let Some(dir) = &self.data {
            return load_dataset(dir, max_len);
        }
        let empty = Vec::new();
        let train = self.train.as_ref().unwrap_or(&empty);
        let val = self.val.as_ref().unwrap_or(&empty);
        let test = self.test.as_ref().ok_or_else(|| usage("--test or --data is required"))?;
        if need_train && train.is_empty() {
            return Err(usage("--train or --data is required"));
        }
        let (mut s, labels) = load_files(&[train, val, test], max_len)?;
        let test_series = s.pop().unwrap_or_default();
        let val_series = s.pop().unwrap_or_default();
        Ok(Splits {
            name: stem(&test[0]),
            labels,
            stats: None,
            train: s.pop().unwrap_or_default(),
            val: val_series,
            test: test_series,
        })
    }
}

fn channels_of(series: &[RawSeries]) -> Result<usize> {
    let c = series.first().map_or(1, RawSeries::channels);
    if series.iter().any(|s| s.channels() != c) {
        return Err(nutime_core::Error::Invalid("series disagree on channel count".into()).into());
    }
    Ok(c)
}

const METRIC_COLUMNS: [&str; 16] = [
    "command",
    "config_hash",
    "seed",
    "dataset",
    "n",
    "accuracy",
    "macro_f1",
    "accuracy_std",
    "macro_f1_std",
    "ari",
    "nmi",
    "silhouette",
    "precision",
    "recall",
    "f1",
    "auroc",
];

/// Prints `values` as a table and appends them to `metrics` if given.
fn report(
    metrics: Option<&Path>,
    cfg: &RunConfig,
    command: &str,
    dataset: &str,
    n: usize,
    values: &[(&str, f64)],
) -> Result<()> {
    println!("{command} on {dataset} (n = {n})");
    for (k, v) in values {
        println!("  {k:<14}{v:.4}");
    }
    let Some(path) = metrics else { return Ok(()) };
    let row: Vec<String> = METRIC_COLUMNS
        .iter()
        .map(|&col| match col {
            "command" => command.to_string(),
            "config_hash" => cfg.hash(),
            "seed" => cfg.seed.to_string(),
            "dataset" => dataset.to_string(),
            "n" => n.to_string(),
            _ => values.iter().find(|(k, _)| *k == col).map(|(_, v)| v.to_string()).unwrap_or_default(),
        })
        .collect();
    append_record(path, &METRIC_COLUMNS, &row)
}

fn provenance(command: &str, cfg: &RunConfig, epochs: usize, final_loss: Option<f64>, dataset: &str, labels: Vec<f64>) -> Provenance {
    Provenance {
        command: command.into(),
        seed: cfg.seed,
        epochs,
        final_loss,
        dataset: Some(dataset.into()),
        labels,
        writer_version: env!("CARGO_PKG_VERSION").into(),
    }
}

fn labels_vec(map: &LabelMap) -> Vec<f64> {
    (0..map.len()).map(|c| map.original(c)).collect()
}

/// Fills in dataset statistics for z-score encoding when they are missing.
fn with_stats(mut model: ModelConfig, known: Option<DatasetStats>, train: &[RawSeries]) -> Result<ModelConfig> {
    if model.encoding == EncodingMode::Zscore && model.dataset_stats.is_none() {
        model.dataset_stats = Some(match known {
            Some(s) => s,
            None => DatasetStats::compute(train)?,
        });
    }
    Ok(model)
}

/// Model built from a checkpoint's config with every stored tensor loaded.
fn restore<T: Real>(ckpt: &Checkpoint, config: ModelConfig, seed: u64) -> Result<(NuTime, ParamStore<T>)> {
    let saved = ckpt.to_store::<T>()?;
    let mut store = ParamStore::new();
    let model = NuTime::new(config, &mut store, seed)?;
    let loaded = store.load_matching(&saved);
    if loaded.len() != store.len() {
        return Err(Error::Checkpoint {
            path: "<tensors>".into(),
            msg: format!("{} of {} parameters found with matching shapes", loaded.len(), store.len()),
        });
    }
    Ok((model, store))
}

fn read_checkpoint(path: &Path) -> Result<(Checkpoint, Metadata)> {
    let ckpt = Checkpoint::load(path)?;
    let meta = ckpt.metadata().map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((ckpt, meta))
}

/// Representations of `series`. A univariate encoder embeds each channel of a
/// multichannel series and concatenates the results.
fn represent<T: Real>(model: &NuTime, store: &ParamStore<T>, series: &[RawSeries]) -> Result<Vec<Vec<f64>>> {
    let series = prepare_series(&model.config, series)?;
    let c = channels_of(&series)?;
    if c == model.config.n_channels {
        return Ok(model.represent(store, &series, CHUNK)?);
    }
    if model.config.n_channels != 1 {
        return Err(nutime_core::Error::Invalid(format!(
            "model expects {} channels, data has {c}",
            model.config.n_channels
        ))
        .into());
    }
    let per_channel: Vec<Vec<Vec<f64>>> = (0..c)
        .map(|ch| {
            let one: Vec<RawSeries> = series.iter().map(|s| split_multivariate(s).swap_remove(ch)).collect();
            model.represent(store, &one, CHUNK)
        })
        .collect::<nutime_core::Result<_>>()?;
    Ok((0..series.len()).map(|i| per_channel.iter().flat_map(|r| r[i].iter().copied()).collect()).collect())
}

fn encoder_from<T: Real>(path: &Path, seed: u64) -> Result<(NuTime, ParamStore<T>, Metadata)> {
    let (ckpt, meta) = read_checkpoint(path)?;
    let (model, store) = restore::<T>(&ckpt, meta.model.clone(), seed)?;
    Ok((model, store, meta))
}

fn run_pretrain<T: Real>(cfg: &RunConfig, data: &Path, out: &Path, loss_csv: Option<&Path>) -> Result<()> {
    let d = load_dataset(data, cfg.max_len)?;
    let series: Vec<RawSeries> = d.train.iter().flat_map(split_multivariate).collect();
    let model = ModelConfig {
        n_channels: 1,
        n_classes: 0,
        ..with_stats(cfg.model.clone(), d.stats, &series)?
    };
    eprintln!("pretraining on {} series from {}", series.len(), d.name);
    let (state, logs) = pretrain::<T>(&series, model, &cfg.pretrain, |l: &EpochLog| {
        eprintln!("epoch {:>4}  loss {:.6}  lr {:.3e}  tau {:.5}", l.epoch, l.mean_loss, l.lr, l.tau);
    })?;
    let meta = Metadata {
        kind: CheckpointKind::Encoder,
        model: state.model.config.clone(),
        run: cfg.clone(),
        provenance: provenance("pretrain", cfg, logs.len(), logs.last().map(|l| l.mean_loss), &d.name, Vec::new()),
    };
    Checkpoint::new(&meta, &state.encoder_store()).save(out)?;
    let curve = loss_csv.map_or_else(|| PathBuf::from(format!("{}.loss.csv", out.display())), Path::to_path_buf);
    let header: Vec<String> = ["epoch", "mean_loss", "lr", "tau"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = logs
        .iter()
        .map(|l| vec![l.epoch.to_string(), l.mean_loss.to_string(), l.lr.to_string(), l.tau.to_string()])
        .collect();
    write_table(&curve, &header, &rows)?;
    eprintln!("wrote {} and {}", out.display(), curve.display());
    Ok(())
}

fn run_finetune<T: Real>(
    cfg: &RunConfig,
    ckpt: Option<&Path>,
    data: &SplitArgs,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<()> {
    let d = data.load(true, cfg.max_len)?;
    let n_channels = channels_of(&d.train)?;
    let (base, pretrained) = match ckpt {
        Some(p) => {
            let (c, meta) = read_checkpoint(p)?;
            (meta.model, Some(c.to_store::<T>()?))
        }
        None => (with_stats(cfg.model.clone(), d.stats, &d.train)?, None),
    };
    let config = ModelConfig {
        n_classes: d.labels.len(),
        n_channels,
        ..base
    };
    let (clf, loaded) = Classifier::<T>::new(config, pretrained.as_ref(), cfg.seed)?;
    if pretrained.is_some() {
        eprintln!("loaded {} pretrained tensors", loaded.len());
    }
    // Without a validation split the best epoch is picked on train.
    let val = if d.val.is_empty() { &d.train } else { &d.val };
    let res = finetune(clf, &d.train, val, &cfg.finetune, |e: &FinetuneEpoch| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  val acc {:.4}  val f1 {:.4}",
            e.epoch, e.train_loss, e.val.accuracy, e.val.macro_f1
        );
    })?;
    let test = evaluate(&res.classifier, &d.test, cfg.finetune.eval_chunk)?;
    let meta = Metadata {
        kind: CheckpointKind::Classifier,
        model: res.classifier.model.config.clone(),
        run: cfg.clone(),
        provenance: provenance(
            "finetune",
            cfg,
            res.best_epoch,
            res.history.get(res.best_epoch).map(|e| e.train_loss),
            &d.name,
            labels_vec(&d.labels),
        ),
    };
    Checkpoint::new(&meta, &res.classifier.store).save(out)?;
    report(
        metrics,
        cfg,
        "finetune",
        &d.name,
        d.test.len(),
        &[("accuracy", test.accuracy), ("macro_f1", test.macro_f1)],
    )
}

fn run_eval<T: Real>(cfg: &RunConfig, ckpts: &[PathBuf], data: &SplitArgs, metrics: Option<&Path>) -> Result<()> {
    let d = data.load(false, cfg.max_len)?;
    let mut clfs = Vec::with_capacity(ckpts.len());
    for ckpt in ckpts {
        let (c, meta) = read_checkpoint(ckpt)?;
        if meta.kind != CheckpointKind::Classifier {
            return Err(Error::Checkpoint {
                path: ckpt.to_path_buf(),
                msg: "eval needs a fine-tuned classifier checkpoint".into(),
            });
        }
        if d.labels.len() > meta.model.n_classes {
            return Err(Error::data(
                ckpt,
                format!("data has {} classes, classifier {}", d.labels.len(), meta.model.n_classes),
            ));
        }
        let (model, store) = restore::<T>(&c, meta.model, cfg.seed)?;
        clfs.push(Classifier { model, store });
    }
    let m: Metrics = evaluate_ensemble(&clfs, &d.test, cfg.finetune.eval_chunk)?;
    report(metrics, cfg, "eval", &d.name, d.test.len(), &[("accuracy", m.accuracy), ("macro_f1", m.macro_f1)])
}

fn run_fewshot<T: Real>(cfg: &RunConfig, ckpt: Option<&Path>, data: &Path, metrics: Option<&Path>) -> Result<()> {
    let d = load_dataset(data, cfg.max_len)?;
    let n_channels = channels_of(&d.train)?;
    let (base, pretrained) = match ckpt {
        Some(p) => {
            let (c, meta) = read_checkpoint(p)?;
            (meta.model, Some(c.to_store::<T>()?))
        }
        None => (with_stats(cfg.model.clone(), d.stats, &d.train)?, None),
    };
    let config = ModelConfig {
        n_classes: d.labels.len(),
        n_channels,
        ..base
    };
    let spec = &cfg.fewshot;
    if spec.n_episodes == 0 {
        return Err(usage("episodes must be >= 1"));
    }
    let episodes = (0..spec.n_episodes)
        .into_par_iter()
        .map(|e| few_shot_episode::<T, T>(&config, pretrained.as_ref(), &d.train, &d.test, spec, e))
        .collect::<nutime_core::Result<Vec<_>>>()?;
    let s = summarize(episodes)?;
    report(
        metrics,
        cfg,
        "fewshot",
        &d.name,
        spec.n_episodes,
        &[
            ("accuracy", s.mean.accuracy),
            ("macro_f1", s.mean.macro_f1),
            ("accuracy_std", s.std.accuracy),
            ("macro_f1_std", s.std.macro_f1),
        ],
    )
}

fn run_cluster<T: Real>(cfg: &RunConfig, ckpt: &Path, data: &Path, metrics: Option<&Path>) -> Result<()> {
    let d = load_dataset(data, cfg.max_len)?;
    let (model, store, _) = encoder_from::<T>(ckpt, cfg.seed)?;
    let reps = represent(&model, &store, &d.test)?;
    let truth: Vec<usize> = d.test.iter().map(|s| s.label.unwrap_or(0)).collect();
    let k = cfg.cluster.k.unwrap_or(d.labels.len());
    let (m, _) = cluster_eval(&reps, &truth, k, cfg.seed)?;
    report(
        metrics,
        cfg,
        "cluster",
        &d.name,
        d.test.len(),
        &[("ari", m.ari), ("nmi", m.nmi), ("silhouette", m.silhouette)],
    )
}

fn run_anomaly<T: Real>(cfg: &RunConfig, ckpt: &Path, normal: &[PathBuf], test: &[PathBuf], metrics: Option<&Path>) -> Result<()> {
    let (mut s, _) = load_files(&[normal, test], cfg.max_len)?;
    let test_series = s.pop().unwrap_or_default();
    let normal_series = s.pop().unwrap_or_default();
    let normal_labels: Vec<Option<usize>> = normal_series.iter().map(|s| s.label).collect();
    let is_anomaly: Vec<bool> = test_series.iter().map(|s| !normal_labels.contains(&s.label)).collect();
    let (model, store, _) = encoder_from::<T>(ckpt, cfg.seed)?;
    let train_reps = represent(&model, &store, &normal_series)?;
    let test_reps = represent(&model, &store, &test_series)?;
    let m = anomaly_eval(&train_reps, &test_reps, &is_anomaly, cfg.anomaly.quantile)?;
    report(
        metrics,
        cfg,
        "anomaly",
        &stem(&test[0]),
        test_series.len(),
        &[("precision", m.precision), ("recall", m.recall), ("f1", m.f1), ("auroc", m.auroc)],
    )
}

fn run_embed<T: Real>(cfg: &RunConfig, ckpt: &Path, input: &[PathBuf], out: &Path) -> Result<()> {
    let (mut s, _) = load_files(&[input], cfg.max_len)?;
    let series = s.pop().unwrap_or_default();
    let (model, store, _) = encoder_from::<T>(ckpt, cfg.seed)?;
    let reps = represent(&model, &store, &series)?;
    let width = reps.first().map_or(model.config.d_model, Vec::len);
    let header: Vec<String> = (0..width).map(|i| format!("e{i}")).collect();
    let rows: Vec<Vec<String>> = reps.iter().map(|r| r.iter().map(f64::to_string).collect()).collect();
    write_table(out, &header, &rows)?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn run_attn<T: Real>(cfg: &RunConfig, ckpt: &Path, input: &[PathBuf], out: &Path) -> Result<()> {
    let (mut s, _) = load_files(&[input], cfg.max_len)?;
    let (model, store, _) = encoder_from::<T>(ckpt, cfg.seed)?;
    let series = prepare_series(&model.config, &s.pop().unwrap_or_default())?;
    let maps = series
        .iter()
        .map(|x| Ok(SeriesAttention::new(&x.id, &model.cls_attention(&store, x)?)))
        .collect::<Result<Vec<_>>>()?;
    write_json(out, &maps)
}

fn run_synth(seed: Option<u64>, spec: Option<&Path>, out: &Path) -> Result<()> {
    let mut spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let data = generate(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = DatasetManifest {
        name: stem(out),
        n_channels: 1,
        n_classes: spec.classes.len(),
        train: vec!["train.tsv".into()],
        val: None,
        test: None,
        stats: None,
    };
    write_ucr_tsv(&out.join("train.tsv"), &data.train)?;
    if !data.val.is_empty() {
        write_ucr_tsv(&out.join("val.tsv"), &data.val)?;
        manifest.val = Some(vec!["val.tsv".into()]);
    }
    if !data.test.is_empty() {
        write_ucr_tsv(&out.join("test.tsv"), &data.test)?;
        manifest.test = Some(vec!["test.tsv".into()]);
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    let spec_text = toml::to_string(&spec).map_err(|e| usage(e.to_string()))?;
    std::fs::write(out.join("spec.toml"), spec_text).map_err(|e| Error::io(out, e))?;
    eprintln!(
        "wrote {} / {} / {} series to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

/// File config, then flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.f64 |= cli.f64;
    if cli.max_len.is_some() {
        cfg.max_len = cli.max_len;
    }
    match &cli.command {
        Command::Pretrain {
            epochs,
            batch_size,
            lr,
            encoding,
            ..
        } => {
            if let Some(e) = epochs {
                cfg.pretrain.epochs = *e;
                cfg.pretrain.warmup_epochs = cfg.pretrain.warmup_epochs.min(*e);
            }
            if let Some(b) = batch_size {
                cfg.pretrain.batch_size = *b;
            }
            if let Some(l) = lr {
                cfg.pretrain.base_lr = *l;
            }
            if let Some(e) = encoding {
                cfg.model.encoding = *e;
            }
        }
        Command::Finetune {
            epochs,
            batch_size,
            lr,
            encoding,
            ..
        } => {
            if let Some(e) = epochs {
                cfg.finetune.epochs = *e;
            }
            if let Some(b) = batch_size {
                cfg.finetune.batch_size = *b;
            }
            if let Some(l) = lr {
                cfg.finetune.lr = *l;
            }
            if let Some(e) = encoding {
                cfg.model.encoding = *e;
            }
        }
        Command::Fewshot { shots, episodes, .. } => {
            if let Some(s) = shots {
                cfg.fewshot.n_shots = *s;
            }
            if let Some(e) = episodes {
                cfg.fewshot.n_episodes = *e;
            }
        }
        Command::Cluster { k, .. } => {
            if k.is_some() {
                cfg.cluster.k = *k;
            }
        }
        Command::Anomaly { quantile, .. } => {
            if let Some(q) = quantile {
                cfg.anomaly.quantile = *q;
            }
        }
        _ => {}
    }
    cfg.resolve()
}

fn dispatch<T: Real>(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::Pretrain { data, out, loss_csv, .. } => run_pretrain::<T>(cfg, data, out, loss_csv.as_deref()),
        Command::Finetune {
            ckpt, data, out, metrics, ..
        } => run_finetune::<T>(cfg, ckpt.as_deref(), data, out, metrics.as_deref()),
        Command::Eval { ckpt, data, metrics } => run_eval::<T>(cfg, ckpt, data, metrics.as_deref()),
        Command::Fewshot { ckpt, data, metrics, .. } => run_fewshot::<T>(cfg, ckpt.as_deref(), data, metrics.as_deref()),
        Command::Cluster { ckpt, data, metrics, .. } => run_cluster::<T>(cfg, ckpt, data, metrics.as_deref()),
        Command::Anomaly {
            ckpt,
            normal,
            test,
            metrics,
            ..
        } => run_anomaly::<T>(cfg, ckpt, normal, test, metrics.as_deref()),
        Command::Embed { ckpt, input, out } => run_embed::<T>(cfg, ckpt, input, out),
        Command::Attn { ckpt, input, out } => run_attn::<T>(cfg, ckpt, input, out),
        Command::Synth { spec, out } => run_synth(cli.seed, spec.as_deref(), out),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    eprintln!("resolved config (hash {}):\n{}", cfg.hash(), cfg.to_toml());
    let work = || {
        if cfg.f64 {
            dispatch::<f64>(cli, &cfg)
        } else {
            dispatch::<f32>(cli, &cfg)
        }
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| usage(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
