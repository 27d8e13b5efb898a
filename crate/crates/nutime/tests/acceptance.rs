//! Exit-gate checks, one line per criterion.
//!
//! Runs without the libtest harness so criteria execute one after another and
//! their wall-clock times are meaningful on a single core. Pass criterion
//! numbers as arguments to run a subset: `cargo test --test acceptance -- 1 7`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nutime::checkpoint::{Checkpoint, CheckpointKind, Metadata, Provenance};
use nutime::RunConfig;
use nutime_core::byol::{byol_loss, momentum_update, pretrain, ByolConfig, SiameseState};
use nutime_core::eval::anomaly::auroc;
use nutime_core::eval::cluster::{adjusted_rand_index, kmeans, normalized_mutual_info, silhouette};
use nutime_core::eval::metrics::macro_f1;
use nutime_core::eval::{evaluate, finetune, linear_probe, Classifier, FinetuneConfig, ProbeConfig};
use nutime_core::gradcheck::check_gradients;
use nutime_core::layers::EncoderBlock;
use nutime_core::nme::{basic_block, scale_weights, Nme, NmeConfig};
use nutime_core::params::normal_tensor;
use nutime_core::synth::{generate, SplitCounts, SynthData, SynthSpec};
use nutime_core::tokenizer::{decompose, reconstruct, DEFAULT_STD_FLOOR};
use nutime_core::{rng, EncodingMode, Graph, ModelConfig, NuTime, ParamStore, RawSeries, Tensor};
use rand::Rng as _;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// `n` log-uniform points in `[10^lo, 10^hi]` from the golden-ratio sequence.
fn log_sweep(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| 10f64.powf(lo + (hi - lo) * ((i as f64 + 0.5) * GOLDEN).fract()))
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_change(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b)
}

fn c1_simplex() -> Outcome {
    let cfg = NmeConfig::default();
    let mut xs = log_sweep(10_000, -6.0, 6.0);
    xs.push(0.0);
    let mut worst = 0.0f64;
    let mut negative = 0;
    for &x in &xs {
        let a = scale_weights(x, &cfg);
        worst = worst.max((a.iter().sum::<f64>() - 1.0).abs());
        negative += a.iter().filter(|&&v| v < 0.0).count();
    }
    outcome(
        worst <= 1e-6 && negative == 0,
        format!("{} points, max |sum-1| = {worst:.2e}, negative entries = {negative}", xs.len()),
    )
}

fn c2_dominant_scale() -> Outcome {
    let cfg = NmeConfig::default();
    let logs_k: Vec<f64> = cfg.scales.iter().map(|k| k.log10()).collect();
    let mut checked = 0;
    let mut wrong = 0;
    for x in log_sweep(20_000, -3.5, 3.5) {
        let lx = x.log10();
        let near_mid = logs_k.windows(2).any(|w| (lx - 0.5 * (w[0] + w[1])).abs() < 0.01);
        if near_mid {
            continue;
        }
        let a = scale_weights(x, &cfg);
        let top = (0..a.len()).max_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap();
        let nearest = (0..logs_k.len())
            .min_by(|&i, &j| (lx - logs_k[i]).abs().total_cmp(&(lx - logs_k[j]).abs()))
            .unwrap();
        checked += 1;
        wrong += usize::from(top != nearest);
    }
    outcome(wrong == 0, format!("{checked} points off the midpoints, {wrong} mismatches"))
}

fn single_block(x: &[f64], store: &ParamStore<f64>, nme: &Nme) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let v = g.constant(Tensor::new(vec![x.len(), 1], x.to_vec()).unwrap());
    let y = basic_block(&mut g, store, v, 1.0, &nme.blocks[0], 1e-5).unwrap();
    let t = g.value(y);
    (0..x.len()).map(|i| t.row(i).to_vec()).collect()
}

fn c3_saturation() -> Outcome {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng::stream(31, 0);
    let nme = Nme::new(&mut store, "s", NmeConfig::centered(1), &mut r).unwrap();
    let big = single_block(&[1e6, 1e7, -1e6, -1e7], &store, &nme);
    let high = rel_change(&big[1], &big[0]).max(rel_change(&big[3], &big[2]));
    let small = single_block(&[1e-6, 1e-7, 1e-9, 0.0, -1e-6], &store, &nme);
    let ln_b = &small[3];
    let low = small[..3]
        .iter()
        .chain(std::iter::once(&small[4]))
        .map(|y| rel_change(y, ln_b))
        .fold(0.0, f64::max);
    outcome(
        high < 1e-3 && low < 1e-3,
        format!("|x| 1e6 -> 1e7: {high:.2e}; |x| <= 1e-6 vs LN(b): {low:.2e} (limit 1e-3)"),
    )
}

fn c4_boundedness() -> Outcome {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng::stream(41, 0);
    let cfg = NmeConfig::default();
    let d = cfg.embed_dim;
    let nme = Nme::new(&mut store, "b", cfg, &mut r).unwrap();
    let mut xs = log_sweep(10_000, -6.0, 6.0);
    let negatives: Vec<f64> = xs.iter().step_by(7).map(|x| -x).collect();
    xs.extend(negatives);
    xs.extend([0.0, 1e-300, 1e300, -1e300, 1e-3, 1e3]);
    let mut g = Graph::new();
    let y = nme.embed(&mut g, &store, &xs, 1e-5).unwrap();
    let t = g.value(y);
    let bound = (d as f64).sqrt() * (1.0 + 1e-4);
    let worst = (0..xs.len()).map(|i| norm(t.row(i))).fold(0.0, f64::max);
    outcome(
        worst <= bound && t.data().iter().all(|v| v.is_finite()),
        format!("{} inputs, max norm {worst:.6} vs bound {bound:.6}", xs.len()),
    )
}

fn c5_round_trip() -> Outcome {
    let mut r = rng::stream(51, 0);
    let mut worst = 0.0f64;
    let mut constant_windows = 0;
    let mut tiny_windows = 0;
    let mut constant_exact = true;
    for i in 0..1000 {
        let w = [4usize, 8, 16][i % 3];
        let n = r.random_range(1..9usize);
        let scale = 10f64.powi(r.random_range(-4..5));
        let mut values = Vec::with_capacity(n * w);
        for _ in 0..n {
            if r.random_bool(0.25) {
                let c = scale * r.random_range(-2.0..2.0);
                values.extend(std::iter::repeat_n(c, w));
                constant_windows += 1;
            } else if r.random_bool(0.1) {
                // std far below the normalization floor
                let c = scale * r.random_range(-2.0..2.0);
                values.extend((0..w).map(|_| c + 1e-8 * r.random_range(-1.0..1.0)));
                tiny_windows += 1;
            } else {
                values.extend((0..w).map(|_| scale * r.random_range(-2.0..2.0)));
            }
        }
        let s = RawSeries::univariate("r", None, values.clone()).unwrap();
        let back = reconstruct(&decompose(&s, w, DEFAULT_STD_FLOOR).unwrap()).unwrap();
        for (j, (a, b)) in values.iter().zip(back.values()).enumerate() {
            worst = worst.max((a - b).abs() / a.abs().max(1e-300));
            let win = &values[j / w * w..(j / w + 1) * w];
            if win.iter().all(|v| *v == win[0]) && a != b {
                constant_exact = false;
            }
        }
    }
    outcome(
        worst <= 1e-5 && constant_exact,
        format!(
            "1000 series, max relative error {worst:.2e}, {tiny_windows} sub-floor windows, \
             {constant_windows} constant windows exact: {constant_exact}"
        ),
    )
}

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;

fn grad_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        mlp_dim: 12,
        window_size: 4,
        shape_embed_dim: 4,
        mean_std_embed_dim: 4,
        nme: NmeConfig {
            embed_dim: 4,
            ..NmeConfig::centered(3)
        },
        max_tokens: 8,
        n_classes: 3,
        ..ModelConfig::default()
    }
}

fn weights(shape: &[usize], f: fn(f64) -> f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| f(i as f64 * 0.37)).collect()).unwrap()
}

fn c6_gradients() -> Outcome {
    let mut errs: Vec<(&str, f64)> = Vec::new();
    let mut r = rng::stream(61, 0);

    let mut s = ParamStore::<f64>::new();
    let x = s.add("x", normal_tensor(&mut r, &[3, 5], 1.0));
    let gm = s.add("gamma", normal_tensor(&mut r, &[5], 1.0));
    let bt = s.add("beta", normal_tensor(&mut r, &[5], 1.0));
    let w = weights(&[3, 5], f64::sin);
    let rep = check_gradients(&s, H, 1e-6, |g, s| {
        let (x, gm, bt) = (g.param(s, x), g.param(s, gm), g.param(s, bt));
        let y = g.layer_norm(x, gm, bt, 1e-5)?;
        let c = g.constant(w.clone());
        let p = g.mul(y, c)?;
        g.sum(p)
    })
    .unwrap();
    errs.push(("layer_norm", rep.max_rel_err));

    let mut s = ParamStore::<f64>::new();
    let block = EncoderBlock::new(&mut s, "blk", 8, 2, 12, 1e-5, &mut r);
    let x = s.add("x", normal_tensor(&mut r, &[2, 3, 8], 1.0));
    let w = weights(&[2, 3, 8], f64::cos);
    let rep = check_gradients(&s, H, 1e-6, |g, s| {
        let xv = g.param(s, x);
        let (y, _) = block.forward(g, s, xv, 0.0, None)?;
        let c = g.constant(w.clone());
        let p = g.mul(y, c)?;
        g.sum(p)
    })
    .unwrap();
    errs.push(("attention block", rep.max_rel_err));

    let mut s = ParamStore::<f64>::new();
    let nme = Nme::new(&mut s, "m", NmeConfig { embed_dim: 6, ..NmeConfig::centered(3) }, &mut r).unwrap();
    let xs = [0.03, 0.7, 4.0, 55.0];
    let w = weights(&[4, 6], f64::sin);
    let rep = check_gradients(&s, H, 1e-6, |g, s| {
        let x = g.constant(Tensor::new(vec![4, 1], xs.to_vec())?);
        let y = basic_block(g, s, x, 10.0, &nme.blocks[2], 1e-5)?;
        let c = g.constant(w.clone());
        let p = g.mul(y, c)?;
        g.sum(p)
    })
    .unwrap();
    errs.push(("basic_block", rep.max_rel_err));
    let rep = check_gradients(&s, H, 1e-6, |g, s| {
        let y = nme.embed(g, s, &xs, 1e-5)?;
        let c = g.constant(w.clone());
        let p = g.mul(y, c)?;
        g.sum(p)
    })
    .unwrap();
    errs.push(("nme_embed", rep.max_rel_err));

    let mut s = ParamStore::<f64>::new();
    let model = NuTime::new(grad_config(), &mut s, 62).unwrap();
    let shapes = Tensor::<f64>::new(vec![2, 4], vec![-1.3, -0.4, 0.4, 1.3, 0.9, -1.1, 1.2, -1.0]).unwrap();
    let w = weights(&[2, 4], f64::cos);
    let rep = check_gradients(&s, H, 1e-6, |g, s| {
        let x = g.constant(shapes.clone());
        let y = model.embed_shape(g, s, x)?;
        let c = g.constant(w.clone());
        let p = g.mul(y, c)?;
        g.sum(p)
    })
    .unwrap();
    errs.push(("embed_shape", rep.max_rel_err));

    let a = RawSeries::univariate("a", Some(1), vec![0.2, 0.5, 0.1, 0.9, 30.0, 31.5, 29.0, 33.0]).unwrap();
    let b = RawSeries::univariate("b", Some(2), vec![-4.0, -3.0, -5.5, -4.1, 0.01, 0.02, 0.015, 0.011]).unwrap();
    let rep = check_gradients(&s, H, 1e-6, |g, s| {
        let logits = model.classify_batch(g, s, &[&a, &b], None)?;
        g.cross_entropy(logits, &[1, 2])
    })
    .unwrap();
    let all_checked = rep.checked == s.scalar_count();
    errs.push(("classify CE", rep.max_rel_err));

    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let list: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        worst < GRAD_TOL && all_checked,
        format!("max rel err {worst:.2e} ({})", list.join(", ")),
    )
}

fn byol_value(p: &[f64], z: &[f64], d: usize) -> f64 {
    let mut g = Graph::<f64>::new();
    let n = p.len() / d;
    let p = g.constant(Tensor::new(vec![n, d], p.to_vec()).unwrap());
    let z = g.constant(Tensor::new(vec![n, d], z.to_vec()).unwrap());
    let l = byol_loss(&mut g, p, z).unwrap();
    g.value(l).item().unwrap()
}

fn c7_byol() -> Outcome {
    let identical = byol_value(&[1.0, 2.0, -3.0, 0.5, 0.0, 4.0], &[2.0, 4.0, -6.0, 1.0, 0.0, 8.0], 3);
    let orthogonal = byol_value(&[1.0, 0.0, 0.0, 0.0, 2.0, 0.0], &[0.0, 3.0, 0.0, 0.0, 0.0, 1.0], 3);
    let antipodal = byol_value(&[1.0, -2.0, 0.5], &[-2.0, 4.0, -1.0], 3);
    let landmarks = identical.abs() <= 1e-6 && (orthogonal - 2.0).abs() <= 1e-6 && (antipodal - 4.0).abs() <= 1e-6;

    let model = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        mlp_dim: 32,
        shape_embed_dim: 8,
        mean_std_embed_dim: 8,
        nme: NmeConfig {
            embed_dim: 8,
            ..NmeConfig::default()
        },
        max_tokens: 8,
        ..ModelConfig::default()
    };
    let cfg = ByolConfig {
        projector: [32, 8],
        predictor: [32, 8],
        crop_len: 64,
        ..ByolConfig::default()
    };
    let mut state = SiameseState::<f64>::new(model, &cfg).unwrap();
    let spec = SynthSpec::scale_mode(&[-2.0, 2.0], SplitCounts { train: 2, val: 0, test: 0 }, 64, 71);
    let data = generate(&spec).unwrap().train;
    let refs: Vec<&RawSeries> = data.iter().collect();
    let (g, loss) = state.loss_graph(&refs, &refs).unwrap();
    let grads = g.backward(loss).unwrap();
    let online_only = !grads.is_empty() && grads.belongs_to(state.online.tag()) && !grads.belongs_to(state.target.tag());

    let mut g = Graph::tracking(&state.target);
    let cls = state.model.encode_batch(&mut g, &state.target, &refs, None).unwrap().cls;
    let z = state.projector.forward(&mut g, &state.target, cls).unwrap();
    let p = g.constant(normal_tensor(&mut rng::stream(72, 0), &[refs.len(), 8], 1.0));
    let l = byol_loss(&mut g, p, z).unwrap();
    let target_empty = g.backward(l).unwrap().is_empty();

    let mut moved = state.online.clone();
    for id in moved.ids().collect::<Vec<_>>() {
        let t = moved.get(id).map(|v| v + 0.5);
        moved.set(id, t).unwrap();
    }
    let before = state.target.clone();
    momentum_update(&moved, &mut state.target, 1.0).unwrap();
    let tau1 = state.target.iter().zip(before.iter()).all(|(a, b)| a.2 == b.2);
    momentum_update(&moved, &mut state.target, 0.0).unwrap();
    let tau0 = state.target.iter().zip(moved.iter()).all(|(a, b)| a.2 == b.2);

    outcome(
        landmarks && online_only && target_empty && tau1 && tau0,
        format!(
            "loss {identical:.1e}/{orthogonal:.6}/{antipodal:.6}; target grads empty: {target_empty}; online-only grads: {online_only}; tau=1 keeps: {tau1}; tau=0 copies: {tau0}"
        ),
    )
}

/// The scale-mode set shared by the training criteria.
fn scale_data() -> SynthData {
    let counts = SplitCounts {
        train: 128,
        val: 32,
        test: 64,
    };
    generate(&SynthSpec::scale_mode(&[-2.0, 2.0], counts, 512, 1)).unwrap()
}

struct Pretrained {
    bytes: Vec<u8>,
    secs: f64,
}

fn c8_pretrain(data: &SynthData) -> (Outcome, Option<Pretrained>) {
    let t0 = Instant::now();
    let model = ModelConfig::desk();
    let cfg = ByolConfig {
        epochs: 50,
        batch_size: 64,
        seed: 8,
        ..ByolConfig::default()
    };
    let (state, logs) = match pretrain::<f32>(&data.train, model.clone(), &cfg, |l| {
        eprintln!("  pretrain epoch {:>2} loss {:.5}", l.epoch, l.mean_loss);
    }) {
        Ok(v) => v,
        Err(e) => return (outcome(false, format!("pretraining failed: {e}")), None),
    };
    let first = logs[0].mean_loss;
    let last = logs.last().unwrap().mean_loss;
    let spread = state.projection_spread(&data.test, cfg.crop_len).unwrap_or(0.0);
    let run = RunConfig {
        model,
        pretrain: cfg,
        ..RunConfig::default()
    };
    let meta = Metadata {
        kind: CheckpointKind::Encoder,
        model: state.model.config.clone(),
        run,
        provenance: Provenance {
            command: "acceptance".into(),
            seed: 8,
            epochs: logs.len(),
            final_loss: Some(last),
            dataset: Some("scale-mode".into()),
            labels: Vec::new(),
            writer_version: env!("CARGO_PKG_VERSION").into(),
        },
    };
    let bytes = Checkpoint::new(&meta, &state.encoder_store()).to_bytes();
    let secs = t0.elapsed().as_secs_f64();
    (
        outcome(
            last < first && spread > 1e-3 && secs < 15.0 * 60.0,
            format!("loss {first:.5} -> {last:.5} over 50 epochs, projection std {spread:.3e} (> 1e-3)"),
        ),
        Some(Pretrained { bytes, secs }),
    )
}

fn finetune_accuracy(data: &SynthData, mut config: ModelConfig, seed: u64) -> f64 {
    config.n_classes = 2;
    let (clf, _) = Classifier::<f32>::new::<f32>(config, None, seed).unwrap();
    let cfg = FinetuneConfig {
        seed,
        ..FinetuneConfig::default()
    };
    let res = finetune(clf, &data.train, &data.val, &cfg, |_| {}).unwrap();
    evaluate(&res.classifier, &data.test, cfg.eval_chunk).unwrap().accuracy
}

const SEEDS: u64 = 5;

/// Mean test accuracy over the seeds and the per-seed values.
fn seed_average(data: &SynthData, config: &ModelConfig, label: &str) -> (f64, Vec<f64>) {
    let accs: Vec<f64> = (0..SEEDS)
        .map(|s| {
            let a = finetune_accuracy(data, config.clone(), s);
            eprintln!("  {label} seed {s}: test accuracy {a:.4}");
            a
        })
        .collect();
    (accs.iter().sum::<f64>() / accs.len() as f64, accs)
}

fn with_encoding(encoding: EncodingMode) -> ModelConfig {
    ModelConfig {
        encoding,
        ..ModelConfig::desk()
    }
}

fn with_nme(nme: NmeConfig) -> ModelConfig {
    ModelConfig {
        nme,
        ..ModelConfig::desk()
    }
}

fn fmt_accs(a: &[f64]) -> String {
    a.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
}

fn c9_quality(data: &SynthData, pre: Option<&Pretrained>, nme9: &mut Option<(f64, Vec<f64>, f64)>) -> Outcome {
    let t0 = Instant::now();
    let probe = match pre {
        Some(p) => {
            let ckpt = Checkpoint::from_bytes(&p.bytes).unwrap();
            let meta = ckpt.metadata().unwrap();
            let saved = ckpt.to_store::<f32>().unwrap();
            let mut store = ParamStore::<f32>::new();
            let model = NuTime::new(meta.model, &mut store, 0).unwrap();
            store.load_matching(&saved);
            let tx = model.represent(&store, &data.train, 64).unwrap();
            let ex = model.represent(&store, &data.test, 64).unwrap();
            let ty: Vec<usize> = data.train.iter().map(|s| s.label.unwrap()).collect();
            let ey: Vec<usize> = data.test.iter().map(|s| s.label.unwrap()).collect();
            linear_probe(&tx, &ty, &ex, &ey, 2, &ProbeConfig::default()).unwrap().accuracy
        }
        None => f64::NAN,
    };
    let t_nme = Instant::now();
    let (nme, nme_accs) = seed_average(data, &with_encoding(EncodingMode::Nme), "nme");
    *nme9 = Some((nme, nme_accs.clone(), t_nme.elapsed().as_secs_f64()));
    let (ident, id_accs) = seed_average(data, &with_encoding(EncodingMode::Identity), "identity");
    let (inorm, in_accs) = seed_average(data, &with_encoding(EncodingMode::InstanceNorm), "instance_norm");
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        probe >= 0.9 && nme > ident && nme > inorm && secs < 30.0 * 60.0,
        format!(
            "probe {probe:.4} (>= 0.9); mean acc nme {nme:.4} [{}] vs identity {ident:.4} [{}] vs instance_norm {inorm:.4} [{}] (strict)",
            fmt_accs(&nme_accs),
            fmt_accs(&id_accs),
            fmt_accs(&in_accs)
        ),
    )
}

fn c10_scales(data: &SynthData) -> Outcome {
    let t0 = Instant::now();
    let (three, a3) = seed_average(data, &with_nme(NmeConfig::centered(3)), "nme-3");
    let (one, a1) = seed_average(data, &with_nme(NmeConfig::centered(1)), "nme-1");
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        three >= one && secs < 20.0 * 60.0,
        format!("3 scales {three:.4} [{}] >= 1 scale {one:.4} [{}]", fmt_accs(&a3), fmt_accs(&a1)),
    )
}

fn c11_weighting(data: &SynthData, nme9: &mut Option<(f64, Vec<f64>, f64)>) -> (Outcome, f64) {
    let t0 = Instant::now();
    let (weighted, aw, reused) = match nme9.take() {
        Some(v) => v,
        None => {
            let (m, a) = seed_average(data, &with_encoding(EncodingMode::Nme), "nme-9 weighted");
            (m, a, 0.0)
        }
    };
    let unweighted_cfg = with_nme(NmeConfig {
        weighted: false,
        ..NmeConfig::default()
    });
    let (unweighted, au) = seed_average(data, &unweighted_cfg, "nme-9 unweighted");
    let secs = t0.elapsed().as_secs_f64() + reused;
    (
        outcome(
            weighted >= unweighted && secs < 20.0 * 60.0,
            format!(
                "weighted {weighted:.4} [{}] >= unweighted {unweighted:.4} [{}]",
                fmt_accs(&aw),
                fmt_accs(&au)
            ),
        ),
        secs,
    )
}

fn c12_metrics() -> Outcome {
    let part = [0usize, 0, 1, 1, 2, 2, 2];
    let relabelled = [2usize, 2, 0, 0, 1, 1, 1];
    let ari = adjusted_rand_index(&part, &relabelled).unwrap();
    let nmi = normalized_mutual_info(&part, &relabelled).unwrap();

    let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
    let km = kmeans(&pts, 2, 0, 100).unwrap();
    let grouped = km.assignments[0] == km.assignments[1]
        && km.assignments[2] == km.assignments[3]
        && km.assignments[0] != km.assignments[2];
    let sil = silhouette(&pts, &km.assignments).unwrap();
    let b = (10.0 + 101f64.sqrt()) / 2.0;
    let expected_sil = 1.0 - 1.0 / b;

    let scores = [1.0, 2.0, 3.0, 4.0];
    let au1 = auroc(&scores, &[false, false, true, true]).unwrap();
    let au2 = auroc(&scores, &[false, true, false, true]).unwrap();

    let f_half = macro_f1(&[vec![1, 1], vec![1, 1]]).unwrap();
    let f_diag = macro_f1(&[vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]).unwrap();
    // class 2 absent from truth and prediction contributes F1 = 0: (1 + 1 + 0) / 3
    let f_absent = macro_f1(&[vec![2, 0, 0], vec![0, 3, 0], vec![0, 0, 0]]).unwrap();

    let pass = ari == 1.0
        && (nmi - 1.0).abs() < 1e-12
        && grouped
        && (sil - 0.90).abs() <= 0.01
        && (sil - expected_sil).abs() < 1e-12
        && au1 == 1.0
        && au2 == 0.75
        && f_half == 0.5
        && f_diag == 1.0
        && (f_absent - 2.0 / 3.0).abs() < 1e-15;
    outcome(
        pass,
        format!(
            "ARI {ari}, NMI {nmi}, silhouette {sil:.4} (0.90 +- 0.01), AUROC {au1}/{au2}, macro-F1 {f_half}/{f_diag}/{f_absent:.4}"
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_nutime"))
        .args(args)
        .current_dir(dir)
        .env_remove("NUTIME_THREADS")
        .output()
        .unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn c13_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("spec.toml"),
        "length = 512\n[samples_per_class]\ntrain = 32\nval = 8\ntest = 16\n",
    )
    .unwrap();
    let mut ok = cli(p, &["synth", "--spec", "spec.toml", "--out", "data", "--seed", "7"]);
    for run in ["a", "b"] {
        let ckpt = format!("{run}.ckpt");
        let clf = format!("{run}_clf.ckpt");
        let metrics = format!("{run}.csv");
        let common = ["--threads", "1", "--seed", "7"];
        let pre = [&common[..], &["pretrain", "--data", "data", "--out", &ckpt, "--epochs", "3"]].concat();
        ok &= cli(p, &pre);
        let ft = [
            &common[..],
            &["finetune", "--ckpt", &ckpt, "--data", "data", "--out", &clf, "--epochs", "3", "--metrics", &metrics],
        ]
        .concat();
        ok &= cli(p, &ft);
        let fs_args = [
            &common[..],
            &["fewshot", "--ckpt", &ckpt, "--data", "data", "--episodes", "3", "--metrics", &metrics],
        ]
        .concat();
        ok &= cli(p, &fs_args);
    }
    if !ok {
        return outcome(false, "a CLI step failed");
    }
    let same = |a: &str, b: &str| fs::read(p.join(a)).unwrap() == fs::read(p.join(b)).unwrap();
    let pairs = [
        ("a.ckpt", "b.ckpt"),
        ("a.ckpt.loss.csv", "b.ckpt.loss.csv"),
        ("a_clf.ckpt", "b_clf.ckpt"),
        ("a.csv", "b.csv"),
    ];
    let equal: Vec<bool> = pairs.iter().map(|(a, b)| same(a, b)).collect();
    outcome(
        equal.iter().all(|&e| e),
        format!("pretrain ckpt, loss curve, finetune ckpt, metrics identical: {equal:?}"),
    )
}

fn c14_checkpoint() -> Outcome {
    let mut store = ParamStore::<f32>::new();
    let model = ModelConfig::desk();
    NuTime::new(model.clone(), &mut store, 14).unwrap();
    let meta = Metadata {
        kind: CheckpointKind::Encoder,
        model,
        run: RunConfig::default(),
        provenance: Provenance {
            command: "acceptance".into(),
            seed: 14,
            epochs: 0,
            final_loss: None,
            dataset: None,
            labels: Vec::new(),
            writer_version: env!("CARGO_PKG_VERSION").into(),
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let c = Checkpoint::new(&meta, &store);
    c.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    loaded.save(&b).unwrap();
    let bytes = fs::read(&a).unwrap();
    let identical = bytes == fs::read(&b).unwrap();
    let restored: ParamStore<f32> = loaded.to_store().unwrap();
    let values_equal = restored
        .iter()
        .zip(store.iter())
        .all(|(x, y)| x.1 == y.1 && x.2.data().iter().zip(y.2.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    let meta_equal = loaded.metadata().unwrap() == meta;

    let t = &c.tensors[0];
    let off = 4 + 4 + 8 + c.meta_text().len() + 4 + 4 + t.name.len() + 1 + 4 + 8 * t.shape.len();
    let mut corrupt = Vec::new();
    let mut m = bytes.clone();
    m[off] ^= 0x08;
    corrupt.push(m);
    let mut m = bytes.clone();
    m[1] = b'X';
    corrupt.push(m);
    corrupt.push(bytes[..bytes.len() - 5].to_vec());
    let mut m = bytes.clone();
    let mid = bytes.len() - 64;
    m[mid] ^= 0x01;
    corrupt.push(m);
    let mut m = bytes.clone();
    m[4] = 2;
    corrupt.push(m);
    let rejected = corrupt.iter().filter(|m| Checkpoint::from_bytes(m).is_err()).count();
    outcome(
        identical && values_equal && meta_equal && rejected == corrupt.len(),
        format!(
            "save-load-save identical: {identical}, tensors bitwise: {values_equal}, metadata exact: {meta_equal}, corrupted rejected {rejected}/{}",
            corrupt.len()
        ),
    )
}

fn report(n: u32, name: &str, o: &Outcome, secs: f64, limit: &str) -> bool {
    println!(
        "criterion {n:>2} {} {name}: {} | {secs:.1} s (limit {limit})",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut all = true;
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed().as_secs_f64())
    };
    let quick: [(u32, &str, fn() -> Outcome, &str, f64); 7] = [
        (1, "NME weighting simplex", c1_simplex, "1 s", 1.0),
        (2, "dominant-scale selection", c2_dominant_scale, "1 s", 1.0),
        (3, "basic-block saturation", c3_saturation, "1 s", 1.0),
        (4, "embedding boundedness", c4_boundedness, "1 s", 1.0),
        (5, "window round trip", c5_round_trip, "1 s", 1.0),
        (6, "gradient checks", c6_gradients, "30 s", 30.0),
        (7, "BYOL contracts", c7_byol, "1 s", 1.0),
    ];
    for (n, name, f, limit, max) in quick {
        if want(n) {
            let (mut o, secs) = timed(&f);
            o.pass &= secs < max;
            all &= report(n, name, &o, secs, limit);
        }
    }

    let data = if [8, 9, 10, 11].iter().any(|&n| want(n)) {
        Some(scale_data())
    } else {
        None
    };
    let mut pre = None;
    if want(8) || want(9) {
        let (o, p) = c8_pretrain(data.as_ref().unwrap());
        let secs = p.as_ref().map_or(0.0, |p| p.secs);
        all &= report(8, "desk-scale pretraining progress", &o, secs, "15 min");
        pre = p;
    }
    let mut nme9 = None;
    if want(9) {
        let t = Instant::now();
        let o = c9_quality(data.as_ref().unwrap(), pre.as_ref(), &mut nme9);
        all &= report(9, "representation quality", &o, t.elapsed().as_secs_f64(), "30 min");
    }
    if want(10) {
        let t = Instant::now();
        let o = c10_scales(data.as_ref().unwrap());
        all &= report(10, "scales ablation", &o, t.elapsed().as_secs_f64(), "20 min");
    }
    if want(11) {
        let (o, secs) = c11_weighting(data.as_ref().unwrap(), &mut nme9);
        all &= report(11, "weighted-ensemble ablation", &o, secs, "20 min");
    }
    if want(12) {
        let (o, secs) = timed(&c12_metrics);
        let o = Outcome {
            pass: o.pass && secs < 1.0,
            ..o
        };
        all &= report(12, "evaluation-metric oracles", &o, secs, "1 s");
    }
    if want(13) {
        let (o, secs) = timed(&c13_determinism);
        all &= report(13, "CLI determinism", &o, secs, "bounded by criterion 8");
    }
    if want(14) {
        let (o, secs) = timed(&c14_checkpoint);
        let o = Outcome {
            pass: o.pass && secs < 1.0,
            ..o
        };
        all &= report(14, "checkpoint round trip and corruption", &o, secs, "1 s");
    }
    if !all {
        println!("acceptance: at least one criterion failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
