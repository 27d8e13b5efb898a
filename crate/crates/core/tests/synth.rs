use nutime_core::model::instance_norm;
use nutime_core::rng;
use nutime_core::synth::{generate, ShapeFamily, SplitCounts, SynthSpec};
use nutime_core::RawSeries;
use rand::Rng;

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
fn ks_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// One value per series at an independently drawn position.
fn pick(series: &[RawSeries], class: usize, transform: impl Fn(&RawSeries) -> RawSeries) -> Vec<f64> {
    let mut r = rng::stream(99, class as u64);
    series
        .iter()
        .filter(|s| s.label == Some(class))
        .map(|s| {
            let t = transform(s);
            t.values()[r.random_range(0..t.len())]
        })
        .collect()
}

#[test]
fn instance_norm_erases_scale_mode_classes() {
    let spec = SynthSpec::scale_mode(&[-2.0, 2.0], SplitCounts { train: 200, val: 0, test: 0 }, 512, 3);
    let data = generate(&spec).unwrap();
    let normed = |s: &RawSeries| instance_norm(s).unwrap();
    let (_, p) = ks_test(&pick(&data.train, 0, normed), &pick(&data.train, 1, normed));
    assert!(p > 0.01, "KS rejected equality after instance norm: p = {p}");

    let raw = |s: &RawSeries| s.clone();
    let (d, p_raw) = ks_test(&pick(&data.train, 0, raw), &pick(&data.train, 1, raw));
    assert_eq!(d, 1.0);
    assert!(p_raw < 1e-10);
}

#[test]
fn ks_oracle_sanity() {
    let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..100).map(|i| i as f64 + 0.5).collect();
    let (d, p) = ks_test(&a, &b);
    assert!((d - 0.01).abs() < 1e-12);
    assert!(p > 0.99);
}

#[test]
fn shape_mode_shares_scale() {
    let spec = SynthSpec::shape_mode(
        &[ShapeFamily::Sine, ShapeFamily::Square, ShapeFamily::Sawtooth],
        1.0,
        SplitCounts { train: 4, val: 1, test: 1 },
        64,
        8,
    );
    let data = generate(&spec).unwrap();
    assert_eq!(data.train.len(), 12);
    for s in &data.train {
        let mean = s.values().iter().sum::<f64>() / 64.0;
        assert!((5.0..=15.0).contains(&mean));
    }
}
