use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagewise::metrics::{
    ddp, detect_stages, kar_series, lsq_polyfit, partition_batch, DdpRecord, DifficultyPartition, KarSample,
    MetricsConfig, ProbBatch,
};

fn random_rows(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * classes);
    for _ in 0..n {
        // sharpen some rows so every difficulty bucket is populated
        let temp = rng.gen_range(0.2..6.0);
        let raw: Vec<f64> = (0..classes).map(|_| (rng.gen_range(0.0..1.0f64) * temp).exp()).collect();
        let z: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| v / z));
    }
    out
}

fn scalar_partition(probs: &[f64], classes: usize, alpha: f64, beta: f64) -> (usize, usize, usize) {
    let (mut e, mut m, mut h) = (0, 0, 0);
    for r in 0..probs.len() / classes {
        let mut best = probs[r * classes];
        for c in 1..classes {
            if probs[r * classes + c] > best {
                best = probs[r * classes + c];
            }
        }
        if best > alpha {
            e += 1;
        } else if best >= beta {
            m += 1;
        } else {
            h += 1;
        }
    }
    (e, m, h)
}

#[test]
fn partition_matches_per_row_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let probs = random_rows(&mut rng, 1000, 5);
    let cfg = MetricsConfig::default();
    let part = partition_batch(&ProbBatch::from_probs(5, probs.clone()).unwrap(), &cfg).unwrap();
    let (e, m, h) = scalar_partition(&probs, 5, cfg.alpha, cfg.beta);
    assert_eq!((part.easy, part.moderate, part.hard), (e, m, h));
    assert!(e > 0 && m > 0 && h > 0);
}

#[test]
fn ddp_equals_direct_division() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let part = DifficultyPartition {
            easy: rng.gen_range(0..50),
            moderate: rng.gen_range(0..50),
            hard: rng.gen_range(1..50),
        };
        let n = (part.easy + part.moderate + part.hard) as f64;
        let (e, h) = ddp(&part).unwrap();
        assert_eq!(e, part.easy as f64 / n);
        assert_eq!(h, part.hard as f64 / n);
    }
}

/// Normal equations in the basis `(t / t_max)^k`, solved by Cholesky.
fn oracle_sse(ts: &[f64], ys: &[f64], degree: usize) -> f64 {
    let m = degree + 1;
    let tmax = ts.iter().cloned().fold(f64::MIN, f64::max);
    let basis = |t: f64| (0..m).map(|k| (t / tmax).powi(k as i32)).collect::<Vec<_>>();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (&t, &y) in ts.iter().zip(ys) {
        let phi = basis(t);
        for i in 0..m {
            b[i] += phi[i] * y;
            for j in 0..m {
                a[i][j] += phi[i] * phi[j];
            }
        }
    }
    let mut l = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; m];
    for i in 0..m {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        x[i] = (z[i] - (i + 1..m).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    ts.iter()
        .zip(ys)
        .map(|(&t, &y)| {
            let fit: f64 = basis(t).iter().zip(&x).map(|(p, c)| p * c).sum();
            (y - fit).powi(2)
        })
        .sum()
}

#[test]
fn polyfit_residual_matches_normal_equation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ts: Vec<f64> = (1..=50).map(f64::from).collect();
    let ys: Vec<f64> =
        ts.iter().map(|t| 0.3 + 0.02 * t - 0.0004 * t * t + rng.gen_range(-0.05..0.05)).collect();
    let curve = lsq_polyfit(&ts, &ys, 5).unwrap();
    let sse: f64 = ts.iter().zip(&ys).map(|(&t, &y)| (y - curve.eval(t).unwrap()).powi(2)).sum();
    let want = oracle_sse(&ts, &ys, 5);
    assert!((sse - want).abs() < 1e-6, "sse {sse} vs oracle {want}");
}

#[test]
fn derivative_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ts: Vec<f64> = (0..=60).map(f64::from).collect();
    let ys: Vec<f64> = ts.iter().map(|t| (t / 12.0).tanh() + rng.gen_range(-0.02..0.02)).collect();
    let curve = lsq_polyfit(&ts, &ys, 5).unwrap();
    let d = curve.derivative();
    let h = 1e-4;
    for i in 0..20 {
        let t = 1.0 + i as f64 * 2.9;
        let numeric = (curve.eval(t + h).unwrap() - curve.eval(t - h).unwrap()) / (2.0 * h);
        assert!((d.eval(t).unwrap() - numeric).abs() < 1e-5);
    }
}

fn records(f: impl Fn(f64) -> (f64, f64), ts: impl Iterator<Item = f64>) -> Vec<DdpRecord> {
    ts.map(|t| {
        let (e, h) = f(t);
        DdpRecord { t, ddp_e: e, ddp_h: h }
    })
    .collect()
}

#[test]
fn kar_of_linear_series_is_constant() {
    let recs = records(|t| (0.002 * t, 0.5 - 0.001 * t), (1..=300).map(f64::from));
    for k in kar_series(&recs, &MetricsConfig::default()).unwrap() {
        assert!((k.kar - 0.0015).abs() < 1e-6, "t={} kar={}", k.t, k.kar);
    }
    let flat = records(|_| (0.4, 0.2), (1..=30).map(f64::from));
    for k in kar_series(&flat, &MetricsConfig::default()).unwrap() {
        assert!(k.kar.abs() < 1e-9);
    }
}

#[test]
fn kar_of_quadratic_series_matches_symbolic_derivative() {
    let e = |t: f64| 0.1 + 0.01 * t - 0.0001 * t * t;
    let h = |t: f64| 0.9 - 0.015 * t + 0.00008 * t * t;
    let recs = records(|t| (e(t), h(t)), (0..=80).map(f64::from));
    for k in kar_series(&recs, &MetricsConfig::default()).unwrap() {
        let want = 0.5 * ((0.01 - 0.0002 * k.t).abs() + (-0.015 + 0.00016 * k.t).abs());
        assert!((k.kar - want).abs() < 1e-6);
    }
}

#[test]
fn kar_needs_enough_records() {
    let recs = records(|t| (t, t), (0..6).map(f64::from));
    assert!(kar_series(&recs, &MetricsConfig::default()).is_err());
}

pub fn bump_fixture() -> Vec<KarSample> {
    (0..=200)
        .map(|t| {
            let t = t as f64;
            let kar = if t <= 40.0 {
                0.001
            } else if t <= 70.0 {
                0.001 + 0.009 * (t - 40.0) / 30.0
            } else if t <= 120.0 {
                0.01 - 0.008 * (t - 70.0) / 50.0
            } else {
                0.002
            };
            KarSample { t, kar }
        })
        .collect()
}

/// Scans every candidate boundary and keeps those satisfying the 10% rule.
fn brute_force_stages(kar: &[KarSample]) -> (usize, usize) {
    let top = kar.iter().map(|k| k.kar).fold(f64::MIN, f64::max);
    let peak = kar.iter().position(|k| k.kar == top).unwrap();
    let early_min = kar[..=peak].iter().map(|k| k.kar).fold(f64::MAX, f64::min);
    let late_min = kar[peak + 1..].iter().map(|k| k.kar).fold(f64::MAX, f64::min);
    let mut t1 = 0;
    let mut t2 = usize::MAX;
    for (i, k) in kar.iter().enumerate() {
        if i < peak && k.kar <= early_min + 0.1 * (top - early_min) {
            t1 = t1.max(k.t as usize);
        }
        if i > peak && k.kar <= late_min + 0.1 * (top - late_min) {
            t2 = t2.min(k.t as usize);
        }
    }
    (t1, t2)
}

#[test]
fn stage_detection_matches_brute_force_on_bump() {
    let kar = bump_fixture();
    let b = detect_stages(&kar, &MetricsConfig::default()).unwrap();
    let (t1, t2) = brute_force_stages(&kar);
    assert!(!b.fallback_used);
    assert!(b.t1_end.abs_diff(t1) <= 2 && b.t2_end.abs_diff(t2) <= 2, "{b:?} vs ({t1}, {t2})");
    assert!((41..=45).contains(&b.t1_end) && (113..=117).contains(&b.t2_end));
    assert_eq!(b.total, 200);
}

proptest! {
    #[test]
    fn partition_is_permutation_invariant(seed in 0u64..1000, n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = random_rows(&mut rng, n, 4);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<f64> = order.iter().flat_map(|&r| probs[r * 4..r * 4 + 4].to_vec()).collect();
        let cfg = MetricsConfig::default();
        let a = partition_batch(&ProbBatch::from_probs(4, probs).unwrap(), &cfg).unwrap();
        let b = partition_batch(&ProbBatch::from_probs(4, shuffled).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.total(), n);
    }

    #[test]
    fn ddp_is_monotone_in_thresholds(seed in 0u64..1000, a1 in 0.31f64..1.0, a2 in 0.31f64..1.0,
                                    b1 in 0.0f64..0.3, b2 in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = ProbBatch::from_probs(3, random_rows(&mut rng, 64, 3)).unwrap();
        let run = |alpha, beta| {
            let cfg = MetricsConfig { alpha, beta, ..Default::default() };
            ddp(&partition_batch(&batch, &cfg).unwrap()).unwrap()
        };
        let (lo_a, hi_a) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let (lo_b, hi_b) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        prop_assert!(run(hi_a, 0.3).0 <= run(lo_a, 0.3).0);
        prop_assert!(run(0.8, lo_b).1 <= run(0.8, hi_b).1);
        let (e, h) = run(lo_a, lo_b);
        prop_assert!(e + h <= 1.0);
    }

    #[test]
    fn kar_is_invariant_under_complement(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<DdpRecord> = (1..=25)
            .map(|t| DdpRecord { t: t as f64, ddp_e: rng.gen_range(0.0..0.5), ddp_h: rng.gen_range(0.0..0.5) })
            .collect();
        let flipped: Vec<DdpRecord> =
            recs.iter().map(|r| DdpRecord { t: r.t, ddp_e: 1.0 - r.ddp_e, ddp_h: 1.0 - r.ddp_h }).collect();
        let cfg = MetricsConfig::default();
        let a = kar_series(&recs, &cfg).unwrap();
        let b = kar_series(&flipped, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.kar - y.kar).abs() < 1e-9);
        }
    }

    #[test]
    fn detected_stages_are_ordered(values in proptest::collection::vec(0.0f64..1.0, 10..80)) {
        let kar: Vec<KarSample> =
            values.iter().enumerate().map(|(i, &kar)| KarSample { t: i as f64 + 1.0, kar }).collect();
        let b = detect_stages(&kar, &MetricsConfig::default()).unwrap();
        if !b.fallback_used {
            prop_assert!(0 < b.t1_end && b.t1_end < b.t2_end && b.t2_end < b.total);
        }
    }
}
