//! Acceptance gate. Each test prints one PASS/FAIL line for its criterion.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagewise::augment::{dynamic_alpha, mixup, patch_erasing_mix, static_alpha, AlphaController};
use stagewise::data::{decode_dataset, encode_dataset, gen_synthetic, read_dataset, write_dataset, DEFAULT_NOISE};
use stagewise::harness::{train, AugMode, RunLog, TrainConfig, TrainOutcome};
use stagewise::metrics::{detect_stages, kar_series, lsq_polyfit, DdpRecord, KarSample, MetricsConfig, StageBoundaries};
use stagewise::model::{
    encode_checkpoint, read_checkpoint, soft_cross_entropy, vit_forward, write_checkpoint, Checkpoint, ModelParams,
    VitConfig,
};
use stagewise::probe::probe_topk;
use stagewise::report::analyze;
use stagewise::tensor::{grad_check, Differentiable, Graph, Var};
use stagewise::{Element, Result, Tensor};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

// Written straight to stderr so the line shows even when output is captured.
fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let word = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {word}  {name}: {detail}");
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn one_hot(c: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| (i == c) as u8 as f64).collect()
}

#[test]
fn criterion_01_equation_exactness() {
    let start = Instant::now();
    let mut ok = true;
    ok &= close(dynamic_alpha(0.5, 0.3).unwrap(), 0.6, 1e-12);
    ok &= close(dynamic_alpha(0.0, 1.0).unwrap(), 0.0, 1e-12);
    ok &= close(dynamic_alpha(1.0, 0.0).unwrap(), 1.0, 1e-12);

    let mut c = AlphaController::dynamic(0.9, 0.6).unwrap();
    ok &= close(c.ema_step(0.8).unwrap(), 0.62, 1e-12);
    let mut c = AlphaController::dynamic(1.0, 0.6).unwrap();
    ok &= close(c.ema_step(0.2).unwrap(), 0.6, 1e-12);
    let mut c = AlphaController::dynamic(0.0, 0.6).unwrap();
    ok &= close(c.ema_step(0.3).unwrap(), 0.3, 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xi = t64(&[3, 4, 4], &(0..48).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let xj = t64(&[3, 4, 4], &(0..48).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let (e1, e2) = (t64(&[4], &one_hot(0, 4)), t64(&[4], &one_hot(1, 4)));
    let (x, y) = mixup(&xi, &e1, &xj, &e2, 1.0).unwrap();
    ok &= x == xi && y == e1;
    let (_, y) = mixup(&xi, &e1, &xj, &e2, 0.5).unwrap();
    ok &= y.data().iter().zip([0.5, 0.5, 0.0, 0.0]).all(|(a, b)| close(*a, b, 1e-12));

    let (_, y, plan) = patch_erasing_mix(&xi, &e1, &xj, &e2, 0.6, 0.25, 0.1, 0.5, 2, 0.0, &mut rng).unwrap();
    let (ci, cj) = plan.label_coefficients();
    ok &= close(ci, 0.30, 1e-12) && close(cj, 0.32, 1e-12);
    ok &= y.data().iter().zip([0.30, 0.32, 0.0, 0.0]).all(|(a, b)| close(*a, b, 1e-12));
    let (_, _, full) = patch_erasing_mix(&xi, &e1, &xj, &e2, 0.6, 0.5, 0.1, 0.5, 2, 0.0, &mut rng).unwrap();
    ok &= close(full.label_coefficients().0, 0.0, 1e-12);

    let took = start.elapsed();
    ok &= took < Duration::from_secs(1);
    verdict(1, "equation exactness", ok, &format!("coefficients ({ci:.12}, {cj:.12}) in {took:.2?}"));
}

#[test]
fn criterion_02_kar_closed_form() {
    let start = Instant::now();
    let ddp: Vec<DdpRecord> = (1..=300)
        .map(|t| DdpRecord { t: t as f64, ddp_e: 0.002 * t as f64, ddp_h: 0.5 - 0.001 * t as f64 })
        .collect();
    let kar = kar_series(&ddp, &MetricsConfig::default()).unwrap();
    let worst = kar.iter().map(|k| (k.kar - 0.0015).abs()).fold(0.0, f64::max);
    let took = start.elapsed();
    let ok = kar.len() == 300 && worst <= 1e-6 && took < Duration::from_secs(1);
    verdict(2, "KAR closed form", ok, &format!("max |KAR - 0.0015| = {worst:.2e} over {} epochs in {took:.2?}", kar.len()));
}

/// Least squares through the normal equations `(VᵀV) c = Vᵀy` in the variable
/// `u = (t - mid) / half`, solved by Gauss-Jordan elimination with pivoting.
fn normal_equations_fit(ts: &[f64], ys: &[f64], degree: usize) -> Vec<f64> {
    let (lo, hi) = (ts[0], ts[ts.len() - 1]);
    let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
    let m = degree + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&t, &y) in ts.iter().zip(ys) {
        let u = (t - mid) / half;
        let pows: Vec<f64> = (0..m).map(|k| u.powi(k as i32)).collect();
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r] * pows[c];
            }
            a[r][m] += pows[r] * y;
        }
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..m).map(|r| a[r][m] / a[r][r]).collect();
    ts.iter().map(|&t| (0..m).map(|k| coef[k] * ((t - mid) / half).powi(k as i32)).sum()).collect()
}

#[test]
fn criterion_03_least_squares_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ts: Vec<f64> = (1..=50).map(f64::from).collect();
    let ys: Vec<f64> = ts
        .iter()
        .map(|&t| 0.8 / (1.0 + (-(t - 20.0) / 6.0).exp()) + 0.05 * rng.gen_range(-1.0..1.0))
        .collect();
    let curve = lsq_polyfit(&ts, &ys, 5).unwrap();
    let fitted = normal_equations_fit(&ts, &ys, 5);
    let ours: f64 = ts.iter().zip(&ys).map(|(&t, y)| (curve.eval(t).unwrap() - y).powi(2)).sum();
    let oracle: f64 = fitted.iter().zip(&ys).map(|(f, y)| (f - y).powi(2)).sum();
    let residual_gap = (ours - oracle).abs();

    let mut exact_gap = 0.0f64;
    let polys: [(&[f64], usize); 3] = [(&[0.0, 0.0, 1.0], 2), (&[2.0, -1.5, 0.0, 0.25], 3), (&[-0.5, 0.75], 1)];
    for (coef, degree) in polys {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let vs: Vec<f64> = xs.iter().map(|&x| coef.iter().rev().fold(0.0, |acc, c| acc * x + c)).collect();
        let got = lsq_polyfit(&xs, &vs, degree).unwrap().coefficients_in_t();
        for (g, w) in got.iter().zip(coef) {
            exact_gap = exact_gap.max((g - w).abs());
        }
    }
    let took = start.elapsed();
    let ok = residual_gap <= 1e-6 && exact_gap <= 1e-8 && took < Duration::from_secs(1);
    verdict(
        3,
        "least-squares oracle",
        ok,
        &format!("residual gap {residual_gap:.2e}, exact-recovery gap {exact_gap:.2e} in {took:.2?}"),
    );
}

fn bump_kar() -> Vec<KarSample> {
    (0..=150)
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

/// Tries every candidate boundary and keeps the ones satisfying the 10%
/// rise and decay rules around the global maximum.
fn brute_force_stages(kar: &[KarSample]) -> (usize, usize) {
    let v: Vec<f64> = kar.iter().map(|k| k.kar).collect();
    let mut peak = 0;
    for i in 0..v.len() {
        if v[i] > v[peak] {
            peak = i;
        }
    }
    let early = v[..=peak].iter().cloned().fold(f64::INFINITY, f64::min);
    let floor = v[peak + 1..].iter().cloned().fold(f64::INFINITY, f64::min);
    let mut t1 = None;
    for i in 0..peak {
        if v[i] <= early + 0.1 * (v[peak] - early) {
            t1 = Some(i);
        }
    }
    let mut t2 = None;
    for i in (peak + 1..v.len()).rev() {
        if v[i] <= floor + 0.1 * (v[peak] - floor) {
            t2 = Some(i);
        }
    }
    (kar[t1.unwrap()].t as usize, kar[t2.unwrap()].t as usize)
}

#[test]
fn criterion_04_stage_detection() {
    let start = Instant::now();
    let cfg = MetricsConfig::default();
    let kar = bump_kar();
    let got = detect_stages(&kar, &cfg).unwrap();
    let (o1, o2) = brute_force_stages(&kar);
    let near = |a: usize, b: usize| a.abs_diff(b) <= 2;
    let mut ok = !got.fallback_used && near(got.t1_end, o1) && near(got.t2_end, o2);

    let falling: Vec<KarSample> = (0..40).map(|t| KarSample { t: t as f64, kar: 1.0 / (1.0 + t as f64) }).collect();
    let rising: Vec<KarSample> = (0..40).map(|t| KarSample { t: t as f64, kar: t as f64 }).collect();
    let fallback = StageBoundaries::from_fractions(40, 0.15, 0.35);
    for series in [&falling, &rising] {
        let b = detect_stages(series, &cfg).unwrap();
        ok &= b.fallback_used && (b.t1_end, b.t2_end) == (fallback.t1_end, fallback.t2_end);
    }
    let took = start.elapsed();
    ok &= took < Duration::from_secs(1);
    verdict(
        4,
        "stage detection",
        ok,
        &format!("detected ({}, {}) vs oracle ({o1}, {o2}); monotone input falls back to ({}, {}) in {took:.2?}",
            got.t1_end, got.t2_end, fallback.t1_end, fallback.t2_end),
    );
}

struct FlatVit {
    cfg: VitConfig,
    images: Vec<f64>,
    targets: Vec<f64>,
    n: usize,
}

impl Differentiable for FlatVit {
    fn eval<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut vars = BTreeMap::new();
        let mut offset = 0;
        for (name, shape) in self.cfg.param_shapes() {
            let len: usize = shape.iter().product();
            let s = g.slice(x, 0, offset, len)?;
            vars.insert(name, g.reshape(s, &shape)?);
            offset += len;
        }
        let s = self.cfg.image_size;
        let images = g.constant(Tensor::from_f64([self.n, self.cfg.channels, s, s], &self.images)?);
        let (logits, _) = vit_forward(&self.cfg, g, &vars, images)?;
        soft_cross_entropy(g, logits, &Tensor::from_f64([self.n, self.cfg.n_classes], &self.targets)?)
    }
}

#[test]
fn criterion_05_gradient_soundness() {
    let start = Instant::now();
    let cfg = VitConfig { image_size: 8, patch_size: 4, channels: 3, dim: 8, depth: 1, heads: 2, mlp_ratio: 2, n_classes: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let point: Vec<f64> = cfg
        .param_shapes()
        .into_iter()
        .flat_map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let gain = name.contains("norm") && name.ends_with("weight");
            (0..n).map(|_| rng.gen_range(-0.4..0.4) + if gain { 1.0 } else { 0.0 }).collect::<Vec<_>>()
        })
        .collect();
    let n = 3;
    let f = FlatVit {
        images: (0..n * 3 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        targets: [one_hot(0, 4), vec![0.2, 0.5, 0.3, 0.0], vec![0.0, 0.1, 0.1, 0.6]].concat(),
        cfg,
        n,
    };
    let x = t64(&[point.len()], &point);
    let e64 = grad_check(&f, &x, 1e-6).unwrap();
    let e32 = grad_check(&f, &x.cast::<f32>(), 1e-6).unwrap();
    let took = start.elapsed();
    let ok = e64 < 1e-6 && e32 < 1e-4 && took < Duration::from_secs(30);
    verdict(
        5,
        "gradient soundness",
        ok,
        &format!("max relative error f64 {e64:.2e}, f32 {e32:.2e} over {} parameters in {took:.2?}", point.len()),
    );
}

/// Spearman correlation: Pearson correlation of tie-averaged ranks.
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

struct DefaultRun {
    train_ds: stagewise::data::Dataset,
    outcome: TrainOutcome<f32>,
    elapsed: Duration,
}

fn default_run() -> &'static DefaultRun {
    static RUN: OnceLock<DefaultRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let train_ds = gen_synthetic(10_000, 8, 32, DEFAULT_NOISE, 1).unwrap();
        let eval_ds = gen_synthetic(2_000, 8, 32, DEFAULT_NOISE, 2).unwrap();
        let cfg = TrainConfig::default();
        assert_eq!((cfg.epochs, cfg.aug.mode), (30, AugMode::Dynamic));
        let start = Instant::now();
        let outcome = train::<f32>(&cfg, &train_ds, &eval_ds).unwrap();
        DefaultRun { train_ds, outcome, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_06_training_dynamics_direction() {
    let run = default_run();
    let epochs: Vec<_> = run.outcome.log.epochs().cloned().collect();
    let t: Vec<f64> = epochs.iter().map(|r| r.epoch as f64).collect();
    let e: Vec<f64> = epochs.iter().map(|r| r.ddp_e).collect();
    let h: Vec<f64> = epochs.iter().map(|r| r.ddp_h).collect();
    let (rho_e, rho_h) = (spearman(&t, &e), spearman(&t, &h));
    let acc = epochs.last().map_or(0.0, |r| r.eval_acc);
    let ok = run.outcome.abort.is_none()
        && epochs.len() == 30
        && rho_e > 0.8
        && rho_h < -0.8
        && acc >= 0.375
        && run.elapsed <= Duration::from_secs(30 * 60);
    verdict(
        6,
        "training-dynamics direction",
        ok,
        &format!(
            "spearman(epoch, ddp_e) {rho_e:.3}, spearman(epoch, ddp_h) {rho_h:.3}, eval top-1 {acc:.4}, {:.1?}",
            run.elapsed
        ),
    );
}

#[test]
fn criterion_07_probe_signature() {
    let run = default_run();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    let ckpt = Checkpoint { params: run.outcome.params.clone(), normalizer: Some(run.outcome.normalizer.clone()) };
    write_checkpoint(&path, &ckpt).unwrap();
    let loaded = read_checkpoint::<f32>(&path).unwrap();

    let start = Instant::now();
    let norm = loaded.normalizer.unwrap();
    let r = probe_topk(&loaded.params, &run.train_ds, &norm, &[0, 1, 2, 4, 8], 0.0).unwrap();
    let took = start.elapsed();
    let monotone = r.rows.windows(2).all(|w| w[1].top1 <= w[0].top1);
    let (first, last) = (&r.rows[0], &r.rows[r.rows.len() - 1]);
    let drop_top1 = first.top1 - last.top1;
    let drop_p = first.p_k - last.p_k;
    let ok = monotone && drop_top1 > drop_p && took <= Duration::from_secs(5 * 60);
    let rows: Vec<String> = r.rows.iter().map(|row| format!("k{}={:.4}/{:.4}", row.k, row.top1, row.p_k)).collect();
    verdict(
        7,
        "probe signature",
        ok,
        &format!("top1/p_k {}; top1 drop {drop_top1:.4} vs p drop {drop_p:.4} in {took:.1?}", rows.join(" ")),
    );
}

#[test]
fn criterion_08_schedule_fidelity() {
    let b = StageBoundaries::from_fractions(30, 0.15, 0.35);
    let at = |t: f64| static_alpha(t, &b).unwrap();
    let (t1, t2, total) = (b.t1_end as f64, b.t2_end as f64, b.total as f64);
    let mut ok = at(t1) == 0.05 && at(t2) == 0.5 && at(total) == 0.8;
    let d = 1e-9;
    ok &= close(at(t1 + d), at(t1), 1e-6) && close(at(t2 + d), at(t2), 1e-6);
    let grid: Vec<f64> = (0..1000).map(|i| at(total * i as f64 / 999.0)).collect();
    ok &= grid.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        8,
        "schedule fidelity",
        ok,
        &format!("alpha({t1}) = {}, alpha({t2}) = {}, alpha({total}) = {}, monotone on 1000 points", at(t1), at(t2), at(total)),
    );
}

#[test]
fn criterion_09_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train_ds = gen_synthetic(96, 4, 8, 0.6, 11).unwrap();
    let eval_ds = gen_synthetic(48, 4, 8, 0.6, 12).unwrap();
    let cfg = TrainConfig::from_json(
        r#"{"model": {"image_size": 8, "patch_size": 2, "dim": 8, "depth": 1, "heads": 2, "n_classes": 4},
            "train.epochs": 12, "train.batch_size": 16, "optim.warmup_epochs": 1, "log.wall_time": false,
            "aug.erasing": "patch"}"#,
    )
    .unwrap();
    let a = train::<f32>(&cfg, &train_ds, &eval_ds).unwrap();
    let b = train::<f32>(&cfg, &train_ds, &eval_ds).unwrap();
    a.log.write(d.join("a.jsonl")).unwrap();
    b.log.write(d.join("b.jsonl")).unwrap();
    let logs_equal = std::fs::read(d.join("a.jsonl")).unwrap() == std::fs::read(d.join("b.jsonl")).unwrap();

    write_dataset(&train_ds, d.join("d.bin")).unwrap();
    let bytes = std::fs::read(d.join("d.bin")).unwrap();
    let dataset_ok =
        read_dataset(d.join("d.bin")).unwrap() == train_ds && encode_dataset(&decode_dataset(&bytes).unwrap()).unwrap() == bytes;

    let ckpt = Checkpoint { params: a.params.clone(), normalizer: Some(a.normalizer.clone()) };
    write_checkpoint(d.join("c.bin"), &ckpt).unwrap();
    let back: Checkpoint<f32> = read_checkpoint(d.join("c.bin")).unwrap();
    let ckpt_ok = back == ckpt && encode_checkpoint(&back).unwrap() == std::fs::read(d.join("c.bin")).unwrap();
    let wide: ModelParams<f64> = a.params.cast();
    let wide_ckpt = Checkpoint { params: wide, normalizer: None };
    write_checkpoint(d.join("w.bin"), &wide_ckpt).unwrap();
    let wide_ok = read_checkpoint::<f64>(d.join("w.bin")).unwrap() == wide_ckpt;

    let mcfg = MetricsConfig::default();
    analyze(d.join("a.jsonl"), &mcfg, d.join("out")).unwrap();
    let reread = RunLog::read(d.join("a.jsonl")).unwrap();
    let kar = kar_series(&reread.ddp_records(), &mcfg).unwrap();
    let stages = detect_stages(&kar, &mcfg).unwrap();
    let written: StageBoundaries =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/stages.json")).unwrap()).unwrap();
    let kar_file: Vec<(f64, f64)> = std::fs::read_to_string(d.join("out/kar.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (t, k) = l.split_once(',').unwrap();
            (t.parse().unwrap(), k.parse().unwrap())
        })
        .collect();
    let analyze_ok = written == stages
        && reread == a.log
        && kar_file.len() == kar.len()
        && kar_file.iter().zip(&kar).all(|(f, k)| f.0 == k.t && f.1 == k.kar);

    let ok = logs_equal && dataset_ok && ckpt_ok && wide_ok && analyze_ok;
    verdict(
        9,
        "determinism and persistence",
        ok,
        &format!(
            "identical logs {logs_equal}, dataset {dataset_ok}, checkpoint {}, analyze matches {analyze_ok}",
            ckpt_ok && wide_ok
        ),
    );
}

#[test]
fn criterion_10_patch_erasing_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_mix = 0.0f64;
    for _ in 0..100 {
        let xi = t64(&[3, 8, 8], &(0..192).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
        let xj = t64(&[3, 8, 8], &(0..192).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
        let yi = t64(&[5], &one_hot(rng.gen_range(0..5), 5));
        let yj = t64(&[5], &one_hot(rng.gen_range(0..5), 5));
        let lambda: f64 = rng.gen();
        let mu = rng.gen_range(0.05..=1.0);
        let (xm, ym) = mixup(&xi, &yi, &xj, &yj, lambda).unwrap();
        let (xp, yp, _) = patch_erasing_mix(&xi, &yi, &xj, &yj, lambda, 0.0, 0.0, mu, 2, 0.0, &mut rng).unwrap();
        for (a, b) in xm.data().iter().chain(ym.data()).zip(xp.data().iter().chain(yp.data())) {
            worst_mix = worst_mix.max((a - b).abs());
        }
    }

    let mut worst_mass = 0.0f64;
    let xi = t64(&[3, 4, 4], &[0.5; 48]);
    let xj = t64(&[3, 4, 4], &[-0.5; 48]);
    for _ in 0..1000 {
        let lambda: f64 = rng.gen();
        let mu = rng.gen_range(0.01..=1.0);
        let (gi, gj) = (rng.gen_range(0.0..=mu), rng.gen_range(0.0..=mu));
        let yi = t64(&[3], &one_hot(rng.gen_range(0..3), 3));
        let yj = t64(&[3], &one_hot(rng.gen_range(0..3), 3));
        let (_, y, _) = patch_erasing_mix(&xi, &yi, &xj, &yj, lambda, gi, gj, mu, 2, 0.0, &mut rng).unwrap();
        let mass: f64 = y.data().iter().sum();
        worst_mass = worst_mass.max((mass - (1.0 - (lambda * gi + (1.0 - lambda) * gj) / mu)).abs());
    }
    let ok = worst_mix <= 1e-12 && worst_mass <= 1e-12;
    verdict(
        10,
        "patch-erasing reduction",
        ok,
        &format!("max |erasing - mixup| {worst_mix:.2e} over 100 pairs, max label-mass error {worst_mass:.2e} over 1000 draws"),
    );
}
