//! Acceptance checks, one line per criterion.
//!
//! Runs with its own harness so every criterion reports even when an earlier
//! one fails; the process exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use histofuse::classify::gbm::train_gbm_with_history;
use histofuse::classify::mlp::Mlp;
use histofuse::classify::{self, GbmParams, Hyperparams, MlpParams, ModelKind};
use histofuse::deepfeat::fixture::{write_fixture_model, FixtureSpec, FIXTURE_DIM};
use histofuse::deepfeat::read_feature_store;
use histofuse::hog::{hog, hog_dim};
use histofuse::matrix::Matrix;
use histofuse::metrics::{accuracy, auc, roc_points, trapezoid};
use histofuse::noise::{inject_noise, measured_snr, NoiseConfig};
use histofuse::pipeline::{
    features_stage, ingest_stage, run_experiment, split_stage, toy::write_toy_corpus, toy_config, ExperimentConfig,
    Part, RunDir,
};
use histofuse::tune::{optimize, TuneConfig};
use histofuse::{FeatureKind, HogConfig, ImageTensor};

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize, ch: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, ch, |_, _, _| r.random::<f64>()).unwrap()
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
    }
}

// ------------------------------------------------------------------------ SNR

fn snr_exactness() -> Outcome {
    let t = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (h, w) = (r.random_range(8..80), r.random_range(8..80));
        let ch = if i % 4 == 0 { 1 } else { 3 };
        let img = random_image(&mut r, h, w, ch);
        for db in [40.0, 35.0, 30.0] {
            let noisy = inject_noise(&img, &NoiseConfig::new(db, r.random())).map_err(|e| e.to_string())?;
            let got = measured_snr(&img, &noisy).map_err(|e| e.to_string())?;
            worst = worst.max((got - db).abs());
        }
    }
    within(t.elapsed(), 5.0)?;
    if worst <= 1e-6 {
        Ok(format!("max |error| {worst:.2e} dB"))
    } else {
        Err(format!("max |error| {worst:.2e} dB"))
    }
}

// ------------------------------------------------------------------------ HOG

/// Straightforward HOG written from the definition.
fn reference_hog(img: &ImageTensor, cell: usize, bins: usize, block: usize, clip: f64) -> Vec<f64> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let at = |r: isize, c: isize, k: usize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        img.get(r, c, k)
    };
    let (ny, nx) = (h / cell, w / cell);
    let mut hist = vec![vec![vec![0.0f64; bins]; nx]; ny];
    let width = 180.0 / bins as f64;
    for r in 0..ny * cell {
        for c in 0..nx * cell {
            let (ri, ci) = (r as isize, c as isize);
            let mut g = (0.0, 0.0);
            let mut best = -1.0;
            for k in 0..ch {
                let gx = at(ri, ci + 1, k) - at(ri, ci - 1, k);
                let gy = at(ri + 1, ci, k) - at(ri - 1, ci, k);
                if gx * gx + gy * gy > best {
                    best = gx * gx + gy * gy;
                    g = (gx, gy);
                }
            }
            let m = (g.0 * g.0 + g.1 * g.1).sqrt();
            if m == 0.0 {
                continue;
            }
            let mut deg = g.1.atan2(g.0) * 180.0 / PI;
            while deg < 0.0 {
                deg += 180.0;
            }
            while deg >= 180.0 {
                deg -= 180.0;
            }
            // bin centres at (b + 0.5)·width, wrapping around
            let x = deg / width - 0.5;
            let b0 = x.floor();
            let f = x - b0;
            let lo = ((b0 as i64 % bins as i64 + bins as i64) % bins as i64) as usize;
            let hi = (lo + 1) % bins;
            hist[r / cell][c / cell][lo] += m * (1.0 - f);
            hist[r / cell][c / cell][hi] += m * f;
        }
    }
    let mut out = Vec::new();
    for by in 0..=(ny - block) {
        for bx in 0..=(nx - block) {
            let mut v: Vec<f64> = Vec::new();
            for cy in 0..block {
                for cx in 0..block {
                    v.extend(&hist[by + cy][bx + cx]);
                }
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|a| *a = (*a / n).min(clip));
                let n2 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter_mut().for_each(|a| *a /= n2);
            }
            out.extend(v);
        }
    }
    out
}

fn hog_oracle() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (h, w) = (r.random_range(128..=320), r.random_range(128..=320));
        let cell = r.random_range(32..=128usize).min(h.min(w));
        let ch = if i % 5 == 0 { 1 } else { 3 };
        let block = if h / cell >= 2 && w / cell >= 2 { 2 } else { 1 };
        let cfg = HogConfig {
            cell_size: cell,
            block_size: block,
            ..HogConfig::default()
        };
        let img = random_image(&mut r, h, w, ch);
        let got = hog(&img, &cfg).map_err(|e| e.to_string())?;
        let want = reference_hog(&img, cell, 9, block, cfg.clip);
        let formula = (h / cell - block + 1) * (w / cell - block + 1) * block * block * 9;
        let dim = hog_dim(&cfg, h, w).map_err(|e| e.to_string())?;
        if got.values.len() != want.len() || dim != formula || dim != want.len() {
            return Err(format!("{h}x{w} cell {cell}: dims {} / {dim} / {formula}", got.values.len()));
        }
        for (a, b) in got.values.iter().zip(&want) {
            worst = worst.max((f64::from(*a) - b).abs());
        }
    }
    let d299 = hog_dim(&HogConfig::default(), 299, 299).map_err(|e| e.to_string())?;
    if d299 != 36 {
        return Err(format!("299x299 default dim {d299}, expected 36"));
    }
    if worst <= 1e-5 {
        Ok(format!("max |diff| {worst:.2e}, 299px dim 36"))
    } else {
        Err(format!("max |diff| {worst:.2e}"))
    }
}

// ------------------------------------------------------------------------ AUC

fn auc_oracle() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(2..=200);
        // coarse grid of values so ties are common
        let levels = r.random_range(2..30);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        pos[0] = true;
        pos[1] = false;
        let (mut twice_u, mut np, mut nn) = (0u64, 0u64, 0u64);
        for i in 0..n {
            if pos[i] {
                np += 1;
            } else {
                nn += 1;
            }
        }
        for i in (0..n).filter(|&i| pos[i]) {
            for j in (0..n).filter(|&j| !pos[j]) {
                twice_u += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
        let brute = twice_u as f64 / (2 * np * nn) as f64;
        let a = auc(&scores, &pos).map_err(|e| e.to_string())?;
        if a != brute {
            return Err(format!("auc {a} vs pairwise {brute} (n {n})"));
        }
        let trap = trapezoid(&roc_points(&scores, &pos).map_err(|e| e.to_string())?);
        worst = worst.max((trap - a).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("exact on 200 sets, trapezoid within {worst:.1e}"))
    } else {
        Err(format!("trapezoid off by {worst:.2e}"))
    }
}

// ------------------------------------------------------------------------ MLP

fn mlp_gradients() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for cfg in 0..20 {
        let d = r.random_range(2..6);
        let k = r.random_range(2..5);
        let depth = r.random_range(1..=3);
        let mut sizes = vec![d];
        sizes.extend((0..depth).map(|_| r.random_range(2..7)));
        sizes.push(k);
        let mut net = Mlp::init(sizes, cfg);
        // random biases too: zero biases put dead units exactly on the ReLU
        // kink, where central differences are meaningless
        for p in net.params.iter_mut() {
            *p = StandardNormal.sample(&mut r);
        }
        let n = r.random_range(3..9);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect());
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let rows: Vec<usize> = (0..n).collect();
        let (_, grad) = net.loss_and_gradient(&x, &y, &rows);
        let h = 1e-5;
        for p in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[p] += h;
            let mut minus = net.clone();
            minus.params[p] -= h;
            let fd = (plus.loss_and_gradient(&x, &y, &rows).0 - minus.loss_and_gradient(&x, &y, &rows).0) / (2.0 * h);
            let rel = (fd - grad[p]).abs() / fd.abs().max(grad[p].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    if worst < 1e-4 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

// ------------------------------------------------------------------ blobs data

/// `k` unit-variance 2-D Gaussian blobs, neighbouring centres `sep` apart.
fn blobs(k: usize, n: usize, sep: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut r = rng(seed);
    let radius = sep / (2.0 * (PI / k as f64).sin());
    let mut data = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let t = 2.0 * PI * c as f64 / k as f64;
        let (a, b): (f64, f64) = (StandardNormal.sample(&mut r), StandardNormal.sample(&mut r));
        data.extend([radius * t.cos() + a, radius * t.sin() + b]);
        y.push(c);
    }
    (Matrix::from_vec(n, 2, data), y)
}

fn gbm_descent() -> Outcome {
    let (x, y) = blobs(3, 300, 6.0, 5);
    let hp = GbmParams {
        rounds: 100,
        subsample: 1.0,
        ..GbmParams::default()
    };
    let (_, losses) = train_gbm_with_history(&x, &y, 3, &hp, 0).map_err(|e| e.to_string())?;
    if losses.len() != 101 {
        return Err(format!("{} losses recorded", losses.len()));
    }
    match losses.windows(2).position(|w| w[1] > w[0]) {
        None => Ok(format!("log-loss {:.4} -> {:.4}", losses[0], losses[100])),
        Some(i) => Err(format!("loss rose at round {}: {} -> {}", i + 1, losses[i], losses[i + 1])),
    }
}

fn sanity_hyperparams(kind: ModelKind) -> Hyperparams {
    match kind {
        // the default initial rate is tuned for large inputs; a couple of
        // hundred SGD steps on 2-D blobs need a larger one
        ModelKind::Mlp => Hyperparams::Mlp(MlpParams {
            learning_rate: 1e-2,
            ..MlpParams::default()
        }),
        other => other.default_hyperparams(),
    }
}

fn classifier_sanity() -> Outcome {
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut failed = false;
    for kind in ModelKind::ALL {
        let mut total = 0.0;
        for seed in 0..5u64 {
            let (x, y) = blobs(3, 450, 6.0, 100 + seed);
            let idx_train: Vec<usize> = (0..300).collect();
            let idx_test: Vec<usize> = (300..450).collect();
            let (xt, xs) = (x.select_rows(&idx_train), x.select_rows(&idx_test));
            let m = classify::train(&sanity_hyperparams(kind), &xt, &y[..300], 3, seed).map_err(|e| e.to_string())?;
            total += accuracy(&m.predict(&xs).map_err(|e| e.to_string())?, &y[300..]).map_err(|e| e.to_string())?;
        }
        let mean = total / 5.0;
        failed |= mean < 0.99;
        lines.push(format!("{kind} {:.2}%", mean * 100.0));
    }
    within(t.elapsed(), 60.0)?;
    let msg = lines.join(", ");
    if failed {
        Err(msg)
    } else {
        Ok(msg)
    }
}

// ------------------------------------------------------------------------- BO

fn branin(u: &[f64]) -> f64 {
    let x1 = -5.0 + 15.0 * u[0];
    let x2 = 15.0 * u[1];
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bo_efficacy() -> Outcome {
    let t = Instant::now();
    let mut bo = Vec::new();
    let mut random = Vec::new();
    for seed in 0..20u64 {
        let cfg = TuneConfig {
            budget: 30,
            seed,
            ..TuneConfig::default()
        };
        let hist = optimize(2, &cfg, |p| Ok((-branin(p), None))).map_err(|e| e.to_string())?;
        let curve = hist.incumbent_curve();
        if curve.windows(2).any(|w| w[1] < w[0]) {
            return Err(format!("incumbent trace decreases for seed {seed}"));
        }
        bo.push(*curve.last().unwrap());
        let mut r = rng(seed);
        random.push((0..30).map(|_| -branin(&[r.random(), r.random()])).fold(f64::NEG_INFINITY, f64::max));
    }
    within(t.elapsed(), 60.0)?;
    let (b, r) = (median(bo), median(random));
    let msg = format!("median best -branin: BO {b:.4}, random {r:.4}");
    if b > r {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ------------------------------------------------------------------ toy corpus

fn toy_setup(root: &Path, seed: u64) -> Result<ExperimentConfig, String> {
    write_toy_corpus(&root.join("data"), 40, 256, seed).map_err(|e| e.to_string())?;
    write_fixture_model(&root.join("fixture.onnx"), &FixtureSpec::default()).map_err(|e| e.to_string())?;
    Ok(toy_config(&root.join("data"), &root.join("fixture.onnx"), &root.join("out")))
}

fn end_to_end_determinism() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = toy_setup(dir.path(), 11)?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        cfg.output = dir.path().join(run);
        run_experiment(&cfg).map_err(|e| e.to_string())?;
        let rd = RunDir::new(&cfg.output);
        let read = |p: &Path| fs::read(p).map_err(|e| e.to_string());
        outputs.push((read(&rd.report())?, read(&rd.sweep())?));
    }
    within(t.elapsed(), 120.0)?;
    if outputs[0] != outputs[1] {
        return Err("report.csv or sweep.csv differ between runs".into());
    }
    Ok(format!(
        "report.csv {} bytes and sweep.csv {} bytes identical",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn table3_shape() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = toy_setup(dir.path(), 21)?;
    let kinds = [FeatureKind::Deep, FeatureKind::Fused];
    let mut wins = vec![vec![0usize; ModelKind::ALL.len()]; kinds.len()];
    for rep in 0..5u64 {
        let mut cfg = base.clone();
        cfg.reseed(rep);
        cfg.snr.levels = vec![40.0, 30.0];
        cfg.output = dir.path().join(format!("rep{rep}"));
        let s = run_experiment(&cfg).map_err(|e| e.to_string())?;
        for (ki, kind) in kinds.iter().enumerate() {
            for (mi, model) in ModelKind::ALL.iter().enumerate() {
                let acc = |db: f64| {
                    s.sweep
                        .iter()
                        .find(|r| r.method == kind.name() && r.model == model.name() && r.snr_db == db)
                        .map(|r| r.accuracy)
                        .ok_or_else(|| format!("no sweep row for {kind}/{model} at {db} dB"))
                };
                if acc(40.0)? >= acc(30.0)? {
                    wins[ki][mi] += 1;
                }
            }
        }
    }
    let mut worst = 5;
    let mut where_ = String::new();
    for (ki, kind) in kinds.iter().enumerate() {
        for (mi, model) in ModelKind::ALL.iter().enumerate() {
            if wins[ki][mi] < worst {
                worst = wins[ki][mi];
                where_ = format!("{kind}/{model}");
            }
        }
    }
    let msg = format!("fewest 40 dB ≥ 30 dB repetitions: {worst}/5 {where_}");
    if worst >= 4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn fusion_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = toy_setup(dir.path(), 31)?;
    let rd = RunDir::new(&cfg.output);
    fs::create_dir_all(rd.root()).map_err(|e| e.to_string())?;
    ingest_stage(&cfg, &rd).map_err(|e| e.to_string())?;
    split_stage(&cfg, &rd).map_err(|e| e.to_string())?;
    features_stage(&cfg, &rd, &[FeatureKind::Hog, FeatureKind::Deep, FeatureKind::Fused]).map_err(|e| e.to_string())?;
    let mut rows = 0;
    for part in Part::ALL {
        let load = |k| read_feature_store(&rd.features(k, part)).map_err(|e| e.to_string());
        let (h, d, f) = (load(FeatureKind::Hog)?, load(FeatureKind::Deep)?, load(FeatureKind::Fused)?);
        if h.dim() != 36 || f.dim() != 36 + FIXTURE_DIM {
            return Err(format!("dims hog {} fused {}", h.dim(), f.dim()));
        }
        for i in 0..f.rows() {
            let (a, b) = f.row(i).split_at(36);
            if a != h.row(i) || b != d.row(i) || f.sample_ids()[i] != h.sample_ids()[i] {
                return Err(format!("row {i} of {} does not match its sub-blocks", part.name()));
            }
        }
        rows += f.rows();
    }
    Ok(format!("{rows} rows, fused dim {} = 36 + {FIXTURE_DIM}", 36 + FIXTURE_DIM))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("snr-exactness", snr_exactness),
        ("hog-oracle", hog_oracle),
        ("auc-oracle", auc_oracle),
        ("mlp-gradients", mlp_gradients),
        ("gbm-descent", gbm_descent),
        ("classifier-sanity", classifier_sanity),
        ("bo-efficacy", bo_efficacy),
        ("end-to-end-determinism", end_to_end_determinism),
        ("snr-degradation-shape", table3_shape),
        ("fusion-contract", fusion_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name} ({secs:.1}s): {msg}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
