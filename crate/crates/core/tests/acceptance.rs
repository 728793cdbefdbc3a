//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The benchmark criteria train a narrow network ([16, 32, 32] filters) with
//! a 30-epoch cap so the whole gate fits a single CPU core.

mod common;

use bitcover::bitstream::{
    extract_frames_annexb, extract_frames_mp4, unescape_rbsp, BitReader, Mp4SizeMode,
};
use bitcover::datagen::standard_benchmark;
use bitcover::dtw::{dtw_distance, knn_classify_all, DtwConfig};
use bitcover::eval::{confusion, metrics, realtime_factor, Metrics};
use bitcover::nn::{
    cross_entropy, evaluate_loss, train, Model, ModelConfig, Samples, Tensor3, TrainConfig,
};
use bitcover::series::{split, Normalization, PreprocessSpec};
use bitcover::stats::{class_kld_matrix, median, DEFAULT_BINS};
use bitcover::LabeledDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

// Pinned tolerances and budgets.
const PARSER_BUDGET: Duration = Duration::from_secs(1);
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_REL_FLOOR: f64 = 1e-6;
const GRAD_STEP: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const MEMO_LOSS: f64 = 0.01;
const MEMO_EPOCHS: usize = 200;
const MEMO_BUDGET: Duration = Duration::from_secs(300);
const DTW_TRIALS: usize = 1000;
const BENCH_MIN: f64 = 0.90;
const BENCH_BUDGET: Duration = Duration::from_secs(30 * 60);
const KLD_RATIO: f64 = 10.0;
const KLD_BUDGET: Duration = Duration::from_secs(60);
const SPEED_RATIO: f64 = 100.0;
const RTF_TOL: f64 = 1.0;
const SCALE_FACTOR: f64 = 0.53;
const SCALE_MAX_DROP: f64 = 0.05;

const SEED: u64 = 42;
const CLIPS: usize = 100;
const FRAMES: usize = 1200;
const LONG_FRAMES: usize = 3000;
const SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);
const SPLIT_SEED: u64 = 7;
const FILTERS: [usize; 3] = [16, 32, 32];
const EPOCH_CAP: usize = 30;
const SWEEP: [usize; 4] = [120, 240, 480, 1200];
const SHORT: usize = 30;
const TIMED_QUERIES: usize = 2;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn names(c: usize) -> Vec<String> {
    (0..c).map(|k| format!("class{k}")).collect()
}

fn parser_conservation() -> Verdict {
    let t = Instant::now();
    let inspected = common::inspector();
    let mut bad = Vec::new();
    let mut frames = 0;
    for (name, codec) in common::ANNEXB_FIXTURES {
        let data = common::read_fixture(name);
        let s = extract_frames_annexb(&data, codec).unwrap();
        if s.total_bits() != 8 * data.len() as u64 || s.len() != inspected[name].packets.len() {
            bad.push(name);
        }
        frames += s.len();
    }
    for name in ["avc_ipp.mp4", "avc_bframes_frag.mp4"] {
        let data = common::read_fixture(name);
        let s = extract_frames_mp4(&data, Mp4SizeMode::WithOverhead).unwrap();
        if s.total_bits() != 8 * data.len() as u64 || s.len() != inspected[name].packets.len() {
            bad.push(name);
        }
        frames += s.len();
    }
    let dt = t.elapsed();
    verdict(
        bad.is_empty() && dt < PARSER_BUDGET,
        format!("5 encodes, {frames} frames, mismatches {bad:?}, {} (budget {})", secs(dt), secs(PARSER_BUDGET)),
    )
}

fn put_ue(bits: &mut Vec<bool>, v: u64) {
    let code = v + 1;
    let len = 64 - code.leading_zeros();
    bits.extend(std::iter::repeat(false).take(len as usize - 1));
    bits.extend((0..len).rev().map(|i| (code >> i) & 1 == 1));
}

/// Reference emulation-prevention escaper.
fn escape(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() * 3 / 2);
    let mut zeros = 0;
    for &b in raw {
        if zeros >= 2 && b <= 3 {
            out.push(3);
            zeros = 0;
        }
        zeros = if b == 0 { zeros + 1 } else { 0 };
        out.push(b);
    }
    out
}

fn golomb_and_rbsp() -> Verdict {
    let max = 1u64 << 16;
    let mut bits = Vec::new();
    for v in 0..max {
        put_ue(&mut bits, v);
    }
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i))))
        .collect();
    let mut r = BitReader::new(&bytes);
    let ue_bad = (0..max).filter(|&v| r.read_ue().ok() != Some(v)).count();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rbsp_bad = 0;
    for _ in 0..10_000 {
        let len = rng.gen_range(0..256);
        let raw: Vec<u8> = (0..len)
            .map(|_| match rng.gen_range(0..4) {
                0 | 1 => 0,
                2 => rng.gen_range(0..4),
                _ => rng.gen(),
            })
            .collect();
        if unescape_rbsp(&escape(&raw)) != raw {
            rbsp_bad += 1;
        }
    }
    verdict(
        ue_bad == 0 && rbsp_bad == 0,
        format!("read_ue mismatches {ue_bad}/{max}, unescape mismatches {rbsp_bad}/10000"),
    )
}

fn gradient_check() -> Verdict {
    let t = Instant::now();
    let mut model = Model::<f64>::new(ModelConfig::with_filters([4, 8, 8], 3), names(3), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for b in &mut model.blocks {
        for v in b.bn1.gamma.iter_mut().chain(&mut b.bn2.gamma).chain(&mut b.bn3.gamma) {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in b.bn1.beta.iter_mut().chain(&mut b.bn2.beta).chain(&mut b.bn3.beta) {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    let x = Tensor3::from_vec([2, 1, 16], (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let y = [0usize, 2];
    let loss = |m: &Model<f64>| {
        let cache = m.forward_train(&x).unwrap();
        cross_entropy(&cache.probs, &y, 3).unwrap()
    };
    let cache = model.forward_train(&x).unwrap();
    let grad = model.backward(&cache, &y).unwrap();
    let analytic: Vec<Vec<f64>> = grad.params().iter().map(|p| p.to_vec()).collect();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (k, g) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let mut plus = model.clone();
            plus.params_mut()[k][i] += GRAD_STEP;
            let mut minus = model.clone();
            minus.params_mut()[k][i] -= GRAD_STEP;
            let n = (loss(&plus) - loss(&minus)) / (2.0 * GRAD_STEP);
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(GRAD_REL_FLOOR));
            count += 1;
        }
    }
    let dt = t.elapsed();
    verdict(
        worst < GRAD_REL_TOL && dt < GRAD_BUDGET,
        format!("{count} params, worst rel err {worst:.2e} (tol {GRAD_REL_TOL:e}), {}", secs(dt)),
    )
}

fn toy_set(n: usize, len: usize, classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (xs, (0..n).map(|i| i % classes).collect())
}

fn memorization() -> Verdict {
    let t = Instant::now();
    let (xs, ys) = toy_set(10, 32, 2, 3);
    let data = Samples::new(&xs, &ys);
    let model = Model::<f32>::new(ModelConfig::with_filters([4, 8, 8], 2), names(2), 1).unwrap();
    let cfg = TrainConfig {
        init_lr: 1e-2,
        max_epochs: MEMO_EPOCHS,
        seed: 2,
        ..Default::default()
    };
    let out = train(model, data, data, &cfg).unwrap();
    let (loss, acc) = evaluate_loss(&out.model, data, 16).unwrap();
    let dt = t.elapsed();
    verdict(
        acc == 1.0 && loss < MEMO_LOSS && dt < MEMO_BUDGET,
        format!("train acc {acc:.3}, loss {loss:.2e} (< {MEMO_LOSS}), {} epochs, {}", out.history.epochs.len(), secs(dt)),
    )
}

fn scheduler() -> Verdict {
    let run = || {
        let (xs, ys) = toy_set(8, 16, 2, 4);
        let mut mcfg = ModelConfig::with_filters([2, 2, 2], 2);
        mcfg.bn_momentum = 0.0;
        let model = Model::<f64>::new(mcfg, names(2), 1).unwrap();
        let cfg = TrainConfig {
            init_lr: 1e-12,
            ..Default::default()
        };
        train(model, Samples::new(&xs, &ys), Samples::new(&xs, &ys), &cfg).unwrap().history
    };
    let (h, again) = (run(), run());
    let lr = h.lr();
    let halved = lr[40] == 1e-12 && lr[41] == 0.5e-12 && lr[80] == 0.5e-12;
    verdict(
        h.lr_reductions == [40, 80] && h.stopped_at == Some(80) && halved && h == again,
        format!(
            "reductions {:?}, stopped at {:?}, lr 1e-12 -> {:e} after epoch 40, deterministic {}",
            h.lr_reductions,
            h.stopped_at,
            lr[41],
            h == again
        ),
    )
}

fn brute_force_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn dtw_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = DtwConfig::default();
    let (mut mismatch, mut nonzero, mut asym) = (0, 0, 0);
    for _ in 0..DTW_TRIALS {
        let a: Vec<f64> = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let d = dtw_distance(&a, &b, cfg).unwrap();
        mismatch += usize::from(d != brute_force_dtw(&a, &b));
        nonzero += usize::from(dtw_distance(&a, &a, cfg).unwrap() != 0.0);
        asym += usize::from(d != dtw_distance(&b, &a, cfg).unwrap());
    }
    verdict(
        mismatch + nonzero + asym == 0,
        format!("{DTW_TRIALS} trials: enumeration mismatches {mismatch}, dtw(a,a)!=0 {nonzero}, asymmetric {asym}"),
    )
}

/// Windowed arrays for one split.
struct Arrays {
    xs: Vec<Vec<f64>>,
    ys: Vec<usize>,
}

fn arrays(ds: &LabeledDataset, n: usize, norm: Normalization) -> Arrays {
    let (xs, ys) = PreprocessSpec::prefix(n, norm).apply_all(ds).unwrap();
    Arrays { xs, ys }
}

struct Fit {
    model: Model<f32>,
    metrics: Metrics,
    elapsed: Duration,
}

fn fit(parts: &(LabeledDataset, LabeledDataset, LabeledDataset), n: usize, norm: Normalization) -> Fit {
    let t = Instant::now();
    let (tr, va, te) = (arrays(&parts.0, n, norm), arrays(&parts.1, n, norm), arrays(&parts.2, n, norm));
    let c = parts.0.num_classes();
    let model = Model::<f32>::new(ModelConfig::with_filters(FILTERS, c), parts.0.class_names.clone(), 1).unwrap();
    let cfg = TrainConfig {
        max_epochs: EPOCH_CAP,
        seed: 3,
        ..Default::default()
    };
    let out = train(model, Samples::new(&tr.xs, &tr.ys), Samples::new(&va.xs, &va.ys), &cfg).unwrap();
    let metrics = score(&out.model, &te);
    Fit {
        model: out.model,
        metrics,
        elapsed: t.elapsed(),
    }
}

fn score(model: &Model<f32>, data: &Arrays) -> Metrics {
    let pred = model.classify(&data.xs, 64).unwrap();
    metrics(&confusion(&data.ys, &pred, model.n_classes()).unwrap()).unwrap()
}

struct Benchmark {
    parts: (LabeledDataset, LabeledDataset, LabeledDataset),
    long_parts: (LabeledDataset, LabeledDataset, LabeledDataset),
    full: LabeledDataset,
    sweep: Vec<(usize, Fit)>,
}

fn benchmark() -> Benchmark {
    let full = standard_benchmark(11, CLIPS, FRAMES, SEED).unwrap();
    let long = standard_benchmark(11, CLIPS, LONG_FRAMES, SEED).unwrap();
    Benchmark {
        parts: split(&full, SPLIT, SPLIT_SEED).unwrap(),
        long_parts: split(&long, SPLIT, SPLIT_SEED).unwrap(),
        full,
        sweep: Vec::new(),
    }
}

fn end_to_end(b: &mut Benchmark) -> Verdict {
    let mut medians = Vec::new();
    let mut overall = Vec::new();
    let mut lines = Vec::new();
    for n in SWEEP {
        let f = fit(&b.parts, n, Normalization::ZScore);
        let med = median(&f.metrics.recall);
        lines.push(format!("N={n}: acc {:.3} median class acc {med:.3} ({})", f.metrics.accuracy, secs(f.elapsed)));
        medians.push(med);
        overall.push(f.metrics.accuracy);
        b.sweep.push((n, f));
    }
    let main = &b.sweep.last().unwrap().1;
    let m = &main.metrics;
    let headline = m.accuracy >= BENCH_MIN && m.macro_precision >= BENCH_MIN && m.macro_recall >= BENCH_MIN;
    // Median per-class accuracy saturates quickly, so overall accuracy has
    // to rise too.
    let rising = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
    let monotone = rising(&medians) && rising(&overall);
    verdict(
        headline && monotone && main.elapsed < BENCH_BUDGET,
        format!(
            "N={FRAMES}: acc {:.3} macro-P {:.3} macro-R {:.3} (>= {BENCH_MIN}), {} (budget {}); sweep non-decreasing {monotone} [{}]",
            m.accuracy,
            m.macro_precision,
            m.macro_recall,
            secs(main.elapsed),
            secs(BENCH_BUDGET),
            lines.join("; ")
        ),
    )
}

fn kld_structure(b: &Benchmark) -> Verdict {
    let t = Instant::now();
    let m = class_kld_matrix(&b.full, DEFAULT_BINS, SEED).unwrap();
    let (inter, intra) = (m.median_inter(), m.median_intra());
    let dt = t.elapsed();
    verdict(
        inter >= KLD_RATIO * intra && dt < KLD_BUDGET,
        format!("median inter {inter:.4}, median intra {intra:.2e}, ratio {:.0} (>= {KLD_RATIO}), {}", inter / intra, secs(dt)),
    )
}

fn baseline(b: &Benchmark) -> Verdict {
    let cfg = DtwConfig::default();
    let short = fit(&b.parts, SHORT, Normalization::ZScore);
    let (tr, te) = (arrays(&b.parts.0, SHORT, Normalization::ZScore), arrays(&b.parts.2, SHORT, Normalization::ZScore));
    let pred = knn_classify_all(&tr.xs, &tr.ys, &te.xs, 1, cfg).unwrap();
    let dtw_acc = metrics(&confusion(&te.ys, &pred, 11).unwrap()).unwrap().accuracy;

    // Same queries, same task, full 3000-frame series.
    let ltr = arrays(&b.long_parts.0, LONG_FRAMES, Normalization::ZScore);
    let lte = arrays(&b.long_parts.2, LONG_FRAMES, Normalization::ZScore);
    let queries = &lte.xs[..TIMED_QUERIES];
    let t = Instant::now();
    let dtw_pred = knn_classify_all(&ltr.xs, &ltr.ys, queries, 1, cfg).unwrap();
    let dtw_time = t.elapsed().as_secs_f64();
    let mut nn_times: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            short.model.classify(queries, 64).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    nn_times.sort_by(f64::total_cmp);
    let nn_time = nn_times[2];
    let ratio = dtw_time / nn_time;
    verdict(
        dtw_acc < short.metrics.accuracy && ratio >= SPEED_RATIO,
        format!(
            "{SHORT} frames: DTW acc {dtw_acc:.3} < ResNet acc {:.3}; N={LONG_FRAMES}, {TIMED_QUERIES} queries vs {} references: DTW {dtw_time:.2}s, ResNet {:.2e}s, ratio {ratio:.0} (>= {SPEED_RATIO}; published 7.5e7 not asserted); DTW labels {dtw_pred:?}",
            short.metrics.accuracy,
            ltr.xs.len(),
            nn_time
        ),
    )
}

fn realtime() -> Verdict {
    let rtf = realtime_factor(1818, 3000, 30.0, 13.0);
    let want = 1818.0 * 3000.0 / 30.0 / 13.0;
    verdict(
        (rtf - want).abs() <= RTF_TOL && (rtf - 13_985.0).abs() <= RTF_TOL,
        format!("realtime_factor(1818, 3000, 30, 13) = {rtf:.3} (13985 +- {RTF_TOL}); a 13 s upper bound puts the published ~15000 in range"),
    )
}

fn cross_scale(b: &Benchmark) -> Verdict {
    let n = SWEEP[1];
    let z = &b.sweep.iter().find(|(m, _)| *m == n).unwrap().1;
    let scaled_test = b.parts.2.scaled(SCALE_FACTOR);
    let z_scaled = score(&z.model, &arrays(&scaled_test, n, Normalization::ZScore)).accuracy;
    let z_drop = z.metrics.accuracy - z_scaled;

    let raw = fit(&b.parts, n, Normalization::None);
    let raw_scaled = score(&raw.model, &arrays(&scaled_test, n, Normalization::None)).accuracy;
    verdict(
        z_drop <= SCALE_MAX_DROP,
        format!(
            "N={n}, sizes x{SCALE_FACTOR}: z-norm acc {:.3} -> {z_scaled:.3} (drop {:.1} pts, max {:.0}); no norm acc {:.3} -> {raw_scaled:.3} (drop {:.1} pts, reported only)",
            z.metrics.accuracy,
            100.0 * z_drop,
            100.0 * SCALE_MAX_DROP,
            raw.metrics.accuracy,
            100.0 * (raw.metrics.accuracy - raw_scaled)
        ),
    )
}

fn run(id: usize, title: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("{tag} [{id:>2}] {title}: {} [{}]", v.detail, secs(t.elapsed()));
    v.pass
}

fn main() {
    let mut ok = true;
    ok &= run(1, "parser conservation", parser_conservation);
    ok &= run(2, "exp-golomb and rbsp oracles", golomb_and_rbsp);
    ok &= run(3, "gradient check", gradient_check);
    ok &= run(4, "memorization", memorization);
    ok &= run(5, "plateau scheduler", scheduler);
    ok &= run(6, "dtw oracle", dtw_oracle);
    let mut bench = benchmark();
    ok &= run(7, "synthetic benchmark", || end_to_end(&mut bench));
    ok &= run(8, "kld structure", || kld_structure(&bench));
    ok &= run(9, "dtw baseline", || baseline(&bench));
    ok &= run(10, "real-time factor", realtime);
    ok &= run(11, "cross-scale robustness", || cross_scale(&bench));
    if !ok {
        std::process::exit(1);
    }
}
