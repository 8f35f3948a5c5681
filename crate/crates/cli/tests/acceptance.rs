//! The ten acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always reach the console.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use temporal_relevance::atr::{block_sum, frame_atr, pearson, slowfast_merge, topk_overlap};
use temporal_relevance::fixtures::{pattern_detector, per_frame_2d, standard_fixtures, temporal_diff_net, tiny_i3d, Fixture};
use temporal_relevance::lrp::{clrp_backward_with, lrp_backward, ContrastSeed};
use temporal_relevance::partial::{plain_accuracy, sliding_eval, window_curve, FillMode, PartialSamplingConfig};
use temporal_relevance::synth::{generate, Generator, Labeling, SyntheticSpec};
use temporal_relevance::{relevance_matrix, video_atr, ClipTensor, Error, ModelGraph, Mode, PropagationRuleSet, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn random_clip(model: &ModelGraph, seed: u64) -> ClipTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [model.expected_frames, model.input.channels, model.input.height, model.input.width];
    let t = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..=1.0));
    ClipTensor::new(t, format!("clip_{seed:04}"), None).unwrap()
}

fn model(f: &Fixture) -> ModelGraph {
    f.model().unwrap()
}

fn rules() -> PropagationRuleSet {
    PropagationRuleSet::default()
}

fn conservation() -> Outcome {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let fixtures = standard_fixtures();
    let mut worst = 0.0f64;
    let mut rows = 0;
    pool.install(|| {
        for f in &fixtures {
            ensure(!f.blobs.keys().any(|k| k.ends_with(".bias.twgt")), || format!("{} has biases", f.name()))?;
            let m = model(f);
            for seed in 0..50 {
                let clip = random_clip(&m, seed);
                for class in 0..m.num_classes {
                    let r = relevance_matrix(&m, &clip, class, Mode::Lrp, &rules()).map_err(|e| e.to_string())?;
                    for (i, row) in r.a.iter().enumerate() {
                        let (sum, l) = (row.iter().sum::<f64>(), r.logits[i]);
                        let tol = 1e-4f64.max(1e-3 * l.abs());
                        worst = worst.max((sum - l).abs() / tol);
                        rows += 1;
                        ensure((sum - l).abs() <= tol, || {
                            format!("{} seed {seed} class {class} frame {i}: sum {sum} vs logit {l}", f.name())
                        })?;
                    }
                }
            }
        }
        Ok::<_, String>(())
    })?;
    within(start.elapsed(), 30)?;
    Ok(format!("{} models, {rows} rows, worst error {:.2e} of tolerance", fixtures.len(), worst))
}

fn diagonal_law() -> Outcome {
    let start = Instant::now();
    let m = model(&per_frame_2d(8));
    for seed in 0..20 {
        let clip = random_clip(&m, 1000 + seed);
        for mode in [Mode::Clrp, Mode::Lrp] {
            let r = relevance_matrix(&m, &clip, (seed % 4) as usize, mode, &rules()).map_err(|e| e.to_string())?;
            let total: f64 = r.a.iter().flatten().map(|v| v.abs()).sum();
            let off: f64 = (0..8).flat_map(|i| (0..8).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| r.a[i][j].abs()).sum();
            ensure(off < 1e-6 * total, || format!("seed {seed}: off-diagonal {off} of {total}"))?;
            let report = video_atr(&r, 0.975).map_err(|e| e.to_string())?;
            ensure(report.per_frame_atr.iter().all(|&a| a == 1), || format!("seed {seed}: ATRs {:?}", report.per_frame_atr))?;
            ensure(report.avg_atr == Some(1.0), || format!("seed {seed}: avg-ATR {:?}", report.avg_atr))?;
        }
    }
    within(start.elapsed(), 5)?;
    Ok("20 clips, both modes: diagonal, every r_i = 1, avg-ATR = 1.0".into())
}

fn receptive_cone() -> Outcome {
    let mut bounds = Vec::new();
    let mut seen = Vec::new();
    let fixtures = [temporal_diff_net(3, 8), temporal_diff_net(5, 8), temporal_diff_net(7, 8), tiny_i3d(8)];
    for f in &fixtures {
        let m = model(f);
        let rf = m.theoretical_temporal_rf();
        let mut largest = 0;
        for seed in 0..20 {
            let clip = random_clip(&m, 2000 + seed);
            let r = relevance_matrix(&m, &clip, (seed % 4) as usize, Mode::Clrp, &rules()).map_err(|e| e.to_string())?;
            let report = video_atr(&r, 0.975).map_err(|e| e.to_string())?;
            largest = largest.max(report.max_atr);
            ensure(report.per_frame_atr.iter().all(|&a| a <= rf), || {
                format!("{} seed {seed}: ATRs {:?} exceed {rf}", f.name(), report.per_frame_atr)
            })?;
        }
        bounds.push(rf);
        seen.push(format!("{} rf {rf} max {largest}", f.name()));
    }
    ensure(bounds[0] <= bounds[1] && bounds[1] <= bounds[2], || format!("bounds not monotone in k: {bounds:?}"))?;
    Ok(seen.join(", "))
}

/// Every window containing `i`: shortest, then most centered, then leftmost.
fn brute_atr(row: &[f64], i: usize, sigma: f64) -> usize {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut best: Option<(usize, usize, usize)> = None;
    for l in 0..=i {
        for r in i..row.len() {
            if row[l..=r].iter().sum::<f64>() >= sigma * total {
                let key = (r - l + 1, (l + r).abs_diff(2 * i), l);
                best = Some(best.map_or(key, |b| b.min(key)));
            }
        }
    }
    best.map_or(0, |b| b.0)
}

fn atr_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let n = rng.gen_range(1..=32);
        let row: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..10.0) })
            .collect();
        let i = rng.gen_range(0..n);
        let sigma = [0.5, 0.9, 0.975, 1.0][case % 4];
        let (got, want) = (frame_atr(&row, i, sigma).map_err(|e| e.to_string())?, brute_atr(&row, i, sigma));
        ensure(got == want, || format!("case {case}: {got} vs oracle {want} for {row:?}, i={i}"))?;
    }
    within(start.elapsed(), 5)?;
    Ok("1000 rows agree with exhaustive enumeration".into())
}

fn partial_exactness() -> Outcome {
    let m = model(&temporal_diff_net(3, 8));
    let clips: Vec<ClipTensor> = (0..10)
        .map(|s| {
            let mut c = random_clip(&m, 3000 + s);
            c.label = Some(s as usize % 4);
            c
        })
        .collect();
    let mut worst = 0.0f32;
    for s in 3..=8 {
        let run = sliding_eval(&m, &clips, &PartialSamplingConfig::fixed(s)).map_err(|e| e.to_string())?;
        for (clip, pred) in clips.iter().zip(&run.runs[0].clips) {
            let (full, _) = m.forward(clip).map_err(|e| e.to_string())?;
            for i in 1..7 {
                for (a, b) in pred.kept_rows[i].iter().zip(full.row(i)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-5, || format!("logit error {worst}"))?;
    let run = sliding_eval(&m, &clips, &PartialSamplingConfig::fixed(8)).map_err(|e| e.to_string())?;
    for (clip, pred) in clips.iter().zip(&run.runs[0].clips) {
        let (full, _) = m.forward(clip).map_err(|e| e.to_string())?;
        let plain = ModelGraph::ensemble_prediction(&full, 8).map_err(|e| e.to_string())?;
        ensure(pred.probabilities == plain, || format!("{}: full window differs from plain evaluation", clip.clip_id))?;
    }
    let plain = plain_accuracy(&m, &clips).map_err(|e| e.to_string())?;
    ensure(run.points[0].accuracy == plain, || "accuracy differs from plain evaluation".into())?;
    Ok(format!("sizes 3..8 max logit error {worst:e}; full window bitwise equal"))
}

fn saturation() -> Outcome {
    let start = Instant::now();
    let m = model(&pattern_detector(3, 8, 3, 6, 4).map_err(|e| e.to_string())?);
    let clips = generate(&SyntheticSpec {
        generator: Generator::TemporalPattern { k: 3 },
        frames: 8,
        channels: 3,
        height: 6,
        width: 6,
        classes: 4,
        count: 200,
        seed: 6,
        labeling: Labeling::Seeded,
    })
    .map_err(|e| e.to_string())?;
    let curve = window_curve(&m, &clips, &[1, 3, 8], None, FillMode::Replicate).map_err(|e| e.to_string())?;
    let acc: Vec<f64> = curve.points.iter().map(|p| p.accuracy).collect();
    ensure(acc[0] < acc[1] && acc[1] == acc[2], || format!("accuracies at 1, 3, N: {acc:?}"))?;
    within(start.elapsed(), 60)?;
    Ok(format!("accuracy at 1, 3, N = {:.3}, {:.3}, {:.3}", acc[0], acc[1], acc[2]))
}

fn clrp_contract() -> Outcome {
    let mut cases = 0;
    let mut entries = 0;
    for f in standard_fixtures() {
        let m = model(&f);
        for seed in 0..3 {
            let clip = random_clip(&m, 4000 + seed);
            let (_, cache) = m.forward(&clip).map_err(|e| e.to_string())?;
            let class = seed as usize % m.num_classes;
            for i in 0..m.expected_frames {
                let clrp = clrp_backward_with(&m, &cache, i, class, &rules(), ContrastSeed::Logit).map_err(|e| e.to_string())?;
                entries += clrp.per_frame.len();
                ensure(clrp.per_frame.iter().all(|&v| v >= 0.0), || format!("{} negative CLRP", f.name()))?;
                let zero = clrp_backward_with(&m, &cache, i, class, &rules(), ContrastSeed::Zero).map_err(|e| e.to_string())?;
                let lrp = lrp_backward(&m, &cache, i, class, &rules()).map_err(|e| e.to_string())?;
                for (a, b) in zero.per_frame.iter().zip(&lrp.per_frame) {
                    ensure((a - b.max(0.0)).abs() <= 1e-6, || format!("{} frame {i}: {a} vs max(0, {b})", f.name()))?;
                }
            }
            cases += 1;
        }
    }
    ensure(cases >= 20, || format!("only {cases} cases"))?;
    Ok(format!("{entries} CLRP entries nonnegative; zero seed equals max(0, LRP) on {cases} cases"))
}

fn slowfast() -> Outcome {
    let t = |rows: usize, v: Vec<f32>| Tensor::new(vec![rows, v.len() / rows], v).unwrap();
    let merged = slowfast_merge(&t(2, vec![1.0, 2.0]), &t(4, vec![0.1; 4]), 2).map_err(|e| e.to_string())?;
    ensure(merged.data() == [1.1f32, 0.1, 2.1, 0.1], || format!("merged {:?}", merged.data()))?;
    let slow = t(2, vec![1.0, -1.0, 3.0, 0.5]);
    let expanded = slowfast_merge(&slow, &t(6, vec![0.0; 12]), 3).map_err(|e| e.to_string())?;
    ensure(expanded.data() == [1.0f32, -1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.5, 0.0, 0.0, 0.0, 0.0], || {
        format!("expansion {:?}", expanded.data())
    })?;
    let mismatch = slowfast_merge(&t(2, vec![1.0, 2.0]), &t(4, vec![0.0; 4]), 3);
    ensure(matches!(mismatch, Err(Error::RateMismatch(_))), || "n != m r accepted".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let rate = rng.gen_range(1..=4);
        let n = rate * rng.gen_range(1..=8);
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..5.0)).collect()).collect();
        let out = block_sum(&a, rate).map_err(|e| e.to_string())?;
        let (tin, tout) = (a.iter().flatten().sum::<f64>(), out.iter().flatten().sum::<f64>());
        worst = worst.max((tin - tout).abs() / tin.abs());
    }
    ensure(worst <= 1e-6, || format!("relative total drift {worst}"))?;
    Ok(format!("placement cases exact; block sums drift at most {worst:.1e} relative"))
}

fn trel(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_trel")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("trel {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    trel(&["gen-fixtures", "--out", &p("models")])?;
    let mut checked = Vec::new();
    for manifest in ["tiny_i3d", "tiny_tam", "tiny_slowfast_r4"] {
        let model = format!("{}/{manifest}.json", p("models"));
        let frames = if manifest.starts_with("tiny_slowfast") { "16" } else { "8" };
        let clips = p(&format!("clips_{frames}"));
        if !Path::new(&clips).exists() {
            trel(&["gen-synth", "--generator", "noise", "--frames", frames, "--count", "12", "--seed", "9", "--out", &clips])?;
        }
        let mut summaries = Vec::new();
        for workers in ["1", "8"] {
            let out = p(&format!("run_{manifest}_{workers}"));
            trel(&["relevance", "--all-clips", "--model", &model, "--clips", &clips, "--workers", workers, "--seed", "9", "--out", &out])?;
            summaries.push(std::fs::read(Path::new(&out).join("summary.json")).map_err(|e| e.to_string())?);
        }
        ensure(summaries[0] == summaries[1], || format!("{manifest}: summary.json differs between 1 and 8 workers"))?;
        checked.push(manifest);
    }
    Ok(format!("byte-identical summary.json for {}", checked.join(", ")))
}

fn statistics() -> Outcome {
    let p = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).map_err(|e| e.to_string())?;
    let n = pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).map_err(|e| e.to_string())?;
    ensure(p == 1.0 && n == -1.0, || format!("pearson gave {p} and {n}"))?;
    let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.5 * v - 2.0).collect();
    let z = pearson(&x, &y).map_err(|e| e.to_string())?;
    ensure((z - 1.0).abs() <= 1e-12, || format!("affine relation gave {z}"))?;
    ensure(matches!(pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]), Err(Error::DegenerateInput(_))), || {
        "zero variance accepted".into()
    })?;

    let values = [(0, 9.0), (1, 8.0), (2, 7.0), (3, 6.0), (4, 3.0), (5, 2.0), (6, 1.5), (7, 1.0)];
    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
    let full = topk_overlap(&values, &set(&[0, 1]), &set(&[6, 7]), 2).map_err(|e| e.to_string())?;
    let none = topk_overlap(&values, &set(&[6, 7]), &set(&[0, 1]), 2).map_err(|e| e.to_string())?;
    let quarter = topk_overlap(&values, &set(&[3, 4, 5, 6]), &set(&[0, 1, 2, 4]), 4).map_err(|e| e.to_string())?;
    ensure(full == (100.0, 100.0) && none == (0.0, 0.0) && quarter == (25.0, 25.0), || {
        format!("overlaps {full:?} {none:?} {quarter:?}")
    })?;
    Ok("pearson +1/-1 exact, zero variance rejected; overlaps 100/0/25".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("conservation", conservation),
        ("diagonal law", diagonal_law),
        ("receptive-cone bound", receptive_cone),
        ("ATR oracle", atr_oracle),
        ("partial-sampling exactness", partial_exactness),
        ("saturation shape", saturation),
        ("CLRP contract", clrp_contract),
        ("SlowFast mechanics", slowfast),
        ("determinism under parallelism", determinism),
        ("statistics", statistics),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s): {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2} s): {why}", n + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} acceptance criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} acceptance criteria passed", criteria.len());
}
