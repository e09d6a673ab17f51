//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any of them fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surgrl::cot_format::extract_answer;
use surgrl::fixtures::{gradcheck_policy, random_context, random_tokens};
use surgrl::grpo::{entropy_weights, group_gradient, grpo_gradient_step, normalize_advantages, sample_group, GrpoConfig, RolloutGroup};
use surgrl::harness::{arena_score, published_external_table, published_public_table, run_stage_pipeline, RunConfig, RunSummary};
use surgrl::metrics::{classification_metrics, cvs_average, iou, Bbox, LabelRecord};
use surgrl::policy::{PolicyParams, TrainingExample};
use surgrl::refine::{read_pseudo_labels, PseudoLabel};
use surgrl::reward::{answers_match, RewardConfig};
use surgrl::synth::{gen_dataset, TaskKind};
use surgrl::ExecMode;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pop_std(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn advantage_suite() -> Check {
    let t0 = Instant::now();
    let eps = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let g = rng.random_range(2..=32);
        let r: Vec<f64> = (0..g).map(|_| rng.random_range(0.0..3.0)).collect();
        let a = normalize_advantages(&r, eps).map_err(|e| e.to_string())?;
        worst_mean = worst_mean.max((a.iter().sum::<f64>() / g as f64).abs());
        let s = pop_std(&r);
        if s > 10.0 * eps {
            worst_std = worst_std.max((pop_std(&a) - s / (s + eps)).abs());
        }
    }
    for g in [2, 8, 32] {
        let a = normalize_advantages(&vec![1.5; g], eps).map_err(|e| e.to_string())?;
        if a.iter().any(|&x| x != 0.0) {
            return Err(format!("constant group of {g} gave non-zero advantages"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        worst_mean < 1e-9 && worst_std < 1e-6 && secs < 1.0,
        format!("max|mean| {worst_mean:.1e} < 1e-9, max std error {worst_std:.1e} < 1e-6, {secs:.3}s < 1s"),
    )
}

fn entropy_weight_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=32);
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let w = entropy_weights(&h, rng.random_range(0.1..10.0)).map_err(|e| e.to_string())?;
        worst = worst.max((w.iter().sum::<f64>() / n as f64 - 1.0).abs());
    }
    let equal = entropy_weights(&[0.7; 9], 1.0).map_err(|e| e.to_string())?;
    let h: Vec<f64> = (0..16).map(|i| i as f64 * 0.3).collect();
    let flat = entropy_weights(&h, 1e9).map_err(|e| e.to_string())?;
    let flat_dev = flat.iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max);
    ensure(
        worst < 1e-9 && equal.iter().all(|&w| w == 1.0) && flat_dev < 1e-6,
        format!("max|mean(w)-1| {worst:.1e} < 1e-9, equal entropies all ones, tau=1e9 max|w-1| {flat_dev:.1e} < 1e-6"),
    )
}

fn central_difference(p: &PolicyParams, i: usize, f: &dyn Fn(&PolicyParams) -> f64) -> f64 {
    let h = 1e-5;
    let mut plus = p.clone();
    plus.weights.set(i, p.weights.get(i) + h);
    let mut minus = p.clone();
    minus.weights.set(i, p.weights.get(i) - h);
    (f(&plus) - f(&minus)) / (2.0 * h)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn grpo_cfg(focus: bool) -> GrpoConfig {
    GrpoConfig {
        group_size: 5,
        entropy_focus: focus,
        learning_rate: 0.1,
        max_output_len: 10,
        ..GrpoConfig::default()
    }
}

/// Sampled group on the gradient-check policy with non-degenerate advantages.
fn fixture_group(seed: u64, focus: bool) -> (PolicyParams, RolloutGroup) {
    let p = gradcheck_policy(seed);
    let mut inst = gen_dataset(seed, TaskKind::Phase, 1).unwrap().remove(0);
    inst.context = random_context(seed);
    let c = grpo_cfg(focus);
    let mut g = sample_group(&p, &inst, &c, seed).unwrap().score("a b", &RewardConfig::default(), 0, &c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xadd);
    g.advantages = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    (p, g)
}

fn gradient_checks() -> Check {
    let t0 = Instant::now();
    let p = gradcheck_policy(11);
    let n = p.num_parameters();
    let batch: Vec<TrainingExample> = (0..3)
        .map(|i| TrainingExample {
            context: random_context(100 + i),
            target_tokens: random_tokens(200 + i, 12, 6 + i as usize),
        })
        .collect();
    let (_, grad) = p.ce_loss_grad(&batch, ExecMode::Sequential).map_err(|e| e.to_string())?;
    let loss = |q: &PolicyParams| q.ce_loss_grad(&batch, ExecMode::Sequential).unwrap().0;
    let ce_worst = (0..n).map(|i| rel_err(grad.get(i), central_difference(&p, i, &loss))).fold(0.0, f64::max);

    let mut grpo_worst = 0.0f64;
    for focus in [true, false] {
        let (p, g) = fixture_group(9, focus);
        let c = grpo_cfg(focus);
        let (next, _) = grpo_gradient_step(&p, &g, &c).map_err(|e| e.to_string())?;
        let objective = |q: &PolicyParams| group_gradient(q, &g, &c).unwrap().1;
        for i in 0..n {
            let analytic = (next.weights.get(i) - p.weights.get(i)) / c.learning_rate;
            grpo_worst = grpo_worst.max(rel_err(analytic, central_difference(&p, i, &objective)));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        n <= 1000 && ce_worst < 1e-4 && grpo_worst < 1e-4 && secs < 30.0,
        format!("{n} parameters, worst relative error ce {ce_worst:.1e}, grpo {grpo_worst:.1e} (< 1e-4), {secs:.1}s < 30s"),
    )
}

fn grpo_demo(summary: &RunSummary, secs: f64) -> Check {
    let snaps = &summary.grpo.as_ref().ok_or("no GRPO stage in the demo")?.snapshots;
    let at = |s: u64| snaps.iter().find(|x| x.step == s).ok_or(format!("no snapshot at step {s}"));
    let cutoff = RewardConfig::default().structure_cutoff_step;
    let (s0, sc, s200) = (at(0)?, at(cutoff)?, at(200)?);
    let gain = s200.mean_reward / s0.mean_reward - 1.0;
    ensure(
        gain >= 0.5 && s200.greedy_accuracy >= 0.9 && sc.level1_rate > s0.level1_rate && secs < 300.0,
        format!(
            "reward {:.3} -> {:.3} (+{:.0}% >= 50%), accuracy {:.3} >= 0.9, Level 1 {:.3} -> {:.3} at step {cutoff}, whole demo {secs:.0}s < 300s",
            s0.mean_reward,
            s200.mean_reward,
            100.0 * gain,
            s200.greedy_accuracy,
            s0.level1_rate,
            sc.level1_rate
        ),
    )
}

fn unweighted_reduction() -> Check {
    for seed in 0..100 {
        let (p, mut g) = fixture_group(1000 + seed, false);
        let (plain, o1) = grpo_gradient_step(&p, &g, &grpo_cfg(false)).map_err(|e| e.to_string())?;
        g.weights = g.outputs.iter().map(|o| vec![1.0; o.tokens.len()]).collect();
        let (ones, o2) = grpo_gradient_step(&p, &g, &grpo_cfg(true)).map_err(|e| e.to_string())?;
        let same = o1.to_bits() == o2.to_bits()
            && plain.weights.iter().zip(ones.weights.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("fixture {seed} differs"));
        }
    }
    Ok("100 fixtures, parameters and objective bitwise equal".into())
}

fn refinement(summary: &RunSummary, out: &Path) -> Check {
    let reports = summary.refinement.as_ref().ok_or("no refinement stage in the demo")?;
    let labels: Vec<PseudoLabel> = read_pseudo_labels(&out.join("pseudo_labels.jsonl")).map_err(|e| e.to_string())?;
    let unsound = labels
        .iter()
        .filter(|l| !extract_answer(&l.trace).is_some_and(|a| answers_match(&a, &l.label)))
        .count();
    let acc = |i: usize| reports.iter().find(|r| r.iteration == i).map(|r| r.accuracy_after);
    let (a1, a3) = (acc(1).ok_or("no iteration 1")?, acc(3).ok_or("no iteration 3")?);
    ensure(
        !labels.is_empty() && unsound == 0 && a3 >= a1,
        format!("{} pseudo-labels, {unsound} unsound, eval accuracy iteration 1 {a1:.3} -> iteration 3 {a3:.3}", labels.len()),
    )
}

fn arena_reproduction() -> Check {
    let public = arena_score(&published_public_table(), "Surg-R1").map_err(|e| e.to_string())?;
    let external = published_external_table();
    let ours = arena_score(&external, "Surg-R1").map_err(|e| e.to_string())?;
    let base = arena_score(&external, "Qwen2.5-VL-7B-Surg").map_err(|e| e.to_string())?;
    ensure(
        (public - 57.66).abs() <= 0.01 && (ours - 60.05).abs() <= 0.01 && (base - 44.89).abs() <= 0.01,
        format!("public {public:.4} (57.66 ± 0.01), external {ours:.4} (60.05 ± 0.01), baseline {base:.4} (44.89 ± 0.01)"),
    )
}

fn cvs_arithmetic() -> Check {
    let west = cvs_average([84.82, 97.12, 94.66]);
    let smu = cvs_average([89.66, 96.55, 75.86]);
    ensure(
        west == 92.20 && (smu - 87.36).abs() <= 0.005,
        format!("West China {west} == 92.20, SMU {smu:.5} (87.36 ± 0.005)"),
    )
}

/// Unit cells covered by both integer-cornered rectangles, by counting.
fn cell_overlap(a: [i64; 4], b: [i64; 4]) -> (i64, i64) {
    let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut both, mut either) = (0, 0);
    for x in a[0].min(b[0])..a[2].max(b[2]) {
        for y in a[1].min(b[1])..a[3].max(b[3]) {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            both += (ia && ib) as i64;
            either += (ia || ib) as i64;
        }
    }
    (both, either)
}

/// Macro metrics from a k × (k+1) confusion matrix (last column = no answer),
/// averaged in ascending class order.
fn confusion_oracle(pairs: &[(usize, usize)], k: usize) -> [f64; 4] {
    let mut m = vec![vec![0usize; k + 1]; k];
    for &(t, p) in pairs {
        m[t][p] += 1;
    }
    let row = |c: usize| m[c].iter().sum::<usize>();
    let col = |c: usize| (0..k).map(|r| m[r][c]).sum::<usize>();
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let avg = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let truth: Vec<usize> = (0..k).filter(|&c| row(c) > 0).collect();
    let prec: Vec<usize> = (0..k).filter(|&c| row(c) > 0 || col(c) > 0).collect();
    [
        100.0 * div((0..k).map(|c| m[c][c]).sum(), pairs.len()),
        100.0 * avg(prec.iter().map(|&c| div(m[c][c], col(c))).collect()),
        100.0 * avg(truth.iter().map(|&c| div(m[c][c], row(c))).collect()),
        100.0 * avg(truth.iter().map(|&c| div(m[c][c], row(c) + col(c) - m[c][c])).collect()),
    ]
}

fn agrees(pairs: &[(usize, usize)], k: usize, names: &[String]) -> bool {
    let recs: Vec<LabelRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(t, p))| LabelRecord {
            id: format!("r{i}"),
            pred: (p < k).then(|| names[p].clone()),
            truth: names[t].clone(),
        })
        .collect();
    let m = classification_metrics(&recs, names).unwrap();
    let got = ["accuracy", "macro_precision", "macro_recall", "macro_jaccard"].map(|key| m.get(key).unwrap());
    got.iter().zip(confusion_oracle(pairs, k)).all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Every multiset of `n` (truth, prediction) cells; the metrics are order
/// invariant, so one ordering per multiset covers all record orders.
fn for_each_multiset(k: usize, n: usize, f: &mut dyn FnMut(&[(usize, usize)]) -> bool) -> Option<usize> {
    fn go(cells: &[(usize, usize)], start: usize, n: usize, cur: &mut Vec<(usize, usize)>, f: &mut dyn FnMut(&[(usize, usize)]) -> bool, count: &mut usize) -> bool {
        if cur.len() == n {
            *count += 1;
            return f(cur);
        }
        for i in start..cells.len() {
            cur.push(cells[i]);
            if !go(cells, i, n, cur, f, count) {
                return false;
            }
            cur.pop();
        }
        true
    }
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|t| (0..=k).map(move |p| (t, p))).collect();
    let mut count = 0;
    go(&cells, 0, n, &mut Vec::new(), f, &mut count).then_some(count)
}

fn multisets(m: u64, n: u64) -> u64 {
    (1..=n).fold(1, |acc, i| acc * (m + i - 1) / i)
}

const EXHAUSTIVE_LIMIT: u64 = 400_000;
const SAMPLED_CASES: usize = 100_000;

fn metric_oracles() -> Check {
    let truth = Bbox::new(328.0, 531.0, 987.0, 1049.0).map_err(|e| e.to_string())?;
    let pred = Bbox::new(327.0, 506.0, 984.0, 1047.0).map_err(|e| e.to_string())?;
    let (both, either) = cell_overlap([328, 531, 987, 1049], [327, 506, 984, 1047]);
    let oracle = both as f64 / either as f64;
    let got = iou(&pred, &truth);
    if (got - oracle).abs() > 1e-12 || (got - 0.945).abs() > 1e-3 {
        return Err(format!("reference box IoU {got:.5} vs cell-count oracle {oracle:.5}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut exhaustive, mut sampled) = (0usize, 0usize);
    for k in 1..=5usize {
        let names: Vec<String> = (0..k).map(|c| format!("class {c}")).collect();
        for n in 1..=8usize {
            if multisets((k * (k + 1)) as u64, n as u64) <= EXHAUSTIVE_LIMIT {
                match for_each_multiset(k, n, &mut |pairs| agrees(pairs, k, &names)) {
                    Some(c) => exhaustive += c,
                    None => return Err(format!("mismatch with {k} classes, {n} records")),
                }
            } else {
                for _ in 0..SAMPLED_CASES {
                    let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..k), rng.random_range(0..=k))).collect();
                    if !agrees(&pairs, k, &names) {
                        return Err(format!("mismatch on {pairs:?}"));
                    }
                    sampled += 1;
                }
            }
        }
    }
    Ok(format!(
        "IoU {got:.4} equals cell-count oracle (0.945 ± 1e-3); classification metrics bitwise equal to confusion-matrix oracle on {exhaustive} enumerated + {sampled} sampled record sets"
    ))
}

fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            // the echoed config records the output directory itself
            if name == "config.toml" {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text.lines().filter(|l| !l.starts_with("out = ")).collect::<Vec<_>>().join("\n").into_bytes();
            }
            (name, bytes)
        })
        .collect()
}

fn determinism() -> Check {
    let mut cfg = RunConfig::default();
    cfg.dataset.train_size = 200;
    cfg.dataset.eval_size = 50;
    cfg.label_sft.steps = 60;
    cfg.cot_sft.steps = 300;
    cfg.replay.sft.steps = 10;
    cfg.grpo.steps = 10;
    cfg.grpo.batch_instances = 8;
    cfg.grpo.eval_instances = 16;
    cfg.refine.iterations = 2;
    cfg.refine.distill.steps = 20;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cfg.out = a.path().to_path_buf();
    let sa = run_stage_pipeline(&cfg, ExecMode::Parallel).map_err(|e| e.to_string())?;
    cfg.out = b.path().to_path_buf();
    let sb = run_stage_pipeline(&cfg, ExecMode::Sequential).map_err(|e| e.to_string())?;
    let (fa, fb) = (snapshot_dir(a.path()), snapshot_dir(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    ensure(
        sa.config_hash == sb.config_hash && fa.len() == fb.len() && differing.is_empty(),
        format!("{} files byte-identical across two runs (parallel vs sequential), differing {differing:?}", fa.len()),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, c: Check| {
        match c {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    };
    report(1, "advantage suite", advantage_suite());
    report(2, "entropy-weight suite", entropy_weight_suite());
    report(3, "gradient checks", gradient_checks());

    let demo_dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: demo_dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let t0 = Instant::now();
    let demo = run_stage_pipeline(&cfg, ExecMode::Parallel);
    let secs = t0.elapsed().as_secs_f64();
    match &demo {
        Ok(s) => report(4, "end-to-end GRPO demo", grpo_demo(s, secs)),
        Err(e) => report(4, "end-to-end GRPO demo", Err(e.to_string())),
    }
    report(5, "unweighted reduction", unweighted_reduction());
    match &demo {
        Ok(s) => report(6, "refinement loop", refinement(s, demo_dir.path())),
        Err(e) => report(6, "refinement loop", Err(e.to_string())),
    }
    report(7, "arena reproduction", arena_reproduction());
    report(8, "CVS arithmetic", cvs_arithmetic());
    report(9, "IoU and metric oracles", metric_oracles());
    report(10, "determinism", determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
