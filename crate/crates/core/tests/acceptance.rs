//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing the harness capture) before asserting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use footprint::classifiers::{
    train_tree, BaselineKind, BaselineParams, DecisionNode, Sample, TrainConfig, TrainingSet,
};
use footprint::corpus::Schema;
use footprint::evaluation::{
    baseline_trainer, cross_validate, depth_sweep, forest_trainer, stratified_folds, ConfusionMatrix, MetricsReport,
};
use footprint::features::FeatureRow;
use footprint::pipeline::{artifacts, DatasetConfig, Pipeline, PipelineConfig, RunOutcome};
use footprint::propagation::{
    assign_impermanent, build_vectors, resolve_final, ImpermanentAssignment, SubspanUsage, VectorMode,
};
use footprint::synthgen::{generate, planted_rule_samples, GeneratorConfig};
use footprint::Category;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 4;

fn report(n: u32, ok: bool, detail: &str) {
    let line = format!("{} criterion {n}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn trainable(i: usize) -> Category {
    Category::from_index(i)
}

// ---------------------------------------------------------------- criterion 1

struct PropFixture {
    labels: BTreeMap<String, Category>,
    /// Per subspan, per account, dense counts over `t0..t{m}`.
    dense: Vec<BTreeMap<String, Vec<u64>>>,
}

fn prop_fixture(rng: &mut ChaCha8Rng) -> PropFixture {
    loop {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(1..=8);
        let spans = rng.random_range(1..=3);
        let ids: Vec<String> = (0..n).map(|i| format!("acct{i:02}")).collect();
        let mut labels = BTreeMap::new();
        for id in &ids {
            if rng.random_bool(0.5) {
                labels.insert(id.clone(), trainable(rng.random_range(0..K)));
            }
        }
        let dense: Vec<BTreeMap<String, Vec<u64>>> = (0..spans)
            .map(|_| {
                ids.iter()
                    .map(|id| {
                        let v = (0..m)
                            .map(|_| {
                                if rng.random_bool(0.5) {
                                    0
                                } else {
                                    rng.random_range(1..4)
                                }
                            })
                            .collect();
                        (id.clone(), v)
                    })
                    .collect()
            })
            .collect();
        let labeled_active = |s: &BTreeMap<String, Vec<u64>>| {
            s.iter()
                .any(|(id, v)| labels.contains_key(id) && v.iter().any(|c| *c > 0))
        };
        if labels.len() < n && dense.iter().all(labeled_active) {
            return PropFixture { labels, dense };
        }
    }
}

fn usage_of(dense: &BTreeMap<String, Vec<u64>>) -> SubspanUsage {
    dense
        .iter()
        .filter(|(_, v)| v.iter().any(|c| *c > 0))
        .map(|(id, v)| {
            let tags = v
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, c)| (format!("t{i}"), *c))
                .collect();
            (id.clone(), tags)
        })
        .collect()
}

struct OracleEntry {
    category: Category,
    score: f64,
    matched: String,
}

/// All pairwise similarities, compared exactly by cross-multiplying
/// `dot² / (|u|²|v|²)`.
fn oracle_assign(
    dense: &BTreeMap<String, Vec<u64>>,
    labels: &BTreeMap<String, Category>,
) -> BTreeMap<String, OracleEntry> {
    let active: Vec<(&String, &Vec<u64>)> = dense.iter().filter(|(_, v)| v.iter().any(|c| *c > 0)).collect();
    let sq = |v: &[u64]| v.iter().map(|&c| (c * c) as u128).sum::<u128>();
    let dot = |a: &[u64], b: &[u64]| a.iter().zip(b).map(|(&x, &y)| (x * y) as u128).sum::<u128>();
    let mut out = BTreeMap::new();
    for (u_id, u) in active.iter().filter(|(id, _)| !labels.contains_key(*id)) {
        let nu = sq(u);
        let mut best: Option<(u128, u128, Category, &String)> = None;
        for (v_id, v) in active.iter().filter(|(id, _)| labels.contains_key(*id)) {
            let (d, nv, c) = (dot(u, v), sq(v), labels[*v_id]);
            let better = match best {
                None => true,
                Some((bd, bnv, bc, bid)) => {
                    let lhs = d * d * bnv;
                    let rhs = bd * bd * nv;
                    lhs > rhs || (lhs == rhs && (c < bc || (c == bc && *v_id < bid)))
                }
            };
            if better {
                best = Some((d, nv, c, v_id));
            }
        }
        let (d, nv, c, id) = best.expect("a labeled account is active");
        out.insert(
            (*u_id).clone(),
            OracleEntry {
                category: c,
                score: d as f64 / (nu as f64 * nv as f64).sqrt(),
                matched: id.clone(),
            },
        );
    }
    out
}

/// Explicit mode: highest count, then highest score sum, then category order.
fn oracle_mode(entries: &[&OracleEntry]) -> (Category, usize) {
    let mut cands: Vec<(usize, f64, Category)> = Category::ALL
        .iter()
        .filter_map(|&c| {
            let mut s: Vec<f64> = entries.iter().filter(|e| e.category == c).map(|e| e.score).collect();
            if s.is_empty() {
                return None;
            }
            s.sort_by(f64::total_cmp);
            Some((s.len(), s.iter().sum(), c))
        })
        .collect();
    cands.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    (cands[0].2, cands[0].0)
}

#[test]
fn criterion_1_propagation_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut problems = Vec::new();
    let mut compared = 0;
    for fx in 0..20 {
        let f = prop_fixture(&mut rng);
        let mut ours: BTreeMap<String, ImpermanentAssignment> = BTreeMap::new();
        let mut theirs: BTreeMap<String, Vec<OracleEntry>> = BTreeMap::new();
        for (s, dense) in f.dense.iter().enumerate() {
            let m = build_vectors(s, &usage_of(dense), &f.labels, VectorMode::Counts).unwrap();
            let got = assign_impermanent(&m).unwrap();
            let want = oracle_assign(dense, &f.labels);
            if got.len() != want.len() {
                problems.push(format!(
                    "fixture {fx} subspan {s}: {} vs {} entries",
                    got.len(),
                    want.len()
                ));
            }
            for e in got {
                match want.get(&e.account_id) {
                    Some(w)
                        if w.category == e.category
                            && w.matched == e.matched_account
                            && (w.score - e.score).abs() <= 1e-9 => {}
                    w => problems.push(format!(
                        "fixture {fx} subspan {s}: {} differs: ours {:?} {} {:e} oracle {:?}",
                        e.account_id,
                        e.category,
                        e.matched_account,
                        e.score,
                        w.map(|w| (w.category, w.matched.clone(), w.score))
                    )),
                }
                compared += 1;
                ours.entry(e.account_id.clone())
                    .or_insert_with(|| ImpermanentAssignment {
                        account_id: e.account_id.clone(),
                        entries: BTreeMap::new(),
                    })
                    .entries
                    .insert(s, e);
            }
            for (id, w) in want {
                theirs.entry(id).or_default().push(w);
            }
        }
        for (id, a) in &ours {
            let got = resolve_final(a).unwrap();
            let (cat, count) = oracle_mode(&theirs[id].iter().collect::<Vec<_>>());
            if got.category != cat || got.mode_count != count {
                problems.push(format!("fixture {fx}: final category of {id}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = problems.is_empty() && compared > 0 && elapsed < Duration::from_secs(1);
    report(
        1,
        ok,
        &format!(
            "{compared} impermanent entries over 20 fixtures match the brute-force oracle in {elapsed:?} {problems:?}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

fn exact_children(l: &[u64; K], r: &[u64; K]) -> (i128, i128) {
    // n·impurity = nl − Σl²/nl + nr − Σr²/nr as a fraction.
    let (nl, nr) = (l.iter().sum::<u64>() as i128, r.iter().sum::<u64>() as i128);
    let sl: i128 = l.iter().map(|&c| (c * c) as i128).sum();
    let sr: i128 = r.iter().map(|&c| (c * c) as i128).sum();
    (nl * nr * (nl + nr) - nr * sl - nl * sr, nl * nr)
}

fn oracle_tree(samples: &[Sample]) -> DecisionNode {
    let mut counts = [0u32; K];
    for s in samples {
        counts[s.category.index().unwrap()] += 1;
    }
    let top = *counts.iter().max().unwrap();
    let majority = trainable(counts.iter().position(|&c| c == top).unwrap());
    let leaf = DecisionNode::Leaf { counts, majority };
    if counts.iter().filter(|c| **c > 0).count() <= 1 {
        return leaf;
    }
    let d = samples[0].values.len();
    let mut best: Option<(usize, f64, (i128, i128))> = None;
    for f in 0..d {
        let mut vals: Vec<f64> = samples.iter().map(|s| s.values[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut l, mut r) = ([0u64; K], [0u64; K]);
            for s in samples {
                let side = if s.values[f] <= t { &mut l } else { &mut r };
                side[s.category.index().unwrap()] += 1;
            }
            let imp = exact_children(&l, &r);
            if best.is_none_or(|(_, _, b)| imp.0 * b.1 < b.0 * imp.1) {
                best = Some((f, t, imp));
            }
        }
    }
    let Some((f, t, _)) = best else { return leaf };
    let (l, r): (Vec<Sample>, Vec<Sample>) = samples.iter().cloned().partition(|s| s.values[f] <= t);
    DecisionNode::Split {
        feature: f,
        threshold: t,
        left: Box::new(oracle_tree(&l)),
        right: Box::new(oracle_tree(&r)),
    }
}

#[test]
fn criterion_2_tree_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = Vec::new();
    let mut nodes = 0;
    for fx in 0..20 {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                let x = (0..d).map(|_| rng.random_range(0..6) as f64).collect();
                Sample::new(format!("s{i}"), x, trainable(rng.random_range(0..K)))
            })
            .collect();
        let cfg = TrainConfig {
            features_per_split: Some(d),
            ..TrainConfig::single_tree(None, fx)
        };
        let got = train_tree(&samples, &cfg, fx).unwrap();
        nodes += 2 * got.leaf_count() - 1;
        if got != oracle_tree(&samples) {
            mismatches.push(fx);
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatches.is_empty() && elapsed < Duration::from_secs(5);
    report(
        2,
        ok,
        &format!("20 trees ({nodes} nodes) equal the exhaustive oracle node for node in {elapsed:?}; mismatched fixtures {mismatches:?}"),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..100 {
        let mut counts = [[0u64; K]; K];
        let dead_row = rng.random_bool(0.2).then(|| rng.random_range(0..K));
        let dead_col = rng.random_bool(0.2).then(|| rng.random_range(0..K));
        for (t, row) in counts.iter_mut().enumerate() {
            for (p, c) in row.iter_mut().enumerate() {
                if Some(t) != dead_row && Some(p) != dead_col {
                    *c = rng.random_range(0..25);
                }
            }
        }
        counts[0][0] += 1;
        let r = MetricsReport::from_confusion(ConfusionMatrix { counts });
        let total: u64 = counts.iter().flatten().sum();
        let trace: u64 = (0..K).map(|i| counts[i][i]).sum();
        let predicted: f64 = r.per_category.iter().map(|m| m.predicted as f64).sum();
        let support: f64 = r.per_category.iter().map(|m| m.support as f64).sum();
        let micro_p = r
            .per_category
            .iter()
            .map(|m| m.precision * m.predicted as f64)
            .sum::<f64>()
            / predicted;
        let micro_r = r.per_category.iter().map(|m| m.recall * m.support as f64).sum::<f64>() / support;
        let acc = trace as f64 / total as f64;
        let mut dev = (micro_p - r.accuracy)
            .abs()
            .max((micro_r - r.accuracy).abs())
            .max((acc - r.accuracy).abs());
        for m in &r.per_category {
            let h = if m.precision + m.recall == 0.0 {
                0.0
            } else {
                2.0 * m.precision * m.recall / (m.precision + m.recall)
            };
            dev = dev.max((h - m.f1).abs());
        }
        let supported: Vec<f64> = r.per_category.iter().filter(|m| m.support > 0).map(|m| m.f1).collect();
        dev = dev.max((supported.iter().sum::<f64>() / supported.len() as f64 - r.macro_f1).abs());
        worst = worst.max(dev);
        if dev > 1e-12 {
            failures += 1;
        }
    }
    report(
        3,
        failures == 0,
        &format!("micro P = micro R = accuracy and F1 = harmonic mean on 100 matrices (max deviation {worst:e})"),
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_stratification() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = Vec::new();
    for trial in 0..50 {
        let k = rng.random_range(2..=10);
        let mut labels = Vec::new();
        for c in 0..K {
            let n = if rng.random_bool(0.15) {
                0
            } else {
                rng.random_range(k..=80)
            };
            labels.extend((0..n).map(|i| (format!("{c}-{i:03}"), trainable(c))));
        }
        if labels.is_empty() {
            labels.push(("only".into(), trainable(0)));
            labels.extend((1..k).map(|i| (format!("only{i}"), trainable(0))));
        }
        let seed = rng.random();
        let a = stratified_folds(labels.iter().map(|(id, c)| (id.as_str(), *c)), k, seed).unwrap();
        let mut per = vec![[0usize; K]; k];
        for (id, c) in &labels {
            per[a.fold_of(id).unwrap()][c.index().unwrap()] += 1;
        }
        let balanced = (0..K).all(|c| {
            let col: Vec<usize> = per.iter().map(|f| f[c]).collect();
            col.iter().max().unwrap() - col.iter().min().unwrap() <= 1
        });
        if !balanced || a.folds.len() != labels.len() {
            bad.push(trial);
        }
    }
    report(
        4,
        bad.is_empty(),
        &format!("per-category fold counts differ by at most 1 on 50 multisets; failing {bad:?}"),
    );
}

// ------------------------------------------------------ criteria 5, 6 and 9

fn synth_pipeline(dir: &Path, gen: &GeneratorConfig, threads: usize) -> PipelineConfig {
    let files = generate(gen).unwrap().write_to_dir(&dir.join("data")).unwrap();
    let mut cfg = PipelineConfig::new(DatasetConfig::new(files.archive, Schema::Jsonl), dir.join("out"));
    cfg.seed = 42;
    cfg.threads = threads;
    cfg.labeling.coded = Some(files.labels);
    cfg.evaluation.ground_truth = Some(files.truth);
    cfg
}

fn max_threads() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get()).max(2)
}

struct DefaultRun {
    dir: tempfile::TempDir,
    outcome: RunOutcome,
    elapsed: Duration,
}

fn default_run() -> &'static DefaultRun {
    static RUN: OnceLock<DefaultRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_pipeline(dir.path(), &GeneratorConfig::default(), max_threads());
        let start = Instant::now();
        let outcome = Pipeline::new(cfg).unwrap().run().unwrap();
        DefaultRun {
            dir,
            outcome,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_5_synthetic_recovery() {
    let run = default_run();
    let truth = run.outcome.report.truth.as_ref().expect("ground truth configured");
    let recalls: Vec<(Category, f64)> = truth.cv.per_category.iter().map(|m| (m.category, m.recall)).collect();
    let recovered = truth.cv.accuracy >= 0.80 && recalls.iter().all(|(_, r)| *r >= 0.6);

    // Noise-free corpus with disjoint pools: every hashed account must get
    // its planted category before the model is involved.
    let dir = tempfile::tempdir().unwrap();
    let gen = GeneratorConfig {
        noise: 0.0,
        ..GeneratorConfig::default()
    };
    let start = Instant::now();
    let p = Pipeline::new(synth_pipeline(dir.path(), &gen, 0)).unwrap();
    std::fs::create_dir_all(p.output_dir()).unwrap();
    let (ing, _) = p.ingest().unwrap();
    let (lab, _) = p.label(&ing.dataset).unwrap();
    let (prop, _) = p.propagate(&ing.dataset, &lab.seeds).unwrap();
    let corpus = generate(&gen).unwrap();
    let hashed: Vec<_> = corpus.hashed_accounts().collect();
    let correct = hashed
        .iter()
        .filter(|a| prop.labels.category(&a.account_id) == Some(a.category))
        .count();
    let elapsed = run.elapsed + start.elapsed();

    let ok = recovered && correct == hashed.len() && elapsed < Duration::from_secs(120);
    report(
        5,
        ok,
        &format!(
            "accuracy {:.3}, recalls {:?}; noise-free propagation {correct}/{} hashed correct; {elapsed:?}",
            truth.cv.accuracy,
            recalls
                .iter()
                .map(|(c, r)| format!("{}={r:.2}", c.token()))
                .collect::<Vec<_>>(),
            hashed.len()
        ),
    );
}

#[test]
fn criterion_6_thread_determinism() {
    let run = default_run();
    let many = run.dir.path().join("out");
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_pipeline(dir.path(), &GeneratorConfig::default(), 1);
    let single = cfg.output_dir.clone();
    Pipeline::new(cfg).unwrap().run().unwrap();
    let same = |name: &str| std::fs::read(many.join(name)).unwrap() == std::fs::read(single.join(name)).unwrap();
    let files = [
        artifacts::MODEL,
        artifacts::METRICS,
        artifacts::PREDICTIONS,
        artifacts::RUN_REPORT,
    ];
    let differing: Vec<&str> = files.iter().copied().filter(|f| !same(f)).collect();
    report(
        6,
        differing.is_empty(),
        &format!(
            "1 vs {} threads give byte-identical {files:?}; differing {differing:?}",
            max_threads()
        ),
    );
}

fn synthetic_rows() -> Vec<FeatureRow> {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(synth_pipeline(dir.path(), &GeneratorConfig::default(), 0)).unwrap();
    std::fs::create_dir_all(p.output_dir()).unwrap();
    let (ing, _) = p.ingest().unwrap();
    let (lab, _) = p.label(&ing.dataset).unwrap();
    let (prop, _) = p.propagate(&ing.dataset, &lab.seeds).unwrap();
    p.featurize(&ing.dataset, &prop.labels).unwrap().0.rows
}

#[test]
fn criterion_9_forest_beats_tree() {
    let set = TrainingSet::from_rows(&synthetic_rows());
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..20u64 {
        let forest = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let params = BaselineParams {
            seed,
            ..BaselineParams::default()
        };
        let f = cross_validate(&set, &forest_trainer(forest), 5, seed).unwrap();
        let t = cross_validate(&set, &baseline_trainer(BaselineKind::DecisionTree, params), 5, seed).unwrap();
        let (fa, ta) = (
            f.report.fold_accuracy_mean.unwrap(),
            t.report.fold_accuracy_mean.unwrap(),
        );
        if fa >= ta {
            wins += 1;
        }
        margins.push(fa - ta);
    }
    let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
    report(
        9,
        wins >= 18,
        &format!("forest mean CV accuracy >= single tree in {wins}/20 seeds (mean margin {mean_margin:+.3})"),
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_depth_sweep_shape() {
    let set = planted_rule_samples(1500, 0.15, 7);
    let cfg = TrainConfig {
        features_per_split: Some(5),
        ..TrainConfig::single_tree(None, 7)
    };
    let sweep = depth_sweep(&set, &cfg, 1..=20).unwrap();
    let best = sweep
        .iter()
        .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(b.depth.cmp(&a.depth)))
        .unwrap();
    let first = sweep[0].accuracy;
    let deep_ok = sweep
        .iter()
        .filter(|p| p.depth >= 15)
        .all(|p| p.accuracy <= best.accuracy + 0.01);
    let ok = first < best.accuracy && deep_ok;
    let deep: Vec<String> = sweep
        .iter()
        .filter(|p| p.depth >= 15)
        .map(|p| format!("{:.3}", p.accuracy))
        .collect();
    report(
        7,
        ok,
        &format!(
            "depth 1 {first:.3} < best {:.3} at depth {}; depths 15-20 {deep:?}",
            best.accuracy, best.depth
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

/// Runs only when `FOOTPRINT_IRA_CONFIG` names a pipeline config for the
/// public English archive. Results are reported against the target bands
/// but never fail the build.
#[test]
fn criterion_8_real_archive_bands() {
    let Some(path) = std::env::var_os("FOOTPRINT_IRA_CONFIG").map(PathBuf::from) else {
        let _ = std::io::stderr().write_all(b"SKIP criterion 8: FOOTPRINT_IRA_CONFIG not set (dataset-conditional)\n");
        return;
    };
    let cfg = PipelineConfig::load(&path).unwrap();
    let out = Pipeline::new(cfg).unwrap().run().unwrap().report;
    let within = |v: f64, target: f64, tol: f64| (v - target).abs() <= tol;
    let c = &out.census;
    let checks = [
        ("seed 1813 ±2%", within(c.seed_labeled as f64, 1813.0, 1813.0 * 0.02)),
        (
            "labeled 2408 ±2%",
            within(c.labeled_after_propagation as f64, 2408.0, 2408.0 * 0.02),
        ),
        (
            "uncategorized 424 ±2%",
            within(c.uncategorized_after_propagation as f64, 424.0, 424.0 * 0.02),
        ),
        ("accuracy 0.88 ±0.04", within(out.cv.accuracy, 0.88, 0.04)),
    ];
    let agreements: BTreeSet<String> = out
        .agreements
        .iter()
        .map(|a| format!("{}={:.3}", a.reference, a.agreement))
        .collect();
    let rechecks: BTreeSet<String> = out
        .rechecks
        .iter()
        .map(|r| format!("{}={:.3}", r.name, r.report.accuracy))
        .collect();
    let line = format!(
        "{} criterion 8 (not gating): {:?}; agreements {agreements:?}; rechecks {rechecks:?}\n",
        if checks.iter().all(|c| c.1) { "PASS" } else { "FAIL" },
        checks
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}
