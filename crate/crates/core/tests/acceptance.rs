//! Exit criteria. Runs every check, prints one line per criterion and exits
//! nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use zsmmd::classifier::PixelClassifier;
use zsmmd::cli::config::ExperimentConfig;
use zsmmd::cli::report::{results_csv, RESULT_HEADER};
use zsmmd::cli::{run_experiment, ExperimentOutput};
use zsmmd::generator::{ClassEmbedding, GeneratorModel};
use zsmmd::kernel::{mmd2_raw, zs_mmd2_raw, FeatureSet, KernelSpec, Origin};
use zsmmd::metrics::hiou;
use zsmmd::rng::{gaussian_sample, SeededRng};
use zsmmd::tensor::{Matrix, OptimizerConfig, OptimizerState};
use zsmmd::trainer::{select_high_confidence, AblationMode};

const ESTIMATOR_INSTANCES: usize = 1000;
const ESTIMATOR_TOL: f64 = 1e-12;
const ESTIMATOR_LIMIT: Duration = Duration::from_secs(10);

const GRADIENT_INSTANCES: usize = 200;
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_LIMIT: Duration = Duration::from_secs(30);

const HIOU_TOL: f64 = 0.05;
const HIOU_LIMIT: Duration = Duration::from_secs(1);

const GMMN_STEPS: usize = 2000;
const GMMN_VARIANCE: f64 = 0.1;
const GMMN_MEAN: [f64; 2] = [1.5, -0.5];
const GMMN_MIN_REDUCTION: f64 = 0.90;
const GMMN_MEAN_TOL: f64 = 0.15;
const GMMN_LIMIT: Duration = Duration::from_secs(120);

const SELECTION_CASES: u32 = 512;
const SELECTION_LIMIT: Duration = Duration::from_secs(5);

const E2E_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const E2E_UNSEEN: usize = 2;
const E2E_LIMIT: Duration = Duration::from_secs(300);

const ABLATION_UNSEEN: [usize; 3] = [2, 4, 6];
const ABLATION_LIMIT: Duration = Duration::from_secs(600);

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, elapsed: Duration) -> (bool, String) {
    (
        elapsed <= limit,
        format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

fn estimator_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = SeededRng::new(1);
    let (mut worst_gap, mut lowest) = (0.0f64, f64::INFINITY);
    for _ in 0..ESTIMATOR_INSTANCES {
        let d = 1 + rng.below(4);
        let (n, m) = (1 + rng.below(8), 1 + rng.below(8));
        let a = random_matrix(&mut rng, n, d, 2.0);
        let b = random_matrix(&mut rng, m, d, 2.0);
        let spec = random_kernel(&mut rng);
        let w = rng.uniform(0.01, 1.0);
        let plain = mmd2_raw(&a, &b, &spec).unwrap();
        let weighted = zs_mmd2_raw(&a, &vec![w; n], &b, &spec).unwrap();
        worst_gap = worst_gap.max((plain - weighted).abs());
        lowest = lowest.min(plain).min(weighted);
    }
    let (fast, time) = within(ESTIMATOR_LIMIT, start.elapsed());
    verdict(
        worst_gap <= ESTIMATOR_TOL && lowest >= -ESTIMATOR_TOL && fast,
        format!("{ESTIMATOR_INSTANCES} instances, max gap {worst_gap:.2e}, min value {lowest:.2e}, {time}"),
    )
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let mut rng = SeededRng::new(2);
    let mut worst = [0.0f64; 5];
    for _ in 0..GRADIENT_INSTANCES {
        worst[0] = worst[0].max(mmd_grad_instance(&mut rng));
        worst[1] = worst[1].max(zs_grad_instance(&mut rng));
        let depth = 2 + rng.below(2);
        let dims: Vec<usize> = (0..=depth).map(|_| 1 + rng.below(6)).collect();
        let batch = 1 + rng.below(6);
        let (p, x) = mlp_grad_instance(&mut rng, &dims, batch);
        worst[2] = worst[2].max(p);
        worst[3] = worst[3].max(x);
        worst[4] = worst[4].max(ce_grad_instance(&mut rng));
    }
    let (fast, time) = within(GRADIENT_LIMIT, start.elapsed());
    verdict(
        worst.iter().all(|&e| e <= GRADIENT_TOL) && fast,
        format!(
            "{GRADIENT_INSTANCES} instances each, max rel err mmd2 {:.1e} zs_mmd2 {:.1e} mlp params {:.1e} mlp input {:.1e} cross-entropy {:.1e}, {time}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn metric_oracle() -> Verdict {
    let start = Instant::now();
    let misses: Vec<String> = HIOU_TABLE
        .iter()
        .filter_map(|&(table, k, model, seen, unseen, printed)| {
            let h = hiou(seen, unseen).unwrap();
            ((h - printed).abs() > HIOU_TOL).then(|| {
                format!(
                    "{table} K={k} {model}: {seen} & {unseen} gives {h:.2}, table says {printed}"
                )
            })
        })
        .collect();
    let (fast, time) = within(HIOU_LIMIT, start.elapsed());
    let matched = HIOU_TABLE.len() - misses.len();
    let mut detail = format!(
        "{matched}/{} triples within {HIOU_TOL}, {time}",
        HIOU_TABLE.len()
    );
    for m in &misses {
        detail += &format!("\n      {m}");
    }
    verdict(misses.is_empty() && fast, detail)
}

fn gaussian_target(rng: &mut SeededRng, n: usize) -> Matrix<f64> {
    let mut m = gaussian_sample::<f64>(rng, n, 2);
    for r in 0..n {
        for (v, mu) in m.row_mut(r).iter_mut().zip(GMMN_MEAN) {
            *v = mu + GMMN_VARIANCE.sqrt() * *v;
        }
    }
    m
}

fn gmmn_sanity() -> Verdict {
    let start = Instant::now();
    let spec = KernelSpec::default();
    let root = SeededRng::new(0);
    let mut gen = GeneratorModel::<f64>::new(2, 2, &mut root.fork(1)).unwrap();
    let emb = ClassEmbedding::new(0, vec![1.0, 0.0]).unwrap();
    let held_out = gaussian_target(&mut root.fork(2), 1000);
    // the same evaluation noise before and after training
    let measure = |g: &GeneratorModel<f64>| {
        let out = g.generate(&emb, &mut root.fork(3), 1000).unwrap().features;
        (
            mmd2_raw(&held_out, &out, &spec).unwrap(),
            out.column_means(),
        )
    };
    let (before, _) = measure(&gen);
    let mut opt = OptimizerState::new(OptimizerConfig::adam(1e-3)).unwrap();
    let (mut data, mut noise) = (root.fork(4), root.fork(5));
    for _ in 0..GMMN_STEPS {
        let real = FeatureSet::new(gaussian_target(&mut data, 64), 0, Origin::Backbone).unwrap();
        gen.train_seen(&emb, &real, &mut opt, &mut noise, 64, &spec)
            .unwrap();
    }
    let (after, mean) = measure(&gen);
    let reduction = 1.0 - after / before;
    let offset = ((mean[0] - GMMN_MEAN[0]).powi(2) + (mean[1] - GMMN_MEAN[1]).powi(2)).sqrt();
    let (fast, time) = within(GMMN_LIMIT, start.elapsed());
    verdict(
        reduction >= GMMN_MIN_REDUCTION && offset <= GMMN_MEAN_TOL && fast,
        format!(
            "held-out mmd2 {before:.3e} -> {after:.3e} ({:.2}% drop), mean offset {offset:.3}, {time}",
            100.0 * reduction
        ),
    )
}

fn selection_soundness() -> Verdict {
    let start = Instant::now();
    let config = Config {
        cases: SELECTION_CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = (
        any::<u64>(),
        2usize..6,
        1usize..5,
        1usize..5,
        1usize..64,
        0.0f64..1.5,
        0.5f64..400.0,
    );
    let outcome = runner.run(&strategy, |(seed, classes, d_e, d_f, n, tau, sharpen)| {
        let mut rng = SeededRng::new(seed);
        let gen = GeneratorModel::<f64>::new(d_e, d_f, &mut rng).unwrap();
        let mut clf = PixelClassifier::<f64>::new(d_f, classes, &mut rng).unwrap();
        for l in clf.mlp_mut().layers_mut() {
            l.weight.scale(sharpen);
        }
        let target = rng.below(classes);
        let emb =
            ClassEmbedding::new(target, (0..d_e).map(|_| rng.standard_normal()).collect()).unwrap();
        let set = select_high_confidence(&gen, &clf, &emb, &mut rng, n, tau).unwrap();
        prop_assert!(set.len() <= n);
        if tau >= 1.0 {
            prop_assert!(set.is_empty());
        }
        if !set.is_empty() {
            let again = clf.classify(&set.features).unwrap();
            for i in 0..set.len() {
                prop_assert_eq!(again.labels[i], target);
                prop_assert!(set.weights[i] > tau && set.weights[i] < 1.0);
                prop_assert_eq!(again.confidence[i], set.weights[i]);
            }
        }
        Ok(())
    });
    let (fast, time) = within(SELECTION_LIMIT, start.elapsed());
    match outcome {
        Ok(()) => verdict(fast, format!("{SELECTION_CASES} generated cases, {time}")),
        Err(e) => verdict(false, format!("{e}")),
    }
}

fn e2e_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.seed = seed;
    cfg.experiment.unseen = vec![E2E_UNSEEN];
    cfg.experiment.modes = vec![AblationMode::NoRecursive, AblationMode::ConfidenceWeighted];
    cfg
}

fn unseen_miou(out: &ExperimentOutput, mode: AblationMode) -> f64 {
    let row = out.rows.iter().find(|r| r.mode == mode).unwrap();
    row.unseen.as_ref().unwrap().miou
}

fn end_to_end() -> Verdict {
    let cfg = e2e_config(0);
    let shape = (
        cfg.task.classes,
        cfg.task.embed_dim,
        cfg.task.feature_dim,
        cfg.train.epochs,
    );
    if shape != (8, 16, 32, 20) {
        return verdict(
            false,
            format!("default task (C, d_e, d_f, epochs) is {shape:?}"),
        );
    }
    let mut margins = Vec::new();
    let mut lines = Vec::new();
    let mut seed0_time = Duration::ZERO;
    for seed in E2E_SEEDS {
        let start = Instant::now();
        let out = run_experiment(&e2e_config(seed)).unwrap();
        if seed == 0 {
            seed0_time = start.elapsed();
        }
        let base = unseen_miou(&out, AblationMode::NoRecursive);
        let rec = unseen_miou(&out, AblationMode::ConfidenceWeighted);
        margins.push(rec - base);
        lines.push(format!(
            "seed {seed}: baseline {base:.2}, confidence-weighted {rec:.2}, margin {:+.2}",
            rec - base
        ));
    }
    let mut sorted = margins.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let (fast, time) = within(E2E_LIMIT, seed0_time);
    let mut detail = format!("median unseen mIoU margin {median:+.2}, seed 0 run {time}");
    for l in lines {
        detail += &format!("\n      {l}");
    }
    verdict(median >= 0.0 && fast, detail)
}

fn ablation_harness() -> Verdict {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.unseen = ABLATION_UNSEEN.to_vec();
    cfg.experiment.modes = vec![AblationMode::EqualWeight, AblationMode::ConfidenceWeighted];
    let warmup = cfg.train.warmup_epochs;
    let out = run_experiment(&cfg).unwrap();
    let mut problems = Vec::new();

    for k in ABLATION_UNSEEN {
        let cells: Vec<_> = out.histories.iter().filter(|c| c.k == k).collect();
        if cells.len() != 2 {
            problems.push(format!("K={k}: {} histories", cells.len()));
            continue;
        }
        let (a, b) = (&cells[0].history.records, &cells[1].history.records);
        if a.len() < warmup || b.len() < warmup || a[..warmup] != b[..warmup] {
            problems.push(format!("K={k}: warmup histories differ"));
        }
    }

    let csv_bytes = results_csv(&out.rows).unwrap();
    let mut reader = csv::Reader::from_reader(csv_bytes.as_slice());
    let header: Vec<String> = reader
        .headers()
        .unwrap()
        .iter()
        .map(str::to_owned)
        .collect();
    if header != RESULT_HEADER {
        problems.push(format!("header {header:?}"));
    }
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let expected: Vec<(String, &str)> = ABLATION_UNSEEN
        .iter()
        .flat_map(|k| [(k.to_string(), "Equal Weight"), (k.to_string(), "Final")])
        .collect();
    let got: Vec<(String, &str)> = rows
        .iter()
        .map(|r| (r[0].to_owned(), r.get(1).unwrap()))
        .collect();
    if got != expected {
        problems.push(format!("rows {got:?}"));
    }
    for r in &rows {
        let (seen, unseen): (f64, f64) = (r[4].parse().unwrap(), r[7].parse().unwrap());
        let h: f64 = r[11].parse().unwrap();
        if (h - hiou(seen, unseen).unwrap()).abs() > 1e-9 {
            problems.push(format!(
                "K={} {}: hIoU column {h} inconsistent",
                &r[0], &r[1]
            ));
        }
    }

    let (fast, time) = within(ABLATION_LIMIT, start.elapsed());
    let detail = if problems.is_empty() {
        format!("{} paired rows over K={ABLATION_UNSEEN:?}, warmup of {warmup} epochs identical, {time}", rows.len())
    } else {
        format!("{}, {time}", problems.join("; "))
    };
    verdict(problems.is_empty() && fast, detail)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["first", "second"] {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.modes = AblationMode::ALL.to_vec();
        cfg.experiment.seed = 7;
        cfg.experiment.out_dir = dir.path().join(run);
        run_experiment(&cfg).unwrap().write(&cfg).unwrap();
        files.push(std::fs::read(cfg.experiment.out_dir.join("results.csv")).unwrap());
    }
    verdict(
        files[0] == files[1],
        format!(
            "two runs at seed 7, {} bytes each, identical: {}",
            files[0].len(),
            files[0] == files[1]
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("estimator equivalence", estimator_equivalence),
        ("gradient fidelity", gradient_fidelity),
        ("metric oracle", metric_oracle),
        ("moment-matching generator sanity", gmmn_sanity),
        ("selection soundness", selection_soundness),
        ("end-to-end zero-shot run", end_to_end),
        ("ablation harness", ablation_harness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
