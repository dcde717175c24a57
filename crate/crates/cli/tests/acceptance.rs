//! Acceptance suite: one pass/fail line per criterion.
//!
//! A1, A2 and A6 are quick. A3, A4, A5 and A7 share one reference run
//! (2000 synthetic images, 30 epochs) and take several minutes in total.
//! The process exits non-zero when a criterion fails that is not listed in
//! `EXPECTED_FAIL`.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use patchscope::dataset::quantize_dataset;
use patchscope_core::evaluation::{
    build_patch_datasets, generate_dataset, images_and_labels, localization_study, probe_jaccard, train_secondary,
    train_validation_split, LabeledImage, SecondaryConfig, POSITIVE,
};
use patchscope_core::explain::ExplainConfig;
use patchscope_core::network::{reference_architecture, train, Checkpoint, TrainConfig, REFERENCE_INPUT};
use patchscope_core::{Metric, NetworkSpec, Rng};

const SEED: u64 = 2024;
const EXPECTED_FAIL: &[&str] = &["A3", "A4"];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: &'static str, pass: bool, detail: String, elapsed: Duration) -> Outcome {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let note = match (pass, EXPECTED_FAIL.contains(&id)) {
        (false, true) => " [expected failure, see README \"Known gaps\"]",
        (true, true) => " [listed as an expected failure but passed]",
        _ => "",
    };
    println!("{id} {verdict} {detail} ({:.1}s){note}", elapsed.as_secs_f64());
    Outcome { id, pass, detail }
}

fn a1() -> Outcome {
    let t = Instant::now();
    let adjoint = oracles::adjoint_worst(100, 1);
    let (var_err, pearson_err) = oracles::stats_worst(100, 2);
    let (grad, checked) = oracles::gradient_worst(20, 40);
    let elapsed = t.elapsed();
    let pass = adjoint < 1e-4 && var_err <= 1e-9 && pearson_err <= 1e-9 && grad < 1e-2 && elapsed.as_secs_f64() < 30.0;
    let detail = format!(
        "adjoint_rel={adjoint:.2e} var_rel={var_err:.2e} pearson_abs={pearson_err:.2e} grad_rel={grad:.2e} ({checked} params)"
    );
    report("A1", pass, detail, elapsed)
}

fn a2() -> Outcome {
    let t = Instant::now();
    let checks: [(&str, fn(usize, u64) -> Result<(), String>); 5] = [
        ("switches", oracles::check_switches),
        ("unpool", oracles::check_unpool),
        ("eps_monotone", oracles::check_eps_monotone),
        ("rank", oracles::check_rank),
        ("jaccard", oracles::check_jaccard),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in checks.iter().enumerate() {
        if let Err(e) = check(300, 100 + k as u64) {
            failed.push(format!("{name}: {e}"));
        }
    }
    let elapsed = t.elapsed();
    let pass = failed.is_empty() && elapsed.as_secs_f64() < 60.0;
    let detail = if failed.is_empty() {
        "5 properties x 300 cases".to_string()
    } else {
        failed.join("; ")
    };
    report("A2", pass, detail, elapsed)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    oracles::oracle_pearson(&average_ranks(x), &average_ranks(y))
}

struct Reference {
    checkpoints: Vec<Checkpoint>,
    validation: Vec<LabeledImage>,
}

fn reference_run() -> Reference {
    let t = Instant::now();
    let data = quantize_dataset(generate_dataset(2000, &mut Rng::new(SEED, 0)).unwrap()).unwrap();
    let (tr, va) = train_validation_split(&data);
    let (images, labels) = images_and_labels(tr);
    let net = NetworkSpec::init(REFERENCE_INPUT, &reference_architecture(), &mut Rng::new(SEED, 1)).unwrap();
    let out = train(&net, &images, &labels, &TrainConfig::default(), &mut Rng::new(SEED, 2)).unwrap();
    println!("reference run: {} train / {} validation images, 30 epochs ({:.1}s)", tr.len(), va.len(), t.elapsed().as_secs_f64());
    Reference {
        checkpoints: out.checkpoints,
        validation: va.to_vec(),
    }
}

fn a3(r: &Reference) -> Outcome {
    let t = Instant::now();
    let cfg = ExplainConfig::default();
    let probes: Vec<_> = r.validation.iter().take(8).map(|d| d.image.clone()).collect();
    let mut epochs = Vec::new();
    let mut means = Vec::new();
    for cp in r.checkpoints.iter().filter(|c| c.epoch >= 1) {
        let js: Vec<f64> = probes.iter().map(|p| probe_jaccard(&cp.network, p, &cfg).unwrap()).collect();
        epochs.push(cp.epoch as f64);
        means.push(js.iter().sum::<f64>() / js.len() as f64);
    }
    let rho = spearman(&epochs, &means);
    let (first, last) = (means[0], *means.last().unwrap());
    let pass = rho > 0.3 && last - first >= 0.1;
    let detail = format!("spearman={rho:.3} J(1)={first:.3} J(30)={last:.3} gain={:.3}", last - first);
    report("A3", pass, detail, t.elapsed())
}

fn secondary_pair(cp: &Checkpoint, images: &[LabeledImage], seed: u64) -> (f64, f64) {
    let mut cfg = ExplainConfig::default();
    cfg.perturbation.seed = seed;
    let sets = build_patch_datasets(&cp.network, images, &[Metric::ActPrecision, Metric::ActOutCorr], &cfg).unwrap();
    let sc = SecondaryConfig::default();
    let acc: Vec<f64> = sets
        .iter()
        .enumerate()
        .map(|(k, s)| train_secondary(s, &sc, &mut Rng::new(seed, k as u64)).unwrap())
        .collect();
    (acc[0], acc[1])
}

fn a4(r: &Reference) -> Outcome {
    let t = Instant::now();
    let images = &r.validation[..120];
    let mut agree = 0;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let mut ok = true;
        let mut worst_margin = f64::INFINITY;
        let mut min_prec = f64::INFINITY;
        for cp in r.checkpoints.iter().filter(|c| (1..=5).contains(&c.epoch)) {
            let (prec, corr) = secondary_pair(cp, images, seed);
            ok &= prec >= 0.75 && prec >= corr;
            worst_margin = worst_margin.min(prec - corr);
            min_prec = min_prec.min(prec);
        }
        agree += ok as usize;
        parts.push(format!("seed{seed}:{}(min_prec={min_prec:.3},min_margin={worst_margin:+.3})", if ok { "ok" } else { "no" }));
    }
    let detail = format!("{agree}/3 seeds agree {}", parts.join(" "));
    report("A4", agree >= 2, detail, t.elapsed())
}

fn a5(r: &Reference) -> Outcome {
    let t = Instant::now();
    let positives: Vec<LabeledImage> =
        r.validation.iter().filter(|d| d.label == POSITIVE && d.mask.is_some()).take(20).cloned().collect();
    let net = &r.checkpoints.last().unwrap().network;
    let loc = localization_study(net, &positives, &Metric::ALL, &[5], &ExplainConfig::default(), 1).unwrap();
    let ratio = |m: Metric| loc.iter().find(|l| l.metric == m).unwrap().mean_ratio;
    let prec = ratio(Metric::ActPrecision);
    let baselines = [Metric::ActSum, Metric::ActVar, Metric::WeightSum, Metric::WeightVar];
    let pass = prec >= 0.7 && baselines.iter().all(|&m| prec >= ratio(m) - 0.05);
    let mut detail = format!("images={} act-precision={prec:.3}", positives.len());
    for m in baselines.into_iter().chain([Metric::ActOutCorr]) {
        detail.push_str(&format!(" {}={:.3}", m.name(), ratio(m)));
    }
    report("A5", pass, detail, t.elapsed())
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_patchscope")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn a6() -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let result = (|| -> Result<String, String> {
        for run in ["train_a", "train_b"] {
            cli(&["train", "--synthetic", "60", "--epochs", "2", "--seed", "5", "--out", &p(run)])?;
        }
        let (ta, tb) = (dir_bytes(Path::new(&p("train_a"))), dir_bytes(Path::new(&p("train_b"))));
        if ta != tb {
            return Err("train outputs differ".into());
        }
        let weights = p("train_a/epoch_002.nnwc");
        let manifest = p("train_a/network.manifest");
        let image = p("train_a/data/img_0001.ppm");
        for out in ["explain_a", "explain_b"] {
            cli(&[
                "explain", "--weights", &weights, "--manifest", &manifest, "--image", &image, "--metric", "all", "--out",
                &p(out),
            ])?;
        }
        let (ea, eb) = (dir_bytes(Path::new(&p("explain_a"))), dir_bytes(Path::new(&p("explain_b"))));
        if ea != eb {
            return Err("explain outputs differ".into());
        }
        Ok(format!("train {} files identical, explain {} files identical", ta.len(), ea.len()))
    })();
    match result {
        Ok(d) => report("A6", true, d, t.elapsed()),
        Err(e) => report("A6", false, e, t.elapsed()),
    }
}

fn a7(r: &Reference) -> Outcome {
    let t = Instant::now();
    let net = &r.checkpoints.last().unwrap().network;
    let set = build_patch_datasets(net, &r.validation[..120], &[Metric::ActPrecision], &ExplainConfig::default())
        .unwrap()
        .remove(0);
    let sc = SecondaryConfig::default();
    let accs: Vec<f64> = (0..10u64)
        .map(|k| {
            let shuffled = set.with_shuffled_labels(&mut Rng::new(SEED + k, 7));
            train_secondary(&shuffled, &sc, &mut Rng::new(k, 9)).unwrap()
        })
        .collect();
    let pass = accs.iter().all(|a| (a - 0.5).abs() <= 0.15);
    let (lo, hi) = accs.iter().fold((1.0f64, 0.0f64), |(l, h), &a| (l.min(a), h.max(a)));
    let detail = format!("{} patches, 10 reshuffles in [{lo:.3}, {hi:.3}]", set.len());
    report("A7", pass, detail, t.elapsed())
}

fn main() {
    let mut outcomes = vec![a1(), a2(), a6()];
    let reference = reference_run();
    outcomes.extend([a3(&reference), a4(&reference), a5(&reference), a7(&reference)]);
    outcomes.sort_by_key(|o| o.id);

    println!("\nsummary");
    let mut unexpected = Vec::new();
    for o in &outcomes {
        println!("  {} {}  {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !EXPECTED_FAIL.contains(&o.id) {
            unexpected.push(o.id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
