//! One line per acceptance criterion. Criteria that need long training read
//! the reports committed under `results/`; set `FTN_ACCEPTANCE_LIVE=1` to
//! retrain the approximation units instead. The target exits non-zero on a
//! failing criterion only with `FTN_ACCEPTANCE_STRICT=1`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ftn_core::data::{
    decode_records, derive_rng, encode_records, fit_whitening, gen_pool_batch, load_cifar, preprocess, CifarKind,
    PoolTarget, Regime, Split, EPOCH_BATCHES, IMAGE_BYTES,
};
use ftn_core::lstm_pool::{ModulationActivation, PoolSharingMode, DEFAULT_WG_EPSILON};
use ftn_core::nn::{LayerSpec, Mode, Model, NetworkSpec, PoolChoice};
use ftn_core::optim::Nesterov;
use ftn_core::real::gemm;
use ftn_core::{Tape, Tensor};
use ftn_experiments::approx::{read_approx_report, run_approx, ApproxReport};
use ftn_experiments::config::{GradcheckConfig, UnitSource};
use ftn_experiments::{analyze, gradcheck, ExperimentConfig, ExperimentKind};
use rand::Rng;

const GRADCHECK_BUDGET_SECS: f64 = 60.0;
const PROPOSITION_SEQUENCES: usize = 10_000;
const ADVERSARIAL_STEPS: usize = 100_000;
const MAX_APPROX_MAE: f64 = 1.0;
const AVG_APPROX_MAE: f64 = 0.5;
const APPROX_CPU_SECS_PER_LEN: f64 = 1800.0;
const TABLE2_MARGIN: f64 = 0.01;
const SEEDS: [u64; 3] = [0, 1, 2];
const WHITE_OFFDIAG: f64 = 0.05;
const SPARSITY_TOL: f64 = 0.02;
const LOCATIONS_MAX: usize = 8;
const RESPONSE_CORR: f64 = 0.99;
const RESPONSE_FIXED_MAX: f64 = 300.0;

type Outcome = Result<String, String>;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn live() -> bool {
    std::env::var("FTN_ACCEPTANCE_LIVE").is_ok_and(|v| v == "1")
}

fn data_root() -> Option<PathBuf> {
    let root = std::env::var_os("FTN_DATA_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("/root/data"));
    root.join("cifar-10-batches-bin/test_batch.bin").exists().then_some(root)
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(kind: ExperimentKind, file: Option<&str>, overrides: &[String]) -> ExperimentConfig {
    let path = file.map(|f| repo().join(f));
    ExperimentConfig::load(path.as_deref(), kind, overrides).expect("acceptance config")
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let g = GradcheckConfig::default();
    let rows = gradcheck::run_checks(&g, 0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst_layer = rows.iter().filter(|r| r.check != "network").map(|r| r.max_rel_error).fold(0.0, f64::max);
    let worst_net = rows.iter().filter(|r| r.check == "network").map(|r| r.max_rel_error).fold(0.0, f64::max);
    check(
        rows.iter().all(|r| r.passed) && g.rtol_layer == 1e-4 && g.rtol_network == 1e-3 && secs < GRADCHECK_BUDGET_SECS,
        format!(
            "{} checks, worst layer {worst_layer:.2e} (rtol 1e-4), worst network {worst_net:.2e} (rtol 1e-3), {secs:.1}s",
            rows.len()
        ),
    )
}

fn c2_proposition() -> Outcome {
    let psi = ModulationActivation::Relu;
    let mut rng = derive_rng(0, "proposition", &[]);
    let mut checked = 0;
    for len in [4usize, 9, 16] {
        let k = (len as f64).sqrt() as usize;
        let n = PROPOSITION_SEQUENCES / 3 + 1;
        let mut p: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        p[9] = -1.0;
        p[11] = 0.0;
        let x: Vec<f64> = (0..n * len).map(|_| rng.random_range(0.0..300.0)).collect();
        let mut tape = Tape::<f64>::new();
        let xv = tape.param(Tensor::new(vec![n, 1, k, k], x).unwrap());
        let pv = tape.param(Tensor::new(vec![12], p).unwrap());
        let y = tape.lstm_pool(xv, pv, k, k, psi).map_err(|e| e.to_string())?;
        if tape.value(y).data().iter().any(|&v| v != 0.0) {
            return Err(format!("L={len}: non-zero output with w_g = -1"));
        }
        let w: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let wv = tape.constant(Tensor::new(vec![n, 1, 1, 1], w).unwrap());
        let s = tape.mul(y, wv).unwrap();
        let loss = tape.mean(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        if grads.get(pv).unwrap().data().iter().any(|&g| g != 0.0) {
            return Err(format!("L={len}: non-zero parameter gradient {:?}", grads.get(pv).unwrap().data()));
        }
        checked += n;
    }

    // an optimizer pushed straight at w_g < 0 and b_g < 0
    let mut model = Model::<f64>::build(&NetworkSpec::single_unit(3, psi), 1).unwrap();
    let mut opt = Nesterov::for_model(&model, 0.5, 0.9).unwrap();
    let mut push = vec![0.0; 12];
    push[9] = 10.0;
    push[11] = 10.0;
    let mut min_wg = f64::INFINITY;
    let mut min_bg = f64::INFINITY;
    for step in 0..ADVERSARIAL_STEPS {
        let mut tape = Tape::<f64>::new();
        let x: Vec<f64> = (0..8 * 9).map(|_| rng.random_range(0.0..300.0)).collect();
        let xv = tape.constant(Tensor::new(vec![8, 1, 3, 3], x).unwrap());
        let pv = model.bind(&mut tape, true);
        let y = model.forward_with(&mut tape, xv, &pv, Mode::Eval).map_err(|e| e.to_string())?;
        let out = tape.mean(y).unwrap();
        let dir = tape.constant(Tensor::new(vec![12], push.clone()).unwrap());
        let lin = tape.mul(pv[0], dir).unwrap();
        let lin = tape.mean(lin).unwrap();
        let loss = tape.add(out, lin).unwrap();
        let mut g = tape.backward(loss).unwrap();
        let grads = vec![g.take(pv[0]).unwrap()];
        opt.step_model(&mut model, &grads, DEFAULT_WG_EPSILON).unwrap();
        let p = model.params()[0].value.data();
        min_wg = min_wg.min(p[9]);
        min_bg = min_bg.min(p[11]);
        if p[9] < DEFAULT_WG_EPSILON || p[11] < 0.0 {
            return Err(format!("step {step}: w_g {} b_g {}", p[9], p[11]));
        }
    }
    check(
        true,
        format!("{checked} sequences exactly zero; {ADVERSARIAL_STEPS} adversarial steps, min w_g {min_wg:.1e}, min b_g {min_bg:.1e}"),
    )
}

/// Seconds spent on each region length, from a run's timing.csv.
fn seconds_per_len(dir: &Path) -> Vec<(String, f64)> {
    let text = std::fs::read_to_string(dir.join("timing.csv")).unwrap_or_default();
    let mut out: Vec<(String, f64)> = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let len = f[0].split('r').next().unwrap_or("").to_string();
        let t: f64 = f[2].parse().unwrap_or(0.0);
        match out.last_mut() {
            Some(last) if last.0 == len => last.1 = t,
            _ => out.push((len, t)),
        }
    }
    let mut prev = 0.0;
    for e in &mut out {
        let end = e.1;
        e.1 = end - prev;
        prev = end;
    }
    out
}

fn approx_report(target: &str) -> Result<(ApproxReport, PathBuf), String> {
    if live() {
        let dir = std::env::temp_dir().join(format!("ftn-acceptance-approx-{target}"));
        let cfg = config(
            ExperimentKind::Approx,
            Some("configs/approx.json"),
            &[format!("approx.target={target}"), format!("out_dir={:?}", dir.to_str().unwrap())],
        );
        let r = run_approx(&cfg).map_err(|e| e.to_string())?;
        Ok((r, dir))
    } else {
        let dir = repo().join(format!("results/approx_{target}"));
        let r = read_approx_report(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok((r, dir))
    }
}

fn approx_criterion(target: &str, limit: f64) -> Outcome {
    let (report, dir) = approx_report(target)?;
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let a = &cfg["approx"];
    let budget_ok = a["lr"] == 0.1
        && a["momentum"] == 0.9
        && a["batch"] == 128
        && a["epochs"].as_u64().is_some_and(|e| e <= 50)
        && a["batches_per_epoch"] == 10_000
        && a["eval_batches"] == 10_000
        && a["target"] == target;
    if !budget_ok {
        return Err(format!("{} was not produced with the desk budget", dir.display()));
    }
    let times = seconds_per_len(&dir);
    let slowest = times.iter().map(|t| t.1).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for len in [4, 9, 16] {
        let Some(u) = report.units.iter().find(|u| u.len == len) else {
            return Err(format!("no unit for L={len}"));
        };
        worst = worst.max(u.test_mae.iter().copied().fold(0.0, f64::max));
        parts.push(format!(
            "L{len} {:.1e}/{:.1e}/{:.1e} (untrained {:.0})",
            u.test_mae[0], u.test_mae[1], u.test_mae[2], u.untrained_mae
        ));
    }
    check(
        worst <= limit && slowest <= APPROX_CPU_SECS_PER_LEN,
        format!(
            "MAE T1/T2/T3: {}; worst {worst:.2e} <= {limit}; slowest length {slowest:.0}s{}",
            parts.join(", "),
            if live() { " (live)" } else { " (committed report)" }
        ),
    )
}

fn c5_parameters() -> Outcome {
    let lstm = |sharing| PoolChoice::Lstm { sharing, psi: None };
    let presets: Vec<(&str, Box<dyn Fn(PoolChoice) -> NetworkSpec>)> = vec![
        ("conv_8", Box::new(|p| NetworkSpec::conv_n(8, p))),
        ("conv_16", Box::new(|p| NetworkSpec::conv_n(16, p))),
        ("vgg16x0.125", Box::new(|p| NetworkSpec::vgg16(0.125, 10, p))),
    ];
    let mut parts = Vec::new();
    for (name, make) in presets {
        let base = make(PoolChoice::Max);
        let pools = base.layers.iter().filter(|l| matches!(l, LayerSpec::Pool { .. })).count();
        let count = |s: &NetworkSpec| Model::<f32>::build(s, 0).map(|m| m.param_count()).map_err(|e| e.to_string());
        let b = count(&base)?;
        let per_layer = count(&make(lstm(PoolSharingMode::PerLayer)))?;
        let shared = count(&make(lstm(PoolSharingMode::GlobalShared)))?;
        if per_layer != b + 12 * pools || shared != b + 12 {
            return Err(format!("{name}: max {b}, per_layer {per_layer}, shared {shared}, {pools} pools"));
        }
        parts.push(format!("{name} {b} +{} (per_layer) +12 (shared)", 12 * pools));
    }
    Ok(parts.join("; "))
}

/// Mean final test error of the committed desk runs of one variant.
fn desk_mean(variant: &str) -> Result<f64, String> {
    let mut errs = Vec::new();
    for s in SEEDS {
        let p = repo().join(format!("results/classify/conv8_{variant}_s{s}/summary.json"));
        let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let cfg: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(p.with_file_name("config.json")).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let c = &cfg["classify"];
        if c["iterations"] != 15_000 || c["data"]["train_subset"] != 5000 || c["data"]["test_subset"] != 1000 {
            return Err(format!("{} is not a desk-scale run", p.display()));
        }
        errs.push(v["results"]["final_test_error"].as_f64().ok_or("missing final_test_error")?);
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn c6_table2() -> Outcome {
    let (lstm, max, avg) = (desk_mean("lstm")?, desk_mean("max")?, desk_mean("avg")?);
    check(
        lstm + TABLE2_MARGIN <= max && lstm + TABLE2_MARGIN <= avg,
        format!(
            "mean test error over 3 seeds: lstm {:.2}%, max {:.2}%, avg {:.2}% (margin >= 1 point)",
            lstm * 100.0,
            max * 100.0,
            avg * 100.0
        ),
    )
}

fn c7_shared() -> Outcome {
    let (per_layer, shared) = (desk_mean("lstm")?, desk_mean("shared")?);
    check(
        per_layer <= shared,
        format!("mean test error: per_layer {:.2}%, global_shared {:.2}%", per_layer * 100.0, shared * 100.0),
    )
}

fn fixture(split: &str) -> Vec<u8> {
    let p = repo().join(format!("crates/core/tests/fixtures/cifar10_{split}_first_record.hex"));
    let hex: String = std::fs::read_to_string(p).unwrap().split_whitespace().collect();
    (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap()).collect()
}

/// Mean absolute off-diagonal covariance of `n × d` rows.
fn mean_abs_offdiag(rows: &[f64], d: usize) -> f64 {
    let n = rows.len() / d;
    let mut mean = vec![0.0; d];
    for r in rows.chunks(d) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let centered: Vec<f64> = rows.chunks(d).flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m)).collect();
    let mut cov = vec![0.0; d * d];
    gemm(d, n, d, &centered, true, &centered, false, 0.0, &mut cov);
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += (cov[i * d + j] / n as f64).abs();
            }
        }
    }
    s / (d * d - d) as f64
}

fn c8_data() -> Outcome {
    let mut parts = Vec::new();
    for split in ["train", "test"] {
        let bytes = fixture(split);
        let recs = decode_records(&bytes, CifarKind::Cifar10, Path::new(split)).map_err(|e| e.to_string())?;
        if encode_records(&recs, CifarKind::Cifar10) != bytes {
            return Err(format!("{split} fixture does not round-trip"));
        }
    }
    let white = if let Some(root) = data_root() {
        let dir = root.join("cifar-10-batches-bin");
        for (split, name) in [(Split::Train, "train"), (Split::Test, "test")] {
            let expect = fixture(name);
            let set = load_cifar(&dir, CifarKind::Cifar10, split, Some(1)).map_err(|e| e.to_string())?;
            let px: Vec<u8> = set.image(0).iter().map(|&v| v as u8).collect();
            if set.labels[0] != expect[0] as usize || px != expect[1..] {
                return Err(format!("{name}: loader differs from fixture"));
            }
        }
        parts.push("loader byte-exact on fixtures and dataset".to_string());
        let train = load_cifar(&dir, CifarKind::Cifar10, Split::Train, Some(5000)).map_err(|e| e.to_string())?;
        let x = preprocess(&train.images, IMAGE_BYTES);
        let (t, _, _) = ftn_core::data::fit_whitening_cached(&x, IMAGE_BYTES, 0.1, &root.join("cache"))
            .map_err(|e| e.to_string())?;
        (mean_abs_offdiag(&t.apply(&x), IMAGE_BYTES), "CIFAR-10 5k")
    } else {
        parts.push("loader byte-exact on fixtures (dataset absent)".to_string());
        // correlated stand-in data of a smaller dimension
        let (n, d) = (4000, 48);
        let mut rng = derive_rng(0, "whiten", &[]);
        let mix: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x = vec![0.0; n * d];
        gemm(n, d, d, &z, false, &mix, false, 0.0, &mut x);
        let t = fit_whitening(&x, d, 0.1).map_err(|e| e.to_string())?;
        (mean_abs_offdiag(&t.apply(&x), d), "synthetic")
    };
    parts.push(format!("whitened mean |off-diagonal| {:.4} ({})", white.0, white.1));
    let mut fracs = Vec::new();
    for (regime, want) in [(Regime::T1, 0.0), (Regime::T2, 0.5), (Regime::T3, 0.8)] {
        let mut rng = derive_rng(0, "acceptance-sparsity", &[regime as u64]);
        let (mut zeros, mut total) = (0usize, 0usize);
        for _ in 0..EPOCH_BATCHES {
            let b = gen_pool_batch(9, regime, PoolTarget::Max, 128, &mut rng).map_err(|e| e.to_string())?;
            zeros += b.inputs.iter().filter(|&&v| v == 0.0).count();
            total += b.inputs.len();
        }
        let f = zeros as f64 / total as f64;
        if (f - want).abs() > SPARSITY_TOL {
            return Err(format!("{}: zero fraction {f:.4}", regime.name()));
        }
        fracs.push(format!("{} {f:.4}", regime.name()));
    }
    parts.push(format!("zero fractions {}", fracs.join(", ")));
    check(white.0 < WHITE_OFFDIAG, parts.join("; "))
}

fn c9_analyses() -> Outcome {
    let ck = repo().join("results/classify/conv8_max_s0/checkpoint.ftn");
    let (median, max, how) = if let Some(root) = data_root() {
        let out = std::env::temp_dir().join("ftn-acceptance-locations");
        let mut cfg = config(
            ExperimentKind::AnalyzeLocations,
            Some("configs/desk_classify.json"),
            &[format!("out_dir={:?}", out.to_str().unwrap())],
        );
        cfg.analyze_locations.checkpoint = ck;
        cfg.analyze_locations.data = cfg.classify.data.clone();
        cfg.analyze_locations.data.root = root.join("cifar-10-batches-bin");
        cfg.analyze_locations.data.whitening_cache = Some(root.join("cache"));
        let r = analyze::analyze_locations(&cfg).map_err(|e| e.to_string())?;
        (r.median, r.max, "live")
    } else {
        let p = repo().join("results/locations/summary.json");
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let r = &v["results"];
        (r["median"].as_f64().unwrap_or(0.0), r["max"].as_u64().unwrap_or(99) as usize, "committed report")
    };
    // the units were fitted on inputs in [0, 300]; probe them there and at the figure's scale
    let corr = |fixed_max: f64| -> Result<(f64, usize), String> {
        let out = std::env::temp_dir().join(format!("ftn-acceptance-response-{fixed_max}"));
        let mut cfg = config(ExperimentKind::AnalyzeResponse, None, &[format!("out_dir={:?}", out.to_str().unwrap())]);
        cfg.analyze_response.source = UnitSource::ApproxReport {
            dir: repo().join("results/approx_avg"),
        };
        cfg.analyze_response.fixed_max = fixed_max;
        let resp = analyze::analyze_response(&cfg).map_err(|e| e.to_string())?;
        Ok((resp.iter().map(|r| r.corr_avg).fold(f64::INFINITY, f64::min), resp.len()))
    };
    let (min_corr, units) = corr(RESPONSE_FIXED_MAX)?;
    let (small, _) = corr(1.5)?;
    check(
        median > 1.0 && max <= LOCATIONS_MAX && min_corr > RESPONSE_CORR,
        format!(
            "locations median {median}, max {max} ({how}); avg-unit response correlation >= {min_corr:.5} over {units} units \
             (fixed max {RESPONSE_FIXED_MAX}; {small:.3} at fixed max 1.5)"
        ),
    )
}

fn c10_reproducible() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str, kind, file: Option<&str>, extra: &[&str]| -> Result<Vec<u8>, String> {
        let dir = tmp.path().join(name);
        let mut o: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        o.push(format!("out_dir={:?}", dir.to_str().unwrap()));
        let cfg = config(kind, file, &o);
        ftn_experiments::run(&cfg).map_err(|e| e.to_string())?;
        std::fs::read(dir.join("metrics.csv")).map_err(|e| e.to_string())
    };
    let approx = [
        "seed=5",
        "approx.lens=[4,9]",
        "approx.epochs=3",
        "approx.batches_per_epoch=200",
        "approx.eval_batches=50",
        "approx.restarts=2",
    ];
    let a = run("a1", ExperimentKind::Approx, Some("configs/approx.json"), &approx)?;
    let b = run("a2", ExperimentKind::Approx, Some("configs/approx.json"), &approx)?;
    if a != b {
        return Err("approx metrics differ between identical runs".into());
    }
    let mut parts = vec![format!("approx metrics identical ({} bytes)", a.len())];
    if let Some(root) = data_root() {
        let root_s = format!("{:?}", root.join("cifar-10-batches-bin").to_str().unwrap());
        let cache = format!("{:?}", root.join("cache").to_str().unwrap());
        let classify = [
            "seed=7".to_string(),
            "classify.iterations=20".into(),
            "classify.eval_every=10".into(),
            "classify.data.test_subset=200".into(),
            "classify.network.pool=\"lstm\"".into(),
            format!("classify.data.root={root_s}"),
            format!("classify.data.whitening_cache={cache}"),
        ];
        let c: Vec<&str> = classify.iter().map(String::as_str).collect();
        let a = run("c1", ExperimentKind::Classify, Some("configs/desk_classify.json"), &c)?;
        let b = run("c2", ExperimentKind::Classify, Some("configs/desk_classify.json"), &c)?;
        if a != b {
            return Err("classify metrics differ between identical runs".into());
        }
        parts.push(format!("classify metrics identical ({} bytes)", a.len()));
    }
    Ok(parts.join("; "))
}

fn main() {
    // `cargo test -- --list` and friends
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 gradient correctness", c1_gradients),
        ("2 dead-unit proposition and constraint projection", c2_proposition),
        ("3 max-pool approximation", || approx_criterion("max", MAX_APPROX_MAE)),
        ("4 avg-pool approximation", || approx_criterion("avg", AVG_APPROX_MAE)),
        ("5 parameter accounting", c5_parameters),
        ("6 desk Table 2 ordering", c6_table2),
        ("7 per-layer vs shared", c7_shared),
        ("8 data pipeline", c8_data),
        ("9 analyses", c9_analyses),
        ("10 reproducibility", c10_reproducible),
    ];
    let total = criteria.len();
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {total} acceptance criteria passed", total - failed);
    // a failing criterion is a result, not a broken build; CI can opt into a hard gate
    let strict = std::env::var("FTN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
