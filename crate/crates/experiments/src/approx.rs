//! Training one pooling unit to reproduce max or average pooling on
//! synthetic sequences.

use ftn_core::data::{derive_rng, derive_seed, gen_pool_batch, PoolTarget, Regime};
use ftn_core::lstm_pool::{pool_forward, LstmPoolParams, ModulationActivation, PARAM_NAMES};
use ftn_core::nn::{loss_mae, write_checkpoint, Mode, Model, NetworkSpec};
use ftn_core::optim::{clip_total_norm, LrSchedule, Nesterov, Scheduler};
use ftn_core::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{ApproxConfig, ExperimentConfig};
use crate::error::{Result, RunError};
use crate::metrics::{fmt_float, write_table, MetricsRow, MetricsWriter};
use crate::report::ReportDir;

/// Result for one region length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxUnit {
    pub len: usize,
    pub k: usize,
    pub psi: ModulationActivation,
    pub target: PoolTarget,
    pub params: [f64; 12],
    pub untrained_mae: f64,
    pub best_val_mae: f64,
    pub epochs: usize,
    /// Test MAE on T1, T2, T3.
    pub test_mae: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub units: Vec<ApproxUnit>,
}

fn side(len: usize) -> Result<usize> {
    match len {
        4 => Ok(2),
        9 => Ok(3),
        16 => Ok(4),
        _ => Err(RunError::Config(format!("region length {len} is not one of 4, 9, 16"))),
    }
}

/// Batch-mean absolute error of the unit over a stream of synthetic batches;
/// batch `b` is drawn from `regimes[b % regimes.len()]`.
pub fn stream_mae(
    params: &[f64],
    psi: ModulationActivation,
    len: usize,
    regimes: &[Regime],
    target: PoolTarget,
    batch: usize,
    batches: usize,
    mut rng_for: impl FnMut(usize) -> rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let k = side(len)?;
    let p = Tensor::new(vec![12], params.to_vec()).map_err(|e| RunError::Other(e.to_string()))?;
    let mut total = 0.0;
    for b in 0..batches {
        let data = gen_pool_batch(len, regimes[b % regimes.len()], target, batch, &mut rng_for(b))?;
        let x = Tensor::new(vec![batch, 1, k, k], data.inputs).map_err(|e| RunError::Other(e.to_string()))?;
        let y = pool_forward(&x, &p, k, k, psi).map_err(|e| RunError::Other(e.to_string()))?;
        let err: f64 = y.data().iter().zip(&data.targets).map(|(a, t)| (a - t).abs()).sum();
        total += err / batch as f64;
    }
    Ok(total / batches as f64)
}

fn divergence(dir: &ReportDir, len: usize, epoch: usize, batch: usize, params: &[f64], msg: String) -> RunError {
    let snapshot = dir.file(&format!("divergence_L{len}.json"));
    let named: serde_json::Map<String, serde_json::Value> = PARAM_NAMES
        .iter()
        .zip(params)
        .map(|(n, v)| (n.to_string(), serde_json::json!(v)))
        .collect();
    let body = serde_json::json!({ "len": len, "epoch": epoch, "batch": batch, "params": named, "message": msg });
    let _ = dir.write_json(&format!("divergence_L{len}.json"), &body);
    RunError::Divergence {
        at: format!("L={len} epoch {epoch} batch {batch}"),
        msg,
        snapshot,
    }
}

struct Trained {
    params: [f64; 12],
    untrained: f64,
    best_val: f64,
    epochs: usize,
}

fn train_one(
    cfg: &ExperimentConfig,
    a: &ApproxConfig,
    len: usize,
    restart: usize,
    dir: &ReportDir,
    log: &mut MetricsWriter,
) -> Result<Trained> {
    let k = side(len)?;
    let seed = cfg.seed;
    let spec = NetworkSpec::single_unit(k, a.psi);
    let mut model = Model::<f64>::build(&spec, derive_seed(seed, "approx-init", &[len as u64, restart as u64]))?;
    let eps = ftn_core::lstm_pool::DEFAULT_WG_EPSILON;
    model.project_pool_constraints(eps);
    let unit = |m: &Model<f64>| m.params()[0].value.data().to_vec();

    let val = |p: &[f64]| {
        stream_mae(p, a.psi, len, &a.train_regimes, a.target, a.batch, a.eval_batches, |b| {
            derive_rng(seed, "approx-val", &[len as u64, b as u64])
        })
    };
    let untrained = val(&unit(&model))?;

    let mut opt = Nesterov::for_model(&model, a.lr, a.momentum).map_err(|e| RunError::Config(e.to_string()))?;
    let mut sched = Scheduler::new(a.schedule.clone(), a.lr).map_err(|e| RunError::Config(e.to_string()))?;
    let floor = match a.schedule {
        LrSchedule::Plateau { min_lr, .. } => Some(min_lr),
        _ => None,
    };
    let series = format!("L{len}r{restart}");
    let mut best = (untrained, unit(&model));
    let mut stale_at_floor = 0;
    let mut epochs = 0;
    let mut iteration = 0u64;
    for epoch in 0..a.epochs {
        let mut loss_sum = 0.0;
        for b in 0..a.batches_per_epoch {
            let mut rng = derive_rng(seed, "approx-train", &[len as u64, restart as u64, epoch as u64, b as u64]);
            let regime = a.train_regimes[b % a.train_regimes.len()];
            let data = gen_pool_batch(len, regime, a.target, a.batch, &mut rng)?;
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(Tensor::new(vec![a.batch, 1, k, k], data.inputs).expect("batch shape"));
            let t = tape.constant(Tensor::new(vec![a.batch], data.targets).expect("target shape"));
            let pv = model.bind(&mut tape, true);
            let y = match model.forward_with(&mut tape, x, &pv, Mode::Eval) {
                Ok(y) => y,
                Err(e) => return Err(divergence(dir, len, epoch, b, &unit(&model), e.to_string())),
            };
            let loss = loss_mae(&mut tape, y, t).map_err(|e| RunError::Other(e.to_string()))?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(divergence(dir, len, epoch, b, &unit(&model), format!("loss is {lv}")));
            }
            loss_sum += lv;
            let mut grads = tape.backward(loss).map_err(|e| RunError::Other(e.to_string()))?;
            let mut g: Vec<Tensor<f64>> = pv.iter().map(|&v| grads.take(v).expect("param grad")).collect();
            if let Some(c) = a.clip_norm {
                clip_total_norm(&mut g, c);
            }
            opt.step_model(&mut model, &g, eps).map_err(|e| RunError::Other(e.to_string()))?;
            iteration += 1;
        }
        epochs = epoch + 1;
        let v = val(&unit(&model))?;
        if !v.is_finite() {
            return Err(divergence(dir, len, epoch, a.batches_per_epoch, &unit(&model), format!("validation MAE is {v}")));
        }
        log.push(&MetricsRow {
            series: series.clone(),
            iteration,
            epoch: epoch as u64,
            train_loss: loss_sum / a.batches_per_epoch as f64,
            val_metric: Some(v),
            lr: opt.lr,
        })?;
        let improved = v < best.0;
        if improved {
            best = (v, unit(&model));
        }
        let at_floor = floor.is_some_and(|f| opt.lr <= f);
        opt.lr = sched.on_validation(v);
        if at_floor {
            stale_at_floor = if improved { 0 } else { stale_at_floor + 1 };
            if a.stop_after_floor.is_some_and(|n| stale_at_floor >= n) {
                break;
            }
        }
    }

    Ok(Trained {
        params: best.1.try_into().expect("12 parameters"),
        untrained,
        best_val: best.0,
        epochs,
    })
}

fn fit_len(cfg: &ExperimentConfig, a: &ApproxConfig, len: usize, dir: &ReportDir, log: &mut MetricsWriter) -> Result<ApproxUnit> {
    let k = side(len)?;
    let mut best: Option<Trained> = None;
    for r in 0..a.restarts {
        let t = train_one(cfg, a, len, r, dir, log)?;
        if best.as_ref().is_none_or(|b| t.best_val < b.best_val) {
            best = Some(t);
        }
    }
    let best = best.expect("at least one restart");
    let mut model = Model::<f64>::build(&NetworkSpec::single_unit(k, a.psi), 0)?;
    model.params_mut()[0].value.data_mut().copy_from_slice(&best.params);
    write_checkpoint(&model, &dir.file(&format!("unit_L{len}.ftn")))?;
    let mut test_mae = [0.0; 3];
    for (ri, regime) in Regime::ALL.into_iter().enumerate() {
        test_mae[ri] = stream_mae(&best.params, a.psi, len, &[regime], a.target, a.batch, a.eval_batches, |b| {
            derive_rng(cfg.seed, "approx-test", &[len as u64, ri as u64, b as u64])
        })?;
    }
    Ok(ApproxUnit {
        len,
        k,
        psi: a.psi,
        target: a.target,
        params: best.params,
        untrained_mae: best.untrained,
        best_val_mae: best.best_val,
        epochs: best.epochs,
        test_mae,
    })
}

pub fn run_approx(cfg: &ExperimentConfig) -> Result<ApproxReport> {
    let a = &cfg.approx;
    let dir = ReportDir::create(cfg)?;
    let mut log = MetricsWriter::create(&dir.path)?;
    let mut units = Vec::new();
    for &len in &a.lens {
        units.push(fit_len(cfg, a, len, &dir, &mut log)?);
    }
    let target = match a.target {
        PoolTarget::Max => "max",
        PoolTarget::Avg => "avg",
    };
    let mut rows = Vec::new();
    for u in &units {
        for (ri, regime) in Regime::ALL.into_iter().enumerate() {
            rows.push(vec![
                u.len.to_string(),
                target.to_string(),
                regime.name().to_string(),
                fmt_float(u.test_mae[ri]),
                fmt_float(u.untrained_mae),
            ]);
        }
    }
    write_table(&dir.file("approx.csv"), &["len", "target", "regime", "mae", "untrained_mae"], &rows)?;
    let report = ApproxReport { units };
    dir.write_summary(cfg, serde_json::to_value(&report).expect("report serializes"))?;
    Ok(report)
}

/// The trained units recorded in an approximation run's summary.
pub fn read_approx_report(dir: &std::path::Path) -> Result<ApproxReport> {
    let summary = crate::report::read_json(&dir.join("summary.json"))?;
    serde_json::from_value(summary["results"].clone())
        .map_err(|e| RunError::Config(format!("{}: not an approx report: {e}", dir.display())))
}

/// The 12 parameters of a unit as a typed record.
pub fn unit_params(u: &ApproxUnit) -> LstmPoolParams {
    LstmPoolParams::from_array(u.params)
}
