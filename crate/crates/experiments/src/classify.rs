//! Training a classifier on CIFAR and tracking its test error.

use ftn_core::data::{augment_batch, derive_rng, derive_seed, IMAGE_BYTES};
use ftn_core::nn::{error_rate, loss_xent, write_checkpoint, Mode, Model, ParamRole};
use ftn_core::optim::{clip_total_norm, Nesterov, Scheduler};
use ftn_core::{Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Result, RunError};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::prep::{prepare, Prepared};
use crate::report::ReportDir;

const EVAL_BATCH: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub final_test_error: f64,
    pub best_test_error: f64,
    pub param_count: usize,
    pub iterations: u64,
    pub train_images: usize,
    pub test_images: usize,
    pub whitening_cache_hit: bool,
}

/// Test error of `model` in eval mode over `n × 3072` images.
pub fn test_error(model: &mut Model<f32>, images: &[f32], labels: &[usize]) -> Result<f64> {
    let mut wrong = 0.0;
    for (chunk, lab) in images.chunks(EVAL_BATCH * IMAGE_BYTES).zip(labels.chunks(EVAL_BATCH)) {
        let x = Tensor::new(vec![lab.len(), 3, 32, 32], chunk.to_vec()).expect("image batch");
        let logits = model.predict(x)?;
        wrong += error_rate(&logits, lab) * lab.len() as f64;
    }
    Ok(wrong / labels.len().max(1) as f64)
}

fn snapshot(dir: &ReportDir, model: &Model<f32>, iteration: u64, msg: &str) -> RunError {
    let units: Vec<serde_json::Value> = model
        .pool_units()
        .into_iter()
        .map(|(layer, p)| serde_json::json!({ "layer": layer, "params": model.params()[p].value.to_f64_vec() }))
        .collect();
    let body = serde_json::json!({ "iteration": iteration, "message": msg, "pool_units": units });
    let _ = dir.write_json("divergence.json", &body);
    RunError::Divergence {
        at: format!("iteration {iteration}"),
        msg: msg.to_string(),
        snapshot: dir.file("divergence.json"),
    }
}

pub fn run_classify(cfg: &ExperimentConfig) -> Result<ClassifyReport> {
    let data = prepare(&cfg.classify.data)?;
    run_classify_on(cfg, data)
}

/// [`run_classify`] on already prepared data.
pub fn run_classify_on(cfg: &ExperimentConfig, mut data: Prepared) -> Result<ClassifyReport> {
    let c = &cfg.classify;
    let seed = cfg.seed;
    if data.train_len() < c.batch {
        return Err(RunError::Config(format!(
            "classify.batch {} exceeds the {} training images",
            c.batch,
            data.train_len()
        )));
    }
    let dir = ReportDir::create(cfg)?;
    if c.shuffle_labels {
        data.train_labels.shuffle(&mut derive_rng(seed, "shuffle-labels", &[]));
    }
    let spec = c.network.build_spec(data.classes);
    let mut model = Model::<f32>::build(&spec, derive_seed(seed, "init", &[]))?;
    let mut opt = Nesterov::for_model(&model, c.lr, c.momentum).map_err(|e| RunError::Config(e.to_string()))?;
    let mut sched = Scheduler::new(c.schedule.clone(), c.lr).map_err(|e| RunError::Config(e.to_string()))?;
    let mut log = MetricsWriter::create(&dir.path)?;

    let n = data.train_len();
    let per_epoch = (n / c.batch) as u64;
    let mut order: Vec<usize> = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut best = f64::INFINITY;
    let mut last = f64::NAN;
    let mut batch_x = vec![0f32; c.batch * IMAGE_BYTES];
    let mut batch_y = vec![0usize; c.batch];
    for iter in 0..c.iterations {
        let (epoch, b) = (iter / per_epoch, iter % per_epoch);
        if b == 0 {
            order = (0..n).collect();
            order.shuffle(&mut derive_rng(seed, "order", &[epoch]));
        }
        for (j, &idx) in order[b as usize * c.batch..(b as usize + 1) * c.batch].iter().enumerate() {
            batch_x[j * IMAGE_BYTES..(j + 1) * IMAGE_BYTES].copy_from_slice(&data.train[idx * IMAGE_BYTES..(idx + 1) * IMAGE_BYTES]);
            batch_y[j] = data.train_labels[idx];
        }
        let xs = if c.augment {
            augment_batch(&batch_x, &mut derive_rng(seed, "augment", &[epoch, b]))
        } else {
            batch_x.clone()
        };
        opt.lr = sched.on_iteration(iter);

        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![c.batch, 3, 32, 32], xs).expect("batch shape"));
        let mut drop_rng = derive_rng(seed, "dropout", &[iter]);
        let (logits, pv) = match model.forward(&mut tape, x, Mode::Train(&mut drop_rng)) {
            Ok(r) => r,
            Err(e) => return Err(snapshot(&dir, &model, iter, &e.to_string())),
        };
        let loss = loss_xent(&mut tape, logits, &batch_y).map_err(|e| RunError::Other(e.to_string()))?;
        let lv = tape.value(loss).data()[0] as f64;
        if !lv.is_finite() {
            return Err(snapshot(&dir, &model, iter, &format!("training loss is {lv}")));
        }
        loss_sum += lv;
        loss_count += 1;
        let mut grads = tape.backward(loss).map_err(|e| RunError::Other(e.to_string()))?;
        let mut g: Vec<Tensor<f32>> = pv
            .iter()
            .zip(model.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())))
            .collect();
        if let Some(m) = c.clip_norm {
            clip_total_norm(&mut g, m);
        }
        // momentum is linear in the gradient, so this scales the pool units' lr
        let scale = c.pool_lr_scale as f32;
        for (t, p) in g.iter_mut().zip(model.params()) {
            if p.role == ParamRole::Pool && scale != 1.0 {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
        opt.step_model(&mut model, &g, c.wg_epsilon).map_err(|e| RunError::Other(e.to_string()))?;

        let done = iter + 1;
        if done % c.eval_every == 0 || done == c.iterations {
            last = test_error(&mut model, &data.test, &data.test_labels)?;
            best = best.min(last);
            log.push(&MetricsRow {
                series: "classify".into(),
                iteration: done,
                epoch,
                train_loss: loss_sum / loss_count as f64,
                val_metric: Some(last),
                lr: opt.lr,
            })?;
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    write_checkpoint(&model, &dir.file("checkpoint.ftn"))?;
    let report = ClassifyReport {
        final_test_error: last,
        best_test_error: best,
        param_count: model.param_count(),
        iterations: c.iterations,
        train_images: n,
        test_images: data.test_len(),
        whitening_cache_hit: data.cache_hit,
    };
    dir.write_summary(cfg, serde_json::to_value(&report).expect("report serializes"))?;
    Ok(report)
}
