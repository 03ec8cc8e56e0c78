//! Finite-difference checks of the pooling step, the pooling layer and a
//! small network containing it.

use std::cell::RefCell;

use ftn_core::autodiff::{grad_check, Primitive};
use ftn_core::data::derive_rng;
use ftn_core::lstm_pool::{lstm_step_on_tape, ModulationActivation, PoolSharingMode, PARAMS_PER_UNIT};
use ftn_core::nn::{loss_xent, LayerSpec, Mode, Model, NetworkSpec, PoolKind};
use ftn_core::tensor::Result as TResult;
use ftn_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GradcheckConfig};
use crate::error::{Result, RunError};
use crate::metrics::{fmt_float, write_table};
use crate::report::ReportDir;

const PSIS: [ModulationActivation; 3] = [
    ModulationActivation::Tanh,
    ModulationActivation::Relu,
    ModulationActivation::LeakyRelu { alpha: 0.3 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub point: usize,
    pub coords: usize,
    pub max_rel_error: f64,
    pub rtol: f64,
    pub passed: bool,
}

fn slice(t: &mut Tape<f64>, v: Var, start: usize, len: usize) -> TResult<Var> {
    t.apply(Primitive::Slice { axis: 0, start, len }, &[v])
}

/// `Σ_j w_j y_j` with fixed, distinct weights so every output matters.
fn weighted_sum(t: &mut Tape<f64>, y: Var) -> TResult<Var> {
    let n = t.value(y).numel();
    let flat = t.reshape(y, &[n])?;
    let w: Vec<f64> = (0..n).map(|j| 0.5 + 0.37 * j as f64).collect();
    let wv = t.constant(Tensor::new(vec![n], w)?);
    let m = t.mul(flat, wv)?;
    t.mean(m)
}

fn random_unit(rng: &mut impl Rng) -> Vec<f64> {
    let mut p: Vec<f64> = (0..PARAMS_PER_UNIT).map(|_| rng.random_range(-1.0..1.0)).collect();
    p[9] = rng.random_range(0.3..1.0);
    p[11] = rng.random_range(0.0..0.5);
    p
}

/// The network used by the end-to-end check.
pub fn tiny_network() -> NetworkSpec {
    NetworkSpec {
        input: [1, 4, 4],
        layers: vec![
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Activation {
                function: ModulationActivation::LeakyRelu { alpha: 0.3 },
            },
            LayerSpec::Pool {
                kind: PoolKind::Lstm,
                k: 2,
                stride: 2,
                sharing: PoolSharingMode::PerLayer,
                psi: None,
            },
            LayerSpec::Fc { out_units: 3 },
            LayerSpec::SoftmaxXent { classes: 3 },
        ],
    }
}

fn row(check: String, point: usize, r: &ftn_core::autodiff::GradCheckReport) -> Result<CheckRow> {
    if let Some(e) = &r.error {
        return Err(RunError::Other(format!("{check}: {e}")));
    }
    Ok(CheckRow {
        check,
        point,
        coords: r.analytic.len(),
        max_rel_error: r.max_rel_error,
        rtol: r.rtol,
        passed: r.passed,
    })
}

/// Run every check at `g.points` random points drawn from `seed`.
pub fn run_checks(g: &GradcheckConfig, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for point in 0..g.points {
        let mut rng = derive_rng(seed, "gradcheck", &[point as u64]);
        for psi in PSIS {
            // 12 params, then x, h, c
            let mut v = random_unit(&mut rng);
            v.extend([rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let f = |t: &mut Tape<f64>, v: Var| {
                let (p, x, h, c) = (slice(t, v, 0, 12)?, slice(t, v, 12, 1)?, slice(t, v, 13, 1)?, slice(t, v, 14, 1)?);
                let (h2, c2) = lstm_step_on_tape(t, p, x, h, c, psi)?;
                let c2 = t.scale(c2, 0.37)?;
                let s = t.add(h2, c2)?;
                t.mean(s)
            };
            let r = grad_check(f, &Tensor::new(vec![15], v).expect("point"), g.step, g.rtol_layer);
            rows.push(row(format!("lstm_step/{}", psi_name(psi)), point, &r)?);

            // 12 params, then a [2,4,4] input
            let mut v = random_unit(&mut rng);
            v.extend((0..32).map(|_| rng.random_range(0.0..2.0)));
            let f = |t: &mut Tape<f64>, v: Var| {
                let p = slice(t, v, 0, 12)?;
                let x = slice(t, v, 12, 32)?;
                let x = t.reshape(x, &[1, 2, 4, 4])?;
                let y = t.lstm_pool(x, p, 2, 2, psi)?;
                weighted_sum(t, y)
            };
            let r = grad_check(f, &Tensor::new(vec![44], v).expect("point"), g.step, g.rtol_layer);
            rows.push(row(format!("pool_forward/{}", psi_name(psi)), point, &r)?);
        }

        let mut model = Model::<f64>::build(&tiny_network(), rng.random())?;
        for p in model.params_mut() {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        model.project_pool_constraints(ftn_core::lstm_pool::DEFAULT_WG_EPSILON);
        let x = Tensor::new(vec![3, 1, 4, 4], (0..48).map(|_| rng.random_range(0.0..2.0)).collect()).expect("input");
        let labels = [0, 2, 1];
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.value.shape().to_vec()).collect();
        let flat: Vec<f64> = model.params().iter().flat_map(|p| p.value.data().to_vec()).collect();
        let cell = RefCell::new(model);
        let f = |t: &mut Tape<f64>, v: Var| {
            let mut pv = Vec::with_capacity(shapes.len());
            let mut at = 0;
            for s in &shapes {
                let n: usize = s.iter().product();
                let part = slice(t, v, at, n)?;
                pv.push(t.reshape(part, s)?);
                at += n;
            }
            let xv = t.constant(x.clone());
            let mut drop = ChaCha8Rng::seed_from_u64(0);
            let y = cell
                .borrow_mut()
                .forward_with(t, xv, &pv, Mode::Train(&mut drop))
                .map_err(|e| ftn_core::TensorError::Invalid { op: "network", msg: e.to_string() })?;
            loss_xent(t, y, &labels)
        };
        let n = flat.len();
        let r = grad_check(f, &Tensor::new(vec![n], flat).expect("point"), g.step_network, g.rtol_network);
        rows.push(row("network".into(), point, &r)?);
    }
    Ok(rows)
}

fn psi_name(psi: ModulationActivation) -> &'static str {
    match psi {
        ModulationActivation::Tanh => "tanh",
        ModulationActivation::Relu => "relu",
        ModulationActivation::LeakyRelu { .. } => "leaky_relu",
    }
}

pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    let rows = run_checks(&cfg.gradcheck, cfg.seed)?;
    let dir = ReportDir::create(cfg)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.check.clone(),
                r.point.to_string(),
                r.coords.to_string(),
                fmt_float(r.max_rel_error),
                fmt_float(r.rtol),
                r.passed.to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.file("gradcheck.csv"),
        &["check", "point", "coords", "max_rel_error", "rtol", "passed"],
        &table,
    )?;
    dir.write_summary(cfg, serde_json::to_value(&rows).expect("rows serialize"))?;
    if let Some(bad) = rows.iter().find(|r| !r.passed) {
        return Err(RunError::Analysis(format!(
            "{} at point {}: relative error {:.3e} above {:.1e}",
            bad.check, bad.point, bad.max_rel_error, bad.rtol
        )));
    }
    Ok(rows)
}
