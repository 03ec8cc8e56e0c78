//! Post-hoc analyses: which locations max pooling selects, and how pooling
//! units respond to regions with a known maximum.

use std::path::Path;

use ftn_core::data::{derive_rng, IMAGE_BYTES};
use ftn_core::lstm_pool::{pool_forward, ModulationActivation, PARAMS_PER_UNIT};
use ftn_core::nn::{read_checkpoint, LayerSpec, Model, PoolKind};
use ftn_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::read_approx_report;
use crate::config::{ExperimentConfig, UnitSource};
use crate::error::{Result, RunError};
use crate::metrics::{fmt_float, write_table};
use crate::prep::prepare;
use crate::report::ReportDir;

const FEATURE_BATCH: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationsReport {
    pub layer: usize,
    pub k: usize,
    pub channels: usize,
    pub regions: usize,
    /// `histogram[j]` regions had `j + 1` distinct selected locations.
    pub histogram: Vec<usize>,
    pub median: f64,
    pub max: usize,
    pub mean: f64,
}

/// Distinct row-major positions that are the first-index argmax of at
/// least one channel. `region` is `channels × len`.
pub fn selected_locations(region: &[f32], len: usize) -> usize {
    let mut hit = vec![false; len];
    for ch in region.chunks(len) {
        hit[ftn_core::nn::argmax(ch)] = true;
    }
    hit.iter().filter(|&&h| h).count()
}

/// Median of a histogram whose bin `j` counts the value `j + 1`.
pub fn histogram_median(hist: &[usize]) -> f64 {
    let n: usize = hist.iter().sum();
    if n == 0 {
        return f64::NAN;
    }
    let nth = |r: usize| {
        let mut acc = 0;
        for (j, &c) in hist.iter().enumerate() {
            acc += c;
            if acc > r {
                return (j + 1) as f64;
            }
        }
        hist.len() as f64
    };
    if n % 2 == 1 {
        nth(n / 2)
    } else {
        (nth(n / 2 - 1) + nth(n / 2)) / 2.0
    }
}

/// The max-pool layer to analyze and its window size.
fn max_pool_layer(model: &Model<f32>, want: Option<usize>) -> Result<(usize, usize, usize)> {
    let found = model.spec().layers.iter().enumerate().filter_map(|(i, l)| match l {
        LayerSpec::Pool {
            kind: PoolKind::Max,
            k,
            stride,
            ..
        } => Some((i, *k, *stride)),
        _ => None,
    });
    let mut found: Vec<_> = found.collect();
    if let Some(w) = want {
        found.retain(|(i, _, _)| *i == w);
    }
    found.into_iter().next().ok_or_else(|| {
        RunError::Analysis(match want {
            Some(w) => format!("layer {w} of the checkpoint is not a max-pool layer"),
            None => "checkpoint has no max-pool layer".into(),
        })
    })
}

pub fn analyze_locations(cfg: &ExperimentConfig) -> Result<LocationsReport> {
    let a = &cfg.analyze_locations;
    let mut model = read_checkpoint::<f32>(&a.checkpoint)?;
    let (layer, k, stride) = max_pool_layer(&model, a.layer)?;
    let data = prepare(&a.data)?;
    let dir = ReportDir::create(cfg)?;

    let n_img = data.test_len();
    if n_img == 0 {
        return Err(RunError::Analysis("no test images to sample from".into()));
    }
    let mut feats = Vec::new();
    let mut fshape = Vec::new();
    for (i, chunk) in data.test.chunks(FEATURE_BATCH * IMAGE_BYTES).enumerate() {
        let b = chunk.len() / IMAGE_BYTES;
        let x = Tensor::new(vec![b, 3, 32, 32], chunk.to_vec()).expect("image batch");
        let f = model.features(x, layer)?;
        if i == 0 {
            fshape = f.shape().to_vec();
        }
        feats.extend_from_slice(f.data());
    }
    let (c, h, w) = (fshape[1], fshape[2], fshape[3]);
    let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let len = k * k;
    let mut rng = derive_rng(cfg.seed, "locations", &[]);
    let mut hist = vec![0usize; len];
    let mut region = vec![0f32; c * len];
    for _ in 0..a.n_patches {
        let (img, oi, oj) = (rng.random_range(0..n_img), rng.random_range(0..ho), rng.random_range(0..wo));
        for ch in 0..c {
            let plane = &feats[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
            for ri in 0..k {
                for rj in 0..k {
                    region[ch * len + ri * k + rj] = plane[(oi * stride + ri) * w + oj * stride + rj];
                }
            }
        }
        hist[selected_locations(&region, len) - 1] += 1;
    }
    let rows: Vec<Vec<String>> = hist
        .iter()
        .enumerate()
        .map(|(j, n)| vec![(j + 1).to_string(), n.to_string()])
        .collect();
    write_table(&dir.file("locations.csv"), &["locations", "regions"], &rows)?;
    let total: usize = hist.iter().sum();
    let report = LocationsReport {
        layer,
        k,
        channels: c,
        regions: total,
        median: histogram_median(&hist),
        max: hist.iter().rposition(|&n| n > 0).map_or(0, |j| j + 1),
        mean: hist.iter().enumerate().map(|(j, &n)| (j + 1) as f64 * n as f64).sum::<f64>() / total.max(1) as f64,
        histogram: hist,
    };
    dir.write_summary(cfg, serde_json::to_value(&report).expect("report serializes"))?;
    Ok(report)
}

/// A pooling unit (or a per-region bank of them) to probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeUnit {
    pub name: String,
    pub k: usize,
    pub psi: ModulationActivation,
    /// `[12]` or `[R, 12]` flattened.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub name: String,
    pub file: String,
    pub corr_avg: f64,
    pub mae_avg: f64,
    pub mae_max: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn probe_units(source: &UnitSource) -> Result<Vec<ProbeUnit>> {
    match source {
        UnitSource::Checkpoint { path } => units_from_checkpoint(path),
        UnitSource::ApproxReport { dir } => Ok(read_approx_report(dir)?
            .units
            .into_iter()
            .map(|u| ProbeUnit {
                name: format!("L{}", u.len),
                k: u.k,
                psi: u.psi,
                params: u.params.to_vec(),
            })
            .collect()),
        UnitSource::Params { params, k, psi } => Ok(vec![ProbeUnit {
            name: "unit".into(),
            k: *k,
            psi: *psi,
            params: params.to_vec(),
        }]),
    }
}

fn units_from_checkpoint(path: &Path) -> Result<Vec<ProbeUnit>> {
    let model = read_checkpoint::<f64>(path)?;
    let units: Vec<ProbeUnit> = model
        .pool_units()
        .into_iter()
        .map(|(layer, p)| {
            let k = match &model.spec().layers[layer] {
                LayerSpec::Pool { k, .. } => *k,
                _ => unreachable!("pool unit on a non-pool layer"),
            };
            ProbeUnit {
                name: format!("layer{layer}"),
                k,
                psi: model.pool_psi(layer).expect("learnable pool layer"),
                params: model.params()[p].value.to_f64_vec(),
            }
        })
        .collect();
    if units.is_empty() {
        return Err(RunError::Analysis(format!("{} has no learnable pooling layer", path.display())));
    }
    Ok(units)
}

/// Probe `unit` with `n` regions of `U[0, fixed_max]` values, one of them
/// forced to `fixed_max`. Rows are `(avg, max, pooled)` sorted by avg.
pub fn probe(unit: &ProbeUnit, n: usize, fixed_max: f64, rng: &mut impl Rng) -> Result<Vec<[f64; 3]>> {
    let len = unit.k * unit.k;
    let banks = unit.params.len() / PARAMS_PER_UNIT;
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let mut v: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..fixed_max)).collect();
        v[rng.random_range(0..len)] = fixed_max;
        // a per-region bank is probed one unit at a time, cycling
        let b = r % banks;
        let p = Tensor::new(vec![PARAMS_PER_UNIT], unit.params[b * PARAMS_PER_UNIT..(b + 1) * PARAMS_PER_UNIT].to_vec())
            .expect("unit shape");
        let x = Tensor::new(vec![1, unit.k, unit.k], v.clone()).expect("region shape");
        let y = pool_forward(&x, &p, unit.k, unit.k, unit.psi)
            .map_err(|e| RunError::Analysis(format!("{}: {e}", unit.name)))?;
        let avg = v.iter().sum::<f64>() / len as f64;
        rows.push([avg, fixed_max, y.data()[0]]);
    }
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    Ok(rows)
}

pub fn analyze_response(cfg: &ExperimentConfig) -> Result<Vec<ResponseSummary>> {
    let a = &cfg.analyze_response;
    if a.n < 2 || !(a.fixed_max > 0.0) {
        return Err(RunError::Config("analyze_response needs n ≥ 2 and a positive fixed_max".into()));
    }
    let units = probe_units(&a.source)?;
    let dir = ReportDir::create(cfg)?;
    let mut out = Vec::new();
    for (ui, unit) in units.iter().enumerate() {
        let rows = probe(unit, a.n, a.fixed_max, &mut derive_rng(cfg.seed, "response", &[ui as u64]))?;
        let file = format!("response_{}.csv", unit.name);
        let table: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|&v| fmt_float(v)).collect()).collect();
        write_table(&dir.file(&file), &["avg", "max", "lstm"], &table)?;
        let avg: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let lstm: Vec<f64> = rows.iter().map(|r| r[2]).collect();
        let nf = rows.len() as f64;
        out.push(ResponseSummary {
            name: unit.name.clone(),
            file,
            corr_avg: pearson(&lstm, &avg),
            mae_avg: rows.iter().map(|r| (r[2] - r[0]).abs()).sum::<f64>() / nf,
            mae_max: rows.iter().map(|r| (r[2] - r[1]).abs()).sum::<f64>() / nf,
        });
    }
    dir.write_summary(cfg, serde_json::to_value(&out).expect("summary serializes"))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_channel_selects_one_location() {
        assert_eq!(selected_locations(&[0.1, 0.9, 0.3, 0.2], 4), 1);
    }

    #[test]
    fn constant_region_selects_first_location() {
        assert_eq!(selected_locations(&[1.0; 8], 4), 1);
    }

    #[test]
    fn count_is_bounded_by_channels_and_region() {
        // three channels peaking at three different places
        let r = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(selected_locations(&r, 4), 3);
        let r2 = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(selected_locations(&r2, 4), 2);
    }

    #[test]
    fn median_of_histogram() {
        assert_eq!(histogram_median(&[1, 1, 1]), 2.0);
        assert_eq!(histogram_median(&[1, 0, 1]), 2.0);
        assert_eq!(histogram_median(&[0, 4, 0, 0]), 2.0);
        assert_eq!(histogram_median(&[3, 0, 0, 1]), 1.0);
        assert!(histogram_median(&[0, 0]).is_nan());
    }

    #[test]
    fn pearson_of_linear_relation_is_one() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v - 1.0).collect();
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_rows_are_sorted_and_contain_the_maximum() {
        let unit = ProbeUnit {
            name: "u".into(),
            k: 3,
            psi: ModulationActivation::Relu,
            params: ftn_core::lstm_pool::LstmPoolParams::default().to_array().to_vec(),
        };
        let rows = probe(&unit, 50, 1.5, &mut derive_rng(0, "t", &[])).unwrap();
        assert!(rows.windows(2).all(|w| w[0][0] <= w[1][0]));
        assert!(rows.iter().all(|r| r[1] == 1.5 && r[0] <= 1.5 && r[0] >= 1.5 / 9.0));
    }
}
