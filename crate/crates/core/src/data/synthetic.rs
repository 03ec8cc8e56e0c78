//! Random sequences with max/mean targets for training a single pooling unit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

pub const VALUE_MAX: f64 = 300.0;
/// Batches per epoch.
pub const EPOCH_BATCHES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    T1,
    T2,
    T3,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::T1, Regime::T2, Regime::T3];

    /// Probability that an entry is exactly zero.
    pub fn zero_fraction(self) -> f64 {
        match self {
            Regime::T1 => 0.0,
            Regime::T2 => 0.5,
            Regime::T3 => 0.8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::T1 => "T1",
            Regime::T2 => "T2",
            Regime::T3 => "T3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolTarget {
    Max,
    Avg,
}

impl PoolTarget {
    pub fn of(self, seq: &[f64]) -> f64 {
        match self {
            PoolTarget::Max => seq.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            PoolTarget::Avg => seq.iter().sum::<f64>() / seq.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPoolBatch {
    pub len: usize,
    pub regime: Regime,
    /// `batch × len`, row-major.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

/// `batch` sequences of length `len ∈ {4, 9, 16}` with entries uniform on
/// `[0, 300]`, each zeroed with the regime's probability.
pub fn gen_pool_batch<R: Rng>(
    len: usize,
    regime: Regime,
    target: PoolTarget,
    batch: usize,
    rng: &mut R,
) -> Result<SyntheticPoolBatch, DataError> {
    if ![4, 9, 16].contains(&len) {
        return Err(DataError::Invalid(format!("sequence length {len} is not one of 4, 9, 16")));
    }
    let zf = regime.zero_fraction();
    let inputs: Vec<f64> = (0..batch * len)
        .map(|_| {
            if zf > 0.0 && rng.random::<f64>() < zf {
                0.0
            } else {
                rng.random_range(0.0..=VALUE_MAX)
            }
        })
        .collect();
    let targets = inputs.chunks(len).map(|s| target.of(s)).collect();
    Ok(SyntheticPoolBatch {
        len,
        regime,
        inputs,
        targets,
    })
}
