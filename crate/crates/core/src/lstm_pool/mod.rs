//! Learnable pooling with a single scalar LSTM unit.
//!
//! Each `k×k` pooling region of every channel is scanned row-major into a
//! sequence of `k²` scalars. One LSTM unit with scalar input, state and
//! output (`M = N = 1`) consumes the sequence from a zero state, and its
//! final output `h` is the pooled value:
//!
//! ```text
//! i = σ(w_i·x + r_i·h + b_i)      f = σ(w_f·x + r_f·h + b_f)
//! o = σ(w_o·x + r_o·h + b_o)      g = ψ(w_g·x + r_g·h + b_g)
//! c' = i·g + f·c                  h' = o·ψ(c')
//! ```
//!
//! σ is the logistic sigmoid; ψ is the modulation activation, matching the
//! activation of the surrounding convolutional layers (ReLU or leaky ReLU
//! rather than tanh).
//!
//! With ψ = ReLU, non-negative inputs and `w_g ≤ 0`, `b_g ≤ 0`, the unit's
//! output is identically zero and it can never recover. Training therefore
//! keeps `w_g ≥ ε > 0` and `b_g ≥ 0` by projecting after every optimizer
//! step ([`LstmPoolParams::project_constraints`]).

mod op;

pub use op::{lstm_step_on_tape, pool_forward, LstmPoolBackward};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::sigmoid;
use crate::real::Real;
use crate::tensor::TensorError;

/// Trainable scalars in one pooling unit.
pub const PARAMS_PER_UNIT: usize = 12;

/// Lower bound enforced on `w_g` by the projection step.
pub const DEFAULT_WG_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoolError {
    #[error("lstm_step: non-finite value in gate {gate} (step {step})")]
    NonFinite { gate: &'static str, step: usize },
    #[error("pooling region is empty")]
    EmptyRegion,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The twelve scalars of one unit: input weight, recurrent weight and bias
/// for the input gate, forget gate, output gate and input modulation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LstmPoolParams {
    pub w_i: f64,
    pub r_i: f64,
    pub b_i: f64,
    pub w_f: f64,
    pub r_f: f64,
    pub b_f: f64,
    pub w_o: f64,
    pub r_o: f64,
    pub b_o: f64,
    pub w_g: f64,
    pub r_g: f64,
    pub b_g: f64,
}

/// Position of each parameter in the flat layout used by tensors and
/// checkpoints.
pub mod index {
    pub const W_I: usize = 0;
    pub const R_I: usize = 1;
    pub const B_I: usize = 2;
    pub const W_F: usize = 3;
    pub const R_F: usize = 4;
    pub const B_F: usize = 5;
    pub const W_O: usize = 6;
    pub const R_O: usize = 7;
    pub const B_O: usize = 8;
    pub const W_G: usize = 9;
    pub const R_G: usize = 10;
    pub const B_G: usize = 11;
}

pub const PARAM_NAMES: [&str; PARAMS_PER_UNIT] = [
    "w_i", "r_i", "b_i", "w_f", "r_f", "b_f", "w_o", "r_o", "b_o", "w_g", "r_g", "b_g",
];

impl LstmPoolParams {
    pub fn to_array(&self) -> [f64; PARAMS_PER_UNIT] {
        [
            self.w_i, self.r_i, self.b_i, self.w_f, self.r_f, self.b_f, self.w_o, self.r_o, self.b_o,
            self.w_g, self.r_g, self.b_g,
        ]
    }

    pub fn from_array(a: [f64; PARAMS_PER_UNIT]) -> Self {
        LstmPoolParams {
            w_i: a[0],
            r_i: a[1],
            b_i: a[2],
            w_f: a[3],
            r_f: a[4],
            b_f: a[5],
            w_o: a[6],
            r_o: a[7],
            b_o: a[8],
            w_g: a[9],
            r_g: a[10],
            b_g: a[11],
        }
    }

    /// Reads the first twelve values of a flat parameter slice.
    pub fn from_slice<T: Real>(s: &[T]) -> Self {
        let mut a = [0.0; PARAMS_PER_UNIT];
        for (dst, v) in a.iter_mut().zip(s) {
            *dst = v.as_f64();
        }
        Self::from_array(a)
    }

    /// Initial values: `w_g ~ U(0.25, 0.75)`, `b_g = 0`, forget bias `1.0`,
    /// every other weight and bias `~ U(-0.1, 0.1)`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut a = [0.0; PARAMS_PER_UNIT];
        for v in a.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        a[index::B_F] = 1.0;
        a[index::W_G] = rng.random_range(0.25..0.75);
        a[index::B_G] = 0.0;
        Self::from_array(a)
    }

    /// [`LstmPoolParams::init`] with the forget bias raised to `ln(10·(len - 1))`,
    /// so `f^(len-1)` starts near 0.9 and early scan positions still count.
    pub fn init_for_len<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        let mut p = Self::init(rng);
        p.b_f = forget_bias_for(len);
        p
    }

    /// Clamp `w_g` to at least `eps` and `b_g` to at least zero.
    pub fn project_constraints(mut self, eps: f64) -> Self {
        self.w_g = self.w_g.max(eps);
        self.b_g = self.b_g.max(0.0);
        self
    }

    pub fn satisfies_constraints(&self, eps: f64) -> bool {
        self.w_g >= eps && self.b_g >= 0.0
    }
}

/// Initial forget bias for a region of `len` steps.
pub fn forget_bias_for(len: usize) -> f64 {
    (10.0 * len.saturating_sub(1).max(1) as f64).ln().max(1.0)
}

/// In-place projection on a flat parameter block of one or more units.
pub fn project_slice<T: Real>(params: &mut [T], eps: f64) {
    let eps = T::lit(eps);
    for unit in params.chunks_mut(PARAMS_PER_UNIT) {
        if unit[index::W_G] < eps {
            unit[index::W_G] = eps;
        }
        if unit[index::B_G] < T::zero() {
            unit[index::B_G] = T::zero();
        }
    }
}

/// Recurrent state `(h, c)`; the default is the zero state every region
/// starts from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LstmState {
    pub h: f64,
    pub c: f64,
}

/// ψ, the activation used in the input and output modulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulationActivation {
    Tanh,
    Relu,
    LeakyRelu { alpha: f64 },
}

impl ModulationActivation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            ModulationActivation::Tanh => z.tanh(),
            ModulationActivation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            ModulationActivation::LeakyRelu { alpha } => {
                if z > T::zero() {
                    z
                } else {
                    T::lit(alpha) * z
                }
            }
        }
    }

    /// ψ'(z), expressed through the activation value `a = ψ(z)`.
    /// At `z = 0` the negative-side slope is used.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, a: T) -> T {
        match self {
            ModulationActivation::Tanh => T::one() - a * a,
            ModulationActivation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ModulationActivation::LeakyRelu { alpha } => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::lit(alpha)
                }
            }
        }
    }
}

/// Which pooling units a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSharingMode {
    /// One unit per output location, shared across channels.
    PerRegion,
    /// One unit for the whole layer.
    PerLayer,
    /// One unit aliased by every pooling layer of the network.
    GlobalShared,
}

/// The row-major scan of one `k×k` region.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRegionSequence {
    values: Vec<f64>,
}

impl PoolRegionSequence {
    /// Scan region `(oi, oj)` of a `height×width` plane.
    pub fn from_plane(plane: &[f64], width: usize, k: usize, stride: usize, oi: usize, oj: usize) -> Self {
        let values = (0..k)
            .flat_map(|ri| (0..k).map(move |rj| (oi * stride + ri) * width + oj * stride + rj))
            .map(|off| plane[off])
            .collect();
        PoolRegionSequence { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One time step. Fails with the name of the first gate that turns non-finite.
pub fn lstm_step(
    p: &LstmPoolParams,
    psi: ModulationActivation,
    x: f64,
    s: LstmState,
) -> Result<LstmState, PoolError> {
    step_checked(p, psi, x, s, 0)
}

fn step_checked(
    p: &LstmPoolParams,
    psi: ModulationActivation,
    x: f64,
    s: LstmState,
    step: usize,
) -> Result<LstmState, PoolError> {
    let check = |gate: &'static str, v: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(PoolError::NonFinite { gate, step })
        }
    };
    check("x", x)?;
    let i = check("i", sigmoid(p.w_i * x + p.r_i * s.h + p.b_i))?;
    let f = check("f", sigmoid(p.w_f * x + p.r_f * s.h + p.b_f))?;
    let o = check("o", sigmoid(p.w_o * x + p.r_o * s.h + p.b_o))?;
    let g = check("g", psi.apply(p.w_g * x + p.r_g * s.h + p.b_g))?;
    let c = check("c", i * g + f * s.c)?;
    let h = check("h", o * psi.apply(c))?;
    Ok(LstmState { h, c })
}

/// Run the unit over a whole sequence from the zero state.
pub fn run_sequence(
    p: &LstmPoolParams,
    psi: ModulationActivation,
    xs: &[f64],
) -> Result<LstmState, PoolError> {
    xs.iter()
        .enumerate()
        .try_fold(LstmState::default(), |s, (t, &x)| step_checked(p, psi, x, s, t))
}

pub fn max_pool_oracle(region: &[f64]) -> Result<f64, PoolError> {
    region
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(PoolError::EmptyRegion)
}

pub fn avg_pool_oracle(region: &[f64]) -> Result<f64, PoolError> {
    if region.is_empty() {
        return Err(PoolError::EmptyRegion);
    }
    Ok(region.iter().sum::<f64>() / region.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    /// Hand-expanded evaluation of the six update formulas with ReLU.
    fn oracle_step(p: &[f64; 12], x: f64, h: f64, c: f64) -> (f64, f64) {
        let relu = |z: f64| z.max(0.0);
        let i = sig(p[0] * x + p[1] * h + p[2]);
        let f = sig(p[3] * x + p[4] * h + p[5]);
        let o = sig(p[6] * x + p[7] * h + p[8]);
        let g = relu(p[9] * x + p[10] * h + p[11]);
        let c2 = i * g + f * c;
        (o * relu(c2), c2)
    }

    fn example_params() -> LstmPoolParams {
        LstmPoolParams {
            w_i: 0.1,
            r_i: 0.1,
            b_i: 0.1,
            w_f: 0.1,
            r_f: 0.1,
            b_f: 0.1,
            w_o: 0.1,
            r_o: 0.1,
            b_o: 0.1,
            w_g: 0.5,
            r_g: 0.1,
            b_g: 0.0,
        }
    }

    #[test]
    fn zero_params_give_zero_state() {
        let s = lstm_step(&LstmPoolParams::default(), ModulationActivation::Relu, 5.0, LstmState::default()).unwrap();
        assert_eq!(s, LstmState { h: 0.0, c: 0.0 });
    }

    #[test]
    fn single_step_matches_scalar_oracle() {
        let p = example_params();
        let s = lstm_step(&p, ModulationActivation::Relu, 2.0, LstmState::default()).unwrap();
        // i = f = o = σ(0.3), g = 1.0, c = σ(0.3), h = σ(0.3)²
        let (h, c) = oracle_step(&p.to_array(), 2.0, 0.0, 0.0);
        assert!((s.h - h).abs() < 1e-15 && (s.c - c).abs() < 1e-15);
        let s03 = 0.574_442_516_811_659;
        assert!((s.c - s03).abs() < 1e-15);
        assert!((s.h - 0.329_984_205_120_913_14).abs() < 1e-15);
    }

    #[test]
    fn region_chain_matches_oracle() {
        let p = example_params();
        let (mut h, mut c) = (0.0, 0.0);
        for x in [1.0, 2.0, 3.0, 4.0] {
            (h, c) = oracle_step(&p.to_array(), x, h, c);
        }
        let plane = [1.0, 2.0, 3.0, 4.0];
        let seq = PoolRegionSequence::from_plane(&plane, 2, 2, 2, 0, 0);
        assert_eq!(seq.values(), &[1.0, 2.0, 3.0, 4.0]);
        let s = run_sequence(&p, ModulationActivation::Relu, seq.values()).unwrap();
        assert!((s.h - h).abs() < 1e-14, "{} vs {h}", s.h);
        assert!((s.c - c).abs() < 1e-14);
    }

    #[test]
    fn negative_input_weight_kills_the_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = LstmPoolParams::init(&mut rng);
        p.w_g = -1.0;
        p.b_g = 0.0;
        p.r_g = 0.7;
        let xs: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..300.0)).collect();
        let mut s = LstmState::default();
        for &x in &xs {
            s = lstm_step(&p, ModulationActivation::Relu, x, s).unwrap();
            assert_eq!(s.h, 0.0);
            assert_eq!(s.c, 0.0);
        }
    }

    #[test]
    fn non_finite_reports_gate() {
        let mut p = LstmPoolParams::default();
        p.w_g = f64::INFINITY;
        let err = lstm_step(&p, ModulationActivation::Relu, 1.0, LstmState::default()).unwrap_err();
        assert_eq!(err, PoolError::NonFinite { gate: "g", step: 0 });
        let err = lstm_step(&LstmPoolParams::default(), ModulationActivation::Relu, f64::NAN, LstmState::default())
            .unwrap_err();
        assert_eq!(err, PoolError::NonFinite { gate: "x", step: 0 });
    }

    #[test]
    fn projection_examples() {
        let mut p = LstmPoolParams::default();
        p.w_g = -0.3;
        p.b_g = -0.1;
        p.w_i = 0.42;
        let q = p.project_constraints(1e-6);
        assert_eq!(q.w_g, 1e-6);
        assert_eq!(q.b_g, 0.0);
        assert_eq!(q.w_i, 0.42);

        p.w_g = 0.5;
        p.b_g = 0.2;
        assert_eq!(p.project_constraints(1e-6), p);

        p.w_g = 0.0;
        assert_eq!(p.project_constraints(1e-6).w_g, 1e-6);
    }

    #[test]
    fn projection_on_flat_blocks() {
        let mut flat = vec![0.0f32; 24];
        flat[index::W_G] = -1.0;
        flat[12 + index::B_G] = -2.0;
        flat[12 + index::W_G] = 3.0;
        project_slice(&mut flat, 1e-6);
        assert_eq!(flat[index::W_G], 1e-6);
        assert_eq!(flat[12 + index::B_G], 0.0);
        assert_eq!(flat[12 + index::W_G], 3.0);
    }

    #[test]
    fn init_satisfies_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let p = LstmPoolParams::init(&mut rng);
            assert!(p.satisfies_constraints(DEFAULT_WG_EPSILON));
            assert!((0.25..0.75).contains(&p.w_g));
            assert_eq!(p.b_f, 1.0);
            assert_eq!(p.b_g, 0.0);
        }
    }

    #[test]
    fn forget_bias_tracks_region_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(forget_bias_for(4), 30f64.ln());
        assert_eq!(forget_bias_for(1), 10f64.ln());
        for len in [4, 9, 16, 64] {
            let p = LstmPoolParams::init_for_len(&mut rng, len);
            let f = 1.0 / (1.0 + (-p.b_f).exp());
            // memory over the whole region: f^(len-1) stays well away from zero
            assert!(f.powi(len as i32 - 1) > 0.88, "len {len}: f {f}");
            assert!(p.satisfies_constraints(DEFAULT_WG_EPSILON));
        }
    }

    #[test]
    fn oracles() {
        assert_eq!(max_pool_oracle(&[1.0, 7.0, 3.0, 2.0]).unwrap(), 7.0);
        assert_eq!(avg_pool_oracle(&[1.0, 7.0, 3.0, 2.0]).unwrap(), 3.25);
        assert_eq!(max_pool_oracle(&[2.5; 4]).unwrap(), 2.5);
        assert_eq!(avg_pool_oracle(&[2.5; 4]).unwrap(), 2.5);
        assert_eq!(max_pool_oracle(&[5.0, 5.0, 1.0]).unwrap(), 5.0);
        assert_eq!(max_pool_oracle(&[]), Err(PoolError::EmptyRegion));
        assert_eq!(avg_pool_oracle(&[]), Err(PoolError::EmptyRegion));
    }

    #[test]
    fn tanh_and_leaky_derivatives() {
        let t = ModulationActivation::Tanh;
        let a: f64 = t.apply(0.4);
        assert!((t.derivative_from_output(a) - (1.0 - 0.4f64.tanh().powi(2))).abs() < 1e-15);
        let l = ModulationActivation::LeakyRelu { alpha: 0.3 };
        assert_eq!(l.apply(-10.0f64), -3.0);
        assert_eq!(l.derivative_from_output(-3.0f64), 0.3);
        assert_eq!(l.derivative_from_output(0.0f64), 0.3);
        assert_eq!(ModulationActivation::Relu.derivative_from_output(0.0f64), 0.0);
    }
}
