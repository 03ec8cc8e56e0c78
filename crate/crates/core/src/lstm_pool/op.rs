//! The pooling layer as a fused tape operation with backpropagation through
//! time over each region's scan.

use crate::autodiff::{pool_output_dims, sigmoid, Backward, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

use super::{run_sequence, LstmPoolParams, ModulationActivation, PoolError, PARAMS_PER_UNIT};

/// Saved per step: i, f, o, g, c, h.
const SAVED: usize = 6;

#[derive(Debug, Clone, Copy)]
struct Layout {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    per_region: bool,
}

impl Layout {
    fn new(x: &[usize], params: &[usize], k: usize, stride: usize) -> Result<Self> {
        let (batch, channels, h, w) = match *x {
            [b, c, h, w] => (b, c, h, w),
            [c, h, w] => (1, c, h, w),
            _ => {
                return Err(TensorError::invalid(
                    "lstm_pool",
                    format!("expected [B,C,H,W] or [C,H,W] input, got {x:?}"),
                ))
            }
        };
        let (ho, wo) = pool_output_dims("lstm_pool", h, w, k, stride)?;
        let per_region = match *params {
            [PARAMS_PER_UNIT] => false,
            [r, PARAMS_PER_UNIT] if r == ho * wo => true,
            _ => return Err(TensorError::mismatch("lstm_pool", x, params)),
        };
        Ok(Layout {
            batch,
            channels,
            h,
            w,
            ho,
            wo,
            k,
            stride,
            per_region,
        })
    }

    fn seq_len(&self) -> usize {
        self.k * self.k
    }

    fn unit(&self, oi: usize, oj: usize) -> usize {
        if self.per_region {
            oi * self.wo + oj
        } else {
            0
        }
    }

    fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.channels, self.ho, self.wo]
        } else {
            vec![self.channels, self.ho, self.wo]
        }
    }

    /// Visit every region in output order with its plane and the plane
    /// offset of each scanned element.
    fn for_each_region(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, &mut dyn Iterator<Item = usize>)) {
        let plane_len = self.h * self.w;
        let mut q = 0;
        for plane in 0..self.batch * self.channels {
            for oi in 0..self.ho {
                for oj in 0..self.wo {
                    let (k, s, w) = (self.k, self.stride, self.w);
                    let mut offs = (0..k).flat_map(move |ri| (0..k).map(move |rj| (oi * s + ri) * w + oj * s + rj));
                    f(q, plane * plane_len, oi, oj, self.unit(oi, oj), &mut offs);
                    q += 1;
                }
            }
        }
    }
}

#[inline(always)]
fn step<T: Real>(p: &[T], psi: ModulationActivation, x: T, h: T, c: T) -> [T; SAVED] {
    let i = sigmoid(p[0] * x + p[1] * h + p[2]);
    let f = sigmoid(p[3] * x + p[4] * h + p[5]);
    let o = sigmoid(p[6] * x + p[7] * h + p[8]);
    let g = psi.apply(p[9] * x + p[10] * h + p[11]);
    let c2 = i * g + f * c;
    let h2 = o * psi.apply(c2);
    [i, f, o, g, c2, h2]
}

fn run<T: Real>(
    lay: &Layout,
    x: &[T],
    params: &[T],
    psi: ModulationActivation,
    mut traj: Option<&mut Vec<T>>,
) -> Vec<T> {
    let mut out = Vec::with_capacity(lay.batch * lay.channels * lay.ho * lay.wo);
    lay.for_each_region(|_, base, _, _, unit, offs| {
        let p = &params[unit * PARAMS_PER_UNIT..(unit + 1) * PARAMS_PER_UNIT];
        let (mut h, mut c) = (T::zero(), T::zero());
        for off in offs {
            let s = step(p, psi, x[base + off], h, c);
            c = s[4];
            h = s[5];
            if let Some(t) = traj.as_deref_mut() {
                t.extend_from_slice(&s);
            }
        }
        out.push(h);
    });
    out
}

/// Locate the first non-finite gate by re-running the checked scalar path.
fn diagnose<T: Real>(lay: &Layout, x: &[T], params: &[T], psi: ModulationActivation) -> TensorError {
    let mut detail = String::from("pooled output");
    let mut found = false;
    lay.for_each_region(|q, base, _, _, unit, offs| {
        if found {
            return;
        }
        let p = LstmPoolParams::from_slice(&params[unit * PARAMS_PER_UNIT..]);
        let xs: Vec<f64> = offs.map(|o| x[base + o].as_f64()).collect();
        if let Err(PoolError::NonFinite { gate, step }) = run_sequence(&p, psi, &xs) {
            detail = format!("gate {gate} at step {step} of region {q}");
            found = true;
        }
    });
    TensorError::NonFinite {
        op: "lstm_pool",
        detail,
    }
}

/// Pool without recording: `[C,H,W] → [C,H',W']` or `[B,C,H,W] → [B,C,H',W']`.
///
/// `params` is `[12]` for a single unit shared by every region, or
/// `[H'·W', 12]` for one unit per output location.
pub fn pool_forward<T: Real>(
    x: &Tensor<T>,
    params: &Tensor<T>,
    k: usize,
    stride: usize,
    psi: ModulationActivation,
) -> Result<Tensor<T>> {
    let lay = Layout::new(x.shape(), params.shape(), k, stride)?;
    let out = run(&lay, x.data(), params.data(), psi, None);
    let out = Tensor::new(lay.out_shape(x.ndim() == 4), out)?;
    if !out.is_finite() {
        return Err(diagnose(&lay, x.data(), params.data(), psi));
    }
    Ok(out)
}

/// Saved trajectories for the reverse pass.
pub struct LstmPoolBackward<T: Real> {
    lay: Layout,
    psi: ModulationActivation,
    traj: Vec<T>,
}

impl<T: Real> Backward<T> for LstmPoolBackward<T> {
    fn name(&self) -> &'static str {
        "lstm_pool"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, params) = (inputs[0].data(), inputs[1].data());
        let lay = &self.lay;
        let psi = self.psi;
        let len = lay.seq_len();
        let g = grad.data();
        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dp = vec![0.0f64; params.len()];
        let mut offsets = vec![0usize; len];

        lay.for_each_region(|q, base, _, _, unit, offs| {
            for (slot, o) in offsets.iter_mut().zip(offs) {
                *slot = base + o;
            }
            let p = &params[unit * PARAMS_PER_UNIT..(unit + 1) * PARAMS_PER_UNIT];
            let acc = &mut dp[unit * PARAMS_PER_UNIT..(unit + 1) * PARAMS_PER_UNIT];
            let tr = &self.traj[q * len * SAVED..(q + 1) * len * SAVED];
            let mut dh = g[q];
            let mut dc = T::zero();
            for t in (0..len).rev() {
                let s = &tr[t * SAVED..(t + 1) * SAVED];
                let (i, f, o, gm, c) = (s[0], s[1], s[2], s[3], s[4]);
                let (h_prev, c_prev) = if t > 0 {
                    (tr[(t - 1) * SAVED + 5], tr[(t - 1) * SAVED + 4])
                } else {
                    (T::zero(), T::zero())
                };
                let xt = x[offsets[t]];
                let psi_c = psi.apply(c);
                let d_o = dh * psi_c;
                dc += dh * o * psi.derivative_from_output(psi_c);
                let zi = dc * gm * i * (T::one() - i);
                let zf = dc * c_prev * f * (T::one() - f);
                let zo = d_o * o * (T::one() - o);
                let zg = dc * i * psi.derivative_from_output(gm);
                for (gate, z) in [zi, zf, zo, zg].into_iter().enumerate() {
                    let z64 = z.as_f64();
                    acc[gate * 3] += z64 * xt.as_f64();
                    acc[gate * 3 + 1] += z64 * h_prev.as_f64();
                    acc[gate * 3 + 2] += z64;
                }
                if let Some(dx) = dx.as_mut() {
                    dx[offsets[t]] += zi * p[0] + zf * p[3] + zo * p[6] + zg * p[9];
                }
                dh = zi * p[1] + zf * p[4] + zo * p[7] + zg * p[10];
                dc = dc * f;
            }
        });

        let dx = dx.map(|d| Tensor::new(inputs[0].shape().to_vec(), d)).transpose()?;
        let dp = needs[1]
            .then(|| Tensor::new(inputs[1].shape().to_vec(), dp.iter().map(|&v| T::lit(v)).collect()))
            .transpose()?;
        Ok(vec![dx, dp])
    }
}

impl<T: Real> Tape<T> {
    /// Learnable pooling of `x[B,C,H,W]` with the unit(s) in `params`.
    ///
    /// Every channel is pooled independently by the same unit. When neither
    /// input needs a gradient no trajectories are kept.
    pub fn lstm_pool(
        &mut self,
        x: Var,
        params: Var,
        k: usize,
        stride: usize,
        psi: ModulationActivation,
    ) -> Result<Var> {
        let xt = self.value(x);
        let pt = self.value(params);
        if xt.ndim() != 4 {
            return Err(TensorError::invalid(
                "lstm_pool",
                format!("expected [B,C,H,W] input, got {:?}", xt.shape()),
            ));
        }
        let lay = Layout::new(xt.shape(), pt.shape(), k, stride)?;
        if !self.any_requires_grad(&[x, params]) {
            let out = pool_forward(xt, pt, k, stride, psi)?;
            return Ok(self.constant(out));
        }
        let mut traj = Vec::with_capacity(lay.batch * lay.channels * lay.ho * lay.wo * lay.seq_len() * SAVED);
        let out = run(&lay, xt.data(), pt.data(), psi, Some(&mut traj));
        let out = Tensor::new(lay.out_shape(true), out)?;
        if !out.is_finite() {
            return Err(diagnose(&lay, xt.data(), pt.data(), psi));
        }
        Ok(self.push_fused(out, &[x, params], Box::new(LstmPoolBackward { lay, psi, traj })))
    }
}

/// One update built from tape primitives, differentiable in the 12
/// parameters (`[12]`), the input and the previous state (each `[1]`).
/// Returns `(h', c')`.
pub fn lstm_step_on_tape<T: Real>(
    tape: &mut Tape<T>,
    params: Var,
    x: Var,
    h: Var,
    c: Var,
    psi: ModulationActivation,
) -> Result<(Var, Var)> {
    let pre = |tape: &mut Tape<T>, gate: usize| -> Result<Var> {
        let p = |tape: &mut Tape<T>, j: usize| {
            tape.apply(
                crate::autodiff::Primitive::Slice {
                    axis: 0,
                    start: 3 * gate + j,
                    len: 1,
                },
                &[params],
            )
        };
        let (w, r, b) = (p(tape, 0)?, p(tape, 1)?, p(tape, 2)?);
        let wx = tape.mul(w, x)?;
        let rh = tape.mul(r, h)?;
        let s = tape.add(wx, rh)?;
        tape.add(s, b)
    };
    let psi_on = |tape: &mut Tape<T>, v: Var| match psi {
        ModulationActivation::Tanh => tape.tanh(v),
        ModulationActivation::Relu => tape.relu(v),
        ModulationActivation::LeakyRelu { alpha } => tape.leaky_relu(v, alpha),
    };
    let zi = pre(tape, 0)?;
    let zf = pre(tape, 1)?;
    let zo = pre(tape, 2)?;
    let zg = pre(tape, 3)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let o = tape.sigmoid(zo)?;
    let g = psi_on(tape, zg)?;
    let ig = tape.mul(i, g)?;
    let fc = tape.mul(f, c)?;
    let c2 = tape.add(ig, fc)?;
    let pc = psi_on(tape, c2)?;
    let h2 = tape.mul(o, pc)?;
    Ok((h2, c2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm_pool::{LstmPoolParams, PoolRegionSequence};

    fn params_tensor(p: &LstmPoolParams) -> Tensor<f64> {
        Tensor::new(vec![12], p.to_array().to_vec()).unwrap()
    }

    fn example() -> LstmPoolParams {
        LstmPoolParams::from_array([0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.5, 0.1, 0.0])
    }

    #[test]
    fn output_shape_examples() {
        let x = Tensor::<f64>::zeros(vec![1, 8, 8]);
        let p = params_tensor(&example());
        let y = pool_forward(&x, &p, 4, 4, ModulationActivation::Relu).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        let xb = Tensor::<f64>::zeros(vec![2, 3, 6, 6]);
        let y = pool_forward(&xb, &p, 3, 3, ModulationActivation::Relu).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 2]);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let x = Tensor::<f64>::new(vec![2, 4, 4], (0..32).map(|v| v as f64).collect()).unwrap();
        let p = Tensor::<f64>::zeros(vec![12]);
        let y = pool_forward(&x, &p, 2, 2, ModulationActivation::Relu).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 4, 4]);
        let p = params_tensor(&example());
        for (k, s) in [(0, 1), (2, 0), (3, 3), (5, 1)] {
            assert!(pool_forward(&x, &p, k, s, ModulationActivation::Relu).is_err(), "k={k} s={s}");
        }
        let bad = Tensor::<f64>::zeros(vec![3, 12]);
        assert!(pool_forward(&x, &bad, 2, 2, ModulationActivation::Relu).is_err());
    }

    #[test]
    fn matches_scalar_path_per_region() {
        let x: Vec<f64> = (0..2 * 4 * 4).map(|v| ((v * 13 % 7) as f64) * 0.6).collect();
        let xt = Tensor::new(vec![2, 4, 4], x.clone()).unwrap();
        let p = example();
        let y = pool_forward(&xt, &params_tensor(&p), 2, 2, ModulationActivation::Relu).unwrap();
        for c in 0..2 {
            let plane = &x[c * 16..(c + 1) * 16];
            for oi in 0..2 {
                for oj in 0..2 {
                    let seq = PoolRegionSequence::from_plane(plane, 4, 2, 2, oi, oj);
                    let s = run_sequence(&p, ModulationActivation::Relu, seq.values()).unwrap();
                    assert!((y.at(&[c, oi, oj]) - s.h).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn overlapping_regions() {
        let x = Tensor::<f64>::new(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let p = example();
        let y = pool_forward(&x, &params_tensor(&p), 2, 1, ModulationActivation::Relu).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        let s = run_sequence(&p, ModulationActivation::Relu, &[5.0, 6.0, 8.0, 9.0]).unwrap();
        assert!((y.at(&[0, 1, 1]) - s.h).abs() < 1e-14);
    }

    #[test]
    fn non_finite_output_names_gate() {
        let x = Tensor::<f64>::full(vec![1, 2, 2], 1.0);
        let mut p = example();
        p.w_g = f64::INFINITY;
        let err = pool_forward(&x, &params_tensor(&p), 2, 2, ModulationActivation::Relu).unwrap_err();
        assert!(err.to_string().contains("gate g"), "{err}");
    }
}
