//! Operations with a hand-written backward rule over saved forward state.

use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

use super::primitive::softmax_in_place;
use super::{Backward, Tape, Var};

/// Mean softmax cross-entropy over a batch of logits `[B, K]`.
pub struct SoftmaxXent<T: Real> {
    probs: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Real> Backward<T> for SoftmaxXent<T> {
    fn name(&self) -> &'static str {
        "softmax_xent"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let b = self.labels.len();
        let scale = grad.item()? / T::lit(b as f64);
        let mut d = self.probs.clone();
        for (row, &label) in d.chunks_mut(self.classes).zip(&self.labels) {
            row[label] -= T::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), d)?)])
    }
}

/// Per-channel statistics of one training-mode batch normalization call.
#[derive(Debug, Clone)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    /// Unbiased variance estimate, as used for the running average.
    pub var: Vec<f64>,
}

struct BatchNormBackward<T: Real> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Whether mean/var were computed from this batch (training mode).
    batch_stats: bool,
    channels: usize,
    spatial: usize,
}

impl<T: Real> Backward<T> for BatchNormBackward<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let gamma = inputs[1].data();
        let (c, s) = (self.channels, self.spatial);
        let g = grad.data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (i, (gp, xp)) in g.chunks(s).zip(self.xhat.chunks(s)).enumerate() {
            let ch = i % c;
            sum_g[ch] += gp.iter().copied().sum::<T>();
            sum_gx[ch] += gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<T>();
        }
        let dx = needs[0].then(|| {
            let n = T::lit((g.len() / c) as f64);
            let mut data = Vec::with_capacity(g.len());
            for (i, (gp, xp)) in g.chunks(s).zip(self.xhat.chunks(s)).enumerate() {
                let ch = i % c;
                let k = gamma[ch] * self.inv_std[ch];
                if self.batch_stats {
                    let (mg, mgx) = (sum_g[ch] / n, sum_gx[ch] / n);
                    data.extend(gp.iter().zip(xp).map(|(&gv, &xh)| k * (gv - mg - xh * mgx)));
                } else {
                    data.extend(gp.iter().map(|&gv| k * gv));
                }
            }
            Tensor::new(inputs[0].shape().to_vec(), data).expect("shape")
        });
        let dgamma = needs[1].then(|| Tensor::new(vec![c], sum_gx).expect("shape"));
        let dbeta = needs[2].then(|| Tensor::new(vec![c], sum_g).expect("shape"));
        Ok(vec![dx, dgamma, dbeta])
    }
}

fn bn_layout(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        2 => Ok((shape[1], 1)),
        4 => Ok((shape[1], shape[2] * shape[3])),
        _ => Err(TensorError::invalid(
            "batch_norm",
            format!("expected [B,C] or [B,C,H,W], got {shape:?}"),
        )),
    }
}

impl<T: Real> Tape<T> {
    /// Mean cross-entropy of `softmax(logits)` against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if x.ndim() != 2 || x.shape()[0] != labels.len() {
            return Err(TensorError::mismatch("softmax_xent", x.shape(), &[labels.len()]));
        }
        let k = x.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::invalid(
                "softmax_xent",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let mut probs = x.data().to_vec();
        let mut loss = 0.0f64;
        for (row, &label) in probs.chunks_mut(k).zip(labels) {
            softmax_in_place(row);
            loss -= row[label].as_f64().max(f64::MIN_POSITIVE).ln();
        }
        let value = Tensor::scalar(T::lit(loss / labels.len() as f64));
        let op = SoftmaxXent {
            probs,
            labels: labels.to_vec(),
            classes: k,
        };
        Ok(self.push_fused(value, &[logits], Box::new(op)))
    }

    /// Training-mode batch normalization over every axis but the channel axis.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchNormStats)> {
        let xt = self.value(x);
        let (c, s) = bn_layout(xt.shape())?;
        self.check_affine(gamma, beta, c)?;
        let n = xt.numel() / c;
        let mut mean = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for (i, plane) in xt.data().chunks(s).enumerate() {
            mean[i % c] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for (i, plane) in xt.data().chunks(s).enumerate() {
            let m = mean[i % c];
            sq[i % c] += plane.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
        let biased: Vec<f64> = sq.iter().map(|v| v / n as f64).collect();
        let unbiased: Vec<f64> = sq.iter().map(|v| v / (n.max(2) - 1) as f64).collect();
        let (value, saved) = self.bn_apply(x, gamma, beta, &mean, &biased, eps, true);
        let var = self.push_fused(value, &[x, gamma, beta], Box::new(saved));
        Ok((var, BatchNormStats { mean, var: unbiased }))
    }

    /// Inference-mode batch normalization with frozen statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (c, _) = bn_layout(self.shape(x))?;
        self.check_affine(gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(TensorError::mismatch("batch_norm", &[c], &[mean.len(), var.len()]));
        }
        let (value, saved) = self.bn_apply(x, gamma, beta, mean, var, eps, false);
        Ok(self.push_fused(value, &[x, gamma, beta], Box::new(saved)))
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(TensorError::mismatch("batch_norm", &[c], self.shape(p)));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> (Tensor<T>, BatchNormBackward<T>) {
        let xt = self.value(x);
        let (c, s) = bn_layout(xt.shape()).expect("checked");
        let inv_std: Vec<T> = var.iter().map(|v| T::lit(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xt.numel());
        let mut out = Vec::with_capacity(xt.numel());
        for (i, plane) in xt.data().chunks(s).enumerate() {
            let ch = i % c;
            let (m, is, g, b) = (mean_t[ch], inv_std[ch], gd[ch], bd[ch]);
            for &v in plane {
                let xh = (v - m) * is;
                xhat.push(xh);
                out.push(g * xh + b);
            }
        }
        (
            Tensor::new(xt.shape().to_vec(), out).expect("shape"),
            BatchNormBackward {
                xhat,
                inv_std,
                batch_stats,
                channels: c,
                spatial: s,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(Tensor::zeros(vec![4, 10]));
        let loss = tape.softmax_xent(logits, &[0, 3, 9, 5]).unwrap();
        let v = tape.value(loss).item().unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
        assert!((v - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(Tensor::zeros(vec![1, 10]));
        assert!(tape.softmax_xent(logits, &[10]).is_err());
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| (i as f64 * 1.7).sin() * 5.0 + i as f64).collect();
        let x = tape.constant(Tensor::new(vec![2, 3, 2, 2], data).unwrap());
        let g = tape.param(Tensor::full(vec![3], 1.0));
        let b = tape.param(Tensor::zeros(vec![3]));
        let (y, stats) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
        let yt = tape.value(y);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| (0..4).map(move |s| (n, s)))
                .map(|(n, s)| yt.data()[(n * 3 + ch) * 4 + s])
                .collect();
            let m = vals.iter().sum::<f64>() / 8.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert_eq!(stats.mean.len(), 3);
        assert!(stats.var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn eval_mode_is_affine() {
        // y(a·x1 + (1-a)·x2) = a·y(x1) + (1-a)·y(x2) for frozen statistics
        let mut tape = Tape::<f64>::new();
        let g = tape.param(Tensor::from_f64(vec![2], &[1.5, -0.5]).unwrap());
        let b = tape.param(Tensor::from_f64(vec![2], &[0.2, 0.3]).unwrap());
        let x1 = Tensor::from_f64(vec![1, 2], &[1.0, 2.0]).unwrap();
        let x2 = Tensor::from_f64(vec![1, 2], &[-3.0, 0.5]).unwrap();
        let a = 0.3;
        let mix = Tensor::from_f64(vec![1, 2], &[a * 1.0 + (1.0 - a) * -3.0, a * 2.0 + (1.0 - a) * 0.5]).unwrap();
        let mut run = |t: Tensor<f64>| {
            let x = tape.constant(t);
            let y = tape.batch_norm_eval(x, g, b, &[0.1, -0.2], &[2.0, 0.5], 1e-5).unwrap();
            tape.value(y).clone()
        };
        let (y1, y2, ym) = (run(x1), run(x2), run(mix));
        for i in 0..2 {
            let lin = a * y1.data()[i] + (1.0 - a) * y2.data()[i];
            assert!((lin - ym.data()[i]).abs() < 1e-12);
        }
    }
}
