use crate::autodiff::{Primitive, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn loss_xent<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_xent(logits, labels)
}

/// Mean absolute error between two tensors of equal size.
pub fn loss_mae<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.value(pred).numel() != tape.value(target).numel() {
        return Err(TensorError::mismatch("loss_mae", tape.shape(pred), tape.shape(target)));
    }
    let target = if tape.shape(target) == tape.shape(pred) {
        target
    } else {
        let shape = tape.shape(pred).to_vec();
        tape.reshape(target, &shape)?
    };
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// Row-wise softmax of `[B, K]` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    Primitive::Softmax.forward(&[logits])
}

/// Fraction of rows whose arg-max differs from the label.
pub fn error_rate<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let wrong = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l)
        .count();
    wrong as f64 / labels.len().max(1) as f64
}

/// First index of the largest value.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mae(p: &[f64], t: &[f64]) -> f64 {
        let mut tape = Tape::<f64>::new();
        let pv = tape.param(Tensor::from_f64(vec![p.len()], p).unwrap());
        let tv = tape.constant(Tensor::from_f64(vec![t.len()], t).unwrap());
        let l = loss_mae(&mut tape, pv, tv).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 3.0], &[1.0, 3.0]), 0.0);
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 5.0]), 1.5);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f32>::from_f64(vec![2, 3], &[1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        let p = softmax(&x).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn error_rate_counts_mistakes() {
        let x = Tensor::<f64>::from_f64(vec![3, 2], &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]).unwrap();
        assert!((error_rate(&x, &[0, 0, 0]) - 1.0 / 3.0).abs() < 1e-12);
    }
}
