use serde::Serialize;

use crate::tensor::{Result, Tensor};

use super::{Tape, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` was attained.
    pub offending_index: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rtol: f64,
    pub passed: bool,
    /// Set when the function itself failed to evaluate.
    pub error: Option<String>,
}

fn eval<F>(f: &F, point: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    tape.value(y).item()
}

/// Check `f` (a scalar-valued graph builder over one input) at `point`.
///
/// Each coordinate is perturbed by `step · max(1, |x_i|)`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64, rtol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        offending_index: None,
        analytic: Vec::new(),
        numeric: Vec::new(),
        rtol,
        passed: false,
        error: None,
    };
    match run(&f, point, step, &mut report) {
        Ok(()) => report.passed = report.max_rel_error <= rtol,
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

fn run<F>(f: &F, point: &Tensor<f64>, step: f64, report: &mut GradCheckReport) -> Result<()>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    report.analytic = grads.get(x).expect("param gradient").to_f64_vec();

    let mut probe = point.clone();
    for i in 0..point.numel() {
        let x0 = point.data()[i];
        let h = step * x0.abs().max(1.0);
        probe.data_mut()[i] = x0 + h;
        let up = eval(f, &probe)?;
        probe.data_mut()[i] = x0 - h;
        let down = eval(f, &probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (up - down) / (2.0 * h);
        report.numeric.push(numeric);

        let a = report.analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if err > report.max_rel_error || report.offending_index.is_none() {
            report.max_rel_error = err;
            report.offending_index = Some(i);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Backward, Primitive};
    use crate::tensor::TensorError;

    #[test]
    fn sum_of_squares_passes() {
        let p = Tensor::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap();
        let r = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.apply(Primitive::ReduceMean { axis: None }, &[sq]).and_then(|m| t.scale(m, 3.0))
            },
            &p,
            1e-3,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
        for (a, e) in r.analytic.iter().zip([2.0, 4.0, 6.0]) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    /// sin(x) with a deliberately wrong derivative (returns sin instead of cos).
    struct WrongSin;

    impl Backward<f64> for WrongSin {
        fn name(&self) -> &'static str {
            "wrong_sin"
        }

        fn backward(
            &self,
            inputs: &[&Tensor<f64>],
            _output: &Tensor<f64>,
            grad: &Tensor<f64>,
            _needs: &[bool],
        ) -> std::result::Result<Vec<Option<Tensor<f64>>>, TensorError> {
            let g = inputs[0].map(f64::sin);
            let d = g.data().iter().zip(grad.data()).map(|(a, b)| a * b).collect();
            Ok(vec![Some(Tensor::new(g.shape().to_vec(), d)?)])
        }
    }

    #[test]
    fn wrong_backward_rule_fails() {
        let p = Tensor::from_f64(vec![2], &[0.3, 1.1]).unwrap();
        let r = grad_check(
            |t, x| {
                let v = t.value(x).map(f64::sin);
                let s = t.push_fused(v, &[x], Box::new(WrongSin));
                t.mean(s)
            },
            &p,
            1e-3,
            1e-4,
        );
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.1);
        assert!(r.offending_index.is_some());
    }

    #[test]
    fn evaluation_error_is_reported_not_raised() {
        let p = Tensor::from_f64(vec![2], &[0.3, 1.1]).unwrap();
        let r = grad_check(|t, x| t.relu(x), &p, 1e-3, 1e-4);
        assert!(!r.passed);
        assert!(r.error.unwrap().contains("scalar"));
    }
}
