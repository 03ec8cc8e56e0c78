use crate::real::{gemm, Real};
use crate::tensor::{strides, Result, Tensor, TensorError};

use super::conv;

/// Stateless operations whose backward rule needs only the input and
/// output values.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Elementwise with numpy-style broadcasting.
    Add,
    Sub,
    Mul,
    /// `[m,k] × [k,n]`.
    MatMul,
    /// Inputs `x[B,C,H,W]`, `w[O,C,KH,KW]` and an optional `bias[O]`.
    Conv2d { stride: usize, pad: usize },
    Slice { axis: usize, start: usize, len: usize },
    Concat { axis: usize },
    /// `None` reduces every element to a scalar; otherwise the axis is removed.
    ReduceMean { axis: Option<usize> },
    ReduceMax { axis: Option<usize> },
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Abs,
    Scale(f64),
    Reshape(Vec<usize>),
    /// Softmax over the last axis.
    Softmax,
    MaxPool2d { k: usize, stride: usize },
    AvgPool2d { k: usize, stride: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::Slice { .. } => "slice",
            Primitive::Concat { .. } => "concat",
            Primitive::ReduceMean { .. } => "reduce_mean",
            Primitive::ReduceMax { .. } => "reduce_max",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::LeakyRelu(_) => "leaky_relu",
            Primitive::Abs => "abs",
            Primitive::Scale(_) => "scale",
            Primitive::Reshape(_) => "reshape",
            Primitive::Softmax => "softmax",
            Primitive::MaxPool2d { .. } => "max_pool2d",
            Primitive::AvgPool2d { .. } => "avg_pool2d",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => Some(2),
            Primitive::Conv2d { .. } | Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }

    /// Evaluate without recording.
    pub fn forward<T: Real>(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let name = self.name();
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(TensorError::invalid(
                    name,
                    format!("expected {n} inputs, got {}", inputs.len()),
                ));
            }
        }
        match self {
            Primitive::Add => binary(name, inputs[0], inputs[1], |a, b| a + b),
            Primitive::Sub => binary(name, inputs[0], inputs[1], |a, b| a - b),
            Primitive::Mul => binary(name, inputs[0], inputs[1], |a, b| a * b),
            Primitive::MatMul => matmul(inputs[0], inputs[1]),
            Primitive::Conv2d { stride, pad } => {
                if inputs.len() != 2 && inputs.len() != 3 {
                    return Err(TensorError::invalid(name, "expects x, w and optional bias"));
                }
                conv::conv2d_forward(inputs[0], inputs[1], inputs.get(2).copied(), *stride, *pad)
            }
            Primitive::Slice { axis, start, len } => slice(inputs[0], *axis, *start, *len),
            Primitive::Concat { axis } => concat(inputs, *axis),
            Primitive::ReduceMean { axis } => reduce(name, inputs[0], *axis, Reduce::Mean),
            Primitive::ReduceMax { axis } => reduce(name, inputs[0], *axis, Reduce::Max),
            Primitive::Sigmoid => Ok(inputs[0].map(sigmoid)),
            Primitive::Tanh => Ok(inputs[0].map(|v| v.tanh())),
            Primitive::Relu => Ok(inputs[0].map(|v| if v > T::zero() { v } else { T::zero() })),
            Primitive::LeakyRelu(alpha) => {
                let a = T::lit(*alpha);
                Ok(inputs[0].map(|v| if v > T::zero() { v } else { a * v }))
            }
            Primitive::Abs => Ok(inputs[0].map(|v| v.abs())),
            Primitive::Scale(s) => {
                let s = T::lit(*s);
                Ok(inputs[0].map(|v| v * s))
            }
            Primitive::Reshape(shape) => inputs[0].clone().reshape(shape.clone()),
            Primitive::Softmax => softmax(inputs[0]),
            Primitive::MaxPool2d { k, stride } => conv::max_pool_forward(inputs[0], *k, *stride),
            Primitive::AvgPool2d { k, stride } => conv::avg_pool_forward(inputs[0], *k, *stride),
        }
    }

    pub(crate) fn backward<T: Real>(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let unary = |f: &mut dyn FnMut(&mut [T])| -> Vec<Option<Tensor<T>>> {
            let mut data = vec![T::zero(); grad.numel()];
            f(&mut data);
            vec![Some(Tensor::new(x.shape().to_vec(), data).expect("shape"))]
        };
        let g = grad.data();
        Ok(match self {
            Primitive::Add => broadcast_backward(inputs, grad, needs, |_, _| (T::one(), T::one())),
            Primitive::Sub => {
                broadcast_backward(inputs, grad, needs, |_, _| (T::one(), -T::one()))
            }
            Primitive::Mul => broadcast_backward(inputs, grad, needs, |a, b| (b, a)),
            Primitive::MatMul => matmul_backward(inputs[0], inputs[1], grad, needs),
            Primitive::Conv2d { stride, pad } => {
                conv::conv2d_backward(inputs, grad, *stride, *pad, needs)
            }
            Primitive::Slice { axis, start, .. } => {
                vec![Some(slice_backward(x.shape(), grad, *axis, *start))]
            }
            Primitive::Concat { axis } => concat_backward(inputs, grad, *axis, needs),
            Primitive::ReduceMean { axis } => vec![Some(reduce_backward(x, grad, *axis, Reduce::Mean))],
            Primitive::ReduceMax { axis } => vec![Some(reduce_backward(x, grad, *axis, Reduce::Max))],
            Primitive::Sigmoid => {
                let y = output.data();
                unary(&mut |d| each(d, g, y, |gv, yv| gv * yv * (T::one() - yv)))
            }
            Primitive::Tanh => {
                let y = output.data();
                unary(&mut |d| each(d, g, y, |gv, yv| gv * (T::one() - yv * yv)))
            }
            Primitive::Relu => {
                let xd = x.data();
                unary(&mut |d| each(d, g, xd, |gv, xv| if xv > T::zero() { gv } else { T::zero() }))
            }
            Primitive::LeakyRelu(alpha) => {
                let a = T::lit(*alpha);
                let xd = x.data();
                unary(&mut |d| each(d, g, xd, |gv, xv| if xv > T::zero() { gv } else { a * gv }))
            }
            Primitive::Abs => {
                let xd = x.data();
                unary(&mut |d| {
                    each(d, g, xd, |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                })
            }
            Primitive::Scale(s) => {
                let s = T::lit(*s);
                unary(&mut |d| each(d, g, g, |gv, _| gv * s))
            }
            Primitive::Reshape(_) => vec![Some(grad.clone().reshape(x.shape().to_vec())?)],
            Primitive::Softmax => vec![Some(softmax_backward(output, grad))],
            Primitive::MaxPool2d { k, stride } => {
                vec![Some(conv::max_pool_backward(x, grad, *k, *stride))]
            }
            Primitive::AvgPool2d { k, stride } => {
                vec![Some(conv::avg_pool_backward(x, grad, *k, *stride))]
            }
        })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::mismatch(op, a, b)),
        };
    }
    Ok(out)
}

/// For every element of `out`, the flat index of the broadcast source in `input`.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let n = out.len();
    let in_strides = strides(input);
    let mut eff = vec![0usize; n];
    for i in 0..input.len() {
        let j = i + n - input.len();
        if input[i] != 1 {
            eff[j] = in_strides[i];
        }
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for d in (0..n).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let ma = broadcast_map(&out, a.shape());
    let mb = broadcast_map(&out, b.shape());
    let (ad, bd) = (a.data(), b.data());
    let data = ma.iter().zip(&mb).map(|(&i, &j)| f(ad[i], bd[j])).collect();
    Tensor::new(out, data)
}

/// `local(a, b)` returns the partial derivatives (d/da, d/db) at one element.
fn broadcast_backward<T: Real>(
    inputs: &[&Tensor<T>],
    grad: &Tensor<T>,
    needs: &[bool],
    local: impl Fn(T, T) -> (T, T),
) -> Vec<Option<Tensor<T>>> {
    let (a, b) = (inputs[0], inputs[1]);
    let g = grad.data();
    let mut ga = needs[0].then(|| Tensor::zeros(a.shape().to_vec()));
    let mut gb = needs[1].then(|| Tensor::zeros(b.shape().to_vec()));
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        for i in 0..g.len() {
            let (da, db) = local(ad[i], bd[i]);
            if let Some(t) = ga.as_mut() {
                t.data_mut()[i] = g[i] * da;
            }
            if let Some(t) = gb.as_mut() {
                t.data_mut()[i] = g[i] * db;
            }
        }
    } else {
        let ma = broadcast_map(grad.shape(), a.shape());
        let mb = broadcast_map(grad.shape(), b.shape());
        for i in 0..g.len() {
            let (da, db) = local(ad[ma[i]], bd[mb[i]]);
            if let Some(t) = ga.as_mut() {
                t.data_mut()[ma[i]] += g[i] * da;
            }
            if let Some(t) = gb.as_mut() {
                t.data_mut()[mb[i]] += g[i] * db;
            }
        }
    }
    vec![ga, gb]
}

fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::mismatch("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, T::zero(), &mut c);
    Tensor::new(vec![m, n], c)
}

fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let ga = needs[0].then(|| {
        let mut d = vec![T::zero(); m * k];
        gemm(m, n, k, grad.data(), false, b.data(), true, T::zero(), &mut d);
        Tensor::new(vec![m, k], d).expect("shape")
    });
    let gb = needs[1].then(|| {
        let mut d = vec![T::zero(); k * n];
        gemm(k, m, n, a.data(), true, grad.data(), false, T::zero(), &mut d);
        Tensor::new(vec![k, n], d).expect("shape")
    });
    vec![ga, gb]
}

/// (outer, axis extent, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn slice<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
        return Err(TensorError::invalid(
            "slice",
            format!("range {start}..{} on axis {axis} of {:?}", start + len, x.shape()),
        ));
    }
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, data)
}

fn slice_backward<T: Real>(in_shape: &[usize], grad: &Tensor<T>, axis: usize, start: usize) -> Tensor<T> {
    let (outer, extent, inner) = split_axis(in_shape, axis);
    let len = grad.shape()[axis];
    let mut out = Tensor::zeros(in_shape.to_vec());
    for o in 0..outer {
        let dst = (o * extent + start) * inner;
        let src = o * len * inner;
        out.data_mut()[dst..dst + len * inner].copy_from_slice(&grad.data()[src..src + len * inner]);
    }
    out
}

fn concat<T: Real>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
    if axis >= first.ndim() {
        return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
    }
    let mut total = 0;
    for t in inputs {
        let same = t.ndim() == first.ndim()
            && t.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !same {
            return Err(TensorError::mismatch("concat", first.shape(), t.shape()));
        }
        total += t.shape()[axis];
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let chunk = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

fn concat_backward<T: Real>(
    inputs: &[&Tensor<T>],
    grad: &Tensor<T>,
    axis: usize,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let mut start = 0;
    inputs
        .iter()
        .zip(needs)
        .map(|(t, &need)| {
            let len = t.shape()[axis];
            let g = need.then(|| slice(grad, axis, start, len).expect("in range"));
            start += len;
            g
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Reduce {
    Mean,
    Max,
}

fn reduce<T: Real>(op: &'static str, x: &Tensor<T>, axis: Option<usize>, kind: Reduce) -> Result<Tensor<T>> {
    if x.numel() == 0 {
        return Err(TensorError::invalid(op, "empty input"));
    }
    let (outer, extent, inner, shape) = match axis {
        None => (1, x.numel(), 1, Vec::new()),
        Some(a) if a < x.ndim() => {
            let (o, e, i) = split_axis(x.shape(), a);
            let mut s = x.shape().to_vec();
            s.remove(a);
            (o, e, i, s)
        }
        Some(a) => return Err(TensorError::invalid(op, format!("axis {a} out of range"))),
    };
    let d = x.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| d[(o * extent + j) * inner + i];
            out.push(match kind {
                Reduce::Mean => (0..extent).map(at).sum::<T>() / T::lit(extent as f64),
                Reduce::Max => (1..extent).map(at).fold(at(0), |m, v| if v > m { v } else { m }),
            });
        }
    }
    Tensor::new(shape, out)
}

fn reduce_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>, axis: Option<usize>, kind: Reduce) -> Tensor<T> {
    let (outer, extent, inner) = match axis {
        None => (1, x.numel(), 1),
        Some(a) => split_axis(x.shape(), a),
    };
    let d = x.data();
    let g = grad.data();
    let mut out = Tensor::zeros(x.shape().to_vec());
    let od = out.data_mut();
    let inv = T::one() / T::lit(extent as f64);
    for o in 0..outer {
        for i in 0..inner {
            let gi = g[o * inner + i];
            let at = |j: usize| (o * extent + j) * inner + i;
            match kind {
                Reduce::Mean => {
                    for j in 0..extent {
                        od[at(j)] = gi * inv;
                    }
                }
                Reduce::Max => {
                    // first maximal index wins
                    let mut best = 0;
                    for j in 1..extent {
                        if d[at(j)] > d[at(best)] {
                            best = j;
                        }
                    }
                    od[at(best)] = gi;
                }
            }
        }
    }
    out
}

fn softmax<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| TensorError::invalid("softmax", "scalar input"))?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn softmax_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().expect("softmax output has an axis");
    let mut out = Tensor::zeros(y.shape().to_vec());
    for ((o, yr), gr) in out
        .data_mut()
        .chunks_mut(n)
        .zip(y.data().chunks(n))
        .zip(grad.data().chunks(n))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..n {
            o[j] = yr[j] * (gr[j] - dot);
        }
    }
    out
}

/// `d[i] = f(a[i], b[i])`.
#[inline]
fn each<T: Real>(d: &mut [T], a: &[T], b: &[T], f: impl Fn(T, T) -> T) {
    for ((o, &x), &y) in d.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}
