//! Convolution by explicit patch extraction, plus max/avg pooling.

use crate::real::{gemm, Real};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }
}

fn conv_geom<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
    if x.ndim() != 4 || w.ndim() != 4 || x.shape()[1] != w.shape()[1] {
        return Err(TensorError::mismatch("conv2d", x.shape(), w.shape()));
    }
    if stride == 0 {
        return Err(TensorError::invalid("conv2d", "stride must be positive"));
    }
    let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(TensorError::mismatch("conv2d", x.shape(), w.shape()));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    Ok((
        b,
        o,
        ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        },
    ))
}

/// Output columns `lo..hi` whose input column `ow·stride + kj − pad` lies
/// inside the image.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.wo);
    let hi = if g.w + g.pad > kj {
        ((g.w - 1 + g.pad - kj) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfold one image `[C,H,W]` into `[C·KH·KW, HO·WO]`.
fn im2col<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let n = g.out_len();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_cols(g, kj);
                let dst = &mut cols[row * n..(row + 1) * n];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih as usize >= g.h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, s) in out_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Fold `[C·KH·KW, HO·WO]` back onto an image, accumulating overlaps.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let n = g.out_len();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_cols(g, kj);
                let src = &cols[row * n..(row + 1) * n];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih as usize >= g.h {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let first = lo * g.stride + kj - g.pad;
                    let row_src = &src[oh * g.wo + lo..oh * g.wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + row_src.len()].iter_mut().zip(row_src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(row_src) {
                            *d += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(super) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, o, g) = conv_geom(x, w, stride, pad)?;
    if let Some(bias) = bias {
        if bias.shape() != [o] {
            return Err(TensorError::mismatch("conv2d", w.shape(), bias.shape()));
        }
    }
    let (pl, n) = (g.patch_len(), g.out_len());
    let img_len = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); pl * n];
    let mut out = vec![T::zero(); b * o * n];
    for bi in 0..b {
        im2col(&x.data()[bi * img_len..(bi + 1) * img_len], &g, &mut cols);
        let dst = &mut out[bi * o * n..(bi + 1) * o * n];
        gemm(o, pl, n, w.data(), false, &cols, false, T::zero(), dst);
        if let Some(bias) = bias {
            for (oc, chunk) in dst.chunks_mut(n).enumerate() {
                let bv = bias.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::new(vec![b, o, g.ho, g.wo], out)
}

pub(super) fn conv2d_backward<T: Real>(
    inputs: &[&Tensor<T>],
    grad: &Tensor<T>,
    stride: usize,
    pad: usize,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let (x, w) = (inputs[0], inputs[1]);
    let (b, o, g) = conv_geom(x, w, stride, pad).expect("validated in forward");
    let (pl, n) = (g.patch_len(), g.out_len());
    let img_len = g.c * g.h * g.w;
    let mut dx = needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = needs[1].then(|| Tensor::zeros(w.shape().to_vec()));
    let mut db = (inputs.len() > 2 && needs[2]).then(|| Tensor::zeros(vec![o]));
    let mut cols = vec![T::zero(); pl * n];
    let mut dcols = vec![T::zero(); pl * n];
    for bi in 0..b {
        let gout = &grad.data()[bi * o * n..(bi + 1) * o * n];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[bi * img_len..(bi + 1) * img_len], &g, &mut cols);
            gemm(o, n, pl, gout, false, &cols, true, T::one(), dw.data_mut());
        }
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in gout.chunks(n).enumerate() {
                db.data_mut()[oc] += chunk.iter().copied().sum();
            }
        }
        if let Some(dx) = dx.as_mut() {
            gemm(pl, o, n, w.data(), true, gout, false, T::zero(), &mut dcols);
            col2im(&dcols, &g, &mut dx.data_mut()[bi * img_len..(bi + 1) * img_len]);
        }
    }
    let mut out = vec![dx, dw];
    if inputs.len() > 2 {
        out.push(db);
    }
    out
}

/// Output extents of a `k×k` window sweep that must tile the input exactly.
pub fn pool_output_dims(op: &'static str, h: usize, w: usize, k: usize, stride: usize) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 {
        return Err(TensorError::invalid(op, "region size and stride must be positive"));
    }
    if k > h || k > w || (h - k) % stride != 0 || (w - k) % stride != 0 {
        return Err(TensorError::invalid(
            op,
            format!("{h}x{w} input is not tiled exactly by k={k}, stride={stride}"),
        ));
    }
    Ok(((h - k) / stride + 1, (w - k) / stride + 1))
}

fn pool_dims<T: Real>(op: &'static str, x: &Tensor<T>, k: usize, stride: usize) -> Result<[usize; 6]> {
    if x.ndim() != 4 {
        return Err(TensorError::invalid(op, format!("expected NCHW input, got {:?}", x.shape())));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = pool_output_dims(op, h, w, k, stride)?;
    Ok([b * c, h, w, ho, wo, 0])
}

/// Row-major offsets (within a plane) of region `(oi, oj)`.
fn region_offsets(w: usize, k: usize, stride: usize, oi: usize, oj: usize) -> impl Iterator<Item = usize> {
    (0..k).flat_map(move |ri| (0..k).map(move |rj| (oi * stride + ri) * w + oj * stride + rj))
}

/// Index of the first maximal value within the region, in scan order.
fn region_argmax<T: Real>(plane: &[T], w: usize, k: usize, stride: usize, oi: usize, oj: usize) -> usize {
    let mut best = None::<(usize, T)>;
    for off in region_offsets(w, k, stride, oi, oj) {
        match best {
            Some((_, v)) if plane[off] <= v => {}
            _ => best = Some((off, plane[off])),
        }
    }
    best.expect("non-empty region").0
}

pub(super) fn max_pool_forward<T: Real>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let [planes, h, w, ho, wo, _] = pool_dims("max_pool2d", x, k, stride)?;
    let mut out = Vec::with_capacity(planes * ho * wo);
    for plane in x.data().chunks(h * w) {
        for oi in 0..ho {
            for oj in 0..wo {
                out.push(plane[region_argmax(plane, w, k, stride, oi, oj)]);
            }
        }
    }
    let s = x.shape();
    Tensor::new(vec![s[0], s[1], ho, wo], out)
}

pub(super) fn max_pool_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>, k: usize, stride: usize) -> Tensor<T> {
    let [_, h, w, ho, wo, _] = pool_dims("max_pool2d", x, k, stride).expect("validated");
    let mut dx = Tensor::zeros(x.shape().to_vec());
    for ((plane, dplane), gplane) in x
        .data()
        .chunks(h * w)
        .zip(dx.data_mut().chunks_mut(h * w))
        .zip(grad.data().chunks(ho * wo))
    {
        for oi in 0..ho {
            for oj in 0..wo {
                dplane[region_argmax(plane, w, k, stride, oi, oj)] += gplane[oi * wo + oj];
            }
        }
    }
    dx
}

pub(super) fn avg_pool_forward<T: Real>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let [planes, h, w, ho, wo, _] = pool_dims("avg_pool2d", x, k, stride)?;
    let inv = T::one() / T::lit((k * k) as f64);
    let mut out = Vec::with_capacity(planes * ho * wo);
    for plane in x.data().chunks(h * w) {
        for oi in 0..ho {
            for oj in 0..wo {
                out.push(region_offsets(w, k, stride, oi, oj).map(|o| plane[o]).sum::<T>() * inv);
            }
        }
    }
    let s = x.shape();
    Tensor::new(vec![s[0], s[1], ho, wo], out)
}

pub(super) fn avg_pool_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>, k: usize, stride: usize) -> Tensor<T> {
    let [_, h, w, ho, wo, _] = pool_dims("avg_pool2d", x, k, stride).expect("validated");
    let inv = T::one() / T::lit((k * k) as f64);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    for (dplane, gplane) in dx.data_mut().chunks_mut(h * w).zip(grad.data().chunks(ho * wo)) {
        for oi in 0..ho {
            for oj in 0..wo {
                let gv = gplane[oi * wo + oj] * inv;
                for off in region_offsets(w, k, stride, oi, oj) {
                    dplane[off] += gv;
                }
            }
        }
    }
    dx
}
