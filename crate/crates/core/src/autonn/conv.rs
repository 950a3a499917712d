use alloc::vec;
use alloc::vec::Vec;

use super::{NnError, Tensor};
use crate::scalar::{gemm, MatRef, Scalar};

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfolds one `[C, H, W]` plane stack into `[C·k·k, Ho·Wo]` columns with
/// zero padding.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut [T],
) {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // valid ox range: 0 <= ox + kx - pad < w
                        let lo = pad.saturating_sub(kx).min(wo);
                        let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                        dst[..lo].fill(T::ZERO);
                        dst[hi..].fill(T::ZERO);
                        let start = lo + kx - pad;
                        dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::ZERO
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    x: &mut [T],
) {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kx).min(wo);
                        let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                        let start = lo + kx - pad;
                        for (d, &v) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += v;
                        }
                        continue;
                    }
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize), NnError> {
    let (n, c, h, w) = x.dims4()?;
    let (co, ci, kh, kw) = wt.dims4()?;
    if ci != c {
        return Err(NnError::Channels {
            op: "conv2d",
            expected: ci,
            got: c,
        });
    }
    if kh != kw || kh % 2 == 0 {
        return Err(NnError::invalid("conv2d", "kernel must be square and odd-sized"));
    }
    if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(NnError::invalid("conv2d", "input smaller than kernel"));
    }
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kh, stride, pad);
    Ok((n, c, h, w, co, kh, ho, wo))
}

fn is_pointwise(k: usize, stride: usize, pad: usize) -> bool {
    k == 1 && stride == 1 && pad == 0
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w, co, k, ho, wo) = conv_dims(x, wt, stride, pad)?;
    if let Some(b) = b {
        if b.numel() != co {
            return Err(NnError::Shape {
                op: "conv2d bias",
                expected: vec![co],
                got: b.shape().to_vec(),
            });
        }
    }
    let kk = c * k * k;
    let p = ho * wo;
    let mut out = vec![T::ZERO; n * co * p];
    let mut col = if is_pointwise(k, stride, pad) {
        Vec::new()
    } else {
        vec![T::ZERO; kk * p]
    };
    let wm = MatRef::new(wt.data(), co, kk);
    for s in 0..n {
        let xs = &x.data()[s * c * h * w..(s + 1) * c * h * w];
        let os = &mut out[s * co * p..(s + 1) * co * p];
        if let Some(b) = b {
            for (o, &bv) in os.chunks_exact_mut(p).zip(b.data()) {
                o.fill(bv);
            }
        }
        let beta = if b.is_some() { T::ONE } else { T::ZERO };
        if is_pointwise(k, stride, pad) {
            gemm(wm, MatRef::new(xs, kk, p), beta, os);
        } else {
            im2col(xs, c, h, w, k, stride, pad, &mut col);
            gemm(wm, MatRef::new(&col, kk, p), beta, os);
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out)
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    g: &[T],
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (n, c, h, w, co, k, ho, wo) = conv_dims(x, wt, stride, pad).expect("validated in forward");
    let kk = c * k * k;
    let p = ho * wo;
    let pointwise = is_pointwise(k, stride, pad);
    let mut dx = need_x.then(|| vec![T::ZERO; x.numel()]);
    let mut dw = need_w.then(|| vec![T::ZERO; wt.numel()]);
    let mut db = need_b.then(|| vec![T::ZERO; co]);
    let mut col = if pointwise || !need_w {
        Vec::new()
    } else {
        vec![T::ZERO; kk * p]
    };
    let mut dcol = if pointwise || !need_x {
        Vec::new()
    } else {
        vec![T::ZERO; kk * p]
    };
    let wm = MatRef::new(wt.data(), co, kk);
    for s in 0..n {
        let gs = &g[s * co * p..(s + 1) * co * p];
        let gm = MatRef::new(gs, co, p);
        let xs = &x.data()[s * c * h * w..(s + 1) * c * h * w];
        if let Some(dw) = dw.as_mut() {
            if pointwise {
                gemm(gm, MatRef::new(xs, kk, p).t(), T::ONE, dw);
            } else {
                im2col(xs, c, h, w, k, stride, pad, &mut col);
                gemm(gm, MatRef::new(&col, kk, p).t(), T::ONE, dw);
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * c * h * w..(s + 1) * c * h * w];
            if pointwise {
                gemm(wm.t(), gm, T::ONE, dxs);
            } else {
                gemm(wm.t(), gm, T::ZERO, &mut dcol);
                col2im(&dcol, c, h, w, k, stride, pad, dxs);
            }
        }
        if let Some(db) = db.as_mut() {
            for (d, row) in db.iter_mut().zip(gs.chunks_exact(p)) {
                *d += row.iter().copied().sum::<T>();
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = x.dims4()?;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; n * c * h2 * w2];
    for (src, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(h2 * w2)) {
        for y in 0..h2 {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            let drow = &mut dst[y * w2..(y + 1) * w2];
            for (xx, d) in drow.iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    Tensor::from_vec(&[n, c, h2, w2], out)
}

pub(crate) fn upsample2x_backward<T: Scalar>(x: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (_, _, h, w) = x.dims4().expect("rank 4");
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![T::ZERO; x.numel()];
    for (dst, src) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(h2 * w2)) {
        for y in 0..h2 {
            let srow = &src[y * w2..(y + 1) * w2];
            let drow = &mut dst[(y / 2) * w..(y / 2 + 1) * w];
            for (xx, &v) in srow.iter().enumerate() {
                drow[xx / 2] += v;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct nested-loop convolution used as an independent reference.
    fn naive(x: &Tensor<f64>, wt: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let (co, _, k, _) = wt.dims4().unwrap();
        let ho = conv_out_size(h, k, stride, pad);
        let wo = conv_out_size(w, k, stride, pad);
        let mut out = vec![0.0; n * co * ho * wo];
        for s in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * c + ci) * h + iy as usize) * w + ix as usize]
                                        * wt.data()[((o * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((s * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], k: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64) * k).sin()).collect()).unwrap()
    }

    #[test]
    fn matches_naive_for_strides_and_pads() {
        for &(k, stride, pad, h, w) in &[
            (3, 1, 1, 5, 6),
            (3, 2, 1, 8, 8),
            (3, 2, 1, 7, 5),
            (1, 1, 0, 4, 4),
            (5, 1, 2, 6, 5),
            (3, 1, 0, 5, 5),
        ] {
            let x = ramp(&[2, 3, h, w], 0.37);
            let wt = ramp(&[4, 3, k, k], 1.13);
            let got = conv2d_forward(&x, &wt, None, stride, pad).unwrap();
            let want = naive(&x, &wt, stride, pad);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride} p={pad}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w, k, s, p) = (2, 5, 7, 3, 2, 1);
        let x = ramp(&[c, h, w], 0.71);
        let ho = conv_out_size(h, k, s, p);
        let wo = conv_out_size(w, k, s, p);
        let y = ramp(&[c * k * k, ho * wo], 0.29);
        let mut col = vec![0.0; c * k * k * ho * wo];
        im2col(x.data(), c, h, w, k, s, p, &mut col);
        let mut back = vec![0.0; c * h * w];
        col2im(y.data(), c, h, w, k, s, p, &mut back);
        let lhs: f64 = col.iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        let wt = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(conv2d_forward(&x, &wt, None, 1, 0).is_err());
    }
}
