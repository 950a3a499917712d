use alloc::vec;
use alloc::vec::Vec;

use super::{NnError, Tensor};
use crate::scalar::{gemm, MatRef, Scalar};

pub(crate) fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NnError> {
    let (n, fin) = x.dims2()?;
    let (fout, win) = w.dims2()?;
    if fin != win {
        return Err(NnError::Shape {
            op: "linear",
            expected: vec![n, win],
            got: x.shape().to_vec(),
        });
    }
    let mut out = vec![T::ZERO; n * fout];
    if let Some(b) = b {
        if b.numel() != fout {
            return Err(NnError::Shape {
                op: "linear bias",
                expected: vec![fout],
                got: b.shape().to_vec(),
            });
        }
        for row in out.chunks_exact_mut(fout) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if b.is_some() { T::ONE } else { T::ZERO };
    gemm(
        MatRef::new(x.data(), n, fin),
        MatRef::new(w.data(), fout, fin).t(),
        beta,
        &mut out,
    );
    Tensor::from_vec(&[n, fout], out)
}

#[allow(clippy::type_complexity)]
pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &[T],
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (n, fin) = x.dims2().expect("rank 2");
    let fout = w.dims2().expect("rank 2").0;
    let gm = MatRef::new(g, n, fout);
    let dx = need_x.then(|| {
        let mut dx = vec![T::ZERO; n * fin];
        gemm(gm, MatRef::new(w.data(), fout, fin), T::ZERO, &mut dx);
        dx
    });
    let dw = need_w.then(|| {
        let mut dw = vec![T::ZERO; fout * fin];
        gemm(gm.t(), MatRef::new(x.data(), n, fin), T::ZERO, &mut dw);
        dw
    });
    let db = need_b.then(|| {
        let mut db = vec![T::ZERO; fout];
        for row in g.chunks_exact(fout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        db
    });
    (dx, dw, db)
}

/// Channel-axis normalization. Returns the normalized tensor and the
/// reciprocal standard deviation per `(n, position)`.
pub(crate) fn normalize_forward<T: Scalar>(
    x: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>), NnError> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let inv_c = T::ONE / T::from_usize(c);
    let mut out = vec![T::ZERO; x.numel()];
    let mut rstd = vec![T::ZERO; n * hw];
    let mut mean = vec![T::ZERO; hw];
    let mut var = vec![T::ZERO; hw];
    for s in 0..n {
        let xs = &x.data()[s * c * hw..(s + 1) * c * hw];
        mean.fill(T::ZERO);
        var.fill(T::ZERO);
        for plane in xs.chunks_exact(hw) {
            for (m, &v) in mean.iter_mut().zip(plane) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m *= inv_c;
        }
        for plane in xs.chunks_exact(hw) {
            for ((va, &m), &v) in var.iter_mut().zip(&mean).zip(plane) {
                let d = v - m;
                *va += d * d;
            }
        }
        let rs = &mut rstd[s * hw..(s + 1) * hw];
        for (r, &va) in rs.iter_mut().zip(&var) {
            *r = T::ONE / (va * inv_c + eps).sqrt();
        }
        let os = &mut out[s * c * hw..(s + 1) * c * hw];
        for (oplane, plane) in os.chunks_exact_mut(hw).zip(xs.chunks_exact(hw)) {
            for i in 0..hw {
                oplane[i] = (plane[i] - mean[i]) * rs[i];
            }
        }
    }
    Ok((Tensor::from_vec(x.shape(), out)?, rstd))
}

/// `dx = rstd · (g − mean_c(g) − x̂ · mean_c(g · x̂))`.
pub(crate) fn normalize_backward<T: Scalar>(xhat: &Tensor<T>, rstd: &[T], g: &[T]) -> Vec<T> {
    let (n, c, h, w) = xhat.dims4().expect("rank 4");
    let hw = h * w;
    let inv_c = T::ONE / T::from_usize(c);
    let mut dx = vec![T::ZERO; xhat.numel()];
    let mut mg = vec![T::ZERO; hw];
    let mut mgx = vec![T::ZERO; hw];
    for s in 0..n {
        let range = s * c * hw..(s + 1) * c * hw;
        let xs = &xhat.data()[range.clone()];
        let gs = &g[range.clone()];
        mg.fill(T::ZERO);
        mgx.fill(T::ZERO);
        for (xp, gp) in xs.chunks_exact(hw).zip(gs.chunks_exact(hw)) {
            for i in 0..hw {
                mg[i] += gp[i];
                mgx[i] += gp[i] * xp[i];
            }
        }
        let rs = &rstd[s * hw..(s + 1) * hw];
        let ds = &mut dx[range];
        for ((dp, xp), gp) in ds.chunks_exact_mut(hw).zip(xs.chunks_exact(hw)).zip(gs.chunks_exact(hw)) {
            for i in 0..hw {
                dp[i] = rs[i] * (gp[i] - mg[i] * inv_c - xp[i] * mgx[i] * inv_c);
            }
        }
    }
    dx
}

/// Returns whether `t` is per-sample (`[N, C]`) rather than shared (`[C]`).
fn affine_layout<T: Scalar>(t: &Tensor<T>, n: usize, c: usize, op: &'static str) -> Result<bool, NnError> {
    if t.numel() == c && (t.shape().len() == 1 || n == 1) {
        Ok(false)
    } else if t.numel() == n * c {
        Ok(true)
    } else {
        Err(NnError::Shape {
            op,
            expected: vec![n, c],
            got: t.shape().to_vec(),
        })
    }
}

pub(crate) fn channel_affine_forward<T: Scalar>(
    x: &Tensor<T>,
    scale: Option<&Tensor<T>>,
    shift: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let sl = scale.map(|s| affine_layout(s, n, c, "channel_affine scale")).transpose()?;
    let bl = shift.map(|s| affine_layout(s, n, c, "channel_affine shift")).transpose()?;
    let mut out = x.data().to_vec();
    for (idx, plane) in out.chunks_exact_mut(hw).enumerate() {
        let (s, ch) = (idx / c, idx % c);
        let a = match (scale, sl) {
            (Some(t), Some(per)) => t.data()[if per { s * c + ch } else { ch }],
            _ => T::ONE,
        };
        let b = match (shift, bl) {
            (Some(t), Some(per)) => t.data()[if per { s * c + ch } else { ch }],
            _ => T::ZERO,
        };
        for v in plane.iter_mut() {
            *v = *v * a + b;
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

#[allow(clippy::type_complexity)]
pub(crate) fn channel_affine_backward<T: Scalar>(
    x: &Tensor<T>,
    scale: Option<&Tensor<T>>,
    shift: Option<&Tensor<T>>,
    g: &[T],
) -> (Vec<T>, Option<Vec<T>>, Option<Vec<T>>) {
    let (n, c, h, w) = x.dims4().expect("rank 4");
    let hw = h * w;
    let sl = scale.map(|s| affine_layout(s, n, c, "").expect("validated"));
    let bl = shift.map(|s| affine_layout(s, n, c, "").expect("validated"));
    let mut dx = g.to_vec();
    let mut ds = scale.map(|s| vec![T::ZERO; s.numel()]);
    let mut db = shift.map(|s| vec![T::ZERO; s.numel()]);
    for (idx, (dplane, xplane)) in dx.chunks_exact_mut(hw).zip(x.data().chunks_exact(hw)).enumerate() {
        let (s, ch) = (idx / c, idx % c);
        if let Some(db) = db.as_mut() {
            let j = if bl == Some(true) { s * c + ch } else { ch };
            db[j] += dplane.iter().copied().sum::<T>();
        }
        if let (Some(t), Some(ds)) = (scale, ds.as_mut()) {
            let j = if sl == Some(true) { s * c + ch } else { ch };
            let mut acc = T::ZERO;
            for (&gi, &xi) in dplane.iter().zip(xplane) {
                acc += gi * xi;
            }
            ds[j] += acc;
            let a = t.data()[j];
            for d in dplane.iter_mut() {
                *d *= a;
            }
        }
    }
    (dx, ds, db)
}
