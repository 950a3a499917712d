use alloc::vec;
use alloc::vec::Vec;

use super::{NnError, Tensor};
use crate::metrics::ssim_window;
use crate::scalar::Scalar;

fn check_slices(d: usize, slices: &[(usize, usize)], op: &'static str) -> Result<(), NnError> {
    for &(off, len) in slices {
        if len == 0 || off + len > d {
            return Err(NnError::invalid(op, "level slice out of range"));
        }
    }
    Ok(())
}

pub(crate) fn level_softmax_forward<T: Scalar>(
    x: &Tensor<T>,
    slices: &[(usize, usize)],
) -> Result<Tensor<T>, NnError> {
    let (n, d) = x.dims2()?;
    check_slices(d, slices, "level_softmax")?;
    let mut out = vec![T::ZERO; n * d];
    for (row, orow) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        for &(off, len) in slices {
            softmax_into(&row[off..off + len], &mut orow[off..off + len]);
        }
    }
    Tensor::from_vec(&[n, d], out)
}

fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let m = logits.iter().copied().fold(logits[0], T::max);
    let mut z = T::ZERO;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub(crate) fn level_softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    slices: &[(usize, usize)],
    g: &[T],
) -> Vec<T> {
    let d = y.shape()[1];
    let mut dx = vec![T::ZERO; y.numel()];
    for ((yrow, grow), drow) in y
        .data()
        .chunks_exact(d)
        .zip(g.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
    {
        for &(off, len) in slices {
            let ys = &yrow[off..off + len];
            let gs = &grow[off..off + len];
            let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
            for i in 0..len {
                drow[off + i] = ys[i] * (gs[i] - dot);
            }
        }
    }
    dx
}

pub(crate) fn level_ce_forward<T: Scalar>(
    logits: &Tensor<T>,
    slices: &[(usize, usize)],
    targets: &[usize],
) -> Result<(T, Vec<T>), NnError> {
    let (n, d) = logits.dims2()?;
    check_slices(d, slices, "level_cross_entropy")?;
    if targets.len() != n * slices.len() {
        return Err(NnError::invalid("level_cross_entropy", "one target per sample and level required"));
    }
    let mut probs = vec![T::ZERO; n * d];
    let mut total = T::ZERO;
    for (s, (row, prow)) in logits.data().chunks_exact(d).zip(probs.chunks_exact_mut(d)).enumerate() {
        for (l, &(off, len)) in slices.iter().enumerate() {
            let t = targets[s * slices.len() + l];
            if t < off || t >= off + len {
                return Err(NnError::invalid("level_cross_entropy", "target outside its level"));
            }
            let seg = &row[off..off + len];
            let m = seg.iter().copied().fold(seg[0], T::max);
            let lse = seg.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            total += lse - row[t];
            softmax_into(seg, &mut prow[off..off + len]);
        }
    }
    Ok((total / T::from_usize(n), probs))
}

pub(crate) fn level_ce_backward<T: Scalar>(
    shape: &[usize],
    slices: &[(usize, usize)],
    targets: &[usize],
    probs: &[T],
    g: T,
) -> Vec<T> {
    let (n, d) = (shape[0], shape[1]);
    let k = g / T::from_usize(n);
    let mut dx = vec![T::ZERO; n * d];
    for s in 0..n {
        for (l, &(off, len)) in slices.iter().enumerate() {
            for i in off..off + len {
                dx[s * d + i] = k * probs[s * d + i];
            }
            dx[s * d + targets[s * slices.len() + l]] -= k;
        }
    }
    dx
}

pub(crate) fn smooth_l1_forward<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let half = T::from_f64(0.5);
    let s: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = (p - t).abs();
            if d < T::ONE {
                half * d * d
            } else {
                d - half
            }
        })
        .sum();
    s / T::from_usize(pred.len())
}

pub(crate) fn smooth_l1_backward<T: Scalar>(pred: &[T], target: &[T], g: T) -> Vec<T> {
    let k = g / T::from_usize(pred.len());
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            let dd = if d.abs() < T::ONE {
                d
            } else if d > T::ZERO {
                T::ONE
            } else {
                -T::ONE
            };
            k * dd
        })
        .collect()
}

pub(crate) fn ssim_loss_forward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T, NnError> {
    let (n, c, h, w) = pred.dims4()?;
    if h < ssim_window::SIZE || w < ssim_window::SIZE {
        return Err(NnError::invalid("ssim_loss", "image smaller than the SSIM window"));
    }
    let hw = h * w;
    let mut acc = T::ZERO;
    for (p, t) in pred.data().chunks_exact(hw).zip(target.data().chunks_exact(hw)) {
        acc += ssim_window::plane_mean(p, t, h, w);
    }
    Ok(T::ONE - acc / T::from_usize(n * c))
}

pub(crate) fn ssim_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, g: T) -> Vec<T> {
    let (n, c, h, w) = pred.dims4().expect("rank 4");
    let hw = h * w;
    let k = -g / T::from_usize(n * c);
    let mut dx = Vec::with_capacity(pred.numel());
    for (p, t) in pred.data().chunks_exact(hw).zip(target.data().chunks_exact(hw)) {
        dx.extend(ssim_window::plane_mean_grad(p, t, h, w, k));
    }
    dx
}
