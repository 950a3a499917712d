//! Full-reference quality metrics on unit-peak images.

use crate::image::{Image, ImageError};

/// Returned by [`psnr`] when the images are identical.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

fn same_dims(a: &Image, b: &Image) -> Result<(), ImageError> {
    if a.dims() != b.dims() {
        return Err(ImageError::Mismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, ImageError> {
    same_dims(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.data().len() as f64)
}

/// `10·log10(1 / MSE)` in decibels; [`PSNR_IDENTICAL`] for zero error.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImageError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(-10.0 * libm::log10(m))
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ = 1.5), averaged over
/// channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, ImageError> {
    same_dims(a, b)?;
    let (h, w, c) = a.dims();
    if h < ssim_window::SIZE || w < ssim_window::SIZE {
        return Err(ImageError::TooSmall {
            height: h,
            width: w,
            min: ssim_window::SIZE,
        });
    }
    let mut total = 0.0;
    for ch in 0..c {
        let pa: alloc::vec::Vec<f64> = a.plane(ch).into_iter().map(f64::from).collect();
        let pb: alloc::vec::Vec<f64> = b.plane(ch).into_iter().map(f64::from).collect();
        total += ssim_window::plane_mean(&pa, &pb, h, w);
    }
    Ok(total / c as f64)
}

/// Windowed SSIM statistics shared by the metric and the differentiable loss.
pub mod ssim_window {
    use alloc::vec;
    use alloc::vec::Vec;

    use crate::scalar::Scalar;

    pub const SIZE: usize = 11;
    pub const SIGMA: f64 = 1.5;
    pub const K1: f64 = 0.01;
    pub const K2: f64 = 0.03;
    const C1: f64 = K1 * K1;
    const C2: f64 = K2 * K2;

    pub fn window<T: Scalar>() -> [T; SIZE] {
        let mut w = [0.0f64; SIZE];
        let half = (SIZE / 2) as f64;
        for (i, v) in w.iter_mut().enumerate() {
            let d = i as f64 - half;
            *v = libm::exp(-d * d / (2.0 * SIGMA * SIGMA));
        }
        let s: f64 = w.iter().sum();
        w.map(|v| T::from_f64(v / s))
    }

    /// Separable filtering over positions where the whole window fits.
    fn filter_valid<T: Scalar>(src: &[T], h: usize, w: usize, win: &[T; SIZE]) -> Vec<T> {
        let (ho, wo) = (h - SIZE + 1, w - SIZE + 1);
        let mut tmp = vec![T::ZERO; h * wo];
        for r in 0..h {
            let row = &src[r * w..(r + 1) * w];
            let out = &mut tmp[r * wo..(r + 1) * wo];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = T::ZERO;
                for t in 0..SIZE {
                    acc += win[t] * row[j + t];
                }
                *o = acc;
            }
        }
        let mut out = vec![T::ZERO; ho * wo];
        for i in 0..ho {
            let o = &mut out[i * wo..(i + 1) * wo];
            for t in 0..SIZE {
                let row = &tmp[(i + t) * wo..(i + t + 1) * wo];
                for j in 0..wo {
                    o[j] += win[t] * row[j];
                }
            }
        }
        out
    }

    /// Adjoint of `filter_valid`, accumulated into `dst` (`h × w`).
    fn filter_valid_adjoint<T: Scalar>(src: &[T], h: usize, w: usize, win: &[T; SIZE], dst: &mut [T]) {
        let (ho, wo) = (h - SIZE + 1, w - SIZE + 1);
        let mut tmp = vec![T::ZERO; h * wo];
        for i in 0..ho {
            let s = &src[i * wo..(i + 1) * wo];
            for t in 0..SIZE {
                let row = &mut tmp[(i + t) * wo..(i + t + 1) * wo];
                for j in 0..wo {
                    row[j] += win[t] * s[j];
                }
            }
        }
        for r in 0..h {
            let s = &tmp[r * wo..(r + 1) * wo];
            let d = &mut dst[r * w..(r + 1) * w];
            for (j, &v) in s.iter().enumerate() {
                for t in 0..SIZE {
                    d[j + t] += win[t] * v;
                }
            }
        }
    }

    struct Stats<T> {
        mx: Vec<T>,
        my: Vec<T>,
        vx: Vec<T>,
        vy: Vec<T>,
        cxy: Vec<T>,
    }

    fn stats<T: Scalar>(x: &[T], y: &[T], h: usize, w: usize, win: &[T; SIZE]) -> Stats<T> {
        let mx = filter_valid(x, h, w, win);
        let my = filter_valid(y, h, w, win);
        let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
        let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
        let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
        let mut vx = filter_valid(&xx, h, w, win);
        let mut vy = filter_valid(&yy, h, w, win);
        let mut cxy = filter_valid(&xy, h, w, win);
        for i in 0..mx.len() {
            vx[i] -= mx[i] * mx[i];
            vy[i] -= my[i] * my[i];
            cxy[i] -= mx[i] * my[i];
        }
        Stats { mx, my, vx, vy, cxy }
    }

    /// Mean SSIM of two `h × w` planes with unit peak.
    pub fn plane_mean<T: Scalar>(x: &[T], y: &[T], h: usize, w: usize) -> T {
        let win = window::<T>();
        let s = stats(x, y, h, w, &win);
        let (c1, c2) = (T::from_f64(C1), T::from_f64(C2));
        let two = T::from_f64(2.0);
        let mut acc = T::ZERO;
        for i in 0..s.mx.len() {
            let n1 = two * s.mx[i] * s.my[i] + c1;
            let n2 = two * s.cxy[i] + c2;
            let d1 = s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + c1;
            let d2 = s.vx[i] + s.vy[i] + c2;
            acc += n1 * n2 / (d1 * d2);
        }
        acc / T::from_usize(s.mx.len())
    }

    /// `scale · ∂ plane_mean(x, y) / ∂x`.
    pub fn plane_mean_grad<T: Scalar>(x: &[T], y: &[T], h: usize, w: usize, scale: T) -> Vec<T> {
        let win = window::<T>();
        let s = stats(x, y, h, w, &win);
        let (c1, c2) = (T::from_f64(C1), T::from_f64(C2));
        let two = T::from_f64(2.0);
        let k = scale / T::from_usize(s.mx.len());
        let p = s.mx.len();
        let mut a = vec![T::ZERO; p];
        let mut b = vec![T::ZERO; p];
        let mut c = vec![T::ZERO; p];
        for i in 0..p {
            let (mx, my) = (s.mx[i], s.my[i]);
            let n1 = two * mx * my + c1;
            let n2 = two * s.cxy[i] + c2;
            let d1 = mx * mx + my * my + c1;
            let d2 = s.vx[i] + s.vy[i] + c2;
            let ssim = n1 * n2 / (d1 * d2);
            let d_mu = ssim * (two * my / n1 - two * mx / d1);
            let d_var = -ssim / d2;
            let d_cov = two * ssim / n2;
            a[i] = k * (d_mu - two * mx * d_var - my * d_cov);
            b[i] = k * d_var;
            c[i] = k * d_cov;
        }
        let mut ga = vec![T::ZERO; h * w];
        let mut gb = vec![T::ZERO; h * w];
        let mut gc = vec![T::ZERO; h * w];
        filter_valid_adjoint(&a, h, w, &win, &mut ga);
        filter_valid_adjoint(&b, h, w, &win, &mut gb);
        filter_valid_adjoint(&c, h, w, &win, &mut gc);
        (0..h * w).map(|i| ga[i] + two * x[i] * gb[i] + y[i] * gc[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize, c: usize, lo: f32, hi: f32) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(lo..=hi)).collect();
        Image::new(h, w, c, data).unwrap()
    }

    fn offset(img: &Image, d: f32) -> Image {
        let (h, w, c) = img.dims();
        Image::new(h, w, c, img.data().iter().map(|v| v + d).collect()).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random_image(1, 16, 16, 3, 0.0, 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
    }

    #[test]
    fn psnr_uniform_offsets() {
        let a = random_image(2, 16, 16, 3, 0.0, 0.85);
        assert!((psnr(&a, &offset(&a, 0.1)).unwrap() - 20.0).abs() < 0.01);
        assert!((psnr(&a, &offset(&a, 0.01)).unwrap() - 40.0).abs() < 0.01);
    }

    #[test]
    fn psnr_strictly_decreasing_in_offset() {
        let a = random_image(3, 12, 12, 1, 0.0, 0.5);
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let p = psnr(&a, &offset(&a, 0.05 * k as f32)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random_image(4, 20, 17, 3, 0.0, 1.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ssim_constant_black_vs_white() {
        let a = Image::filled(16, 16, 1, 0.0).unwrap();
        let b = Image::filled(16, 16, 1, 1.0).unwrap();
        let s = ssim(&a, &b).unwrap();
        // (2·0·1 + C1)(0 + C2) / ((0 + 1 + C1)(0 + 0 + C2)) = C1 / (1 + C1)
        let c1 = 1e-4;
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-9);
        assert!(s < 0.01);
    }

    #[test]
    fn ssim_symmetric() {
        for seed in 0..5 {
            let a = random_image(10 + seed, 14, 15, 3, 0.0, 1.0);
            let b = random_image(20 + seed, 14, 15, 3, 0.0, 1.0);
            assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_rejects_small_and_mismatched() {
        let a = Image::filled(10, 16, 1, 0.5).unwrap();
        assert!(matches!(ssim(&a, &a), Err(ImageError::TooSmall { .. })));
        let b = Image::filled(16, 16, 1, 0.5).unwrap();
        let c = Image::filled(16, 16, 3, 0.5).unwrap();
        assert!(matches!(ssim(&b, &c), Err(ImageError::Mismatch { .. })));
        assert!(matches!(psnr(&b, &c), Err(ImageError::Mismatch { .. })));
    }

    #[test]
    fn window_is_normalized() {
        let w = ssim_window::window::<f64>();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - w[10]).abs() < 1e-18);
    }
}
