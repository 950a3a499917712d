use amirnet_core::autonn::layers::gating_modulation;
use amirnet_core::autonn::{Graph, Tensor};
use amirnet_core::degrade::{apply_degradation, DegradationParams, DegradationSpec};
use amirnet_core::hierarchy::{flatten, kmeans, unflatten, DegTree, KMeansConfig, TreeAssignment};
use amirnet_core::image::Image;
use amirnet_core::metrics::{psnr, ssim};
use amirnet_core::restorer::{Conditioning, Restorer, RnConfig};
use amirnet_core::REPR_DIM;
use proptest::prelude::*;

fn image_strategy(min: usize, max: usize) -> impl Strategy<Value = Image> {
    (min..=max, min..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |d| Image::new(h, w, 3, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flatten_round_trips(path in prop::collection::vec(0usize..2, 0..=4)) {
        let tree = DegTree::default();
        let a = TreeAssignment { path };
        let flat = flatten(&a, &tree).unwrap();
        prop_assert_eq!(flat.bits.len(), 30);
        for (level, (off, len)) in tree.level_slices(4).into_iter().enumerate() {
            let ones = flat.bits[off..off + len].iter().filter(|&&b| b == 1).count();
            prop_assert_eq!(ones, usize::from(level < a.path.len()));
        }
        prop_assert_eq!(unflatten(&flat, &tree).unwrap(), a);
    }

    #[test]
    fn gating_is_linear_in_features(
        x1 in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 4),
        x2 in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 4),
        r in prop::collection::vec(0.0f64..1.0, 2 * REPR_DIM),
        w in prop::collection::vec(-0.3f64..0.3, 3 * REPR_DIM),
        a in -2.0f64..2.0,
    ) {
        let mut g = Graph::<f64>::inference();
        let t = |v: Vec<f64>| Tensor::from_vec(&[2, 3, 2, 2], v).unwrap();
        let combo: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + q).collect();
        let rv = g.constant(Tensor::from_vec(&[2, REPR_DIM], r).unwrap());
        let w1 = g.constant(Tensor::from_vec(&[3, REPR_DIM], w.clone()).unwrap());
        let w2 = g.constant(Tensor::from_vec(&[3, REPR_DIM], w.iter().rev().copied().collect()).unwrap());
        let b1 = g.constant(Tensor::full(&[3], 0.5));
        let b2 = g.constant(Tensor::full(&[3], -0.2));
        let mut run = |x: Vec<f64>| {
            let xv = g.constant(t(x));
            let y = gating_modulation(&mut g, xv, rv, w1, b1, w2, b2).unwrap();
            g.value(y).data().to_vec()
        };
        let y1 = run(x1);
        let y2 = run(x2);
        let yc = run(combo);
        for i in 0..yc.len() {
            prop_assert!((yc[i] - (a * y1[i] + y2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_falls_as_offset_grows(img in image_strategy(8, 12), d1 in 0.01f32..0.1, d2 in 0.11f32..0.3) {
        let shift = |d: f32| {
            let data = img.data().iter().map(|v| if *v > 0.5 { v - d } else { v + d }).collect();
            Image::new(img.height(), img.width(), 3, data).unwrap()
        };
        prop_assert!(psnr(&img, &shift(d1)).unwrap() > psnr(&img, &shift(d2)).unwrap());
    }

    #[test]
    fn ssim_is_symmetric(a in image_strategy(11, 14), seed in any::<u64>()) {
        let spec = DegradationSpec::new(DegradationParams::GaussianNoise { sigma: 0.1 }, seed);
        let b = apply_degradation(&a, &spec).unwrap();
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!(s1 <= 1.0 + 1e-9);
    }

    #[test]
    fn degradations_stay_in_range_and_repeat(img in image_strategy(12, 20), seed in any::<u64>(), pick in 0usize..6) {
        let params = [
            DegradationParams::GaussianNoise { sigma: 0.2 },
            DegradationParams::GaussianBlur { sigma: 1.5 },
            DegradationParams::MotionBlur { length: 5.0, angle: 30.0 },
            DegradationParams::DefocusBlur { radius: 2.0 },
            DegradationParams::LowLight { gamma: 2.5, gain: 0.4 },
            DegradationParams::BlockCompression { quality: 10 },
        ][pick].clone();
        let spec = DegradationSpec::new(params, seed);
        let out = apply_degradation(&img, &spec).unwrap();
        prop_assert_eq!(out.dims(), img.dims());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(apply_degradation(&img, &spec).unwrap(), out);
    }

    #[test]
    fn kmeans_result_is_canonical_and_nearest(
        pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..20),
        seed in any::<u64>(),
    ) {
        let cfg = KMeansConfig { seed, restarts: 3, ..Default::default() };
        let res = kmeans(&pts, &cfg).unwrap();
        prop_assert!(res.centroids.windows(2).all(|w| w[0] <= w[1]));
        for (p, &a) in pts.iter().zip(&res.assignments) {
            let d = |c: &Vec<f64>| p.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            let best = res.centroids.iter().map(d).fold(f64::INFINITY, f64::min);
            prop_assert!(d(&res.centroids[a]) <= best);
        }
        prop_assert!(res.history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fresh_restorer_is_identity(img in image_strategy(16, 24), r in prop::collection::vec(-1.0f32..1.0, REPR_DIM), cond in 0usize..4) {
        let conditioning = [Conditioning::Full, Conditioning::NoFtb, Conditioning::NoDsln, Conditioning::NoGm][cond];
        let rn: Restorer<f32> = Restorer::new(RnConfig { conditioning, ..Default::default() }, 3).unwrap();
        prop_assert_eq!(rn.restore(&img, &r).unwrap(), img);
    }
}
