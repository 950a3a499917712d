//! Finite-difference checks of every differentiable operator and block,
//! run in `f64` on small random inputs.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autonn::gradcheck::{check_inputs, check_params, EPS};
use crate::autonn::layers::{dsln, gating_modulation, layer_norm};
use crate::autonn::{Graph, NnError, ParamStore, Tensor, Var, NORM_EPS};
use crate::drn::REPR_DIM;
use crate::hierarchy::{flatten, DegTree, TreeAssignment};
use crate::restorer::{Conditioning, Ftb, NafBlock};

/// Tolerance for every operator except the SSIM loss.
pub const GRAD_TOL: f64 = 1e-4;
pub const SSIM_GRAD_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub rel_err: f64,
    pub tol: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tol
    }
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// `Σ y ⊙ c` for a fixed random `c`, turning any output into a scalar with
/// a generic upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rand_tensor(g.shape(y), -1.0, 1.0, &mut rng);
    let c = g.constant(c);
    let p = g.mul(y, c)?;
    Ok(g.sum(p))
}

fn perturb_params(ps: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let v = ps.value_mut(id);
        for x in v.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
}

fn case(name: &str, tol: f64, r: Result<f64, NnError>) -> GradCase {
    GradCase {
        name: String::from(name),
        rel_err: r.unwrap_or(f64::INFINITY),
        tol,
    }
}

/// Runs every case. Each entry reports the worst relative error over the
/// operator's inputs and parameters.
pub fn gradient_suite() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut out = Vec::new();

    for (stride, tag) in [(1, "conv2d"), (2, "conv2d_stride2")] {
        let x = rand_tensor(&[2, 3, 6, 5], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[4, 3, 3, 3], -0.5, 0.5, &mut rng);
        let b = rand_tensor(&[4], -0.5, 0.5, &mut rng);
        out.push(case(
            tag,
            GRAD_TOL,
            check_inputs(&[x, w, b], EPS, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, 1)?;
                project(g, y, 1)
            }),
        ));
    }
    {
        let x = rand_tensor(&[2, 4, 5, 5], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[3, 4, 1, 1], -0.5, 0.5, &mut rng);
        out.push(case(
            "conv2d_pointwise",
            GRAD_TOL,
            check_inputs(&[x, w], EPS, |g, v| {
                let y = g.conv2d(v[0], v[1], None, 1, 0)?;
                project(g, y, 2)
            }),
        ));
    }
    {
        let x = rand_tensor(&[3, 5], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[4, 5], -0.5, 0.5, &mut rng);
        let b = rand_tensor(&[4], -0.5, 0.5, &mut rng);
        out.push(case(
            "linear",
            GRAD_TOL,
            check_inputs(&[x, w, b], EPS, |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                project(g, y, 3)
            }),
        ));
    }
    {
        let x = rand_tensor(&[2, 4, 3, 3], -1.0, 1.0, &mut rng);
        let gamma = rand_tensor(&[4], 0.5, 1.5, &mut rng);
        let beta = rand_tensor(&[4], -0.5, 0.5, &mut rng);
        out.push(case(
            "layer_norm",
            GRAD_TOL,
            check_inputs(&[x, gamma, beta], EPS, |g, v| {
                let y = layer_norm(g, v[0], v[1], v[2], NORM_EPS)?;
                project(g, y, 4)
            }),
        ));
    }
    {
        let x = rand_tensor(&[2, 4, 3, 3], -1.0, 1.0, &mut rng);
        let r = rand_tensor(&[2, REPR_DIM], 0.0, 1.0, &mut rng);
        let wg = rand_tensor(&[4, REPR_DIM], -0.2, 0.2, &mut rng);
        let bg = rand_tensor(&[4], 0.5, 1.5, &mut rng);
        let wb = rand_tensor(&[4, REPR_DIM], -0.2, 0.2, &mut rng);
        let bb = rand_tensor(&[4], -0.5, 0.5, &mut rng);
        out.push(case(
            "dsln",
            GRAD_TOL,
            check_inputs(&[x, r, wg, bg, wb, bb], EPS, |g, v| {
                let y = dsln(g, v[0], v[1], v[2], v[3], v[4], v[5], NORM_EPS)?;
                project(g, y, 5)
            }),
        ));
    }
    {
        let x = rand_tensor(&[2, 4, 3, 3], -1.0, 1.0, &mut rng);
        let r = rand_tensor(&[2, REPR_DIM], 0.0, 1.0, &mut rng);
        let w1 = rand_tensor(&[4, REPR_DIM], -0.3, 0.3, &mut rng);
        let b1 = rand_tensor(&[4], -0.5, 0.5, &mut rng);
        let w2 = rand_tensor(&[4, REPR_DIM], -0.3, 0.3, &mut rng);
        let b2 = rand_tensor(&[4], -0.5, 0.5, &mut rng);
        out.push(case(
            "gating_modulation",
            GRAD_TOL,
            check_inputs(&[x, r, w1, b1, w2, b2], EPS, |g, v| {
                let y = gating_modulation(g, v[0], v[1], v[2], v[3], v[4], v[5])?;
                project(g, y, 6)
            }),
        ));
    }
    {
        let x = rand_tensor(&[2, 3, 4, 4], -3.0, 3.0, &mut rng);
        out.push(case(
            "gelu",
            GRAD_TOL,
            check_inputs(&[x], EPS, |g, v| {
                let y = g.gelu(v[0]);
                project(g, y, 7)
            }),
        ));
    }
    {
        let target = rand_tensor(&[2, 3, 5, 5], 0.0, 1.0, &mut rng);
        // stay clear of the |d| = 1 switch; both branches are exercised by
        // mixing small and large offsets
        let mut pred = target.clone();
        for (i, p) in pred.data_mut().iter_mut().enumerate() {
            let off: f64 = rng.random_range(0.05..0.6);
            *p += if i % 3 == 0 { 1.5 + off } else if i % 2 == 0 { off } else { -off };
        }
        out.push(case(
            "smooth_l1",
            GRAD_TOL,
            check_inputs(&[pred], EPS, |g, v| g.smooth_l1(v[0], &target)),
        ));
    }
    {
        let target = rand_tensor(&[2, 2, 13, 12], 0.0, 1.0, &mut rng);
        let mut pred = target.clone();
        for p in pred.data_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        out.push(case(
            "ssim_loss",
            SSIM_GRAD_TOL,
            check_inputs(&[pred], EPS, |g, v| g.ssim_loss(v[0], &target)),
        ));
    }
    {
        let tree = DegTree::default();
        let paths = [[0, 1, 1, 0], [1, 1, 0, 1], [1, 0, 0, 0]];
        let labels: Vec<_> = paths
            .iter()
            .map(|p| flatten(&TreeAssignment { path: p.to_vec() }, &tree).expect("valid path"))
            .collect();
        let logits = rand_tensor(&[3, REPR_DIM], -2.0, 2.0, &mut rng);
        out.push(case(
            "per_level_cross_entropy",
            GRAD_TOL,
            check_inputs(&[logits], EPS, |g, v| {
                crate::drn::per_level_cross_entropy(g, v[0], &labels, &tree, 4)
                    .map_err(|e| NnError::invalid("per_level_cross_entropy", alloc::format!("{e}")))
            }),
        ));
        let logits = rand_tensor(&[2, REPR_DIM], -2.0, 2.0, &mut rng);
        out.push(case(
            "level_softmax",
            GRAD_TOL,
            check_inputs(&[logits], EPS, |g, v| {
                let y = g.level_softmax(v[0], &tree.level_slices(3))?;
                project(g, y, 8)
            }),
        ));
    }
    {
        let a = rand_tensor(&[2, 2, 3, 4], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[2, 4, 3, 4], -1.0, 1.0, &mut rng);
        out.push(case(
            "pool_upsample_concat_gate",
            GRAD_TOL,
            check_inputs(&[a, b], EPS, |g, v| {
                let c = g.concat_channels(v[0], v[1])?;
                let u = g.upsample2x(c)?;
                let sg = g.simple_gate(u)?;
                let p = g.global_avg_pool(sg)?;
                let t = project(g, p, 9)?;
                let s = g.scale(t, 0.5);
                let w = g.sub(s, t)?;
                g.add(w, t)
            }),
        ));
    }
    {
        let mut ps = ParamStore::<f64>::new(21);
        let ftb = Ftb::new(&mut ps, "ftb", 8, REPR_DIM, Conditioning::Full).expect("ftb");
        perturb_params(&mut ps, &mut rng);
        let x = rand_tensor(&[2, 8, 5, 5], -1.0, 1.0, &mut rng);
        let r = rand_tensor(&[2, REPR_DIM], 0.0, 1.0, &mut rng);
        out.push(case(
            "ftb_forward",
            GRAD_TOL,
            check_params(&ps, &[x, r], EPS, Some(24), |g, ps, v| {
                let y = ftb.forward(g, ps, v[0], v[1])?;
                project(g, y, 10)
            }),
        ));
    }
    {
        let mut ps = ParamStore::<f64>::new(22);
        let naf = NafBlock::new(&mut ps, "naf", 8).expect("naf");
        perturb_params(&mut ps, &mut rng);
        let x = rand_tensor(&[2, 8, 5, 5], -1.0, 1.0, &mut rng);
        out.push(case(
            "naf_block",
            GRAD_TOL,
            check_params(&ps, &[x], EPS, Some(24), |g, ps, v| {
                let y = naf.forward(g, ps, v[0])?;
                project(g, y, 11)
            }),
        ));
    }
    {
        let x = rand_tensor(&[2, 3, 6, 6], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[4, 3, 3, 3], -0.5, 0.5, &mut rng);
        out.push(case(
            "zero_sum_conv",
            GRAD_TOL,
            check_inputs(&[x, w], EPS, |g, v| {
                let wc = g.center_spatial(v[1])?;
                let y = g.conv2d(v[0], wc, None, 1, 1)?;
                let y = g.gelu(y);
                project(g, y, 15)
            }),
        ));
    }
    out
}

/// Largest `|dsln(x, r) − layer_norm(x)|` over `trials` random inputs with
/// identity conditioning maps (`W = 0`, `b_γ = 1`, `b_β = 0`).
pub fn dsln_reduction_error(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..3);
        let c = rng.random_range(1..9);
        let h = rng.random_range(1..6);
        let w = rng.random_range(1..6);
        let x = rand_tensor(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let r = rand_tensor(&[n, REPR_DIM], -1.0, 1.0, &mut rng);
        let mut g = Graph::<f64>::inference();
        let xv = g.constant(x);
        let rv = g.constant(r);
        let wg = g.constant(Tensor::zeros(&[c, REPR_DIM]));
        let bg = g.constant(Tensor::full(&[c], 1.0));
        let wb = g.constant(Tensor::zeros(&[c, REPR_DIM]));
        let bb = g.constant(Tensor::zeros(&[c]));
        let one = g.constant(Tensor::full(&[c], 1.0));
        let zero = g.constant(Tensor::zeros(&[c]));
        let a = dsln(&mut g, xv, rv, wg, bg, wb, bb, NORM_EPS).expect("dsln");
        let b = layer_norm(&mut g, xv, one, zero, NORM_EPS).expect("layer_norm");
        worst = worst.max(g.value(a).max_abs_diff(g.value(b)));
    }
    worst
}
