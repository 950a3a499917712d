//! Central finite-difference oracle for the hand-written backward passes.
//!
//! The error of a tensor is `max |analytic − numeric| / max(‖analytic‖∞,
//! ‖numeric‖∞)`, reported as the worst over every checked tensor.

use alloc::vec::Vec;

use super::{Graph, NnError, ParamStore, Tensor, Var};

/// Default perturbation.
pub const EPS: f64 = 1e-3;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn indices(len: usize, max_checks: Option<usize>) -> Vec<usize> {
    match max_checks {
        Some(m) if m < len => {
            let step = len as f64 / m as f64;
            (0..m).map(|i| (i as f64 * step) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Worst relative error over the gradients of every input.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], eps: f64, build: F) -> Result<f64, NnError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NnError>,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<f64, NnError> {
        let mut g = Graph::<f64>::inference();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone(), false)).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = g
            .grad(*v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| alloc::vec![0.0; inputs[k].numel()]);
        let mut numeric = alloc::vec![0.0; analytic.len()];
        for i in 0..analytic.len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric[i] = (fp - fm) / (2.0 * eps);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

/// Worst relative error over parameter gradients (and, when given, input
/// gradients). `max_checks` bounds the number of perturbed elements per
/// tensor, sampled evenly.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_checks: Option<usize>,
    build: F,
) -> Result<f64, NnError>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var, NnError>,
{
    let eval = |ps: &ParamStore<f64>, ins: &[Tensor<f64>]| -> Result<f64, NnError> {
        let mut g = Graph::<f64>::inference();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone(), false)).collect();
        let out = build(&mut g, ps, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = build(&mut g, store, &vars)?;
    g.backward(out)?;

    let mut worst = 0.0f64;
    let mut ps = store.clone();
    for (id, grad) in g.param_grads() {
        let idx = indices(grad.len(), max_checks);
        let analytic: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = ps.value(id).data()[i];
            ps.value_mut(id).data_mut()[i] = orig + eps;
            let fp = eval(&ps, inputs)?;
            ps.value_mut(id).data_mut()[i] = orig - eps;
            let fm = eval(&ps, inputs)?;
            ps.value_mut(id).data_mut()[i] = orig;
            numeric.push((fp - fm) / (2.0 * eps));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let Some(grad) = g.grad(*v) else { continue };
        let idx = indices(grad.len(), max_checks);
        let analytic: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let fp = eval(store, &work)?;
            work[k].data_mut()[i] = orig - eps;
            let fm = eval(store, &work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((fp - fm) / (2.0 * eps));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(worst)
}
