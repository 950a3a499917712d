//! Parameterized layers and the conditioned operators built from graph
//! primitives.

use alloc::format;

use super::{Graph, Init, NnError, ParamId, ParamStore, Var, NORM_EPS};
use crate::scalar::Scalar;

/// Plain layer norm over channels: `(x − μ)/√(σ² + ε) · γ + β`.
pub fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, NnError> {
    let xn = g.normalize_channels(x, eps)?;
    g.channel_affine(xn, Some(gamma), Some(beta))
}

/// Layer norm whose affine parameters are affine functions of the
/// representation: `γ(r) = W_γ r + b_γ`, `β(r) = W_β r + b_β`.
#[allow(clippy::too_many_arguments)]
pub fn dsln<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    r: Var,
    w_gamma: Var,
    b_gamma: Var,
    w_beta: Var,
    b_beta: Var,
    eps: T,
) -> Result<Var, NnError> {
    check_repr(g, r, w_gamma, "dsln")?;
    let gamma = g.linear(r, w_gamma, Some(b_gamma))?;
    let beta = g.linear(r, w_beta, Some(b_beta))?;
    let xn = g.normalize_channels(x, eps)?;
    g.channel_affine(xn, Some(gamma), Some(beta))
}

/// `x ⊙ φ(r)` with `φ(r) = GELU(W¹r + b¹) ⊙ (W²r + b²)` broadcast over
/// spatial positions.
pub fn gating_modulation<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    r: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var, NnError> {
    check_repr(g, r, w1, "gating_modulation")?;
    let phi = gate_vector(g, r, w1, b1, w2, b2)?;
    g.channel_affine(x, Some(phi), None)
}

/// `φ(r)` as an `[N, C]` tensor.
pub fn gate_vector<T: Scalar>(g: &mut Graph<T>, r: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var, NnError> {
    let a = g.linear(r, w1, Some(b1))?;
    let a = g.gelu(a);
    let b = g.linear(r, w2, Some(b2))?;
    g.mul(a, b)
}

fn check_repr<T: Scalar>(g: &Graph<T>, r: Var, w: Var, op: &'static str) -> Result<(), NnError> {
    let rdim = g.shape(r).last().copied().unwrap_or(0);
    let wdim = g.shape(w).get(1).copied().unwrap_or(0);
    if g.shape(r).len() != 2 || rdim != wdim {
        return Err(NnError::Shape {
            op,
            expected: alloc::vec![g.shape(r).first().copied().unwrap_or(1), wdim],
            got: g.shape(r).to_vec(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Same-padding convolution with fan-in uniform weights and zero bias.
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self, NnError> {
        Self::with_init(ps, name, cin, cout, kernel, stride, Init::FanInUniform)
    }

    /// Weights from `init` (e.g. `Init::Const(0.0)` for zero-initialized
    /// residual outputs).
    pub fn with_init<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    ) -> Result<Self, NnError> {
        if kernel.is_multiple_of(2) {
            return Err(NnError::invalid("conv2d", "kernel must be odd-sized"));
        }
        let weight = ps.add(&format!("{name}.weight"), &[cout, cin, kernel, kernel], init)?;
        let bias = Some(ps.add(&format!("{name}.bias"), &[cout], Init::Const(0.0))?);
        Ok(Self {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|b| g.param(ps, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, fin: usize, fout: usize) -> Result<Self, NnError> {
        Self::with_init(ps, name, fin, fout, Init::FanInUniform, Init::Const(0.0))
    }

    pub fn with_init<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        fin: usize,
        fout: usize,
        weight: Init,
        bias: Init,
    ) -> Result<Self, NnError> {
        Ok(Self {
            weight: ps.add(&format!("{name}.weight"), &[fout, fin], weight)?,
            bias: ps.add(&format!("{name}.bias"), &[fout], bias)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self, NnError> {
        Ok(Self {
            gamma: ps.add(&format!("{name}.gamma"), &[channels], Init::Const(1.0))?,
            beta: ps.add(&format!("{name}.beta"), &[channels], Init::Const(0.0))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        layer_norm(g, x, gamma, beta, T::from_f64(NORM_EPS))
    }
}

/// Degradation-specific layer norm. Starts as a plain layer norm:
/// `W_γ = 0, b_γ = 1, W_β = 0, b_β = 0`.
#[derive(Clone, Copy, Debug)]
pub struct DsLayerNorm {
    pub gamma: Linear,
    pub beta: Linear,
}

impl DsLayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, repr_dim: usize, channels: usize) -> Result<Self, NnError> {
        Ok(Self {
            gamma: Linear::with_init(ps, &format!("{name}.gamma"), repr_dim, channels, Init::Const(0.0), Init::Const(1.0))?,
            beta: Linear::with_init(ps, &format!("{name}.beta"), repr_dim, channels, Init::Const(0.0), Init::Const(0.0))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var, r: Var) -> Result<Var, NnError> {
        let wg = g.param(ps, self.gamma.weight);
        let bg = g.param(ps, self.gamma.bias);
        let wb = g.param(ps, self.beta.weight);
        let bb = g.param(ps, self.beta.bias);
        dsln(g, x, r, wg, bg, wb, bb, T::from_f64(NORM_EPS))
    }
}

/// Channel gate driven by the representation.
#[derive(Clone, Copy, Debug)]
pub struct Gate {
    pub first: Linear,
    pub second: Linear,
}

impl Gate {
    /// Random fan-in weights with unit biases, so the gate starts open
    /// (`φ ≈ GELU(1) ≈ 0.84` at `r = 0`).
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, repr_dim: usize, channels: usize) -> Result<Self, NnError> {
        Ok(Self {
            first: Linear::with_init(ps, &format!("{name}.w1"), repr_dim, channels, Init::FanInUniform, Init::Const(1.0))?,
            second: Linear::with_init(ps, &format!("{name}.w2"), repr_dim, channels, Init::FanInUniform, Init::Const(1.0))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var, r: Var) -> Result<Var, NnError> {
        let w1 = g.param(ps, self.first.weight);
        let b1 = g.param(ps, self.first.bias);
        let w2 = g.param(ps, self.second.weight);
        let b2 = g.param(ps, self.second.bias);
        gating_modulation(g, x, r, w1, b1, w2, b2)
    }
}
