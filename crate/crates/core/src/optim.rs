//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autonn::{NnError, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// One optimizer over one or more parameter groups (stores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    /// `groups[g][param index]`.
    pub groups: Vec<Vec<Moments>>,
}

impl AdamW {
    pub fn new<T: Scalar>(cfg: AdamWConfig, stores: &[&ParamStore<T>]) -> Self {
        let groups = stores
            .iter()
            .map(|ps| {
                ps.ids()
                    .map(|id| {
                        let n = ps.value(id).numel();
                        Moments { m: vec![0.0; n], v: vec![0.0; n] }
                    })
                    .collect()
            })
            .collect();
        Self { cfg, step: 0, groups }
    }

    /// One update over all groups. `grads[g]` lists gradients for a subset
    /// of group `g`'s parameters; parameters without a gradient are still
    /// decayed but keep their moments.
    pub fn update(&mut self, stores: &mut [&mut ParamStore<f32>], grads: &[Vec<(ParamId, Vec<f32>)>], lr: f64) -> Result<(), NnError> {
        if stores.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(NnError::invalid("adamw", "group count mismatch"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        for (gi, (ps, gs)) in stores.iter_mut().zip(grads).enumerate() {
            for (id, grad) in gs {
                let mom = self
                    .groups
                    .get_mut(gi)
                    .and_then(|g| g.get_mut(id.index()))
                    .ok_or_else(|| NnError::invalid("adamw", "unknown parameter"))?;
                let p = ps.value_mut(*id).data_mut();
                if p.len() != grad.len() || mom.m.len() != grad.len() {
                    return Err(NnError::invalid("adamw", "gradient length mismatch"));
                }
                for i in 0..p.len() {
                    let gv = grad[i] as f64;
                    let m = c.beta1 * mom.m[i] as f64 + (1.0 - c.beta1) * gv;
                    let v = c.beta2 * mom.v[i] as f64 + (1.0 - c.beta2) * gv * gv;
                    mom.m[i] = m as f32;
                    mom.v[i] = v as f32;
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    let mut pv = p[i] as f64;
                    pv -= lr * c.weight_decay * pv;
                    pv -= lr * mhat / (libm::sqrt(vhat) + c.eps);
                    p[i] = pv as f32;
                }
            }
        }
        Ok(())
    }
}

/// `lr(e) = min + ½ (max − min)(1 + cos(π e / total))`.
pub fn cosine_lr(max: f64, min: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return max;
    }
    let e = epoch.min(total) as f64;
    min + 0.5 * (max - min) * (1.0 + libm::cos(core::f64::consts::PI * e / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonn::{Init, Tensor};

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(5e-4, 1e-6, 0, 40), 5e-4);
        assert!((cosine_lr(5e-4, 1e-6, 20, 40) - (5e-4 + 1e-6) / 2.0).abs() < 1e-15);
        assert!((cosine_lr(5e-4, 1e-6, 40, 40) - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        let mut ps = ParamStore::<f32>::new(0);
        let id = ps.add("p", &[1], Init::Const(0.0)).unwrap();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &[&ps]);
        let steps = 500;
        for s in 0..steps {
            let p = ps.value(id).data()[0];
            let grad = 2.0 * (p - 3.0);
            let lr = cosine_lr(0.1, 0.0, s, steps);
            opt.update(&mut [&mut ps], &[vec![(id, vec![grad])]], lr).unwrap();
        }
        let p = ps.value(id).data()[0];
        assert!((p - 3.0).abs() <= 1e-6, "p = {p}");
    }

    #[test]
    fn decay_is_decoupled() {
        let mut ps = ParamStore::<f32>::new(0);
        let id = ps.add("p", &[2], Init::Const(1.0)).unwrap();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.5, ..Default::default() }, &[&ps]);
        opt.update(&mut [&mut ps], &[vec![(id, vec![0.0, 0.0])]], 0.1).unwrap();
        // zero gradient: only the decay term moves the value
        assert_eq!(ps.value(id), &Tensor::full(&[2], 0.95f32));
    }
}
