//! Degradation representation network: a residual convolutional encoder
//! pooled to an embedding, a mask projector trained against the tree labels
//! and an attribute projector.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autonn::layers::Linear;
use crate::autonn::Init;
use crate::autonn::{Conv2d, Graph, NnError, ParamStore, Tensor, Var};
use crate::hierarchy::{DegTree, FlatLabel, HierarchyError};
use crate::scalar::Scalar;

/// Fixed representation length (the flattened 4-level binary tree).
pub const REPR_DIM: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrnConfig {
    pub in_channels: usize,
    /// Stage widths; stride-2 downsampling between consecutive stages.
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub repr_dim: usize,
}

impl Default for DrnConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: alloc::vec![16, 32, 64, 128],
            hidden: 64,
            repr_dim: REPR_DIM,
        }
    }
}

impl DrnConfig {
    pub fn embed_dim(&self) -> usize {
        *self.widths.last().expect("at least one stage")
    }

    /// Smallest accepted input side.
    pub fn min_side(&self) -> usize {
        1 << self.widths.len()
    }
}

/// Which representation the restorer consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprStage {
    /// `r = r_m ⊙ r_a`.
    One,
    /// `r = r_m`; the attribute path is off.
    Two,
    /// Frozen `r_m ⊙ r_a` in the second stage (ablation switch).
    TwoWithAttributes,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DrnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("input {height}x{width} is smaller than the {min}x{min} minimum")]
    Undersized { height: usize, width: usize, min: usize },
    #[error("built levels {built} outside [0, {max}]")]
    BuiltLevels { built: usize, max: usize },
    #[error("stage {0} is not 1 or 2")]
    Stage(u8),
}

#[derive(Debug, Clone)]
struct ResStage {
    conv1: Conv2d,
    conv2: Conv2d,
}

#[derive(Debug, Clone)]
pub struct Drn<T> {
    pub cfg: DrnConfig,
    pub params: ParamStore<T>,
    stem: Conv2d,
    stages: Vec<ResStage>,
    downs: Vec<Conv2d>,
    mask: [Linear; 2],
    attr: [Linear; 2],
}

/// Everything one DRN pass produces.
#[derive(Debug, Clone, Copy)]
pub struct DrnOutput {
    pub z: Var,
    pub logits: Var,
    pub rm: Var,
    pub ra: Var,
    pub r: Var,
}

impl<T: Scalar> Drn<T> {
    pub fn new(cfg: DrnConfig, seed: u64) -> Result<Self, NnError> {
        let mut ps = ParamStore::new(seed);
        let he = Init::HeNormal;
        let stem = Conv2d::with_init(&mut ps, "drn.stem", cfg.in_channels, cfg.widths[0], 3, 1, he)?;
        let mut stages = Vec::new();
        let mut downs = Vec::new();
        for (i, &w) in cfg.widths.iter().enumerate() {
            if i > 0 {
                downs.push(Conv2d::with_init(&mut ps, &format!("drn.down{i}"), cfg.widths[i - 1], w, 3, 2, he)?);
            }
            stages.push(ResStage {
                conv1: Conv2d::with_init(&mut ps, &format!("drn.stage{i}.conv1"), w, w, 3, 1, he)?,
                conv2: Conv2d::with_init(&mut ps, &format!("drn.stage{i}.conv2"), w, w, 3, 1, he)?,
            });
        }
        let e = cfg.embed_dim();
        let mask = [
            Linear::new(&mut ps, "drn.mask.fc1", e, cfg.hidden)?,
            Linear::new(&mut ps, "drn.mask.fc2", cfg.hidden, cfg.repr_dim)?,
        ];
        let attr = [
            Linear::new(&mut ps, "drn.attr.fc1", e, cfg.hidden)?,
            Linear::new(&mut ps, "drn.attr.fc2", cfg.hidden, cfg.repr_dim)?,
        ];
        Ok(Self {
            cfg,
            params: ps,
            stem,
            stages,
            downs,
            mask,
            attr,
        })
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Drn<U> {
        Drn {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            stem: self.stem,
            stages: self.stages.clone(),
            downs: self.downs.clone(),
            mask: self.mask,
            attr: self.attr,
        }
    }

    /// `z = F(I)`: `[N, C, H, W] -> [N, embed_dim]`.
    pub fn encode(&self, g: &mut Graph<T>, x: Var) -> Result<Var, DrnError> {
        let shape = g.shape(x);
        let (h, w) = (shape[2], shape[3]);
        let min = self.cfg.min_side();
        if h < min || w < min {
            return Err(DrnError::Undersized { height: h, width: w, min });
        }
        let ps = &self.params;
        // Stem kernels are projected to zero sum per input channel.
        let w = g.param(ps, self.stem.weight);
        let w = g.center_spatial(w)?;
        let b = self.stem.bias.map(|b| g.param(ps, b));
        let mut y = g.conv2d(x, w, b, self.stem.stride, self.stem.pad)?;
        y = g.gelu(y);
        for (i, st) in self.stages.iter().enumerate() {
            if i > 0 {
                y = self.downs[i - 1].forward(g, ps, y)?;
                y = g.gelu(y);
            }
            let t = st.conv1.forward(g, ps, y)?;
            let t = g.gelu(t);
            let t = st.conv2.forward(g, ps, t)?;
            y = g.add(y, t)?;
        }
        Ok(g.global_avg_pool(y)?)
    }

    fn mlp(&self, g: &mut Graph<T>, head: &[Linear; 2], z: Var) -> Result<Var, NnError> {
        let h = head[0].forward(g, &self.params, z)?;
        let h = g.gelu(h);
        head[1].forward(g, &self.params, h)
    }

    /// Raw mask-projector scores for all nodes.
    pub fn mask_logits(&self, g: &mut Graph<T>, z: Var) -> Result<Var, NnError> {
        self.mask_logits_inner(g, z)
    }

    fn mask_logits_inner(&self, g: &mut Graph<T>, z: Var) -> Result<Var, NnError> {
        self.mlp(g, &self.mask, z)
    }

    /// Per-level softmax over the first `built` levels; zeros elsewhere.
    pub fn mask_project(&self, g: &mut Graph<T>, logits: Var, tree: &DegTree, built: usize) -> Result<Var, DrnError> {
        if built > tree.levels {
            return Err(DrnError::BuiltLevels { built, max: tree.levels });
        }
        Ok(g.level_softmax(logits, &tree.level_slices(built))?)
    }

    pub fn attr_project(&self, g: &mut Graph<T>, z: Var) -> Result<Var, NnError> {
        self.mlp(g, &self.attr, z)
    }

    /// Full pass for a batch.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        tree: &DegTree,
        built: usize,
        stage: ReprStage,
    ) -> Result<DrnOutput, DrnError> {
        let z = self.encode(g, x)?;
        let logits = self.mask_logits(g, z)?;
        let rm = self.mask_project(g, logits, tree, built)?;
        let ra = self.attr_project(g, z)?;
        let r = compose_representation(g, rm, ra, stage)?;
        Ok(DrnOutput { z, logits, rm, ra, r })
    }
}

/// Stage one: `r = r_m ⊙ r_a`; stage two: `r = r_m`.
pub fn compose_representation<T: Scalar>(g: &mut Graph<T>, rm: Var, ra: Var, stage: ReprStage) -> Result<Var, NnError> {
    match stage {
        ReprStage::One | ReprStage::TwoWithAttributes => g.mul(rm, ra),
        ReprStage::Two => Ok(rm),
    }
}

/// Numeric stage selector (1 or 2) used at interfaces.
pub fn stage_from_number(stage: u8) -> Result<ReprStage, DrnError> {
    match stage {
        1 => Ok(ReprStage::One),
        2 => Ok(ReprStage::Two),
        s => Err(DrnError::Stage(s)),
    }
}

/// Sum over built levels of per-level cross entropy, batch mean.
pub fn classification_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[FlatLabel],
    tree: &DegTree,
    built: usize,
) -> Result<Var, DrnError> {
    per_level_cross_entropy(g, logits, labels, tree, built)
}

/// Softmax cross entropy per built level between the logit group and the
/// label's one-hot slice, summed over levels and averaged over the batch.
pub fn per_level_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[FlatLabel],
    tree: &DegTree,
    built: usize,
) -> Result<Var, DrnError> {
    if built == 0 || built > tree.levels {
        return Err(DrnError::BuiltLevels { built, max: tree.levels });
    }
    let mut targets = Vec::with_capacity(labels.len() * built);
    for l in labels {
        if l.built_levels(tree)? != built {
            return Err(HierarchyError::Inconsistent { level: built }.into());
        }
        targets.extend(l.targets(tree, built)?);
    }
    Ok(g.level_cross_entropy(logits, &tree.level_slices(built), &targets)?)
}

/// Greedy root-down binarization of `r_m` rows: at each built level pick
/// the most probable child of the previously chosen node.
pub fn hard_mask<T: Scalar>(rm: &Tensor<T>, tree: &DegTree, built: usize) -> Tensor<T> {
    let (n, d) = rm.dims2().expect("rank 2");
    let mut out = Tensor::zeros(&[n, d]);
    for s in 0..n {
        let row = &rm.data()[s * d..(s + 1) * d];
        let mut node = 0;
        for level in 1..=built.min(tree.levels) {
            let off = tree.level_offset(level);
            let best = (0..tree.branching)
                .map(|c| tree.child(node, c))
                .max_by(|&a, &b| {
                    row[off + a]
                        .partial_cmp(&row[off + b])
                        .unwrap_or(core::cmp::Ordering::Equal)
                        .then(b.cmp(&a))
                })
                .expect("branching >= 1");
            out.data_mut()[s * d + off + best] = T::ONE;
            node = best;
        }
    }
    out
}
