//! Restoration network: a U-shaped encoder of feature transform blocks,
//! a decoder of NAF-lite blocks with skip concatenation, and a residual
//! output.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autonn::{Conv2d, DsLayerNorm, Gate, Graph, Init, LayerNorm, NnError, ParamId, ParamStore, Tensor, Var};
use crate::drn::REPR_DIM;
use crate::image::{Image, ImageError};
use crate::scalar::Scalar;

/// Input sides must be multiples of this (two stride-2 downsamplings).
pub const SIDE_MULTIPLE: usize = 4;

/// Which conditioning the encoder blocks carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Full,
    /// Encoder and bottleneck use unconditioned NAF-lite blocks.
    NoFtb,
    /// Plain layer norm inside the FTB.
    NoDsln,
    /// `φ ≡ 1` inside the FTB.
    NoGm,
}

/// One ablation row: a conditioning variant or a tree depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoFtb,
    NoDsln,
    NoGm,
    #[serde(rename = "layers_1")]
    Layers1,
    #[serde(rename = "layers_2")]
    Layers2,
    #[serde(rename = "layers_3")]
    Layers3,
    #[serde(rename = "layers_4")]
    Layers4,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 8] = [
        AblationVariant::Full,
        AblationVariant::NoFtb,
        AblationVariant::NoDsln,
        AblationVariant::NoGm,
        AblationVariant::Layers1,
        AblationVariant::Layers2,
        AblationVariant::Layers3,
        AblationVariant::Layers4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoFtb => "no_ftb",
            AblationVariant::NoDsln => "no_dsln",
            AblationVariant::NoGm => "no_gm",
            AblationVariant::Layers1 => "layers_1",
            AblationVariant::Layers2 => "layers_2",
            AblationVariant::Layers3 => "layers_3",
            AblationVariant::Layers4 => "layers_4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn conditioning(self) -> Conditioning {
        match self {
            AblationVariant::NoFtb => Conditioning::NoFtb,
            AblationVariant::NoDsln => Conditioning::NoDsln,
            AblationVariant::NoGm => Conditioning::NoGm,
            _ => Conditioning::Full,
        }
    }

    /// Tree depth override, if this row varies it.
    pub fn tree_levels(self) -> Option<usize> {
        match self {
            AblationVariant::Layers1 => Some(1),
            AblationVariant::Layers2 => Some(2),
            AblationVariant::Layers3 => Some(3),
            AblationVariant::Layers4 => Some(4),
            _ => None,
        }
    }
}

impl core::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnConfig {
    pub in_channels: usize,
    /// Encoder widths per scale.
    pub widths: Vec<usize>,
    pub blocks_per_scale: usize,
    pub bottleneck_blocks: usize,
    pub repr_dim: usize,
    pub conditioning: Conditioning,
}

impl Default for RnConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: alloc::vec![16, 32, 64],
            blocks_per_scale: 2,
            bottleneck_blocks: 2,
            repr_dim: REPR_DIM,
            conditioning: Conditioning::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("input {height}x{width} not divisible by {multiple}")]
    Indivisible { height: usize, width: usize, multiple: usize },
    #[error("representation length {got}, expected {expected}")]
    Repr { expected: usize, got: usize },
    #[error("alpha must be finite and non-negative, got {0}")]
    Alpha(f64),
    #[error("non-finite loss: {name} = {value}")]
    NonFinite { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Norm {
    Ds(DsLayerNorm),
    Plain(LayerNorm),
}

/// `y = x + s ⊙ GM(Conv(GELU(Conv(DSLN(x, r)))), r)`.
#[derive(Debug, Clone, Copy)]
pub struct Ftb {
    norm: Norm,
    conv1: Conv2d,
    conv2: Conv2d,
    gate: Option<Gate>,
    scale: ParamId,
}

impl Ftb {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        repr_dim: usize,
        conditioning: Conditioning,
    ) -> Result<Self, NnError> {
        let norm = match conditioning {
            Conditioning::NoDsln => Norm::Plain(LayerNorm::new(ps, &format!("{name}.norm"), channels)?),
            _ => Norm::Ds(DsLayerNorm::new(ps, &format!("{name}.norm"), repr_dim, channels)?),
        };
        let conv1 = Conv2d::new(ps, &format!("{name}.conv1"), channels, channels, 3, 1)?;
        let conv2 = Conv2d::new(ps, &format!("{name}.conv2"), channels, channels, 3, 1)?;
        let gate = match conditioning {
            Conditioning::NoGm => None,
            _ => Some(Gate::new(ps, &format!("{name}.gate"), repr_dim, channels)?),
        };
        let scale = ps.add(&format!("{name}.scale"), &[channels], Init::Const(0.0))?;
        Ok(Self {
            norm,
            conv1,
            conv2,
            gate,
            scale,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var, r: Var) -> Result<Var, NnError> {
        let mut y = match self.norm {
            Norm::Ds(n) => n.forward(g, ps, x, r)?,
            Norm::Plain(n) => n.forward(g, ps, x)?,
        };
        y = self.conv1.forward(g, ps, y)?;
        y = g.gelu(y);
        y = self.conv2.forward(g, ps, y)?;
        if let Some(gate) = self.gate {
            y = gate.forward(g, ps, y, r)?;
        }
        let s = g.param(ps, self.scale);
        y = g.channel_affine(y, Some(s), None)?;
        g.add(x, y)
    }
}

/// `y = x + Conv1x1(SimpleGate(Conv3x3_{C→2C}(LN(x))))`, last conv
/// zero-initialized.
#[derive(Debug, Clone, Copy)]
pub struct NafBlock {
    norm: LayerNorm,
    conv1: Conv2d,
    conv2: Conv2d,
}

impl NafBlock {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self, NnError> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), channels)?,
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), channels, 2 * channels, 3, 1)?,
            conv2: Conv2d::with_init(ps, &format!("{name}.conv2"), channels, channels, 1, 1, Init::Const(0.0))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let y = self.norm.forward(g, ps, x)?;
        let y = self.conv1.forward(g, ps, y)?;
        let y = g.simple_gate(y)?;
        let y = self.conv2.forward(g, ps, y)?;
        g.add(x, y)
    }
}

#[derive(Debug, Clone, Copy)]
enum EncBlock {
    Ftb(Ftb),
    Naf(NafBlock),
}

impl EncBlock {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, channels: usize, cfg: &RnConfig) -> Result<Self, NnError> {
        Ok(match cfg.conditioning {
            Conditioning::NoFtb => EncBlock::Naf(NafBlock::new(ps, name, channels)?),
            c => EncBlock::Ftb(Ftb::new(ps, name, channels, cfg.repr_dim, c)?),
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var, r: Var) -> Result<Var, NnError> {
        match self {
            EncBlock::Ftb(b) => b.forward(g, ps, x, r),
            EncBlock::Naf(b) => b.forward(g, ps, x),
        }
    }
}

#[derive(Debug, Clone)]
struct DecScale {
    /// Upsample conv from the coarser scale; absent at the deepest scale.
    up: Option<Conv2d>,
    fuse: Conv2d,
    blocks: Vec<NafBlock>,
}

#[derive(Debug, Clone)]
pub struct Restorer<T> {
    pub cfg: RnConfig,
    pub params: ParamStore<T>,
    stem: Conv2d,
    encoder: Vec<Vec<EncBlock>>,
    downs: Vec<Conv2d>,
    bottleneck: Vec<EncBlock>,
    /// Deepest scale first.
    decoder: Vec<DecScale>,
    out: Conv2d,
}

impl<T: Scalar> Restorer<T> {
    pub fn new(cfg: RnConfig, seed: u64) -> Result<Self, NnError> {
        let mut ps = ParamStore::new(seed);
        let w = &cfg.widths;
        let stem = Conv2d::new(&mut ps, "rn.stem", cfg.in_channels, w[0], 3, 1)?;
        let mut encoder = Vec::new();
        let mut downs = Vec::new();
        for (s, &c) in w.iter().enumerate() {
            if s > 0 {
                downs.push(Conv2d::new(&mut ps, &format!("rn.down{s}"), w[s - 1], c, 3, 2)?);
            }
            let blocks = (0..cfg.blocks_per_scale)
                .map(|b| EncBlock::new(&mut ps, &format!("rn.enc{s}.{b}"), c, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            encoder.push(blocks);
        }
        let deepest = *w.last().expect("at least one scale");
        let bottleneck = (0..cfg.bottleneck_blocks)
            .map(|b| EncBlock::new(&mut ps, &format!("rn.mid.{b}"), deepest, &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let mut decoder = Vec::new();
        for s in (0..w.len()).rev() {
            let c = w[s];
            let up = if s + 1 < w.len() {
                Some(Conv2d::new(&mut ps, &format!("rn.dec{s}.up"), w[s + 1], c, 3, 1)?)
            } else {
                None
            };
            let fuse = Conv2d::new(&mut ps, &format!("rn.dec{s}.fuse"), 2 * c, c, 1, 1)?;
            let blocks = (0..cfg.blocks_per_scale)
                .map(|b| NafBlock::new(&mut ps, &format!("rn.dec{s}.{b}"), c))
                .collect::<Result<Vec<_>, _>>()?;
            decoder.push(DecScale { up, fuse, blocks });
        }
        let out = Conv2d::with_init(&mut ps, "rn.out", w[0], cfg.in_channels, 3, 1, Init::Const(0.0))?;
        Ok(Self {
            cfg,
            params: ps,
            stem,
            encoder,
            downs,
            bottleneck,
            decoder,
            out,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Restorer<U> {
        Restorer {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            stem: self.stem,
            encoder: self.encoder.clone(),
            downs: self.downs.clone(),
            bottleneck: self.bottleneck.clone(),
            decoder: self.decoder.clone(),
            out: self.out,
        }
    }

    pub fn side_multiple(&self) -> usize {
        1 << (self.cfg.widths.len() - 1)
    }

    /// Unclipped `I + residual` for `x: [N, C, H, W]`, `r: [N, repr_dim]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, r: Var) -> Result<Var, RnError> {
        let shape = g.shape(x).to_vec();
        let m = self.side_multiple();
        if shape.len() != 4 || !shape[2].is_multiple_of(m) || !shape[3].is_multiple_of(m) {
            return Err(RnError::Indivisible {
                height: shape.get(2).copied().unwrap_or(0),
                width: shape.get(3).copied().unwrap_or(0),
                multiple: m,
            });
        }
        let rs = g.shape(r);
        if rs.len() != 2 || rs[1] != self.cfg.repr_dim || rs[0] != shape[0] {
            return Err(RnError::Repr {
                expected: self.cfg.repr_dim,
                got: rs.last().copied().unwrap_or(0),
            });
        }
        let ps = &self.params;
        let mut y = self.stem.forward(g, ps, x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (s, blocks) in self.encoder.iter().enumerate() {
            if s > 0 {
                y = self.downs[s - 1].forward(g, ps, y)?;
            }
            for b in blocks {
                y = b.forward(g, ps, y, r)?;
            }
            skips.push(y);
        }
        for b in &self.bottleneck {
            y = b.forward(g, ps, y, r)?;
        }
        for dec in &self.decoder {
            if let Some(up) = dec.up {
                y = g.upsample2x(y)?;
                y = up.forward(g, ps, y)?;
            }
            let skip = skips.pop().expect("one skip per scale");
            y = g.concat_channels(y, skip)?;
            y = dec.fuse.forward(g, ps, y)?;
            for b in &dec.blocks {
                y = b.forward(g, ps, y)?;
            }
        }
        let res = self.out.forward(g, ps, y)?;
        Ok(g.add(x, res)?)
    }

    /// Evaluation-time restoration of one image: replicate-pad to the side
    /// multiple, run, crop back and clip to `[0, 1]`.
    pub fn restore(&self, img: &Image, r: &[T]) -> Result<Image, RnError>
    where
        T: Scalar,
    {
        if r.len() != self.cfg.repr_dim {
            return Err(RnError::Repr {
                expected: self.cfg.repr_dim,
                got: r.len(),
            });
        }
        let padded = img.pad_to_multiple(self.side_multiple());
        let x = padded.to_tensor().cast::<T>();
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let rv = g.constant(Tensor::from_vec(&[1, r.len()], r.to_vec())?);
        let out = self.forward(&mut g, xv, rv)?;
        let restored = Image::from_tensor(&g.value(out).cast::<f32>(), 0)?;
        Ok(restored.crop(0, 0, img.height(), img.width())?)
    }
}

/// `L_res = smoothL1(R, Y) + α · (1 − SSIM(R, Y))`; `α = 0` skips the SSIM
/// term entirely.
pub fn restoration_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: &Tensor<T>, alpha: f64) -> Result<Var, RnError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(RnError::Alpha(alpha));
    }
    let l1 = g.smooth_l1(pred, target)?;
    if alpha == 0.0 {
        return Ok(l1);
    }
    let s = g.ssim_loss(pred, target)?;
    let s = g.scale(s, T::from_f64(alpha));
    Ok(g.add(l1, s)?)
}

/// `L_total = L_cls + L_res`, rejecting non-finite terms.
pub fn total_loss_stage1(cls: f64, res: f64) -> Result<f64, RnError> {
    if !cls.is_finite() {
        return Err(RnError::NonFinite { name: "L_cls", value: cls });
    }
    if !res.is_finite() {
        return Err(RnError::NonFinite { name: "L_res", value: res });
    }
    Ok(cls + res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(cond: Conditioning) -> Restorer<f64> {
        Restorer::new(
            RnConfig {
                in_channels: 3,
                widths: alloc::vec![4, 8],
                blocks_per_scale: 1,
                bottleneck_blocks: 1,
                repr_dim: REPR_DIM,
                conditioning: cond,
            },
            11,
        )
        .unwrap()
    }

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identity_at_init_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cond in [Conditioning::Full, Conditioning::NoFtb, Conditioning::NoDsln, Conditioning::NoGm] {
            let rn = tiny(cond);
            let x = rand_tensor(&[2, 3, 8, 12], &mut rng);
            let r = rand_tensor(&[2, REPR_DIM], &mut rng);
            let mut g = Graph::inference();
            let xv = g.constant(x.clone());
            let rv = g.constant(r);
            let out = rn.forward(&mut g, xv, rv).unwrap();
            assert_eq!(g.value(out), &x);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let rn = tiny(Conditioning::Full);
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(&[1, 3, 9, 8]));
        let r = g.constant(Tensor::zeros(&[1, REPR_DIM]));
        assert!(matches!(rn.forward(&mut g, x, r), Err(RnError::Indivisible { .. })));
        let x = g.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let r = g.constant(Tensor::zeros(&[1, 7]));
        assert!(matches!(rn.forward(&mut g, x, r), Err(RnError::Repr { .. })));
    }

    #[test]
    fn restore_pads_and_crops() {
        let rn: Restorer<f32> = Restorer::new(RnConfig::default(), 1).unwrap();
        let img = Image::from_fn(18, 21, 3, |y, x, c| ((y * 7 + x * 3 + c) % 17) as f32 / 16.0).unwrap();
        let out = rn.restore(&img, &[0.0; REPR_DIM]).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn conditioned_parameter_counts() {
        let count = |c| {
            let rn = tiny(c);
            rn.params
                .ids()
                .filter(|&id| {
                    let n = rn.params.name(id);
                    n.contains(".gate.") || n.contains(".norm.gamma.") || n.contains(".norm.beta.")
                })
                .map(|id| rn.params.value(id).numel())
                .sum::<usize>()
        };
        let full = count(Conditioning::Full);
        assert!(count(Conditioning::NoDsln) < full);
        assert!(count(Conditioning::NoGm) < full);
        assert_eq!(count(Conditioning::NoFtb), 0);
    }

    #[test]
    fn closed_gate_kills_branch() {
        let mut ps = ParamStore::<f64>::new(5);
        let ftb = Ftb::new(&mut ps, "f", 4, REPR_DIM, Conditioning::Full).unwrap();
        ps.set(ftb.scale, Tensor::full(&[4], 1.0)).unwrap();
        let gate = ftb.gate.unwrap();
        // φ = GELU(·) ⊙ (0·r + 0) = 0
        ps.set(gate.second.weight, Tensor::zeros(&[4, REPR_DIM])).unwrap();
        ps.set(gate.second.bias, Tensor::zeros(&[4])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&[1, 4, 5, 5], &mut rng);
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let rv = g.constant(rand_tensor(&[1, REPR_DIM], &mut rng));
        let y = ftb.forward(&mut g, &ps, xv, rv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn restoration_loss_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = rand_tensor(&[1, 3, 12, 12], &mut rng);
        let mut g = Graph::<f64>::inference();
        let p = g.constant(y.clone());
        let l = restoration_loss(&mut g, p, &y, 0.2).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-12);
        let shifted = y.map(|v| v + 0.05);
        let p = g.constant(shifted);
        let l0 = restoration_loss(&mut g, p, &y, 0.0).unwrap();
        let l1 = g.smooth_l1(p, &y).unwrap();
        assert_eq!(g.value(l0).data()[0], g.value(l1).data()[0]);
        let mut last = -1.0;
        for d in [0.01, 0.05, 0.1] {
            let p = g.constant(y.map(|v| v + d));
            let l = restoration_loss(&mut g, p, &y, 0.2).unwrap();
            let v = g.value(l).data()[0];
            assert!(v > last);
            last = v;
        }
        assert!(restoration_loss(&mut g, p, &y, -1.0).is_err());
    }

    #[test]
    fn total_loss_rules() {
        assert_eq!(total_loss_stage1(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(total_loss_stage1(libm::log(2.0), 0.3).unwrap(), libm::log(2.0) + 0.3);
        assert!(matches!(total_loss_stage1(f64::NAN, 0.0), Err(RnError::NonFinite { name: "L_cls", .. })));
        assert!(total_loss_stage1(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(AblationVariant::parse(v.name()), Some(v));
        }
        assert_eq!(AblationVariant::parse("bogus"), None);
    }
}
