//! Two-stage training, evaluation, ablation and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use amirnet_core::autonn::{Graph, NnError, ParamId, Tensor};
use amirnet_core::degrade::{derive_seed, DegradationKind};
use amirnet_core::drn::{classification_loss, hard_mask, DrnError};
use amirnet_core::hierarchy::{build_level, flatten, DegTree, FlatLabel, HierarchyError, KMeansConfig, TreeAssignment};
use amirnet_core::image::{random_patch, Image, ImageError};
use amirnet_core::metrics::{psnr, ssim};
use amirnet_core::optim::{cosine_lr, AdamW, AdamWConfig};
use amirnet_core::restorer::{restoration_loss, total_loss_stage1, AblationVariant, RnError};
use amirnet_core::stats::pca_2d;
use amirnet_core::{Drn, ReprStage, Restorer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, Stage2Init, TrainConfig};
use crate::corpus::{is_validation, split, Sample};

/// PSNR values are capped here before averaging so identical pairs do not
/// turn an aggregate infinite.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Drn(#[from] DrnError),
    #[error(transparent)]
    Rn(#[from] RnError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("empty training set")]
    EmptyCorpus,
    #[error("sample {id} is {height}x{width}, smaller than patch size {patch}")]
    PatchTooLarge { id: String, height: usize, width: usize, patch: usize },
    #[error("stage {stage}, epoch {epoch}, batch {batch}: {source}")]
    NonFinite { stage: u8, epoch: usize, batch: usize, source: RnError },
    #[error("stage 2 needs a finished stage-1 tree: checkpoint has stage {stage} with {built} of {levels} levels built")]
    UnfinishedTree { stage: u8, built: usize, levels: usize },
}

/// Per-epoch means over batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub built_levels: usize,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_res: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Assignments right after each level was built, in level order.
    pub levels: Vec<Vec<TreeAssignment>>,
}

impl TrainLog {
    pub const HEADER: &'static str = "stage\tepoch\tlr\tbuilt_levels\tloss_total\tloss_cls\tloss_res";

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6e}\t{}\t{:.8}\t{:.8}\t{:.8}",
                e.stage, e.epoch, e.lr, e.built_levels, e.loss_total, e.loss_cls, e.loss_res
            );
        }
        s
    }
}

/// Frozen inference view of a checkpoint.
pub struct Model<'a> {
    pub drn: &'a Drn<f32>,
    pub rn: &'a Restorer<f32>,
    pub tree: DegTree,
    pub built: usize,
    pub stage: ReprStage,
    pub hard_mask: bool,
}

impl<'a> Model<'a> {
    pub fn from_checkpoint(ckpt: &'a Checkpoint) -> Self {
        let stage = match (ckpt.stage, ckpt.config.stage2_use_attributes) {
            (1, _) => ReprStage::One,
            (_, true) => ReprStage::TwoWithAttributes,
            (_, false) => ReprStage::Two,
        };
        Self {
            drn: &ckpt.drn,
            rn: &ckpt.rn,
            tree: ckpt.config.tree(),
            built: ckpt.built_levels,
            stage,
            hard_mask: ckpt.stage == 2 && ckpt.config.hard_mask,
        }
    }

    /// `(z, r)` for a batch `[N, C, H, W]`.
    pub fn represent(&self, x: Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>), TrainError> {
        represent(self.drn, &self.tree, self.built, self.stage, self.hard_mask, x)
    }

    /// Restored image, clipped, same size as the input.
    pub fn restore(&self, img: &Image) -> Result<Image, TrainError> {
        let (_, r) = self.represent(img.to_tensor())?;
        Ok(self.rn.restore(img, r.data())?)
    }
}

fn represent(
    drn: &Drn<f32>,
    tree: &DegTree,
    built: usize,
    stage: ReprStage,
    hard: bool,
    x: Tensor<f32>,
) -> Result<(Tensor<f32>, Tensor<f32>), TrainError> {
    let mut g = Graph::inference();
    let xv = g.constant(x);
    let out = drn.forward(&mut g, xv, tree, built, stage)?;
    let z = g.value(out.z).clone();
    if !hard {
        return Ok((z, g.value(out.r).clone()));
    }
    let rm = g.constant(hard_mask(g.value(out.rm), tree, built));
    let r = amirnet_core::drn::compose_representation(&mut g, rm, out.ra, stage)?;
    Ok((z, g.value(r).clone()))
}

/// Encoder embeddings of whole degraded images, batched when sizes agree.
pub fn embed(drn: &Drn<f32>, images: &[&Image], batch: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(images.len());
    let mut i = 0;
    while i < images.len() {
        let dims = images[i].dims();
        let mut j = i + 1;
        while j < images.len() && j - i < batch.max(1) && images[j].dims() == dims {
            j += 1;
        }
        let x = Image::batch_tensor(&images[i..j])?;
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let z = drn.encode(&mut g, xv)?;
        let zt = g.value(z);
        let d = zt.shape()[1];
        out.extend(zt.data().chunks(d).map(|row| row.iter().map(|&v| v as f64).collect()));
        i = j;
    }
    Ok(out)
}

fn check_patchable(samples: &[Sample], patch: usize) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for s in samples {
        let (h, w, _) = s.pair.degraded.dims();
        if h < patch || w < patch {
            return Err(TrainError::PatchTooLarge { id: s.id.clone(), height: h, width: w, patch });
        }
    }
    Ok(())
}

/// Shuffled index batches plus co-located patch tensors for one epoch.
fn epoch_batches(
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Vec<usize>, Tensor<f32>, Tensor<f32>)>, TrainError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for chunk in order.chunks(cfg.batch_size) {
        let patches = chunk
            .iter()
            .map(|&i| random_patch(&samples[i].pair, cfg.patch_size, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let x = Image::batch_tensor(&patches.iter().map(|p| &p.degraded).collect::<Vec<_>>())?;
        let y = Image::batch_tensor(&patches.iter().map(|p| &p.clean).collect::<Vec<_>>())?;
        out.push((chunk.to_vec(), x, y));
    }
    Ok(out)
}

fn optimizer_config(cfg: &TrainConfig) -> AdamWConfig {
    AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() }
}

fn kmeans_config(cfg: &TrainConfig) -> KMeansConfig {
    KMeansConfig {
        k: cfg.branching,
        restarts: cfg.kmeans_restarts,
        max_iters: cfg.kmeans_max_iters,
        min_cluster_fraction: cfg.min_cluster_fraction,
        seed: derive_seed(cfg.seed, 11),
        ..Default::default()
    }
}

/// Stage 1: progressive tree construction with joint DRN + RN training.
pub fn train_stage1(cfg: &TrainConfig, train: &[Sample]) -> Result<(Checkpoint, TrainLog), TrainError> {
    cfg.validate()?;
    check_patchable(train, cfg.patch_size)?;
    let tree = cfg.tree();
    let mut drn: Drn<f32> = Drn::new(cfg.drn_config(), derive_seed(cfg.seed, 1))?;
    let mut rn: Restorer<f32> = Restorer::new(cfg.rn_config(), derive_seed(cfg.seed, 2))?;
    let mut opt = AdamW::new(optimizer_config(cfg), &[&drn.params, &rn.params]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 101));
    let mut assignments = vec![TreeAssignment::root(); train.len()];
    let mut built = 0;
    let mut log = TrainLog::default();
    let images: Vec<&Image> = train.iter().map(|s| &s.pair.degraded).collect();

    for epoch in 0..cfg.stage1_epochs {
        if epoch % cfg.cluster_interval == 0 && built < tree.levels {
            let z = embed(&drn, &images, cfg.batch_size)?;
            assignments = build_level(&z, &assignments, built + 1, &tree, &kmeans_config(cfg))?;
            built += 1;
            log.levels.push(assignments.clone());
            log::info!("stage 1 epoch {epoch}: built tree level {built}");
        }
        let labels: Vec<FlatLabel> = assignments.iter().map(|a| flatten(a, &tree)).collect::<Result<_, _>>()?;
        let lr = cosine_lr(cfg.lr, cfg.lr_min, epoch, cfg.stage1_epochs);
        let (mut sum_t, mut sum_c, mut sum_r, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (b, (idx, x, y)) in epoch_batches(train, cfg, &mut rng)?.into_iter().enumerate() {
            let mut g = Graph::new();
            let xv = g.input(x, false);
            let out = drn.forward(&mut g, xv, &tree, built, ReprStage::One)?;
            let pred = rn.forward(&mut g, xv, out.r)?;
            let lres = restoration_loss(&mut g, pred, &y, cfg.alpha)?;
            let res_val = g.value(lres).data()[0] as f64;
            let (loss, cls_val) = if built > 0 {
                let batch_labels: Vec<FlatLabel> = idx.iter().map(|&i| labels[i].clone()).collect();
                let lcls = classification_loss(&mut g, out.logits, &batch_labels, &tree, built)?;
                let v = g.value(lcls).data()[0] as f64;
                (g.add(lcls, lres)?, v)
            } else {
                (lres, 0.0)
            };
            let total = total_loss_stage1(cls_val, res_val).map_err(|source| TrainError::NonFinite { stage: 1, epoch, batch: b, source })?;
            g.backward(loss)?;
            let grads = split_grads(&g, &[&drn.params, &rn.params]);
            opt.update(&mut [&mut drn.params, &mut rn.params], &grads, lr)?;
            sum_t += total;
            sum_c += cls_val;
            sum_r += res_val;
            n += 1;
        }
        let e = EpochLog {
            stage: 1,
            epoch,
            lr,
            built_levels: built,
            loss_total: sum_t / n as f64,
            loss_cls: sum_c / n as f64,
            loss_res: sum_r / n as f64,
        };
        log::info!("stage 1 epoch {epoch}: total {:.5} cls {:.5} res {:.5}", e.loss_total, e.loss_cls, e.loss_res);
        log.epochs.push(e);
    }
    let ckpt = Checkpoint {
        config: cfg.clone(),
        stage: 1,
        epoch: cfg.stage1_epochs,
        built_levels: built,
        assignments: train.iter().map(|s| s.id.clone()).zip(assignments).collect(),
        drn,
        rn,
        optimizer: Some(opt),
    };
    Ok((ckpt, log))
}

fn split_grads(g: &Graph<f32>, stores: &[&amirnet_core::autonn::ParamStore<f32>]) -> Vec<Vec<(ParamId, Vec<f32>)>> {
    let mut out = vec![Vec::new(); stores.len()];
    for (id, grad) in g.param_grads() {
        if let Some(k) = stores.iter().position(|s| s.owns(id)) {
            out[k].push((id, grad.to_vec()));
        }
    }
    out
}

/// Stage 2: DRN frozen, RN retrained on the restoration loss with `r_m`.
pub fn train_stage2(ckpt: &Checkpoint, train: &[Sample]) -> Result<(Checkpoint, TrainLog), TrainError> {
    let cfg = &ckpt.config;
    cfg.validate()?;
    let tree = cfg.tree();
    if ckpt.stage != 1 || ckpt.built_levels != tree.levels {
        return Err(TrainError::UnfinishedTree { stage: ckpt.stage, built: ckpt.built_levels, levels: tree.levels });
    }
    check_patchable(train, cfg.patch_size)?;
    let drn = &ckpt.drn;
    let mut rn = match cfg.stage2_init {
        Stage2Init::Scratch => Restorer::new(cfg.rn_config(), derive_seed(cfg.seed, 3))?,
        Stage2Init::Finetune => ckpt.rn.clone(),
    };
    let stage = if cfg.stage2_use_attributes { ReprStage::TwoWithAttributes } else { ReprStage::Two };
    let mut opt = AdamW::new(optimizer_config(cfg), &[&rn.params]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 102));
    let mut log = TrainLog::default();
    for epoch in 0..cfg.stage2_epochs {
        let lr = cosine_lr(cfg.lr, cfg.lr_min, epoch, cfg.stage2_epochs);
        let (mut sum, mut n) = (0.0, 0usize);
        for (b, (_, x, y)) in epoch_batches(train, cfg, &mut rng)?.into_iter().enumerate() {
            let (_, r) = represent(drn, &tree, tree.levels, stage, cfg.hard_mask, x.clone())?;
            let mut g = Graph::new();
            let xv = g.input(x, false);
            let rv = g.constant(r);
            let pred = rn.forward(&mut g, xv, rv)?;
            let loss = restoration_loss(&mut g, pred, &y, cfg.alpha)?;
            let v = g.value(loss).data()[0] as f64;
            total_loss_stage1(0.0, v).map_err(|source| TrainError::NonFinite { stage: 2, epoch, batch: b, source })?;
            g.backward(loss)?;
            let grads = split_grads(&g, &[&rn.params]);
            opt.update(&mut [&mut rn.params], &grads, lr)?;
            sum += v;
            n += 1;
        }
        let e = EpochLog {
            stage: 2,
            epoch,
            lr,
            built_levels: tree.levels,
            loss_total: sum / n as f64,
            loss_cls: 0.0,
            loss_res: sum / n as f64,
        };
        log::info!("stage 2 epoch {epoch}: res {:.5}", e.loss_res);
        log.epochs.push(e);
    }
    let out = Checkpoint {
        config: cfg.clone(),
        stage: 2,
        epoch: cfg.stage2_epochs,
        built_levels: ckpt.built_levels,
        assignments: ckpt.assignments.clone(),
        drn: drn.clone(),
        rn,
        optimizer: Some(opt),
    };
    Ok((out, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub kind: DegradationKind,
    pub psnr: f64,
    pub ssim: f64,
    pub base_psnr: f64,
    pub base_ssim: f64,
}

/// Whole-image metrics of the restored and the degraded input against the
/// clean reference.
pub fn evaluate(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Vec<ImageMetrics>, TrainError> {
    let model = Model::from_checkpoint(ckpt);
    samples
        .iter()
        .map(|s| {
            let restored = model.restore(&s.pair.degraded)?;
            Ok(ImageMetrics {
                id: s.id.clone(),
                kind: s.kind,
                psnr: psnr(&restored, &s.pair.clean)?,
                ssim: ssim(&restored, &s.pair.clean)?,
                base_psnr: psnr(&s.pair.degraded, &s.pair.clean)?,
                base_ssim: ssim(&s.pair.degraded, &s.pair.clean)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Degradation kind, or `average`.
    pub label: String,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub base_psnr: f64,
    pub base_ssim: f64,
}

impl ReportRow {
    fn from_metrics(label: String, ms: &[&ImageMetrics]) -> Self {
        let n = ms.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ImageMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
        Self {
            label,
            count: ms.len(),
            psnr: mean(&|m| m.psnr.min(PSNR_CAP_DB)),
            ssim: mean(&|m| m.ssim),
            base_psnr: mean(&|m| m.base_psnr.min(PSNR_CAP_DB)),
            base_ssim: mean(&|m| m.base_ssim),
        }
    }
}

/// One row per degradation kind (sorted) plus an `average` row over all
/// images.
pub fn report(metrics: &[ImageMetrics]) -> Vec<ReportRow> {
    let mut by_kind: BTreeMap<DegradationKind, Vec<&ImageMetrics>> = BTreeMap::new();
    for m in metrics {
        by_kind.entry(m.kind).or_default().push(m);
    }
    let mut rows: Vec<ReportRow> = by_kind.into_iter().map(|(k, ms)| ReportRow::from_metrics(k.name().into(), &ms)).collect();
    rows.push(ReportRow::from_metrics("average".into(), &metrics.iter().collect::<Vec<_>>()));
    rows
}

pub const REPORT_HEADER: &str = "kind\tcount\tpsnr\tssim\tinput_psnr\tinput_ssim";

pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", r.label, r.count, r.psnr, r.ssim, r.base_psnr, r.base_ssim);
    }
    s
}

pub fn format_metrics(metrics: &[ImageMetrics]) -> String {
    let mut s = String::from("id\tkind\tpsnr\tssim\tinput_psnr\tinput_ssim\n");
    for m in metrics {
        let _ = writeln!(s, "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", m.id, m.kind, m.psnr, m.ssim, m.base_psnr, m.base_ssim);
    }
    s
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// Validation average after stage 1.
    pub stage1: ReportRow,
    /// Validation average after stage 2.
    pub stage2: ReportRow,
    pub stage1_ckpt: Checkpoint,
    pub stage2_ckpt: Checkpoint,
    pub log: TrainLog,
    pub stage1_time: Duration,
    pub stage2_time: Duration,
}

pub const ABLATION_HEADER: &str = "variant\tstage1_psnr\tstage1_ssim\tpsnr\tssim\tinput_psnr\tinput_ssim";

impl AblationRow {
    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            self.variant, self.stage1.psnr, self.stage1.ssim, self.stage2.psnr, self.stage2.ssim, self.stage2.base_psnr, self.stage2.base_ssim
        )
    }
}

fn average_row(metrics: &[ImageMetrics]) -> ReportRow {
    report(metrics).pop().expect("average row")
}

/// Trains both stages of `variant` on the training split and evaluates on
/// the validation split.
pub fn ablate(variant: AblationVariant, cfg: &TrainConfig, samples: &[Sample]) -> Result<AblationRow, TrainError> {
    let cfg = TrainConfig { variant, ..cfg.clone() };
    let (train, val) = split(samples);
    let t = Instant::now();
    let (s1, mut log) = train_stage1(&cfg, &train)?;
    let stage1_time = t.elapsed();
    let stage1 = average_row(&evaluate(&s1, &val)?);
    let t = Instant::now();
    let (s2, log2) = train_stage2(&s1, &train)?;
    let stage2_time = t.elapsed();
    let stage2 = average_row(&evaluate(&s2, &val)?);
    log.epochs.extend(log2.epochs);
    Ok(AblationRow { variant, stage1, stage2, stage1_ckpt: s1, stage2_ckpt: s2, log, stage1_time, stage2_time })
}

#[derive(Debug, Clone)]
pub struct EmbeddingRow {
    pub id: String,
    pub kind: DegradationKind,
    /// `train` or `val`.
    pub split: &'static str,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub pc: [f64; 2],
}

/// `z`, `r` and the top-2 principal-component coordinates of centered `z`
/// for every sample.
pub fn embeddings(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Vec<EmbeddingRow>, TrainError> {
    let model = Model::from_checkpoint(ckpt);
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let (z, r) = model.represent(s.pair.degraded.to_tensor())?;
        rows.push(EmbeddingRow {
            id: s.id.clone(),
            kind: s.kind,
            split: if is_validation(&s.id) { "val" } else { "train" },
            z: z.data().iter().map(|&v| v as f64).collect(),
            r: r.data().iter().map(|&v| v as f64).collect(),
            pc: [0.0; 2],
        });
    }
    let zs: Vec<Vec<f64>> = rows.iter().map(|r| r.z.clone()).collect();
    for (row, pc) in rows.iter_mut().zip(pca_2d(&zs)) {
        row.pc = pc;
    }
    Ok(rows)
}

/// Comma-separated: `id,kind,split,z0..,r0..,pc1,pc2`.
pub fn format_embeddings(rows: &[EmbeddingRow]) -> String {
    let mut s = String::new();
    let (zd, rd) = rows.first().map_or((0, 0), |r| (r.z.len(), r.r.len()));
    let mut header = vec!["id".to_string(), "kind".to_string(), "split".to_string()];
    header.extend((0..zd).map(|i| format!("z{i}")));
    header.extend((0..rd).map(|i| format!("r{i}")));
    header.extend(["pc1".to_string(), "pc2".to_string()]);
    s.push_str(&header.join(","));
    s.push('\n');
    for row in rows {
        let mut cells = vec![row.id.clone(), row.kind.to_string(), row.split.to_string()];
        cells.extend(row.z.iter().chain(&row.r).chain(&row.pc).map(|v| format!("{v:.6e}")));
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)
}

/// Tab-separated `id, path, flat label` rows of the stored tree assignments.
pub fn format_tree(ckpt: &Checkpoint) -> Result<String, TrainError> {
    let tree = ckpt.config.tree();
    let mut s = String::from("id\tpath\tflat_label\n");
    for (id, a) in &ckpt.assignments {
        let path: Vec<String> = a.path.iter().map(|n| n.to_string()).collect();
        let bits: String = flatten(a, &tree)?.bits.iter().map(|&b| if b != 0 { '1' } else { '0' }).collect();
        let _ = writeln!(s, "{id}\t{}\t{bits}", path.join("/"));
    }
    Ok(s)
}
