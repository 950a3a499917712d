mod common;

use amirnet::checkpoint::Checkpoint;
use amirnet::config::TrainConfig;
use amirnet::corpus::{load_corpus, Sample};
use amirnet::train::{embeddings, evaluate, format_embeddings, report, train_stage1, train_stage2, TrainError};
use amirnet_core::{Drn, Restorer};

fn corpus(dir: &std::path::Path) -> (TrainConfig, Vec<Sample>) {
    let (root, _) = common::make_corpus(dir, "gaussian_noise,gaussian_blur,low_light,block_compression", 4, 4, 16, 5);
    (common::tiny_config(&root), load_corpus(&root).unwrap())
}

fn fresh(cfg: &TrainConfig) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        stage: 1,
        epoch: 0,
        built_levels: 0,
        assignments: Vec::new(),
        drn: Drn::new(cfg.drn_config(), 1).unwrap(),
        rn: Restorer::new(cfg.rn_config(), 2).unwrap(),
        optimizer: None,
    }
}

#[test]
fn stage1_builds_every_level() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, samples) = corpus(dir.path());
    let (ckpt, log) = train_stage1(&cfg, &samples).unwrap();
    assert_eq!(ckpt.built_levels, 4);
    assert_eq!(ckpt.assignments.len(), 16);
    assert!(ckpt.assignments.iter().all(|(_, a)| a.path.len() == 4));
    assert_eq!(log.epochs.len(), 4);
    assert_eq!(log.levels.len(), 4);
    let built: Vec<usize> = log.epochs.iter().map(|e| e.built_levels).collect();
    assert_eq!(built, vec![1, 2, 3, 4]);
    assert!(log.epochs.iter().all(|e| e.loss_total.is_finite() && e.loss_cls > 0.0));
    let tsv = log.to_tsv();
    assert_eq!(tsv.lines().count(), 5);
    assert_eq!(tsv.lines().nth(1).unwrap().split('\t').count(), 7);
}

#[test]
fn identical_seeds_reproduce_losses_and_assignments() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, samples) = corpus(dir.path());
    cfg.stage1_epochs = 2;
    cfg.tree_levels = 2;
    let (a, la) = train_stage1(&cfg, &samples).unwrap();
    let (b, lb) = train_stage1(&cfg, &samples).unwrap();
    assert!((la.epochs[0].loss_total - lb.epochs[0].loss_total).abs() <= 1e-6);
    assert_eq!(la.levels[0], lb.levels[0]);
    assert_eq!(a.to_bytes(), b.to_bytes());
    cfg.seed = 77;
    let (_, lc) = train_stage1(&cfg, &samples).unwrap();
    assert_ne!(la.epochs[0].loss_total, lc.epochs[0].loss_total);
}

#[test]
fn stage2_freezes_drn_and_lowers_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, samples) = corpus(dir.path());
    cfg.stage2_epochs = 6;
    let (s1, _) = train_stage1(&cfg, &samples).unwrap();
    let (s2, log) = train_stage2(&s1, &samples).unwrap();
    assert_eq!(s2.stage, 2);
    for ((_, p), (_, q)) in s1.drn.params.iter().zip(s2.drn.params.iter()) {
        assert_eq!(p.name, q.name);
        assert!(p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let first = log.epochs.first().unwrap().loss_res;
    let last = log.epochs.last().unwrap().loss_res;
    assert!(last <= first, "{first} -> {last}");
    assert!(log.epochs.iter().all(|e| e.stage == 2 && e.loss_cls == 0.0));
}

#[test]
fn stage2_needs_a_finished_tree() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, samples) = corpus(dir.path());
    let err = train_stage2(&fresh(&cfg), &samples).unwrap_err();
    assert!(matches!(err, TrainError::UnfinishedTree { built: 0, levels: 4, .. }));
}

#[test]
fn untrained_model_reports_input_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, samples) = corpus(dir.path());
    let metrics = evaluate(&fresh(&cfg), &samples).unwrap();
    for m in &metrics {
        assert_eq!(m.psnr, m.base_psnr);
        assert_eq!(m.ssim, m.base_ssim);
    }
    let rows = report(&metrics);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.last().unwrap().label, "average");
    assert_eq!(rows.iter().take(4).map(|r| r.count).sum::<usize>(), 16);
}

#[test]
fn embedding_dump_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, samples) = corpus(dir.path());
    cfg.drn_widths = TrainConfig::default().drn_widths;
    let rows = embeddings(&fresh(&cfg), &samples).unwrap();
    let text = format_embeddings(&rows);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 3 + 128 + 30 + 2);
    assert!(header.starts_with("id,kind,split,z0,"));
    assert!(header.ends_with(",r29,pc1,pc2"));
    assert_eq!(lines.count(), 16);
    assert!(lines_have_width(&text, 163));
}

fn lines_have_width(text: &str, n: usize) -> bool {
    text.lines().all(|l| l.split(',').count() == n)
}
