#![allow(dead_code)]

use std::path::{Path, PathBuf};

use amirnet::config::TrainConfig;
use amirnet::corpus::{generate_corpus, parse_roster, write_clean_set, CorpusManifest};

/// Clean set plus a degraded corpus under `root`.
pub fn make_corpus(root: &Path, roster: &str, n_clean: usize, n_per_type: usize, side: usize, seed: u64) -> (PathBuf, CorpusManifest) {
    let clean = root.join("clean");
    write_clean_set(&clean, n_clean, side, side, seed).unwrap();
    let out = root.join("corpus");
    let m = generate_corpus(&clean, &parse_roster(roster).unwrap(), n_per_type, &out, seed).unwrap();
    (out, m)
}

/// Small networks and a short schedule.
pub fn tiny_config(corpus: &Path) -> TrainConfig {
    TrainConfig {
        corpus: Some(corpus.to_path_buf()),
        patch_size: 16,
        batch_size: 4,
        stage1_epochs: 4,
        cluster_interval: 1,
        stage2_epochs: 2,
        kmeans_restarts: 3,
        drn_widths: vec![4, 8, 8, 16],
        drn_hidden: 16,
        rn_widths: vec![4, 8, 8],
        rn_blocks_per_scale: 1,
        rn_bottleneck_blocks: 1,
        ..Default::default()
    }
}
