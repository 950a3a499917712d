//! Training configuration, read from TOML and overridden by CLI flags.

use std::path::{Path, PathBuf};

use amirnet_core::drn::DrnConfig;
use amirnet_core::hierarchy::DegTree;
use amirnet_core::restorer::{AblationVariant, RnConfig};
use amirnet_core::REPR_DIM;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How stage 2 starts the restorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Init {
    /// Fresh parameters.
    Scratch,
    /// Continue from the stage-1 weights.
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Corpus root (holding `manifest.json`).
    pub corpus: Option<PathBuf>,
    pub patch_size: usize,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    /// Epochs between tree extensions; levels are built at epochs
    /// `0, interval, 2·interval, …`.
    pub cluster_interval: usize,
    pub stage2_epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// SSIM weight in the restoration loss.
    pub alpha: f64,
    pub seed: u64,
    pub tree_levels: usize,
    pub branching: usize,
    pub variant: AblationVariant,
    pub stage2_init: Stage2Init,
    /// Feed `r_m ⊙ r_a` instead of `r_m` to the restorer in stage 2.
    pub stage2_use_attributes: bool,
    /// Binarize `r_m` along its most probable path in stage 2.
    pub hard_mask: bool,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub min_cluster_fraction: f64,
    pub drn_widths: Vec<usize>,
    pub drn_hidden: usize,
    pub rn_widths: Vec<usize>,
    pub rn_blocks_per_scale: usize,
    pub rn_bottleneck_blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            patch_size: 64,
            batch_size: 16,
            stage1_epochs: 40,
            cluster_interval: 10,
            stage2_epochs: 40,
            lr: 5e-4,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            alpha: 0.2,
            seed: 0,
            tree_levels: 4,
            branching: 2,
            variant: AblationVariant::Full,
            stage2_init: Stage2Init::Scratch,
            stage2_use_attributes: false,
            hard_mask: false,
            kmeans_restarts: 10,
            kmeans_max_iters: 100,
            min_cluster_fraction: 0.05,
            drn_widths: vec![16, 32, 64, 128],
            drn_hidden: 64,
            rn_widths: vec![16, 32, 64],
            rn_blocks_per_scale: 2,
            rn_bottleneck_blocks: 2,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Tree depth after applying a `layers_k` variant.
    pub fn effective_levels(&self) -> usize {
        self.variant.tree_levels().unwrap_or(self.tree_levels)
    }

    pub fn tree(&self) -> DegTree {
        DegTree::new(self.effective_levels(), self.branching)
    }

    pub fn drn_config(&self) -> DrnConfig {
        DrnConfig {
            in_channels: 3,
            widths: self.drn_widths.clone(),
            hidden: self.drn_hidden,
            repr_dim: REPR_DIM,
        }
    }

    pub fn rn_config(&self) -> RnConfig {
        RnConfig {
            in_channels: 3,
            widths: self.rn_widths.clone(),
            blocks_per_scale: self.rn_blocks_per_scale,
            bottleneck_blocks: self.rn_bottleneck_blocks,
            repr_dim: REPR_DIM,
            conditioning: self.variant.conditioning(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let counts = [
            ("patch_size", self.patch_size),
            ("batch_size", self.batch_size),
            ("stage1_epochs", self.stage1_epochs),
            ("cluster_interval", self.cluster_interval),
            ("stage2_epochs", self.stage2_epochs),
            ("tree_levels", self.tree_levels),
            ("branching", self.branching),
            ("kmeans_restarts", self.kmeans_restarts),
            ("kmeans_max_iters", self.kmeans_max_iters),
            ("drn_hidden", self.drn_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let levels = self.effective_levels();
        if self.cluster_interval * levels > self.stage1_epochs {
            return bad(format!(
                "cluster_interval ({}) x tree levels ({levels}) exceeds stage1_epochs ({})",
                self.cluster_interval, self.stage1_epochs
            ));
        }
        let flat = self.tree().flat_len();
        if flat > REPR_DIM {
            return bad(format!("tree with {levels} levels and branching {} needs {flat} > {REPR_DIM} slots", self.branching));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad("need 0 <= lr_min <= lr with lr > 0".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.min_cluster_fraction) {
            return bad("min_cluster_fraction must lie in [0, 1)".into());
        }
        if self.drn_widths.is_empty() || self.rn_widths.is_empty() || self.drn_widths.contains(&0) || self.rn_widths.contains(&0) {
            return bad("network widths must be non-empty and positive".into());
        }
        let drn_min = 1usize << self.drn_widths.len();
        let rn_mult = 1usize << (self.rn_widths.len() - 1);
        if self.patch_size < drn_min || !self.patch_size.is_multiple_of(rn_mult) {
            return bad(format!("patch_size must be >= {drn_min} and a multiple of {rn_mult}"));
        }
        Ok(())
    }

    /// SHA-256 over the fields that define model shapes and the tree.
    pub fn model_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            drn: DrnConfig,
            rn: RnConfig,
            levels: usize,
            branching: usize,
            variant: &'a AblationVariant,
        }
        let key = Key {
            drn: self.drn_config(),
            rn: self.rn_config(),
            levels: self.effective_levels(),
            branching: self.branching,
            variant: &self.variant,
        };
        let bytes = serde_json::to_vec(&key).expect("key serializes");
        hex(&Sha256::digest(bytes))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
