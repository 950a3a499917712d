//! Command-line front end.

use std::path::{Path, PathBuf};

use amirnet_core::degrade::DegradationKind;
use amirnet_core::restorer::AblationVariant;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::{Stage2Init, TrainConfig};
use crate::corpus::{generate_corpus, load_corpus, parse_roster, split, write_clean_set, Sample};
use crate::train::{self, write_text};

#[derive(Debug, Parser)]
#[command(name = "amirnet", version, about = "Hierarchical degradation representation and all-in-one image restoration")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compute device. Only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    /// Directory for every artifact a command writes.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// TOML file with `TrainConfig` fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade a directory of clean PNGs into a paired corpus.
    GenData {
        #[arg(long)]
        clean_dir: PathBuf,
        /// Comma-separated roster, e.g. `gaussian_noise:sigma=15/255|25/255,low_light`.
        #[arg(long, default_value_t = all_kinds())]
        types: String,
        #[arg(long)]
        n_per_type: usize,
    },
    /// Write procedural clean images to `<out-dir>`.
    SynthClean {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
    },
    /// Build the degradation tree while training DRN and RN jointly.
    TrainStage1 {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Freeze the DRN and retrain the RN.
    TrainStage2 {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Continue from the stage-1 RN instead of reinitializing it.
        #[arg(long)]
        finetune: bool,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// PSNR/SSIM per degradation kind.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Val)]
        split: Split,
    },
    /// Train and evaluate one ablation variant.
    Ablate {
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write z, r and a 2-D projection for every sample.
    EmbedDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Print the stored tree assignments.
    TreeDump {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub cluster_interval: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

fn all_kinds() -> String {
    DegradationKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(c) = &self.corpus {
            cfg.corpus = Some(c.clone());
        }
        let fields = [
            (self.patch_size, &mut cfg.patch_size),
            (self.batch_size, &mut cfg.batch_size),
            (self.stage1_epochs, &mut cfg.stage1_epochs),
            (self.cluster_interval, &mut cfg.cluster_interval),
            (self.stage2_epochs, &mut cfg.stage2_epochs),
        ];
        for (v, slot) in fields {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
    }
}

impl Cli {
    fn base_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_toml_file(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn corpus_of(flag: Option<&PathBuf>, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let dir = flag.or(cfg.corpus.as_ref()).context("no corpus given: pass --corpus or set `corpus` in the config")?;
    load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    if cli.device != "cpu" {
        bail!("device {:?} is not available; only `cpu` is supported", cli.device);
    }
    let out = cli.out_dir.clone();
    match &cli.command {
        Command::GenData { clean_dir, types, n_per_type } => {
            let roster = parse_roster(types)?;
            let m = generate_corpus(clean_dir, &roster, *n_per_type, &out, cli.seed.unwrap_or(0))?;
            for (k, n) in m.count_by_kind() {
                println!("{k}\t{n}");
            }
            log::info!("wrote {} pairs to {}", m.entries.len(), out.display());
        }
        Command::SynthClean { n, height, width } => {
            let files = write_clean_set(&out, *n, *height, *width, cli.seed.unwrap_or(0))?;
            log::info!("wrote {} clean images to {}", files.len(), out.display());
        }
        Command::TrainStage1 { train: flags } => {
            let mut cfg = cli.base_config()?;
            flags.apply(&mut cfg);
            cfg.validate()?;
            let samples = corpus_of(None, &cfg)?;
            let (train_set, _) = split(&samples);
            let (ckpt, log) = train::train_stage1(&cfg, &train_set)?;
            ckpt.save(&out.join("stage1.ckpt"))?;
            write_text(&out.join("stage1_log.tsv"), &log.to_tsv())?;
            write_text(&out.join("config.toml"), &cfg.to_toml())?;
            println!("{}", out.join("stage1.ckpt").display());
        }
        Command::TrainStage2 { checkpoint, finetune, corpus, epochs } => {
            let mut ckpt = load_checkpoint(checkpoint)?;
            if let Some(p) = &cli.config {
                let file_cfg = TrainConfig::from_toml_file(p)?;
                ckpt.check_compatible(&file_cfg)?;
                ckpt.config = TrainConfig { corpus: file_cfg.corpus.or(ckpt.config.corpus.take()), ..file_cfg };
            }
            if let Some(s) = cli.seed {
                ckpt.config.seed = s;
            }
            if *finetune {
                ckpt.config.stage2_init = Stage2Init::Finetune;
            }
            if let Some(e) = epochs {
                ckpt.config.stage2_epochs = *e;
            }
            let samples = corpus_of(corpus.as_ref(), &ckpt.config)?;
            let (train_set, _) = split(&samples);
            let (s2, log) = train::train_stage2(&ckpt, &train_set)?;
            s2.save(&out.join("stage2.ckpt"))?;
            write_text(&out.join("stage2_log.tsv"), &log.to_tsv())?;
            println!("{}", out.join("stage2.ckpt").display());
        }
        Command::Eval { checkpoint, corpus, split: which } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let samples = corpus_of(corpus.as_ref(), &ckpt.config)?;
            let (train_set, val_set) = split(&samples);
            let chosen = match which {
                Split::Train => train_set,
                Split::Val => val_set,
                Split::All => samples,
            };
            if chosen.is_empty() {
                bail!("the {which:?} split is empty");
            }
            let metrics = train::evaluate(&ckpt, &chosen)?;
            let report = train::format_report(&train::report(&metrics));
            write_text(&out.join("metrics.tsv"), &train::format_metrics(&metrics))?;
            write_text(&out.join("report.tsv"), &report)?;
            print!("{report}");
        }
        Command::Ablate { variant, train: flags } => {
            let variant = AblationVariant::parse(variant)
                .with_context(|| format!("unknown variant {variant:?}; expected one of {}", variant_names()))?;
            let mut cfg = cli.base_config()?;
            flags.apply(&mut cfg);
            let samples = corpus_of(None, &cfg)?;
            let row = train::ablate(variant, &cfg, &samples)?;
            let text = format!("{}\n{}\n", train::ABLATION_HEADER, row.to_tsv_line());
            write_text(&out.join(format!("ablate_{variant}.tsv")), &text)?;
            write_text(&out.join(format!("ablate_{variant}_log.tsv")), &row.log.to_tsv())?;
            row.stage2_ckpt.save(&out.join(format!("ablate_{variant}.ckpt")))?;
            print!("{text}");
        }
        Command::EmbedDump { checkpoint, corpus } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let samples = corpus_of(corpus.as_ref(), &ckpt.config)?;
            let rows = train::embeddings(&ckpt, &samples)?;
            let path = out.join("embeddings.csv");
            write_text(&path, &train::format_embeddings(&rows))?;
            println!("{}", path.display());
        }
        Command::TreeDump { checkpoint } => {
            let ckpt = load_checkpoint(checkpoint)?;
            print!("{}", train::format_tree(&ckpt)?);
        }
    }
    Ok(())
}

fn variant_names() -> String {
    AblationVariant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
}
