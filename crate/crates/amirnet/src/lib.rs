//! Corpus generation, two-stage training, evaluation, checkpoints and the
//! command-line front end over `amirnet-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod imageio;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{Stage2Init, TrainConfig};
pub use corpus::{generate_corpus, load_corpus, CorpusManifest, Sample};
pub use train::{ablate, evaluate, train_stage1, train_stage2, TrainLog};
