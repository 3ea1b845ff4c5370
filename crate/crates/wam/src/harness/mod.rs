//! Operational shell: run configuration, binary dataset and checkpoint
//! formats, metric emission, evaluation campaigns, the ablation runners,
//! and the CLI they all hang off.

mod checkpoint;
mod cli;
pub mod commands;
mod config;
mod dataset;
mod eval;
mod metrics;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use cli::cli;
pub use config::RunConfig;
pub use dataset::{
    read_dataset, write_dataset, DatasetHeader, DatasetReader, DATASET_MAGIC, DATASET_VERSION,
};
pub use eval::{run_eval, summarize, EpisodeRecord, EvalSummary};
pub use metrics::{write_csv, write_ppm, JsonlWriter};
