//! A desk-scale world-action model.
//!
//! One diffusion transformer jointly learns two conditionals over a
//! synthetic multi-view manipulation environment: an action-chunk policy
//! conditioned on the current observation, state, and instruction, and an
//! action-conditioned predictor of sparse future frames. A blockwise causal
//! attention mask keeps the action path independent of future-frame tokens,
//! so deployment can decode actions alone at a fraction of the joint cost.
//!
//! The crate is organized bottom-up:
//!
//! - [`diffcore`] — deterministic reverse-mode tensor engine, RNG, optimizer
//! - [`toyworld`] — tabletop push environment, renderer, scripted expert
//! - [`tokens`] — view composition, patch latents, sequence layout, block mask
//! - [`model`] — the shared-block transformer, parameters, KV cache
//! - [`flow`] — flow-matching losses and the training step
//! - [`infer`] — action-only / joint / cached decoding, rollouts, latency bench
//! - [`harness`] — config files, dataset and checkpoint formats, CLI, ablations
//!
//! The `examples/` directory has one runnable walkthrough per capability;
//! the `wam` binary exposes the same operations as subcommands.

pub mod diffcore;
pub mod flow;
pub mod harness;
pub mod infer;
pub mod model;
pub mod tokens;
pub mod toyworld;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A forward op produced NaN/Inf from finite inputs.
    #[error("non-finite value produced by op `{op}` (record node {node})")]
    NonFinite { op: &'static str, node: usize },
    /// Optimizer received a NaN/Inf gradient; the step was not applied.
    #[error("non-finite gradient for parameter `{name}`; step aborted")]
    NanGradient { name: String },
    /// Configuration file or value problem.
    #[error("config: {0}")]
    Config(String),
    /// Dataset/checkpoint binary format violation.
    #[error("format: {0}")]
    Format(String),
    /// Checkpoint incompatible with the requested configuration.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    /// Requested a video decode on a configuration without a video branch.
    #[error("no video branch: {0}")]
    NoVideoBranch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
