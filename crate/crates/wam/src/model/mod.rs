//! The shared-block diffusion transformer.
//!
//! One stack of pre-norm transformer blocks processes the whole unified
//! sequence with a single QKV projection per layer; the blockwise causal
//! mask alone decides which modality may see which. Instructions condition
//! every block through cross-attention and never join the causal sequence.
//! Flow times enter as additive per-modality embeddings before layer 1, and
//! zero-initialized linear heads read action and video velocities off the
//! final hidden states.

mod cache;
mod forward;
mod params;

pub use cache::{extend_with_cache, kv_cache_forward, KvCache};
pub use forward::{encode_instruction, forward, ForwardOutput};
pub use params::{init_model, random_model, Bound, Parameters};

use crate::diffcore::Precision;
use crate::tokens::{future_frame_indices, AssembleCfg, MaskMode, SequenceLayout};

/// Hyperparameters that shape the model and its training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_expansion: usize,
    /// Action chunk length p.
    pub chunk_len: usize,
    /// Future-frame stride Δ; 0 disables the video branch.
    pub stride: usize,
    /// Per-view image extents; the composite frame is `img_h × 3·img_w`.
    pub img_h: usize,
    pub img_w: usize,
    pub patch: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub vocab_size: usize,
    pub lambda_action: f64,
    pub lambda_video: f64,
    /// Euler steps N for flow integration at inference.
    pub flow_steps: usize,
    pub precision: Precision,
    pub mask_mode: MaskMode,
    /// Whether action tokens may attend among themselves.
    pub intra_action_attn: bool,
    pub state_tokens: usize,
    /// Teacher forcing (two forward passes, video conditioned on clean
    /// actions) when false; one joint pass on noised actions when true.
    pub single_pass: bool,
    /// Cross-attend every sequence token to the instruction (the maximal
    /// reading); when false only action and future tokens attend.
    pub cross_attn_all: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_dim: 64,
            heads: 4,
            layers: 4,
            mlp_expansion: 4,
            chunk_len: 8,
            stride: 4,
            img_h: 16,
            img_w: 16,
            patch: 4,
            state_dim: crate::toyworld::STATE_DIM,
            action_dim: crate::toyworld::ACTION_DIM,
            vocab_size: crate::toyworld::VOCAB.len(),
            lambda_action: 5.0,
            lambda_video: 1.0,
            flow_steps: 10,
            precision: Precision::F32,
            mask_mode: MaskMode::Causal,
            intra_action_attn: true,
            state_tokens: 1,
            single_pass: false,
            cross_attn_all: true,
        }
    }
}

impl ModelConfig {
    /// Future-frame count `K = ⌊p/Δ⌋` (0 when the stride is 0).
    pub fn k(&self) -> usize {
        future_frame_indices(self.chunk_len, self.stride).1
    }

    pub fn future_offsets(&self) -> Vec<usize> {
        future_frame_indices(self.chunk_len, self.stride).0
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn grid_rows(&self) -> usize {
        self.img_h / self.patch
    }

    pub fn grid_cols(&self) -> usize {
        3 * self.img_w / self.patch
    }

    pub fn frame_tokens(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Layout with (`with_future = true`) or without the video block.
    pub fn layout(&self, with_future: bool) -> SequenceLayout {
        SequenceLayout::new(
            self.frame_tokens(),
            self.state_tokens,
            self.chunk_len,
            if with_future { self.k() } else { 0 },
        )
    }

    pub fn assemble_cfg(&self) -> AssembleCfg {
        AssembleCfg {
            model_dim: self.model_dim,
            patch: self.patch,
            grid_rows: self.grid_rows(),
            grid_cols: self.grid_cols(),
            p: self.chunk_len,
            k: self.k(),
            state_tokens: self.state_tokens,
            mask_mode: self.mask_mode,
            intra_action: self.intra_action_attn,
        }
    }

    /// Minimum trajectory length every training window needs. `KΔ ≤ p`
    /// always, so `2p` covers any stride that may be swept later.
    pub fn min_demo_len(&self) -> usize {
        2 * self.chunk_len
    }

    pub fn validate(&self) -> crate::Result<()> {
        let mut problems = Vec::new();
        if self.model_dim % self.heads != 0 {
            problems.push("model_dim must divide evenly by heads".to_string());
        }
        if self.model_dim % 4 != 0 {
            problems.push("model_dim must be divisible by 4 for 2D encodings".to_string());
        }
        if self.img_h % self.patch != 0 || self.img_w % self.patch != 0 {
            problems.push(format!(
                "image {}x{} not divisible by patch {}",
                self.img_h, self.img_w, self.patch
            ));
        }
        if self.chunk_len == 0 {
            problems.push("chunk_len must be at least 1".to_string());
        }
        if self.heads == 0 || self.layers == 0 {
            problems.push("heads and layers must be at least 1".to_string());
        }
        if self.lambda_action < 0.0 || self.lambda_video < 0.0 {
            problems.push("loss weights must be non-negative".to_string());
        }
        if self.flow_steps == 0 {
            problems.push("flow_steps must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::Config(problems.join("; ")))
        }
    }
}
