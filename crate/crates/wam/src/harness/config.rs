//! Run configuration: plain UTF-8 `key = value` lines with `#` comments.
//!
//! The format is dependency-free and diffable; unknown keys are rejected so
//! typos fail loudly. `RunConfig::to_text` emits every key in canonical
//! order, which is also the self-describing blob embedded in checkpoints.

use std::path::Path;

use crate::diffcore::Precision;
use crate::model::ModelConfig;
use crate::tokens::MaskMode;
use crate::{Error, Result};

/// Everything a run needs: the model hyperparameters plus data, schedule,
/// and evaluation settings.
///
/// Key table (defaults in parentheses):
///
/// | key | meaning |
/// |---|---|
/// | `model_dim` (64) | transformer width |
/// | `heads` (4) | attention heads |
/// | `layers` (4) | transformer blocks |
/// | `mlp_expansion` (4) | MLP hidden multiple |
/// | `chunk_len` (8) | action chunk length p |
/// | `stride` (4) | future-frame stride Δ (0 = no video branch) |
/// | `img_h`, `img_w` (16, 16) | per-view image extents |
/// | `patch` (4) | patch edge for visual latents |
/// | `state_tokens` (1) | tokens for the proprioceptive state |
/// | `lambda_action` (5), `lambda_video` (1) | loss weights |
/// | `flow_steps` (10) | Euler steps N at inference |
/// | `precision` (f32) | `f32` or `f64` |
/// | `mask_mode` (causal) | `causal` or `full` |
/// | `intra_action_attn` (true) | action tokens attend among themselves |
/// | `single_pass` (false) | one joint pass instead of teacher forcing |
/// | `cross_attn_all` (true) | all tokens cross-attend to the instruction |
/// | `seed` (0) | master seed |
/// | `dataset` (data/demos.wamd) | dataset path |
/// | `checkpoint` (data/model.wamc) | checkpoint path |
/// | `train_steps` (5000) | optimizer steps |
/// | `batch_size` (8) | windows per step |
/// | `lr_init` (1e-4), `lr_final` (1e-6) | cosine schedule endpoints |
/// | `adam_beta1` (0.9), `adam_beta2` (0.999), `adam_eps` (1e-8) | optimizer |
/// | `weight_decay` (0) | decoupled weight decay |
/// | `eval_episodes` (20) | episodes per evaluation |
/// | `max_episode_steps` (400) | rollout step budget |
/// | `execute_horizon` (0 = p/2) | actions executed per replan |
/// | `demo_t_max` (400) | demo recording budget |
/// | `metrics` (metrics) | output directory for metric files |
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_expansion: usize,
    pub chunk_len: usize,
    pub stride: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub patch: usize,
    pub state_tokens: usize,
    pub lambda_action: f64,
    pub lambda_video: f64,
    pub flow_steps: usize,
    pub precision: Precision,
    pub mask_mode: MaskMode,
    pub intra_action_attn: bool,
    pub single_pass: bool,
    pub cross_attn_all: bool,
    pub seed: u64,
    pub dataset: String,
    pub checkpoint: String,
    pub train_steps: u64,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub eval_episodes: usize,
    pub max_episode_steps: u32,
    pub execute_horizon: usize,
    pub demo_t_max: usize,
    pub metrics: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_dim: 64,
            heads: 4,
            layers: 4,
            mlp_expansion: 4,
            chunk_len: 8,
            stride: 4,
            img_h: 16,
            img_w: 16,
            patch: 4,
            state_tokens: 1,
            lambda_action: 5.0,
            lambda_video: 1.0,
            flow_steps: 10,
            precision: Precision::F32,
            mask_mode: MaskMode::Causal,
            intra_action_attn: true,
            single_pass: false,
            cross_attn_all: true,
            seed: 0,
            dataset: "data/demos.wamd".into(),
            checkpoint: "data/model.wamc".into(),
            train_steps: 5000,
            batch_size: 8,
            lr_init: 1e-4,
            lr_final: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            eval_episodes: 20,
            max_episode_steps: 400,
            execute_horizon: 0,
            demo_t_max: 400,
            metrics: "metrics".into(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: could not parse `{v}`")))
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            model_dim: self.model_dim,
            heads: self.heads,
            layers: self.layers,
            mlp_expansion: self.mlp_expansion,
            chunk_len: self.chunk_len,
            stride: self.stride,
            img_h: self.img_h,
            img_w: self.img_w,
            patch: self.patch,
            state_dim: crate::toyworld::STATE_DIM,
            action_dim: crate::toyworld::ACTION_DIM,
            vocab_size: crate::toyworld::VOCAB.len(),
            lambda_action: self.lambda_action,
            lambda_video: self.lambda_video,
            flow_steps: self.flow_steps,
            precision: self.precision,
            mask_mode: self.mask_mode,
            intra_action_attn: self.intra_action_attn,
            state_tokens: self.state_tokens,
            single_pass: self.single_pass,
            cross_attn_all: self.cross_attn_all,
        }
    }

    /// Actions executed per replan; defaults to half the chunk.
    pub fn horizon(&self) -> usize {
        if self.execute_horizon == 0 {
            (self.chunk_len / 2).max(1)
        } else {
            self.execute_horizon.min(self.chunk_len)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        for (key, value) in [("dataset", &self.dataset), ("checkpoint", &self.checkpoint)] {
            if value.trim().is_empty() {
                return Err(Error::Config(format!("{key}: path must not be empty")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_init <= 0.0 || self.lr_final <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let v = value.trim();
            match key {
                "model_dim" => cfg.model_dim = parse_num(key, v)?,
                "heads" => cfg.heads = parse_num(key, v)?,
                "layers" => cfg.layers = parse_num(key, v)?,
                "mlp_expansion" => cfg.mlp_expansion = parse_num(key, v)?,
                "chunk_len" => cfg.chunk_len = parse_num(key, v)?,
                "stride" => cfg.stride = parse_num(key, v)?,
                "img_h" => cfg.img_h = parse_num(key, v)?,
                "img_w" => cfg.img_w = parse_num(key, v)?,
                "patch" => cfg.patch = parse_num(key, v)?,
                "state_tokens" => cfg.state_tokens = parse_num(key, v)?,
                "lambda_action" => cfg.lambda_action = parse_num(key, v)?,
                "lambda_video" => cfg.lambda_video = parse_num(key, v)?,
                "flow_steps" => cfg.flow_steps = parse_num(key, v)?,
                "precision" => {
                    cfg.precision = match v {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => {
                            return Err(Error::Config(format!(
                                "precision: expected f32 or f64, got `{v}`"
                            )))
                        }
                    }
                }
                "mask_mode" => {
                    cfg.mask_mode = match v {
                        "causal" => MaskMode::Causal,
                        "full" => MaskMode::Full,
                        _ => {
                            return Err(Error::Config(format!(
                                "mask_mode: expected causal or full, got `{v}`"
                            )))
                        }
                    }
                }
                "intra_action_attn" => cfg.intra_action_attn = parse_bool(key, v)?,
                "single_pass" => cfg.single_pass = parse_bool(key, v)?,
                "cross_attn_all" => cfg.cross_attn_all = parse_bool(key, v)?,
                "seed" => cfg.seed = parse_num(key, v)?,
                "dataset" => cfg.dataset = v.to_string(),
                "checkpoint" => cfg.checkpoint = v.to_string(),
                "train_steps" => cfg.train_steps = parse_num(key, v)?,
                "batch_size" => cfg.batch_size = parse_num(key, v)?,
                "lr_init" => cfg.lr_init = parse_num(key, v)?,
                "lr_final" => cfg.lr_final = parse_num(key, v)?,
                "adam_beta1" => cfg.adam_beta1 = parse_num(key, v)?,
                "adam_beta2" => cfg.adam_beta2 = parse_num(key, v)?,
                "adam_eps" => cfg.adam_eps = parse_num(key, v)?,
                "weight_decay" => cfg.weight_decay = parse_num(key, v)?,
                "eval_episodes" => cfg.eval_episodes = parse_num(key, v)?,
                "max_episode_steps" => cfg.max_episode_steps = parse_num(key, v)?,
                "execute_horizon" => cfg.execute_horizon = parse_num(key, v)?,
                "demo_t_max" => cfg.demo_t_max = parse_num(key, v)?,
                "metrics" => cfg.metrics = v.to_string(),
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{key}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mask = match self.mask_mode {
            MaskMode::Causal => "causal",
            MaskMode::Full => "full",
        };
        format!(
            "model_dim = {}\nheads = {}\nlayers = {}\nmlp_expansion = {}\n\
             chunk_len = {}\nstride = {}\nimg_h = {}\nimg_w = {}\npatch = {}\n\
             state_tokens = {}\nlambda_action = {}\nlambda_video = {}\n\
             flow_steps = {}\nprecision = {}\nmask_mode = {}\n\
             intra_action_attn = {}\nsingle_pass = {}\ncross_attn_all = {}\n\
             seed = {}\ndataset = {}\ncheckpoint = {}\ntrain_steps = {}\n\
             batch_size = {}\nlr_init = {}\nlr_final = {}\nadam_beta1 = {}\n\
             adam_beta2 = {}\nadam_eps = {}\nweight_decay = {}\n\
             eval_episodes = {}\nmax_episode_steps = {}\nexecute_horizon = {}\n\
             demo_t_max = {}\nmetrics = {}\n",
            self.model_dim,
            self.heads,
            self.layers,
            self.mlp_expansion,
            self.chunk_len,
            self.stride,
            self.img_h,
            self.img_w,
            self.patch,
            self.state_tokens,
            self.lambda_action,
            self.lambda_video,
            self.flow_steps,
            self.precision,
            mask,
            self.intra_action_attn,
            self.single_pass,
            self.cross_attn_all,
            self.seed,
            self.dataset,
            self.checkpoint,
            self.train_steps,
            self.batch_size,
            self.lr_init,
            self.lr_final,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.weight_decay,
            self.eval_episodes,
            self.max_episode_steps,
            self.execute_horizon,
            self.demo_t_max,
            self.metrics,
        )
    }

    /// The model-shaping subset two configs must agree on before weights
    /// from one can be loaded under the other.
    pub fn ensure_model_compatible(&self, other: &RunConfig) -> Result<()> {
        if self.model() != other.model() {
            return Err(Error::Checkpoint(format!(
                "model configuration mismatch:\n  checkpoint: {:?}\n  requested:  {:?}",
                other.model(),
                self.model()
            )));
        }
        Ok(())
    }
}
