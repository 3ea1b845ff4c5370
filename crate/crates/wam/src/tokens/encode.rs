//! Positional encodings, training-window extraction, action/state
//! normalization, and assembly of the embedded token sequence.

use std::sync::Arc;

use super::patch::{compose_views, latent_matrix, patchify};
use super::{build_block_mask, future_frame_indices, BlockMask, MaskMode, SequenceLayout};
use crate::diffcore::{e, Record, Scalar, Tensor, Var};
use crate::toyworld::{Action, Trajectory, ACTION_DIM, STATE_DIM, V_MAX};

/// Positional-encoding kind plus the position it encodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosKind {
    /// 2D sinusoid over the image grid: half the channels interleave
    /// sin/cos of the row, half of the column.
    Visual2d { row: usize, col: usize },
    /// 1D sinusoid over a (possibly fractional) temporal position.
    Temporal1d { pos: f64 },
}

fn sincos_interleaved(pos: f64, dim: usize, out: &mut Vec<f64>) {
    let pairs = dim / 2;
    for i in 0..pairs {
        let omega = 1.0 / 10_000f64.powf(i as f64 / pairs as f64);
        out.push((pos * omega).sin());
        out.push((pos * omega).cos());
    }
}

/// Fixed sinusoidal positional encoding. Visual encodings need `dim`
/// divisible by 4, temporal by 2. Position 0 yields the alternating
/// `[0, 1, 0, 1, ...]` pattern.
pub fn positional_encoding(kind: PosKind, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    match kind {
        PosKind::Visual2d { row, col } => {
            assert_eq!(dim % 4, 0, "visual encoding needs dim divisible by 4");
            sincos_interleaved(row as f64, dim / 2, &mut out);
            sincos_interleaved(col as f64, dim / 2, &mut out);
        }
        PosKind::Temporal1d { pos } => {
            assert_eq!(dim % 2, 0, "temporal encoding needs dim divisible by 2");
            sincos_interleaved(pos, dim, &mut out);
        }
    }
    out
}

/// Maps a raw environment action into model space: velocities rescaled by
/// `1/V_MAX` and the grip command spread over `[-1, 1]`, so every action
/// channel matches the unit scale of the flow-matching noise.
pub fn normalize_action(a: [f32; ACTION_DIM]) -> [f64; ACTION_DIM] {
    [
        f64::from(a[0]) / V_MAX,
        f64::from(a[1]) / V_MAX,
        2.0 * f64::from(a[2]) - 1.0,
    ]
}

/// Inverse of [`normalize_action`], producing an executable [`Action`].
/// Out-of-range velocities are left to the environment's own clipping.
pub fn denormalize_action(a: [f64; ACTION_DIM]) -> Action {
    Action {
        velocity: [a[0] * V_MAX, a[1] * V_MAX],
        grip: (a[2] + 1.0) * 0.5,
    }
}

/// Maps the proprioceptive feature vector onto `[-1, 1]`.
pub fn normalize_state(s: [f32; STATE_DIM]) -> [f64; STATE_DIM] {
    let mut out = [0.0; STATE_DIM];
    for (o, &v) in out.iter_mut().zip(s.iter()) {
        *o = 2.0 * f64::from(v) - 1.0;
    }
    out
}

/// One training window: the composed current frame as patch latents, the
/// normalized state, the normalized action chunk, and the stride-sampled
/// future-frame latents (empty when the stride is zero).
#[derive(Debug, Clone)]
pub struct Window {
    pub obs: Tensor<f64>,
    pub state: Tensor<f64>,
    pub actions: Tensor<f64>,
    /// `[k * frame_tokens × patch_dim]`, rows grouped frame-major.
    pub future: Tensor<f64>,
    pub instruction: Vec<u16>,
}

/// Cuts the window starting at `t` out of a trajectory. Panics if the
/// trajectory is too short for the requested horizon — callers select `t`
/// via [`Trajectory::valid_window_starts`].
pub fn extract_window(traj: &Trajectory, t: usize, p: usize, delta: usize, patch: usize) -> Window {
    let (future_offsets, k) = future_frame_indices(p, delta);
    assert!(
        t + (p - 1).max(k * delta) < traj.len(),
        "window start {t} out of range for trajectory of length {}",
        traj.len()
    );

    let compose = |idx: usize| {
        let [l, f, r] = &traj.frames[idx];
        compose_views(l, f, r)
    };
    let obs = latent_matrix::<f64>(&patchify(&compose(t), patch, 0));

    let state = Tensor::new(
        vec![1, STATE_DIM],
        normalize_state(traj.states[t]).to_vec(),
    );

    let mut act = Vec::with_capacity(p * ACTION_DIM);
    for i in 0..p {
        act.extend_from_slice(&normalize_action(traj.actions[t + i]));
    }
    let actions = Tensor::new(vec![p, ACTION_DIM], act);

    let future = if k == 0 {
        Tensor::zeros(vec![0, PatchDim::of(patch)])
    } else {
        let mut all = Vec::new();
        for (fi, &off) in future_offsets.iter().enumerate() {
            all.extend(patchify(&compose(t + off), patch, fi + 1));
        }
        latent_matrix::<f64>(&all)
    };

    Window {
        obs,
        state,
        actions,
        future,
        instruction: traj.instruction.clone(),
    }
}

struct PatchDim;
impl PatchDim {
    fn of(patch: usize) -> usize {
        patch * patch * 3
    }
}

/// Token projection parameters, already entered into a record.
#[derive(Debug, Clone, Copy)]
pub struct Projectors {
    pub patch_w: Var,
    pub patch_b: Var,
    pub state_w: Var,
    pub state_b: Var,
    pub action_w: Var,
    pub action_b: Var,
    /// Learned embedding per future-frame index, `[K × d]`; absent when the
    /// configuration has no video branch.
    pub frame_embed: Option<Var>,
}

/// Everything assembly needs to know about the sequence geometry.
#[derive(Debug, Clone, Copy)]
pub struct AssembleCfg {
    pub model_dim: usize,
    pub patch: usize,
    /// Composite-frame patch grid extents.
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub p: usize,
    pub k: usize,
    pub state_tokens: usize,
    pub mask_mode: MaskMode,
    pub intra_action: bool,
}

impl AssembleCfg {
    pub fn frame_tokens(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn layout(&self, with_future: bool) -> SequenceLayout {
        SequenceLayout::new(
            self.frame_tokens(),
            self.state_tokens,
            self.p,
            if with_future { self.k } else { 0 },
        )
    }
}

fn linear<E: Scalar>(rec: &mut Record<E>, x: Var, w: Var, b: Var) -> Var {
    let y = rec.matmul(x, w);
    rec.add_row(y, b)
}

fn visual_pe<E: Scalar>(cfg: &AssembleCfg, repeats: usize) -> Tensor<E> {
    let d = cfg.model_dim;
    let per_frame = cfg.frame_tokens();
    let mut data = Vec::with_capacity(repeats * per_frame * d);
    for _ in 0..repeats {
        for r in 0..cfg.grid_rows {
            for c in 0..cfg.grid_cols {
                for v in positional_encoding(PosKind::Visual2d { row: r, col: c }, d) {
                    data.push(e::<E>(v));
                }
            }
        }
    }
    Tensor::new(vec![repeats * per_frame, d], data)
}

fn temporal_pe<E: Scalar>(start: usize, count: usize, d: usize) -> Tensor<E> {
    let mut data = Vec::with_capacity(count * d);
    for i in 0..count {
        for v in positional_encoding(
            PosKind::Temporal1d {
                pos: (start + i) as f64,
            },
            d,
        ) {
            data.push(e::<E>(v));
        }
    }
    Tensor::new(vec![count, d], data)
}

/// Builds the embedded unified sequence `[T_o; T_s; T_a; T_f]` from
/// (possibly noised) window tensors: projects each modality into the model
/// dimension, adds its positional encoding (plus the learned frame-index
/// embedding on future frames), and returns the sequence with its layout
/// and attention mask. `future = None` assembles the action-only prefix.
pub fn assemble_sequence<E: Scalar>(
    rec: &mut Record<E>,
    cfg: &AssembleCfg,
    proj: &Projectors,
    obs: &Tensor<E>,
    state: &Tensor<E>,
    actions: &Tensor<E>,
    future: Option<&Tensor<E>>,
) -> (Var, SequenceLayout, Arc<BlockMask>) {
    let layout = cfg.layout(future.is_some());
    if future.is_some() {
        assert!(cfg.k > 0, "assemble_sequence: future tokens need k >= 1");
    }
    assert_eq!(obs.rows(), cfg.frame_tokens(), "obs latent count");
    assert_eq!(actions.rows(), cfg.p, "action row count");

    let obs_v = rec.constant(obs.clone());
    let mut t_o = linear(rec, obs_v, proj.patch_w, proj.patch_b);
    let pe_o = rec.constant(visual_pe::<E>(cfg, 1));
    t_o = rec.add(t_o, pe_o);

    let state_v = rec.constant(state.clone());
    let mut t_s = linear(rec, state_v, proj.state_w, proj.state_b);
    if cfg.state_tokens > 1 {
        t_s = rec.reshape(t_s, vec![cfg.state_tokens, cfg.model_dim]);
    }
    let pe_s = rec.constant(temporal_pe::<E>(0, cfg.state_tokens, cfg.model_dim));
    t_s = rec.add(t_s, pe_s);

    let act_v = rec.constant(actions.clone());
    let mut t_a = linear(rec, act_v, proj.action_w, proj.action_b);
    let pe_a = rec.constant(temporal_pe::<E>(0, cfg.p, cfg.model_dim));
    t_a = rec.add(t_a, pe_a);

    let mut blocks = vec![t_o, t_s, t_a];
    if let Some(fut) = future {
        blocks.push(embed_future(rec, cfg, proj, fut));
    }

    let seq = rec.concat_rows(&blocks);
    let mask = Arc::new(build_block_mask(&layout, cfg.mask_mode, cfg.intra_action));
    (seq, layout, mask)
}

/// Embeds future-frame latents exactly as [`assemble_sequence`] does:
/// shared patch projection, tiled visual encodings, and the learned
/// frame-index embedding. Exposed separately so cached decoding extends a
/// prefix with bit-identical token embeddings.
pub fn embed_future<E: Scalar>(
    rec: &mut Record<E>,
    cfg: &AssembleCfg,
    proj: &Projectors,
    future: &Tensor<E>,
) -> Var {
    assert!(cfg.k > 0, "embed_future: configuration has no video branch");
    assert_eq!(future.rows(), cfg.k * cfg.frame_tokens(), "future latent count");
    let fut_v = rec.constant(future.clone());
    let mut t_f = linear(rec, fut_v, proj.patch_w, proj.patch_b);
    let pe_f = rec.constant(visual_pe::<E>(cfg, cfg.k));
    t_f = rec.add(t_f, pe_f);
    let embed = proj
        .frame_embed
        .expect("frame_embed parameters required when assembling future tokens");
    let ids: Vec<usize> = (0..cfg.k)
        .flat_map(|f| std::iter::repeat(f).take(cfg.frame_tokens()))
        .collect();
    let fe = rec.gather_rows(embed, &ids);
    rec.add(t_f, fe)
}
