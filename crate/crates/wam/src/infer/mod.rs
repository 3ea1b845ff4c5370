//! Deployment paths: action-only flow decoding, optional joint and
//! cache-based video decoding, closed-loop rollouts, and the latency bench.
//!
//! Action-only decoding integrates the learned action velocity field with
//! fixed-step explicit Euler over the `[T_o; T_s; T_a]` context and never
//! instantiates a single future-frame token. The joint path denoises action
//! and video blocks together on one step grid; under the causal mask its
//! action output matches the action-only path exactly because the noise
//! draw order is pinned (action noise before video noise).

mod bench;
mod rollout;

pub use bench::{bench_latency, BenchReport};
pub use rollout::{expert_chunk_policy, model_policy, rollout, RolloutResult};

use crate::diffcore::{Record, Rng, Scalar, Tensor};
use crate::model::{
    encode_instruction, extend_with_cache, forward, kv_cache_forward, KvCache, ModelConfig,
    Parameters,
};
use crate::tokens::{
    assemble_sequence, denormalize_action, latent_matrix, normalize_state, patchify, unpatchify,
    PatchLatent,
};
use crate::toyworld::{render_view, Action, Image, View, WorldState, ACTION_DIM, STATE_DIM};
use crate::{Error, Result};

/// What the policy sees at one control step: three camera views plus the
/// proprioceptive reading.
#[derive(Debug, Clone)]
pub struct Observation {
    pub views: [Image; 3],
    pub state: [f32; STATE_DIM],
}

/// Renders the world through the three cameras at the configured resolution.
pub fn observe(state: &WorldState, cfg: &ModelConfig) -> Observation {
    Observation {
        views: [
            render_view(state, View::Left, cfg.img_h, cfg.img_w),
            render_view(state, View::Front, cfg.img_h, cfg.img_w),
            render_view(state, View::Right, cfg.img_h, cfg.img_w),
        ],
        state: crate::toyworld::state_vec(state),
    }
}

fn context_tensors<E: Scalar>(cfg: &ModelConfig, obs: &Observation) -> (Tensor<E>, Tensor<E>) {
    let composite = crate::tokens::compose_views(&obs.views[0], &obs.views[1], &obs.views[2]);
    let latents = latent_matrix::<f64>(&patchify(&composite, cfg.patch, 0)).cast::<E>();
    let state = Tensor::new(vec![1, STATE_DIM], normalize_state(obs.state).to_vec()).cast::<E>();
    (latents, state)
}

/// Fixed-step explicit Euler from s = 0 to s = 1:
/// `x ← x + (1/N)·field(x, j/N)` for `j = 0..N`.
pub fn euler_integrate<E: Scalar, F>(x0: Tensor<E>, n_steps: usize, mut field: F) -> Result<Tensor<E>>
where
    F: FnMut(&Tensor<E>, f64) -> Result<Tensor<E>>,
{
    assert!(n_steps >= 1, "euler_integrate: need at least one step");
    let h = crate::diffcore::e::<E>(1.0 / n_steps as f64);
    let mut x = x0;
    for j in 0..n_steps {
        let s = j as f64 / n_steps as f64;
        let v = field(&x, s)?;
        assert_eq!(v.shape(), x.shape(), "field changed shape");
        for (xi, &vi) in x.data_mut().iter_mut().zip(v.data()) {
            *xi = *xi + h * vi;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite {
                op: "euler_integrate",
                node: j,
            });
        }
    }
    Ok(x)
}

/// A decoded action chunk plus the token accounting used by the latency
/// and isolation checks.
#[derive(Debug, Clone)]
pub struct DecodeOutput<E> {
    /// Model-space chunk `[p × action_dim]` after integration to s = 1.
    pub chunk_norm: Tensor<E>,
    /// Executable actions, denormalized.
    pub actions: Vec<Action>,
    /// Context tokens processed per velocity evaluation (`n_o + n_s + n_a`).
    pub context_tokens: usize,
    /// Future-frame tokens instantiated during decoding (0 on the
    /// action-only path, by construction).
    pub video_tokens: usize,
}

fn chunk_to_actions<E: Scalar>(chunk: &Tensor<E>) -> Vec<Action> {
    chunk
        .data()
        .chunks(ACTION_DIM)
        .map(|row| {
            denormalize_action([
                row[0].to_f64().unwrap(),
                row[1].to_f64().unwrap(),
                row[2].to_f64().unwrap(),
            ])
        })
        .collect()
}

/// Action-only decoding: draw `a^(0) ~ N(0, I)` and integrate the action
/// velocity field conditioned on (instruction, state, observation). No
/// future-video tokens exist anywhere on this path.
pub fn decode_actions<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    obs: &Observation,
    instr_ids: &[u16],
    rng: &mut Rng,
    n_steps: usize,
) -> Result<DecodeOutput<E>> {
    let (obs_latents, state) = context_tensors::<E>(cfg, obs);
    let a0: Tensor<E> = rng.normal_tensor(vec![cfg.chunk_len, cfg.action_dim]);
    let layout = cfg.layout(false);

    let chunk = euler_integrate(a0, n_steps, |a, s| {
        let mut rec: Record<E> = Record::new();
        let bound = params.bind_frozen(&mut rec);
        let proj = bound.projectors(params);
        let (seq, layout, mask) =
            assemble_sequence(&mut rec, &cfg.assemble_cfg(), &proj, &obs_latents, &state, a, None);
        debug_assert_eq!(layout.n_f, 0);
        let instr = encode_instruction(&mut rec, cfg, params, &bound, instr_ids);
        let out = forward(&mut rec, cfg, params, &bound, seq, &layout, &mask, instr, s, None);
        if let Some(err) = rec.fault() {
            return Err(err);
        }
        Ok(rec.to_tensor(out.action_velocity))
    })?;

    let actions = chunk_to_actions(&chunk);
    Ok(DecodeOutput {
        chunk_norm: chunk,
        actions,
        context_tokens: layout.prefix_len(),
        video_tokens: 0,
    })
}

/// Decoded future frames: the final latents and their clamped images.
#[derive(Debug, Clone)]
pub struct VideoDecode<E> {
    /// `[n_f × patch_dim]` latents at s = 1.
    pub latents: Tensor<E>,
    /// One composite `img_h × 3·img_w` frame per predicted future step.
    pub frames: Vec<Image>,
}

/// Converts final video latents into composite frames, mapping `[-1, 1]`
/// back to pixel range and clamping.
pub fn latents_to_frames<E: Scalar>(cfg: &ModelConfig, latents: &Tensor<E>) -> Vec<Image> {
    let per_frame = cfg.frame_tokens();
    let dim = cfg.patch_dim();
    assert_eq!(latents.cols(), dim);
    assert_eq!(latents.rows() % per_frame.max(1), 0);
    let grid_cols = cfg.grid_cols();
    let mut frames = Vec::new();
    for chunk in latents.data().chunks(per_frame * dim) {
        let patches: Vec<PatchLatent> = chunk
            .chunks(dim)
            .enumerate()
            .map(|(i, vals)| PatchLatent {
                values: vals.iter().map(|v| v.to_f64().unwrap()).collect(),
                row: i / grid_cols,
                col: i % grid_cols,
                frame_index: 0,
            })
            .collect();
        let mut img = unpatchify(&patches, cfg.img_h, 3 * cfg.img_w, cfg.patch);
        for v in img.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(img);
    }
    frames
}

/// Joint decoding: action and video blocks both start from noise and are
/// Euler-integrated together under the mask. The action noise is drawn
/// before the video noise, so with a causal mask the returned chunk is
/// identical to [`decode_actions`] from the same rng state.
pub fn decode_joint<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    obs: &Observation,
    instr_ids: &[u16],
    rng: &mut Rng,
    n_steps: usize,
) -> Result<(DecodeOutput<E>, VideoDecode<E>)> {
    if cfg.k() == 0 {
        return Err(Error::NoVideoBranch(
            "joint decoding needs a stride of at least 1".into(),
        ));
    }
    let (obs_latents, state) = context_tensors::<E>(cfg, obs);
    let layout = cfg.layout(true);
    let a0: Tensor<E> = rng.normal_tensor(vec![cfg.chunk_len, cfg.action_dim]);
    let z0: Tensor<E> = rng.normal_tensor(vec![layout.n_f, cfg.patch_dim()]);

    let h = crate::diffcore::e::<E>(1.0 / n_steps as f64);
    let mut a = a0;
    let mut z = z0;
    for j in 0..n_steps {
        let s = j as f64 / n_steps as f64;
        let mut rec: Record<E> = Record::new();
        let bound = params.bind_frozen(&mut rec);
        let proj = bound.projectors(params);
        let (seq, layout, mask) = assemble_sequence(
            &mut rec,
            &cfg.assemble_cfg(),
            &proj,
            &obs_latents,
            &state,
            &a,
            Some(&z),
        );
        let instr = encode_instruction(&mut rec, cfg, params, &bound, instr_ids);
        let out = forward(
            &mut rec, cfg, params, &bound, seq, &layout, &mask, instr, s, Some(s),
        );
        if let Some(err) = rec.fault() {
            return Err(err);
        }
        let va = rec.to_tensor(out.action_velocity);
        let vz = rec.to_tensor(out.video_velocity.expect("video head"));
        for (xi, &vi) in a.data_mut().iter_mut().zip(va.data()) {
            *xi = *xi + h * vi;
        }
        for (xi, &vi) in z.data_mut().iter_mut().zip(vz.data()) {
            *xi = *xi + h * vi;
        }
        if !a.is_finite() || !z.is_finite() {
            return Err(Error::NonFinite {
                op: "decode_joint",
                node: j,
            });
        }
    }

    let actions = chunk_to_actions(&a);
    let frames = latents_to_frames(cfg, &z);
    Ok((
        DecodeOutput {
            chunk_norm: a,
            actions,
            context_tokens: layout.prefix_len(),
            video_tokens: layout.n_f,
        },
        VideoDecode { latents: z, frames },
    ))
}

/// Builds the reusable prefix cache over (observation, state, finished
/// action chunk at flow time 1).
pub fn cache_for_chunk<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    obs: &Observation,
    instr_ids: &[u16],
    chunk_norm: &Tensor<E>,
) -> Result<KvCache<E>> {
    let (obs_latents, state) = context_tensors::<E>(cfg, obs);
    kv_cache_forward(cfg, params, &obs_latents, &state, chunk_norm, instr_ids, 1.0)
}

/// Video decoding that reuses the prefix KV cache: every Euler step runs
/// attention for the video tokens only, never recomputing prefix keys.
pub fn decode_video_from_cache<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    cache: &mut KvCache<E>,
    rng: &mut Rng,
    n_steps: usize,
) -> Result<VideoDecode<E>> {
    if cfg.k() == 0 {
        return Err(Error::NoVideoBranch(
            "configuration has no video branch (stride 0)".into(),
        ));
    }
    let n_f = cfg.k() * cfg.frame_tokens();
    let z0: Tensor<E> = rng.normal_tensor(vec![n_f, cfg.patch_dim()]);
    let z = euler_integrate(z0, n_steps, |z, s| {
        extend_with_cache(cfg, params, cache, z, s)
    })?;
    let frames = latents_to_frames(cfg, &z);
    Ok(VideoDecode { latents: z, frames })
}

/// Cache-free oracle for [`decode_video_from_cache`]: full forward passes
/// over `[T_o; T_s; T_a; T_f]` with identical conditioning (finished chunk
/// at flow time 1) and the same noise stream.
pub fn decode_video_uncached<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    obs: &Observation,
    instr_ids: &[u16],
    chunk_norm: &Tensor<E>,
    rng: &mut Rng,
    n_steps: usize,
) -> Result<VideoDecode<E>> {
    if cfg.k() == 0 {
        return Err(Error::NoVideoBranch(
            "configuration has no video branch (stride 0)".into(),
        ));
    }
    let (obs_latents, state) = context_tensors::<E>(cfg, obs);
    let n_f = cfg.k() * cfg.frame_tokens();
    let z0: Tensor<E> = rng.normal_tensor(vec![n_f, cfg.patch_dim()]);
    let z = euler_integrate(z0, n_steps, |z, s| {
        let mut rec: Record<E> = Record::new();
        let bound = params.bind_frozen(&mut rec);
        let proj = bound.projectors(params);
        let (seq, layout, mask) = assemble_sequence(
            &mut rec,
            &cfg.assemble_cfg(),
            &proj,
            &obs_latents,
            &state,
            chunk_norm,
            Some(z),
        );
        let instr = encode_instruction(&mut rec, cfg, params, &bound, instr_ids);
        let out = forward(
            &mut rec, cfg, params, &bound, seq, &layout, &mask, instr, 1.0, Some(s),
        );
        if let Some(err) = rec.fault() {
            return Err(err);
        }
        Ok(rec.to_tensor(out.video_velocity.expect("video head")))
    })?;
    let frames = latents_to_frames(cfg, &z);
    Ok(VideoDecode { latents: z, frames })
}
