//! Forward pass: pre-norm masked self-attention over the unified sequence,
//! cross-attention to instruction tokens, and the velocity heads.

use std::sync::Arc;

use super::{Bound, ModelConfig, Parameters};
use crate::diffcore::{e, MaskPlane, Record, Scalar, Tensor, Var};
use crate::tokens::{positional_encoding, PosKind, SequenceLayout};

/// Continuous flow times in [0, 1] are stretched by this factor before the
/// sinusoidal featurization so neighbouring times stay distinguishable.
const FLOW_TIME_SCALE: f64 = 1000.0;

pub struct ForwardOutput {
    /// `[p × action_dim]` velocity for the action chunk.
    pub action_velocity: Var,
    /// `[n_f × patch_dim]` velocity for future-frame latents, when present.
    pub video_velocity: Option<Var>,
    /// Final hidden states of the whole sequence, `[total × d]`.
    pub hidden: Var,
}

pub(super) fn linear<E: Scalar>(rec: &mut Record<E>, x: Var, w: Var, b: Var) -> Var {
    let y = rec.matmul(x, w);
    rec.add_row(y, b)
}

/// Embedding lookup plus 1D positional encoding for the instruction.
/// Returns `None` for an empty instruction: cross-attention then reduces to
/// the identity residual.
pub fn encode_instruction<E: Scalar>(
    rec: &mut Record<E>,
    cfg: &ModelConfig,
    params: &Parameters<E>,
    bound: &Bound,
    ids: &[u16],
) -> Option<Var> {
    if ids.is_empty() {
        return None;
    }
    for &id in ids {
        assert!(
            (id as usize) < cfg.vocab_size,
            "instruction id {id} outside vocabulary of {}",
            cfg.vocab_size
        );
    }
    let table = bound.var(params, "instr.embed");
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let emb = rec.gather_rows(table, &idx);
    let mut pe = Vec::with_capacity(ids.len() * cfg.model_dim);
    for i in 0..ids.len() {
        for v in positional_encoding(PosKind::Temporal1d { pos: i as f64 }, cfg.model_dim) {
            pe.push(e::<E>(v));
        }
    }
    let pe = rec.constant(Tensor::new(vec![ids.len(), cfg.model_dim], pe));
    Some(rec.add(emb, pe))
}

/// Sinusoidal featurization of a flow time pushed through the modality's
/// two-layer MLP; yields a `[1 × d]` additive embedding.
pub(super) fn flow_time_embed<E: Scalar>(
    rec: &mut Record<E>,
    cfg: &ModelConfig,
    params: &Parameters<E>,
    bound: &Bound,
    prefix: &str,
    s: f64,
) -> Var {
    let feats: Vec<E> = positional_encoding(
        PosKind::Temporal1d {
            pos: s * FLOW_TIME_SCALE,
        },
        cfg.model_dim,
    )
    .into_iter()
    .map(e::<E>)
    .collect();
    let x = rec.constant(Tensor::new(vec![1, cfg.model_dim], feats));
    let h = linear(
        rec,
        x,
        bound.var(params, &format!("{prefix}.fc1.w")),
        bound.var(params, &format!("{prefix}.fc1.b")),
    );
    let h = rec.gelu(h);
    linear(
        rec,
        h,
        bound.var(params, &format!("{prefix}.fc2.w")),
        bound.var(params, &format!("{prefix}.fc2.b")),
    )
}

/// Multi-head attention of `q_src` against `kv_src` under `mask`.
/// `q_src` and `kv_src` are already layer-normed; projections and the output
/// projection come from the named parameter prefix.
pub(super) fn cross_attention<E: Scalar>(
    rec: &mut Record<E>,
    cfg: &ModelConfig,
    params: &Parameters<E>,
    bound: &Bound,
    layer: usize,
    q_src: Var,
    kv_src: Var,
    mask: &Arc<MaskPlane>,
) -> Var {
    let pre = format!("layer{layer}.cross");
    let q = linear(
        rec,
        q_src,
        bound.var(params, &format!("{pre}.q.w")),
        bound.var(params, &format!("{pre}.q.b")),
    );
    let k = linear(
        rec,
        kv_src,
        bound.var(params, &format!("{pre}.k.w")),
        bound.var(params, &format!("{pre}.k.b")),
    );
    let v = linear(
        rec,
        kv_src,
        bound.var(params, &format!("{pre}.v.w")),
        bound.var(params, &format!("{pre}.v.b")),
    );
    let merged = attention_heads(rec, cfg, q, k, v, mask);
    linear(
        rec,
        merged,
        bound.var(params, &format!("{pre}.out.w")),
        bound.var(params, &format!("{pre}.out.b")),
    )
}

/// Splits q/k/v by head, applies scaled masked attention per head, and
/// re-concatenates the head outputs.
pub(super) fn attention_heads<E: Scalar>(
    rec: &mut Record<E>,
    cfg: &ModelConfig,
    q: Var,
    k: Var,
    v: Var,
    mask: &Arc<MaskPlane>,
) -> Var {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = rec.slice_cols(q, h * dh, dh);
        let kh = rec.slice_cols(k, h * dh, dh);
        let vh = rec.slice_cols(v, h * dh, dh);
        let scores = rec.matmul_nt(qh, kh);
        let scores = rec.scale(scores, scale);
        let probs = rec.masked_softmax(scores, Arc::clone(mask));
        outs.push(rec.matmul(probs, vh));
    }
    rec.concat_cols(&outs)
}

/// Runs the transformer over an assembled sequence.
///
/// `s_action` / `s_video` are the per-modality flow times whose embeddings
/// are added to their blocks before the first layer (`s_video` is ignored
/// when the layout carries no future tokens). Instructions condition the
/// sequence through per-layer cross-attention.
pub fn forward<E: Scalar>(
    rec: &mut Record<E>,
    cfg: &ModelConfig,
    params: &Parameters<E>,
    bound: &Bound,
    seq: Var,
    layout: &SequenceLayout,
    mask: &Arc<MaskPlane>,
    instr: Option<Var>,
    s_action: f64,
    s_video: Option<f64>,
) -> ForwardOutput {
    assert_eq!(rec.shape(seq), &[layout.total(), cfg.model_dim], "sequence shape");
    assert_eq!(mask.rows, layout.total(), "mask shape");
    let [_, _, a_off, f_off] = layout.offsets();

    // Per-modality flow-time conditioning, before layer 1.
    let mut h = {
        let obs_state = rec.slice_rows(seq, 0, a_off);
        let t_a = rec.slice_rows(seq, a_off, layout.n_a);
        let fa = flow_time_embed(rec, cfg, params, bound, "ftime.action", s_action);
        let fa_vec = rec.reshape(fa, vec![cfg.model_dim]);
        let t_a = rec.add_row(t_a, fa_vec);
        let mut parts = vec![obs_state, t_a];
        if layout.n_f > 0 {
            let t_f = rec.slice_rows(seq, f_off, layout.n_f);
            let sv = s_video.expect("video flow time required when future tokens are present");
            let fv = flow_time_embed(rec, cfg, params, bound, "ftime.video", sv);
            let fv_vec = rec.reshape(fv, vec![cfg.model_dim]);
            parts.push(rec.add_row(t_f, fv_vec));
        }
        rec.concat_rows(&parts)
    };

    let cross_mask = instr.map(|iv| {
        let li = rec.shape(iv)[0];
        let rows = if cfg.cross_attn_all {
            layout.total()
        } else {
            layout.n_a + layout.n_f
        };
        Arc::new(MaskPlane::full(rows, li))
    });

    for layer in 0..cfg.layers {
        let pre = format!("layer{layer}");

        // Masked self-attention.
        let normed = {
            let g = bound.var(params, &format!("{pre}.ln1.g"));
            let b = bound.var(params, &format!("{pre}.ln1.b"));
            rec.layer_norm(h, g, b)
        };
        let qkv = linear(
            rec,
            normed,
            bound.var(params, &format!("{pre}.attn.qkv.w")),
            bound.var(params, &format!("{pre}.attn.qkv.b")),
        );
        let d = cfg.model_dim;
        let q = rec.slice_cols(qkv, 0, d);
        let k = rec.slice_cols(qkv, d, d);
        let v = rec.slice_cols(qkv, 2 * d, d);
        let merged = attention_heads(rec, cfg, q, k, v, mask);
        let attn = linear(
            rec,
            merged,
            bound.var(params, &format!("{pre}.attn.out.w")),
            bound.var(params, &format!("{pre}.attn.out.b")),
        );
        h = rec.add(h, attn);

        // Cross-attention to the instruction.
        if let (Some(iv), Some(cmask)) = (instr, cross_mask.as_ref()) {
            let normed = {
                let g = bound.var(params, &format!("{pre}.ln2.g"));
                let b = bound.var(params, &format!("{pre}.ln2.b"));
                rec.layer_norm(h, g, b)
            };
            if cfg.cross_attn_all {
                let out = cross_attention(rec, cfg, params, bound, layer, normed, iv, cmask);
                h = rec.add(h, out);
            } else {
                // Only action and future tokens read the instruction.
                let tail_len = layout.n_a + layout.n_f;
                let tail = rec.slice_rows(normed, a_off, tail_len);
                let out = cross_attention(rec, cfg, params, bound, layer, tail, iv, cmask);
                let head_rows = rec.slice_rows(h, 0, a_off);
                let tail_rows = rec.slice_rows(h, a_off, tail_len);
                let tail_rows = rec.add(tail_rows, out);
                h = rec.concat_rows(&[head_rows, tail_rows]);
            }
        }

        // MLP.
        let normed = {
            let g = bound.var(params, &format!("{pre}.ln3.g"));
            let b = bound.var(params, &format!("{pre}.ln3.b"));
            rec.layer_norm(h, g, b)
        };
        let up = linear(
            rec,
            normed,
            bound.var(params, &format!("{pre}.mlp.fc1.w")),
            bound.var(params, &format!("{pre}.mlp.fc1.b")),
        );
        let act = rec.gelu(up);
        let down = linear(
            rec,
            act,
            bound.var(params, &format!("{pre}.mlp.fc2.w")),
            bound.var(params, &format!("{pre}.mlp.fc2.b")),
        );
        h = rec.add(h, down);
    }

    let t_a = rec.slice_rows(h, a_off, layout.n_a);
    let action_velocity = linear(
        rec,
        t_a,
        bound.var(params, "head.action.w"),
        bound.var(params, "head.action.b"),
    );
    let video_velocity = (layout.n_f > 0).then(|| {
        let t_f = rec.slice_rows(h, f_off, layout.n_f);
        linear(
            rec,
            t_f,
            bound.var(params, "head.video.w"),
            bound.var(params, "head.video.b"),
        )
    });

    ForwardOutput {
        action_velocity,
        video_velocity,
        hidden: h,
    }
}
