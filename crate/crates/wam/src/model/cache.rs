//! KV cache over the `[T_o; T_s; T_a]` prefix.
//!
//! Because the blockwise causal mask forbids any prefix token from attending
//! to future-frame tokens, prefix hidden states — and hence their per-layer
//! keys and values — are invariant to whatever `T_f` tokens are appended.
//! One prefix forward therefore serves every video-denoising step: the
//! extension runs attention of `T_f` queries against cached prefix keys plus
//! the fresh `T_f` keys only, and reproduces the full forward bit for bit.

use std::sync::Arc;

use super::forward::{attention_heads, flow_time_embed, linear};
use super::{ModelConfig, Parameters};
use crate::diffcore::{MaskPlane, Record, Scalar, Tensor};
use crate::tokens::{assemble_sequence, embed_future, MaskMode};
use crate::{Error, Result};

/// Geometry stamp used to reject a cache built under a different model.
#[derive(Debug, Clone, PartialEq)]
struct CacheSig {
    model_dim: usize,
    heads: usize,
    layers: usize,
    patch_dim: usize,
    frame_tokens: usize,
    k: usize,
    prefix_len: usize,
    instr_len: usize,
    mask_mode: MaskMode,
}

impl CacheSig {
    fn of(cfg: &ModelConfig, instr_len: usize) -> Self {
        CacheSig {
            model_dim: cfg.model_dim,
            heads: cfg.heads,
            layers: cfg.layers,
            patch_dim: cfg.patch_dim(),
            frame_tokens: cfg.frame_tokens(),
            k: cfg.k(),
            prefix_len: cfg.layout(false).total(),
            instr_len,
            mask_mode: cfg.mask_mode,
        }
    }
}

/// Per-layer keys/values of the frozen prefix plus the per-layer
/// instruction keys/values for cross-attention.
pub struct KvCache<E> {
    layer_k: Vec<Tensor<E>>,
    layer_v: Vec<Tensor<E>>,
    cross_k: Vec<Tensor<E>>,
    cross_v: Vec<Tensor<E>>,
    sig: CacheSig,
    /// How many times the prefix keys were computed (stays at 1 no matter
    /// how many extensions run).
    pub prefix_builds: usize,
    /// How many non-empty extensions have used this cache.
    pub extend_calls: usize,
}

impl<E: Scalar> KvCache<E> {
    pub fn prefix_len(&self) -> usize {
        self.sig.prefix_len
    }
}

/// Runs the prefix `[T_o; T_s; T_a]` through the model once, capturing each
/// layer's keys/values. `actions` carries the finalized (denoised) chunk and
/// `s_action` the flow time it is embedded at (1.0 for finished actions).
#[allow(clippy::too_many_arguments)]
pub fn kv_cache_forward<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    obs: &Tensor<E>,
    state: &Tensor<E>,
    actions: &Tensor<E>,
    instr_ids: &[u16],
    s_action: f64,
) -> Result<KvCache<E>> {
    if cfg.k() == 0 {
        return Err(Error::NoVideoBranch(
            "stride is 0, so there are no future tokens to cache for".into(),
        ));
    }
    let mut rec: Record<E> = Record::new();
    let bound = params.bind_frozen(&mut rec);
    let proj = bound.projectors(params);
    let acfg = cfg.assemble_cfg();
    let (seq, layout, mask) =
        assemble_sequence(&mut rec, &acfg, &proj, obs, state, actions, None);
    let instr = super::encode_instruction(&mut rec, cfg, params, &bound, instr_ids);

    let [_, _, a_off, _] = layout.offsets();
    let d = cfg.model_dim;

    // Flow-time conditioning on the action block, as in the full forward.
    let mut h = {
        let head_rows = rec.slice_rows(seq, 0, a_off);
        let t_a = rec.slice_rows(seq, a_off, layout.n_a);
        let fa = flow_time_embed(&mut rec, cfg, params, &bound, "ftime.action", s_action);
        let fa_vec = rec.reshape(fa, vec![d]);
        let t_a = rec.add_row(t_a, fa_vec);
        rec.concat_rows(&[head_rows, t_a])
    };

    let cross_mask = instr.map(|iv| {
        let li = rec.shape(iv)[0];
        let rows = if cfg.cross_attn_all {
            layout.total()
        } else {
            layout.n_a
        };
        Arc::new(MaskPlane::full(rows, li))
    });

    let mut layer_k = Vec::with_capacity(cfg.layers);
    let mut layer_v = Vec::with_capacity(cfg.layers);
    let mut cross_k = Vec::new();
    let mut cross_v = Vec::new();

    for layer in 0..cfg.layers {
        let pre = format!("layer{layer}");
        let normed = {
            let g = bound.var(params, &format!("{pre}.ln1.g"));
            let b = bound.var(params, &format!("{pre}.ln1.b"));
            rec.layer_norm(h, g, b)
        };
        let qkv = linear(
            &mut rec,
            normed,
            bound.var(params, &format!("{pre}.attn.qkv.w")),
            bound.var(params, &format!("{pre}.attn.qkv.b")),
        );
        let q = rec.slice_cols(qkv, 0, d);
        let k = rec.slice_cols(qkv, d, d);
        let v = rec.slice_cols(qkv, 2 * d, d);
        layer_k.push(rec.to_tensor(k));
        layer_v.push(rec.to_tensor(v));

        let merged = attention_heads(&mut rec, cfg, q, k, v, &mask);
        let attn = linear(
            &mut rec,
            merged,
            bound.var(params, &format!("{pre}.attn.out.w")),
            bound.var(params, &format!("{pre}.attn.out.b")),
        );
        h = rec.add(h, attn);

        if let (Some(iv), Some(cmask)) = (instr, cross_mask.as_ref()) {
            let ik = linear(
                &mut rec,
                iv,
                bound.var(params, &format!("{pre}.cross.k.w")),
                bound.var(params, &format!("{pre}.cross.k.b")),
            );
            let ivv = linear(
                &mut rec,
                iv,
                bound.var(params, &format!("{pre}.cross.v.w")),
                bound.var(params, &format!("{pre}.cross.v.b")),
            );
            cross_k.push(rec.to_tensor(ik));
            cross_v.push(rec.to_tensor(ivv));

            let normed = {
                let g = bound.var(params, &format!("{pre}.ln2.g"));
                let b = bound.var(params, &format!("{pre}.ln2.b"));
                rec.layer_norm(h, g, b)
            };
            let (q_rows, q_off) = if cfg.cross_attn_all {
                (layout.total(), 0)
            } else {
                (layout.n_a, a_off)
            };
            let q_src = rec.slice_rows(normed, q_off, q_rows);
            let q = linear(
                &mut rec,
                q_src,
                bound.var(params, &format!("{pre}.cross.q.w")),
                bound.var(params, &format!("{pre}.cross.q.b")),
            );
            let merged = attention_heads(&mut rec, cfg, q, ik, ivv, cmask);
            let out = linear(
                &mut rec,
                merged,
                bound.var(params, &format!("{pre}.cross.out.w")),
                bound.var(params, &format!("{pre}.cross.out.b")),
            );
            if cfg.cross_attn_all {
                h = rec.add(h, out);
            } else {
                let head_rows = rec.slice_rows(h, 0, a_off);
                let tail = rec.slice_rows(h, a_off, layout.n_a);
                let tail = rec.add(tail, out);
                h = rec.concat_rows(&[head_rows, tail]);
            }
        }

        let normed = {
            let g = bound.var(params, &format!("{pre}.ln3.g"));
            let b = bound.var(params, &format!("{pre}.ln3.b"));
            rec.layer_norm(h, g, b)
        };
        let up = linear(
            &mut rec,
            normed,
            bound.var(params, &format!("{pre}.mlp.fc1.w")),
            bound.var(params, &format!("{pre}.mlp.fc1.b")),
        );
        let act = rec.gelu(up);
        let down = linear(
            &mut rec,
            act,
            bound.var(params, &format!("{pre}.mlp.fc2.w")),
            bound.var(params, &format!("{pre}.mlp.fc2.b")),
        );
        h = rec.add(h, down);
    }

    if let Some(err) = rec.fault() {
        return Err(err);
    }

    Ok(KvCache {
        layer_k,
        layer_v,
        cross_k,
        cross_v,
        sig: CacheSig::of(cfg, instr_ids.len()),
        prefix_builds: 1,
        extend_calls: 0,
    })
}

/// Attends freshly embedded `T_f` tokens against the cached prefix plus
/// themselves and returns their video-velocity output `[n_f × patch_dim]`.
/// An empty extension returns an empty tensor and leaves the cache untouched.
pub fn extend_with_cache<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    cache: &mut KvCache<E>,
    future: &Tensor<E>,
    s_video: f64,
) -> Result<Tensor<E>> {
    if future.rows() == 0 {
        return Ok(Tensor::zeros(vec![0, cfg.patch_dim()]));
    }
    let expect = CacheSig::of(cfg, cache.sig.instr_len);
    if cache.sig != expect {
        return Err(Error::Config(format!(
            "kv cache geometry {:?} does not match configuration {:?}",
            cache.sig, expect
        )));
    }
    let n_f = cfg.k() * cfg.frame_tokens();
    assert_eq!(future.rows(), n_f, "future latent count");
    cache.extend_calls += 1;

    let mut rec: Record<E> = Record::new();
    let bound = params.bind_frozen(&mut rec);
    let proj = bound.projectors(params);
    let acfg = cfg.assemble_cfg();
    let d = cfg.model_dim;
    let prefix = cache.sig.prefix_len;

    let mut h = {
        let t_f = embed_future(&mut rec, &acfg, &proj, future);
        let fv = flow_time_embed(&mut rec, cfg, params, &bound, "ftime.video", s_video);
        let fv_vec = rec.reshape(fv, vec![d]);
        rec.add_row(t_f, fv_vec)
    };

    // Future tokens attend to everything, so the extension mask is fully
    // allowed over [prefix | T_f].
    let self_mask = Arc::new(MaskPlane::full(n_f, prefix + n_f));
    let cross_mask = Arc::new(MaskPlane::full(n_f, cache.sig.instr_len.max(1)));

    for layer in 0..cfg.layers {
        let pre = format!("layer{layer}");
        let normed = {
            let g = bound.var(params, &format!("{pre}.ln1.g"));
            let b = bound.var(params, &format!("{pre}.ln1.b"));
            rec.layer_norm(h, g, b)
        };
        let qkv = linear(
            &mut rec,
            normed,
            bound.var(params, &format!("{pre}.attn.qkv.w")),
            bound.var(params, &format!("{pre}.attn.qkv.b")),
        );
        let q = rec.slice_cols(qkv, 0, d);
        let k_new = rec.slice_cols(qkv, d, d);
        let v_new = rec.slice_cols(qkv, 2 * d, d);
        let k_prefix = rec.constant(cache.layer_k[layer].clone());
        let v_prefix = rec.constant(cache.layer_v[layer].clone());
        let k_all = rec.concat_rows(&[k_prefix, k_new]);
        let v_all = rec.concat_rows(&[v_prefix, v_new]);
        let merged = attention_heads(&mut rec, cfg, q, k_all, v_all, &self_mask);
        let attn = linear(
            &mut rec,
            merged,
            bound.var(params, &format!("{pre}.attn.out.w")),
            bound.var(params, &format!("{pre}.attn.out.b")),
        );
        h = rec.add(h, attn);

        if !cache.cross_k.is_empty() {
            let normed = {
                let g = bound.var(params, &format!("{pre}.ln2.g"));
                let b = bound.var(params, &format!("{pre}.ln2.b"));
                rec.layer_norm(h, g, b)
            };
            let q = linear(
                &mut rec,
                normed,
                bound.var(params, &format!("{pre}.cross.q.w")),
                bound.var(params, &format!("{pre}.cross.q.b")),
            );
            let ik = rec.constant(cache.cross_k[layer].clone());
            let iv = rec.constant(cache.cross_v[layer].clone());
            let merged = attention_heads(&mut rec, cfg, q, ik, iv, &cross_mask);
            let out = linear(
                &mut rec,
                merged,
                bound.var(params, &format!("{pre}.cross.out.w")),
                bound.var(params, &format!("{pre}.cross.out.b")),
            );
            h = rec.add(h, out);
        }

        let normed = {
            let g = bound.var(params, &format!("{pre}.ln3.g"));
            let b = bound.var(params, &format!("{pre}.ln3.b"));
            rec.layer_norm(h, g, b)
        };
        let up = linear(
            &mut rec,
            normed,
            bound.var(params, &format!("{pre}.mlp.fc1.w")),
            bound.var(params, &format!("{pre}.mlp.fc1.b")),
        );
        let act = rec.gelu(up);
        let down = linear(
            &mut rec,
            act,
            bound.var(params, &format!("{pre}.mlp.fc2.w")),
            bound.var(params, &format!("{pre}.mlp.fc2.b")),
        );
        h = rec.add(h, down);
    }

    let vel = linear(
        &mut rec,
        h,
        bound.var(params, "head.video.w"),
        bound.var(params, "head.video.b"),
    );
    if let Some(err) = rec.fault() {
        return Err(err);
    }
    Ok(rec.to_tensor(vel))
}
