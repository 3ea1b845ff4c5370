//! Flow-matching training: noise interpolation, the per-modality velocity
//! losses, their weighted combination, and the optimizer step.
//!
//! Per sample the random draws happen in a fixed order — action flow time
//! and noise first (when the action objective is active), then video — so a
//! (seed, config, data) triple pins the whole loss trace bit for bit.
//! Training defaults to teacher forcing: the video pass conditions on clean
//! actions embedded at flow time 1 while a second, future-free pass carries
//! the noised actions for the action objective. The single-pass variant
//! computes both losses from one forward over noised inputs.

use std::time::Instant;

use rayon::prelude::*;

use crate::diffcore::{
    adam_step, derive_seed, e, AdamParams, AdamState, Record, Rng, Scalar, Tensor, Var,
};
use crate::model::{encode_instruction, forward, ModelConfig, Parameters};
use crate::tokens::{assemble_sequence, Window};
use crate::{Error, Result};

/// One flow-matching draw for a tensor-valued modality: the interpolation
/// `x^(s) = (1-s)·ε + s·x` and its target velocity `x - ε`.
#[derive(Debug, Clone)]
pub struct FlowSample<E> {
    pub s: f64,
    pub epsilon: Tensor<E>,
    pub x_s: Tensor<E>,
    pub target_v: Tensor<E>,
}

impl<E: Scalar> FlowSample<E> {
    /// Builds the sample at a forced flow time. The endpoints are exact:
    /// `s = 0` returns ε itself and `s = 1` returns `x` itself.
    pub fn at(x: &Tensor<E>, epsilon: Tensor<E>, s: f64) -> Self {
        assert_eq!(x.shape(), epsilon.shape(), "flow sample shape mismatch");
        let target_v = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(epsilon.data())
                .map(|(&xv, &ev)| xv - ev)
                .collect(),
        );
        let x_s = if s == 0.0 {
            epsilon.clone()
        } else if s == 1.0 {
            x.clone()
        } else {
            let se = e::<E>(s);
            let ce = e::<E>(1.0 - s);
            Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(epsilon.data())
                    .map(|(&xv, &ev)| ce * ev + se * xv)
                    .collect(),
            )
        };
        FlowSample {
            s,
            epsilon,
            x_s,
            target_v,
        }
    }

    /// Draws `s ~ U(0,1)` and `ε ~ N(0,I)` from the stream.
    pub fn sample(x: &Tensor<E>, rng: &mut Rng) -> Self {
        let s = rng.uniform01();
        let epsilon = rng.normal_tensor(x.shape().to_vec());
        Self::at(x, epsilon, s)
    }
}

/// Scalar-weighted combination of the two objectives.
pub fn total_loss(l_video: f64, l_action: f64, lambda_video: f64, lambda_action: f64) -> f64 {
    lambda_video * l_video + lambda_action * l_action
}

/// Cosine decay from `lr_init` to `lr_final` over `total` steps.
pub fn cosine_lr(step: u64, total: u64, lr_init: f64, lr_final: f64) -> f64 {
    if total == 0 {
        return lr_init;
    }
    let t = (step.min(total) as f64) / (total as f64);
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Which objectives a training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TrainMode {
    /// λ_video·L_video + λ_action·L_action.
    Joint,
    /// Video objective only (the pretraining recipe).
    PretrainVideo,
    /// Action objective only (the Δ = 0 ablation arm).
    ActionOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "pretrain-video" => Ok(TrainMode::PretrainVideo),
            "action-only" => Ok(TrainMode::ActionOnly),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected joint | pretrain-video | action-only)"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainMode::Joint => "joint",
            TrainMode::PretrainVideo => "pretrain-video",
            TrainMode::ActionOnly => "action-only",
        };
        write!(f, "{s}")
    }
}

/// Per-step loss record emitted to the metrics stream.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub l_video: f64,
    pub l_action: f64,
    pub l_all: f64,
    pub wall_ms: f64,
}

fn mse_to<E: Scalar>(rec: &mut Record<E>, pred: Var, target: &Tensor<E>) -> Var {
    let t = rec.constant(target.clone());
    let d = rec.sub(pred, t);
    let sq = rec.mul(d, d);
    rec.mean_all(sq)
}

struct SampleResult<E> {
    l_video: Option<f64>,
    l_action: Option<f64>,
    grads: Option<Vec<Tensor<E>>>,
}

/// Loss (and optionally gradient) contribution of one window.
fn run_sample<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    window: &Window,
    seed: u64,
    mode: TrainMode,
    with_grads: bool,
) -> Result<SampleResult<E>> {
    let video_active = mode != TrainMode::ActionOnly && cfg.k() > 0;
    let action_active = mode != TrainMode::PretrainVideo;
    if mode == TrainMode::PretrainVideo && cfg.k() == 0 {
        return Err(Error::NoVideoBranch(
            "pretraining optimizes the video objective but stride is 0".into(),
        ));
    }

    let mut rng = Rng::seed_from(seed);
    let actions: Tensor<E> = window.actions.cast();
    let obs: Tensor<E> = window.obs.cast();
    let state: Tensor<E> = window.state.cast();

    // Fixed draw order: action flow first when active, then video.
    let fs_action = action_active.then(|| FlowSample::sample(&actions, &mut rng));
    let fs_video = if video_active {
        let future: Tensor<E> = window.future.cast();
        assert!(
            future.rows() > 0,
            "video objective active but window has no future frames"
        );
        Some((FlowSample::sample(&future, &mut rng), future))
    } else {
        None
    };

    let mut rec: Record<E> = Record::new();
    let bound = if with_grads {
        params.bind(&mut rec)
    } else {
        params.bind_frozen(&mut rec)
    };
    let proj = bound.projectors(params);
    let acfg = cfg.assemble_cfg();
    let instr = encode_instruction(&mut rec, cfg, params, &bound, &window.instruction);

    let mut l_video_var = None;
    let mut l_action_var = None;

    if cfg.single_pass && video_active && action_active {
        // One joint pass: video conditions on the noised actions.
        let fa = fs_action.as_ref().unwrap();
        let (fv, _) = fs_video.as_ref().unwrap();
        let (seq, layout, mask) =
            assemble_sequence(&mut rec, &acfg, &proj, &obs, &state, &fa.x_s, Some(&fv.x_s));
        let out = forward(
            &mut rec, cfg, params, &bound, seq, &layout, &mask, instr, fa.s, Some(fv.s),
        );
        l_action_var = Some(mse_to(&mut rec, out.action_velocity, &fa.target_v));
        l_video_var = Some(mse_to(
            &mut rec,
            out.video_velocity.expect("video head"),
            &fv.target_v,
        ));
    } else {
        if let Some((fv, _)) = fs_video.as_ref() {
            // Teacher-forced video pass: clean actions at flow time 1.
            let (seq, layout, mask) =
                assemble_sequence(&mut rec, &acfg, &proj, &obs, &state, &actions, Some(&fv.x_s));
            let out = forward(
                &mut rec, cfg, params, &bound, seq, &layout, &mask, instr, 1.0, Some(fv.s),
            );
            l_video_var = Some(mse_to(
                &mut rec,
                out.video_velocity.expect("video head"),
                &fv.target_v,
            ));
        }
        if let Some(fa) = fs_action.as_ref() {
            // Action pass: no future tokens at all.
            let (seq, layout, mask) =
                assemble_sequence(&mut rec, &acfg, &proj, &obs, &state, &fa.x_s, None);
            let out = forward(
                &mut rec, cfg, params, &bound, seq, &layout, &mask, instr, fa.s, None,
            );
            l_action_var = Some(mse_to(&mut rec, out.action_velocity, &fa.target_v));
        }
    }

    let total = match (l_video_var, l_action_var) {
        (Some(lv), Some(la)) => {
            let lvw = rec.scale(lv, cfg.lambda_video);
            let law = rec.scale(la, cfg.lambda_action);
            rec.add(lvw, law)
        }
        (Some(lv), None) => rec.scale(lv, cfg.lambda_video),
        (None, Some(la)) => rec.scale(la, cfg.lambda_action),
        (None, None) => unreachable!("at least one objective is always active"),
    };

    let grads = if with_grads {
        rec.backward(total)?;
        Some(
            bound
                .vars()
                .iter()
                .map(|&v| {
                    Tensor::new(rec.shape(v).to_vec(), rec.grad(v).expect("param grad").to_vec())
                })
                .collect(),
        )
    } else {
        // Even without gradients, surface any NaN fault.
        rec.scalar_value(total)?;
        None
    };

    let read = |v: Option<Var>| -> Result<Option<f64>> {
        v.map(|v| rec.scalar_value(v).map(|x| x.to_f64().unwrap()))
            .transpose()
    };
    Ok(SampleResult {
        l_video: read(l_video_var)?,
        l_action: read(l_action_var)?,
        grads,
    })
}

/// Loss components of one window without touching any parameter.
pub fn losses_for_window<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    window: &Window,
    seed: u64,
    mode: TrainMode,
) -> Result<(Option<f64>, Option<f64>)> {
    let r = run_sample(cfg, params, window, seed, mode, false)?;
    Ok((r.l_video, r.l_action))
}

/// One optimizer step over a batch of windows.
///
/// Per-sample passes run in parallel; gradients are averaged in batch order
/// so the result is independent of scheduling. Gradient NaNs abort the step
/// with the parameter name; forward NaNs abort with the op name.
pub fn train_step<E: Scalar>(
    cfg: &ModelConfig,
    params: &mut Parameters<E>,
    opt: &mut AdamState<E>,
    hp: &AdamParams,
    batch: &[Window],
    step: u64,
    step_seed: u64,
    mode: TrainMode,
    lr: f64,
) -> Result<StepMetrics> {
    assert!(!batch.is_empty(), "train_step: empty batch");
    let start = Instant::now();

    let seeds: Vec<u64> = (0..batch.len())
        .map(|i| derive_seed(step_seed, "sample", i as u64))
        .collect();

    let results: Vec<Result<SampleResult<E>>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(w, &s)| run_sample(cfg, &*params, w, s, mode, true))
        .collect();

    let mut grads_acc: Vec<Tensor<E>> = params
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let mut lv_sum = 0.0;
    let mut la_sum = 0.0;
    let mut lv_n = 0usize;
    let mut la_n = 0usize;
    for r in results {
        let r = r?;
        if let Some(lv) = r.l_video {
            lv_sum += lv;
            lv_n += 1;
        }
        if let Some(la) = r.l_action {
            la_sum += la;
            la_n += 1;
        }
        let grads = r.grads.expect("training pass returns gradients");
        for (acc, g) in grads_acc.iter_mut().zip(grads) {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + b;
            }
        }
    }
    let inv_b = e::<E>(1.0 / batch.len() as f64);
    for g in grads_acc.iter_mut() {
        for v in g.data_mut() {
            *v = *v * inv_b;
        }
    }

    let names: Vec<String> = params.names().to_vec();
    adam_step(params.tensors_mut(), &grads_acc, opt, hp, lr, |i| {
        names[i].clone()
    })?;

    let l_video = if lv_n > 0 { lv_sum / lv_n as f64 } else { 0.0 };
    let l_action = if la_n > 0 { la_sum / la_n as f64 } else { 0.0 };
    let l_all = total_loss(
        if lv_n > 0 { l_video } else { 0.0 },
        if la_n > 0 { l_action } else { 0.0 },
        if lv_n > 0 { cfg.lambda_video } else { 0.0 },
        if la_n > 0 { cfg.lambda_action } else { 0.0 },
    );
    Ok(StepMetrics {
        step,
        l_video,
        l_action,
        l_all,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod flow_tests;
