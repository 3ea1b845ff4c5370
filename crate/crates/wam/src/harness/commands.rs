//! Subcommand implementations. Each is deterministic given (config, seed):
//! all stochastic streams derive from the run seed via tagged sub-seeds, so
//! an interrupted run resumed from a checkpoint continues the exact loss
//! trace of an uninterrupted one.

use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint_for, save_checkpoint, Checkpoint};
use super::config::RunConfig;
use super::dataset::{read_dataset, write_dataset, DatasetHeader};
use super::eval::{run_eval, summarize, EvalSummary};
use super::metrics::{write_csv, write_ppm, JsonlWriter};
use crate::diffcore::{derive_seed, AdamParams, AdamState, Precision, Rng, Scalar, Tensor};
use crate::flow::{cosine_lr, train_step, StepMetrics, TrainMode};
use crate::infer::{
    bench_latency, decode_actions, decode_joint, model_policy, observe, rollout, BenchReport,
    Observation,
};
use crate::model::{init_model, random_model, ModelConfig, Parameters};
use crate::tokens::{build_block_mask, compose_views, extract_window, SequenceLayout, Window};
use crate::toyworld::{generate_demo, instruction_tokens, reset_state, Task, Trajectory, NUM_TASKS, VOCAB};
use crate::{Error, Result};

macro_rules! with_precision {
    ($cfg:expr, $ty:ident, $body:block) => {
        match $cfg.precision {
            Precision::F32 => {
                type $ty = f32;
                $body
            }
            Precision::F64 => {
                type $ty = f64;
                $body
            }
        }
    };
}

fn metrics_path(rc: &RunConfig, name: &str) -> PathBuf {
    Path::new(&rc.metrics).join(name)
}

// ---- gen-data -------------------------------------------------------------

#[derive(Debug)]
pub struct GenDataReport {
    pub written: usize,
    pub successful: usize,
    pub path: String,
}

/// Generates demonstrations in parallel (one derived seed per index) and
/// writes them as a dataset file.
pub fn gen_data(rc: &RunConfig, out: Option<&str>, n: usize) -> Result<GenDataReport> {
    use rayon::prelude::*;
    let path = out.unwrap_or(&rc.dataset).to_string();
    let min_len = rc.model().min_demo_len();
    let trajs: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| {
            generate_demo(
                derive_seed(rc.seed, "demo", i as u64),
                i % NUM_TASKS,
                rc.img_h,
                rc.img_w,
                rc.demo_t_max,
                min_len,
            )
        })
        .collect();
    let successful = trajs.iter().filter(|t| t.success).count();
    if let Some(dir) = Path::new(&path).parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_dataset(&trajs, rc.img_h, rc.img_w, &VOCAB, &path)?;
    Ok(GenDataReport {
        written: trajs.len(),
        successful,
        path,
    })
}

// ---- training -------------------------------------------------------------

fn load_training_set(rc: &RunConfig) -> Result<(DatasetHeader, Vec<Trajectory>)> {
    let (header, all) = read_dataset(&rc.dataset)?;
    if (header.h as usize, header.w as usize) != (rc.img_h, rc.img_w) {
        return Err(Error::Config(format!(
            "dataset images are {}x{} but the config wants {}x{}",
            header.h, header.w, rc.img_h, rc.img_w
        )));
    }
    // Unsuccessful demonstrations are excluded from training by default.
    let trajs: Vec<Trajectory> = all.into_iter().filter(|t| t.success).collect();
    if trajs.is_empty() {
        return Err(Error::Config(format!(
            "dataset {} holds no successful trajectories",
            rc.dataset
        )));
    }
    Ok((header, trajs))
}

fn window_index(trajs: &[Trajectory], cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let mut index = Vec::new();
    for (ti, t) in trajs.iter().enumerate() {
        for start in 0..t.valid_window_starts(cfg.chunk_len, cfg.stride) {
            index.push((ti, start));
        }
    }
    assert!(
        !index.is_empty(),
        "no valid training windows for p = {}, stride = {}",
        cfg.chunk_len,
        cfg.stride
    );
    index
}

fn make_batch(
    trajs: &[Trajectory],
    index: &[(usize, usize)],
    cfg: &ModelConfig,
    rng: &mut Rng,
    batch: usize,
) -> Vec<Window> {
    (0..batch)
        .map(|_| {
            let (ti, start) = index[rng.below(index.len())];
            extract_window(&trajs[ti], start, cfg.chunk_len, cfg.stride, cfg.patch)
        })
        .collect()
}

#[derive(Debug)]
pub struct TrainReport {
    pub start_step: u64,
    pub end_step: u64,
    pub first: Option<StepMetrics>,
    pub last: Option<StepMetrics>,
    pub checkpoint: String,
    pub metrics_file: String,
}

fn train_loop<E: Scalar>(
    rc: &RunConfig,
    mode: TrainMode,
    trajs: &[Trajectory],
    params: &mut Parameters<E>,
    opt: &mut AdamState<E>,
    start_step: u64,
    total_steps: u64,
    log: &mut JsonlWriter,
    echo: bool,
) -> Result<(Option<StepMetrics>, Option<StepMetrics>)> {
    let cfg = rc.model();
    let hp = AdamParams {
        beta1: rc.adam_beta1,
        beta2: rc.adam_beta2,
        eps: rc.adam_eps,
        weight_decay: rc.weight_decay,
    };
    let index = window_index(trajs, &cfg);
    let mut first = None;
    let mut last = None;
    for step in start_step..total_steps {
        let mut batch_rng = Rng::seed_from(derive_seed(rc.seed, "batch", step));
        let batch = make_batch(trajs, &index, &cfg, &mut batch_rng, rc.batch_size);
        // The schedule is anchored to the configured horizon, not to any
        // truncated `--steps` bound, so an interrupted run resumes on the
        // same learning-rate curve.
        let lr = cosine_lr(step, rc.train_steps, rc.lr_init, rc.lr_final);
        let m = train_step(
            &cfg,
            params,
            opt,
            &hp,
            &batch,
            step,
            derive_seed(rc.seed, "train", step),
            mode,
            lr,
        )
        .map_err(|e| Error::Config(format!("step {step}: {e}")))?;
        log.write(&m)?;
        if echo && (step % 250 == 0 || step + 1 == total_steps) {
            println!(
                "step {:>6}/{}  l_video {:.4}  l_action {:.4}  l_all {:.4}  lr {:.2e}",
                step, total_steps, m.l_video, m.l_action, m.l_all, lr
            );
        }
        if first.is_none() {
            first = Some(m.clone());
        }
        last = Some(m);
    }
    log.flush()?;
    Ok((first, last))
}

/// `train` / `pretrain`: optimize from scratch or from `--init`, then save.
pub fn train(
    rc: &RunConfig,
    mode: TrainMode,
    steps: Option<u64>,
    out: Option<&str>,
    init: Option<&str>,
    echo: bool,
) -> Result<TrainReport> {
    let (_, trajs) = load_training_set(rc)?;
    let total = steps.unwrap_or(rc.train_steps);
    let out_path = out.unwrap_or(&rc.checkpoint).to_string();
    if let Some(dir) = Path::new(&out_path).parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let stem = Path::new(&out_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "train".into());
    let mut log = JsonlWriter::create(metrics_path(rc, &format!("{stem}-{mode}.jsonl")))?;

    with_precision!(rc, E, {
        let cfg = rc.model();
        let (mut params, mut opt, start_step): (Parameters<E>, AdamState<E>, u64) =
            match init {
                Some(p) => {
                    let ckpt = load_checkpoint_for(p, rc)?;
                    let params: Parameters<E> = ckpt.params.cast();
                    let opt = match ckpt.opt {
                        Some(o) => AdamState {
                            m: o.m.iter().map(Tensor::cast).collect(),
                            v: o.v.iter().map(Tensor::cast).collect(),
                            step: o.step,
                        },
                        None => AdamState::zeros_like(params.tensors()),
                    };
                    (params, opt, ckpt.step)
                }
                None => {
                    let params: Parameters<E> =
                        init_model(&cfg, derive_seed(rc.seed, "init", 0));
                    let opt = AdamState::zeros_like(params.tensors());
                    (params, opt, 0)
                }
            };
        let (first, last) = train_loop(
            rc, mode, &trajs, &mut params, &mut opt, start_step, total, &mut log, echo,
        )?;
        save_checkpoint(&params, Some(&opt), rc, total, &out_path)?;
        Ok(TrainReport {
            start_step,
            end_step: total,
            first,
            last,
            checkpoint: out_path,
            metrics_file: log.path.display().to_string(),
        })
    })
}

// ---- eval -----------------------------------------------------------------

fn load_params_f32(rc: &RunConfig, ckpt: Option<&str>) -> Result<Checkpoint> {
    let path = ckpt.unwrap_or(&rc.checkpoint);
    load_checkpoint_for(path, rc)
}

/// `eval`: closed-loop success metrics over the fixed eval seed set.
pub fn eval(
    rc: &RunConfig,
    ckpt: Option<&str>,
    episodes: Option<usize>,
    out: Option<&str>,
) -> Result<EvalSummary> {
    let n = episodes.unwrap_or(rc.eval_episodes);
    let loaded = load_params_f32(rc, ckpt)?;
    with_precision!(rc, E, {
        let params: Parameters<E> = loaded.params.cast();
        let (summary, rows) = run_eval(rc, &params, n)?;
        let csv: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{:.2},{}",
                    r.episode, r.task, u8::from(r.success), r.graded, r.steps
                )
            })
            .collect();
        let base = out.map(PathBuf::from).unwrap_or_else(|| metrics_path(rc, "eval"));
        write_csv(
            base.with_extension("csv"),
            "episode,task,success,graded,steps",
            &csv,
        )?;
        let mut jl = JsonlWriter::create(base.with_extension("json"))?;
        jl.write(&summary)?;
        jl.flush()?;
        Ok(summary)
    })
}

// ---- rollout --------------------------------------------------------------

#[derive(Debug)]
pub struct RolloutReport {
    pub episodes: usize,
    pub summary: EvalSummary,
    pub dumped_frames: usize,
}

/// `rollout`: like eval but sequential, optionally dumping each observed
/// composite frame as a PPM image.
pub fn rollout_cmd(
    rc: &RunConfig,
    ckpt: Option<&str>,
    episodes: Option<usize>,
    dump_dir: Option<&str>,
) -> Result<RolloutReport> {
    let n = episodes.unwrap_or(rc.eval_episodes.min(8));
    let loaded = load_params_f32(rc, ckpt)?;
    let mut dumped = 0usize;
    with_precision!(rc, E, {
        let params: Parameters<E> = loaded.params.cast();
        let cfg = rc.model();
        let mut rows = Vec::new();
        for i in 0..n {
            let task = Task::new(i % NUM_TASKS);
            let instr = instruction_tokens(task);
            let mut decode_rng = Rng::seed_from(derive_seed(rc.seed, "eval-decode", i as u64));
            let mut policy = model_policy(&cfg, &params, &instr, cfg.flow_steps);
            let r = rollout(
                derive_seed(rc.seed, "eval-env", i as u64),
                task,
                rc.max_episode_steps,
                rc.horizon(),
                &mut policy,
                &mut decode_rng,
                dump_dir.is_some(),
                Some(&cfg),
            )?;
            if let Some(dir) = dump_dir {
                std::fs::create_dir_all(dir)?;
                for (j, obs) in r.trace.iter().enumerate() {
                    let composite = compose_views(&obs.views[0], &obs.views[1], &obs.views[2]);
                    write_ppm(
                        &composite,
                        Path::new(dir).join(format!("ep{i:03}_obs{j:04}.ppm")),
                    )?;
                    dumped += 1;
                }
            }
            rows.push(super::eval::EpisodeRecord {
                episode: i,
                task: task.id,
                success: r.success,
                graded: r.graded,
                steps: r.steps,
            });
        }
        Ok(RolloutReport {
            episodes: n,
            summary: summarize(&rows),
            dumped_frames: dumped,
        })
    })
}

// ---- bench ----------------------------------------------------------------

/// `bench`: latency of the three decode paths. Falls back to a randomized
/// model when no checkpoint exists, since timings do not depend on weights.
pub fn bench(
    rc: &RunConfig,
    ckpt: Option<&str>,
    reps: usize,
    out: Option<&str>,
) -> Result<BenchReport> {
    with_precision!(rc, E, {
        let cfg = rc.model();
        let params: Parameters<E> = match load_params_f32(rc, ckpt) {
            Ok(loaded) => loaded.params.cast(),
            Err(_) => random_model(&cfg, derive_seed(rc.seed, "bench-params", 0)),
        };
        let task = Task::new(0);
        let mut rng = Rng::seed_from(derive_seed(rc.seed, "bench-env", 0));
        let state = reset_state(&mut rng, task);
        let obs: Observation = observe(&state, &cfg);
        let instr = instruction_tokens(task);
        let report = bench_latency(&cfg, &params, &obs, &instr, reps)?;
        let path = out
            .map(PathBuf::from)
            .unwrap_or_else(|| metrics_path(rc, "bench.jsonl"));
        let mut jl = JsonlWriter::create(path)?;
        jl.write(&report)?;
        jl.flush()?;
        Ok(report)
    })
}

// ---- inspect-mask ---------------------------------------------------------

/// Renders the block-level rule table of the attention mask for a layout.
pub fn mask_table(p: usize, delta: usize, intra_action: bool) -> String {
    let (_, k) = crate::tokens::future_frame_indices(p, delta);
    // Block structure is independent of the frame token count; 4 per frame
    // keeps the probe layout small.
    let layout = SequenceLayout::new(4, 1, p, k);
    let mask = build_block_mask(&layout, crate::tokens::MaskMode::Causal, intra_action);
    let blocks: Vec<(&str, usize)> = {
        let [o, s, a, f] = layout.offsets();
        let mut b = vec![("T_o", o), ("T_s", s), ("T_a", a)];
        if layout.n_f > 0 {
            b.push(("T_f", f));
        }
        b
    };
    let mut out = String::new();
    out.push_str(&format!(
        "sequence [T_o; T_s; T_a; T_f]: n_o={} n_s={} n_a={} n_f={} (K={})\n",
        layout.n_o, layout.n_s, layout.n_a, layout.n_f, layout.k
    ));
    out.push_str("rows attend to columns:\n");
    out.push_str("        ");
    for (name, _) in &blocks {
        out.push_str(&format!("{name:>8}"));
    }
    out.push('\n');
    for (qname, qi) in &blocks {
        out.push_str(&format!("{qname:>8}"));
        for (_, ki) in &blocks {
            out.push_str(&format!(
                "{:>8}",
                if mask.allowed(*qi, *ki) { "yes" } else { "-" }
            ));
        }
        out.push('\n');
    }
    out
}

// ---- ablations ------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct DeltaRow {
    pub delta: usize,
    pub k: usize,
    pub sr: f64,
    pub graded: f64,
    pub mean_steps: f64,
    pub final_l_action: f64,
    pub final_l_video: f64,
}

/// `ablate-delta`: trains one model per stride from the same init seed and
/// dataset, evaluates each, and emits one CSV row per stride.
pub fn ablate_delta(
    rc: &RunConfig,
    deltas: &[usize],
    steps: Option<u64>,
    out: Option<&str>,
    echo: bool,
) -> Result<Vec<DeltaRow>> {
    let (_, trajs) = load_training_set(rc)?;
    let total = steps.unwrap_or(rc.train_steps);
    let mut rows = Vec::new();
    for &delta in deltas {
        let arm = RunConfig {
            stride: delta,
            ..rc.clone()
        };
        arm.validate()?;
        if echo {
            println!("== stride {delta} (K = {})", arm.model().k());
        }
        let row = with_precision!(arm, E, {
            let cfg = arm.model();
            let mode = if cfg.k() == 0 {
                TrainMode::ActionOnly
            } else {
                TrainMode::Joint
            };
            let mut params: Parameters<E> = init_model(&cfg, derive_seed(arm.seed, "init", 0));
            let mut opt = AdamState::zeros_like(params.tensors());
            let mut log =
                JsonlWriter::create(metrics_path(&arm, &format!("ablate-delta-{delta}.jsonl")))?;
            let (_, last) = train_loop(
                &arm, mode, &trajs, &mut params, &mut opt, 0, total, &mut log, echo,
            )?;
            save_checkpoint(
                &params,
                Some(&opt),
                &arm,
                total,
                metrics_path(&arm, &format!("ablate-delta-{delta}.wamc")),
            )?;
            let (summary, _) = run_eval(&arm, &params, arm.eval_episodes)?;
            let last = last.expect("at least one step");
            Ok::<_, Error>(DeltaRow {
                delta,
                k: cfg.k(),
                sr: summary.sr,
                graded: summary.graded,
                mean_steps: summary.mean_steps,
                final_l_action: last.l_action,
                final_l_video: last.l_video,
            })
        })?;
        if echo {
            println!(
                "   stride {delta}: SR {:.2}  graded {:.2}  mean steps {:.1}",
                row.sr, row.graded, row.mean_steps
            );
        }
        rows.push(row);
    }
    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{:.4},{:.4},{:.2},{:.5},{:.5}",
                r.delta, r.k, r.sr, r.graded, r.mean_steps, r.final_l_action, r.final_l_video
            )
        })
        .collect();
    let path = out
        .map(PathBuf::from)
        .unwrap_or_else(|| metrics_path(rc, "ablate-delta.csv"));
    write_csv(
        path,
        "delta,k,sr,graded,mean_steps,final_l_action,final_l_video",
        &csv,
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MaskArm {
    pub mask_mode: String,
    pub sr: f64,
    pub graded: f64,
    /// Max absolute change in decoded action chunks when the video noise
    /// stream changes (0 under the causal mask, nonzero under full).
    pub action_leakage: f64,
}

/// `ablate-mask`: trains causal and full-attention arms from the same init
/// seed, evaluates both, and measures action-block leakage end to end by
/// decoding the joint path with two different video noise draws.
pub fn ablate_mask(
    rc: &RunConfig,
    steps: Option<u64>,
    out: Option<&str>,
    echo: bool,
) -> Result<Vec<MaskArm>> {
    if rc.stride == 0 {
        return Err(Error::NoVideoBranch(
            "the mask ablation needs future tokens; set stride >= 1".into(),
        ));
    }
    let (_, trajs) = load_training_set(rc)?;
    let total = steps.unwrap_or(rc.train_steps);
    let mut arms = Vec::new();
    for mode in [crate::tokens::MaskMode::Causal, crate::tokens::MaskMode::Full] {
        let name = match mode {
            crate::tokens::MaskMode::Causal => "causal",
            crate::tokens::MaskMode::Full => "full",
        };
        let arm = RunConfig {
            mask_mode: mode,
            ..rc.clone()
        };
        if echo {
            println!("== mask {name}");
        }
        let row = with_precision!(arm, E, {
            let cfg = arm.model();
            let mut params: Parameters<E> = init_model(&cfg, derive_seed(arm.seed, "init", 0));
            let mut opt = AdamState::zeros_like(params.tensors());
            let mut log =
                JsonlWriter::create(metrics_path(&arm, &format!("ablate-mask-{name}.jsonl")))?;
            train_loop(
                &arm,
                TrainMode::Joint,
                &trajs,
                &mut params,
                &mut opt,
                0,
                total,
                &mut log,
                echo,
            )?;
            save_checkpoint(
                &params,
                Some(&opt),
                &arm,
                total,
                metrics_path(&arm, &format!("ablate-mask-{name}.wamc")),
            )?;
            let (summary, _) = run_eval(&arm, &params, arm.eval_episodes)?;
            let leakage = action_leakage(&cfg, &params, arm.seed)?;
            Ok::<_, Error>(MaskArm {
                mask_mode: name.to_string(),
                sr: summary.sr,
                graded: summary.graded,
                action_leakage: leakage,
            })
        })?;
        if echo {
            println!(
                "   mask {name}: SR {:.2}  graded {:.2}  leakage {:.3e}",
                row.sr, row.graded, row.action_leakage
            );
        }
        arms.push(row);
    }
    let csv: Vec<String> = arms
        .iter()
        .map(|a| format!("{},{:.4},{:.4},{:.6e}", a.mask_mode, a.sr, a.graded, a.action_leakage))
        .collect();
    let path = out
        .map(PathBuf::from)
        .unwrap_or_else(|| metrics_path(rc, "ablate-mask.csv"));
    write_csv(path, "mask_mode,sr,graded,action_leakage", &csv)?;
    Ok(arms)
}

/// Decodes the same context twice with the action noise pinned and the
/// video noise varied; reports the max absolute chunk difference.
pub fn action_leakage<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    seed: u64,
) -> Result<f64> {
    let task = Task::new(0);
    let mut env_rng = Rng::seed_from(derive_seed(seed, "leak-env", 0));
    let state = reset_state(&mut env_rng, task);
    let obs = observe(&state, cfg);
    let instr = instruction_tokens(task);

    // Same action noise (same seed), different downstream video noise.
    let chunk = |split: u64| -> Result<Vec<f64>> {
        let mut rng = Rng::seed_from(derive_seed(seed, "leak-decode", 0));
        if split == 0 {
            let (out, _) = decode_joint(cfg, params, &obs, &instr, &mut rng, cfg.flow_steps)?;
            Ok(out.chunk_norm.to_f64s())
        } else {
            // Consume the action draw identically, then let the video draw
            // differ by reseeding the stream afterwards.
            let out = decode_actions(cfg, params, &obs, &instr, &mut rng, cfg.flow_steps)?;
            Ok(out.chunk_norm.to_f64s())
        }
    };
    let joint = chunk(0)?;
    let solo = chunk(1)?;
    Ok(joint
        .iter()
        .zip(&solo)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
