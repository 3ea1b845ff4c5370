//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers once its assertions hold.
//!
//! Criteria 1-5, 7, 8 are invariant/oracle checks and run in seconds to
//! minutes. Criterion 6 trains the stride sweep end to end (four models,
//! 5000 steps each) and criterion 9 runs video-only pretraining; together
//! they dominate the suite's runtime.

use wam::diffcore::fdcheck::max_rel_error;
use wam::diffcore::{derive_seed, Rng, Scalar, Tensor};
use wam::flow::{FlowSample, TrainMode};
use wam::harness::{commands, read_dataset, RunConfig};
use wam::infer::{
    cache_for_chunk, decode_actions, decode_joint, decode_video_from_cache,
    decode_video_uncached, euler_integrate, observe, Observation,
};
use wam::model::{
    encode_instruction, forward, init_model, random_model, Bound, ModelConfig, Parameters,
};
use wam::tokens::{assemble_sequence, build_block_mask, Block, MaskMode, SequenceLayout};
use wam::toyworld::{instruction_tokens, reset_state, Task};

// ---------------------------------------------------------------- shared --

fn isolation_cfg() -> ModelConfig {
    ModelConfig {
        model_dim: 32,
        heads: 4,
        layers: 2,
        chunk_len: 4,
        stride: 2,
        img_h: 8,
        img_w: 8,
        ..ModelConfig::default()
    }
}

struct Ctx<E> {
    obs: Tensor<E>,
    state: Tensor<E>,
    actions: Tensor<E>,
    future: Tensor<E>,
    instr: Vec<u16>,
}

fn random_ctx<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Ctx<E> {
    let mut rng = Rng::seed_from(seed);
    Ctx {
        obs: rng.normal_tensor(vec![cfg.frame_tokens(), cfg.patch_dim()]),
        state: rng.normal_tensor(vec![1, cfg.state_dim]),
        actions: rng.normal_tensor(vec![cfg.chunk_len, cfg.action_dim]),
        future: rng.normal_tensor(vec![cfg.k() * cfg.frame_tokens(), cfg.patch_dim()]),
        instr: vec![0, 1, 5, 6, 7],
    }
}

fn action_outputs<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    ctx: &Ctx<E>,
    future: &Tensor<E>,
) -> Vec<E> {
    let mut rec = wam::diffcore::Record::new();
    let bound = params.bind_frozen(&mut rec);
    let proj = bound.projectors(params);
    let (seq, layout, mask) = assemble_sequence(
        &mut rec,
        &cfg.assemble_cfg(),
        &proj,
        &ctx.obs,
        &ctx.state,
        &ctx.actions,
        Some(future),
    );
    let instr = encode_instruction(&mut rec, cfg, params, &bound, &ctx.instr);
    let out = forward(
        &mut rec, cfg, params, &bound, seq, &layout, &mask, instr, 0.4, Some(0.8),
    );
    rec.data(out.action_velocity).to_vec()
}

fn test_observation(cfg: &ModelConfig, seed: u64) -> (Observation, Vec<u16>) {
    let task = Task::new((seed % 16) as usize);
    let mut rng = Rng::seed_from(seed);
    let state = reset_state(&mut rng, task);
    (observe(&state, cfg), instruction_tokens(task))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ------------------------------------------------------------ criterion 1 --

/// Replacing every future-frame input with fresh noise changes action-block
/// outputs by exactly zero (bit-identical) in both precisions, over 100
/// random (parameters, inputs) draws.
#[test]
fn criterion_1_causal_isolation() {
    fn run<E: Scalar>(trials: u64) -> usize {
        let cfg = isolation_cfg();
        let mut checked = 0;
        for t in 0..trials {
            let params: Parameters<E> = random_model(&cfg, 1_000 + t);
            let ctx = random_ctx::<E>(&cfg, 2_000 + t);
            let mut rng = Rng::seed_from(3_000 + t);
            let other: Tensor<E> =
                rng.normal_tensor(vec![cfg.k() * cfg.frame_tokens(), cfg.patch_dim()]);
            let a = action_outputs(&cfg, &params, &ctx, &ctx.future);
            let b = action_outputs(&cfg, &params, &ctx, &other);
            assert!(
                a.iter().zip(&b).all(|(x, y)| x == y),
                "criterion 1: action outputs changed under future-noise swap (trial {t})"
            );
            checked += 1;
        }
        checked
    }
    let n32 = run::<f32>(50);
    let n64 = run::<f64>(50);
    println!(
        "criterion 1: PASS — {} f32 + {} f64 random cases, action outputs bit-identical",
        n32, n64
    );
}

// ------------------------------------------------------------ criterion 2 --

/// The blockwise rule table holds for every (row, column) pair over 20
/// random layouts, and the mask ablation runner shows that full attention
/// breaks the criterion-1 isolation.
#[test]
fn criterion_2_mask_structure_and_ablation() {
    let mut rng = Rng::seed_from(77);
    for _ in 0..20 {
        let layout = SequenceLayout::new(
            1 + rng.below(64),
            1 + rng.below(2),
            1 + rng.below(10),
            rng.below(4),
        );
        let mask = build_block_mask(&layout, MaskMode::Causal, true);
        let n = layout.total();
        for q in 0..n {
            for k in 0..n {
                let expect = match (layout.block_of(q), layout.block_of(k)) {
                    (Block::Obs | Block::State, b) => matches!(b, Block::Obs | Block::State),
                    (Block::Action, Block::Future) => false,
                    (Block::Action, _) => true,
                    (Block::Future, _) => true,
                };
                assert_eq!(mask.allowed(q, k), expect, "rule table broken at ({q},{k})");
            }
        }
    }

    // Forward-level contrast on one random model: the causal mask keeps the
    // future swap invisible; full attention leaks.
    let causal_cfg = isolation_cfg();
    let full_cfg = ModelConfig {
        mask_mode: MaskMode::Full,
        ..isolation_cfg()
    };
    let ctx = random_ctx::<f64>(&causal_cfg, 5);
    let mut rng = Rng::seed_from(6);
    let other: Tensor<f64> = rng.normal_tensor(vec![
        causal_cfg.k() * causal_cfg.frame_tokens(),
        causal_cfg.patch_dim(),
    ]);
    let params: Parameters<f64> = random_model(&causal_cfg, 7);
    let causal_leak = {
        let a = action_outputs(&causal_cfg, &params, &ctx, &ctx.future);
        let b = action_outputs(&causal_cfg, &params, &ctx, &other);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let full_leak = {
        let a = action_outputs(&full_cfg, &params, &ctx, &ctx.future);
        let b = action_outputs(&full_cfg, &params, &ctx, &other);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    assert_eq!(causal_leak, 0.0, "criterion 2: causal mode must not leak");
    assert!(full_leak > 0.0, "criterion 2: full mode must leak");

    // And the end-to-end ablation runner reports the same contrast after
    // actually training both arms from one init.
    let dir = tempfile::tempdir().unwrap();
    let rc = RunConfig {
        model_dim: 32,
        heads: 4,
        layers: 1,
        chunk_len: 4,
        stride: 2,
        img_h: 8,
        img_w: 8,
        seed: 9,
        dataset: dir.path().join("d.wamd").display().to_string(),
        checkpoint: dir.path().join("c.wamc").display().to_string(),
        metrics: dir.path().join("m").display().to_string(),
        train_steps: 40,
        batch_size: 4,
        lr_init: 3e-3,
        lr_final: 1e-4,
        eval_episodes: 4,
        max_episode_steps: 80,
        ..RunConfig::default()
    };
    commands::gen_data(&rc, None, 8).unwrap();
    let arms = commands::ablate_mask(&rc, None, None, false).unwrap();
    let causal = arms.iter().find(|a| a.mask_mode == "causal").unwrap();
    let full = arms.iter().find(|a| a.mask_mode == "full").unwrap();
    assert!(
        causal.action_leakage <= 1e-12,
        "criterion 2: causal arm leaked {}",
        causal.action_leakage
    );
    assert!(
        full.action_leakage > 1e-9,
        "criterion 2: full arm shows no leakage ({})",
        full.action_leakage
    );
    println!(
        "criterion 2: PASS — rule table exact on 20 layouts; ablate-mask leakage causal {:.1e} vs full {:.3e}",
        causal.action_leakage, full.action_leakage
    );
}

// ------------------------------------------------------------ criterion 3 --

/// Every parameter of the tiny configuration matches central finite
/// differences of the actual training loss (teacher-forced video pass plus
/// action pass, λ-weighted) with max relative error ≤ 1e-4 in 64-bit.
#[test]
fn criterion_3_gradient_correctness() {
    let cfg = ModelConfig {
        model_dim: 8,
        heads: 2,
        layers: 1,
        mlp_expansion: 2,
        chunk_len: 2,
        stride: 2, // K = 1
        img_h: 8,
        img_w: 8,
        precision: wam::diffcore::Precision::F64,
        ..ModelConfig::default()
    };
    let params: Parameters<f64> = random_model(&cfg, 31);
    let ctx = random_ctx::<f64>(&cfg, 32);

    // Flow draws mirrored from the training path, frozen for the check.
    let mut rng = Rng::seed_from(33);
    let fs_a = FlowSample::sample(&ctx.actions, &mut rng);
    let fs_v = FlowSample::sample(&ctx.future, &mut rng);

    // Central differences at h = 1e-5 on this O(10) loss resolve gradients
    // to roughly 1e-7 absolute, so the relative-error denominator is
    // floored at 1e-3 (about 1% of the typical gradient magnitude): a
    // component whose true gradient sits below measurement noise cannot
    // dominate the metric, while a defect in any component above the floor
    // would still exceed the bound by orders of magnitude.
    let err = max_rel_error(params.tensors(), 1e-5, 1e-3, |rec, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        let proj = bound.projectors(&params);
        let acfg = cfg.assemble_cfg();
        let instr = encode_instruction(rec, &cfg, &params, &bound, &ctx.instr);

        // Teacher-forced video pass.
        let (seq, layout, mask) = assemble_sequence(
            rec, &acfg, &proj, &ctx.obs, &ctx.state, &ctx.actions, Some(&fs_v.x_s),
        );
        let out = forward(
            rec, &cfg, &params, &bound, seq, &layout, &mask, instr, 1.0, Some(fs_v.s),
        );
        let tv = rec.constant(fs_v.target_v.clone());
        let dv = rec.sub(out.video_velocity.unwrap(), tv);
        let sv = rec.mul(dv, dv);
        let lv = rec.mean_all(sv);

        // Action pass without future tokens.
        let (seq, layout, mask) = assemble_sequence(
            rec, &acfg, &proj, &ctx.obs, &ctx.state, &fs_a.x_s, None,
        );
        let out = forward(
            rec, &cfg, &params, &bound, seq, &layout, &mask, instr, fs_a.s, None,
        );
        let ta = rec.constant(fs_a.target_v.clone());
        let da = rec.sub(out.action_velocity, ta);
        let sa = rec.mul(da, da);
        let la = rec.mean_all(sa);

        let lvw = rec.scale(lv, cfg.lambda_video);
        let law = rec.scale(la, cfg.lambda_action);
        rec.add(lvw, law)
    });
    assert!(
        err <= 1e-4,
        "criterion 3: max relative gradient error {err:.3e} exceeds 1e-4"
    );
    println!(
        "criterion 3: PASS — {} parameters checked, max relative error {:.2e}",
        params.scalar_count(),
        err
    );
}

// ------------------------------------------------------------ criterion 4 --

/// Flow endpoints are exact; Euler recovers constant fields exactly and
/// converges at first order on a linear field.
#[test]
fn criterion_4_flow_matching_identities() {
    let mut rng = Rng::seed_from(41);
    for _ in 0..20 {
        let x: Tensor<f64> = rng.normal_tensor(vec![4, 3]);
        let eps: Tensor<f64> = rng.normal_tensor(vec![4, 3]);
        let s0 = FlowSample::at(&x, eps.clone(), 0.0);
        assert_eq!(s0.x_s.data(), eps.data(), "x^(0) must equal ε exactly");
        let s1 = FlowSample::at(&x, eps.clone(), 1.0);
        assert_eq!(s1.x_s.data(), x.data(), "x^(1) must equal x exactly");
    }

    // Constant fields: exact recovery of a^(0) + v.
    let x0 = Tensor::<f64>::from_f64s(vec![2, 3], &[0.5, -1.0, 2.0, 0.25, -0.125, 1.5]);
    for n in [1usize, 2, 4, 8, 16, 32, 64, 128] {
        let v = Tensor::<f64>::from_f64s(vec![2, 3], &[0.5, -0.25, 1.0, 0.75, -1.5, 0.125]);
        let out = euler_integrate(x0.clone(), n, |_, _| Ok(v.clone())).unwrap();
        for i in 0..6 {
            assert_eq!(
                out.data()[i],
                x0.data()[i] + v.data()[i],
                "criterion 4: constant field not exact at N = {n}"
            );
        }
    }
    for n in [3usize, 7, 10, 100] {
        let out = euler_integrate(x0.clone(), n, |_, _| Ok(Tensor::zeros(vec![2, 3]))).unwrap();
        assert_eq!(out.data(), x0.data(), "zero field must be exact at N = {n}");
    }

    // dv/ds = c·s: measured log-log slope within [0.8, 1.2].
    let c = 2.0f64;
    let ns = [4usize, 8, 16, 32, 64, 128, 256];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let out =
                euler_integrate(Tensor::<f64>::scalar(0.0), n, |_, s| Ok(Tensor::scalar(c * s)))
                    .unwrap();
            (out.data()[0] - c / 2.0).abs()
        })
        .collect();
    let xs: Vec<f64> = ns.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    assert!(
        (0.8..=1.2).contains(&slope),
        "criterion 4: first-order slope {slope:.3} outside [0.8, 1.2]"
    );
    println!(
        "criterion 4: PASS — endpoints exact, constant fields exact, Euler slope {:.3}",
        slope
    );
}

// ------------------------------------------------------------ criterion 5 --

/// With pinned RNG and the causal mask, decode_joint and decode_actions
/// agree (bit-identical in f64, ≤ 1e-5 in f32) and the cached video decode
/// matches the uncached one ≤ 1e-4.
#[test]
fn criterion_5_decode_equivalences() {
    fn chunk_diff<E: Scalar>(cfg: &ModelConfig, seed: u64) -> f64 {
        let params: Parameters<E> = random_model(cfg, seed);
        let (obs, instr) = test_observation(cfg, seed + 1);
        let mut rng_a = Rng::seed_from(500 + seed);
        let solo = decode_actions(cfg, &params, &obs, &instr, &mut rng_a, 10).unwrap();
        let mut rng_j = Rng::seed_from(500 + seed);
        let (joint, _) = decode_joint(cfg, &params, &obs, &instr, &mut rng_j, 10).unwrap();
        max_abs_diff(&solo.chunk_norm.to_f64s(), &joint.chunk_norm.to_f64s())
    }

    let cfg = isolation_cfg();
    for t in 0..5 {
        let d64 = chunk_diff::<f64>(&cfg, 60 + t);
        assert_eq!(d64, 0.0, "criterion 5: f64 joint/action-only diff {d64}");
        let d32 = chunk_diff::<f32>(&cfg, 70 + t);
        assert!(d32 <= 1e-5, "criterion 5: f32 joint/action-only diff {d32}");
    }

    let params: Parameters<f32> = random_model(&cfg, 81);
    let (obs, instr) = test_observation(&cfg, 82);
    let mut rng = Rng::seed_from(83);
    let solo = decode_actions(&cfg, &params, &obs, &instr, &mut rng, 10).unwrap();
    let mut cache = cache_for_chunk(&cfg, &params, &obs, &instr, &solo.chunk_norm).unwrap();
    let mut rng_c = Rng::seed_from(84);
    let cached = decode_video_from_cache(&cfg, &params, &mut cache, &mut rng_c, 10).unwrap();
    let mut rng_u = Rng::seed_from(84);
    let uncached =
        decode_video_uncached(&cfg, &params, &obs, &instr, &solo.chunk_norm, &mut rng_u, 10)
            .unwrap();
    let vdiff = max_abs_diff(&cached.latents.to_f64s(), &uncached.latents.to_f64s());
    assert!(vdiff <= 1e-4, "criterion 5: cached video diff {vdiff}");
    assert_eq!(cache.prefix_builds, 1);
    println!(
        "criterion 5: PASS — joint ≡ action-only (f64 exact, f32 ≤ 1e-5); cached video diff {:.1e}",
        vdiff
    );
}

// ------------------------------------------------------------ criterion 6 --

/// Training efficacy and the stride direction-of-effect: the stride sweep
/// {0, 2, 4, 8} trains end to end on 200 demos (d = 64, 4 layers, 5000
/// steps each); the joint Δ = 4 model reaches SR ≥ 0.6 over 100 episodes,
/// beats the untrained baseline by ≥ 0.4, and stays within 0.10 of the
/// action-only arm.
#[test]
fn criterion_6_training_efficacy_and_delta_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let rc = RunConfig {
        model_dim: 64,
        heads: 4,
        layers: 4,
        chunk_len: 8,
        stride: 4,
        img_h: 16,
        img_w: 16,
        seed: 42,
        dataset: dir.path().join("demos.wamd").display().to_string(),
        checkpoint: dir.path().join("model.wamc").display().to_string(),
        metrics: dir.path().join("metrics").display().to_string(),
        train_steps: 5000,
        batch_size: 8,
        lr_init: 3e-3,
        lr_final: 1e-5,
        eval_episodes: 100,
        ..RunConfig::default()
    };

    let gen = commands::gen_data(&rc, None, 200).unwrap();
    assert!(
        gen.successful >= 195,
        "criterion 6: only {}/200 demos succeeded",
        gen.successful
    );

    // Untrained baseline: zero-init heads decode pure noise.
    let baseline = {
        let params: Parameters<f32> =
            init_model(&rc.model(), derive_seed(rc.seed, "init", 0));
        let (summary, _) = wam::harness::run_eval(&rc, &params, 100).unwrap();
        summary.sr
    };

    // The sweep trains every arm with the full protocol; its Δ = 4 row is
    // the joint model of part (a).
    let rows = commands::ablate_delta(&rc, &[0, 2, 4, 8], None, None, true).unwrap();
    println!("criterion 6 table: delta,k,sr,graded,mean_steps");
    for r in &rows {
        println!(
            "  {},{},{:.3},{:.3},{:.1}",
            r.delta, r.k, r.sr, r.graded, r.mean_steps
        );
    }
    let joint = rows.iter().find(|r| r.delta == 4).unwrap();
    let action_only = rows.iter().find(|r| r.delta == 0).unwrap();

    assert!(
        joint.sr >= 0.6,
        "criterion 6a: joint SR {:.3} below 0.6",
        joint.sr
    );
    assert!(
        joint.sr - baseline >= 0.4,
        "criterion 6a: joint SR {:.3} does not beat baseline {:.3} by 0.4",
        joint.sr,
        baseline
    );
    assert!(
        joint.sr >= action_only.sr - 0.10,
        "criterion 6b: joint SR {:.3} more than 0.10 below action-only {:.3}",
        joint.sr,
        action_only.sr
    );
    let csv = std::fs::read_to_string(dir.path().join("metrics").join("ablate-delta.csv"))
        .unwrap();
    assert_eq!(csv.lines().count(), 5, "criterion 6b: table must have 4 rows");
    println!(
        "criterion 6: PASS — joint SR {:.3} (baseline {:.3}), action-only SR {:.3}, sweep table emitted",
        joint.sr, baseline, action_only.sr
    );
}

// ------------------------------------------------------------ criterion 7 --

/// Latency asymmetry: with K = 8 future frames (n_f = 384 ≥ 4× the
/// 57-token context), the median action-only decode takes at most half the
/// joint decode over 30 repetitions.
#[test]
fn criterion_7_latency_asymmetry() {
    let cfg = ModelConfig {
        stride: 1, // K = 8
        ..ModelConfig::default()
    };
    let n_ctx = cfg.layout(false).total();
    let n_f = cfg.layout(true).n_f;
    assert!(n_f >= 4 * n_ctx, "premise: n_f {n_f} must be ≥ 4×{n_ctx}");

    let params: Parameters<f32> = random_model(&cfg, 90);
    let (obs, instr) = test_observation(&cfg, 91);
    let report =
        wam::infer::bench_latency(&cfg, &params, &obs, &instr, 30).unwrap();
    assert!(
        report.action_only_ms <= 0.5 * report.joint_ms,
        "criterion 7: action-only {:.2} ms not ≤ half of joint {:.2} ms",
        report.action_only_ms,
        report.joint_ms
    );
    println!(
        "criterion 7: PASS — action-only {:.2} ms ({} tokens) vs joint {:.2} ms ({} tokens), cached video {:.2} ms",
        report.action_only_ms,
        report.context_tokens,
        report.joint_ms,
        report.joint_tokens,
        report.cached_video_ms
    );
}

// ------------------------------------------------------------ criterion 8 --

/// Dataset and checkpoint round-trips are bit-exact, and two fresh
/// fixed-seed training runs produce bit-identical 10-step loss traces.
#[test]
fn criterion_8_persistence_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let rc = RunConfig {
        model_dim: 16,
        heads: 2,
        layers: 1,
        chunk_len: 4,
        stride: 2,
        img_h: 8,
        img_w: 8,
        seed: 13,
        dataset: dir.path().join("d.wamd").display().to_string(),
        checkpoint: dir.path().join("c.wamc").display().to_string(),
        metrics: dir.path().join("m").display().to_string(),
        train_steps: 10,
        batch_size: 2,
        lr_init: 1e-3,
        lr_final: 1e-4,
        ..RunConfig::default()
    };

    // Dataset round trip.
    commands::gen_data(&rc, None, 6).unwrap();
    let (_, original) = read_dataset(&rc.dataset).unwrap();
    let copy = dir.path().join("copy.wamd");
    wam::harness::write_dataset(&original, rc.img_h, rc.img_w, &wam::toyworld::VOCAB, &copy)
        .unwrap();
    let (_, reread) = read_dataset(&copy).unwrap();
    assert_eq!(original, reread, "criterion 8: dataset round trip not exact");

    // Two fresh runs: bit-identical traces and checkpoints.
    let run = |tag: &str| -> (String, Vec<u8>) {
        let out = dir.path().join(format!("{tag}.wamc"));
        commands::train(
            &rc,
            TrainMode::Joint,
            Some(10),
            Some(&out.display().to_string()),
            None,
            false,
        )
        .unwrap();
        let log = std::fs::read_to_string(
            dir.path().join("m").join(format!("{tag}-joint.jsonl")),
        )
        .unwrap();
        let stripped: String = log
            .lines()
            .map(|l| l.split("\"wall_ms\"").next().unwrap().to_string() + "\n")
            .collect();
        (stripped, std::fs::read(&out).unwrap())
    };
    let (trace_a, ckpt_a) = run("a");
    let (trace_b, ckpt_b) = run("b");
    assert_eq!(trace_a, trace_b, "criterion 8: loss traces differ");
    assert_eq!(trace_a.lines().count(), 10);

    // Checkpoint round trip: identical bytes aside from the embedded config
    // (paths differ), so compare reloaded tensors instead.
    let a = wam::harness::load_checkpoint(dir.path().join("a.wamc")).unwrap();
    let b = wam::harness::load_checkpoint(dir.path().join("b.wamc")).unwrap();
    for ((na, ta), (nb, tb)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data(), "criterion 8: parameter {na} differs");
    }
    assert_eq!(ckpt_a, ckpt_b, "criterion 8: checkpoint bytes differ");

    // Save -> load -> save is byte-stable.
    let resaved = dir.path().join("resaved.wamc");
    wam::harness::save_checkpoint(
        &a.params,
        a.opt.as_ref(),
        &a.config,
        a.step,
        &resaved,
    )
    .unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a.wamc")).unwrap(),
        std::fs::read(&resaved).unwrap(),
        "criterion 8: checkpoint round trip not byte-exact"
    );
    println!("criterion 8: PASS — dataset and checkpoint round-trips exact, 10-step trace bit-identical");
}

// ------------------------------------------------------------ criterion 9 --

/// Video-only pretraining runs, cuts L_video by at least half within 1000
/// steps, and a joint run warm-starts from the checkpoint without error.
#[test]
fn criterion_9_pretraining_mode() {
    let dir = tempfile::tempdir().unwrap();
    let rc = RunConfig {
        model_dim: 64,
        heads: 4,
        layers: 2,
        chunk_len: 8,
        stride: 4,
        img_h: 8,
        img_w: 8,
        seed: 17,
        dataset: dir.path().join("demos.wamd").display().to_string(),
        checkpoint: dir.path().join("model.wamc").display().to_string(),
        metrics: dir.path().join("metrics").display().to_string(),
        train_steps: 1000,
        batch_size: 8,
        lr_init: 3e-3,
        lr_final: 1e-5,
        ..RunConfig::default()
    };
    commands::gen_data(&rc, None, 64).unwrap();

    let pre = dir.path().join("pre.wamc").display().to_string();
    let report = commands::train(&rc, TrainMode::PretrainVideo, None, Some(&pre), None, false)
        .unwrap();
    let first = report.first.unwrap();
    let last = report.last.unwrap();
    assert_eq!(first.l_action, 0.0, "pretraining must not touch the action loss");

    // Average the trailing losses to damp per-step noise.
    let log = std::fs::read_to_string(dir.path().join("metrics").join("pre-pretrain-video.jsonl"))
        .unwrap();
    let tail: Vec<f64> = log
        .lines()
        .rev()
        .take(20)
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["l_video"]
                .as_f64()
                .unwrap()
        })
        .collect();
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(
        tail_mean <= 0.5 * first.l_video,
        "criterion 9: L_video {:.4} -> {:.4} is less than a 50% drop",
        first.l_video,
        tail_mean
    );

    // Joint training warm-starts from the pretrained weights.
    let post = commands::train(
        &rc,
        TrainMode::Joint,
        Some(rc.train_steps + 50),
        Some(&dir.path().join("post.wamc").display().to_string()),
        Some(&pre),
        false,
    )
    .unwrap();
    assert_eq!(post.start_step, 1000);
    assert!(post.last.unwrap().l_all.is_finite());
    println!(
        "criterion 9: PASS — L_video {:.3} -> {:.3} over 1000 video-only steps ({:.0}% drop); joint run resumed cleanly (final l_all {:.3})",
        first.l_video,
        tail_mean,
        100.0 * (1.0 - tail_mean / first.l_video),
        last.l_all
    );
}
