//! End-to-end harness checks on a deliberately tiny model: the CLI surface,
//! dataset/checkpoint round trips through real commands, and exact resume
//! of an interrupted training run.

use wam::harness::{cli, commands, load_checkpoint, RunConfig};

fn tiny_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        model_dim: 16,
        heads: 2,
        layers: 1,
        chunk_len: 4,
        stride: 2,
        img_h: 8,
        img_w: 8,
        seed: 11,
        dataset: dir.join("demos.wamd").display().to_string(),
        checkpoint: dir.join("model.wamc").display().to_string(),
        train_steps: 10,
        batch_size: 2,
        lr_init: 1e-3,
        lr_final: 1e-4,
        eval_episodes: 2,
        max_episode_steps: 60,
        metrics: dir.join("metrics").display().to_string(),
        ..RunConfig::default()
    }
}

fn write_config(rc: &RunConfig, dir: &std::path::Path) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, rc.to_text()).unwrap();
    path.display().to_string()
}

#[test]
fn cli_surface_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let rc = tiny_config(dir.path());
    let cfg_path = write_config(&rc, dir.path());
    let run = |args: &[&str]| -> i32 {
        let mut argv = vec!["wam".to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        cli(argv)
    };

    assert_eq!(run(&["gen-data", "--config", &cfg_path, "--n", "6"]), 0);
    assert_eq!(run(&["train", "--config", &cfg_path, "--steps", "4"]), 0);
    assert_eq!(run(&["eval", "--config", &cfg_path, "--episodes", "2"]), 0);
    assert_eq!(run(&["bench", "--config", &cfg_path, "--reps", "2"]), 0);
    assert_eq!(run(&["inspect-mask", "--p", "8", "--delta", "4"]), 0);
    let dump = dir.path().join("frames");
    assert_eq!(
        run(&[
            "rollout",
            "--config",
            &cfg_path,
            "--episodes",
            "1",
            "--dump-frames",
            dump.to_str().unwrap(),
        ]),
        0
    );
    assert!(std::fs::read_dir(&dump).unwrap().count() > 0);

    // Bad inputs exit nonzero.
    assert_ne!(run(&["train", "--config", "/nonexistent.cfg"]), 0);
    assert_ne!(run(&["no-such-command"]), 0);
}

#[test]
fn mask_table_matches_rules() {
    let table = commands::mask_table(8, 4, true);
    // Skip the summary, caption, and column-header lines.
    let lines: Vec<&str> = table.lines().skip(3).collect();
    assert!(table.contains("n_a=8"));
    assert!(table.contains("K=2"));
    // T_o row: attends T_o, T_s only.
    let t_o = lines.iter().find(|l| l.trim_start().starts_with("T_o")).unwrap();
    assert_eq!(t_o.matches("yes").count(), 2);
    // T_a row: T_o, T_s, T_a.
    let t_a = lines.iter().find(|l| l.trim_start().starts_with("T_a")).unwrap();
    assert_eq!(t_a.matches("yes").count(), 3);
    // T_f row: everything.
    let t_f = lines.iter().find(|l| l.trim_start().starts_with("T_f")).unwrap();
    assert_eq!(t_f.matches("yes").count(), 4);
    // Stride 0 drops the future block's row from the table.
    let no_video = commands::mask_table(8, 0, true);
    assert!(no_video.contains("K=0"));
    assert!(!no_video
        .lines()
        .skip(3)
        .any(|l| l.trim_start().starts_with("T_f")));
}

/// An interrupted-and-resumed run reproduces the loss trace of an
/// uninterrupted run bit for bit (checkpoints carry optimizer moments, and
/// every stochastic stream is derived from (seed, step)).
#[test]
fn resumed_training_continues_exact_trace() {
    let dir = tempfile::tempdir().unwrap();
    let rc = tiny_config(dir.path());
    commands::gen_data(&rc, None, 6).unwrap();

    // Uninterrupted: 10 steps.
    let full_out = dir.path().join("full.wamc").display().to_string();
    commands::train(
        &rc,
        wam::flow::TrainMode::Joint,
        Some(10),
        Some(&full_out),
        None,
        false,
    )
    .unwrap();
    let full_log = std::fs::read_to_string(
        dir.path().join("metrics").join("full-joint.jsonl"),
    )
    .unwrap();

    // Interrupted at 5, resumed to 10.
    let half_out = dir.path().join("half.wamc").display().to_string();
    commands::train(
        &rc,
        wam::flow::TrainMode::Joint,
        Some(5),
        Some(&half_out),
        None,
        false,
    )
    .unwrap();
    let resumed_out = dir.path().join("resumed.wamc").display().to_string();
    commands::train(
        &rc,
        wam::flow::TrainMode::Joint,
        Some(10),
        Some(&resumed_out),
        Some(&half_out),
        false,
    )
    .unwrap();
    let resumed_log = std::fs::read_to_string(
        dir.path().join("metrics").join("resumed-joint.jsonl"),
    )
    .unwrap();

    // The resumed log holds steps 5..9; they must match the uninterrupted
    // run's lines exactly (serde_json round-trips f64 losslessly).
    let full_tail: Vec<&str> = full_log.lines().skip(5).collect();
    let resumed_lines: Vec<&str> = resumed_log.lines().collect();
    assert_eq!(resumed_lines.len(), 5);
    for (a, b) in full_tail.iter().zip(&resumed_lines) {
        let strip =
            |s: &str| -> String { s.split("\"wall_ms\"").next().unwrap().to_string() };
        assert_eq!(strip(a), strip(b), "trace diverged");
    }

    // And the final parameters agree bit for bit.
    let full = load_checkpoint(&full_out).unwrap();
    let resumed = load_checkpoint(&resumed_out).unwrap();
    for ((na, ta), (nb, tb)) in full.params.iter().zip(resumed.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data(), "parameter {na} diverged after resume");
    }
}

/// Video-only pretraining hands its weights to a joint run without error,
/// and the handoff actually loads (mismatched configs are rejected).
#[test]
fn pretrain_then_train_handoff() {
    let dir = tempfile::tempdir().unwrap();
    let rc = tiny_config(dir.path());
    commands::gen_data(&rc, None, 6).unwrap();

    let pre_out = dir.path().join("pre.wamc").display().to_string();
    let report = commands::train(
        &rc,
        wam::flow::TrainMode::PretrainVideo,
        Some(6),
        Some(&pre_out),
        None,
        false,
    )
    .unwrap();
    // Pretraining optimizes only the video objective.
    assert!(report.first.unwrap().l_action == 0.0);

    let post_out = dir.path().join("post.wamc").display().to_string();
    commands::train(
        &rc,
        wam::flow::TrainMode::Joint,
        Some(8),
        Some(&post_out),
        Some(&pre_out),
        false,
    )
    .unwrap();

    let other = RunConfig {
        layers: 2,
        ..rc.clone()
    };
    let err = commands::train(
        &other,
        wam::flow::TrainMode::Joint,
        Some(8),
        None,
        Some(&pre_out),
        false,
    )
    .unwrap_err();
    assert!(matches!(err, wam::Error::Checkpoint(_)));
}

#[test]
fn gen_data_reports_success_count() {
    let dir = tempfile::tempdir().unwrap();
    let rc = tiny_config(dir.path());
    let report = commands::gen_data(&rc, None, 8).unwrap();
    assert_eq!(report.written, 8);
    assert!(report.successful >= 7);
    let (header, trajs) = wam::harness::read_dataset(&rc.dataset).unwrap();
    assert_eq!(header.n_traj, 8);
    // Every demo satisfies the window invariant for the configured horizon.
    for t in &trajs {
        assert!(t.len() >= 2 * rc.chunk_len);
    }
}
