//! End-to-end miniature: generate demos, train a small joint model, then
//! evaluate it closed-loop.
//!
//! This is a scaled-down version of the `gen-data` -> `train` -> `eval`
//! pipeline; expect five to ten minutes. At this budget the policy learns
//! the state-driven skill (reach and grasp: graded score near 0.5) while
//! goal placement — which must be read off the pixels — is still
//! emerging; the full protocol (d = 64, 4 layers, 5000 steps, 200 demos,
//! the README config) reaches success rates past 0.7.
//!
//! ```bash
//! cargo run --release -p wam --example train_policy
//! ```

use wam::flow::TrainMode;
use wam::harness::{commands, RunConfig};

fn main() -> wam::Result<()> {
    let dir = std::env::temp_dir().join("wam-example-train");
    std::fs::create_dir_all(&dir)?;
    let rc = RunConfig {
        model_dim: 48,
        layers: 3,
        seed: 3,
        dataset: dir.join("demos.wamd").display().to_string(),
        checkpoint: dir.join("policy.wamc").display().to_string(),
        metrics: dir.join("metrics").display().to_string(),
        train_steps: 1500,
        batch_size: 8,
        lr_init: 4e-3,
        lr_final: 4e-5,
        eval_episodes: 20,
        ..RunConfig::default()
    };

    println!("generating demonstrations...");
    let gen = commands::gen_data(&rc, None, 96)?;
    println!("  {} written, {} successful", gen.written, gen.successful);

    println!("training {} steps (joint objective)...", rc.train_steps);
    let report = commands::train(&rc, TrainMode::Joint, None, None, None, true)?;
    let (first, last) = (report.first.unwrap(), report.last.unwrap());
    println!(
        "  loss {:.3} -> {:.3} (video {:.3} -> {:.3}, action {:.3} -> {:.3})",
        first.l_all, last.l_all, first.l_video, last.l_video, first.l_action, last.l_action
    );

    println!("evaluating {} episodes...", rc.eval_episodes);
    let summary = commands::eval(&rc, None, None, None)?;
    println!(
        "  SR {:.2}  graded {:.2}  mean steps {:.1}",
        summary.sr, summary.graded, summary.mean_steps
    );
    println!("checkpoint: {}", report.checkpoint);
    println!("(graded 0.5 = grasps but does not yet place; see the README config for the full-budget run)");
    Ok(())
}
