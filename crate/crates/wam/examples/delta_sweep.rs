//! Miniature future-frame-stride ablation: train one model per stride from
//! the same initialization and compare the resulting metrics. A scaled-down
//! version of `wam ablate-delta` demonstrating the runner mechanics; expect
//! several minutes. At this tiny budget the closed-loop numbers mostly
//! reflect grasping (graded around 0.5) — the full-budget sweep is what
//! separates the strides on success rate.
//!
//! ```bash
//! cargo run --release -p wam --example delta_sweep
//! ```

use wam::harness::{commands, RunConfig};

fn main() -> wam::Result<()> {
    let dir = std::env::temp_dir().join("wam-example-sweep");
    std::fs::create_dir_all(&dir)?;
    let rc = RunConfig {
        model_dim: 48,
        layers: 2,
        seed: 21,
        dataset: dir.join("demos.wamd").display().to_string(),
        checkpoint: dir.join("unused.wamc").display().to_string(),
        metrics: dir.join("metrics").display().to_string(),
        train_steps: 600,
        batch_size: 8,
        lr_init: 4e-3,
        lr_final: 4e-5,
        eval_episodes: 16,
        max_episode_steps: 300,
        ..RunConfig::default()
    };
    commands::gen_data(&rc, None, 96)?;

    let rows = commands::ablate_delta(&rc, &[0, 2, 4], None, None, false)?;
    println!("stride  K   SR     graded  final L_action");
    for r in &rows {
        println!(
            "{:>6}  {:>1}  {:.3}  {:.3}   {:.4}",
            r.delta, r.k, r.sr, r.graded, r.final_l_action
        );
    }
    println!("(full table written to {}/ablate-delta.csv)", rc.metrics);
    Ok(())
}
