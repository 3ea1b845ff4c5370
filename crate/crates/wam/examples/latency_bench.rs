//! Latency asymmetry between action-only and joint decoding.
//!
//! With stride 1 the model predicts K = p future frames, so the joint
//! sequence dwarfs the action context and the action-only path wins by a
//! wide margin.
//!
//! ```bash
//! cargo run --release -p wam --example latency_bench
//! ```

use wam::diffcore::Rng;
use wam::infer::{bench_latency, observe};
use wam::model::{random_model, ModelConfig};
use wam::toyworld::{instruction_tokens, reset_state, Task};

fn main() -> wam::Result<()> {
    let cfg = ModelConfig {
        stride: 1, // K = 8 future frames
        ..ModelConfig::default()
    };
    let params = random_model::<f32>(&cfg, 1);
    let task = Task::new(0);
    let mut rng = Rng::seed_from(2);
    let obs = observe(&reset_state(&mut rng, task), &cfg);

    let report = bench_latency(&cfg, &params, &obs, &instruction_tokens(task), 30)?;
    println!(
        "action-only: {:7.2} ms over {:>4} tokens",
        report.action_only_ms, report.context_tokens
    );
    println!(
        "joint:       {:7.2} ms over {:>4} tokens",
        report.joint_ms, report.joint_tokens
    );
    println!("cached video: {:6.2} ms incremental", report.cached_video_ms);
    println!(
        "joint / action-only = {:.1}x over {} repetitions",
        report.joint_ms / report.action_only_ms,
        report.repetitions
    );
    Ok(())
}
