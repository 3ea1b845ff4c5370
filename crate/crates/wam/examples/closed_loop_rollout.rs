//! Closed-loop control with the expert chunk policy, dumping the observed
//! frames as PPM images. Swap in `model_policy` with trained weights to
//! watch a learned policy instead.
//!
//! ```bash
//! cargo run --release -p wam --example closed_loop_rollout
//! ```

use wam::diffcore::Rng;
use wam::infer::{expert_chunk_policy, rollout};
use wam::model::ModelConfig;
use wam::tokens::compose_views;
use wam::toyworld::{instruction_text, Task};

fn main() -> wam::Result<()> {
    let cfg = ModelConfig::default();
    let dir = std::env::temp_dir().join("wam-example-rollout");
    std::fs::create_dir_all(&dir)?;

    for episode in 0..3u64 {
        let task = Task::new((episode as usize * 5) % 16);
        let mut policy = expert_chunk_policy(cfg.chunk_len);
        let mut rng = Rng::seed_from(episode);
        let result = rollout(
            100 + episode,
            task,
            400,
            cfg.chunk_len / 2,
            &mut policy,
            &mut rng,
            true,
            Some(&cfg),
        )?;
        println!(
            "episode {episode}: `{}` -> success {} (graded {:.1}) in {} steps",
            instruction_text(task),
            result.success,
            result.graded,
            result.steps
        );
        for (i, obs) in result.trace.iter().enumerate() {
            let frame = compose_views(&obs.views[0], &obs.views[1], &obs.views[2]);
            wam::harness::write_ppm(&frame, dir.join(format!("ep{episode}_obs{i:03}.ppm")))?;
        }
    }
    println!("frames written under {}", dir.display());
    Ok(())
}
