//! Walk through action-only decoding: Euler integration of the action
//! velocity field over the `[T_o; T_s; T_a]` context, with no future-video
//! tokens anywhere.
//!
//! ```bash
//! cargo run --release -p wam --example action_only_decoding
//! ```

use wam::diffcore::Rng;
use wam::infer::{decode_actions, observe};
use wam::model::{random_model, ModelConfig};
use wam::toyworld::{instruction_tokens, instruction_text, reset_state, Task};

fn main() -> wam::Result<()> {
    let cfg = ModelConfig::default();
    // A randomized (untrained) model gives the decoder a nonzero velocity
    // field to integrate; swap in trained weights via the harness for real
    // behavior.
    let params = random_model::<f32>(&cfg, 42);

    let task = Task::new(6);
    let mut env_rng = Rng::seed_from(9);
    let state = reset_state(&mut env_rng, task);
    let obs = observe(&state, &cfg);
    println!("instruction: {:?}", instruction_text(task));

    for n_steps in [1, 10, 100] {
        let mut rng = Rng::seed_from(123);
        let out = decode_actions(&cfg, &params, &obs, &instruction_tokens(task), &mut rng, n_steps)?;
        println!(
            "N = {n_steps:>3}: context {} tokens, video tokens instantiated {}, first action {:?}",
            out.context_tokens, out.video_tokens, out.actions[0]
        );
    }
    println!(
        "(joint decoding would process {} tokens per velocity evaluation)",
        cfg.layout(true).total()
    );
    Ok(())
}
