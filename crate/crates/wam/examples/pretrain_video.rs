//! Video-only pretraining followed by a joint run warm-started from it.
//!
//! ```bash
//! cargo run --release -p wam --example pretrain_video
//! ```

use wam::flow::TrainMode;
use wam::harness::{commands, RunConfig};

fn main() -> wam::Result<()> {
    let dir = std::env::temp_dir().join("wam-example-pretrain");
    std::fs::create_dir_all(&dir)?;
    let rc = RunConfig {
        model_dim: 48,
        layers: 2,
        img_h: 8,
        img_w: 8,
        seed: 5,
        dataset: dir.join("demos.wamd").display().to_string(),
        checkpoint: dir.join("joint.wamc").display().to_string(),
        metrics: dir.join("metrics").display().to_string(),
        train_steps: 300,
        batch_size: 12,
        lr_init: 5e-3,
        lr_final: 5e-5,
        ..RunConfig::default()
    };
    commands::gen_data(&rc, None, 48)?;

    let pre = dir.join("pretrained.wamc").display().to_string();
    println!("pretraining on the video objective alone...");
    let report = commands::train(&rc, TrainMode::PretrainVideo, None, Some(&pre), None, true)?;
    let (first, last) = (report.first.unwrap(), report.last.unwrap());
    println!("  L_video {:.3} -> {:.3}", first.l_video, last.l_video);

    println!("joint training warm-started from the pretrained weights...");
    let report = commands::train(&rc, TrainMode::Joint, Some(2 * rc.train_steps), None, Some(&pre), true)?;
    let last = report.last.unwrap();
    println!(
        "  final: l_video {:.3}, l_action {:.3}, l_all {:.3}",
        last.l_video, last.l_action, last.l_all
    );
    Ok(())
}
