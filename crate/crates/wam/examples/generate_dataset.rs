//! Generate expert demonstrations and write them as a `.wamd` dataset.
//!
//! ```bash
//! cargo run --release -p wam --example generate_dataset
//! ```

use wam::harness::{commands, RunConfig};

fn main() -> wam::Result<()> {
    let dir = std::env::temp_dir().join("wam-example-dataset");
    std::fs::create_dir_all(&dir)?;
    let rc = RunConfig {
        seed: 7,
        dataset: dir.join("demos.wamd").display().to_string(),
        metrics: dir.join("metrics").display().to_string(),
        ..RunConfig::default()
    };

    let report = commands::gen_data(&rc, None, 32)?;
    println!(
        "wrote {} demonstrations ({} successful) to {}",
        report.written, report.successful, report.path
    );

    // Stream the file back and look at the first trajectory.
    let (header, trajs) = wam::harness::read_dataset(&rc.dataset)?;
    let t = &trajs[0];
    println!(
        "header: {}x{} per view, vocab {:?}",
        header.h,
        header.w,
        header.vocab.len()
    );
    println!(
        "first trajectory: {} steps, instruction ids {:?}, success {}",
        t.len(),
        t.instruction,
        t.success
    );

    // Dump its first composite frame for inspection.
    let frame = wam::tokens::compose_views(&t.frames[0][0], &t.frames[0][1], &t.frames[0][2]);
    let ppm = dir.join("first_frame.ppm");
    wam::harness::write_ppm(&frame, &ppm)?;
    println!("first composite frame -> {}", ppm.display());
    Ok(())
}
