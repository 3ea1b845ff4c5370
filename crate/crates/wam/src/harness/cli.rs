//! Command-line front end. All logic lives in [`super::commands`]; this
//! module only parses arguments and prints results, so the binary stays a
//! one-line wrapper and every subcommand is drivable from tests.

use clap::{Parser, Subcommand};

use super::commands;
use super::config::RunConfig;
use crate::flow::TrainMode;
use crate::Result;

#[derive(Parser)]
#[command(
    name = "wam",
    about = "World-action model: train, evaluate, and benchmark on the toy manipulation world",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: String,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            rc.seed = seed;
        }
        Ok(rc)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate expert demonstrations into a dataset file.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output dataset path (defaults to the config's `dataset`).
        #[arg(long)]
        out: Option<String>,
        /// Number of trajectories.
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Video-only pretraining (future-frame objective alone).
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        /// Output checkpoint (defaults to the config's `checkpoint`).
        #[arg(long)]
        out: Option<String>,
    },
    /// Train the model (joint objective by default).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<String>,
        /// Resume / warm-start from this checkpoint.
        #[arg(long)]
        init: Option<String>,
        /// joint | pretrain-video | action-only
        #[arg(long, default_value = "joint")]
        mode: String,
    },
    /// Closed-loop evaluation of a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Output base path for the CSV/JSON pair.
        #[arg(long)]
        out: Option<String>,
    },
    /// Roll out episodes, optionally dumping observation frames as PPM.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Directory for PPM frame dumps.
        #[arg(long)]
        dump_frames: Option<String>,
    },
    /// Latency of action-only vs joint vs cached-video decoding.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: Option<String>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long)]
        out: Option<String>,
    },
    /// Print the blockwise attention rule table.
    InspectMask {
        /// Optional config supplying p and Δ.
        #[arg(long)]
        config: Option<String>,
        /// Action chunk length.
        #[arg(long)]
        p: Option<usize>,
        /// Future-frame stride.
        #[arg(long)]
        delta: Option<usize>,
        /// Let action tokens attend among themselves.
        #[arg(long, default_value_t = true)]
        intra_action: bool,
    },
    /// Train and evaluate one model per future-frame stride.
    AblateDelta {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strides, e.g. `0,2,4,8`.
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<usize>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Train causal and full-attention arms from one init and compare.
    AblateMask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("WAM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // Ignore the error if a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { common, out, n } => {
            let rc = common.load()?;
            let report = commands::gen_data(&rc, out.as_deref(), n)?;
            println!(
                "wrote {} trajectories to {} ({} successful)",
                report.written, report.path, report.successful
            );
        }
        Cmd::Pretrain { common, steps, out } => {
            let rc = common.load()?;
            let report = commands::train(
                &rc,
                TrainMode::PretrainVideo,
                steps,
                out.as_deref(),
                None,
                true,
            )?;
            print_train(&report);
        }
        Cmd::Train {
            common,
            steps,
            out,
            init,
            mode,
        } => {
            let rc = common.load()?;
            let mode: TrainMode = mode.parse()?;
            let report =
                commands::train(&rc, mode, steps, out.as_deref(), init.as_deref(), true)?;
            print_train(&report);
        }
        Cmd::Eval {
            common,
            ckpt,
            episodes,
            out,
        } => {
            let rc = common.load()?;
            let s = commands::eval(&rc, ckpt.as_deref(), episodes, out.as_deref())?;
            println!(
                "episodes {}  SR {:.3}  graded {:.3}  mean steps {:.1}",
                s.episodes, s.sr, s.graded, s.mean_steps
            );
        }
        Cmd::Rollout {
            common,
            ckpt,
            episodes,
            dump_frames,
        } => {
            let rc = common.load()?;
            let r = commands::rollout_cmd(&rc, ckpt.as_deref(), episodes, dump_frames.as_deref())?;
            println!(
                "episodes {}  SR {:.3}  graded {:.3}  mean steps {:.1}  frames dumped {}",
                r.episodes, r.summary.sr, r.summary.graded, r.summary.mean_steps, r.dumped_frames
            );
        }
        Cmd::Bench {
            common,
            ckpt,
            reps,
            out,
        } => {
            let rc = common.load()?;
            let b = commands::bench(&rc, ckpt.as_deref(), reps, out.as_deref())?;
            println!(
                "action-only {:.2} ms ({} tokens)  joint {:.2} ms ({} tokens)  cached video {:.2} ms  [{} reps]",
                b.action_only_ms,
                b.context_tokens,
                b.joint_ms,
                b.joint_tokens,
                b.cached_video_ms,
                b.repetitions
            );
        }
        Cmd::InspectMask {
            config,
            p,
            delta,
            intra_action,
        } => {
            let (p, delta, intra) = match config {
                Some(path) => {
                    let rc = RunConfig::load(&path)?;
                    (
                        p.unwrap_or(rc.chunk_len),
                        delta.unwrap_or(rc.stride),
                        rc.intra_action_attn,
                    )
                }
                None => (p.unwrap_or(8), delta.unwrap_or(4), intra_action),
            };
            print!("{}", commands::mask_table(p, delta, intra));
        }
        Cmd::AblateDelta {
            common,
            deltas,
            steps,
            out,
        } => {
            let rc = common.load()?;
            if deltas.is_empty() {
                return Err(crate::Error::Config("--deltas must not be empty".into()));
            }
            let rows = commands::ablate_delta(&rc, &deltas, steps, out.as_deref(), true)?;
            println!("delta,k,sr,graded");
            for r in rows {
                println!("{},{},{:.3},{:.3}", r.delta, r.k, r.sr, r.graded);
            }
        }
        Cmd::AblateMask { common, steps, out } => {
            let rc = common.load()?;
            let arms = commands::ablate_mask(&rc, steps, out.as_deref(), true)?;
            println!("mask_mode,sr,graded,action_leakage");
            for a in arms {
                println!(
                    "{},{:.3},{:.3},{:.3e}",
                    a.mask_mode, a.sr, a.graded, a.action_leakage
                );
            }
        }
    }
    Ok(())
}

fn print_train(r: &commands::TrainReport) {
    match (&r.first, &r.last) {
        (Some(f), Some(l)) => println!(
            "steps {}..{}  l_all {:.4} -> {:.4}  checkpoint {}  metrics {}",
            r.start_step, r.end_step, f.l_all, l.l_all, r.checkpoint, r.metrics_file
        ),
        _ => println!(
            "steps {}..{} (nothing to do)  checkpoint {}",
            r.start_step, r.end_step, r.checkpoint
        ),
    }
}

/// Entry point shared by the binary and the tests: parses `argv`, runs the
/// subcommand, and returns the process exit code.
pub fn cli(argv: Vec<String>) -> i32 {
    init_thread_pool();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
