//! Wall-clock comparison of the decoding paths.

use std::time::Instant;

use super::{cache_for_chunk, decode_actions, decode_joint, decode_video_from_cache, Observation};
use crate::diffcore::{Rng, Scalar};
use crate::model::{ModelConfig, Parameters};
use crate::Result;

/// Median decode latencies (milliseconds) with the sequence lengths that
/// explain them.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchReport {
    pub action_only_ms: f64,
    pub joint_ms: f64,
    pub cached_video_ms: f64,
    /// Tokens per velocity evaluation on the action-only path.
    pub context_tokens: usize,
    /// Tokens per velocity evaluation on the joint path.
    pub joint_tokens: usize,
    pub repetitions: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

const WARMUP: usize = 3;

/// Times the three decode paths over `repetitions` runs each (plus warmup
/// runs that are excluded) and reports medians with token counts.
pub fn bench_latency<E: Scalar>(
    cfg: &ModelConfig,
    params: &Parameters<E>,
    obs: &Observation,
    instr: &[u16],
    repetitions: usize,
) -> Result<BenchReport> {
    assert!(repetitions >= 1);
    let n = cfg.flow_steps;

    let mut action_times = Vec::with_capacity(repetitions);
    for i in 0..WARMUP + repetitions {
        let mut rng = Rng::seed_from(1000 + i as u64);
        let t = Instant::now();
        let out = decode_actions(cfg, params, obs, instr, &mut rng, n)?;
        let dt = t.elapsed().as_secs_f64() * 1e3;
        debug_assert_eq!(out.video_tokens, 0);
        if i >= WARMUP {
            action_times.push(dt);
        }
    }

    let mut joint_times = Vec::with_capacity(repetitions);
    for i in 0..WARMUP + repetitions {
        let mut rng = Rng::seed_from(2000 + i as u64);
        let t = Instant::now();
        let _ = decode_joint(cfg, params, obs, instr, &mut rng, n)?;
        if i >= WARMUP {
            joint_times.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }

    // Incremental cost of adding video to a finished action decode:
    // cache build plus N cached extensions.
    let mut chunk_rng = Rng::seed_from(3000);
    let chunk = decode_actions(cfg, params, obs, instr, &mut chunk_rng, n)?.chunk_norm;
    let mut cached_times = Vec::with_capacity(repetitions);
    for i in 0..WARMUP + repetitions {
        let mut rng = Rng::seed_from(4000 + i as u64);
        let t = Instant::now();
        let mut cache = cache_for_chunk(cfg, params, obs, instr, &chunk)?;
        let _ = decode_video_from_cache(cfg, params, &mut cache, &mut rng, n)?;
        if i >= WARMUP {
            cached_times.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }

    Ok(BenchReport {
        action_only_ms: median(action_times),
        joint_ms: median(joint_times),
        cached_video_ms: median(cached_times),
        context_tokens: cfg.layout(false).total(),
        joint_tokens: cfg.layout(true).total(),
        repetitions,
    })
}
