//! Closed-loop control: decode a chunk, execute its first `h` actions,
//! re-observe, repeat until success or the step budget runs out.

use super::{decode_actions, observe, Observation};
use crate::diffcore::{Rng, Scalar};
use crate::model::{ModelConfig, Parameters};
use crate::toyworld::{
    expert_action, graded_score, reset_state, step, success, Action, Task, WorldState,
};
use crate::Result;

#[derive(Debug, Clone, serde::Serialize)]
pub struct RolloutResult {
    pub success: bool,
    /// 0.5 for ever grasping the object plus 0.5 for final placement.
    pub graded: f64,
    pub steps: u32,
    #[serde(skip)]
    pub trace: Vec<Observation>,
}

/// Plans one chunk per replan point. The policy sees the world only through
/// [`observe`]-style observations rendered from the true state.
pub type ChunkPolicy<'a> = dyn FnMut(&WorldState, &mut Rng) -> Result<Vec<Action>> + 'a;

/// Chunk policy backed by action-only decoding of a model.
pub fn model_policy<'a, E: Scalar>(
    cfg: &'a ModelConfig,
    params: &'a Parameters<E>,
    instr: &'a [u16],
    n_steps: usize,
) -> impl FnMut(&WorldState, &mut Rng) -> Result<Vec<Action>> + 'a {
    move |state, rng| {
        let obs = observe(state, cfg);
        let out = decode_actions(cfg, params, &obs, instr, rng, n_steps)?;
        Ok(out.actions)
    }
}

/// Chunk policy that unrolls the scripted expert `p` steps ahead. Used as
/// the harness upper bound: any learned policy is evaluated by the same
/// rollout loop that this one saturates.
pub fn expert_chunk_policy(p: usize) -> impl FnMut(&WorldState, &mut Rng) -> Result<Vec<Action>> {
    move |state, _rng| {
        let mut sim = *state;
        let mut chunk = Vec::with_capacity(p);
        for _ in 0..p {
            let a = expert_action(&sim);
            sim = step(&sim, &a);
            chunk.push(a);
        }
        Ok(chunk)
    }
}

/// Runs one episode. `execute_horizon` actions of each decoded chunk are
/// executed before replanning; the episode stops at success or `max_steps`.
pub fn rollout(
    env_seed: u64,
    task: Task,
    max_steps: u32,
    execute_horizon: usize,
    policy: &mut ChunkPolicy<'_>,
    decode_rng: &mut Rng,
    record_trace: bool,
    trace_cfg: Option<&ModelConfig>,
) -> Result<RolloutResult> {
    assert!(execute_horizon >= 1, "execute horizon must be at least 1");
    let mut env_rng = Rng::seed_from(env_seed);
    let mut state = reset_state(&mut env_rng, task);
    let mut grasped = false;
    let mut trace = Vec::new();
    let mut steps = 0u32;

    'control: while steps < max_steps {
        if record_trace {
            if let Some(cfg) = trace_cfg {
                trace.push(observe(&state, cfg));
            }
        }
        let chunk = policy(&state, decode_rng)?;
        assert!(!chunk.is_empty(), "policy returned an empty chunk");
        for action in chunk.iter().take(execute_horizon) {
            state = step(&state, action);
            steps += 1;
            grasped |= state.grip;
            if success(&state) {
                break 'control;
            }
            if steps >= max_steps {
                break 'control;
            }
        }
    }

    let placed = success(&state);
    Ok(RolloutResult {
        success: placed,
        graded: graded_score(grasped, placed),
        steps,
        trace,
    })
}
