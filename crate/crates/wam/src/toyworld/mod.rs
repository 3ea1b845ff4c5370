//! Synthetic multi-view tabletop manipulation environment.
//!
//! A gripper pushes a colored block to a goal region on the unit square.
//! The environment produces instruction-conditioned demonstrations through a
//! scripted two-phase expert and scores closed-loop rollouts. Dynamics are
//! Markov and deterministic; rendering is a pure function of state.

mod demo;
mod render;

pub use demo::{
    expert_action, generate_demo, instruction_text, instruction_tokens, reset_state, state_vec,
    Task, Trajectory, NUM_TASKS, VOCAB,
};
pub use render::{render_view, Image, View, PALETTE};

/// Per-component velocity bound per step.
pub const V_MAX: f64 = 0.05;
/// Gripper-object distance at which a grasp can engage.
pub const GRASP_RADIUS: f64 = 0.06;
/// Object-goal distance that counts as placed.
pub const SUCCESS_RADIUS: f64 = 0.05;
/// Expert releases once the carried object is this close to the goal.
pub const RELEASE_RADIUS: f64 = 0.02;

pub const STATE_DIM: usize = 5;
pub const ACTION_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub gripper: [f64; 2],
    pub object: [f64; 2],
    pub goal: [f64; 2],
    pub grip: bool,
    pub color: usize,
    pub steps: u32,
}

/// Planar velocity plus a real grip command thresholded at 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub velocity: [f64; 2],
    pub grip: f64,
}

impl Action {
    pub const HOLD: Action = Action {
        velocity: [0.0, 0.0],
        grip: 0.0,
    };

    pub fn to_array(self) -> [f32; ACTION_DIM] {
        [
            self.velocity[0] as f32,
            self.velocity[1] as f32,
            self.grip as f32,
        ]
    }

    pub fn from_array(a: [f32; ACTION_DIM]) -> Self {
        Action {
            velocity: [a[0] as f64, a[1] as f64],
            grip: a[2] as f64,
        }
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp01(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

/// Advances the world by one step. The gripper moves by its clipped
/// velocity; a held object tracks the gripper's realized displacement; a
/// grasp engages only when the gripper ends the step within
/// [`GRASP_RADIUS`] of the object.
pub fn step(state: &WorldState, action: &Action) -> WorldState {
    let vel = [
        action.velocity[0].clamp(-V_MAX, V_MAX),
        action.velocity[1].clamp(-V_MAX, V_MAX),
    ];
    let new_gripper = clamp01([state.gripper[0] + vel[0], state.gripper[1] + vel[1]]);
    let delta = [
        new_gripper[0] - state.gripper[0],
        new_gripper[1] - state.gripper[1],
    ];
    let want_grip = action.grip >= 0.5;

    let mut object = state.object;
    let grip = if state.grip && want_grip {
        object = clamp01([object[0] + delta[0], object[1] + delta[1]]);
        true
    } else {
        !state.grip && want_grip && dist(new_gripper, object) <= GRASP_RADIUS
    };

    WorldState {
        gripper: new_gripper,
        object,
        goal: state.goal,
        grip,
        color: state.color,
        steps: state.steps + 1,
    }
}

/// Task completion: object within [`SUCCESS_RADIUS`] of the goal with the
/// grip released.
pub fn success(state: &WorldState) -> bool {
    !state.grip && dist(state.object, state.goal) <= SUCCESS_RADIUS
}

/// Graded score mirroring the pick-and-place protocol: half credit for a
/// grasp, half for the final placement.
pub fn graded_score(grasped: bool, placed: bool) -> f64 {
    0.5 * f64::from(grasped) + 0.5 * f64::from(placed)
}
