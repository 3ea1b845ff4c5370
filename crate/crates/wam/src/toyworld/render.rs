//! Deterministic rasterizer for the three camera views.
//!
//! The front view is a full top-down raster of the unit square: the goal as
//! a gray outline square, the object as a filled disc in its palette color,
//! and the gripper as a white cross. Left/right views are 2x-zoom crops
//! centered near the gripper (wrist-camera surrogates); they image the scene
//! without the gripper marker itself, and regions outside the unit square
//! render black. Every pixel averages a 4x4 subsample grid, so shape
//! positions survive at sub-pixel precision.

use super::WorldState;

/// Object palette: red, green, blue, yellow.
pub const PALETTE: [[f32; 3]; 4] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.8, 0.15],
    [0.2, 0.35, 0.9],
    [0.85, 0.8, 0.1],
];

const GOAL_HALF: f64 = 0.09;
const GOAL_THICK: f64 = 0.035;
const OBJECT_RADIUS: f64 = 0.08;
const CROSS_ARM: f64 = 0.07;
const CROSS_THICK: f64 = 0.022;
const GOAL_GRAY: [f32; 3] = [0.5, 0.5, 0.5];
const GRIPPER_WHITE: [f32; 3] = [1.0, 1.0, 1.0];
/// Wrist views cover half the world span of the front view.
const WRIST_SPAN: f64 = 0.5;
/// Wrist view centers sit at the gripper offset by this much in x.
const WRIST_OFFSET: f64 = 0.1;
const SUBSAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Left,
    Front,
    Right,
}

impl View {
    pub const ALL: [View; 3] = [View::Left, View::Front, View::Right];
}

/// H×W RGB image, row-major, channel-last, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn black(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * self.w + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [f32; 3]) {
        let i = (r * self.w + c) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Scene color at a world point. Draw priority: gripper over object over
/// goal outline over black table.
fn sample_scene(state: &WorldState, x: f64, y: f64, with_gripper: bool) -> [f32; 3] {
    if with_gripper {
        let dx = (x - state.gripper[0]).abs();
        let dy = (y - state.gripper[1]).abs();
        if (dx <= CROSS_ARM && dy <= CROSS_THICK) || (dy <= CROSS_ARM && dx <= CROSS_THICK) {
            return GRIPPER_WHITE;
        }
    }
    let ox = x - state.object[0];
    let oy = y - state.object[1];
    if ox * ox + oy * oy <= OBJECT_RADIUS * OBJECT_RADIUS {
        return PALETTE[state.color % PALETTE.len()];
    }
    let gd = (x - state.goal[0]).abs().max((y - state.goal[1]).abs());
    if gd <= GOAL_HALF && gd >= GOAL_HALF - GOAL_THICK {
        return GOAL_GRAY;
    }
    [0.0, 0.0, 0.0]
}

/// Renders one camera view at the requested resolution.
pub fn render_view(state: &WorldState, view: View, h: usize, w: usize) -> Image {
    assert!(h >= 8 && w >= 8, "render_view: resolution below 8x8");
    // World rectangle imaged by this view: x spans [x0, x0+span] left to
    // right, y spans [y0, y0+span] bottom to top (row 0 is the top).
    let (x0, y0, span, with_gripper) = match view {
        View::Front => (0.0, 0.0, 1.0, true),
        View::Left => (
            state.gripper[0] - WRIST_OFFSET - WRIST_SPAN / 2.0,
            state.gripper[1] - WRIST_SPAN / 2.0,
            WRIST_SPAN,
            false,
        ),
        View::Right => (
            state.gripper[0] + WRIST_OFFSET - WRIST_SPAN / 2.0,
            state.gripper[1] - WRIST_SPAN / 2.0,
            WRIST_SPAN,
            false,
        ),
    };

    let mut img = Image::black(h, w);
    let s = SUBSAMPLES as f64;
    let inv_n = 1.0 / (SUBSAMPLES * SUBSAMPLES) as f64;
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f64; 3];
            for si in 0..SUBSAMPLES {
                for sj in 0..SUBSAMPLES {
                    let u = (c as f64 + (sj as f64 + 0.5) / s) / w as f64;
                    let v = (r as f64 + (si as f64 + 0.5) / s) / h as f64;
                    let x = x0 + u * span;
                    let y = y0 + (1.0 - v) * span;
                    if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
                        let rgb = sample_scene(state, x, y, with_gripper);
                        acc[0] += f64::from(rgb[0]);
                        acc[1] += f64::from(rgb[1]);
                        acc[2] += f64::from(rgb[2]);
                    }
                }
            }
            img.set_pixel(
                r,
                c,
                [
                    (acc[0] * inv_n) as f32,
                    (acc[1] * inv_n) as f32,
                    (acc[2] * inv_n) as f32,
                ],
            );
        }
    }
    img
}
