//! Minimal deterministic differentiable-tensor engine.
//!
//! Everything the model needs and nothing more: dense row-major tensors in a
//! configurable element type (f32 for training speed, f64 for gradient
//! oracles), a define-by-run computation record with reverse-mode backward,
//! a bias-corrected Adam step, and a fixed, portable random number generator
//! (xoshiro256** seeded via SplitMix64, normals via Box-Muller) so that every
//! sampled stream is reproducible across runs and platforms.

mod adam;
pub mod fdcheck;
mod kernels;
mod record;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamParams, AdamState};
pub use record::{MaskPlane, Record, Var};
pub use rng::{derive_seed, Rng};
pub use tensor::{Precision, Scalar, Tensor};

/// Converts an `f64` constant into the active element type.
#[inline]
pub fn e<E: Scalar>(x: f64) -> E {
    E::from_f64(x).expect("f64 constant representable in element type")
}
