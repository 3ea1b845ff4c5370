//! View composition and exact pixel-patch latents.
//!
//! The learned latent encoder of full-scale systems is replaced here by an
//! exactly invertible pixel patching: values map `[0,1] -> [-1,1]` in f64,
//! so `unpatchify(patchify(x)) == x` bit-for-bit on real frames and
//! flow-matching targets stay well defined.

use crate::diffcore::{Scalar, Tensor};
use crate::toyworld::Image;

/// Merges the three camera views along the width: `[left | front | right]`.
pub fn compose_views(left: &Image, front: &Image, right: &Image) -> Image {
    assert!(
        left.h == front.h && front.h == right.h && left.w == front.w && front.w == right.w,
        "compose_views: view shapes differ"
    );
    let (h, w) = (front.h, front.w);
    let mut out = Image::black(h, 3 * w);
    for (v, img) in [left, front, right].into_iter().enumerate() {
        for r in 0..h {
            for c in 0..w {
                out.set_pixel(r, v * w + c, img.pixel(r, c));
            }
        }
    }
    out
}

/// Splits a composite image back into `[left, front, right]`.
pub fn decompose_views(composite: &Image) -> [Image; 3] {
    assert_eq!(composite.w % 3, 0, "decompose_views: width not divisible by 3");
    let w = composite.w / 3;
    let h = composite.h;
    let mut views = [Image::black(h, w), Image::black(h, w), Image::black(h, w)];
    for (v, img) in views.iter_mut().enumerate() {
        for r in 0..h {
            for c in 0..w {
                img.set_pixel(r, c, composite.pixel(r, v * w + c));
            }
        }
    }
    views
}

/// One square patch of a frame, flattened to a vector in `[-1, 1]` with its
/// grid position and the index of the frame it came from (0 = current
/// observation, `k >= 1` = the k-th future frame).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLatent {
    pub values: Vec<f64>,
    pub row: usize,
    pub col: usize,
    pub frame_index: usize,
}

impl PatchLatent {
    pub fn dim(patch: usize) -> usize {
        patch * patch * 3
    }
}

/// Splits an image into non-overlapping `patch`×`patch` latents in row-major
/// grid order. Image extents must divide evenly by the patch size.
pub fn patchify(img: &Image, patch: usize, frame_index: usize) -> Vec<PatchLatent> {
    assert!(
        img.h % patch == 0 && img.w % patch == 0,
        "patchify: image {}x{} not divisible by patch {patch}",
        img.h,
        img.w
    );
    let grid_rows = img.h / patch;
    let grid_cols = img.w / patch;
    let mut out = Vec::with_capacity(grid_rows * grid_cols);
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            let mut values = Vec::with_capacity(PatchLatent::dim(patch));
            for pr in 0..patch {
                for pc in 0..patch {
                    let px = img.pixel(gr * patch + pr, gc * patch + pc);
                    for ch in 0..3 {
                        values.push(2.0 * f64::from(px[ch]) - 1.0);
                    }
                }
            }
            out.push(PatchLatent {
                values,
                row: gr,
                col: gc,
                frame_index,
            });
        }
    }
    out
}

/// Exact inverse of [`patchify`] for one frame's latents.
pub fn unpatchify(latents: &[PatchLatent], h: usize, w: usize, patch: usize) -> Image {
    assert_eq!(
        latents.len(),
        (h / patch) * (w / patch),
        "unpatchify: latent count does not tile {h}x{w} with patch {patch}"
    );
    let mut img = Image::black(h, w);
    for latent in latents {
        assert_eq!(latent.values.len(), PatchLatent::dim(patch));
        let mut it = latent.values.iter();
        for pr in 0..patch {
            for pc in 0..patch {
                let r = ((it.next().unwrap() + 1.0) * 0.5) as f32;
                let g = ((it.next().unwrap() + 1.0) * 0.5) as f32;
                let b = ((it.next().unwrap() + 1.0) * 0.5) as f32;
                img.set_pixel(latent.row * patch + pr, latent.col * patch + pc, [r, g, b]);
            }
        }
    }
    img
}

/// Stacks latent vectors into a `[len × dim]` tensor in the given order.
pub fn latent_matrix<E: Scalar>(latents: &[PatchLatent]) -> Tensor<E> {
    assert!(!latents.is_empty(), "latent_matrix: no latents");
    let dim = latents[0].values.len();
    let mut data = Vec::with_capacity(latents.len() * dim);
    for l in latents {
        for &v in &l.values {
            data.push(E::from_f64(v).unwrap());
        }
    }
    Tensor::new(vec![latents.len(), dim], data)
}
