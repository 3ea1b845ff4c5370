//! Unified token sequence machinery: view composition, patch latents,
//! stride-based future-frame selection, the blockwise causal mask, and
//! per-modality positional encodings.
//!
//! The sequence order is fixed to `[T_o; T_s; T_a; T_f]` — current
//! observation patches, state token(s), action tokens, then future-frame
//! patches — so that the action-only context is literally a prefix and
//! cached decoding never reorders anything.

mod encode;
mod patch;

pub use encode::{
    assemble_sequence, denormalize_action, embed_future, extract_window, normalize_action,
    normalize_state, positional_encoding, AssembleCfg, PosKind, Projectors, Window,
};
pub use patch::{compose_views, decompose_views, latent_matrix, patchify, unpatchify, PatchLatent};

use crate::diffcore::MaskPlane;

/// Attention-permission matrix over the unified sequence
/// (query row, key column).
pub type BlockMask = MaskPlane;

/// Which modality block a sequence position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Obs,
    State,
    Action,
    Future,
}

/// Mask regime: `Causal` applies the blockwise rules; `Full` lets every
/// token attend everywhere (the ablation arm).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MaskMode {
    Causal,
    Full,
}

/// Token counts and offsets of the unified sequence `[T_o; T_s; T_a; T_f]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLayout {
    pub n_o: usize,
    pub n_s: usize,
    pub n_a: usize,
    pub n_f: usize,
    /// Future-frame count; `n_f = k * frame_tokens`.
    pub k: usize,
    /// Visual tokens per composite frame.
    pub frame_tokens: usize,
}

impl SequenceLayout {
    pub fn new(frame_tokens: usize, n_s: usize, p: usize, k: usize) -> Self {
        SequenceLayout {
            n_o: frame_tokens,
            n_s,
            n_a: p,
            n_f: k * frame_tokens,
            k,
            frame_tokens,
        }
    }

    pub fn total(&self) -> usize {
        self.n_o + self.n_s + self.n_a + self.n_f
    }

    /// Starting index of each block in `[T_o; T_s; T_a; T_f]` order.
    pub fn offsets(&self) -> [usize; 4] {
        [
            0,
            self.n_o,
            self.n_o + self.n_s,
            self.n_o + self.n_s + self.n_a,
        ]
    }

    /// Length of the action-decoding context `[T_o; T_s; T_a]`.
    pub fn prefix_len(&self) -> usize {
        self.n_o + self.n_s + self.n_a
    }

    pub fn block_of(&self, index: usize) -> Block {
        let [_, s, a, f] = self.offsets();
        if index < s {
            Block::Obs
        } else if index < a {
            Block::State
        } else if index < f {
            Block::Action
        } else {
            Block::Future
        }
    }

    /// Layout of the same window without any future-frame tokens.
    pub fn without_future(&self) -> SequenceLayout {
        SequenceLayout {
            n_f: 0,
            k: 0,
            ..*self
        }
    }
}

/// Future-frame sample points within a `p`-step action horizon at stride
/// `delta`: indices `{kΔ : k = 1..⌊p/Δ⌋}` relative to the window start.
/// A stride of zero disables future prediction entirely.
pub fn future_frame_indices(p: usize, delta: usize) -> (Vec<usize>, usize) {
    assert!(p >= 1, "chunk length must be at least 1");
    if delta == 0 {
        return (Vec::new(), 0);
    }
    let k = p / delta;
    ((1..=k).map(|i| i * delta).collect(), k)
}

/// Builds the blockwise attention mask for a layout.
///
/// Causal rules: `T_o`/`T_s` rows may attend within `{T_o, T_s}` only;
/// `T_a` rows add the action block itself when `intra_action` is set
/// (otherwise strictly `{T_o, T_s}`); `T_f` rows attend everywhere.
/// `MaskMode::Full` allows everything.
pub fn build_block_mask(layout: &SequenceLayout, mode: MaskMode, intra_action: bool) -> BlockMask {
    let n = layout.total();
    let mut allowed = vec![false; n * n];
    for q in 0..n {
        for kcol in 0..n {
            let ok = match mode {
                MaskMode::Full => true,
                MaskMode::Causal => match (layout.block_of(q), layout.block_of(kcol)) {
                    (Block::Obs | Block::State, Block::Obs | Block::State) => true,
                    (Block::Obs | Block::State, _) => false,
                    (Block::Action, Block::Obs | Block::State) => true,
                    (Block::Action, Block::Action) => intra_action,
                    (Block::Action, Block::Future) => false,
                    (Block::Future, _) => true,
                },
            };
            allowed[q * n + kcol] = ok;
        }
    }
    MaskPlane::new(n, n, allowed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Rng;

    #[test]
    fn future_indices_reference_strides() {
        assert_eq!(future_frame_indices(48, 12), (vec![12, 24, 36, 48], 4));
        assert_eq!(future_frame_indices(48, 48), (vec![48], 1));
        assert_eq!(future_frame_indices(8, 3), (vec![3, 6], 2));
        assert_eq!(future_frame_indices(8, 0), (vec![], 0));
    }

    #[test]
    fn mask_rule_entries() {
        let layout = SequenceLayout::new(48, 1, 8, 2);
        let m = build_block_mask(&layout, MaskMode::Causal, true);
        let [o, s, a, f] = layout.offsets();
        // action row, future column: blocked
        assert!(!m.allowed(a, f));
        // future row, action column: allowed
        assert!(m.allowed(f, a));
        // observation row, action column: blocked
        assert!(!m.allowed(o, a));
        // state and observation attend each other
        assert!(m.allowed(s, o) && m.allowed(o, s));
    }

    #[test]
    fn mask_rule_table_brute_force_over_random_layouts() {
        let mut rng = Rng::seed_from(21);
        for _ in 0..20 {
            let layout = SequenceLayout::new(
                1 + rng.below(60),
                1 + rng.below(3),
                1 + rng.below(12),
                rng.below(5),
            );
            let intra = rng.below(2) == 0;
            let m = build_block_mask(&layout, MaskMode::Causal, intra);
            let n = layout.total();
            for q in 0..n {
                let mut any = false;
                for k in 0..n {
                    let expect = match (layout.block_of(q), layout.block_of(k)) {
                        (Block::Obs | Block::State, b) => matches!(b, Block::Obs | Block::State),
                        (Block::Action, Block::Obs | Block::State) => true,
                        (Block::Action, Block::Action) => intra,
                        (Block::Action, Block::Future) => false,
                        (Block::Future, _) => true,
                    };
                    assert_eq!(m.allowed(q, k), expect, "layout {layout:?} q={q} k={k}");
                    any |= m.allowed(q, k);
                }
                assert!(any, "row {q} fully masked");
            }
        }
    }

    #[test]
    fn full_mode_allows_everything() {
        let layout = SequenceLayout::new(4, 1, 2, 1);
        let m = build_block_mask(&layout, MaskMode::Full, true);
        assert!(m.allowed.iter().all(|&b| b));
    }

    #[test]
    fn layout_offsets_partition_total() {
        let layout = SequenceLayout::new(48, 1, 8, 2);
        let [o, s, a, f] = layout.offsets();
        assert_eq!((o, s, a, f), (0, 48, 49, 57));
        assert_eq!(layout.total(), 153);
        assert!(o < s && s < a && a < f && f < layout.total());
        assert_eq!(layout.prefix_len() + layout.n_f, layout.total());
    }
}
