//! Token-id space of the synthetic corpus.
//!
//! The vocabulary is integer-only and carved into fixed regions:
//!
//! ```text
//! [specials | template words | filler | surface pool | literal cues | per-group gloss+cues]
//! ```
//!
//! Context tokens (filler and cues) never overlap the surface pool, so a
//! sentence contains exactly the one PIE occurrence it was built around.
//! Group gloss regions are pairwise disjoint, which is what makes meaning
//! groups recoverable by clustering.

use alloc::vec::Vec;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const MASK: u32 = 2;
pub const SENSE_IDIOMATIC: u32 = 3;
pub const SENSE_LITERAL: u32 = 4;
pub const N_SPECIAL: usize = 5;

pub const N_TEMPLATE_WORDS: usize = 24;
pub const N_FILLER: usize = 60;
pub const N_SURFACE_POOL: usize = 48;
pub const N_LITERAL_CUES: usize = 16;
pub const GLOSS_PER_GROUP: usize = 6;
pub const CUES_PER_GROUP: usize = 4;

/// Where each vocabulary region starts for a given group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabLayout {
    pub n_groups: usize,
}

impl VocabLayout {
    pub fn new(n_groups: usize) -> Self {
        VocabLayout { n_groups }
    }

    pub fn template_base(&self) -> u32 {
        N_SPECIAL as u32
    }

    pub fn filler_base(&self) -> u32 {
        self.template_base() + N_TEMPLATE_WORDS as u32
    }

    pub fn surface_base(&self) -> u32 {
        self.filler_base() + N_FILLER as u32
    }

    pub fn literal_cue_base(&self) -> u32 {
        self.surface_base() + N_SURFACE_POOL as u32
    }

    fn group_base(&self, group: usize) -> u32 {
        debug_assert!(group < self.n_groups);
        self.literal_cue_base()
            + N_LITERAL_CUES as u32
            + (group * (GLOSS_PER_GROUP + CUES_PER_GROUP)) as u32
    }

    pub fn vocab_size(&self) -> usize {
        self.group_base(self.n_groups - 1) as usize + GLOSS_PER_GROUP + CUES_PER_GROUP
    }

    pub fn template_word(&self, i: usize) -> u32 {
        debug_assert!(i < N_TEMPLATE_WORDS);
        self.template_base() + i as u32
    }

    pub fn filler_token(&self, i: usize) -> u32 {
        debug_assert!(i < N_FILLER);
        self.filler_base() + i as u32
    }

    pub fn surface_token(&self, i: usize) -> u32 {
        debug_assert!(i < N_SURFACE_POOL);
        self.surface_base() + i as u32
    }

    pub fn literal_cue(&self, i: usize) -> u32 {
        debug_assert!(i < N_LITERAL_CUES);
        self.literal_cue_base() + i as u32
    }

    pub fn gloss_token(&self, group: usize, i: usize) -> u32 {
        debug_assert!(i < GLOSS_PER_GROUP);
        self.group_base(group) + i as u32
    }

    /// Dedicated idiomatic cue token of a group.
    pub fn cue_token(&self, group: usize, i: usize) -> u32 {
        debug_assert!(i < CUES_PER_GROUP);
        self.group_base(group) + (GLOSS_PER_GROUP + i) as u32
    }

    /// The gloss-adjacent cue pool idiomatic contexts draw from: the group's
    /// cue tokens plus its gloss vocabulary.
    pub fn idiomatic_cue_pool(&self, group: usize) -> Vec<u32> {
        let mut pool: Vec<u32> = (0..CUES_PER_GROUP).map(|i| self.cue_token(group, i)).collect();
        pool.extend((0..GLOSS_PER_GROUP).map(|i| self.gloss_token(group, i)));
        pool
    }

    pub fn literal_cue_pool(&self) -> Vec<u32> {
        (0..N_LITERAL_CUES).map(|i| self.literal_cue(i)).collect()
    }

    pub fn is_surface_token(&self, t: u32) -> bool {
        t >= self.surface_base() && t < self.literal_cue_base()
    }
}

/// One token of a prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateTok {
    /// A fixed template word (index into the template-word region).
    Word(usize),
    /// Placeholder replaced by the PIE surface tokens.
    Pie,
    /// The single mask slot.
    Mask,
}

use TemplateTok::{Mask, Pie, Word};

pub const N_TEMPLATES_PER_KIND: usize = 5;

/// Five sense-classification templates. All share the "the phrase ... is"
/// scaffold (words 0..3) and diverge afterwards, mirroring how natural
/// templates vary around a fixed frame.
pub const TYPE_CLS_TEMPLATES: [&[TemplateTok]; N_TEMPLATES_PER_KIND] = [
    &[Word(0), Word(1), Pie, Word(2), Word(3), Mask],
    &[Word(0), Word(1), Pie, Word(2), Word(4), Word(5), Mask, Word(6)],
    &[Word(0), Word(1), Pie, Word(2), Word(7), Word(8), Mask, Word(9)],
    &[Word(0), Word(1), Pie, Word(2), Word(10), Mask, Word(11)],
    &[Word(0), Word(1), Pie, Word(12), Word(13), Mask, Word(14)],
];

/// Five definition-generation templates.
pub const DEFN_GEN_TEMPLATES: [&[TemplateTok]; N_TEMPLATES_PER_KIND] = [
    &[Word(15), Word(16), Word(17), Word(1), Pie, Word(2), Mask],
    &[Word(18), Word(17), Word(1), Pie, Word(2), Mask],
    &[Word(0), Word(1), Pie, Word(19), Mask],
    &[Word(0), Word(1), Pie, Word(2), Word(20), Word(21), Mask],
    &[Word(0), Word(1), Pie, Word(2), Word(22), Word(23), Mask],
];

/// Instantiates a template: `pie` replaces the placeholder and `mask_fill`
/// replaces the mask slot (pass `&[MASK]` to keep the mask itself).
pub fn render_template(
    layout: &VocabLayout,
    template: &[TemplateTok],
    pie: &[u32],
    mask_fill: &[u32],
) -> Vec<u32> {
    let mut out = Vec::with_capacity(template.len() + pie.len() + mask_fill.len());
    for tok in template {
        match tok {
            Word(i) => out.push(layout.template_word(*i)),
            Pie => out.extend_from_slice(pie),
            Mask => out.extend_from_slice(mask_fill),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_do_not_overlap() {
        let l = VocabLayout::new(12);
        assert!(l.template_base() >= N_SPECIAL as u32);
        assert!(l.filler_base() > l.template_base());
        assert!(l.surface_base() > l.filler_base());
        assert!(l.literal_cue_base() > l.surface_base());
        assert!(l.gloss_token(0, 0) >= l.literal_cue_base() + N_LITERAL_CUES as u32);
        // distinct groups have disjoint gloss/cue regions
        let g0: alloc::vec::Vec<u32> = l.idiomatic_cue_pool(0);
        let g1: alloc::vec::Vec<u32> = l.idiomatic_cue_pool(1);
        assert!(g0.iter().all(|t| !g1.contains(t)));
        assert_eq!(l.vocab_size(), 5 + 24 + 60 + 48 + 16 + 12 * 10);
    }

    #[test]
    fn templates_have_exactly_one_mask() {
        for t in TYPE_CLS_TEMPLATES.iter().chain(DEFN_GEN_TEMPLATES.iter()) {
            let masks = t.iter().filter(|x| matches!(x, TemplateTok::Mask)).count();
            let pies = t.iter().filter(|x| matches!(x, TemplateTok::Pie)).count();
            assert_eq!(masks, 1);
            assert_eq!(pies, 1);
        }
    }

    #[test]
    fn render_substitutes_pie_and_mask() {
        let l = VocabLayout::new(2);
        let pie = [l.surface_token(0), l.surface_token(1)];
        let rendered = render_template(&l, TYPE_CLS_TEMPLATES[0], &pie, &[MASK]);
        assert_eq!(rendered.iter().filter(|t| **t == MASK).count(), 1);
        assert!(rendered.windows(2).any(|w| w == pie));
        let filled = render_template(&l, TYPE_CLS_TEMPLATES[0], &pie, &[SENSE_LITERAL]);
        assert!(!filled.contains(&MASK));
        assert_eq!(filled.len(), rendered.len());
    }
}
