//! PIE lexicon generation: surface forms, definition glosses, meaning
//! groups, and idiomaticity ratios.

use alloc::vec::Vec;

use crate::corpus::vocab::{VocabLayout, GLOSS_PER_GROUP, N_SURFACE_POOL};
use crate::error::{CoreError, CoreResult};
use crate::rng::Rng;

/// One potentially idiomatic expression.
#[derive(Debug, Clone, PartialEq)]
pub struct PieLexiconEntry {
    pub pie_id: u32,
    /// 2-4 surface tokens, drawn from the surface pool.
    pub surface: Vec<u32>,
    /// 3-6 gloss tokens from the group's gloss vocabulary; the group anchor
    /// token always participates, so same-group glosses overlap.
    pub definition_gloss: Vec<u32>,
    pub group_id: usize,
    /// Target fraction of idiomatic usages for this PIE.
    pub idiomaticity_ratio: f64,
}

/// True when `needle` occurs as a contiguous subsequence of `hay`.
fn contains_subseq(hay: &[u32], needle: &[u32]) -> bool {
    needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

fn draw_surface(layout: &VocabLayout, rng: &mut Rng, existing: &[Vec<u32>]) -> CoreResult<Vec<u32>> {
    for _ in 0..1000 {
        let len = rng.range_inclusive(2, 4);
        let idx = rng.sample_distinct(N_SURFACE_POOL, len);
        let cand: Vec<u32> = idx.into_iter().map(|i| layout.surface_token(i)).collect();
        let clashes = existing
            .iter()
            .any(|s| contains_subseq(s, &cand) || contains_subseq(&cand, s));
        if !clashes {
            return Ok(cand);
        }
    }
    Err(CoreError::Generation(alloc::string::String::from(
        "could not draw a surface form free of containment clashes",
    )))
}

/// Draws the per-PIE idiomaticity ratio from the three-bucket mixture:
/// 70% mid-range, 15% heavily idiomatic, 15% heavily literal. The extreme
/// buckets are what the skew analysis later keys on.
fn draw_ratio(rng: &mut Rng) -> f64 {
    let p = rng.uniform();
    if p < 0.70 {
        rng.uniform_in(0.30, 0.90)
    } else if p < 0.85 {
        rng.uniform_in(0.86, 0.97)
    } else {
        rng.uniform_in(0.03, 0.14)
    }
}

/// Generates `n_pies` expressions across `n_groups` meaning groups. Every
/// group receives at least two PIEs so clustering has something to find.
pub fn generate_lexicon(
    seed: u64,
    n_pies: usize,
    n_groups: usize,
) -> CoreResult<Vec<PieLexiconEntry>> {
    if n_groups < 2 || n_pies < n_groups {
        return Err(CoreError::InvalidConfig(alloc::format!(
            "need n_pies >= n_groups >= 2, got {n_pies} / {n_groups}"
        )));
    }
    if n_pies < 2 * n_groups {
        return Err(CoreError::InvalidConfig(alloc::format!(
            "{n_pies} PIEs cannot give every one of {n_groups} groups two members"
        )));
    }
    let layout = VocabLayout::new(n_groups);
    let mut rng = Rng::new(seed).fork("lexicon");

    // two guaranteed members per group, remainder spread at random
    let mut group_of: Vec<usize> = (0..n_pies)
        .map(|i| if i < 2 * n_groups { i % n_groups } else { 0 })
        .collect();
    for slot in group_of.iter_mut().skip(2 * n_groups) {
        *slot = rng.below(n_groups);
    }
    rng.shuffle(&mut group_of);

    let mut entries = Vec::with_capacity(n_pies);
    let mut surfaces: Vec<Vec<u32>> = Vec::with_capacity(n_pies);
    for (i, &group_id) in group_of.iter().enumerate() {
        let surface = draw_surface(&layout, &mut rng, &surfaces)?;
        surfaces.push(surface.clone());

        let extra = rng.range_inclusive(2, GLOSS_PER_GROUP - 1);
        let mut gloss: Vec<u32> = alloc::vec![layout.gloss_token(group_id, 0)];
        let others = rng.sample_distinct(GLOSS_PER_GROUP - 1, extra);
        gloss.extend(others.into_iter().map(|j| layout.gloss_token(group_id, j + 1)));
        rng.shuffle(&mut gloss[..]);

        entries.push(PieLexiconEntry {
            pie_id: i as u32,
            surface,
            definition_gloss: gloss,
            group_id,
            idiomaticity_ratio: draw_ratio(&mut rng),
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn rejects_underfilled_groups() {
        assert!(matches!(
            generate_lexicon(1, 12, 12),
            Err(CoreError::InvalidConfig(_))
        ));
        assert!(generate_lexicon(1, 24, 12).is_ok());
        assert!(generate_lexicon(1, 5, 1).is_err());
    }

    #[test]
    fn every_group_has_two_members() {
        let lex = generate_lexicon(7, 60, 12).unwrap();
        for g in 0..12 {
            let count = lex.iter().filter(|e| e.group_id == g).count();
            assert!(count >= 2, "group {g} has {count} members");
        }
    }

    #[test]
    fn same_group_glosses_overlap_and_cross_group_are_disjoint() {
        let lex = generate_lexicon(3, 60, 12).unwrap();
        for a in &lex {
            for b in &lex {
                if a.pie_id == b.pie_id {
                    continue;
                }
                let sa: BTreeSet<u32> = a.definition_gloss.iter().copied().collect();
                let sb: BTreeSet<u32> = b.definition_gloss.iter().copied().collect();
                let overlap = sa.intersection(&sb).count();
                if a.group_id == b.group_id {
                    assert!(overlap > 0, "same-group glosses must share tokens");
                } else {
                    assert_eq!(overlap, 0, "cross-group glosses must be disjoint");
                }
            }
        }
    }

    #[test]
    fn surfaces_come_from_surface_pool_and_avoid_containment() {
        let lex = generate_lexicon(11, 60, 12).unwrap();
        let layout = VocabLayout::new(12);
        for e in &lex {
            assert!((2..=4).contains(&e.surface.len()));
            assert!(e.surface.iter().all(|t| layout.is_surface_token(*t)));
            // gloss and surface token sets disjoint by region
            assert!(e.definition_gloss.iter().all(|t| !layout.is_surface_token(*t)));
        }
        for a in &lex {
            for b in &lex {
                if a.pie_id != b.pie_id {
                    assert!(!contains_subseq(&a.surface, &b.surface));
                }
            }
        }
    }

    #[test]
    fn ratio_mixture_has_both_tails() {
        let lex = generate_lexicon(5, 120, 12).unwrap();
        let high = lex.iter().filter(|e| e.idiomaticity_ratio > 0.85).count();
        let low = lex.iter().filter(|e| e.idiomaticity_ratio < 0.15).count();
        let mid = lex
            .iter()
            .filter(|e| (0.3..=0.9).contains(&e.idiomaticity_ratio))
            .count();
        assert!(high >= 8, "high tail {high}");
        assert!(low >= 8, "low tail {low}");
        assert!(mid >= 60, "mid bucket {mid}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = generate_lexicon(42, 60, 12).unwrap();
        let b = generate_lexicon(42, 60, 12).unwrap();
        assert_eq!(a, b);
        let c = generate_lexicon(43, 60, 12).unwrap();
        assert_ne!(a, c);
    }
}
