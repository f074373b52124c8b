//! Sentence synthesis with sense-correlated context cues.
//!
//! Counts are allocated in three deterministic passes: per-PIE sentence
//! budgets (weighted toward idiomatic-heavy PIEs, as in natural corpora),
//! per-PIE idiomatic counts (a logit-shift solve that lands the global
//! idiomatic fraction on target while leaving the skewed tails skewed), and
//! a per-(PIE, sense) test split that keeps every test PIE in train and both
//! senses of mid-ratio PIEs in test.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::corpus::lexicon::PieLexiconEntry;
use crate::corpus::vocab::VocabLayout;
use crate::corpus::{CorpusManifest, Sense, SentenceRecord, Split, SCHEMA_VERSION};
use crate::error::{CoreError, CoreResult};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    pub seed: u64,
    pub n_pies: usize,
    pub n_groups: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub idiomatic_fraction: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            seed: 0,
            n_pies: 60,
            n_groups: 12,
            n_train: 6000,
            n_test: 1200,
            idiomatic_fraction: 0.774,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub lexicon: Vec<PieLexiconEntry>,
    pub layout: VocabLayout,
    pub train: Vec<SentenceRecord>,
    pub test: Vec<SentenceRecord>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn generate(params: &CorpusParams) -> CoreResult<Self> {
        let lexicon =
            crate::corpus::lexicon::generate_lexicon(params.seed, params.n_pies, params.n_groups)?;
        let layout = VocabLayout::new(params.n_groups);
        let (train, test, manifest) = generate_corpus(
            &lexicon,
            &layout,
            params.n_train,
            params.n_test,
            params.idiomatic_fraction,
            params.seed,
        )?;
        Ok(Corpus {
            lexicon,
            layout,
            train,
            test,
            manifest,
        })
    }

    pub fn entry(&self, pie_id: u32) -> &PieLexiconEntry {
        &self.lexicon[pie_id as usize]
    }
}

/// Largest-remainder apportionment of `total` units over nonnegative
/// weights. Deterministic: remainder ties break on the lower index.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let mut out: Vec<usize> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut used = 0usize;
    for (i, w) in weights.iter().enumerate() {
        let exact = total as f64 * w / wsum;
        let base = exact.floor() as usize;
        out.push(base);
        used += base;
        fracs.push((i, exact - base as f64));
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in fracs.into_iter().take(total.saturating_sub(used)) {
        out[i] += 1;
    }
    out
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const MID_LO: f64 = 0.15;
const MID_HI: f64 = 0.85;

/// Effective per-PIE idiomatic ratio under a global logit shift. Tail PIEs
/// keep their drawn ratio so the skew analysis stays meaningful.
fn shifted_ratio(r: f64, lambda: f64) -> f64 {
    if (MID_LO..=MID_HI).contains(&r) {
        sigmoid(logit(r) + lambda).clamp(0.17, 0.83)
    } else {
        r
    }
}

struct PieCounts {
    total: usize,
    idiomatic: usize,
}

fn allocate_counts(
    lexicon: &[PieLexiconEntry],
    n_total: usize,
    idiomatic_fraction: f64,
) -> CoreResult<Vec<PieCounts>> {
    // try progressively stronger idiomatic-count tilts until the requested
    // global fraction is reachable for the drawn ratio mixture
    let tilts: [fn(f64) -> f64; 3] = [
        |r| 0.25 + r,
        |r| 0.05 + r * r,
        |r| 0.01 + r * r * r * r,
    ];
    let mut last_err = None;
    for tilt in tilts {
        match allocate_counts_with(lexicon, n_total, idiomatic_fraction, tilt) {
            Ok(counts) => return Ok(counts),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one tilt attempted"))
}

fn allocate_counts_with(
    lexicon: &[PieLexiconEntry],
    n_total: usize,
    idiomatic_fraction: f64,
    tilt: fn(f64) -> f64,
) -> CoreResult<Vec<PieCounts>> {
    let weights: Vec<f64> = lexicon
        .iter()
        .map(|e| tilt(e.idiomaticity_ratio))
        .collect();
    let mut totals = apportion(&weights, n_total);

    // floor of 8 sentences per PIE so both senses can reach both splits
    let min_per_pie = 8usize;
    loop {
        let deficit: usize = totals
            .iter()
            .map(|t| min_per_pie.saturating_sub(*t))
            .sum();
        if deficit == 0 {
            break;
        }
        for t in totals.iter_mut() {
            if *t < min_per_pie {
                *t = min_per_pie;
            }
        }
        let mut to_remove = deficit;
        while to_remove > 0 {
            let (imax, _) = totals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("non-empty lexicon");
            if totals[imax] <= min_per_pie {
                return Err(CoreError::Generation(alloc::format!(
                    "cannot give {} PIEs {min_per_pie} sentences each out of {n_total}",
                    lexicon.len()
                )));
            }
            totals[imax] -= 1;
            to_remove -= 1;
        }
    }

    // bisect the logit shift so the global idiomatic count lands on target
    let target: f64 = idiomatic_fraction * n_total as f64;
    let expected = |lambda: f64| -> f64 {
        lexicon
            .iter()
            .zip(&totals)
            .map(|(e, n)| *n as f64 * shifted_ratio(e.idiomaticity_ratio, lambda))
            .sum()
    };
    let (mut lo, mut hi) = (-8.0f64, 8.0f64);
    if expected(lo) > target || expected(hi) < target {
        return Err(CoreError::Generation(alloc::format!(
            "idiomatic fraction {idiomatic_fraction} unreachable given the drawn ratio mixture"
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);

    let bounds = |e: &PieLexiconEntry, n: usize| -> (usize, usize) {
        let r = e.idiomaticity_ratio;
        if r > MID_HI {
            // keep the empirical skew above 0.85, with at least one literal
            let lo = ((0.85 * n as f64).floor() as usize + 1).min(n - 1);
            (lo, n - 1)
        } else if r < MID_LO {
            // keep the empirical skew below 0.15, with at least one idiomatic
            let hi = ((0.15 * n as f64).ceil() as usize).saturating_sub(1).max(1);
            (1, hi)
        } else {
            let lo = ((0.17 * n as f64).ceil() as usize).max(1);
            let hi = ((0.83 * n as f64).floor() as usize).min(n - 1);
            (lo.min(hi), hi.max(lo))
        }
    };

    let mut counts: Vec<PieCounts> = lexicon
        .iter()
        .zip(&totals)
        .map(|(e, n)| {
            let (lo_b, hi_b) = bounds(e, *n);
            let want = (*n as f64 * shifted_ratio(e.idiomaticity_ratio, lambda)).round() as usize;
            PieCounts {
                total: *n,
                idiomatic: want.clamp(lo_b, hi_b),
            }
        })
        .collect();

    // distribute the integer rounding residue over mid-range PIEs
    let target_i = target.round() as i64;
    let mut delta = target_i - counts.iter().map(|c| c.idiomatic as i64).sum::<i64>();
    let mid_ids: Vec<usize> = lexicon
        .iter()
        .enumerate()
        .filter(|(_, e)| (MID_LO..=MID_HI).contains(&e.idiomaticity_ratio))
        .map(|(i, _)| i)
        .collect();
    let mut progress = true;
    while delta != 0 && progress {
        progress = false;
        for &i in &mid_ids {
            if delta == 0 {
                break;
            }
            let (lo_b, hi_b) = bounds(&lexicon[i], counts[i].total);
            if delta > 0 && counts[i].idiomatic < hi_b {
                counts[i].idiomatic += 1;
                delta -= 1;
                progress = true;
            } else if delta < 0 && counts[i].idiomatic > lo_b {
                counts[i].idiomatic -= 1;
                delta += 1;
                progress = true;
            }
        }
    }
    if delta.unsigned_abs() as usize > n_total / 200 {
        return Err(CoreError::Generation(alloc::format!(
            "could not land idiomatic fraction within tolerance (residue {delta})"
        )));
    }
    Ok(counts)
}

/// Per-(PIE, sense) test-set sizes. Cells with at least four sentences send
/// at least one to test; tiny cells stay entirely in train.
fn allocate_test(counts: &[PieCounts], n_test: usize) -> Vec<[usize; 2]> {
    let n_total: usize = counts.iter().map(|c| c.total).sum();
    let cells: Vec<usize> = counts
        .iter()
        .flat_map(|c| [c.idiomatic, c.total - c.idiomatic])
        .collect();
    let weights: Vec<f64> = cells.iter().map(|c| *c as f64).collect();
    let mut test = apportion(&weights, n_test);
    let _ = n_total;

    let min_of = |cell: usize| -> usize {
        if cell >= 4 {
            1
        } else {
            0
        }
    };
    // keep at least two train sentences per non-tiny cell
    let max_of = |cell: usize| -> usize { cell.saturating_sub(2) };

    for (t, &cell) in test.iter_mut().zip(&cells) {
        *t = (*t).clamp(min_of(cell), max_of(cell));
    }
    // rebalance to exactly n_test, preferring the largest cells
    let mut total: i64 = test.iter().map(|t| *t as i64).sum();
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|a, b| cells[*b].cmp(&cells[*a]).then(a.cmp(b)));
    let mut progress = true;
    while total != n_test as i64 && progress {
        progress = false;
        for &i in &order {
            if total == n_test as i64 {
                break;
            }
            if total < n_test as i64 && test[i] < max_of(cells[i]) {
                test[i] += 1;
                total += 1;
                progress = true;
            } else if total > n_test as i64 && test[i] > min_of(cells[i]) {
                test[i] -= 1;
                total -= 1;
                progress = true;
            }
        }
    }
    test.chunks(2).map(|c| [c[0], c[1]]).collect()
}

fn synthesize_sentence(
    layout: &VocabLayout,
    entry: &PieLexiconEntry,
    sense: Sense,
    rng: &mut Rng,
) -> (Vec<u32>, (usize, usize)) {
    let left_len = rng.range_inclusive(2, 6);
    let right_len = rng.range_inclusive(2, 6);
    let ctx_len = left_len + right_len;

    let cue_pool = match sense {
        Sense::Idiomatic => layout.idiomatic_cue_pool(entry.group_id),
        Sense::Literal => layout.literal_cue_pool(),
    };
    let n_cues = rng.range_inclusive(2, 3.min(ctx_len));
    let cue_slots = rng.sample_distinct(ctx_len, n_cues);

    let mut context: Vec<u32> = (0..ctx_len)
        .map(|_| layout.filler_token(rng.below(crate::corpus::vocab::N_FILLER)))
        .collect();
    for slot in cue_slots {
        context[slot] = *rng.choose(&cue_pool);
    }

    let mut tokens = Vec::with_capacity(ctx_len + entry.surface.len());
    tokens.extend_from_slice(&context[..left_len]);
    tokens.extend_from_slice(&entry.surface);
    tokens.extend_from_slice(&context[left_len..]);
    let span = (left_len, left_len + entry.surface.len());
    (tokens, span)
}

/// Generates the train and test splits plus the manifest.
pub fn generate_corpus(
    lexicon: &[PieLexiconEntry],
    layout: &VocabLayout,
    n_train: usize,
    n_test: usize,
    idiomatic_fraction: f64,
    seed: u64,
) -> CoreResult<(Vec<SentenceRecord>, Vec<SentenceRecord>, CorpusManifest)> {
    if lexicon.is_empty() {
        return Err(CoreError::InvalidConfig(alloc::string::String::from(
            "empty lexicon",
        )));
    }
    if !(0.05..=0.95).contains(&idiomatic_fraction) {
        return Err(CoreError::InvalidConfig(alloc::format!(
            "idiomatic_fraction {idiomatic_fraction} outside [0.05, 0.95]"
        )));
    }
    if lexicon.len() * 4 > n_train {
        return Err(CoreError::Generation(alloc::format!(
            "{} PIEs need at least {} train sentences, got {n_train}",
            lexicon.len(),
            lexicon.len() * 4
        )));
    }

    let counts = allocate_counts(lexicon, n_train + n_test, idiomatic_fraction)?;
    let test_alloc = allocate_test(&counts, n_test);

    let mut rng = Rng::new(seed).fork("corpus");
    let mut train: Vec<SentenceRecord> = Vec::with_capacity(n_train);
    let mut test: Vec<SentenceRecord> = Vec::with_capacity(n_test);

    for (i, entry) in lexicon.iter().enumerate() {
        for (si, sense) in [Sense::Idiomatic, Sense::Literal].into_iter().enumerate() {
            let cell_total = if si == 0 {
                counts[i].idiomatic
            } else {
                counts[i].total - counts[i].idiomatic
            };
            let cell_test = test_alloc[i][si];
            for k in 0..cell_total {
                let (tokens, span) = synthesize_sentence(layout, entry, sense, &mut rng);
                let split = if k < cell_test {
                    Split::Test
                } else {
                    Split::Train
                };
                let rec = SentenceRecord {
                    sentence_id: 0, // assigned after the shuffle
                    tokens,
                    pie_id: entry.pie_id,
                    span,
                    sense,
                    split,
                };
                match split {
                    Split::Train => train.push(rec),
                    Split::Test => test.push(rec),
                }
            }
        }
    }

    if train.len() != n_train || test.len() != n_test {
        return Err(CoreError::Generation(alloc::format!(
            "allocation mismatch: {} train / {} test produced",
            train.len(),
            test.len()
        )));
    }

    rng.shuffle(&mut train);
    rng.shuffle(&mut test);
    for (i, r) in train.iter_mut().enumerate() {
        r.sentence_id = i as u64;
    }
    for (i, r) in test.iter_mut().enumerate() {
        r.sentence_id = (n_train + i) as u64;
    }

    verify_corpus(lexicon, &train, &test)?;

    let idio_total = train
        .iter()
        .chain(test.iter())
        .filter(|r| r.sense == Sense::Idiomatic)
        .count();
    let manifest = CorpusManifest {
        schema_version: SCHEMA_VERSION,
        seed,
        n_pies: lexicon.len(),
        n_groups: layout.n_groups,
        vocab_size: layout.vocab_size(),
        n_train,
        n_test,
        idiomatic_fraction_target: idiomatic_fraction,
        idiomatic_fraction_achieved: idio_total as f64 / (n_train + n_test) as f64,
    };
    Ok((train, test, manifest))
}

/// Construction invariants, checked on every generation.
fn verify_corpus(
    lexicon: &[PieLexiconEntry],
    train: &[SentenceRecord],
    test: &[SentenceRecord],
) -> CoreResult<()> {
    let fail = |msg: alloc::string::String| Err(CoreError::Generation(msg));

    for r in train.iter().chain(test.iter()) {
        let entry = &lexicon[r.pie_id as usize];
        if r.span_tokens() != entry.surface.as_slice() {
            return fail(alloc::format!(
                "sentence {} span does not equal its PIE surface",
                r.sentence_id
            ));
        }
        // exactly one surface occurrence across the whole lexicon
        let hits: usize = lexicon
            .iter()
            .map(|e| {
                r.tokens
                    .windows(e.surface.len())
                    .filter(|w| *w == e.surface.as_slice())
                    .count()
            })
            .sum();
        if hits != 1 {
            return fail(alloc::format!(
                "sentence {} contains {hits} PIE occurrences",
                r.sentence_id
            ));
        }
    }

    let train_pies: alloc::collections::BTreeSet<u32> = train.iter().map(|r| r.pie_id).collect();
    for r in test {
        if !train_pies.contains(&r.pie_id) {
            return fail(alloc::format!(
                "test PIE {} missing from the train split",
                r.pie_id
            ));
        }
    }

    for entry in lexicon {
        let train_count = train.iter().filter(|r| r.pie_id == entry.pie_id).count();
        if train_count < 4 {
            return fail(alloc::format!(
                "PIE {} has only {train_count} train sentences",
                entry.pie_id
            ));
        }
        if (0.3..=0.7).contains(&entry.idiomaticity_ratio) {
            for sense in [Sense::Idiomatic, Sense::Literal] {
                let present = test
                    .iter()
                    .any(|r| r.pie_id == entry.pie_id && r.sense == sense);
                if !present {
                    return fail(alloc::format!(
                        "mid-ratio PIE {} lacks a {} test sentence",
                        entry.pie_id,
                        sense.as_str()
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Sentences built only from filler and literal-cue tokens; no PIE surface
/// can occur. Used for the reconstruction non-regression check.
pub fn generate_pie_free_sentences(layout: &VocabLayout, n: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = Rng::new(seed).fork("pie-free");
    let literal_cues = layout.literal_cue_pool();
    (0..n)
        .map(|_| {
            let len = rng.range_inclusive(6, 14);
            (0..len)
                .map(|_| {
                    if rng.chance(0.2) {
                        *rng.choose(&literal_cues)
                    } else {
                        layout.filler_token(rng.below(crate::corpus::vocab::N_FILLER))
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> CorpusParams {
        CorpusParams {
            seed: 13,
            n_pies: 24,
            n_groups: 6,
            n_train: 1200,
            n_test: 260,
            idiomatic_fraction: 0.774,
        }
    }

    #[test]
    fn default_scale_fraction_in_band() {
        let corpus = Corpus::generate(&CorpusParams::default()).unwrap();
        let f = corpus.manifest.idiomatic_fraction_achieved;
        assert!((0.754..=0.794).contains(&f), "achieved fraction {f}");
        assert_eq!(corpus.train.len(), 6000);
        assert_eq!(corpus.test.len(), 1200);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = Corpus::generate(&small_params()).unwrap();
        let b = Corpus::generate(&small_params()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn tails_stay_skewed_in_train() {
        let corpus = Corpus::generate(&small_params()).unwrap();
        for e in &corpus.lexicon {
            let train: Vec<_> = corpus
                .train
                .iter()
                .filter(|r| r.pie_id == e.pie_id)
                .collect();
            let idio = train.iter().filter(|r| r.sense == Sense::Idiomatic).count();
            let ratio = idio as f64 / train.len() as f64;
            if e.idiomaticity_ratio > MID_HI {
                assert!(ratio > 0.80, "pie {} train ratio {ratio}", e.pie_id);
            }
            if e.idiomaticity_ratio < MID_LO {
                assert!(ratio < 0.20, "pie {} train ratio {ratio}", e.pie_id);
            }
        }
    }

    #[test]
    fn pie_free_sentences_contain_no_surface() {
        let corpus = Corpus::generate(&small_params()).unwrap();
        let frees = generate_pie_free_sentences(&corpus.layout, 50, 99);
        for s in &frees {
            for e in &corpus.lexicon {
                assert!(
                    !s.windows(e.surface.len()).any(|w| w == e.surface.as_slice()),
                    "pie-free sentence contains a surface"
                );
            }
        }
    }

    #[test]
    fn infeasible_requests_error() {
        let lex = crate::corpus::lexicon::generate_lexicon(1, 24, 6).unwrap();
        let layout = VocabLayout::new(6);
        // 24 PIEs * 4 > 80
        assert!(matches!(
            generate_corpus(&lex, &layout, 80, 10, 0.774, 1),
            Err(CoreError::Generation(_))
        ));
        assert!(generate_corpus(&lex, &layout, 1200, 100, 0.99, 1).is_err());
    }
}
