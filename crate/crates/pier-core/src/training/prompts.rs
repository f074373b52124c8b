//! Prompt construction and random prompt assignment.

use alloc::vec::Vec;

use crate::corpus::lexicon::PieLexiconEntry;
use crate::corpus::vocab::{
    render_template, VocabLayout, DEFN_GEN_TEMPLATES, MASK, N_TEMPLATES_PER_KIND,
    SENSE_IDIOMATIC, SENSE_LITERAL, TYPE_CLS_TEMPLATES,
};
use crate::corpus::{Sense, SentenceRecord};
use crate::error::{CoreError, CoreResult};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    None,
    TypeCls,
    DefnGen,
}

/// Which prompt kinds a training run uses, and whether all five templates
/// per kind are in play or only the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptMode {
    pub type_cls: bool,
    pub defn_gen: bool,
    pub multi_template: bool,
}

impl PromptMode {
    pub fn disabled() -> Self {
        PromptMode {
            type_cls: false,
            defn_gen: false,
            multi_template: false,
        }
    }

    pub fn full(multi_template: bool) -> Self {
        PromptMode {
            type_cls: true,
            defn_gen: true,
            multi_template,
        }
    }

    pub fn any(&self) -> bool {
        self.type_cls || self.defn_gen
    }
}

/// One sentence annotated with its prompt decision and decoder target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub record: SentenceRecord,
    pub prompt_kind: PromptKind,
    pub template_index: usize,
    /// Encoder input: the sentence, plus the masked template when prompted.
    pub input_tokens: Vec<u32>,
    /// Decoder target: identical to the input sentence for the copy
    /// objective, or the infilled prompt sequence.
    pub target_sequence: Vec<u32>,
}

/// Builds the prompted input (exactly one mask token) and the infill target.
/// For `PromptKind::None` both sides are the unaltered sentence.
pub fn build_prompt(
    layout: &VocabLayout,
    record: &SentenceRecord,
    entry: &PieLexiconEntry,
    prompt_kind: PromptKind,
    template_index: usize,
) -> CoreResult<(Vec<u32>, Vec<u32>)> {
    if prompt_kind == PromptKind::None {
        return Ok((record.tokens.clone(), record.tokens.clone()));
    }
    if template_index >= N_TEMPLATES_PER_KIND {
        return Err(CoreError::invalid(alloc::format!(
            "template index {template_index} out of range"
        )));
    }
    let template = match prompt_kind {
        PromptKind::TypeCls => TYPE_CLS_TEMPLATES[template_index],
        PromptKind::DefnGen => DEFN_GEN_TEMPLATES[template_index],
        PromptKind::None => unreachable!(),
    };
    let answer: Vec<u32> = match prompt_kind {
        PromptKind::TypeCls => match record.sense {
            Sense::Idiomatic => alloc::vec![SENSE_IDIOMATIC],
            Sense::Literal => alloc::vec![SENSE_LITERAL],
        },
        PromptKind::DefnGen => match record.sense {
            Sense::Idiomatic => entry.definition_gloss.clone(),
            // a literal use means compositionally: the mask is filled with
            // the PIE itself
            Sense::Literal => entry.surface.clone(),
        },
        PromptKind::None => unreachable!(),
    };

    let masked = render_template(layout, template, &entry.surface, &[MASK]);
    let filled = render_template(layout, template, &entry.surface, &answer);

    let mut input = record.tokens.clone();
    input.extend_from_slice(&masked);
    let mut target = record.tokens.clone();
    target.extend_from_slice(&filled);
    Ok((input, target))
}

/// Annotates a batch with prompt decisions: one third of records keep the
/// plain copy objective, the rest split between the enabled prompt kinds.
/// A permutation-free annotation: output order matches input order.
pub fn assign_prompts(
    layout: &VocabLayout,
    lexicon: &[PieLexiconEntry],
    records: &[SentenceRecord],
    mode: PromptMode,
    rng: &mut Rng,
) -> CoreResult<Vec<TrainingExample>> {
    if records.is_empty() {
        return Err(CoreError::invalid("assign_prompts: empty batch"));
    }
    records
        .iter()
        .map(|record| {
            let kind = if !mode.any() {
                PromptKind::None
            } else {
                match rng.below(3) {
                    0 => PromptKind::None,
                    1 => {
                        if mode.type_cls {
                            PromptKind::TypeCls
                        } else {
                            PromptKind::DefnGen
                        }
                    }
                    _ => {
                        if mode.defn_gen {
                            PromptKind::DefnGen
                        } else {
                            PromptKind::TypeCls
                        }
                    }
                }
            };
            let template_index = if kind != PromptKind::None && mode.multi_template {
                rng.below(N_TEMPLATES_PER_KIND)
            } else {
                0
            };
            let entry = &lexicon[record.pie_id as usize];
            let (input_tokens, target_sequence) =
                build_prompt(layout, record, entry, kind, template_index)?;
            Ok(TrainingExample {
                record: record.clone(),
                prompt_kind: kind,
                template_index,
                input_tokens,
                target_sequence,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusParams};

    fn fixture() -> Corpus {
        Corpus::generate(&CorpusParams {
            seed: 5,
            n_pies: 12,
            n_groups: 4,
            n_train: 400,
            n_test: 90,
            idiomatic_fraction: 0.774,
        })
        .unwrap()
    }

    #[test]
    fn prompted_sequences_have_exactly_one_mask() {
        let corpus = fixture();
        let mut rng = Rng::new(3);
        let examples = assign_prompts(
            &corpus.layout,
            &corpus.lexicon,
            &corpus.train[..100],
            PromptMode::full(true),
            &mut rng,
        )
        .unwrap();
        for ex in &examples {
            let masks = ex.input_tokens.iter().filter(|t| **t == MASK).count();
            match ex.prompt_kind {
                PromptKind::None => {
                    assert_eq!(masks, 0);
                    assert_eq!(ex.target_sequence, ex.record.tokens);
                    assert_eq!(ex.input_tokens, ex.record.tokens);
                }
                _ => {
                    assert_eq!(masks, 1, "exactly one mask in a prompted sequence");
                    assert!(!ex.target_sequence.contains(&MASK));
                }
            }
        }
    }

    #[test]
    fn type_cls_targets_carry_the_sense_token() {
        let corpus = fixture();
        for record in corpus.train.iter().take(40) {
            let entry = corpus.entry(record.pie_id);
            let (_, target) =
                build_prompt(&corpus.layout, record, entry, PromptKind::TypeCls, 1).unwrap();
            let expected = match record.sense {
                Sense::Idiomatic => SENSE_IDIOMATIC,
                Sense::Literal => SENSE_LITERAL,
            };
            assert!(target.contains(&expected));
            let other = if expected == SENSE_IDIOMATIC {
                SENSE_LITERAL
            } else {
                SENSE_IDIOMATIC
            };
            assert!(!target.contains(&other));
        }
    }

    #[test]
    fn defn_gen_literal_fills_the_pie_itself() {
        let corpus = fixture();
        let record = corpus
            .train
            .iter()
            .find(|r| r.sense == Sense::Literal)
            .unwrap();
        let entry = corpus.entry(record.pie_id);
        let (input, target) =
            build_prompt(&corpus.layout, record, entry, PromptKind::DefnGen, 2).unwrap();
        // target = input with the mask slot replaced by the surface tokens
        let mask_pos = input.iter().position(|t| *t == MASK).unwrap();
        assert_eq!(
            &target[mask_pos..mask_pos + entry.surface.len()],
            entry.surface.as_slice()
        );
        let idio = corpus
            .train
            .iter()
            .find(|r| r.sense == Sense::Idiomatic)
            .unwrap();
        let entry = corpus.entry(idio.pie_id);
        let (input, target) =
            build_prompt(&corpus.layout, idio, entry, PromptKind::DefnGen, 2).unwrap();
        let mask_pos = input.iter().position(|t| *t == MASK).unwrap();
        assert_eq!(
            &target[mask_pos..mask_pos + entry.definition_gloss.len()],
            entry.definition_gloss.as_slice()
        );
    }

    #[test]
    fn bad_template_index_rejected() {
        let corpus = fixture();
        let record = &corpus.train[0];
        let entry = corpus.entry(record.pie_id);
        assert!(build_prompt(&corpus.layout, record, entry, PromptKind::TypeCls, 5).is_err());
    }

    #[test]
    fn assignment_frequencies_near_one_third() {
        let corpus = fixture();
        let mut rng = Rng::new(7);
        let mut counts = [0usize; 3];
        let mut draws = 0usize;
        while draws < 30_000 {
            let examples = assign_prompts(
                &corpus.layout,
                &corpus.lexicon,
                &corpus.train,
                PromptMode::full(true),
                &mut rng,
            )
            .unwrap();
            for ex in examples {
                let slot = match ex.prompt_kind {
                    PromptKind::None => 0,
                    PromptKind::TypeCls => 1,
                    PromptKind::DefnGen => 2,
                };
                counts[slot] += 1;
                draws += 1;
            }
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((0.32..=0.35).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn single_template_mode_pins_index_zero() {
        let corpus = fixture();
        let mut rng = Rng::new(11);
        let examples = assign_prompts(
            &corpus.layout,
            &corpus.lexicon,
            &corpus.train[..200],
            PromptMode::full(false),
            &mut rng,
        )
        .unwrap();
        assert!(examples.iter().all(|e| e.template_index == 0));
        let mut rng = Rng::new(11);
        let multi = assign_prompts(
            &corpus.layout,
            &corpus.lexicon,
            &corpus.train[..200],
            PromptMode::full(true),
            &mut rng,
        )
        .unwrap();
        assert!(multi.iter().any(|e| e.template_index > 0));
    }

    #[test]
    fn same_seed_same_assignment_and_order_preserved() {
        let corpus = fixture();
        let mk = || {
            let mut rng = Rng::new(23);
            assign_prompts(
                &corpus.layout,
                &corpus.lexicon,
                &corpus.train[..150],
                PromptMode::full(true),
                &mut rng,
            )
            .unwrap()
        };
        let a = mk();
        let b = mk();
        assert_eq!(a, b);
        for (ex, rec) in a.iter().zip(corpus.train.iter()) {
            assert_eq!(ex.record.sentence_id, rec.sentence_id);
        }
    }
}
