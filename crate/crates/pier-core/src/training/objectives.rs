//! The copy, cosine-similarity, and prompt-infilling objectives, and their
//! composition into the per-example total loss.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::corpus::lexicon::PieLexiconEntry;
use crate::corpus::{Sense, SentenceRecord};
use crate::error::{CoreError, CoreResult};
use crate::model::forward::{encode, forward, pool_span};
use crate::model::{FusedModel, Variant};
use crate::numerics::real::Real;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::numerics::{cosine_similarity, mean_pool};
use crate::training::prompts::{PromptKind, PromptMode, TrainingExample};

/// Objective switches for one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    /// Reconstruction cross-entropy (copy objective on unprompted examples,
    /// infill cross-entropy on prompted ones).
    pub reconstruction: bool,
    pub similarity: bool,
    pub prompts: PromptMode,
    /// The adapter stage treats every sentence as idiomatic.
    pub treat_all_idiomatic: bool,
    pub ce_weight: f64,
    pub sim_weight: f64,
    /// None: (1 - cos_pos) + max(0, cos_neg).
    /// Some(m): relative form max(0, m - cos_pos + cos_neg), which removes
    /// the collapse shortcut where one shared direction zeroes the hinge.
    pub sim_margin: Option<f64>,
}

impl ObjectiveConfig {
    pub fn copy_only() -> Self {
        ObjectiveConfig {
            reconstruction: true,
            similarity: false,
            prompts: PromptMode::disabled(),
            treat_all_idiomatic: false,
            ce_weight: 1.0,
            sim_weight: 1.0,
            sim_margin: None,
        }
    }

    pub fn adapter_stage() -> Self {
        ObjectiveConfig {
            reconstruction: true,
            similarity: true,
            prompts: PromptMode::disabled(),
            treat_all_idiomatic: true,
            ce_weight: 1.0,
            sim_weight: 1.0,
            sim_margin: None,
        }
    }

    pub fn full(multi_template: bool) -> Self {
        ObjectiveConfig {
            reconstruction: true,
            similarity: true,
            prompts: PromptMode::full(multi_template),
            treat_all_idiomatic: false,
            ce_weight: 1.0,
            sim_weight: 1.0,
            sim_margin: None,
        }
    }
}

/// Loss components of one example or one averaged batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction_ce: f64,
    pub sim_positive: f64,
    pub sim_negative: f64,
    pub total: f64,
}

/// Frozen-reference embeddings the similarity objective pulls toward.
/// Computed once per stage from the stage-0 base model and reused across
/// epochs; both referenced models are frozen so the cache never goes stale.
#[derive(Debug, Clone)]
pub struct SimTargets<F> {
    /// sentence_id → mean-pooled frozen-base span embedding
    pub literal: BTreeMap<u64, Vec<F>>,
    /// pie_id → mean-pooled frozen-base gloss embedding
    pub idiomatic: BTreeMap<u32, Vec<F>>,
}

/// Mean-pooled frozen-base final embeddings of the record's PIE span.
pub fn literal_target_embedding<F: Real>(
    base: &FusedModel<F>,
    record: &SentenceRecord,
) -> CoreResult<Vec<F>> {
    debug_assert_eq!(base.config.variant, Variant::BaseOnly);
    let enc = encode(base, &record.tokens)?;
    let (start, end) = record.span;
    if start >= end || end > record.tokens.len() {
        return Err(CoreError::invalid("literal target: empty or invalid span"));
    }
    let rows: Vec<&[F]> = (start..end).map(|r| enc.row(r)).collect();
    mean_pool(&rows)
}

/// Mean-pooled frozen reference-encoder embedding of a definition gloss.
pub fn idiomatic_target_embedding<F: Real>(
    reference: &FusedModel<F>,
    gloss: &[u32],
) -> CoreResult<Vec<F>> {
    if gloss.is_empty() {
        return Err(CoreError::invalid("idiomatic target: empty gloss"));
    }
    let enc = encode(reference, gloss)?;
    let rows: Vec<&[F]> = (0..gloss.len()).map(|r| enc.row(r)).collect();
    mean_pool(&rows)
}

/// Subtracts each family's mean so targets are spread rather than packed
/// into the encoder's dominant direction. The reference encoder here is a
/// small from-scratch transformer whose raw embeddings are strongly
/// anisotropic; without centering, every gloss target is nearly collinear
/// and the similarity objective cannot separate anything.
fn center_family<F: Real, K: Ord>(family: &mut BTreeMap<K, Vec<F>>) {
    let n = family.len();
    if n < 2 {
        return;
    }
    let dim = family.values().next().map(|v| v.len()).unwrap_or(0);
    let mut mean = alloc::vec![F::zero(); dim];
    for v in family.values() {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m = *m + *x;
        }
    }
    let inv = F::one() / F::from_f64(n as f64);
    for m in mean.iter_mut() {
        *m = *m * inv;
    }
    for v in family.values_mut() {
        let mut norm2 = F::zero();
        let centered: Vec<F> = v.iter().zip(mean.iter()).map(|(x, m)| *x - *m).collect();
        for c in &centered {
            norm2 = norm2 + *c * *c;
        }
        // a target sitting exactly on the family mean stays uncentered
        // rather than degenerating to zero
        if norm2.as_f64() > 1e-12 {
            *v = centered;
        }
    }
}

impl<F: Real> SimTargets<F> {
    /// Precomputes both target families for a record set, centered per
    /// family.
    pub fn compute(
        base: &FusedModel<F>,
        lexicon: &[PieLexiconEntry],
        records: &[SentenceRecord],
    ) -> CoreResult<Self> {
        let mut literal = BTreeMap::new();
        let mut idiomatic = BTreeMap::new();
        for record in records {
            literal.insert(record.sentence_id, literal_target_embedding(base, record)?);
            if !idiomatic.contains_key(&record.pie_id) {
                let gloss = &lexicon[record.pie_id as usize].definition_gloss;
                idiomatic.insert(record.pie_id, idiomatic_target_embedding(base, gloss)?);
            }
        }
        center_family(&mut literal);
        center_family(&mut idiomatic);
        Ok(SimTargets { literal, idiomatic })
    }
}

/// Plain-value similarity loss:
/// (1 - cos(pie, positive)) + max(0, cos(pie, negative)), where the
/// idiomatic target is positive for idiomatic senses and the literal target
/// for literal senses.
pub fn similarity_loss<F: Real>(
    pie: &[F],
    idiomatic_target: &[F],
    literal_target: &[F],
    sense: Sense,
) -> CoreResult<(F, F, F)> {
    let (pos, neg) = match sense {
        Sense::Idiomatic => (idiomatic_target, literal_target),
        Sense::Literal => (literal_target, idiomatic_target),
    };
    let cos_pos = cosine_similarity(pie, pos)?;
    let cos_neg = cosine_similarity(pie, neg)?;
    let loss = (F::one() - cos_pos) + cos_neg.max(F::zero());
    Ok((cos_pos, cos_neg, loss))
}

/// Tape handles for one example's loss terms.
pub struct ExampleLoss {
    pub total: Var,
    pub reconstruction_ce: Var,
    pub sim: Option<(Var, Var)>,
}

/// Builds one example's loss graph on the tape: reconstruction (or infill)
/// cross-entropy over the full decoder target, plus the similarity terms on
/// the PIE-span embedding of this same forward pass.
pub fn example_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    model: &FusedModel<F>,
    example: &TrainingExample,
    targets: Option<&SimTargets<F>>,
    objectives: &ObjectiveConfig,
) -> CoreResult<ExampleLoss> {
    let out = forward(
        tape,
        vars,
        model,
        &example.input_tokens,
        Some(&example.target_sequence),
    )?;
    let logits = out.logits.expect("decoder ran");
    let target_ids: Vec<usize> = example.target_sequence.iter().map(|t| *t as usize).collect();
    let mask = alloc::vec![true; target_ids.len()];
    let ce = tape.cross_entropy(logits, &target_ids, &mask)?;
    let mut total = tape.affine(ce, objectives.ce_weight, 0.0);

    let sim = if objectives.similarity {
        let targets = targets.ok_or_else(|| {
            CoreError::MissingDependency(alloc::string::String::from(
                "similarity objective requires precomputed targets",
            ))
        })?;
        let pie = pool_span(
            tape,
            out.repr,
            example.record.span,
            example.input_tokens.len(),
        )?;
        let idio = targets.idiomatic.get(&example.record.pie_id).ok_or_else(|| {
            CoreError::MissingDependency(alloc::format!(
                "no idiomatic target for PIE {}",
                example.record.pie_id
            ))
        })?;
        let lit = targets
            .literal
            .get(&example.record.sentence_id)
            .ok_or_else(|| {
                CoreError::MissingDependency(alloc::format!(
                    "no literal target for sentence {}",
                    example.record.sentence_id
                ))
            })?;
        let idio_node = tape.constant(Tensor::vector(idio.clone()));
        let lit_node = tape.constant(Tensor::vector(lit.clone()));
        let sense = if objectives.treat_all_idiomatic {
            Sense::Idiomatic
        } else {
            example.record.sense
        };
        let (pos, neg) = match sense {
            Sense::Idiomatic => (idio_node, lit_node),
            Sense::Literal => (lit_node, idio_node),
        };
        let cos_pos = tape.cosine_sim(pie, pos)?;
        let cos_neg = tape.cosine_sim(pie, neg)?;
        let sim_sum = match objectives.sim_margin {
            None => {
                let pos_term = tape.affine(cos_pos, -1.0, 1.0);
                let hinge = tape.relu(cos_neg);
                tape.add(pos_term, hinge)?
            }
            Some(margin) => {
                let neg_m_pos = {
                    let minus_pos = tape.affine(cos_pos, -1.0, margin);
                    tape.add(minus_pos, cos_neg)?
                };
                tape.relu(neg_m_pos)
            }
        };
        let weighted = tape.affine(sim_sum, objectives.sim_weight, 0.0);
        total = tape.add(total, weighted)?;
        Some((cos_pos, cos_neg))
    } else {
        None
    };

    Ok(ExampleLoss {
        total,
        reconstruction_ce: ce,
        sim,
    })
}

/// Evaluates one example's loss on a throwaway frozen tape, returning plain
/// numbers. This is the reporting-side view of [`example_loss`].
pub fn total_loss<F: Real>(
    model: &FusedModel<F>,
    example: &TrainingExample,
    targets: Option<&SimTargets<F>>,
    objectives: &ObjectiveConfig,
) -> CoreResult<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = model.mount_frozen(&mut tape);
    let loss = example_loss(&mut tape, &vars, model, example, targets, objectives)?;
    Ok(breakdown_of(&tape, &loss))
}

pub fn breakdown_of<F: Real>(tape: &Tape<F>, loss: &ExampleLoss) -> LossBreakdown {
    let ce = tape.value(loss.reconstruction_ce).item().expect("scalar").as_f64();
    let (sp, sn) = match loss.sim {
        Some((p, n)) => (
            tape.value(p).item().expect("scalar").as_f64(),
            tape.value(n).item().expect("scalar").as_f64(),
        ),
        None => (0.0, 0.0),
    };
    LossBreakdown {
        reconstruction_ce: ce,
        sim_positive: sp,
        sim_negative: sn,
        total: tape.value(loss.total).item().expect("scalar").as_f64(),
    }
}

/// Copy-objective loss: reconstruction cross-entropy of the decoder against
/// the unaltered input sentence.
pub fn copy_loss<F: Real>(model: &FusedModel<F>, record: &SentenceRecord) -> CoreResult<f64> {
    let example = TrainingExample {
        record: record.clone(),
        prompt_kind: PromptKind::None,
        template_index: 0,
        input_tokens: record.tokens.clone(),
        target_sequence: record.tokens.clone(),
    };
    Ok(total_loss(model, &example, None, &ObjectiveConfig::copy_only())?.reconstruction_ce)
}

/// Prompt-infilling loss: cross-entropy against the full infilled output.
pub fn prompt_infill_loss<F: Real>(
    model: &FusedModel<F>,
    example: &TrainingExample,
) -> CoreResult<f64> {
    if example.prompt_kind == PromptKind::None {
        return Err(CoreError::invalid(
            "prompt_infill_loss requires a prompted example",
        ));
    }
    Ok(total_loss(model, example, None, &ObjectiveConfig::copy_only())?.reconstruction_ce)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::model::ModelConfig;
    use alloc::vec;

    fn record(tokens: Vec<u32>, span: (usize, usize), sense: Sense) -> SentenceRecord {
        SentenceRecord {
            sentence_id: 0,
            tokens,
            pie_id: 0,
            span,
            sense,
            split: Split::Train,
        }
    }

    #[test]
    fn similarity_loss_ideal_and_worst_cases() {
        let e1 = [1.0f64, 0.0];
        let e2 = [0.0f64, 1.0];
        // pie == positive target, orthogonal to negative → loss 0
        let (cp, cn, loss) = similarity_loss(&e1, &e1, &e2, Sense::Idiomatic).unwrap();
        assert!((cp - 1.0).abs() < 1e-12 && cn.abs() < 1e-12 && loss.abs() < 1e-12);
        // pie == negative target, orthogonal to positive → loss 2
        let (cp, cn, loss) = similarity_loss(&e1, &e2, &e1, Sense::Idiomatic).unwrap();
        assert!((cp - 0.0).abs() < 1e-12 && (cn - 1.0).abs() < 1e-12);
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_loss_matches_hand_computation_on_random_vectors() {
        let mut rng = crate::rng::Rng::new(4);
        for _ in 0..30 {
            let pie: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let idio: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let lit: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            for sense in [Sense::Idiomatic, Sense::Literal] {
                let (cp, cn, loss) = similarity_loss(&pie, &idio, &lit, sense).unwrap();
                let (pos, neg) = match sense {
                    Sense::Idiomatic => (&idio, &lit),
                    Sense::Literal => (&lit, &idio),
                };
                let hp = cosine_similarity(&pie, pos).unwrap();
                let hn = cosine_similarity(&pie, neg).unwrap();
                assert!((cp - hp).abs() < 1e-12);
                assert!((cn - hn).abs() < 1e-12);
                assert!((loss - ((1.0 - hp) + hn.max(0.0))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapping_sense_swaps_the_terms() {
        let mut rng = crate::rng::Rng::new(6);
        let pie: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let idio: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let lit: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let (p1, n1, _) = similarity_loss(&pie, &idio, &lit, Sense::Idiomatic).unwrap();
        let (p2, n2, _) = similarity_loss(&pie, &idio, &lit, Sense::Literal).unwrap();
        assert_eq!(p1, n2);
        assert_eq!(n1, p2);
    }

    #[test]
    fn similarity_loss_scale_invariance() {
        let mut rng = crate::rng::Rng::new(8);
        let pie: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let idio: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let lit: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let (_, _, base) = similarity_loss(&pie, &idio, &lit, Sense::Idiomatic).unwrap();
        for scale in [0.01, 3.0, 250.0] {
            let spie: Vec<f64> = pie.iter().map(|v| v * scale).collect();
            let sidio: Vec<f64> = idio.iter().map(|v| v * scale).collect();
            let (_, _, l1) = similarity_loss(&spie, &idio, &lit, Sense::Idiomatic).unwrap();
            let (_, _, l2) = similarity_loss(&pie, &sidio, &lit, Sense::Idiomatic).unwrap();
            assert!((l1 - base).abs() < 1e-9, "{l1} vs {base}");
            assert!((l2 - base).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_targets_error() {
        let z = [0.0f64; 3];
        let v = [1.0f64, 0.0, 0.0];
        assert!(matches!(
            similarity_loss(&v, &z, &v, Sense::Idiomatic),
            Err(CoreError::DegenerateVector { .. })
        ));
    }

    #[test]
    fn copy_loss_near_uniform_model_is_ln_vocab() {
        // zero-initialized embeddings would be degenerate; instead check the
        // loss sits near ln(vocab) for a fresh random model, which cannot
        // beat chance before training
        let model =
            FusedModel::<f64>::new(ModelConfig::tiny(16).with_variant(Variant::BaseOnly), 3)
                .unwrap();
        let rec = record(vec![5, 9, 3, 7], (1, 3), Sense::Idiomatic);
        let loss = copy_loss(&model, &rec).unwrap();
        let ln_v = 16.0f64.ln();
        assert!((loss - ln_v).abs() < 0.35, "loss {loss} vs ln V {ln_v}");
    }

    #[test]
    fn total_loss_is_additive() {
        let corpus = crate::corpus::Corpus::generate(&crate::corpus::CorpusParams {
            seed: 9,
            n_pies: 8,
            n_groups: 4,
            n_train: 200,
            n_test: 60,
            idiomatic_fraction: 0.7,
        })
        .unwrap();
        let cfg = ModelConfig::tiny(corpus.layout.vocab_size());
        let model = FusedModel::<f64>::new(cfg, 4).unwrap();
        let base = {
            let mut b = model.clone();
            b.config.variant = Variant::BaseOnly;
            b
        };
        let targets = SimTargets::compute(&base, &corpus.lexicon, &corpus.train[..20]).unwrap();
        let mut rng = crate::rng::Rng::new(2);
        let examples = crate::training::prompts::assign_prompts(
            &corpus.layout,
            &corpus.lexicon,
            &corpus.train[..20],
            PromptMode::full(true),
            &mut rng,
        )
        .unwrap();
        let objectives = ObjectiveConfig::full(true);
        for ex in &examples {
            let b = total_loss(&model, ex, Some(&targets), &objectives).unwrap();
            let sim_part = (1.0 - b.sim_positive) + b.sim_negative.max(0.0);
            assert!(
                (b.total - (b.reconstruction_ce + sim_part)).abs() < 1e-6,
                "additivity: {b:?}"
            );
            // copy-only config excludes similarity terms entirely
            let co = total_loss(&model, ex, None, &ObjectiveConfig::copy_only()).unwrap();
            assert_eq!(co.sim_positive, 0.0);
            assert!((co.total - co.reconstruction_ce).abs() < 1e-12);
        }
    }

    #[test]
    fn infill_loss_equals_independent_recomputation() {
        let corpus = crate::corpus::Corpus::generate(&crate::corpus::CorpusParams {
            seed: 10,
            n_pies: 8,
            n_groups: 4,
            n_train: 200,
            n_test: 60,
            idiomatic_fraction: 0.7,
        })
        .unwrap();
        let cfg = ModelConfig::tiny(corpus.layout.vocab_size());
        let model = FusedModel::<f64>::new(cfg, 5).unwrap();
        let mut rng = crate::rng::Rng::new(3);
        let examples = crate::training::prompts::assign_prompts(
            &corpus.layout,
            &corpus.lexicon,
            &corpus.train[..30],
            PromptMode::full(true),
            &mut rng,
        )
        .unwrap();
        let prompted = examples
            .iter()
            .find(|e| e.prompt_kind != PromptKind::None)
            .unwrap();
        let loss = prompt_infill_loss(&model, prompted).unwrap();
        // independent recomputation straight from the logits
        let mut tape = Tape::new();
        let vars = model.mount_frozen(&mut tape);
        let out = forward(
            &mut tape,
            &vars,
            &model,
            &prompted.input_tokens,
            Some(&prompted.target_sequence),
        )
        .unwrap();
        let logits = tape.value(out.logits.unwrap()).clone();
        let ids: Vec<usize> = prompted.target_sequence.iter().map(|t| *t as usize).collect();
        let expect =
            crate::numerics::cross_entropy(&logits, &ids, &alloc::vec![true; ids.len()]).unwrap();
        assert!((loss - expect).abs() < 1e-12);
        // unprompted examples are rejected
        let plain = examples
            .iter()
            .find(|e| e.prompt_kind == PromptKind::None)
            .unwrap();
        assert!(prompt_infill_loss(&model, plain).is_err());
    }

    #[test]
    fn idiomatic_targets_cluster_by_group() {
        // same-group glosses share vocabulary, so their target embeddings
        // should be closer on average than cross-group pairs
        let corpus = crate::corpus::Corpus::generate(&crate::corpus::CorpusParams {
            seed: 12,
            n_pies: 16,
            n_groups: 4,
            n_train: 400,
            n_test: 100,
            idiomatic_fraction: 0.7,
        })
        .unwrap();
        let cfg = ModelConfig::tiny(corpus.layout.vocab_size());
        let base =
            FusedModel::<f32>::new(cfg.with_variant(Variant::BaseOnly), 6).unwrap();
        let embs: Vec<(usize, Vec<f32>)> = corpus
            .lexicon
            .iter()
            .map(|e| {
                (
                    e.group_id,
                    idiomatic_target_embedding(&base, &e.definition_gloss).unwrap(),
                )
            })
            .collect();
        // determinism: same gloss twice gives the identical vector
        let again = idiomatic_target_embedding(&base, &corpus.lexicon[0].definition_gloss).unwrap();
        assert_eq!(embs[0].1, again);
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for i in 0..embs.len() {
            for j in (i + 1)..embs.len() {
                let c = cosine_similarity(&embs[i].1, &embs[j].1).unwrap() as f64;
                if embs[i].0 == embs[j].0 {
                    same.push(c);
                } else {
                    diff.push(c);
                }
            }
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&same) > mean(&diff),
            "same-group gloss embeddings should be more similar: {} vs {}",
            mean(&same),
            mean(&diff)
        );
    }
}
