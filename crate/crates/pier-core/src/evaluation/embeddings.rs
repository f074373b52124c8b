//! Per-PIE embedding extraction and aggregation.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::corpus::{Sense, SentenceRecord};
use crate::error::CoreResult;
use crate::model::forward::{encode, pie_embedding};
use crate::model::FusedModel;
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

/// Aggregated idiomatic/literal embeddings per PIE. An embedding is present
/// exactly when at least one sentence of that sense exists in the records
/// the set was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PieEmbeddings {
    pub idiomatic: Option<Vec<f64>>,
    pub literal: Option<Vec<f64>>,
    pub idiomatic_count: usize,
    pub literal_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    pub per_pie: BTreeMap<u32, PieEmbeddings>,
}

/// Mean per-sense PIE embedding over each PIE's sentences. Aggregation runs
/// at 64-bit in record order, so reports stay bit-stable.
pub fn build_embedding_set<F: Real>(
    model: &FusedModel<F>,
    records: &[SentenceRecord],
) -> CoreResult<EmbeddingSet> {
    let mut sums: BTreeMap<(u32, Sense), (Vec<f64>, usize)> = BTreeMap::new();
    for record in records {
        let emb = pie_embedding(model, &record.tokens, record.span)?;
        let entry = sums
            .entry((record.pie_id, record.sense))
            .or_insert_with(|| (alloc::vec![0.0; emb.len()], 0));
        for (acc, v) in entry.0.iter_mut().zip(emb.iter()) {
            *acc += v.as_f64();
        }
        entry.1 += 1;
    }
    let mut per_pie: BTreeMap<u32, PieEmbeddings> = BTreeMap::new();
    for ((pie_id, sense), (sum, count)) in sums {
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let slot = per_pie.entry(pie_id).or_insert_with(|| PieEmbeddings {
            idiomatic: None,
            literal: None,
            idiomatic_count: 0,
            literal_count: 0,
        });
        match sense {
            Sense::Idiomatic => {
                slot.idiomatic = Some(mean);
                slot.idiomatic_count = count;
            }
            Sense::Literal => {
                slot.literal = Some(mean);
                slot.literal_count = count;
            }
        }
    }
    Ok(EmbeddingSet { per_pie })
}

/// Final-layer token embeddings for a batch of records, in record order.
/// The shared input of both probes.
pub fn encode_records<F: Real>(
    model: &FusedModel<F>,
    records: &[SentenceRecord],
) -> CoreResult<Vec<Tensor<F>>> {
    records.iter().map(|r| encode(model, &r.tokens)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusParams, Split};
    use crate::model::{ModelConfig, Variant};
    use crate::numerics::mean_pool;

    #[test]
    fn embedding_set_matches_brute_force() {
        let corpus = Corpus::generate(&CorpusParams {
            seed: 3,
            n_pies: 8,
            n_groups: 4,
            n_train: 200,
            n_test: 60,
            idiomatic_fraction: 0.7,
        })
        .unwrap();
        let model = FusedModel::<f32>::new(
            ModelConfig::tiny(corpus.layout.vocab_size()).with_variant(Variant::BaseOnly),
            5,
        )
        .unwrap();
        let records = &corpus.test[..40];
        let set = build_embedding_set(&model, records).unwrap();

        // brute-force recomputation by explicit loop
        for (&pie_id, pe) in &set.per_pie {
            for (sense, stored, count) in [
                (Sense::Idiomatic, &pe.idiomatic, pe.idiomatic_count),
                (Sense::Literal, &pe.literal, pe.literal_count),
            ] {
                let members: Vec<Vec<f64>> = records
                    .iter()
                    .filter(|r| r.pie_id == pie_id && r.sense == sense)
                    .map(|r| {
                        pie_embedding(&model, &r.tokens, r.span)
                            .unwrap()
                            .iter()
                            .map(|v| *v as f64)
                            .collect()
                    })
                    .collect();
                assert_eq!(members.len(), count);
                match stored {
                    None => assert!(members.is_empty()),
                    Some(mean) => {
                        let refs: Vec<&[f64]> = members.iter().map(|m| m.as_slice()).collect();
                        let expect = mean_pool(&refs).unwrap();
                        for (a, b) in mean.iter().zip(expect.iter()) {
                            assert!((a - b).abs() < 1e-12);
                        }
                    }
                }
            }
        }
        // a PIE absent from the records has no entry at all
        let absent = records.iter().map(|r| r.pie_id).max().unwrap() + 100;
        assert!(!set.per_pie.contains_key(&absent));
        let _ = Split::Train;
    }

    #[test]
    fn singleton_sense_equals_single_sentence_embedding() {
        let corpus = Corpus::generate(&CorpusParams {
            seed: 4,
            n_pies: 8,
            n_groups: 4,
            n_train: 200,
            n_test: 60,
            idiomatic_fraction: 0.7,
        })
        .unwrap();
        let model = FusedModel::<f32>::new(
            ModelConfig::tiny(corpus.layout.vocab_size()).with_variant(Variant::BaseOnly),
            6,
        )
        .unwrap();
        let one = &corpus.test[0..1];
        let set = build_embedding_set(&model, one).unwrap();
        let pe = &set.per_pie[&one[0].pie_id];
        let direct: Vec<f64> = pie_embedding(&model, &one[0].tokens, one[0].span)
            .unwrap()
            .iter()
            .map(|v| *v as f64)
            .collect();
        let stored = match one[0].sense {
            Sense::Idiomatic => pe.idiomatic.as_ref().unwrap(),
            Sense::Literal => pe.literal.as_ref().unwrap(),
        };
        for (a, b) in stored.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
