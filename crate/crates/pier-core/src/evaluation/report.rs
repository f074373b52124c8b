//! Per-PIE analysis tables and the aggregated metrics report.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::corpus::{Corpus, Sense};
use crate::error::CoreResult;
use crate::evaluation::embeddings::EmbeddingSet;
use crate::evaluation::metrics::pearson_correlation;
use crate::numerics::cosine_similarity;

/// Skew-ratio threshold flags from the error analysis: a PIE counts as
/// skewed when its training sentences are almost all of one sense.
pub const SKEW_HIGH: f64 = 0.85;
pub const SKEW_LOW: f64 = 0.15;
/// Inter-type similarity above this flags a poorly differentiated PIE.
pub const HIGH_SIMILARITY: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct PerPieRow {
    pub pie_id: u32,
    pub group_id: usize,
    pub train_sentences: usize,
    /// Idiomatic fraction of this PIE's training sentences.
    pub skew_ratio: f64,
    /// Present only when both senses exist in the evaluated split.
    pub inter_type_cos_sim: Option<f64>,
    pub senseclf_acc: Option<f64>,
    pub spandet_seq_acc: Option<f64>,
    pub flag_high_similarity: bool,
    pub flag_skewed: bool,
}

/// Mean inter-type similarity of skew-flagged PIEs versus the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewAnalysis {
    pub skewed_mean_sim: f64,
    pub balanced_mean_sim: f64,
    pub n_skewed: usize,
    pub n_balanced: usize,
}

/// (r, p) pairs of per-PIE performance against training sentence counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrelationReport {
    pub train_count_vs_inter_type_sim: Option<(f64, f64)>,
    pub train_count_vs_senseclf_acc: Option<(f64, f64)>,
    pub train_count_vs_spandet_seq_acc: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub h_score: f64,
    pub inter_group_cos_dist: f64,
    pub inter_type_cos_sim: f64,
    pub senseclf_f1: f64,
    pub senseclf_acc: f64,
    pub spandet_seq_acc: f64,
    pub spandet_token_recall: f64,
    pub reconstruction_acc: f64,
    pub clustered_pies: usize,
    pub dual_sense_pies: usize,
    pub per_pie: Vec<PerPieRow>,
    pub skew: Option<SkewAnalysis>,
    pub correlations: CorrelationReport,
    pub config_fingerprint: u64,
    pub seed: u64,
}

/// Builds the per-PIE table from the test-split embedding set, train-corpus
/// counts, and per-PIE task accuracies.
pub fn per_pie_report(
    set: &EmbeddingSet,
    corpus: &Corpus,
    senseclf_acc: &BTreeMap<u32, f64>,
    spandet_seq_acc: &BTreeMap<u32, f64>,
) -> CoreResult<Vec<PerPieRow>> {
    let mut rows = Vec::with_capacity(corpus.lexicon.len());
    for entry in &corpus.lexicon {
        let train: Vec<_> = corpus
            .train
            .iter()
            .filter(|r| r.pie_id == entry.pie_id)
            .collect();
        let idio = train.iter().filter(|r| r.sense == Sense::Idiomatic).count();
        let skew_ratio = idio as f64 / train.len() as f64;
        let inter_type = match set.per_pie.get(&entry.pie_id) {
            Some(pe) => match (&pe.idiomatic, &pe.literal) {
                (Some(i), Some(l)) => Some(cosine_similarity(i, l)?),
                _ => None,
            },
            None => None,
        };
        rows.push(PerPieRow {
            pie_id: entry.pie_id,
            group_id: entry.group_id,
            train_sentences: train.len(),
            skew_ratio,
            inter_type_cos_sim: inter_type,
            senseclf_acc: senseclf_acc.get(&entry.pie_id).copied(),
            spandet_seq_acc: spandet_seq_acc.get(&entry.pie_id).copied(),
            flag_high_similarity: inter_type.map(|s| s > HIGH_SIMILARITY).unwrap_or(false),
            flag_skewed: skew_ratio > SKEW_HIGH || skew_ratio < SKEW_LOW,
        });
    }
    Ok(rows)
}

/// Splits dual-sense PIEs into skew-flagged and balanced and compares their
/// mean inter-type similarity. None when either side is empty.
pub fn skew_analysis(rows: &[PerPieRow]) -> Option<SkewAnalysis> {
    let mut skewed = Vec::new();
    let mut balanced = Vec::new();
    for row in rows {
        if let Some(sim) = row.inter_type_cos_sim {
            if row.flag_skewed {
                skewed.push(sim);
            } else {
                balanced.push(sim);
            }
        }
    }
    if skewed.is_empty() || balanced.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some(SkewAnalysis {
        skewed_mean_sim: mean(&skewed),
        balanced_mean_sim: mean(&balanced),
        n_skewed: skewed.len(),
        n_balanced: balanced.len(),
    })
}

/// Correlates per-PIE training counts with each per-PIE outcome.
pub fn correlation_report(rows: &[PerPieRow]) -> CorrelationReport {
    let corr = |pairs: Vec<(f64, f64)>| -> Option<(f64, f64)> {
        if pairs.len() < 3 {
            return None;
        }
        let xs: Vec<f64> = pairs.iter().map(|(x, _)| *x).collect();
        let ys: Vec<f64> = pairs.iter().map(|(_, y)| *y).collect();
        pearson_correlation(&xs, &ys).ok()
    };
    CorrelationReport {
        train_count_vs_inter_type_sim: corr(
            rows.iter()
                .filter_map(|r| r.inter_type_cos_sim.map(|s| (r.train_sentences as f64, s)))
                .collect(),
        ),
        train_count_vs_senseclf_acc: corr(
            rows.iter()
                .filter_map(|r| r.senseclf_acc.map(|a| (r.train_sentences as f64, a)))
                .collect(),
        ),
        train_count_vs_spandet_seq_acc: corr(
            rows.iter()
                .filter_map(|r| r.spandet_seq_acc.map(|a| (r.train_sentences as f64, a)))
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusParams;
    use crate::evaluation::embeddings::PieEmbeddings;

    #[test]
    fn per_pie_flags_and_counts() {
        let corpus = Corpus::generate(&CorpusParams {
            seed: 8,
            n_pies: 24,
            n_groups: 6,
            n_train: 1400,
            n_test: 280,
            idiomatic_fraction: 0.774,
        })
        .unwrap();
        let mut set = EmbeddingSet::default();
        // synthetic embeddings: a high-similarity pair for pie 0, a
        // dissimilar pair for pie 1, one-sense-only for pie 2
        set.per_pie.insert(
            0,
            PieEmbeddings {
                idiomatic: Some(alloc::vec![1.0, 0.1]),
                literal: Some(alloc::vec![1.0, 0.12]),
                idiomatic_count: 3,
                literal_count: 2,
            },
        );
        set.per_pie.insert(
            1,
            PieEmbeddings {
                idiomatic: Some(alloc::vec![1.0, 0.0]),
                literal: Some(alloc::vec![0.0, 1.0]),
                idiomatic_count: 1,
                literal_count: 1,
            },
        );
        set.per_pie.insert(
            2,
            PieEmbeddings {
                idiomatic: Some(alloc::vec![1.0, 0.0]),
                literal: None,
                idiomatic_count: 2,
                literal_count: 0,
            },
        );
        let rows =
            per_pie_report(&set, &corpus, &BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!(rows.len(), corpus.lexicon.len());
        let row0 = rows.iter().find(|r| r.pie_id == 0).unwrap();
        assert!(row0.flag_high_similarity);
        let row1 = rows.iter().find(|r| r.pie_id == 1).unwrap();
        assert!(!row1.flag_high_similarity);
        let row2 = rows.iter().find(|r| r.pie_id == 2).unwrap();
        assert!(row2.inter_type_cos_sim.is_none());
        // count check against a direct corpus scan
        for row in &rows {
            let direct = corpus
                .train
                .iter()
                .filter(|r| r.pie_id == row.pie_id)
                .count();
            assert_eq!(row.train_sentences, direct);
            let idio = corpus
                .train
                .iter()
                .filter(|r| r.pie_id == row.pie_id && r.sense == Sense::Idiomatic)
                .count();
            assert!((row.skew_ratio - idio as f64 / direct as f64).abs() < 1e-12);
            // flag definition
            assert_eq!(
                row.flag_skewed,
                row.skew_ratio > 0.85 || row.skew_ratio < 0.15
            );
        }
        // the generated lexicon has skewed tails, so some rows must be flagged
        assert!(rows.iter().any(|r| r.flag_skewed));
        assert!(rows.iter().any(|r| !r.flag_skewed));
    }

    #[test]
    fn skew_analysis_splits_correctly() {
        let rows = alloc::vec![
            PerPieRow {
                pie_id: 0,
                group_id: 0,
                train_sentences: 10,
                skew_ratio: 0.9,
                inter_type_cos_sim: Some(0.8),
                senseclf_acc: None,
                spandet_seq_acc: None,
                flag_high_similarity: true,
                flag_skewed: true,
            },
            PerPieRow {
                pie_id: 1,
                group_id: 0,
                train_sentences: 10,
                skew_ratio: 0.5,
                inter_type_cos_sim: Some(0.2),
                senseclf_acc: None,
                spandet_seq_acc: None,
                flag_high_similarity: false,
                flag_skewed: false,
            },
        ];
        let s = skew_analysis(&rows).unwrap();
        assert_eq!(s.n_skewed, 1);
        assert_eq!(s.n_balanced, 1);
        assert!((s.skewed_mean_sim - 0.8).abs() < 1e-12);
        assert!((s.balanced_mean_sim - 0.2).abs() < 1e-12);
    }
}
