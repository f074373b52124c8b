//! Clustering quality, embedding differentiation, sequence labeling, and
//! correlation metrics.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{CoreError, CoreResult};
use crate::evaluation::cluster::ClusterAssignment;
use crate::evaluation::embeddings::EmbeddingSet;
use crate::numerics::cosine_similarity;

fn entropy_of_counts(counts: &[usize], total: usize) -> f64 {
    let mut h = 0.0;
    for &c in counts {
        if c == 0 {
            continue;
        }
        let p = c as f64 / total as f64;
        h -= p * p.ln();
    }
    h
}

/// Entropy-based homogeneity: 1 when every cluster holds a single class,
/// 1 - H(C|K)/H(C) otherwise (natural logs; the base cancels).
pub fn homogeneity_score(assignment: &ClusterAssignment, truth: &[usize]) -> CoreResult<f64> {
    let n = truth.len();
    if n == 0 || assignment.labels.len() != n {
        return Err(CoreError::invalid(
            "homogeneity: empty input or label-length mismatch",
        ));
    }
    let n_classes = truth.iter().max().unwrap() + 1;
    let n_clusters = assignment.labels.iter().max().unwrap() + 1;
    let mut class_counts = alloc::vec![0usize; n_classes];
    for &c in truth {
        class_counts[c] += 1;
    }
    let h_c = entropy_of_counts(&class_counts, n);
    if h_c == 0.0 {
        return Ok(1.0);
    }
    let mut h_ck = 0.0;
    for k in 0..n_clusters {
        let members: Vec<usize> = assignment
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == k)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut within = alloc::vec![0usize; n_classes];
        for &m in &members {
            within[truth[m]] += 1;
        }
        h_ck += members.len() as f64 / n as f64 * entropy_of_counts(&within, members.len());
    }
    Ok((1.0 - h_ck / h_c).clamp(0.0, 1.0))
}

/// Mean 1 - cos over all unordered pairs of items from different groups.
pub fn mean_inter_group_cosine_distance(
    embeddings: &[Vec<f64>],
    groups: &[usize],
) -> CoreResult<f64> {
    if embeddings.len() != groups.len() {
        return Err(CoreError::invalid("inter-group distance: length mismatch"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            if groups[i] != groups[j] {
                sum += 1.0 - cosine_similarity(&embeddings[i], &embeddings[j])?;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(CoreError::invalid(
            "inter-group distance: need at least two groups",
        ));
    }
    Ok(sum / count as f64)
}

/// Mean cosine similarity between a PIE's idiomatic and literal embeddings,
/// over PIEs carrying both.
pub fn mean_inter_type_cosine_similarity(set: &EmbeddingSet) -> CoreResult<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for pe in set.per_pie.values() {
        if let (Some(idio), Some(lit)) = (&pe.idiomatic, &pe.literal) {
            sum += cosine_similarity(idio, lit)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(CoreError::invalid(
            "inter-type similarity: no PIE has both senses",
        ));
    }
    Ok(sum / count as f64)
}

/// Fraction of sequences whose every token label is correct.
pub fn sequence_accuracy(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> CoreResult<f64> {
    check_aligned(pred, gold)?;
    let correct = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.as_slice() == g.as_slice())
        .count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Per-sequence positive-token recall, averaged over sequences. A sequence
/// with no gold positives counts 1.0 when the prediction is also all
/// negative and 0.0 otherwise.
pub fn token_recall(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> CoreResult<f64> {
    check_aligned(pred, gold)?;
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        let tp = p.iter().zip(g).filter(|(pi, gi)| **pi && **gi).count();
        let positives = g.iter().filter(|x| **x).count();
        sum += if positives == 0 {
            if p.iter().any(|x| *x) {
                0.0
            } else {
                1.0
            }
        } else {
            tp as f64 / positives as f64
        };
    }
    Ok(sum / pred.len() as f64)
}

fn check_aligned(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> CoreResult<()> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(CoreError::invalid(
            "sequence metrics: empty input or count mismatch",
        ));
    }
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(CoreError::invalid("sequence metrics: length mismatch"));
        }
    }
    Ok(())
}

/// Product-moment correlation with a two-sided p-value from the
/// t-approximation; the p-value is approximate and used for reporting, not
/// for acceptance decisions.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> CoreResult<(f64, f64)> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return Err(CoreError::invalid(
            "pearson: need at least 3 aligned points",
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::invalid("pearson: zero variance input"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t2 = r * r * df / (1.0 - r * r);
        // two-sided: P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
        incomplete_beta(df / 2.0, 0.5, df / (df + t2))
    };
    Ok((r, p.clamp(0.0, 1.0)))
}

/// Regularized incomplete beta function I_x(a, b) by continued fraction
/// (Lentz), good to ~1e-12 for the df ranges used here.
fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..200 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-14 {
            break;
        }
    }
    h
}

/// Lanczos log-gamma.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for g in G {
        y += 1.0;
        ser += g / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn homogeneity_reference_cases() {
        // every cluster class-pure
        let a = ClusterAssignment {
            labels: vec![0, 0, 1, 2],
            k: 3,
        };
        assert_eq!(homogeneity_score(&a, &[0, 0, 1, 1]).unwrap(), 1.0);
        // one cluster, two balanced classes: no information
        let a = ClusterAssignment {
            labels: vec![0, 0, 0, 0],
            k: 1,
        };
        assert!(homogeneity_score(&a, &[0, 0, 1, 1]).unwrap().abs() < 1e-12);
        // mixed case, frozen from direct entropy evaluation at 64-bit
        let a = ClusterAssignment {
            labels: vec![0, 1, 1, 1],
            k: 2,
        };
        let h = homogeneity_score(&a, &[0, 0, 1, 1]).unwrap();
        assert!((h - 0.31127812445913283).abs() < 1e-12, "{h}");
    }

    #[test]
    fn homogeneity_invariant_under_cluster_relabeling() {
        let truth = [0usize, 0, 1, 1, 2, 2, 1];
        let labels = [2usize, 0, 1, 1, 0, 2, 1];
        let a = ClusterAssignment {
            labels: labels.to_vec(),
            k: 3,
        };
        let h1 = homogeneity_score(&a, &truth).unwrap();
        // permute label names 0->1, 1->2, 2->0
        let permuted: Vec<usize> = labels.iter().map(|l| (l + 1) % 3).collect();
        let b = ClusterAssignment {
            labels: permuted,
            k: 3,
        };
        let h2 = homogeneity_score(&b, &truth).unwrap();
        assert!((h1 - h2).abs() < 1e-12);
    }

    #[test]
    fn inter_group_distance_reference_cases() {
        let same = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let d = mean_inter_group_cosine_distance(&same, &[0, 1, 2]).unwrap();
        assert!(d.abs() < 1e-9);
        let ortho = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = mean_inter_group_cosine_distance(&ortho, &[0, 1]).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!(mean_inter_group_cosine_distance(&ortho, &[0, 0]).is_err());
    }

    #[test]
    fn sequence_accuracy_counts() {
        let gold = vec![vec![true, false], vec![false, false], vec![true, true], vec![false, true]];
        assert_eq!(sequence_accuracy(&gold, &gold).unwrap(), 1.0);
        let off: Vec<Vec<bool>> = gold
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s[0] = !s[0];
                s
            })
            .collect();
        assert_eq!(sequence_accuracy(&off, &gold).unwrap(), 0.0);
        let half = vec![gold[0].clone(), gold[1].clone(), vec![true, false], vec![true, true]];
        assert_eq!(sequence_accuracy(&half, &gold).unwrap(), 0.5);
        assert!(sequence_accuracy(&gold[..2].to_vec(), &gold).is_err());
    }

    #[test]
    fn token_recall_reference_instance() {
        // hand-computed: seq1 recall 0.5, seq2 (no gold positives, no
        // predictions) 1.0, seq3 2/3
        let gold = vec![
            vec![true, true, false],
            vec![false, false],
            vec![true, true, true],
        ];
        let pred = vec![
            vec![true, false, false],
            vec![false, false],
            vec![true, false, true],
        ];
        let r = token_recall(&pred, &gold).unwrap();
        let expect = (0.5 + 1.0 + 2.0 / 3.0) / 3.0;
        assert!((r - expect).abs() < 1e-12);
        // empty-positive sequence with predicted positives scores zero
        let pred2 = vec![
            vec![true, false, false],
            vec![true, false],
            vec![true, false, true],
        ];
        let r2 = token_recall(&pred2, &gold).unwrap();
        let expect2 = (0.5 + 0.0 + 2.0 / 3.0) / 3.0;
        assert!((r2 - expect2).abs() < 1e-12);
        assert_eq!(token_recall(&gold, &gold).unwrap(), 1.0);
    }

    #[test]
    fn pearson_reference_values() {
        let xs = [1.0, 2.0, 4.0, 5.0, 7.0, 11.0];
        let ys = [0.5, 2.5, 2.0, 6.0, 5.5, 9.0];
        let (r, p) = pearson_correlation(&xs, &ys).unwrap();
        assert!((r - 0.9371913249670007).abs() < 1e-12, "r {r}");
        assert!((p - 0.005793506586598679).abs() < 1e-9, "p {p}");
        let xs2 = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let ys2 = [2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0];
        let (r2, p2) = pearson_correlation(&xs2, &ys2).unwrap();
        assert!((r2 - 0.20965531907301216).abs() < 1e-12);
        assert!((p2 - 0.6182637176162882).abs() < 1e-9, "p2 {p2}");
    }

    #[test]
    fn pearson_perfect_and_degenerate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (r, p) = pearson_correlation(&xs, &xs).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && p < 1e-9);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let (r, _) = pearson_correlation(&xs, &neg).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        assert!(pearson_correlation(&xs, &[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(pearson_correlation(&xs[..2], &xs[..2]).is_err());
    }
}
