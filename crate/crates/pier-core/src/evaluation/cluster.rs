//! Agglomerative clustering with complete linkage over cosine distance.

use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::numerics::cosine_similarity;

/// Flat clustering result: `labels[i]` is the cluster of item `i`, with
/// labels in `[0, k)` ordered by each cluster's smallest member index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

/// Pairwise cosine distance, 1 - cos.
pub fn cosine_distance_matrix(items: &[Vec<f64>]) -> CoreResult<Vec<Vec<f64>>> {
    let n = items.len();
    let mut d = alloc::vec![alloc::vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let c = cosine_similarity(&items[i], &items[j])?;
            d[i][j] = 1.0 - c;
            d[j][i] = d[i][j];
        }
    }
    Ok(d)
}

/// Bottom-up complete-linkage clustering: repeatedly merges the pair of
/// clusters with the smallest maximum member-to-member distance until `k`
/// clusters remain. Distance ties break on the smallest (i, j) pair of
/// cluster representatives (their lowest original member indices), which
/// pins the dendrogram across platforms.
pub fn agglomerative_cluster(items: &[Vec<f64>], k: usize) -> CoreResult<ClusterAssignment> {
    let n = items.len();
    if k == 0 || k > n {
        return Err(CoreError::invalid(alloc::format!(
            "cannot form {k} clusters from {n} items"
        )));
    }
    // clusters as sorted member lists; representative = first member.
    // Representatives stay ascending by position across merges, so picking
    // the first minimal pair by position IS the smallest-(i, j) tie-break.
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| alloc::vec![i]).collect();
    let mut dist = cosine_distance_matrix(items)?;

    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                if dist[a][b] < best.0 {
                    best = (dist[a][b], a, b);
                }
            }
        }
        let (_, a, b) = best;
        // complete linkage: distance to the merged cluster is the max
        let merged: Vec<f64> = (0..clusters.len())
            .map(|i| dist[a][i].max(dist[b][i]))
            .collect();
        for i in 0..clusters.len() {
            dist[a][i] = merged[i];
            dist[i][a] = merged[i];
        }
        dist[a][a] = 0.0;
        dist.remove(b);
        for row in dist.iter_mut() {
            row.remove(b);
        }
        let absorbed = clusters.remove(b);
        clusters[a].extend(absorbed);
        clusters[a].sort_unstable();
        debug_assert!(clusters.windows(2).all(|w| w[0][0] < w[1][0]));
    }

    // label clusters by ascending representative
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by_key(|i| clusters[*i][0]);
    let mut labels = alloc::vec![0usize; n];
    for (label, &ci) in order.iter().enumerate() {
        for &item in &clusters[ci] {
            labels[item] = label;
        }
    }
    Ok(ClusterAssignment { labels, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit(theta: f64) -> Vec<f64> {
        use num_traits::Float;
        vec![theta.cos(), theta.sin()]
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let items = vec![unit(0.0), unit(1.0), unit(2.0)];
        let a = agglomerative_cluster(&items, 3).unwrap();
        assert_eq!(a.labels, vec![0, 1, 2]);
    }

    #[test]
    fn k_one_gives_single_cluster() {
        let items = vec![unit(0.0), unit(1.0), unit(2.0)];
        let a = agglomerative_cluster(&items, 1).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0]);
    }

    #[test]
    fn invalid_k_rejected() {
        let items = vec![unit(0.0), unit(1.0)];
        assert!(agglomerative_cluster(&items, 3).is_err());
        assert!(agglomerative_cluster(&items, 0).is_err());
    }

    #[test]
    fn well_separated_groups_recovered() {
        // two tight bundles around orthogonal directions
        let items = vec![
            unit(0.00),
            unit(0.05),
            unit(0.10),
            unit(1.55),
            unit(1.60),
            unit(1.65),
        ];
        let a = agglomerative_cluster(&items, 2).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[1], a.labels[2]);
        assert_eq!(a.labels[3], a.labels[4]);
        assert_eq!(a.labels[4], a.labels[5]);
        assert_ne!(a.labels[0], a.labels[3]);
    }
}
