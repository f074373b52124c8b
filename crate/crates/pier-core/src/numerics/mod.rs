//! Differentiable tensor kernels and reverse-mode gradient propagation.
//!
//! The default numeric type for training is `f32`; every kernel is generic so
//! the same code path runs at `f64` for finite-difference verification (see
//! [`gradcheck`]).

pub mod gradcheck;
pub mod real;
pub mod tape;
pub mod tensor;

pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};

/// Norm threshold below which cosine similarity refuses to answer. Silent
/// zeros would hide training bugs, so degeneracy is an error.
pub const COSINE_NORM_EPSILON: f64 = 1e-8;

/// Numerically stable softmax of a non-empty vector (max-subtraction).
pub fn softmax<F: Real>(x: &[F]) -> CoreResult<Vec<F>> {
    if x.is_empty() {
        return Err(CoreError::invalid("softmax of empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite(alloc::string::String::from(
            "softmax input",
        )));
    }
    let max = x.iter().cloned().fold(x[0], F::max);
    let exps: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().cloned().fold(F::zero(), |a, b| a + b);
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Cosine similarity of two equal-length vectors, clamped to [-1, 1].
pub fn cosine_similarity<F: Real>(u: &[F], v: &[F]) -> CoreResult<F> {
    if u.len() != v.len() {
        return Err(CoreError::shape(alloc::format!(
            "cosine_similarity: lengths {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = F::zero();
    let mut nu = F::zero();
    let mut nv = F::zero();
    for i in 0..u.len() {
        dot = dot + u[i] * v[i];
        nu = nu + u[i] * u[i];
        nv = nv + v[i] * v[i];
    }
    let nu = nu.sqrt();
    let nv = nv.sqrt();
    let eps = F::from_f64(COSINE_NORM_EPSILON);
    if nu < eps || nv < eps {
        return Err(CoreError::DegenerateVector {
            norm: nu.min(nv).as_f64(),
            eps: COSINE_NORM_EPSILON,
        });
    }
    let c = dot / (nu * nv);
    Ok(c.max(-F::one()).min(F::one()))
}

/// Mean cross-entropy of row-wise logits against target ids over unmasked
/// positions.
pub fn cross_entropy<F: Real>(
    logits: &Tensor<F>,
    targets: &[usize],
    mask: &[bool],
) -> CoreResult<F> {
    let (rows, vocab) = logits.dims2()?;
    if targets.len() != rows || mask.len() != rows {
        return Err(CoreError::shape(alloc::format!(
            "cross_entropy: {rows} rows, {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let active = mask.iter().filter(|m| **m).count();
    if active == 0 {
        return Err(CoreError::EmptyLoss);
    }
    let mut total = F::zero();
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        let t = targets[r];
        if t >= vocab {
            return Err(CoreError::invalid(alloc::format!(
                "cross_entropy: target {t} out of vocab {vocab}"
            )));
        }
        let row = logits.row(r);
        let p = softmax(row)?;
        total = total - p[t].max(F::from_f64(f64::MIN_POSITIVE)).ln();
    }
    Ok(total / F::from_f64(active as f64))
}

/// Elementwise arithmetic mean of a non-empty list of equal-length vectors.
pub fn mean_pool<F: Real>(vectors: &[&[F]]) -> CoreResult<Vec<F>> {
    let first = vectors
        .first()
        .ok_or_else(|| CoreError::invalid("mean_pool of empty list"))?;
    let dim = first.len();
    let mut out = alloc::vec![F::zero(); dim];
    for v in vectors {
        if v.len() != dim {
            return Err(CoreError::shape("mean_pool: unequal vector lengths"));
        }
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o = *o + *x;
        }
    }
    let n = F::from_f64(vectors.len() as f64);
    for o in out.iter_mut() {
        *o = *o / n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0f64, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_singleton() {
        let p = softmax(&[3.7f32]).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn softmax_reference_values() {
        // exp(x_i)/sum exp(x_j) evaluated at high precision for [1, 2, 3].
        let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        let expected = [
            0.09003057317038046,
            0.24472847105479767,
            0.6652409557748219,
        ];
        for (a, b) in p.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_sums_to_one_over_wide_range() {
        let mut rng = crate::rng::Rng::new(9);
        for _ in 0..200 {
            let n = rng.range_inclusive(1, 12);
            let x: vec::Vec<f32> = (0..n)
                .map(|_| rng.uniform_in(-50.0, 50.0) as f32)
                .collect();
            let p = softmax(&x).unwrap();
            let sum: f32 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|v| *v > 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax::<f64>(&[]).is_err());
        assert!(softmax(&[1.0f64, f64::NAN]).is_err());
        assert!(softmax(&[1.0f64, f64::INFINITY]).is_err());
    }

    #[test]
    fn cosine_identity_orthogonal_antiparallel() {
        let v = [0.3f64, -1.2, 2.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let e1 = [1.0f64, 0.0];
        let e2 = [0.0f64, 1.0];
        assert!(cosine_similarity(&e1, &e2).unwrap().abs() < 1e-12);
        let neg: vec::Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_degenerate() {
        let z = [0.0f64; 3];
        let v = [1.0f64, 0.0, 0.0];
        assert!(matches!(
            cosine_similarity(&z, &v),
            Err(CoreError::DegenerateVector { .. })
        ));
    }

    #[test]
    fn cosine_scale_invariance() {
        let mut rng = crate::rng::Rng::new(21);
        for _ in 0..50 {
            let u: vec::Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let v: vec::Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let a = rng.uniform_in(0.1, 10.0);
            let b = rng.uniform_in(0.1, 10.0);
            let au: vec::Vec<f64> = u.iter().map(|x| a * x).collect();
            let bv: vec::Vec<f64> = v.iter().map(|x| b * x).collect();
            let c1 = cosine_similarity(&u, &v).unwrap();
            let c2 = cosine_similarity(&au, &bv).unwrap();
            assert!((c1 - c2).abs() < 1e-6);
            let c3 = cosine_similarity(&v, &u).unwrap();
            assert!((c1 - c3).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::from_vec(vec![2, 4], vec![0.5f64; 8]).unwrap();
        let ce = cross_entropy(&logits, &[1, 3], &[true, true]).unwrap();
        assert!((ce - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_near_point_mass() {
        let mut data = vec![0.0f64; 2 * 5];
        data[3] = 50.0;
        data[5 + 1] = 50.0;
        let logits = Tensor::from_vec(vec![2, 5], data).unwrap();
        let ce = cross_entropy(&logits, &[3, 1], &[true, true]).unwrap();
        assert!(ce < 1e-6, "ce {ce}");
    }

    #[test]
    fn cross_entropy_reference_instance() {
        // -(log p[t]) averaged over two positions, vocab 3, computed by hand
        // at 64-bit: logits [[0.2, -1.1, 0.7], [1.5, 0.3, -0.4]], targets [2, 0].
        let logits =
            Tensor::from_vec(vec![2, 3], vec![0.2f64, -1.1, 0.7, 1.5, 0.3, -0.4]).unwrap();
        let ce = cross_entropy(&logits, &[2, 0], &[true, true]).unwrap();
        let expected = 0.4720510820893417; // frozen from direct -sum(log p) evaluation
        assert!((ce - expected).abs() < 1e-12, "{ce}");
    }

    #[test]
    fn cross_entropy_mask_and_errors() {
        let logits = Tensor::from_vec(vec![2, 3], vec![0.0f64; 6]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, &[0, 1], &[false, false]),
            Err(CoreError::EmptyLoss)
        ));
        assert!(cross_entropy(&logits, &[0, 9], &[true, true]).is_err());
        // Masked positions are ignored even with out-of-range targets elsewhere valid.
        let ce = cross_entropy(&logits, &[0, 1], &[true, false]).unwrap();
        assert!((ce - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_pool_basics() {
        let v = [1.0f64, 3.0];
        assert_eq!(mean_pool(&[&v]).unwrap(), vec![1.0, 3.0]);
        let neg = [-1.0f64, -3.0];
        assert_eq!(mean_pool(&[&v, &neg]).unwrap(), vec![0.0, 0.0]);
        let a = [1.0f64, 3.0];
        let b = [3.0f64, 5.0];
        assert_eq!(mean_pool(&[&a, &b]).unwrap(), vec![2.0, 4.0]);
        assert!(mean_pool::<f64>(&[]).is_err());
    }
}
