//! Shared helpers for the oracle test suites: random instances, subset
//! enumeration, and independent reference implementations.

#![allow(dead_code)]

use diverseq::kernel::QualityVector;
use diverseq::rng::{standard_normal, uniform, Rng};
use diverseq::sequences::{similarity_matrix, FeatureSequence, SimilarityMatrix};
use diverseq::DppKernel;
use nalgebra::DMatrix;

/// Random scalar sequence with length drawn from `[min_len, max_len]`.
pub fn rand_seq(rng: &mut Rng, id: &str, min_len: usize, max_len: usize) -> FeatureSequence {
    let len = min_len + (uniform(rng) * (max_len - min_len + 1) as f64) as usize;
    let len = len.min(max_len);
    let values: Vec<f64> = (0..len).map(|_| standard_normal(rng)).collect();
    FeatureSequence::from_scalars(id, &values).unwrap()
}

/// Random similarity matrix built from real sequences (the honest route: it
/// inherits the PSD structure of the construction under test).
pub fn rand_similarity(rng: &mut Rng, n: usize, gamma: f64) -> SimilarityMatrix {
    let seqs: Vec<FeatureSequence> = (0..n)
        .map(|i| rand_seq(rng, &format!("s{i}"), 3, 10))
        .collect();
    similarity_matrix(&seqs, gamma).unwrap()
}

/// Random quality vector with entries in (0.2, 1] * weight.
pub fn rand_quality(rng: &mut Rng, n: usize, weight: f64) -> QualityVector {
    let values: Vec<f64> = (0..n)
        .map(|_| weight * (0.2 + 0.8 * uniform(rng)))
        .collect();
    QualityVector::new(values, weight, 0.0).unwrap()
}

/// Random kernel over `n` items with the first `cond` conditioned.
pub fn rand_kernel(rng: &mut Rng, n: usize, cond: usize, weight: f64) -> DppKernel {
    let s = rand_similarity(rng, n, 1.0);
    let q = rand_quality(rng, n, weight);
    let cond_idx: Vec<usize> = (0..cond).collect();
    DppKernel::build(&s, &q, &cond_idx).unwrap()
}

/// Minimum summed-L1 cost over all monotone alignment paths, by explicit
/// recursion (no DP table shared with the implementation).
pub fn brute_force_dtw(a: &FeatureSequence, b: &FeatureSequence) -> f64 {
    use diverseq::sequences::frame_metric_l1;
    fn go(a: &FeatureSequence, b: &FeatureSequence, i: usize, j: usize) -> f64 {
        let c = frame_metric_l1(&a.frames()[i], &b.frames()[j]).unwrap();
        let (n, m) = (a.len(), b.len());
        if i + 1 == n && j + 1 == m {
            return c;
        }
        let mut best = f64::INFINITY;
        if i + 1 < n {
            best = best.min(go(a, b, i + 1, j));
        }
        if j + 1 < m {
            best = best.min(go(a, b, i, j + 1));
        }
        if i + 1 < n && j + 1 < m {
            best = best.min(go(a, b, i + 1, j + 1));
        }
        c + best
    }
    go(a, b, 0, 0)
}

/// All subsets of `0..n` as index vectors (n <= ~20).
pub fn all_subsets(n: usize) -> Vec<Vec<usize>> {
    (0..(1usize << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

/// All subsets of the given index pool.
pub fn subsets_of(pool: &[usize]) -> Vec<Vec<usize>> {
    all_subsets(pool.len())
        .into_iter()
        .map(|local| local.into_iter().map(|i| pool[i]).collect())
        .collect()
}

/// Determinant by cofactor expansion; an oracle independent of any
/// factorization code under test. Fine for n <= ~9.
pub fn cofactor_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 1.0;
    }
    if n == 1 {
        return m[(0, 0)];
    }
    let mut det = 0.0;
    for col in 0..n {
        let minor = DMatrix::from_fn(n - 1, n - 1, |i, j| {
            m[(i + 1, if j < col { j } else { j + 1 })]
        });
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[(0, col)] * cofactor_det(&minor);
    }
    det
}

/// Principal submatrix by index set.
pub fn principal(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Exact subset probability by cofactor determinants:
/// `det(L_Y) / det(L + I)`.
pub fn exact_subset_prob(kernel: &DppKernel, subset: &[usize]) -> f64 {
    let num = cofactor_det(&principal(kernel.l(), subset));
    let den = cofactor_det(&kernel.plus_identity());
    num / den
}

/// Exact conditional probability `det(L_{A∪B}) / det(L + I_comp)`.
pub fn exact_conditional_prob(kernel: &DppKernel, b: &[usize]) -> f64 {
    let mut union = kernel.cond_indices().to_vec();
    union.extend_from_slice(b);
    union.sort_unstable();
    let num = cofactor_det(&principal(kernel.l(), &union));
    let den = cofactor_det(&kernel.shifted());
    num / den
}
