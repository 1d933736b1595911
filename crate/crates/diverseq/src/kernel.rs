//! Quality scoring and quality-weighted DPP kernel construction.
//!
//! The kernel is the Gram-style decomposition `L = diag(q) * S * diag(q)`
//! together with the bookkeeping of which ground-set indices are conditioned
//! on (the context items) versus free.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sequences::SimilarityMatrix;

/// Floor applied to quality values so the positivity invariant survives
/// log-density underflow.
const QUALITY_FLOOR: f64 = 1e-300;

/// Piecewise quality of a sample from its log-density.
///
/// Returns the full weight `w` when the log-density reaches the threshold `k`,
/// and `w * exp(log_density - k)` below it; continuous at the threshold.
pub fn quality_score(log_density: f64, weight: f64, threshold: f64) -> Result<f64> {
    if !(weight > 0.0) || !weight.is_finite() {
        return Err(Error::InvalidQualityWeight(weight));
    }
    if !log_density.is_finite() || !threshold.is_finite() {
        return Err(Error::NonFinite {
            what: "quality input",
        });
    }
    let q = if log_density >= threshold {
        weight
    } else {
        weight * (log_density - threshold).exp()
    };
    Ok(q.max(QUALITY_FLOOR))
}

/// Derivative of [`quality_score`] with respect to the log-density.
///
/// Zero on the capped branch; equal to the quality itself below the threshold.
/// At the threshold exactly, the lower-branch one-sided derivative is used.
pub fn quality_score_derivative(log_density: f64, weight: f64, threshold: f64) -> f64 {
    if log_density > threshold {
        0.0
    } else {
        weight * (log_density - threshold).exp()
    }
}

/// Per-item quality values with the weight and threshold they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityVector {
    values: Vec<f64>,
    weight: f64,
    threshold: f64,
}

impl QualityVector {
    /// Validates `0 < q_i <= w` for every entry.
    pub fn new(values: Vec<f64>, weight: f64, threshold: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::InvalidQualityWeight(weight));
        }
        for (i, &q) in values.iter().enumerate() {
            if !(q > 0.0) || q > weight * (1.0 + 1e-12) {
                return Err(Error::InvalidConfig(format!(
                    "quality[{i}] = {q} outside (0, {weight}]"
                )));
            }
        }
        Ok(Self {
            values,
            weight,
            threshold,
        })
    }

    /// Apply the quality map to a batch of log-densities.
    pub fn from_log_densities(log_densities: &[f64], weight: f64, threshold: f64) -> Result<Self> {
        let values = log_densities
            .iter()
            .map(|&ld| quality_score(ld, weight, threshold))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            values,
            weight,
            threshold,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Quality-weighted DPP kernel with a conditioning partition.
///
/// `A` (the conditioned indices) and its complement partition the ground set;
/// `A` may be empty, in which case every conditional formula reduces to its
/// unconditional counterpart.
#[derive(Debug, Clone)]
pub struct DppKernel {
    l: DMatrix<f64>,
    cond: Vec<usize>,
    complement: Vec<usize>,
    quality: QualityVector,
    similarity: DMatrix<f64>,
}

impl DppKernel {
    /// Build `L[i, j] = q_i * S[i, j] * q_j` and record the partition.
    pub fn build(s: &SimilarityMatrix, q: &QualityVector, cond: &[usize]) -> Result<Self> {
        Self::from_similarity_entries(s.entries().clone(), q.clone(), cond)
    }

    /// As [`DppKernel::build`] but from a raw entry matrix; used when
    /// reloading a serialized kernel whose similarity is reconstructed.
    pub(crate) fn from_similarity_entries(
        similarity: DMatrix<f64>,
        quality: QualityVector,
        cond: &[usize],
    ) -> Result<Self> {
        let n = similarity.nrows();
        if quality.len() != n {
            return Err(Error::SizeMismatch {
                what: "quality vector",
                expected: n,
                actual: quality.len(),
            });
        }
        let cond = normalize_index_set(cond, n)?;
        let complement: Vec<usize> = (0..n).filter(|i| !cond.contains(i)).collect();
        let q = quality.values();
        let l = DMatrix::from_fn(n, n, |i, j| q[i] * similarity[(i, j)] * q[j]);
        Ok(Self {
            l,
            cond,
            complement,
            quality,
            similarity,
        })
    }

    /// Rebuild from serialized parts, keeping the stored kernel entries
    /// bit-exact. The similarity source is reconstructed as
    /// `L_ij / (q_i * q_j)` with a unit diagonal.
    pub(crate) fn from_stored(
        l: DMatrix<f64>,
        quality: QualityVector,
        cond: &[usize],
    ) -> Result<Self> {
        let n = l.nrows();
        if l.ncols() != n {
            return Err(Error::SizeMismatch {
                what: "kernel matrix",
                expected: n,
                actual: l.ncols(),
            });
        }
        if quality.len() != n {
            return Err(Error::SizeMismatch {
                what: "quality vector",
                expected: n,
                actual: quality.len(),
            });
        }
        if !crate::linalg::is_symmetric(&l, 1e-12) {
            return Err(Error::InvalidConfig("kernel matrix must be symmetric".into()));
        }
        let cond = normalize_index_set(cond, n)?;
        let complement: Vec<usize> = (0..n).filter(|i| !cond.contains(i)).collect();
        let q = quality.values();
        let similarity = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                l[(i, j)] / (q[i] * q[j])
            }
        });
        Ok(Self {
            l,
            cond,
            complement,
            quality,
            similarity,
        })
    }

    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Conditioned index set A, sorted.
    pub fn cond_indices(&self) -> &[usize] {
        &self.cond
    }

    /// Complement of A, sorted.
    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn quality(&self) -> &QualityVector {
        &self.quality
    }

    pub fn similarity_entries(&self) -> &DMatrix<f64> {
        &self.similarity
    }

    /// `L + I_complement`: ones added to the diagonal entries outside A.
    pub fn shifted(&self) -> DMatrix<f64> {
        let mut x = self.l.clone();
        for &i in &self.complement {
            x[(i, i)] += 1.0;
        }
        x
    }

    /// `L + I`, the unconditional normalizer matrix.
    pub fn plus_identity(&self) -> DMatrix<f64> {
        let mut x = self.l.clone();
        for i in 0..x.nrows() {
            x[(i, i)] += 1.0;
        }
        x
    }

    /// Replace the conditioning set, keeping the kernel entries.
    pub fn with_cond_indices(&self, cond: &[usize]) -> Result<Self> {
        Self::from_similarity_entries(self.similarity.clone(), self.quality.clone(), cond)
    }
}

/// Sort and range-check an index set, rejecting duplicates.
pub(crate) fn normalize_index_set(idx: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut out = idx.to_vec();
    out.sort_unstable();
    for pair in out.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::DuplicateIndex { index: pair[0] });
        }
    }
    if let Some(&bad) = out.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sim2(s12: f64) -> SimilarityMatrix {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, s12, s12, 1.0]);
        SimilarityMatrix::from_entries(m, 1.0).unwrap()
    }

    #[test]
    fn quality_branches() {
        // Threshold boundary uses the cap (w = 10 per the reference setup).
        assert_eq!(quality_score(3.0, 10.0, 3.0).unwrap(), 10.0);
        let below = quality_score(2.0, 10.0, 3.0).unwrap();
        assert!((below - 10.0 * (-1.0_f64).exp()).abs() < 1e-14);
        assert_eq!(quality_score(8.0, 2.0, 3.0).unwrap(), 2.0);
        assert!(quality_score(0.0, 0.0, 0.0).is_err());
        assert!(quality_score(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn quality_continuous_at_threshold() {
        let eps = 1e-9;
        let hi = quality_score(5.0, 10.0, 5.0).unwrap();
        let lo = quality_score(5.0 - eps, 10.0, 5.0).unwrap();
        assert!((hi - lo).abs() < 1e-7);
    }

    #[test]
    fn quality_derivative_convention() {
        // Lower branch: dq/dpi = q; at the threshold the lower-branch one-sided
        // derivative applies; above it the cap is flat.
        assert_eq!(quality_score_derivative(5.0, 10.0, 5.0), 10.0);
        assert_eq!(quality_score_derivative(6.0, 10.0, 5.0), 0.0);
        let d = quality_score_derivative(4.0, 10.0, 5.0);
        assert!((d - 10.0 * (-1.0_f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn all_ones_quality_reproduces_similarity() {
        let s = sim2(0.5);
        let q = QualityVector::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        let k = DppKernel::build(&s, &q, &[]).unwrap();
        assert_eq!(k.l(), s.entries());
    }

    #[test]
    fn hand_multiplied_two_by_two() {
        let s = sim2(0.5);
        let q = QualityVector::new(vec![2.0, 3.0], 3.0, 0.0).unwrap();
        let k = DppKernel::build(&s, &q, &[]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 9.0]);
        assert_eq!(k.l(), &expected);
        // det = q1^2 q2^2 (1 - s^2) = 36 * 0.75 = 27.
        let det = k.l()[(0, 0)] * k.l()[(1, 1)] - k.l()[(0, 1)] * k.l()[(1, 0)];
        assert!((det - 27.0).abs() < 1e-12);
    }

    #[test]
    fn partition_bookkeeping() {
        let s = sim2(0.1);
        let q = QualityVector::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        let k = DppKernel::build(&s, &q, &[1]).unwrap();
        assert_eq!(k.cond_indices(), &[1]);
        assert_eq!(k.complement(), &[0]);
        let shifted = k.shifted();
        assert_eq!(shifted[(0, 0)], k.l()[(0, 0)] + 1.0);
        assert_eq!(shifted[(1, 1)], k.l()[(1, 1)]);
    }

    #[test]
    fn bad_indices_rejected() {
        let s = sim2(0.1);
        let q = QualityVector::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        assert!(matches!(
            DppKernel::build(&s, &q, &[2]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            DppKernel::build(&s, &q, &[0, 0]),
            Err(Error::DuplicateIndex { .. })
        ));
    }

    #[test]
    fn quality_size_must_match() {
        let s = sim2(0.1);
        let q = QualityVector::new(vec![1.0], 1.0, 0.0).unwrap();
        assert!(matches!(
            DppKernel::build(&s, &q, &[]),
            Err(Error::SizeMismatch { .. })
        ));
    }
}
