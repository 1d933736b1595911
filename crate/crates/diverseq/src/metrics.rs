//! Quantitative diversity metrics for generated sample batches.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sequences::FeatureSequence;

/// Determinants this close to zero are snapped to exactly zero; rank-deficient
/// Gram matrices land here through round-off.
const DET_SNAP: f64 = 1e-14;

/// Population standard deviation of a scalar (d = 1) sequence's frame values.
pub fn sigma_p(seq: &FeatureSequence) -> Result<f64> {
    let values = seq.scalars()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Determinant of the pairwise cosine-similarity matrix of a batch.
///
/// Sequences are flattened to vectors and must share a length; mutually
/// orthogonal batches score 1, any collinear pair scores 0. No silent padding:
/// unequal lengths are an error, as are zero-norm sequences.
pub fn diversity_determinant(batch: &[FeatureSequence]) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::InvalidConfig(
            "diversity determinant needs at least 2 sequences".into(),
        ));
    }
    let flats: Vec<Vec<f64>> = batch.iter().map(|s| s.flat()).collect();
    let len = flats[0].len();
    for (seq, flat) in batch.iter().zip(&flats) {
        if flat.len() != len {
            return Err(Error::UnequalLengths {
                left: flat.len(),
                right: len,
            });
        }
        let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm {
                id: seq.id().to_string(),
            });
        }
    }
    let norms: Vec<f64> = flats
        .iter()
        .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let n = batch.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            let dot: f64 = flats[i].iter().zip(&flats[j]).map(|(a, b)| a * b).sum();
            dot / (norms[i] * norms[j])
        }
    });
    let det = gram.lu().determinant();
    if det.abs() <= DET_SNAP {
        return Ok(0.0);
    }
    Ok(det.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, vals: &[f64]) -> FeatureSequence {
        FeatureSequence::from_scalars(id, vals).unwrap()
    }

    #[test]
    fn sigma_constant_sequence_is_zero() {
        assert_eq!(sigma_p(&seq("c", &[3.0, 3.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn sigma_hand_value() {
        assert_eq!(sigma_p(&seq("x", &[0.0, 2.0])).unwrap(), 1.0);
    }

    #[test]
    fn sigma_rejects_vector_frames() {
        let s = FeatureSequence::new("v", vec![vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            sigma_p(&s),
            Err(Error::ScalarFramesRequired { dim: 2 })
        ));
    }

    #[test]
    fn orthogonal_pair_scores_one() {
        let batch = [seq("a", &[1.0, 0.0]), seq("b", &[0.0, 1.0])];
        assert_eq!(diversity_determinant(&batch).unwrap(), 1.0);
    }

    #[test]
    fn duplicate_scores_zero() {
        let batch = [
            seq("a", &[1.0, 2.0, 3.0]),
            seq("b", &[0.5, -1.0, 0.25]),
            seq("a2", &[1.0, 2.0, 3.0]),
        ];
        assert_eq!(diversity_determinant(&batch).unwrap(), 0.0);
    }

    #[test]
    fn scaling_a_sequence_changes_nothing() {
        let batch = [seq("a", &[1.0, 2.0]), seq("b", &[2.0, -1.5])];
        let scaled = [seq("a", &[10.0, 20.0]), seq("b", &[2.0, -1.5])];
        let d1 = diversity_determinant(&batch).unwrap();
        let d2 = diversity_determinant(&scaled).unwrap();
        assert!((d1 - d2).abs() < 1e-14);
    }

    #[test]
    fn unequal_lengths_rejected() {
        let batch = [seq("a", &[1.0, 2.0]), seq("b", &[1.0])];
        assert!(matches!(
            diversity_determinant(&batch),
            Err(Error::UnequalLengths { .. })
        ));
    }

    #[test]
    fn zero_norm_rejected() {
        let batch = [seq("a", &[0.0, 0.0]), seq("b", &[1.0, 1.0])];
        assert!(matches!(
            diversity_determinant(&batch),
            Err(Error::ZeroNorm { .. })
        ));
    }
}
