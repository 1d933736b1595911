//! Variable-length feature sequences, soft-DTW, and similarity matrices.
//!
//! Sequences are ordered lists of real frames with a shared dimension. The
//! discrepancy between two sequences is the soft dynamic time warping value
//! under the L1 frame metric, computed with the standard smoothed-min
//! recurrence; its exact gradient with respect to the first argument comes
//! from the alignment-expectation backward recursion.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Sentinel standing in for +inf boundary cells of the DP table. Large enough
/// that `exp(-SENTINEL / gamma)` underflows to zero for any sane gamma, small
/// enough that arithmetic on it stays finite.
const BOUNDARY: f64 = 1e30;

/// Similarity entries are clamped into this closed interval so that downstream
/// kernels keep strictly positive, at-most-unit similarities.
const SIM_FLOOR: f64 = 1e-300;

/// A variable-length sequence of fixed-dimension real frames.
///
/// Invariants enforced at construction: at least one frame, every frame of the
/// same dimension `d >= 1`, all components finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    id: String,
    frames: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn new(id: impl Into<String>, frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        let dim = frames[0].len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { left: 0, right: 1 });
        }
        for frame in &frames {
            if frame.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: frame.len(),
                    right: dim,
                });
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "frame component",
                });
            }
        }
        Ok(Self {
            id: id.into(),
            frames,
        })
    }

    /// Scalar (d = 1) sequence from a slice of values.
    pub fn from_scalars(id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(id, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    /// Flattened frame values, row-major.
    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }

    /// Scalar values of a d = 1 sequence.
    pub fn scalars(&self) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::ScalarFramesRequired { dim: self.dim() });
        }
        Ok(self.frames.iter().map(|f| f[0]).collect())
    }
}

/// L1 distance between two frames of equal dimension.
pub fn frame_metric_l1(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "frame component",
        });
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum())
}

/// Smoothed minimum: `-gamma * ln(sum_k exp(-v_k / gamma))`, shifted for
/// stability. Arguments at the boundary sentinel contribute nothing.
fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if m >= BOUNDARY {
        return BOUNDARY;
    }
    let sum = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * sum.ln()
}

fn check_pair(a: &FeatureSequence, b: &FeatureSequence, gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidGamma(gamma));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Forward DP table, padded to (n+2) x (m+2) so the backward pass can reuse it.
/// Row-major; entry (i, j) is at `i * (m + 2) + j`.
fn forward_table(a: &FeatureSequence, b: &FeatureSequence, gamma: f64) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let w = m + 2;
    let mut r = vec![BOUNDARY; (n + 2) * w];
    r[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let d: f64 = a.frames[i - 1]
                .iter()
                .zip(&b.frames[j - 1])
                .map(|(x, y)| (x - y).abs())
                .sum();
            r[i * w + j] = d + softmin3(r[(i - 1) * w + j], r[i * w + j - 1], r[(i - 1) * w + j - 1], gamma);
        }
    }
    r
}

/// Soft-DTW discrepancy between `a` and `b` with smoothing `gamma`.
///
/// The value is the terminal cell of the recurrence
/// `r[i,j] = D(a_i, b_j) + softmin_gamma(r[i-1,j], r[i,j-1], r[i-1,j-1])`
/// with `r[0,0] = 0` and +inf elsewhere on the boundary. Symmetric in its
/// sequence arguments; can be negative for large gamma.
pub fn soft_dtw(a: &FeatureSequence, b: &FeatureSequence, gamma: f64) -> Result<f64> {
    check_pair(a, b, gamma)?;
    let r = forward_table(a, b, gamma);
    Ok(r[a.len() * (b.len() + 2) + b.len()])
}

/// Gradient of [`soft_dtw`] with respect to every component of `a`'s frames.
///
/// Chain of the alignment-expectation matrix with the L1 subgradient; ties in
/// the L1 terms use subgradient 0 so the result is deterministic and the
/// gradient of `soft_dtw(a, a, gamma)` stays finite.
pub fn soft_dtw_backward(
    a: &FeatureSequence,
    b: &FeatureSequence,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    check_pair(a, b, gamma)?;
    let (n, m) = (a.len(), b.len());
    let w = m + 2;
    let mut r = forward_table(a, b, gamma);

    // Re-border for the backward sweep: transitions leaving the table are
    // impossible (-inf sentinel) except for the terminal jump out of (n, m).
    r[(n + 1) * w + m + 1] = r[n * w + m];
    for i in 1..=n {
        r[i * w + m + 1] = -BOUNDARY;
    }
    for j in 1..=m {
        r[(n + 1) * w + j] = -BOUNDARY;
    }

    let cost = |i: usize, j: usize| -> f64 {
        if i > n || j > m {
            return 0.0;
        }
        a.frames[i - 1]
            .iter()
            .zip(&b.frames[j - 1])
            .map(|(x, y)| (x - y).abs())
            .sum()
    };
    let weight = |r_to: f64, r_from: f64, d_to: f64| -> f64 {
        if r_to <= -BOUNDARY {
            0.0
        } else {
            ((r_to - r_from - d_to) / gamma).exp()
        }
    };

    let mut e = vec![0.0; (n + 2) * w];
    e[(n + 1) * w + m + 1] = 1.0;
    for j in (1..=m).rev() {
        for i in (1..=n).rev() {
            let here = r[i * w + j];
            let down = weight(r[(i + 1) * w + j], here, cost(i + 1, j)) * e[(i + 1) * w + j];
            let right = weight(r[i * w + j + 1], here, cost(i, j + 1)) * e[i * w + j + 1];
            let diag =
                weight(r[(i + 1) * w + j + 1], here, cost(i + 1, j + 1)) * e[(i + 1) * w + j + 1];
            e[i * w + j] = down + right + diag;
        }
    }

    let dim = a.dim();
    let mut grad = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..m {
            let align = e[(i + 1) * w + j + 1];
            if align == 0.0 {
                continue;
            }
            for ((g, &av), &bv) in grad[i].iter_mut().zip(&a.frames[i]).zip(&b.frames[j]) {
                let diff = av - bv;
                // L1 subgradient with ties mapped to 0.
                if diff != 0.0 {
                    *g += align * diff.signum();
                }
            }
        }
    }
    Ok(grad)
}

/// Symmetric matrix of pairwise sequence similarities in (0, 1].
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    entries: DMatrix<f64>,
    gamma: f64,
}

impl SimilarityMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Wrap a precomputed entry matrix. Validates symmetry, the [0, 1] range
    /// (zero being the orthogonal-items limit), and the unit diagonal.
    pub fn from_entries(entries: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidGamma(gamma));
        }
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(Error::SizeMismatch {
                what: "similarity matrix",
                expected: n,
                actual: entries.ncols(),
            });
        }
        if !crate::linalg::is_symmetric(&entries, 1e-12) {
            return Err(Error::InvalidConfig("similarity matrix must be symmetric".into()));
        }
        for i in 0..n {
            if (entries[(i, i)] - 1.0).abs() > 0.0 {
                return Err(Error::InvalidConfig("similarity diagonal must be exactly 1".into()));
            }
            for j in 0..n {
                let v = entries[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig(format!(
                        "similarity entry ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { entries, gamma })
    }
}

/// Exponent used for the similarity entry of a pair: the pair discrepancy
/// debiased by the self-alignment terms. Zero for identical sequences, which
/// pins the diagonal at exactly 1 and keeps the matrix positive semi-definite
/// under the L1 metric (the raw `exp(-dtw)` form loses PSD once self-alignment
/// values go negative at moderate gamma).
fn debiased_discrepancy(pair: f64, self_a: f64, self_b: f64) -> f64 {
    pair - 0.5 * (self_a + self_b)
}

/// Pairwise similarity matrix `S[i, j] = exp(-debiased soft-DTW)` over `seqs`.
///
/// Entries are clamped into `[1e-300, 1]` and the diagonal is exactly 1.
/// Pairs are computed in parallel; each entry depends only on its own pair, so
/// the result is bit-identical to a sequential evaluation.
pub fn similarity_matrix(seqs: &[FeatureSequence], gamma: f64) -> Result<SimilarityMatrix> {
    if seqs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = seqs.len();
    for s in seqs {
        if s.dim() != seqs[0].dim() {
            return Err(Error::DimensionMismatch {
                left: s.dim(),
                right: seqs[0].dim(),
            });
        }
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidGamma(gamma));
    }

    let selfs: Vec<f64> = seqs
        .par_iter()
        .map(|s| soft_dtw(s, s, gamma).expect("validated above"))
        .collect();

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = soft_dtw(&seqs[i], &seqs[j], gamma).expect("validated above");
            let v = (-debiased_discrepancy(d, selfs[i], selfs[j])).exp();
            v.clamp(SIM_FLOOR, 1.0)
        })
        .collect();

    let mut entries = DMatrix::identity(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        entries[(i, j)] = v;
        entries[(j, i)] = v;
    }
    Ok(SimilarityMatrix { entries, gamma })
}

/// Gradient of similarity entry `S` w.r.t. the frames of its first sequence.
///
/// `S = exp(-(dtw(a, b) - (dtw(a, a) + dtw(b, b)) / 2))`, so the gradient is
/// `-S * (d/da dtw(a, b) - d/da dtw(a, a) / ... )` with the self term's total
/// derivative folded in via symmetry. Entries pinned by the clamp get a zero
/// gradient. Used by the training chain; exposed for gradient checking.
pub fn similarity_entry_backward(
    a: &FeatureSequence,
    b: &FeatureSequence,
    entry: f64,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    if entry <= SIM_FLOOR || entry >= 1.0 {
        return Ok(vec![vec![0.0; a.dim()]; a.len()]);
    }
    let pair = soft_dtw_backward(a, b, gamma)?;
    // d/da [dtw(a,a)/2] = (d1 + d2)(a,a)/2 = d1(a,a) by exchange symmetry.
    let own = soft_dtw_backward(a, a, gamma)?;
    let grad = pair
        .iter()
        .zip(&own)
        .map(|(p, o)| {
            p.iter()
                .zip(o)
                .map(|(gp, go)| -entry * (gp - go))
                .collect()
        })
        .collect();
    Ok(grad)
}
