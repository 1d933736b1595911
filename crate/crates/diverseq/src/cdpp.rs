//! DPP and conditional-DPP probabilities, marginal kernels, and the induced-
//! cardinality and likelihood objectives with their kernel-level gradients.
//!
//! Conventions: log-probabilities of singular minors are the `NEG_INFINITY`
//! sentinel rather than errors (the likelihood-instability experiment visits
//! near-singular kernels on purpose); conditioning on the empty set reduces
//! every formula here to its unconditional form and doubles as a cross-check
//! path.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{normalize_index_set, DppKernel};
use crate::linalg;

/// Conditioning limit for `L + I_complement` before marginal-kernel inversion
/// is refused.
const MAX_CONDITION: f64 = 1e12;

/// Log-probability of drawing exactly `subset` under the unconditional DPP:
/// `logdet(L_Y) - logdet(L + I)`, with `det(L_empty) = 1`.
pub fn dpp_log_prob(kernel: &DppKernel, subset: &[usize]) -> Result<f64> {
    let subset = normalize_index_set(subset, kernel.size())?;
    let num = linalg::sym_logdet_submatrix(kernel.l(), &subset);
    let den = linalg::sym_logdet(&kernel.plus_identity());
    Ok(num - den)
}

/// Log-probability that the draw is exactly `A ∪ B` given `A ⊆ Y`:
/// `logdet(L_{A∪B}) - logdet(L + I_complement)`. `B` must avoid `A`.
pub fn conditional_log_prob(kernel: &DppKernel, b: &[usize]) -> Result<f64> {
    let b = normalize_index_set(b, kernel.size())?;
    if let Some(&bad) = b.iter().find(|i| kernel.cond_indices().contains(i)) {
        return Err(Error::IntersectsConditioned { index: bad });
    }
    let mut union = kernel.cond_indices().to_vec();
    union.extend_from_slice(&b);
    union.sort_unstable();
    let num = linalg::sym_logdet_submatrix(kernel.l(), &union);
    let den = linalg::sym_logdet(&kernel.shifted());
    if den == f64::NEG_INFINITY {
        // P(A ⊆ Y) = 0: conditioning event has no mass.
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
            lambda_min: 0.0,
            lambda_max: f64::NAN,
        });
    }
    Ok(num - den)
}

/// Marginal kernel of the conditional process, defined over the complement of
/// the conditioned set.
#[derive(Debug, Clone)]
pub struct MarginalKernel {
    k: DMatrix<f64>,
    ground_indices: Vec<usize>,
}

impl MarginalKernel {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Ground-set position of each row/column of the marginal kernel.
    pub fn ground_indices(&self) -> &[usize] {
        &self.ground_indices
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.k.trace()
    }
}

/// Conditional marginal kernel `K^A = I - [(L + I_complement)^-1]_complement`.
///
/// For an empty conditioning set this equals the standard marginal kernel
/// `L (L + I)^-1`. Errors when `L + I_complement` has condition number above
/// 1e12, carrying the spectrum diagnostics.
pub fn marginal_kernel(kernel: &DppKernel) -> Result<MarginalKernel> {
    let inv = shifted_inverse(kernel)?;
    let comp = kernel.complement();
    let m = comp.len();
    let mut k = DMatrix::from_fn(m, m, |i, j| -inv[(comp[i], comp[j])]);
    for i in 0..m {
        k[(i, i)] += 1.0;
    }
    // Spectrum of a valid marginal kernel lies in [0, 1].
    if m > 0 {
        let values = linalg::sym_eigenvalues(&k);
        if values[0] < -1e-8 || values[m - 1] > 1.0 + 1e-8 {
            return Err(Error::NotPsd {
                min_eigenvalue: values[0].min(1.0 - values[m - 1]),
            });
        }
    }
    Ok(MarginalKernel {
        k,
        ground_indices: comp.to_vec(),
    })
}

fn shifted_inverse(kernel: &DppKernel) -> Result<DMatrix<f64>> {
    linalg::spd_inverse(&kernel.shifted(), MAX_CONDITION)
}

/// Expected conditioned cardinality `tr(K^A)`, the induced-cardinality
/// objective. Lies in `[0, |complement|]`.
pub fn mic_objective(kernel: &DppKernel) -> Result<f64> {
    Ok(marginal_kernel(kernel)?.trace())
}

/// Entrywise derivative of [`mic_objective`] with respect to the kernel:
/// `G = ((L + I_comp)^-1 I_comp (L + I_comp)^-1)^T`, symmetric for symmetric
/// input. Upstream chain-rule composition is the caller's job.
pub fn mic_gradient(kernel: &DppKernel) -> Result<DMatrix<f64>> {
    let inv = shifted_inverse(kernel)?;
    let comp = kernel.complement();
    let n = kernel.size();
    let cols = linalg::submatrix(&inv, &(0..n).collect::<Vec<_>>(), comp);
    Ok(&cols * cols.transpose())
}

/// Conditioned log-likelihood of `subset`: `logdet(L_Y) - logdet(L + I_comp)`.
///
/// With an empty conditioning set the normalizer is `L + I` and this equals
/// [`dpp_log_prob`] exactly. Near-singular minors produce finite but
/// arbitrarily negative values; exactly singular ones the `-inf` sentinel.
pub fn mle_objective(kernel: &DppKernel, subset: &[usize]) -> Result<f64> {
    let subset = normalize_index_set(subset, kernel.size())?;
    let num = linalg::sym_logdet_submatrix(kernel.l(), &subset);
    let den = linalg::sym_logdet(&kernel.shifted());
    Ok(num - den)
}

/// Unconditioned variant of [`mle_objective`], normalized by `det(L + I)`.
pub fn mle_objective_unconditioned(kernel: &DppKernel, subset: &[usize]) -> Result<f64> {
    dpp_log_prob(kernel, subset)
}

/// Entrywise derivative of the conditioned log-likelihood of the full ground
/// set, `logdet(L) - logdet(L + I_comp)`: `G = L^-1 - (L + I_comp)^-1`.
///
/// Errors with [`Error::SingularMinor`] when `L` is singular to working
/// precision (the objective is then the `-inf` sentinel and the gradient is
/// undefined; callers record a sentinel instead of updating).
pub fn mle_full_gradient(kernel: &DppKernel) -> Result<DMatrix<f64>> {
    if linalg::sym_logdet(kernel.l()) == f64::NEG_INFINITY {
        return Err(Error::SingularMinor);
    }
    let l_inv = linalg::spd_inverse(kernel.l(), f64::INFINITY)?;
    let x_inv = shifted_inverse(kernel)?;
    Ok(l_inv - x_inv)
}
