//! Exact DPP sampling, fixed-cardinality sampling, conditional sampling, and
//! singleton MAP inference.
//!
//! The unconditioned sampler is the standard two-phase spectral algorithm:
//! eigenvector selection followed by the orthogonal-projection elimination
//! loop. Fixed-cardinality sampling replaces phase one with elementary-
//! symmetric-polynomial eigenvector selection. Conditional sampling goes
//! through the conditional marginal kernel with a factorization-based
//! Bernoulli chain, which stays exact even when the conditioning event has
//! small mass (rejection would not).
//!
//! Every sampler takes an explicit seeded generator (ChaCha8, see
//! [`crate::rng`]); the same seed yields the same subset.

use nalgebra::{DMatrix, DVector};

use crate::cdpp::marginal_kernel;
use crate::error::{Error, Result};
use crate::kernel::DppKernel;
use crate::linalg;
use crate::rng::{seed_rng, uniform, Rng};

/// Seed plus optional fixed cardinality.
#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub seed: u64,
    pub k: Option<usize>,
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, k: None }
    }
}

/// Relative tolerance below which negative eigenvalues are treated as a PSD
/// violation rather than round-off.
const PSD_RTOL: f64 = 1e-8;

/// Eigenvalues below this are not counted toward the numerical rank.
const RANK_TOL: f64 = 1e-12;

fn psd_spectrum(l: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mut values, vectors) = linalg::sym_eigen(l);
    let scale = values[values.len() - 1].abs().max(1.0);
    if values[0] < -PSD_RTOL * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: values[0],
        });
    }
    for v in values.iter_mut() {
        *v = v.max(0.0);
    }
    Ok((values, vectors))
}

/// Reusable unconditioned sampler; eigendecomposes once, draws many times.
#[derive(Debug, Clone)]
pub struct DppSampler {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl DppSampler {
    pub fn new(kernel: &DppKernel) -> Result<Self> {
        let (values, vectors) = psd_spectrum(kernel.l())?;
        Ok(Self { values, vectors })
    }

    /// One draw from the unconditioned process.
    pub fn sample(&self, rng: &mut Rng) -> Vec<usize> {
        let picked: Vec<usize> = (0..self.values.len())
            .filter(|&i| {
                let lambda = self.values[i];
                uniform(rng) < lambda / (1.0 + lambda)
            })
            .collect();
        let cols = picked.iter().map(|&i| self.vectors.column(i).into_owned()).collect();
        projection_sample(cols, rng)
    }
}

/// Reusable fixed-cardinality sampler.
#[derive(Debug, Clone)]
pub struct KdppSampler {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    esp: Vec<Vec<f64>>,
    k: usize,
}

impl KdppSampler {
    pub fn new(kernel: &DppKernel, k: usize) -> Result<Self> {
        let (values, vectors) = psd_spectrum(kernel.l())?;
        Self::from_spectrum(values, vectors, k)
    }

    fn from_spectrum(mut values: DVector<f64>, vectors: DMatrix<f64>, k: usize) -> Result<Self> {
        let rank = values.iter().filter(|&&v| v > RANK_TOL).count();
        if k > rank {
            return Err(Error::RankExceeded { k, rank });
        }
        // Normalizing the spectrum leaves every size-k subset probability
        // unchanged and keeps the polynomial table inside f64 range.
        let scale = values[values.len() - 1].max(f64::MIN_POSITIVE);
        for v in values.iter_mut() {
            *v /= scale;
        }
        let esp = esp_table(values.as_slice(), k);
        Ok(Self {
            values,
            vectors,
            esp,
            k,
        })
    }

    /// One draw of exactly `k` items, distributed proportionally to the
    /// size-`k` principal minors.
    pub fn sample(&self, rng: &mut Rng) -> Vec<usize> {
        let n = self.values.len();
        let mut remaining = self.k;
        let mut picked = Vec::with_capacity(self.k);
        for i in (1..=n).rev() {
            if remaining == 0 {
                break;
            }
            let p = self.values[i - 1] * self.esp[remaining - 1][i - 1] / self.esp[remaining][i];
            if uniform(rng) < p {
                picked.push(i - 1);
                remaining -= 1;
            }
        }
        debug_assert_eq!(remaining, 0, "eigenvector selection under-filled");
        let cols = picked.iter().map(|&i| self.vectors.column(i).into_owned()).collect();
        projection_sample(cols, rng)
    }
}

/// Reusable conditional sampler over the complement of the conditioned set.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    k_matrix: DMatrix<f64>,
    ground: Vec<usize>,
}

impl ConditionalSampler {
    pub fn new(kernel: &DppKernel) -> Result<Self> {
        let mk = marginal_kernel(kernel)?;
        Ok(Self {
            ground: mk.ground_indices().to_vec(),
            k_matrix: mk.matrix().clone(),
        })
    }

    /// One draw of `B ⊆ complement`, in ground-set indices.
    pub fn sample(&self, rng: &mut Rng) -> Vec<usize> {
        sequential_sample(&self.k_matrix, rng)
            .into_iter()
            .map(|i| self.ground[i])
            .collect()
    }
}

/// Reusable conditional fixed-cardinality sampler.
///
/// Works in the spectrum of the conditional marginal kernel: its eigenvalues
/// `nu` map to conditional L-ensemble eigenvalues `nu / (1 - nu)` with shared
/// eigenvectors, after which the usual fixed-cardinality machinery applies.
#[derive(Debug, Clone)]
pub struct ConditionalKdppSampler {
    inner: KdppSampler,
    ground: Vec<usize>,
}

impl ConditionalKdppSampler {
    pub fn new(kernel: &DppKernel, k: usize) -> Result<Self> {
        let mk = marginal_kernel(kernel)?;
        let (nu, vectors) = linalg::sym_eigen(mk.matrix());
        let values = DVector::from_fn(nu.len(), |i, _| {
            let v = nu[i].clamp(0.0, 1.0 - 1e-15);
            v / (1.0 - v)
        });
        Ok(Self {
            inner: KdppSampler::from_spectrum(values, vectors, k)?,
            ground: mk.ground_indices().to_vec(),
        })
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<usize> {
        self.inner
            .sample(rng)
            .into_iter()
            .map(|i| self.ground[i])
            .collect()
    }
}

/// One-shot unconditioned draw, deterministic in `cfg.seed`.
pub fn dpp_sample(kernel: &DppKernel, cfg: &SamplerConfig) -> Result<Vec<usize>> {
    let mut rng = seed_rng(cfg.seed);
    Ok(DppSampler::new(kernel)?.sample(&mut rng))
}

/// One-shot draw of exactly `k` items.
pub fn kdpp_sample(kernel: &DppKernel, k: usize, cfg: &SamplerConfig) -> Result<Vec<usize>> {
    let mut rng = seed_rng(cfg.seed);
    Ok(KdppSampler::new(kernel, k)?.sample(&mut rng))
}

/// One-shot conditional draw given the kernel's conditioned set.
pub fn conditional_sample(kernel: &DppKernel, cfg: &SamplerConfig) -> Result<Vec<usize>> {
    let mut rng = seed_rng(cfg.seed);
    Ok(ConditionalSampler::new(kernel)?.sample(&mut rng))
}

/// One-shot conditional draw of exactly `k` items.
pub fn conditional_kdpp_sample(
    kernel: &DppKernel,
    k: usize,
    cfg: &SamplerConfig,
) -> Result<Vec<usize>> {
    let mut rng = seed_rng(cfg.seed);
    conditional_kdpp_sample_with_rng(kernel, k, &mut rng)
}

/// Conditional fixed-cardinality draw continuing an existing generator stream.
pub fn conditional_kdpp_sample_with_rng(
    kernel: &DppKernel,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    Ok(ConditionalKdppSampler::new(kernel, k)?.sample(rng))
}

/// Singleton MAP: the complement index maximizing `logdet(L_{A ∪ {x}})`.
///
/// Ties break to the lowest index. Errors when every single-item minor is
/// singular (a fully degenerate candidate set).
pub fn map_single(kernel: &DppKernel) -> Result<usize> {
    if kernel.complement().is_empty() {
        return Err(Error::InvalidConfig(
            "MAP requires a nonempty complement".into(),
        ));
    }
    let mut best: Option<(usize, f64)> = None;
    for &x in kernel.complement() {
        let mut idx = kernel.cond_indices().to_vec();
        idx.push(x);
        idx.sort_unstable();
        let v = linalg::sym_logdet_submatrix(kernel.l(), &idx);
        if v == f64::NEG_INFINITY {
            continue;
        }
        // Strict improvement keeps the lowest index on ties; complement is
        // iterated in ascending order.
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((x, v));
        }
    }
    best.map(|(x, _)| x).ok_or(Error::DegenerateCandidates)
}

/// Weights `sum_j v_j[i]^2` form a distribution over items (columns are
/// orthonormal); draw one item, then eliminate the chosen coordinate from the
/// span and re-orthonormalize. Selected items are returned sorted.
fn projection_sample(mut cols: Vec<DVector<f64>>, rng: &mut Rng) -> Vec<usize> {
    let mut selected = Vec::with_capacity(cols.len());
    while !cols.is_empty() {
        let n = cols[0].len();
        let mut weights = vec![0.0; n];
        for col in &cols {
            for i in 0..n {
                weights[i] += col[i] * col[i];
            }
        }
        let total: f64 = weights.iter().sum();
        let mut u = uniform(rng) * total;
        let mut item = n - 1;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                item = i;
                break;
            }
            u -= w;
        }
        selected.push(item);

        // Pivot on the column with the largest component at `item`.
        let pivot_idx = (0..cols.len())
            .max_by(|&a, &b| cols[a][item].abs().total_cmp(&cols[b][item].abs()))
            .expect("nonempty");
        let pivot = cols.swap_remove(pivot_idx);
        let pv = pivot[item];
        for col in &mut cols {
            let c = col[item] / pv;
            col.axpy(-c, &pivot, 1.0);
        }
        // Modified Gram-Schmidt; the eliminated span keeps full rank, so the
        // norms stay well away from zero.
        for j in 0..cols.len() {
            for i in 0..j {
                let proj = cols[j].dot(&cols[i]);
                let prev = cols[i].clone();
                cols[j].axpy(-proj, &prev, 1.0);
            }
            let norm = cols[j].norm();
            debug_assert!(norm > 1e-9, "projection basis degenerated");
            cols[j] /= norm;
        }
    }
    selected.sort_unstable();
    selected
}

/// E[r][m] = elementary symmetric polynomial of degree r over the first m
/// eigenvalues. Row 0 is all ones.
fn esp_table(lambda: &[f64], k: usize) -> Vec<Vec<f64>> {
    let n = lambda.len();
    let mut e = vec![vec![0.0; n + 1]; k + 1];
    e[0] = vec![1.0; n + 1];
    for r in 1..=k {
        for m in 1..=n {
            e[r][m] = e[r][m - 1] + lambda[m - 1] * e[r - 1][m - 1];
        }
    }
    e
}

/// Factorization-based Bernoulli chain over a marginal kernel (local indices).
fn sequential_sample(k_matrix: &DMatrix<f64>, rng: &mut Rng) -> Vec<usize> {
    let m = k_matrix.nrows();
    let mut a = k_matrix.clone();
    let mut out = Vec::new();
    for j in 0..m {
        let p = a[(j, j)].clamp(0.0, 1.0);
        let include = uniform(rng) < p;
        let pivot = if include {
            out.push(j);
            a[(j, j)]
        } else {
            a[(j, j)] - 1.0
        };
        if pivot.abs() < 1e-12 {
            continue;
        }
        for r in (j + 1)..m {
            let f = a[(r, j)] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in (j + 1)..m {
                a[(r, c)] -= f * a[(j, c)];
            }
        }
    }
    out
}
