//! Differentiable candidate generator trained by ascending the conditional
//! induced-cardinality objective through the soft-DTW kernel, plus the full
//! inference path and the objective-stability comparison.
//!
//! The generator is a per-frame affine map from scaled Gaussian noise to
//! scalar target sequences. Candidate quality comes from an analytic
//! Gaussian AR(1) density, so the whole chain
//! `theta -> candidates -> (S, q) -> L -> objective`
//! has a closed-form gradient, composed by hand in [`train_step`]:
//! kernel-level gradient, then quality and similarity derivatives, then the
//! soft-DTW backward pass, then the affine map.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cdpp::{mic_gradient, mic_objective, mle_full_gradient, mle_objective};
use crate::error::{Error, Result};
use crate::kernel::{quality_score_derivative, DppKernel, QualityVector};
use crate::linalg;
use crate::rng::{seed_rng, standard_normal, Rng};
use crate::sampling::{conditional_kdpp_sample_with_rng, map_single};
use crate::sequences::{
    similarity_matrix, soft_dtw_backward, FeatureSequence, SimilarityMatrix,
};

/// Seed of the reference corpus used to compute the quality threshold; fixed
/// so the threshold does not move with the run seed.
const THRESHOLD_CORPUS_SEED: u64 = 0xD1CE;

/// Size of the reference corpus behind the automatic quality threshold.
const THRESHOLD_CORPUS_SIZE: usize = 1000;

/// Scale components are projected onto this floor after each update to keep
/// the affine map invertible.
const SCALE_FLOOR: f64 = 1e-6;

/// Similarity entries at the clamp boundaries contribute no gradient.
const SIM_CLAMP_LO: f64 = 1e-300;

/// Stationary Gaussian AR(1) density over scalar sequences; the analytic
/// stand-in for a learned density estimator. Log-density and its gradient are
/// exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub mean: f64,
    pub innovation_std: f64,
    pub ar_coefficient: f64,
}

impl Default for DensityModel {
    fn default() -> Self {
        Self {
            mean: 0.0,
            innovation_std: 0.4,
            ar_coefficient: 0.5,
        }
    }
}

impl DensityModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.innovation_std > 0.0) || !self.innovation_std.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "innovation_std must be positive, got {}",
                self.innovation_std
            )));
        }
        if !(self.ar_coefficient.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ar_coefficient must lie in (-1, 1), got {}",
                self.ar_coefficient
            )));
        }
        if !self.mean.is_finite() {
            return Err(Error::NonFinite { what: "mean" });
        }
        Ok(())
    }

    fn stationary_var(&self) -> f64 {
        self.innovation_std.powi(2) / (1.0 - self.ar_coefficient.powi(2))
    }

    /// Exact log-density of a scalar sequence under the stationary AR(1) law.
    pub fn log_density(&self, values: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::EmptySequence);
        }
        let ln_2pi = (std::f64::consts::TAU).ln();
        let sv = self.stationary_var();
        let mut ld = -0.5 * (ln_2pi + sv.ln()) - (values[0] - self.mean).powi(2) / (2.0 * sv);
        let iv = self.innovation_std.powi(2);
        for t in 1..values.len() {
            let r = values[t] - self.mean - self.ar_coefficient * (values[t - 1] - self.mean);
            ld += -0.5 * (ln_2pi + iv.ln()) - r * r / (2.0 * iv);
        }
        Ok(ld)
    }

    /// Gradient of [`DensityModel::log_density`] with respect to each value.
    pub fn log_density_grad(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.is_empty() {
            return Err(Error::EmptySequence);
        }
        let sv = self.stationary_var();
        let iv = self.innovation_std.powi(2);
        let mut g = vec![0.0; values.len()];
        g[0] = -(values[0] - self.mean) / sv;
        for t in 1..values.len() {
            let r = values[t] - self.mean - self.ar_coefficient * (values[t - 1] - self.mean);
            g[t] += -r / iv;
            g[t - 1] += self.ar_coefficient * r / iv;
        }
        Ok(g)
    }

    /// Draw one sequence of the given length.
    pub fn sample(&self, len: usize, rng: &mut Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let mut prev = self.mean + self.stationary_var().sqrt() * standard_normal(rng);
        out.push(prev);
        for _ in 1..len {
            prev = self.mean
                + self.ar_coefficient * (prev - self.mean)
                + self.innovation_std * standard_normal(rng);
            out.push(prev);
        }
        out
    }
}

/// Mean log-density of a reference corpus drawn from the density model; the
/// automatic quality threshold. Fixed corpus seed, independent of run seeds.
pub fn compute_threshold(density: &DensityModel, len: usize) -> Result<f64> {
    density.validate()?;
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let mut rng = seed_rng(THRESHOLD_CORPUS_SEED);
    let mut total = 0.0;
    for _ in 0..THRESHOLD_CORPUS_SIZE {
        let seq = density.sample(len, &mut rng);
        total += density.log_density(&seq)?;
    }
    Ok(total / THRESHOLD_CORPUS_SIZE as f64)
}

/// Per-frame affine generator parameters over a fixed maximum target length.
///
/// A target of length `T <= max_len` uses the first `T` components:
/// `x_j = scale_j * z_j + shift_j`. Scales stay strictly positive so the map
/// is invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl GeneratorParams {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        let p = Self { scale, shift };
        p.validate()?;
        Ok(p)
    }

    /// Constant scale/shift across all frames.
    pub fn constant(max_len: usize, scale: f64, shift: f64) -> Result<Self> {
        Self::new(vec![scale; max_len], vec![shift; max_len])
    }

    /// Identity map: scale 1, shift 0 (targets are the raw noise draws).
    pub fn identity(max_len: usize) -> Self {
        Self::constant(max_len, 1.0, 0.0).expect("valid by construction")
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.is_empty() || self.scale.len() != self.shift.len() {
            return Err(Error::SizeMismatch {
                what: "generator parameter vectors",
                expected: self.scale.len(),
                actual: self.shift.len(),
            });
        }
        for (i, &s) in self.scale.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "scale[{i}] must be positive and finite, got {s}"
                )));
            }
        }
        if self.shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "shift" });
        }
        Ok(())
    }

    pub fn max_len(&self) -> usize {
        self.scale.len()
    }

    fn map_noise(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| self.scale[j] * v + self.shift[j])
            .collect()
    }
}

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Expected conditioned cardinality (stable; the default).
    Mic,
    /// Conditioned log-likelihood of the full candidate set (the unstable
    /// comparison arm).
    Mle,
}

/// Training and inference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_candidates: usize,
    pub gamma: f64,
    pub quality_weight: f64,
    /// Quality threshold in log-density units; `None` computes the mean
    /// log-density of a fixed reference corpus at the run's target length.
    pub threshold: Option<f64>,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Noise scale applied to the standard-normal draws fed to the generator.
    pub noise_scale: f64,
    pub max_target_len: usize,
    pub context_len: usize,
    pub density: DensityModel,
    /// Initial per-frame scale; small values start the generator tightly
    /// clustered (low diversity).
    pub init_scale: f64,
    /// Initial per-frame shift; a nonzero value starts all candidates on a
    /// shared offset.
    pub init_shift: f64,
    /// Inject a near-duplicate candidate every this many steps (step indices
    /// divisible by the period). `None` disables injection.
    pub duplicate_every: Option<usize>,
    /// Perturbation applied to the injected near-duplicate's noise.
    pub duplicate_jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_candidates: 8,
            gamma: 1.0,
            quality_weight: 10.0,
            threshold: None,
            learning_rate: 1e-2,
            steps: 200,
            seed: 0,
            objective: Objective::Mic,
            noise_scale: 1.0,
            max_target_len: 12,
            context_len: 6,
            density: DensityModel::default(),
            init_scale: 0.2,
            init_shift: 0.8,
            duplicate_every: None,
            duplicate_jitter: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates < 2 {
            return Err(Error::InvalidConfig(
                "training needs at least 2 candidates".into(),
            ));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidGamma(self.gamma));
        }
        if !(self.quality_weight > 0.0) || !self.quality_weight.is_finite() {
            return Err(Error::InvalidQualityWeight(self.quality_weight));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be >= 0".into()));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidConfig("noise scale must be > 0".into()));
        }
        if self.max_target_len == 0 || self.context_len == 0 {
            return Err(Error::InvalidConfig("lengths must be >= 1".into()));
        }
        if !(self.init_scale > 0.0) || !self.init_shift.is_finite() {
            return Err(Error::InvalidConfig("bad generator initialization".into()));
        }
        if !(self.duplicate_jitter >= 0.0) || !self.duplicate_jitter.is_finite() {
            return Err(Error::InvalidConfig("duplicate jitter must be >= 0".into()));
        }
        self.density.validate()
    }

    /// Initial generator parameters for this configuration.
    pub fn init_params(&self) -> Result<GeneratorParams> {
        GeneratorParams::constant(self.max_target_len, self.init_scale, self.init_shift)
    }

    /// The configured threshold, or the reference-corpus mean log-density at
    /// the target length implied by the configured context length.
    pub fn resolved_threshold(&self) -> Result<f64> {
        match self.threshold {
            Some(k) if k.is_finite() => Ok(k),
            Some(_) => Err(Error::NonFinite { what: "threshold" }),
            None => {
                let len = target_length(self.context_len, self.context_len, self.max_target_len);
                compute_threshold(&self.density, len)
            }
        }
    }
}

/// Target length rule: the rounded mean of the two context lengths, clamped
/// into `[1, max_len]`.
pub fn target_length(left_len: usize, right_len: usize, max_len: usize) -> usize {
    let mean = ((left_len + right_len) as f64 / 2.0).round() as usize;
    mean.clamp(1, max_len)
}

/// Ordered ground set: two conditioning context sequences followed by the
/// generated target candidates. The conditioned indices are always `{0, 1}`.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    sequences: Vec<FeatureSequence>,
    n_context: usize,
}

impl CandidateSet {
    pub fn sequences(&self) -> &[FeatureSequence] {
        &self.sequences
    }

    pub fn contexts(&self) -> &[FeatureSequence] {
        &self.sequences[..self.n_context]
    }

    pub fn targets(&self) -> &[FeatureSequence] {
        &self.sequences[self.n_context..]
    }

    pub fn cond_indices(&self) -> Vec<usize> {
        (0..self.n_context).collect()
    }

    pub fn ground_size(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_targets(&self) -> usize {
        self.sequences.len() - self.n_context
    }
}

fn check_context(seq: &FeatureSequence) -> Result<()> {
    if seq.dim() != 1 {
        return Err(Error::ScalarFramesRequired { dim: seq.dim() });
    }
    Ok(())
}

/// Draw scaled noise vectors for `n_candidates` targets.
fn draw_noise(n_candidates: usize, len: usize, noise_scale: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n_candidates)
        .map(|_| (0..len).map(|_| noise_scale * standard_normal(rng)).collect())
        .collect()
}

fn assemble_candidates(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    noise: &[Vec<f64>],
) -> Result<CandidateSet> {
    let mut sequences = vec![left.clone(), right.clone()];
    for (c, z) in noise.iter().enumerate() {
        let values = params.map_noise(z);
        sequences.push(FeatureSequence::from_scalars(format!("target-{c}"), &values)?);
    }
    Ok(CandidateSet {
        sequences,
        n_context: 2,
    })
}

/// Generate `n_candidates` target sequences from seeded noise and assemble the
/// ground set `[left, right, targets...]` with conditioned indices `{0, 1}`.
pub fn generate_candidates(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    n_candidates: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<CandidateSet> {
    let mut rng = seed_rng(seed);
    generate_candidates_with_rng(params, left, right, n_candidates, noise_scale, &mut rng)
}

fn generate_candidates_with_rng(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    n_candidates: usize,
    noise_scale: f64,
    rng: &mut Rng,
) -> Result<CandidateSet> {
    if n_candidates == 0 {
        return Err(Error::InvalidConfig("need at least one candidate".into()));
    }
    params.validate()?;
    check_context(left)?;
    check_context(right)?;
    let len = target_length(left.len(), right.len(), params.max_len());
    let noise = draw_noise(n_candidates, len, noise_scale, rng);
    assemble_candidates(params, left, right, &noise)
}

/// Everything the forward pass produces for one candidate set.
struct Forward {
    set: CandidateSet,
    similarity: SimilarityMatrix,
    log_densities: Vec<f64>,
    kernel: DppKernel,
}

fn forward(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    cfg: &TrainConfig,
    threshold: f64,
    noise: &[Vec<f64>],
) -> Result<Forward> {
    let set = assemble_candidates(params, left, right, noise)?;
    let similarity = similarity_matrix(set.sequences(), cfg.gamma)?;
    let log_densities = set
        .sequences()
        .iter()
        .map(|s| cfg.density.log_density(&s.scalars()?))
        .collect::<Result<Vec<f64>>>()?;
    let quality =
        QualityVector::from_log_densities(&log_densities, cfg.quality_weight, threshold)?;
    let kernel = DppKernel::build(&similarity, &quality, &set.cond_indices())?;
    Ok(Forward {
        set,
        similarity,
        log_densities,
        kernel,
    })
}

fn objective_value(kernel: &DppKernel, objective: Objective) -> Result<f64> {
    match objective {
        Objective::Mic => mic_objective(kernel),
        Objective::Mle => {
            let full: Vec<usize> = (0..kernel.size()).collect();
            mle_objective(kernel, &full)
        }
    }
}

/// Kernel-level gradient, or `None` when the objective sits at a singular
/// sentinel and the gradient is undefined.
fn objective_gradient(kernel: &DppKernel, objective: Objective) -> Result<Option<DMatrix<f64>>> {
    match objective {
        Objective::Mic => Ok(Some(mic_gradient(kernel)?)),
        Objective::Mle => match mle_full_gradient(kernel) {
            Ok(g) => Ok(Some(g)),
            Err(Error::SingularMinor) | Err(Error::IllConditioned { .. }) => Ok(None),
            Err(e) => Err(e),
        },
    }
}

/// Gradient of the objective with respect to the generator parameters,
/// composed as kernel gradient -> (quality, similarity) -> frames -> affine.
fn backprop_to_params(
    fwd: &Forward,
    grad_l: &DMatrix<f64>,
    cfg: &TrainConfig,
    threshold: f64,
    noise: &[Vec<f64>],
    max_len: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = fwd.set.ground_size();
    let q = fwd.kernel.quality().values();
    let s = fwd.similarity.entries();
    let seqs = fwd.set.sequences();
    let gamma = cfg.gamma;

    // dJ/dq_i = 2 sum_j G_ij S_ij q_j (diagonal S entries are the constant 1).
    let mut dq = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += grad_l[(i, j)] * s[(i, j)] * q[j];
        }
        dq[i] = 2.0 * acc;
    }

    let n_targets = fwd.set.n_targets();
    let t0 = 2usize;
    // Self-alignment backward passes, cached per target.
    let mut own_grad: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_targets);
    for t in 0..n_targets {
        own_grad.push(soft_dtw_backward(&seqs[t0 + t], &seqs[t0 + t], gamma)?);
    }

    let mut dscale = vec![0.0; max_len];
    let mut dshift = vec![0.0; max_len];
    for t in 0..n_targets {
        let gi = t0 + t;
        let target = &seqs[gi];
        let len = target.len();
        let mut gx = vec![0.0; len];

        // Quality path: dq_gi/dpi is zero on the capped branch.
        let dqdpi = quality_score_derivative(fwd.log_densities[gi], cfg.quality_weight, threshold);
        if dqdpi != 0.0 && dq[gi] != 0.0 {
            let dpi = cfg.density.log_density_grad(&target.scalars()?)?;
            for j in 0..len {
                gx[j] += dq[gi] * dqdpi * dpi[j];
            }
        }

        // Similarity path: S_gi,other feeds both L orderings, hence the 2.
        for other in 0..n {
            if other == gi {
                continue;
            }
            let entry = s[(gi, other)];
            if entry <= SIM_CLAMP_LO || entry >= 1.0 {
                continue; // pinned by the clamp
            }
            let coeff = 2.0 * grad_l[(gi, other)] * q[gi] * q[other];
            if coeff == 0.0 {
                continue;
            }
            let pair = soft_dtw_backward(target, &seqs[other], gamma)?;
            for j in 0..len {
                let d_div = pair[j][0] - own_grad[t][j][0];
                gx[j] += coeff * (-entry) * d_div;
            }
        }

        for j in 0..len {
            dscale[j] += gx[j] * noise[t][j];
            dshift[j] += gx[j];
        }
    }
    Ok((dscale, dshift))
}

/// Deterministic forward loss (`-objective`) for explicit noise draws.
/// Exposed so gradients can be checked by finite differences.
pub fn evaluate_loss(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    cfg: &TrainConfig,
    threshold: f64,
    noise: &[Vec<f64>],
) -> Result<f64> {
    let fwd = forward(params, left, right, cfg, threshold, noise)?;
    Ok(-objective_value(&fwd.kernel, cfg.objective)?)
}

/// Loss and its analytic gradient with respect to the generator parameters,
/// for explicit noise draws.
pub fn evaluate_gradients(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    cfg: &TrainConfig,
    threshold: f64,
    noise: &[Vec<f64>],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let fwd = forward(params, left, right, cfg, threshold, noise)?;
    let value = objective_value(&fwd.kernel, cfg.objective)?;
    let grad_l = objective_gradient(&fwd.kernel, cfg.objective)?
        .ok_or(Error::SingularMinor)?;
    let (dj_scale, dj_shift) =
        backprop_to_params(&fwd, &grad_l, cfg, threshold, noise, params.max_len())?;
    // Loss = -objective.
    let dscale: Vec<f64> = dj_scale.iter().map(|v| -v).collect();
    let dshift: Vec<f64> = dj_shift.iter().map(|v| -v).collect();
    Ok((-value, dscale, dshift))
}

/// One per-step record of the training trace. Wall time is informational and
/// excluded from serialized traces to keep runs byte-reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Objective value J (may be the `-inf` sentinel on the likelihood arm).
    pub objective: f64,
    /// Frobenius norm of dJ/dL; `+inf` when the gradient is undefined.
    pub kernel_grad_norm: f64,
    /// Euclidean norm of the parameter-space loss gradient.
    pub param_grad_norm: f64,
    pub min_eig_l: f64,
    /// Smallest eigenvalue of `L + I_complement`.
    pub min_eig_shifted: f64,
    /// True when the update was skipped because the gradient was undefined or
    /// non-finite (diagnostic record only).
    pub update_skipped: bool,
    pub wall_secs: f64,
}

/// Full training trace, one record per step.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LossTrace {
    pub records: Vec<StepRecord>,
}

impl LossTrace {
    /// Median of the finite kernel-gradient norms; 0 when none are finite.
    pub fn median_finite_grad_norm(&self) -> f64 {
        let mut finite: Vec<f64> = self
            .records
            .iter()
            .map(|r| r.kernel_grad_norm)
            .filter(|g| g.is_finite())
            .collect();
        if finite.is_empty() {
            return 0.0;
        }
        finite.sort_by(f64::total_cmp);
        finite[finite.len() / 2]
    }
}

/// One gradient step on the given context pair.
///
/// Draws fresh noise from `rng` (injecting a near-duplicate candidate when the
/// schedule says so), differentiates the chosen objective through the kernel,
/// and applies one gradient-descent update on the loss `-J`. When the gradient
/// is undefined (singular likelihood) or non-finite, the update is skipped and
/// the record carries sentinel norms instead.
pub fn train_step(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    cfg: &TrainConfig,
    threshold: f64,
    step: usize,
    rng: &mut Rng,
) -> Result<(GeneratorParams, StepRecord)> {
    let start = Instant::now();
    let len = target_length(left.len(), right.len(), params.max_len());
    let mut noise = draw_noise(cfg.n_candidates, len, cfg.noise_scale, rng);
    let inject = cfg
        .duplicate_every
        .is_some_and(|period| period > 0 && step.is_multiple_of(period) && cfg.n_candidates >= 2);
    if inject {
        // Candidate 1 becomes a jittered copy of candidate 0. The jitter draw
        // happens on both arms of a paired run, keeping their streams aligned.
        let jitter: Vec<f64> = (0..len)
            .map(|_| cfg.duplicate_jitter * standard_normal(rng))
            .collect();
        noise[1] = noise[0]
            .iter()
            .zip(&jitter)
            .map(|(a, b)| a + b)
            .collect();
    }

    let fwd = forward(params, left, right, cfg, threshold, &noise)?;
    let objective = objective_value(&fwd.kernel, cfg.objective)?;
    let min_eig_l = linalg::min_eigenvalue(fwd.kernel.l());
    let min_eig_shifted = linalg::min_eigenvalue(&fwd.kernel.shifted());

    let grad_l = objective_gradient(&fwd.kernel, cfg.objective)?;
    let (kernel_grad_norm, param_grads) = match &grad_l {
        Some(g) => {
            let (dj_scale, dj_shift) =
                backprop_to_params(&fwd, g, cfg, threshold, &noise, params.max_len())?;
            (g.norm(), Some((dj_scale, dj_shift)))
        }
        None => (f64::INFINITY, None),
    };

    let finite = param_grads
        .as_ref()
        .is_some_and(|(a, b)| a.iter().chain(b.iter()).all(|v| v.is_finite()));

    let (next, param_grad_norm, update_skipped) = if let (Some((dj_scale, dj_shift)), true) =
        (&param_grads, finite)
    {
        let norm = dj_scale
            .iter()
            .chain(dj_shift.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        // Descent on loss = -J, i.e. ascent on J.
        let lr = cfg.learning_rate;
        let scale: Vec<f64> = params
            .scale
            .iter()
            .zip(dj_scale)
            .map(|(s, g)| (s + lr * g).max(SCALE_FLOOR))
            .collect();
        let shift: Vec<f64> = params
            .shift
            .iter()
            .zip(dj_shift)
            .map(|(b, g)| b + lr * g)
            .collect();
        (GeneratorParams { scale, shift }, norm, false)
    } else {
        (params.clone(), f64::INFINITY, true)
    };

    let record = StepRecord {
        step,
        objective,
        kernel_grad_norm,
        param_grad_norm,
        min_eig_l,
        min_eig_shifted,
        update_skipped,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    Ok((next, record))
}

/// Run the training loop: freshly sampled contexts per step, one
/// [`train_step`] each, full trace out.
pub fn train(cfg: &TrainConfig) -> Result<(GeneratorParams, LossTrace)> {
    cfg.validate()?;
    let threshold = cfg.resolved_threshold()?;
    let mut params = cfg.init_params()?;
    let mut rng = seed_rng(cfg.seed);
    let mut trace = LossTrace::default();
    for step in 0..cfg.steps {
        let left =
            FeatureSequence::from_scalars("context-left", &cfg.density.sample(cfg.context_len, &mut rng))?;
        let right =
            FeatureSequence::from_scalars("context-right", &cfg.density.sample(cfg.context_len, &mut rng))?;
        let (next, record) = train_step(&params, &left, &right, cfg, threshold, step, &mut rng)?;
        params = next;
        trace.records.push(record);
    }
    Ok((params, trace))
}

/// Paired traces of the two objectives on identical seeds and instances.
#[derive(Debug, Clone)]
pub struct ObjectiveComparison {
    pub mic: LossTrace,
    pub mle: LossTrace,
}

/// Train twice with the same seed and instance stream, once per objective.
pub fn compare_objectives(cfg: &TrainConfig) -> Result<ObjectiveComparison> {
    let mut mic_cfg = cfg.clone();
    mic_cfg.objective = Objective::Mic;
    let mut mle_cfg = cfg.clone();
    mle_cfg.objective = Objective::Mle;
    let (_, mic) = train(&mic_cfg)?;
    let (_, mle) = train(&mle_cfg)?;
    Ok(ObjectiveComparison { mic, mle })
}

/// Inference selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    /// Single sequence by conditioned singleton MAP.
    Map,
    /// `k` sequences by conditional fixed-cardinality sampling.
    Kdpp(usize),
}

/// Inference result: the selected target sequences plus the candidate set
/// they were chosen from.
#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub selected: Vec<FeatureSequence>,
    /// Ground-set indices of the selections (targets start at index 2).
    pub selected_indices: Vec<usize>,
    pub candidates: CandidateSet,
}

/// Generate candidates, build the conditioned kernel, and select.
pub fn infer(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    cfg: &TrainConfig,
    mode: InferMode,
    seed: u64,
) -> Result<InferOutcome> {
    let threshold = cfg.resolved_threshold()?;
    let mut rng = seed_rng(seed);
    let set = generate_candidates_with_rng(
        params,
        left,
        right,
        cfg.n_candidates,
        cfg.noise_scale,
        &mut rng,
    )?;
    let similarity = similarity_matrix(set.sequences(), cfg.gamma)?;
    let log_densities = set
        .sequences()
        .iter()
        .map(|s| cfg.density.log_density(&s.scalars()?))
        .collect::<Result<Vec<f64>>>()?;
    let quality =
        QualityVector::from_log_densities(&log_densities, cfg.quality_weight, threshold)?;
    let kernel = DppKernel::build(&similarity, &quality, &set.cond_indices())?;

    let selected_indices = match mode {
        InferMode::Map => vec![map_single(&kernel)?],
        InferMode::Kdpp(k) => conditional_kdpp_sample_with_rng(&kernel, k, &mut rng)?,
    };
    let selected = selected_indices
        .iter()
        .map(|&i| set.sequences()[i].clone())
        .collect();
    Ok(InferOutcome {
        selected,
        selected_indices,
        candidates: set,
    })
}

/// One sweep point: the MAP selection and its dispersion at a quality weight.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub weight: f64,
    pub selected_index: usize,
    pub sigma: f64,
    pub selected: FeatureSequence,
}

/// Re-run MAP inference across quality weights on one fixed candidate set
/// (same seed for every weight, so selection differences are attributable to
/// the weight alone). Returns the per-weight selections and the shared
/// candidate set.
pub fn quality_weight_sweep(
    params: &GeneratorParams,
    left: &FeatureSequence,
    right: &FeatureSequence,
    cfg: &TrainConfig,
    weights: &[f64],
    seed: u64,
) -> Result<(Vec<SweepPoint>, CandidateSet)> {
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidQualityWeight(
            weights.iter().copied().find(|&w| !(w > 0.0)).unwrap_or(f64::NAN),
        ));
    }
    let threshold = cfg.resolved_threshold()?;
    let set = generate_candidates(params, left, right, cfg.n_candidates, cfg.noise_scale, seed)?;
    let similarity = similarity_matrix(set.sequences(), cfg.gamma)?;
    let log_densities = set
        .sequences()
        .iter()
        .map(|s| cfg.density.log_density(&s.scalars()?))
        .collect::<Result<Vec<f64>>>()?;

    let mut points = Vec::with_capacity(weights.len());
    for &w in weights {
        let quality = QualityVector::from_log_densities(&log_densities, w, threshold)?;
        let kernel = DppKernel::build(&similarity, &quality, &set.cond_indices())?;
        let idx = map_single(&kernel)?;
        let selected = set.sequences()[idx].clone();
        points.push(SweepPoint {
            weight: w,
            selected_index: idx,
            sigma: crate::metrics::sigma_p(&selected)?,
            selected,
        });
    }
    Ok((points, set))
}

/// Self-contained trained model: parameters plus everything needed to score
/// and select candidates at inference time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub params: GeneratorParams,
    pub config: TrainConfig,
    pub threshold: f64,
}

impl SavedModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.config.validate()?;
        if !self.threshold.is_finite() {
            return Err(Error::NonFinite { what: "threshold" });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: &str, values: &[f64]) -> FeatureSequence {
        FeatureSequence::from_scalars(id, values).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            n_candidates: 3,
            context_len: 4,
            max_target_len: 5,
            steps: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ar1_log_density_matches_direct_formula() {
        let d = DensityModel {
            mean: 0.5,
            innovation_std: 0.7,
            ar_coefficient: 0.3,
        };
        let x = [0.2, 0.9, 0.4];
        let sv = 0.7f64.powi(2) / (1.0 - 0.09);
        let ln_2pi = std::f64::consts::TAU.ln();
        let mut expected = -0.5 * (ln_2pi + sv.ln()) - (0.2f64 - 0.5).powi(2) / (2.0 * sv);
        for t in 1..3 {
            let r = x[t] - 0.5 - 0.3 * (x[t - 1] - 0.5);
            expected += -0.5 * (ln_2pi + 0.49f64.ln()) - r * r / (2.0 * 0.49);
        }
        assert!((d.log_density(&x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ar1_gradient_matches_finite_differences() {
        let d = DensityModel::default();
        let x = [0.1, -0.4, 0.8, 0.3];
        let g = d.log_density_grad(&x).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut hi = x;
            hi[i] += eps;
            let mut lo = x;
            lo[i] -= eps;
            let fd = (d.log_density(&hi).unwrap() - d.log_density(&lo).unwrap()) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn identity_params_pass_noise_through() {
        let params = GeneratorParams::identity(4);
        let l = ctx("l", &[0.0, 0.0, 0.0, 0.0]);
        let r = ctx("r", &[0.0, 0.0, 0.0, 0.0]);
        let set = generate_candidates(&params, &l, &r, 2, 1.0, 7).unwrap();
        // Reproduce the draws and compare.
        let mut rng = seed_rng(7);
        let noise = draw_noise(2, 4, 1.0, &mut rng);
        for (t, z) in noise.iter().enumerate() {
            assert_eq!(&set.targets()[t].scalars().unwrap(), z);
        }
    }

    #[test]
    fn candidate_set_shape_and_determinism() {
        let params = GeneratorParams::identity(6);
        let l = ctx("l", &[0.1, 0.2, 0.3]);
        let r = ctx("r", &[0.0, -0.1, 0.4]);
        let a = generate_candidates(&params, &l, &r, 5, 1.0, 42).unwrap();
        let b = generate_candidates(&params, &l, &r, 5, 1.0, 42).unwrap();
        assert_eq!(a.ground_size(), 7);
        assert_eq!(a.cond_indices(), vec![0, 1]);
        assert_eq!(a.targets().len(), 5);
        for (x, y) in a.sequences().iter().zip(b.sequences()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut cfg = small_cfg();
        cfg.learning_rate = 0.0;
        let threshold = cfg.resolved_threshold().unwrap();
        let params = cfg.init_params().unwrap();
        let l = ctx("l", &[0.1, 0.2, -0.3, 0.4]);
        let r = ctx("r", &[0.5, -0.2, 0.0, 0.1]);
        let mut rng = seed_rng(3);
        let (next, record) =
            train_step(&params, &l, &r, &cfg, threshold, 0, &mut rng).unwrap();
        assert_eq!(next, params);
        assert!(!record.update_skipped);
        assert!(record.objective.is_finite());
    }

    #[test]
    fn zero_steps_is_vacuous() {
        let mut cfg = small_cfg();
        cfg.steps = 0;
        let (params, trace) = train(&cfg).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(params, cfg.init_params().unwrap());
    }

    #[test]
    fn trace_has_one_record_per_step() {
        let cfg = small_cfg();
        let (_, trace) = train(&cfg).unwrap();
        assert_eq!(trace.records.len(), cfg.steps);
        for (i, r) in trace.records.iter().enumerate() {
            assert_eq!(r.step, i);
        }
    }

    #[test]
    fn mic_objective_stays_in_bounds_during_training() {
        let mut cfg = small_cfg();
        cfg.steps = 10;
        let (_, trace) = train(&cfg).unwrap();
        for r in &trace.records {
            assert!(r.objective >= 0.0 && r.objective <= cfg.n_candidates as f64);
        }
    }

    #[test]
    fn infer_single_candidate_returns_it() {
        let params = GeneratorParams::identity(5);
        let cfg = TrainConfig {
            n_candidates: 1,
            context_len: 4,
            max_target_len: 5,
            ..TrainConfig::default()
        };
        let l = ctx("l", &[0.1, 0.2, -0.3, 0.4]);
        let r = ctx("r", &[0.5, -0.2, 0.0, 0.1]);
        let out = infer(&params, &l, &r, &cfg, InferMode::Map, 11).unwrap();
        assert_eq!(out.selected_indices, vec![2]);
        assert_eq!(out.selected[0], out.candidates.targets()[0]);
    }

    #[test]
    fn infer_kdpp_is_deterministic_and_sized() {
        let params = GeneratorParams::identity(5);
        let cfg = TrainConfig {
            n_candidates: 6,
            context_len: 4,
            max_target_len: 5,
            ..TrainConfig::default()
        };
        let l = ctx("l", &[0.1, 0.2, -0.3, 0.4]);
        let r = ctx("r", &[0.5, -0.2, 0.0, 0.1]);
        let a = infer(&params, &l, &r, &cfg, InferMode::Kdpp(3), 5).unwrap();
        let b = infer(&params, &l, &r, &cfg, InferMode::Kdpp(3), 5).unwrap();
        assert_eq!(a.selected_indices, b.selected_indices);
        assert_eq!(a.selected.len(), 3);
        // Selections are targets, never contexts.
        assert!(a.selected_indices.iter().all(|&i| i >= 2));
    }

    #[test]
    fn sweep_single_weight_matches_infer() {
        let params = GeneratorParams::identity(5);
        let cfg = TrainConfig {
            n_candidates: 4,
            context_len: 4,
            max_target_len: 5,
            ..TrainConfig::default()
        };
        let l = ctx("l", &[0.1, 0.2, -0.3, 0.4]);
        let r = ctx("r", &[0.5, -0.2, 0.0, 0.1]);
        let (points, _) =
            quality_weight_sweep(&params, &l, &r, &cfg, &[cfg.quality_weight], 9).unwrap();
        let direct = infer(&params, &l, &r, &cfg, InferMode::Map, 9).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].selected_index, direct.selected_indices[0]);
    }

    #[test]
    fn sweep_rejects_bad_weights() {
        let params = GeneratorParams::identity(5);
        let cfg = small_cfg();
        let l = ctx("l", &[0.1, 0.2, -0.3, 0.4]);
        let r = ctx("r", &[0.5, -0.2, 0.0, 0.1]);
        assert!(quality_weight_sweep(&params, &l, &r, &cfg, &[1.0, -2.0], 9).is_err());
    }

    #[test]
    fn threshold_is_reproducible() {
        let d = DensityModel::default();
        let a = compute_threshold(&d, 6).unwrap();
        let b = compute_threshold(&d, 6).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
