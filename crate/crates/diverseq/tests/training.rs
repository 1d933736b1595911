//! End-to-end tests of the trainable generator: whole-pipeline gradient
//! checks against finite differences, the likelihood-instability pairing, the
//! ascent property of induced-cardinality training, and the quality-weight
//! sweep.

mod common;

use diverseq::diversifier::{
    compare_objectives, evaluate_gradients, evaluate_loss, generate_candidates,
    quality_weight_sweep, train, train_step, DensityModel, GeneratorParams, InferMode, Objective,
    TrainConfig,
};
use diverseq::diversifier::infer;
use diverseq::metrics::{diversity_determinant, sigma_p};
use diverseq::rng::{seed_rng, standard_normal, uniform};
use diverseq::sequences::FeatureSequence;

fn density_context(cfg: &TrainConfig, len: usize, seed: u64) -> (FeatureSequence, FeatureSequence) {
    let mut rng = seed_rng(seed);
    let l = FeatureSequence::from_scalars("context-left", &cfg.density.sample(len, &mut rng))
        .unwrap();
    let r = FeatureSequence::from_scalars("context-right", &cfg.density.sample(len, &mut rng))
        .unwrap();
    (l, r)
}

fn random_params(max_len: usize, rng: &mut diverseq::rng::Rng) -> GeneratorParams {
    let scale: Vec<f64> = (0..max_len).map(|_| 0.3 + 0.5 * uniform(rng)).collect();
    let shift: Vec<f64> = (0..max_len).map(|_| 0.5 * standard_normal(rng)).collect();
    GeneratorParams::new(scale, shift).unwrap()
}

fn fd_check(cfg: &TrainConfig, threshold: f64, instance_seed: u64) {
    let mut rng = seed_rng(instance_seed);
    let params = random_params(cfg.max_target_len, &mut rng);
    let (left, right) = density_context(cfg, cfg.context_len, instance_seed ^ 0xABCD);
    let target_len = diverseq::diversifier::target_length(
        left.len(),
        right.len(),
        cfg.max_target_len,
    );
    let noise: Vec<Vec<f64>> = (0..cfg.n_candidates)
        .map(|_| {
            (0..target_len)
                .map(|_| cfg.noise_scale * standard_normal(&mut rng))
                .collect()
        })
        .collect();

    let (_, dscale, dshift) =
        evaluate_gradients(&params, &left, &right, cfg, threshold, &noise).unwrap();

    let eps = 1e-4;
    let check = |which: &str, idx: usize, analytic: f64| {
        let mut hi = params.clone();
        let mut lo = params.clone();
        match which {
            "scale" => {
                hi.scale[idx] += eps;
                lo.scale[idx] -= eps;
            }
            _ => {
                hi.shift[idx] += eps;
                lo.shift[idx] -= eps;
            }
        }
        let f_hi = evaluate_loss(&hi, &left, &right, cfg, threshold, &noise).unwrap();
        let f_lo = evaluate_loss(&lo, &left, &right, cfg, threshold, &noise).unwrap();
        let fd = (f_hi - f_lo) / (2.0 * eps);
        let diff = (fd - analytic).abs();
        let rel = diff / fd.abs().max(analytic.abs()).max(f64::MIN_POSITIVE);
        assert!(
            rel < 1e-3 || diff < 1e-8,
            "seed {instance_seed} {which}[{idx}]: fd {fd} vs analytic {analytic}"
        );
    };
    for j in 0..target_len {
        check("scale", j, dscale[j]);
        check("shift", j, dshift[j]);
    }
    // Frames beyond the target length get no gradient.
    for j in target_len..cfg.max_target_len {
        assert_eq!(dscale[j], 0.0);
        assert_eq!(dshift[j], 0.0);
    }
}

#[test]
fn whole_pipeline_gradient_matches_finite_differences() {
    // Threshold 0: contexts (typical density draws) sit on the capped branch,
    // while the offset random-parameter candidates mostly land on the active
    // exponential branch, so the quality path carries gradient.
    let active = TrainConfig {
        n_candidates: 3,
        context_len: 4,
        max_target_len: 5,
        threshold: Some(0.0),
        ..TrainConfig::default()
    };
    for seed in [11u64, 12, 13, 14, 15] {
        fd_check(&active, 0.0, seed);
    }
    // Quality capped everywhere: only the similarity path is live.
    let capped = TrainConfig {
        threshold: Some(-1e4),
        ..active.clone()
    };
    for seed in [21u64, 22] {
        fd_check(&capped, -1e4, seed);
    }
    // Likelihood objective needs a well-conditioned kernel, so run it with
    // all qualities capped (the quality chain is shared code, covered above).
    let mle = TrainConfig {
        objective: Objective::Mle,
        threshold: Some(-1e4),
        ..active
    };
    for seed in [31u64, 32] {
        fd_check(&mle, -1e4, seed);
    }
}

#[test]
fn near_duplicate_mle_gradient_dwarfs_mic() {
    let base = TrainConfig {
        duplicate_every: Some(1),
        ..TrainConfig::default()
    };
    let threshold = base.resolved_threshold().unwrap();
    let (left, right) = density_context(&base, base.context_len, 404);
    let params = base.init_params().unwrap();

    let run = |objective: Objective| {
        let cfg = TrainConfig { objective, ..base.clone() };
        let mut rng = seed_rng(2718); // identical draws for both arms
        let (_, record) = train_step(&params, &left, &right, &cfg, threshold, 0, &mut rng).unwrap();
        record
    };
    let mic = run(Objective::Mic);
    let mle = run(Objective::Mle);
    assert!(mic.kernel_grad_norm.is_finite());
    assert!(
        mle.kernel_grad_norm >= 1e3 * mic.kernel_grad_norm,
        "mle {} vs mic {}",
        mle.kernel_grad_norm,
        mic.kernel_grad_norm
    );
}

#[test]
fn mle_trace_spikes_under_injection_while_mic_stays_bounded() {
    let cfg = TrainConfig {
        steps: 40,
        duplicate_every: Some(5),
        ..TrainConfig::default()
    };
    let cmp = compare_objectives(&cfg).unwrap();
    assert_eq!(cmp.mic.records.len(), cmp.mle.records.len());

    // The likelihood arm shows a sentinel or a >= 10x-median spike.
    let mle_median = cmp.mle.median_finite_grad_norm();
    let spiked = cmp.mle.records.iter().any(|r| {
        !r.kernel_grad_norm.is_finite() || r.kernel_grad_norm >= 10.0 * mle_median
    });
    assert!(spiked, "no spike: median {mle_median}");

    // The cardinality arm stays within its analytic bound every step.
    for r in &cmp.mic.records {
        assert!(r.kernel_grad_norm.is_finite());
        assert!(r.objective >= 0.0 && r.objective <= cfg.n_candidates as f64);
        let bound =
            cfg.n_candidates as f64 * (1.0f64).max(1.0 / r.min_eig_shifted).powi(2);
        assert!(
            r.kernel_grad_norm <= bound,
            "step {}: {} above bound {bound}",
            r.step,
            r.kernel_grad_norm
        );
        assert!(!r.update_skipped);
    }
}

#[test]
fn mic_training_ascends_and_diversifies() {
    let mut improved_det = 0;
    for seed in 0..5u64 {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let (params, trace) = train(&cfg).unwrap();
        let first = trace.records.first().unwrap().objective;
        let last = trace.records.last().unwrap().objective;
        assert!(
            last > first,
            "seed {seed}: objective did not ascend ({first} -> {last})"
        );

        // Ten candidates on a held-out full-length context, before vs after.
        let (left, right) = density_context(&cfg, cfg.max_target_len, 999);
        let init = cfg.init_params().unwrap();
        let pre = generate_candidates(&init, &left, &right, 10, cfg.noise_scale, 1234).unwrap();
        let post = generate_candidates(&params, &left, &right, 10, cfg.noise_scale, 1234).unwrap();
        let det_pre = diversity_determinant(pre.targets()).unwrap();
        let det_post = diversity_determinant(post.targets()).unwrap();
        if det_post > det_pre {
            improved_det += 1;
        }
    }
    assert!(improved_det >= 4, "only {improved_det}/5 seeds diversified");
}

#[test]
fn map_prefers_high_density_candidate_under_quality_pressure() {
    // Sharply peaked density: one near-mean candidate among far-off ones.
    let density = DensityModel {
        mean: 0.0,
        innovation_std: 0.15,
        ar_coefficient: 0.0,
    };
    let cfg = TrainConfig {
        n_candidates: 5,
        density,
        context_len: 4,
        max_target_len: 4,
        threshold: Some(compute_threshold_for(&density, 4)),
        ..TrainConfig::default()
    };
    let threshold = cfg.threshold.unwrap();

    let left = FeatureSequence::from_scalars("l", &[0.05, -0.03, 0.04, 0.0]).unwrap();
    let right = FeatureSequence::from_scalars("r", &[-0.02, 0.06, -0.05, 0.01]).unwrap();
    // Hand-built candidates: index 2 is flat near the mean (high density),
    // the rest swing far outside the typical set.
    let flat = [0.02, -0.01, 0.03, -0.02];
    let wiggles = [
        [2.0, -2.0, 2.0, -2.0],
        [-1.8, 1.9, -2.1, 1.7],
        [1.5, 2.2, -1.9, -2.3],
        [-2.2, -1.6, 2.4, 1.8],
    ];
    let mut seqs = vec![left.clone(), right.clone()];
    seqs.push(FeatureSequence::from_scalars("flat", &flat).unwrap());
    for (i, w) in wiggles.iter().enumerate() {
        seqs.push(FeatureSequence::from_scalars(format!("wiggle{i}"), w).unwrap());
    }
    let s = diverseq::similarity_matrix(&seqs, cfg.gamma).unwrap();
    let pis: Vec<f64> = seqs
        .iter()
        .map(|x| density.log_density(&x.scalars().unwrap()).unwrap())
        .collect();
    let q = diverseq::QualityVector::from_log_densities(&pis, cfg.quality_weight, threshold)
        .unwrap();
    let kernel = diverseq::DppKernel::build(&s, &q, &[0, 1]).unwrap();

    let pick = diverseq::sampling::map_single(&kernel).unwrap();
    assert_eq!(pick, 2, "MAP must take the high-density candidate");

    // And it matches the brute-force argmax of logdet over the complement.
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for &x in kernel.complement() {
        let mut idx = kernel.cond_indices().to_vec();
        idx.push(x);
        idx.sort_unstable();
        let det = common::cofactor_det(&common::principal(kernel.l(), &idx));
        if det > 0.0 && det.ln() > best.1 {
            best = (x, det.ln());
        }
    }
    assert_eq!(pick, best.0);
}

fn compute_threshold_for(density: &DensityModel, len: usize) -> f64 {
    diverseq::diversifier::compute_threshold(density, len).unwrap()
}

#[test]
fn quality_weight_sweep_sigma_non_increasing() {
    // Separable setup: a sharply peaked density makes smooth candidates the
    // high-quality ones, so quality pressure never favors a wigglier pick as
    // the weight grows. (Selection is scale-invariant in the weight by the
    // kernel decomposition, so the sigma profile is flat; the assertion is
    // on the guaranteed monotone direction.)
    let density = DensityModel {
        mean: 0.0,
        innovation_std: 0.15,
        ar_coefficient: 0.0,
    };
    let cfg = TrainConfig {
        n_candidates: 8,
        density,
        context_len: 6,
        max_target_len: 6,
        ..TrainConfig::default()
    };
    let params = GeneratorParams::constant(6, 0.6, 0.0).unwrap();
    let (left, right) = density_context(&cfg, cfg.context_len, 55);
    let weights = [1.0, 2.0, 5.0, 10.0];
    let (points, set) =
        quality_weight_sweep(&params, &left, &right, &cfg, &weights, 7731).unwrap();
    assert_eq!(points.len(), 4);
    for pair in points.windows(2) {
        assert!(
            pair[1].sigma <= pair[0].sigma + 1e-12,
            "sigma increased across weights: {} -> {}",
            pair[0].sigma,
            pair[1].sigma
        );
    }
    // Same candidate set across weights, and the selected sequence is smooth
    // relative to the pool under this quality-dominant construction.
    let sigmas: Vec<f64> = set
        .targets()
        .iter()
        .map(|t| sigma_p(t).unwrap())
        .collect();
    let mut sorted = sigmas.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    for p in &points {
        assert!(
            p.sigma <= median,
            "selected sigma {} above pool median {median}",
            p.sigma
        );
    }
}

#[test]
fn map_inference_invariant_under_uniform_quality_scaling() {
    let cfg = TrainConfig {
        n_candidates: 6,
        context_len: 4,
        max_target_len: 5,
        ..TrainConfig::default()
    };
    let params = GeneratorParams::constant(5, 0.5, 0.2).unwrap();
    let (left, right) = density_context(&cfg, cfg.context_len, 66);
    let base = infer(&params, &left, &right, &cfg, InferMode::Map, 3).unwrap();
    for scale in [0.5, 2.0, 25.0] {
        let mut scaled_cfg = cfg.clone();
        scaled_cfg.quality_weight = cfg.quality_weight * scale;
        let out = infer(&params, &left, &right, &scaled_cfg, InferMode::Map, 3).unwrap();
        assert_eq!(out.selected_indices, base.selected_indices);
    }
}
