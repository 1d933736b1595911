//! Single entry point wiring the toolkit: kernel building, sampling, MAP,
//! objective evaluation, training, objective comparison, segmentation,
//! metrics, and the quality-weight sweep.
//!
//! Every run is deterministic given its inputs and `--seed`; each command
//! with a file output also writes a `<output>.manifest.json` recording the
//! resolved configuration and input/output digests.
//!
//! Exit codes: 0 success, 1 numeric failure (PSD violation, conditioning,
//! degenerate candidate sets), 2 input or configuration error.

mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use diverseq::cdpp::{mic_gradient, mic_objective};
use diverseq::diversifier::{
    compare_objectives, infer, quality_weight_sweep, train, DensityModel, InferMode, LossTrace,
    SavedModel, TrainConfig,
};
use diverseq::io::{format_float, load_kernel, load_sequences};
use diverseq::kernel::QualityVector;
use diverseq::metrics::{diversity_determinant, sigma_p};
use diverseq::sampling::{
    map_single, ConditionalKdppSampler, ConditionalSampler, DppSampler, KdppSampler,
};
use diverseq::segmentation::{segment_fixed, segment_prominence, ProminenceLabeledText};
use diverseq::sequences::similarity_matrix;
use diverseq::{linalg, DppKernel};
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "diverseq", version, about = "Diverse sequence-set selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for all randomized operations (overrides config-file seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Primary output path; stdout when omitted (no manifest then).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,

    /// Suppress informational stderr lines.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a quality-weighted kernel from a sequence file.
    Kernel(KernelArgs),
    /// Draw subsets from a kernel.
    Sample(SampleArgs),
    /// Singleton MAP inference on a kernel.
    Map(MapArgs),
    /// Evaluate the induced-cardinality objective and its gradient norm.
    Mic(MapArgs),
    /// Train the candidate generator.
    Train(TrainArgs),
    /// Generate candidates from a trained model and select.
    Infer(InferArgs),
    /// Paired objective traces (cardinality vs likelihood) on one seed.
    CompareObjectives(CompareArgs),
    /// Split labeled text into context/target/context triples.
    Segment(SegmentArgs),
    /// Batch diversity metrics over a sequence file.
    Metrics(MetricsArgs),
    /// MAP selection across a sweep of quality weights.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long, default_value_t = 0.0)]
    density_mean: f64,
    #[arg(long, default_value_t = 0.4)]
    density_std: f64,
    #[arg(long, default_value_t = 0.5)]
    density_ar: f64,
}

impl DensityArgs {
    fn model(&self) -> DensityModel {
        DensityModel {
            mean: self.density_mean,
            innovation_std: self.density_std,
            ar_coefficient: self.density_ar,
        }
    }
}

#[derive(Args)]
struct KernelArgs {
    /// Sequence file (JSON).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Quality weight w.
    #[arg(long, default_value_t = 10.0)]
    weight: f64,
    /// Quality threshold k (log-density units); computed from the density
    /// model at the mean sequence length when omitted.
    #[arg(long)]
    threshold: Option<f64>,
    /// Conditioned ground-set indices.
    #[arg(long, value_delimiter = ',')]
    cond: Vec<usize>,
    /// Also write the similarity matrix as row-major CSV.
    #[arg(long)]
    similarity_csv: Option<PathBuf>,
    #[command(flatten)]
    density: DensityArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SampleMode {
    Dpp,
    Kdpp,
    Cond,
    CondKdpp,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    kernel: PathBuf,
    #[arg(long, value_enum, default_value_t = SampleMode::Dpp)]
    mode: SampleMode,
    /// Cardinality for the fixed-size modes.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    draws: usize,
    /// Also write a CSV of empirical subset frequencies.
    #[arg(long)]
    empirical: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    kernel: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration (JSON, partial allowed); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace CSV path.
    #[arg(long)]
    trace_out: PathBuf,
    /// Trained model JSON path.
    #[arg(long)]
    params_out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Trained model JSON (from `train --params-out`).
    #[arg(long)]
    params: PathBuf,
    /// Sequence file whose first two sequences are the left/right contexts.
    #[arg(long)]
    contexts: PathBuf,
    #[arg(long, value_enum, default_value_t = InferModeArg::Map)]
    mode: InferModeArg,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InferModeArg {
    Map,
    Kdpp,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Near-duplicate injection period.
    #[arg(long, default_value_t = 5)]
    duplicate_every: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SegmentMode {
    Prominence,
    Fixed,
}

#[derive(Args)]
struct SegmentArgs {
    /// Labeled text JSON: {"words": [...], "prominence": [...]}.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = SegmentMode::Prominence)]
    mode: SegmentMode,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Block length for fixed mode.
    #[arg(long, default_value_t = 3)]
    n: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricKind {
    Sigma,
    Det,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricKind,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    contexts: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0])]
    weights: Vec<f64>,
    /// Directory for the summary and per-weight contour CSVs.
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 1 for numeric failures, 2 for input/config problems.
fn exit_code(err: &anyhow::Error) -> u8 {
    use diverseq::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::NotPsd { .. }
            | E::IllConditioned { .. }
            | E::RankExceeded { .. }
            | E::DegenerateCandidates
            | E::SingularMinor
            | E::NonFiniteGradient { .. },
        ) => 1,
        _ => 2,
    }
}

struct Output {
    path: Option<PathBuf>,
    quiet: bool,
}

impl Output {
    /// Write the primary payload to `--out` or stdout; returns whether a
    /// manifest should follow.
    fn emit(&self, bytes: &str) -> Result<bool> {
        match &self.path {
            Some(p) => {
                std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?;
                Ok(true)
            }
            None => {
                print!("{bytes}");
                Ok(false)
            }
        }
    }

    fn info(&self, line: &str) {
        if !self.quiet {
            eprintln!("{line}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = Output {
        path: cli.out.clone(),
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Kernel(args) => cmd_kernel(args, seed, &out),
        Command::Sample(args) => cmd_sample(args, seed, &out),
        Command::Map(args) => cmd_map(args, seed, &out),
        Command::Mic(args) => cmd_mic(args, seed, &out),
        Command::Train(args) => cmd_train(args, cli.seed, &out),
        Command::Infer(args) => cmd_infer(args, seed, &out),
        Command::CompareObjectives(args) => cmd_compare(args, cli.seed, &out),
        Command::Segment(args) => cmd_segment(args, seed, &out),
        Command::Metrics(args) => cmd_metrics(args, seed, &out),
        Command::Sweep(args) => cmd_sweep(args, seed, &out),
    }
}

fn cmd_kernel(args: KernelArgs, seed: u64, out: &Output) -> Result<()> {
    let seqs = load_sequences(&args.input)?;
    let s = similarity_matrix(&seqs, args.gamma)?;
    let density = args.density.model();
    let threshold = match args.threshold {
        Some(k) => k,
        None => {
            let mean_len =
                (seqs.iter().map(|x| x.len()).sum::<usize>() as f64 / seqs.len() as f64).round();
            diverseq::diversifier::compute_threshold(&density, (mean_len as usize).max(1))?
        }
    };
    let log_densities = seqs
        .iter()
        .map(|x| density.log_density(&x.scalars()?))
        .collect::<diverseq::Result<Vec<f64>>>()?;
    let quality = QualityVector::from_log_densities(&log_densities, args.weight, threshold)?;
    let kernel = DppKernel::build(&s, &quality, &args.cond)?;

    // PSD diagnostic before anything is written.
    let eigs = linalg::sym_eigenvalues(kernel.l());
    let (min_eig, max_eig) = (eigs[0], eigs[eigs.len() - 1]);
    if min_eig < -1e-8 * max_eig.max(1.0) {
        return Err(diverseq::Error::NotPsd {
            min_eigenvalue: min_eig,
        }
        .into());
    }
    out.info(&format!(
        "kernel: n={} |A|={} min_eig={min_eig:.3e} threshold={threshold:.6}",
        kernel.size(),
        kernel.cond_indices().len()
    ));

    if let Some(csv) = &args.similarity_csv {
        diverseq::io::write_matrix_csv(csv, s.entries())?;
    }
    let body = diverseq::io::kernel_to_json(&kernel)?;
    if out.emit(&body)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new(
            "kernel",
            seed,
            json!({
                "in": args.input.display().to_string(),
                "gamma": args.gamma,
                "weight": args.weight,
                "threshold": threshold,
                "cond": args.cond,
                "density": density,
            }),
        );
        m.add_input(&args.input)?;
        m.add_output(primary)?;
        if let Some(csv) = &args.similarity_csv {
            m.add_output(csv)?;
        }
        m.write(primary)?;
    }
    Ok(())
}

type DrawFn = Box<dyn FnMut(&mut diverseq::rng::Rng) -> Vec<usize>>;

fn cmd_sample(args: SampleArgs, seed: u64, out: &Output) -> Result<()> {
    let kernel = load_kernel(&args.kernel)?;
    let need_k = || {
        args.k.ok_or_else(|| {
            anyhow!(diverseq::Error::InvalidConfig(
                "--k is required for the fixed-cardinality modes".into()
            ))
        })
    };
    let mut rng = diverseq::rng::seed_rng(seed);
    let mut draw: DrawFn = match args.mode {
        SampleMode::Dpp => {
            let s = DppSampler::new(&kernel)?;
            Box::new(move |rng| s.sample(rng))
        }
        SampleMode::Kdpp => {
            let s = KdppSampler::new(&kernel, need_k()?)?;
            Box::new(move |rng| s.sample(rng))
        }
        SampleMode::Cond => {
            let s = ConditionalSampler::new(&kernel)?;
            Box::new(move |rng| s.sample(rng))
        }
        SampleMode::CondKdpp => {
            let s = ConditionalKdppSampler::new(&kernel, need_k()?)?;
            Box::new(move |rng| s.sample(rng))
        }
    };

    let mut body = String::new();
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..args.draws {
        let subset = draw(&mut rng);
        let line: Vec<String> = subset.iter().map(|i| i.to_string()).collect();
        body.push_str(&line.join(" "));
        body.push('\n');
        *counts.entry(subset).or_insert(0) += 1;
    }

    if let Some(emp) = &args.empirical {
        let mut csv = String::from("subset,count,frequency\n");
        for (subset, count) in &counts {
            let key: Vec<String> = subset.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(
                csv,
                "{},{},{}",
                key.join(" "),
                count,
                format_float(*count as f64 / args.draws as f64)
            );
        }
        std::fs::write(emp, csv)?;
    }

    if out.emit(&body)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new(
            "sample",
            seed,
            json!({
                "kernel": args.kernel.display().to_string(),
                "mode": match args.mode {
                    SampleMode::Dpp => "dpp",
                    SampleMode::Kdpp => "kdpp",
                    SampleMode::Cond => "cond",
                    SampleMode::CondKdpp => "cond-kdpp",
                },
                "k": args.k,
                "draws": args.draws,
            }),
        );
        m.add_input(&args.kernel)?;
        m.add_output(primary)?;
        if let Some(emp) = &args.empirical {
            m.add_output(emp)?;
        }
        m.write(primary)?;
    }
    Ok(())
}

fn cmd_map(args: MapArgs, seed: u64, out: &Output) -> Result<()> {
    let kernel = load_kernel(&args.kernel)?;
    let pick = map_single(&kernel)?;
    let body = format!("{pick}\n");
    if out.emit(&body)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new(
            "map",
            seed,
            json!({"kernel": args.kernel.display().to_string()}),
        );
        m.add_input(&args.kernel)?;
        m.add_output(primary)?;
        m.write(primary)?;
    }
    Ok(())
}

fn cmd_mic(args: MapArgs, seed: u64, out: &Output) -> Result<()> {
    let kernel = load_kernel(&args.kernel)?;
    let value = mic_objective(&kernel)?;
    let grad = mic_gradient(&kernel)?;
    let mut body = String::from("metric,value\n");
    let _ = writeln!(body, "mic_objective,{}", format_float(value));
    let _ = writeln!(body, "mic_gradient_fro_norm,{}", format_float(grad.norm()));
    if out.emit(&body)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new(
            "mic",
            seed,
            json!({"kernel": args.kernel.display().to_string()}),
        );
        m.add_input(&args.kernel)?;
        m.add_output(primary)?;
        m.write(primary)?;
    }
    Ok(())
}

fn load_train_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Deterministic trace CSV; wall time deliberately excluded.
fn trace_csv(trace: &LossTrace) -> String {
    let mut csv = String::from(
        "step,objective,kernel_grad_norm,param_grad_norm,min_eig_l,min_eig_shifted,update_skipped\n",
    );
    for r in &trace.records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.step,
            format_float(r.objective),
            format_float(r.kernel_grad_norm),
            format_float(r.param_grad_norm),
            format_float(r.min_eig_l),
            format_float(r.min_eig_shifted),
            r.update_skipped
        );
    }
    csv
}

fn cmd_train(args: TrainArgs, seed_override: Option<u64>, out: &Output) -> Result<()> {
    let cfg = load_train_config(args.config.as_deref(), seed_override)?;
    let threshold = cfg.resolved_threshold()?;
    let (params, trace) = train(&cfg)?;
    std::fs::write(&args.trace_out, trace_csv(&trace))?;
    let model = SavedModel {
        params,
        config: cfg.clone(),
        threshold,
    };
    std::fs::write(&args.params_out, serde_json::to_string_pretty(&model)?)?;
    out.info(&format!(
        "train: {} steps, objective {} -> {}",
        trace.records.len(),
        trace.records.first().map_or(f64::NAN, |r| r.objective),
        trace.records.last().map_or(f64::NAN, |r| r.objective),
    ));

    let mut m = Manifest::new("train", cfg.seed, serde_json::to_value(&cfg)?);
    if let Some(c) = &args.config {
        m.add_input(c)?;
    }
    m.add_output(&args.trace_out)?;
    m.add_output(&args.params_out)?;
    m.write(&args.params_out)?;
    Ok(())
}

fn load_contexts(path: &Path) -> Result<(diverseq::FeatureSequence, diverseq::FeatureSequence)> {
    let seqs = load_sequences(path)?;
    if seqs.len() < 2 {
        bail!(diverseq::Error::InvalidConfig(format!(
            "context file {} must contain at least two sequences",
            path.display()
        )));
    }
    let mut it = seqs.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap()))
}

fn cmd_infer(args: InferArgs, seed: u64, out: &Output) -> Result<()> {
    let model: SavedModel = serde_json::from_str(&std::fs::read_to_string(&args.params)?)
        .with_context(|| format!("parsing {}", args.params.display()))?;
    model.validate()?;
    let (left, right) = load_contexts(&args.contexts)?;
    let mode = match args.mode {
        InferModeArg::Map => InferMode::Map,
        InferModeArg::Kdpp => InferMode::Kdpp(args.k.ok_or_else(|| {
            anyhow!(diverseq::Error::InvalidConfig(
                "--k is required for kdpp mode".into()
            ))
        })?),
    };
    let mut cfg = model.config.clone();
    cfg.threshold = Some(model.threshold);
    let outcome = infer(&model.params, &left, &right, &cfg, mode, seed)?;
    out.info(&format!(
        "infer: selected ground indices {:?}",
        outcome.selected_indices
    ));
    let body = diverseq::io::sequences_to_json(&outcome.selected)?;
    if out.emit(&body)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new(
            "infer",
            seed,
            json!({
                "params": args.params.display().to_string(),
                "contexts": args.contexts.display().to_string(),
                "mode": match args.mode { InferModeArg::Map => "map", InferModeArg::Kdpp => "kdpp" },
                "k": args.k,
                "selected_indices": outcome.selected_indices,
            }),
        );
        m.add_input(&args.params)?;
        m.add_input(&args.contexts)?;
        m.add_output(primary)?;
        m.write(primary)?;
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs, seed_override: Option<u64>, out: &Output) -> Result<()> {
    let mut cfg = load_train_config(args.config.as_deref(), seed_override)?;
    cfg.duplicate_every = Some(args.duplicate_every);
    let cmp = compare_objectives(&cfg)?;
    let mut csv = String::from("step,mic_obj,mic_gradnorm,mle_obj,mle_gradnorm\n");
    for (m, l) in cmp.mic.records.iter().zip(&cmp.mle.records) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            m.step,
            format_float(m.objective),
            format_float(m.kernel_grad_norm),
            format_float(l.objective),
            format_float(l.kernel_grad_norm)
        );
    }
    out.info(&format!(
        "compare-objectives: {} paired steps",
        cmp.mic.records.len()
    ));
    if out.emit(&csv)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new("compare-objectives", cfg.seed, serde_json::to_value(&cfg)?);
        if let Some(c) = &args.config {
            m.add_input(c)?;
        }
        m.add_output(primary)?;
        m.write(primary)?;
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct LabeledTextFile {
    words: Vec<String>,
    #[serde(default)]
    prominence: Vec<f64>,
}

fn cmd_segment(args: SegmentArgs, seed: u64, out: &Output) -> Result<()> {
    let file: LabeledTextFile = serde_json::from_str(&std::fs::read_to_string(&args.input)?)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let seg = match args.mode {
        SegmentMode::Prominence => {
            let text = ProminenceLabeledText::new(file.words, file.prominence)?;
            segment_prominence(&text, args.threshold)?
        }
        SegmentMode::Fixed => segment_fixed(&file.words, args.n)?,
    };
    let triples: Vec<[[usize; 2]; 3]> = seg
        .triples
        .iter()
        .map(|t| {
            [
                [t.left.start, t.left.end],
                [t.target.start, t.target.end],
                [t.right.start, t.right.end],
            ]
        })
        .collect();
    let body = serde_json::to_string_pretty(&triples)? + "\n";
    if out.emit(&body)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new(
            "segment",
            seed,
            json!({
                "in": args.input.display().to_string(),
                "mode": match args.mode { SegmentMode::Prominence => "prominence", SegmentMode::Fixed => "fixed" },
                "threshold": args.threshold,
                "n": args.n,
            }),
        );
        m.add_input(&args.input)?;
        m.add_output(primary)?;
        m.write(primary)?;
    }
    Ok(())
}

fn cmd_metrics(args: MetricsArgs, seed: u64, out: &Output) -> Result<()> {
    let seqs = load_sequences(&args.input)?;
    let body = match args.metric {
        MetricKind::Sigma => {
            let mut csv = String::from("id,sigma_p\n");
            for s in &seqs {
                let _ = writeln!(csv, "{},{}", s.id(), format_float(sigma_p(s)?));
            }
            csv
        }
        MetricKind::Det => {
            let det = diversity_determinant(&seqs)?;
            format!("metric,value\ndiversity_determinant,{}\n", format_float(det))
        }
    };
    if out.emit(&body)? {
        let primary = out.path.as_ref().unwrap();
        let mut m = Manifest::new(
            "metrics",
            seed,
            json!({
                "in": args.input.display().to_string(),
                "metric": match args.metric { MetricKind::Sigma => "sigma", MetricKind::Det => "det" },
            }),
        );
        m.add_input(&args.input)?;
        m.add_output(primary)?;
        m.write(primary)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, seed: u64, out: &Output) -> Result<()> {
    let model: SavedModel = serde_json::from_str(&std::fs::read_to_string(&args.params)?)
        .with_context(|| format!("parsing {}", args.params.display()))?;
    model.validate()?;
    let (left, right) = load_contexts(&args.contexts)?;
    let mut cfg = model.config.clone();
    cfg.threshold = Some(model.threshold);
    let (points, set) =
        quality_weight_sweep(&model.params, &left, &right, &cfg, &args.weights, seed)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut outputs = Vec::new();

    let mut summary = String::from("weight,selected_index,sigma_p\n");
    for p in &points {
        let _ = writeln!(
            summary,
            "{},{},{}",
            format_float(p.weight),
            p.selected_index,
            format_float(p.sigma)
        );
    }
    let summary_path = args.out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary)?;
    outputs.push(summary_path.clone());

    // One contour file per weight: every candidate column plus the selected
    // contour, frame by frame.
    for p in &points {
        let targets = set.targets();
        let len = targets.iter().map(|t| t.len()).max().unwrap_or(0);
        let mut csv = String::from("frame");
        for (i, _) in targets.iter().enumerate() {
            let _ = write!(csv, ",candidate_{i}");
        }
        csv.push_str(",selected\n");
        let selected = p.selected.scalars()?;
        for f in 0..len {
            let _ = write!(csv, "{f}");
            for t in targets {
                let v = t.scalars()?;
                match v.get(f) {
                    Some(x) => {
                        let _ = write!(csv, ",{}", format_float(*x));
                    }
                    None => csv.push(','),
                }
            }
            match selected.get(f) {
                Some(x) => {
                    let _ = writeln!(csv, ",{}", format_float(*x));
                }
                None => csv.push('\n'),
            }
        }
        let path = args.out_dir.join(format!("contour_w{}.csv", p.weight));
        std::fs::write(&path, csv)?;
        outputs.push(path);
    }

    out.info(&format!(
        "sweep: {} weights, selections {:?}",
        points.len(),
        points.iter().map(|p| p.selected_index).collect::<Vec<_>>()
    ));

    let mut m = Manifest::new(
        "sweep",
        seed,
        json!({
            "params": args.params.display().to_string(),
            "contexts": args.contexts.display().to_string(),
            "weights": args.weights,
        }),
    );
    m.add_input(&args.params)?;
    m.add_input(&args.contexts)?;
    for o in &outputs {
        m.add_output(o)?;
    }
    m.write(&summary_path)?;
    Ok(())
}
