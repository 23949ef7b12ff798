use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spectraprint::adversarial::{Epsilon, FgsmMode};
use spectraprint::attacks::{run_attack, AttackConfig, AttackInputs, DaaMode};
use spectraprint::data::{load_idx, synth_generate, write_idx, Dataset, TextureFamily};
use spectraprint::meta::{calibrate_threshold, train_svdd, SvddConfig};
use spectraprint::nn::{self, TrainConfig};
use spectraprint::pipeline::{self, PipelineConfig, PipelineOutcome};
use spectraprint::spectrum::{generate_spectra, SpectrumOptions};
use spectraprint::verifier::{evaluate, verify, VerificationReport};
use spectraprint::zoo::{build_arch, ArchName};
use spectraprint::{persist, seed};

#[derive(Parser)]
#[command(name = "spectraprint", version, about = "Dataset-ownership fingerprinting from adversarial perturbation spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic texture dataset as an IDX pair.
    GenData(GenData),
    /// Train one model on an IDX dataset.
    TrainVictim(TrainVictim),
    /// Turn a model's successful adversarial perturbations into spectra.
    Fingerprint(Fingerprint),
    /// Train the one-class meta-classifier and calibrate its threshold.
    TrainMeta(TrainMeta),
    /// Decide whether a suspect model carries the protected dataset's fingerprint.
    Verify(Verify),
    /// Derive a suspect model with one of the simulated attacks.
    Attack(Attack),
    /// Aggregate verification reports into TPR/TNR/BA/AUC.
    Evaluate(Evaluate),
    /// Run the whole pipeline and write every artifact.
    Run(PipelineArgs),
    /// Balanced accuracy as a function of the threshold quantile.
    SweepThreshold(SweepThreshold),
    /// Balanced accuracy as a function of the meta training-set size.
    SweepSize(SweepSize),
    /// Agreement of n-sample verdicts with full-sample verdicts.
    MinSamples(MinSamples),
    /// Per-image fingerprinting, meta training and verification times.
    BenchTiming(PipelineArgs),
    /// Print the default pipeline configuration as JSON.
    DefaultConfig,
}

/// Options shared by every command that runs the pipeline. Flags override the config file.
#[derive(Args, Clone)]
struct PipelineArgs {
    /// Pipeline configuration (JSON); the built-in desk configuration when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// FGSM step size [default: 0.03].
    #[arg(long)]
    eps: Option<f32>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Fraction of validation scores allowed above the threshold [default: 0.04].
    #[arg(long)]
    quantile: Option<f64>,
    /// Maximum fingerprints per vote [default: 288].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    num_samples: Option<u64>,
    /// Directory for models, spectra, the meta file and JSON reports.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Sign,
    L2,
}

impl From<ModeArg> for FgsmMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sign => FgsmMode::Sign,
            ModeArg::L2 => FgsmMode::L2,
        }
    }
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long, default_value_t = 0.03)]
    eps: f32,
    #[arg(long, value_enum, default_value = "sign")]
    mode: ModeArg,
    /// Zero-pad perturbations to HxW before the transform.
    #[arg(long, value_parser = parse_hw)]
    canvas: Option<(usize, usize)>,
}

impl SpectrumArgs {
    fn options(&self) -> Result<SpectrumOptions> {
        Ok(SpectrumOptions {
            eps: Epsilon::new(self.eps)?,
            mode: self.mode.into(),
            canvas: self.canvas,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

#[derive(Args)]
struct GenData {
    /// Base spec (JSON); defaults to the desk protected dataset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    family: Option<TextureFamily>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Image size as HxW (single channel).
    #[arg(long, value_parser = parse_hw)]
    size: Option<(usize, usize)>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives images.idx and labels.idx.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainVictim {
    /// Directory holding images.idx and labels.idx.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "cnn_s")]
    arch: ArchName,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Fingerprint {
    #[arg(long)]
    model: PathBuf,
    /// Seed images (IDX directory).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    spectrum: SpectrumArgs,
    /// Use only the first N seed images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainMeta {
    /// Training spectrum archives (repeatable).
    #[arg(long, required = true)]
    train: Vec<PathBuf>,
    /// Validation archives; without them the meta file is left uncalibrated.
    #[arg(long)]
    val: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.04)]
    quantile: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Verify {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Verification seed images (IDX directory).
    #[arg(long)]
    data: PathBuf,
    /// Identifier recorded in the report; defaults to the model file stem.
    #[arg(long)]
    id: Option<String>,
    #[command(flatten)]
    spectrum: SpectrumArgs,
    #[arg(long, default_value_t = 288, value_parser = clap::value_parser!(u64).range(1..))]
    num_samples: u64,
    /// Write the full report (JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AttackKind {
    Maa,
    Daa,
    Mra,
    Tla,
    Mfa,
    Mpa,
}

#[derive(Args)]
struct Attack {
    /// Full attack description (JSON); overrides --kind.
    #[arg(long)]
    attack_config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<AttackKind>,
    /// The stolen dataset (IDX directory).
    #[arg(long)]
    data: PathBuf,
    /// The stolen model; required except for MAA, MRA and scratch DAA.
    #[arg(long)]
    victim: Option<PathBuf>,
    /// Extra classes for DAA.
    #[arg(long)]
    extra: Option<PathBuf>,
    /// Transfer target for TLA.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    arch: Option<ArchName>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long)]
    prune_fraction: Option<f64>,
    #[arg(long)]
    scratch: bool,
    #[arg(long)]
    freeze: bool,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    /// Reports of suspects known to be stolen (repeatable).
    #[arg(long)]
    stolen: Vec<PathBuf>,
    /// Reports of suspects known to be benign (repeatable).
    #[arg(long)]
    benign: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepThreshold {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Comma-separated quantiles [default: 0.01..0.10].
    #[arg(long, value_delimiter = ',')]
    quantiles: Vec<f64>,
}

#[derive(Args)]
struct SweepSize {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Comma-separated training-set sizes [default: 2400,4800,7200,9600].
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
}

#[derive(Args)]
struct MinSamples {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 3)]
    n: usize,
}

fn parse_hw(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_data(dir: &Path) -> Result<Dataset> {
    load_idx(dir.join("images.idx"), dir.join("labels.idx")).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn pipeline_config(args: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::desk(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.eps {
        cfg.spectrum.eps = Epsilon::new(v)?;
    }
    if let Some(v) = args.mode {
        cfg.spectrum.mode = v.into();
    }
    if let Some(v) = args.quantile {
        cfg.svdd.quantile = v;
    }
    if let Some(v) = args.num_samples {
        cfg.num_samples = v as usize;
    }
    if args.out_dir.is_some() {
        cfg.output_dir = args.out_dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_configured(args: &PipelineArgs) -> Result<PipelineOutcome> {
    let cfg = pipeline_config(args)?;
    Ok(pipeline::run_pipeline(&cfg)?)
}

fn write_json_out<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    if let Some(path) = path {
        persist::save_json(path, value)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_metrics(label: &str, m: &spectraprint::verifier::MetricsReport) {
    let auc = m.roc_auc.map_or("n/a".to_string(), |a| format!("{a:.3}"));
    println!(
        "{label}: TPR {:.3}  TNR {:.3}  BA {:.3}  AUC {auc}  ({} stolen, {} benign)",
        m.tpr, m.tnr, m.ba, m.positives, m.negatives
    );
}

fn cmd_gen_data(a: GenData) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => read_json(path)?,
        None => PipelineConfig::desk().protected,
    };
    if let Some(f) = a.family {
        spec.family = f;
        spec.name = format!("{f:?}").to_lowercase();
    }
    if let Some(v) = a.classes {
        spec.num_classes = v;
    }
    if let Some(v) = a.per_class {
        spec.samples_per_class = v;
    }
    if let Some((h, w)) = a.size {
        spec.image_size = (h, w, 1);
    }
    if let Some(v) = a.noise {
        spec.noise_std = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let ds = synth_generate(&spec)?;
    write_idx(&ds, a.out.join("images.idx"), a.out.join("labels.idx"))?;
    println!("{}: {} images, {} classes -> {}", ds.name, ds.len(), ds.num_classes, a.out.display());
    Ok(())
}

fn cmd_train_victim(a: TrainVictim) -> Result<()> {
    let ds = load_data(&a.data)?;
    let cfg = a.train.apply(PipelineConfig::desk().victim_train);
    let init = seed::derive(cfg.seed, "init", 0);
    let model = build_arch(a.arch, ds.image_shape(), ds.num_classes, init)?;
    let (mut model, acc) = nn::train(&model, &ds, &cfg)?;
    model.metadata.insert("dataset".into(), ds.name.clone());
    persist::save_model_file(&a.out, &model)?;
    println!("{}: training accuracy {acc:.4} -> {}", a.arch, a.out.display());
    Ok(())
}

fn cmd_fingerprint(a: Fingerprint) -> Result<()> {
    let model = persist::load_model_file(&a.model)?;
    let ds = load_data(&a.data)?;
    let take = a.limit.unwrap_or(ds.len()).min(ds.len());
    let set = generate_spectra(&model, &ds.images[..take], &a.spectrum.options()?)?;
    persist::save_spectra_file(&a.out, &set.spectra)?;
    println!(
        "kept {} of {} seeds (success ratio {:.3}) -> {}",
        set.spectra.len(),
        set.attempted,
        set.success_ratio(),
        a.out.display()
    );
    Ok(())
}

fn load_archives(paths: &[PathBuf]) -> Result<Vec<spectraprint::spectrum::SpectrumImage>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(persist::load_spectra_file(p).with_context(|| format!("loading {}", p.display()))?);
    }
    Ok(all)
}

fn cmd_train_meta(a: TrainMeta) -> Result<()> {
    let mut cfg = SvddConfig {
        quantile: a.quantile,
        ..PipelineConfig::desk().svdd
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.latent_dim {
        cfg.latent_dim = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let train = load_archives(&a.train)?;
    let (mut meta, report) = train_svdd(&train, &cfg)?;
    println!(
        "trained on {} spectra: mean score {:.5} -> {:.5}",
        train.len(),
        report.initial_mean_score,
        report.final_mean_score
    );
    if a.val.is_empty() {
        println!("no validation spectra: meta left uncalibrated");
    } else {
        let val = load_archives(&a.val)?;
        let tau = calibrate_threshold(&meta, &val, cfg.quantile)?;
        let below = meta.scores(&val)?.iter().filter(|&&s| s <= tau).count();
        meta = meta.with_threshold(tau)?;
        println!(
            "calibrated on {} validation spectra: {:.2}% at or below threshold",
            val.len(),
            100.0 * below as f64 / val.len() as f64
        );
    }
    persist::save_meta_file(&a.out, &meta)?;
    println!("meta-classifier -> {} (keep this file confidential)", a.out.display());
    Ok(())
}

fn cmd_verify(a: Verify) -> Result<()> {
    let meta = persist::load_meta_file(&a.meta)?;
    if meta.threshold().is_none() {
        bail!("{} is uncalibrated; run train-meta with validation spectra first", a.meta.display());
    }
    let model = persist::load_model_file(&a.model)?;
    let ds = load_data(&a.data)?;
    let id = a
        .id
        .clone()
        .unwrap_or_else(|| a.model.file_stem().map_or("suspect".into(), |s| s.to_string_lossy().into_owned()));
    let report = verify(&meta, &model, &id, &ds.images, &a.spectrum.options()?, Some(a.num_samples as usize))?;
    println!(
        "{}: {:?} ({} of {} fingerprints inside the boundary, fraction {:.3})",
        report.suspect_id, report.verdict, report.votes, report.n, report.fraction
    );
    write_json_out(a.out.as_deref(), &report)
}

fn default_attack(kind: AttackKind) -> AttackConfig {
    let grid = PipelineConfig::desk().attacks;
    let train = PipelineConfig::desk().victim_train;
    let found = grid.into_iter().find(|c| {
        matches!(
            (kind, c),
            (AttackKind::Daa, AttackConfig::Daa { .. })
                | (AttackKind::Mra, AttackConfig::Mra { .. })
                | (AttackKind::Tla, AttackConfig::Tla { .. })
                | (AttackKind::Mfa, AttackConfig::Mfa { .. })
                | (AttackKind::Mpa, AttackConfig::Mpa { .. })
        )
    });
    found.unwrap_or(AttackConfig::Maa { arch: ArchName::CnnS, train })
}

fn attack_from_flags(a: &Attack) -> Result<AttackConfig> {
    if let Some(path) = &a.attack_config {
        return read_json(path);
    }
    let Some(kind) = a.kind else {
        bail!("either --kind or --attack-config is required");
    };
    let mut cfg = default_attack(kind);
    match &mut cfg {
        AttackConfig::Maa { arch, train } => {
            *arch = a.arch.unwrap_or(*arch);
            *train = a.train.apply(train.clone());
        }
        AttackConfig::Daa { mode, arch, train } => {
            if a.scratch {
                *mode = DaaMode::Scratch;
            }
            *arch = a.arch.unwrap_or(*arch);
            *train = a.train.apply(train.clone());
        }
        AttackConfig::Mra { fraction, arch, train } => {
            *fraction = a.fraction.unwrap_or(*fraction);
            *arch = a.arch.unwrap_or(*arch);
            *train = a.train.apply(train.clone());
        }
        AttackConfig::Tla { train, freeze_features } => {
            *freeze_features |= a.freeze;
            *train = a.train.apply(train.clone());
        }
        AttackConfig::Mfa { subset_size, train } => {
            *subset_size = a.subset_size.unwrap_or(*subset_size);
            *train = a.train.apply(train.clone());
        }
        AttackConfig::Mpa { prune_fraction, train } => {
            *prune_fraction = a.prune_fraction.unwrap_or(*prune_fraction);
            *train = a.train.apply(train.clone());
        }
    }
    Ok(cfg)
}

fn cmd_attack(a: Attack) -> Result<()> {
    let cfg = attack_from_flags(&a)?;
    let ds = load_data(&a.data)?;
    let extra = a.extra.as_deref().map(load_data).transpose()?;
    let target = a.target.as_deref().map(load_data).transpose()?;
    let needs_victim = !matches!(
        cfg,
        AttackConfig::Maa { .. } | AttackConfig::Mra { .. } | AttackConfig::Daa { mode: DaaMode::Scratch, .. }
    );
    let victim = match &a.victim {
        Some(p) => persist::load_model_file(p)?,
        None if needs_victim => bail!("attack `{}` needs --victim", cfg.label()),
        // Unused by the from-scratch attacks; any model of the right input shape will do.
        None => build_arch(ArchName::Mlp2, ds.image_shape(), ds.num_classes, 0)?,
    };
    let inputs = AttackInputs {
        dataset: &ds,
        victim: &victim,
        extra: extra.as_ref(),
        target: target.as_ref(),
    };
    let model = run_attack(&cfg, &inputs)?;
    persist::save_model_file(&a.out, &model)?;
    let acc = model.metadata.get("train_accuracy").cloned().unwrap_or_else(|| "n/a".into());
    println!(
        "{}: expectation {:?}, training accuracy {acc} -> {}",
        cfg.label(),
        cfg.expectation(),
        a.out.display()
    );
    Ok(())
}

fn cmd_evaluate(a: Evaluate) -> Result<()> {
    let load = |paths: &[PathBuf]| -> Result<Vec<VerificationReport>> { paths.iter().map(|p| read_json(p)).collect() };
    let stolen = load(&a.stolen)?;
    let benign = load(&a.benign)?;
    let metrics = evaluate(&stolen.iter().collect::<Vec<_>>(), &benign.iter().collect::<Vec<_>>())?;
    print_metrics("suspect-level", &metrics);
    write_json_out(a.out.as_deref(), &metrics)
}

fn cmd_run(args: PipelineArgs) -> Result<()> {
    let out = run_configured(&args)?;
    let s = &out.summary;
    for (arch, acc) in &s.victim_accuracy {
        println!("victim {arch}: training accuracy {acc:.4}");
    }
    println!(
        "meta: {} training / {} validation spectra, {:.2}% of validation at or below threshold",
        s.train_spectra,
        s.val_spectra,
        100.0 * s.val_fraction_below
    );
    println!("{:<22} {:<22} {:<7} {:>8} {:>5}", "suspect", "expectation", "verdict", "fraction", "n");
    for x in &s.suspects {
        println!(
            "{:<22} {:<22} {:<7} {:>8.3} {:>5}{}",
            x.id,
            format!("{:?}", x.expectation),
            format!("{:?}", x.verdict),
            x.fraction,
            x.n,
            if x.as_expected { "" } else { "  (unexpected)" }
        );
    }
    print_metrics("fresh models", &s.core_metrics);
    print_metrics("all suspects", &s.overall_metrics);
    if let Some(dir) = &args.out_dir {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

fn cmd_sweep_threshold(a: SweepThreshold) -> Result<()> {
    let out = run_configured(&a.pipeline)?;
    let grid = if a.quantiles.is_empty() { pipeline::THRESHOLD_GRID.to_vec() } else { a.quantiles };
    let rows = pipeline::sweep_threshold(&out, &grid)?;
    println!("{:>8} {:>6} {:>6} {:>6}", "quantile", "TPR", "TNR", "BA");
    for r in &rows {
        println!("{:>8.2} {:>6.3} {:>6.3} {:>6.3}", r.quantile, r.tpr, r.tnr, r.ba);
    }
    write_json_out(a.pipeline.out_dir.map(|d| d.join("threshold_sweep.json")).as_deref(), &rows)
}

fn cmd_sweep_size(a: SweepSize) -> Result<()> {
    let cfg = pipeline_config(&a.pipeline)?;
    let out = pipeline::run_pipeline(&cfg)?;
    let sizes = if a.sizes.is_empty() { pipeline::SIZE_GRID.to_vec() } else { a.sizes };
    let rows = pipeline::sweep_size(&out, &sizes, &cfg.svdd)?;
    println!("{:>9} {:>6} {:>6} {:>6} {:>6} {:>6}", "requested", "used", "TPR", "TNR", "BA", "AUC");
    for r in &rows {
        let auc = r.roc_auc.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        println!("{:>9} {:>6} {:>6.3} {:>6.3} {:>6.3} {:>6}", r.requested, r.used, r.tpr, r.tnr, r.ba, auc);
    }
    write_json_out(cfg.output_dir.map(|d| d.join("size_sweep.json")).as_deref(), &rows)
}

fn cmd_min_samples(a: MinSamples) -> Result<()> {
    let out = run_configured(&a.pipeline)?;
    let rows = pipeline::min_samples(&out, a.n)?;
    for r in &rows {
        println!(
            "{:<22} full {:?} (n={})  first-{} {:?}{}",
            r.id,
            r.full_verdict,
            r.full_n,
            r.small_n,
            r.small_verdict,
            if r.agree { "" } else { "  (disagree)" }
        );
    }
    let agree = rows.iter().filter(|r| r.agree).count();
    println!("agreement: {agree} of {} suspects", rows.len());
    write_json_out(a.pipeline.out_dir.map(|d| d.join("min_samples.json")).as_deref(), &rows)
}

fn cmd_bench_timing(args: PipelineArgs) -> Result<()> {
    let out = run_configured(&args)?;
    let t = &out.timing;
    println!("victim training        {:>10.3} s", t.victim_training_s);
    println!("spectrum per image     {:>10.6} s", t.spectrum_per_image_s);
    println!("meta training          {:>10.3} s", t.meta_training_s);
    println!("verification per image {:>10.6} s", t.verification_per_image_s);
    println!("total                  {:>10.3} s", t.total_s);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainVictim(a) => cmd_train_victim(a),
        Command::Fingerprint(a) => cmd_fingerprint(a),
        Command::TrainMeta(a) => cmd_train_meta(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(a),
        Command::SweepThreshold(a) => cmd_sweep_threshold(a),
        Command::SweepSize(a) => cmd_sweep_size(a),
        Command::MinSamples(a) => cmd_min_samples(a),
        Command::BenchTiming(a) => cmd_bench_timing(a),
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&PipelineConfig::desk())?);
            Ok(())
        }
    }
}
