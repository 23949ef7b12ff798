//! End-to-end runs: fingerprint victims, build the meta-classifier, simulate
//! attacks, verify every suspect, and the experiment drivers built on top.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, AttackInputs, DaaMode, Expectation};
use crate::data::{synth_generate, Dataset, SynthSpec, TextureFamily};
use crate::error::{Error, Result};
use crate::meta::{build_meta, threshold_from_scores, train_svdd, MetaBuild, MetaClassifier, SvddConfig};
use crate::nn::{self, Model, TrainConfig};
use crate::persist;
use crate::seed;
use crate::spectrum::{generate_spectra, SpectrumImage, SpectrumOptions};
use crate::verifier::{evaluate, MetricsReport, VerificationReport, Verdict};
use crate::zoo::{build_arch, train_victims, ArchName};

/// Full description of a run. Seeds inside nested specs are mixed with `seed`,
/// so changing `seed` alone re-randomizes every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// The dataset whose ownership is protected.
    pub protected: SynthSpec,
    /// An unrelated dataset used for benign suspects and as the transfer target.
    pub benign: SynthSpec,
    /// Extra classes for data-augmentation attacks.
    #[serde(default)]
    pub extra: Option<SynthSpec>,
    pub victim_archs: Vec<ArchName>,
    /// Architectures of the fresh stolen-side and benign suspects.
    pub suspect_archs: Vec<ArchName>,
    pub victim_train: TrainConfig,
    pub spectrum: SpectrumOptions,
    /// `(train, val, test)` seed counts drawn from the protected dataset.
    pub split: (usize, usize, usize),
    pub svdd: SvddConfig,
    /// Attacks applied to the first victim / the protected dataset.
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    /// Upper bound on fingerprints entering each vote.
    pub num_samples: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::desk()
    }
}

impl PipelineConfig {
    /// Laptop-scale configuration: 16x16 stripe textures as the protected data,
    /// blob textures as the benign data.
    pub fn desk() -> Self {
        let texture = |name: &str, family, classes, per_class, seed| SynthSpec {
            name: name.into(),
            image_size: (16, 16, 1),
            noise_std: 0.04,
            contrast: (0.05, 0.1),
            background: 0.15,
            ..SynthSpec::new(family, classes, per_class, seed)
        };
        let protected = texture("stripes", TextureFamily::GaborStripes, 4, 750, 1);
        let benign = texture("blobs", TextureFamily::Blobs, 4, 250, 2);
        let extra = texture("rings", TextureFamily::Ring, 2, 250, 3);
        let victim_train = TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            weight_decay: 0.0,
        };
        let fine_tune = |epochs, lr, tag| TrainConfig {
            learning_rate: lr,
            epochs,
            batch_size: 16,
            seed: tag,
            weight_decay: 0.0,
        };
        PipelineConfig {
            seed: 0,
            protected,
            benign,
            extra: Some(extra),
            victim_archs: ArchName::ALL.to_vec(),
            suspect_archs: ArchName::ALL.to_vec(),
            victim_train: victim_train.clone(),
            spectrum: SpectrumOptions::default(),
            split: (200, 60, 60),
            svdd: SvddConfig {
                latent_dim: 32,
                learning_rate: 0.05,
                epochs: 200,
                batch_size: 32,
                weight_decay: 1e-4,
                seed: 0,
                quantile: 0.04,
            },
            attacks: vec![
                AttackConfig::Mfa {
                    subset_size: 2500,
                    train: fine_tune(1, 5e-5, 11),
                },
                AttackConfig::Mpa {
                    prune_fraction: 0.2,
                    train: fine_tune(5, 5e-5, 12),
                },
                AttackConfig::Mra {
                    fraction: 0.1,
                    arch: ArchName::Mlp2,
                    train: fine_tune(8, 0.05, 13),
                },
                AttackConfig::Tla {
                    train: fine_tune(3, 0.01, 14),
                    freeze_features: false,
                },
                AttackConfig::Daa {
                    mode: DaaMode::Pretrained,
                    arch: ArchName::Mlp2,
                    train: fine_tune(2, 0.01, 15),
                },
            ],
            num_samples: 288,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.protected.validate()?;
        self.benign.validate()?;
        if let Some(extra) = &self.extra {
            extra.validate()?;
        }
        if self.protected.image_size != self.benign.image_size {
            return Err(Error::argument("protected and benign images must share one size"));
        }
        if self.victim_archs.is_empty() {
            return Err(Error::argument("at least one victim architecture is required"));
        }
        if self.num_samples == 0 {
            return Err(Error::argument("num_samples must be >= 1"));
        }
        self.victim_train.validate()?;
        self.svdd.validate()?;
        for a in &self.attacks {
            a.validate()?;
        }
        Ok(())
    }

    fn stage_seed(&self, tag: &str, inner: u64) -> u64 {
        seed::derive(self.seed, tag, inner)
    }

    fn dataset(&self, spec: &SynthSpec, tag: &str) -> Result<Dataset> {
        synth_generate(&SynthSpec {
            seed: self.stage_seed(tag, spec.seed),
            ..spec.clone()
        })
    }

    fn train_cfg(&self, cfg: &TrainConfig, tag: &str, index: u64) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.stage_seed(tag, cfg.seed), "index", index),
            ..cfg.clone()
        }
    }
}

/// One verified suspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectOutcome {
    pub id: String,
    /// `maa` (fresh models on the protected data), `benign`, or the attack kind.
    pub group: String,
    pub expectation: Expectation,
    pub report: VerificationReport,
    pub train_accuracy: f64,
}

impl SuspectOutcome {
    /// Does the verdict match the expectation? Undetectable runs always pass.
    pub fn as_expected(&self) -> bool {
        match self.expectation {
            Expectation::Stolen => self.report.verdict == Verdict::Stolen,
            Expectation::Benign => self.report.verdict == Verdict::Benign,
            Expectation::ExpectedUndetectable => true,
        }
    }
}

/// Wall-clock measurements; excluded from reproducibility comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub victim_training_s: f64,
    /// Fingerprint generation per attempted seed image during the meta build.
    pub spectrum_per_image_s: f64,
    pub meta_training_s: f64,
    /// Suspect verification per attempted seed image.
    pub verification_per_image_s: f64,
    pub total_s: f64,
}

/// Reproducible summary of a run (no timings, no detector internals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub victim_accuracy: Vec<(String, f64)>,
    pub victim_success_ratio: Vec<f64>,
    pub train_spectra: usize,
    pub val_spectra: usize,
    pub val_fraction_below: f64,
    pub svdd_initial_mean_score: f64,
    pub svdd_final_mean_score: f64,
    /// Fresh stolen-side models against benign models.
    pub core_metrics: MetricsReport,
    /// Every suspect with a stolen or benign expectation.
    pub overall_metrics: MetricsReport,
    pub suspects: Vec<SuspectSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectSummary {
    pub id: String,
    pub group: String,
    pub expectation: Expectation,
    pub verdict: Verdict,
    pub fraction: f64,
    pub n: usize,
    pub as_expected: bool,
}

/// Everything a run produced, kept in memory for the experiment drivers.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub summary: RunSummary,
    pub suspects: Vec<SuspectOutcome>,
    /// Fingerprints of each suspect, parallel to `suspects` (already capped).
    pub suspect_spectra: Vec<Vec<SpectrumImage>>,
    pub build: MetaBuild,
    pub victims: Vec<Model>,
    pub timing: TimingTable,
}

impl PipelineOutcome {
    pub fn meta(&self) -> &MetaClassifier {
        &self.build.meta
    }

    fn reports_where(&self, pred: impl Fn(&SuspectOutcome) -> bool) -> Vec<&VerificationReport> {
        self.suspects.iter().filter(|s| pred(s)).map(|s| &s.report).collect()
    }
}

fn core_and_overall(suspects: &[SuspectOutcome]) -> Result<(MetricsReport, MetricsReport)> {
    let pick = |f: &dyn Fn(&SuspectOutcome) -> bool| -> Vec<&VerificationReport> {
        suspects.iter().filter(|s| f(s)).map(|s| &s.report).collect()
    };
    let core = evaluate(
        &pick(&|s| s.group == "maa"),
        &pick(&|s| s.group == "benign"),
    )?;
    let overall = evaluate(
        &pick(&|s| s.expectation == Expectation::Stolen),
        &pick(&|s| s.expectation == Expectation::Benign),
    )?;
    Ok((core, overall))
}

fn accuracy_of(model: &Model) -> f64 {
    model
        .metadata
        .get("train_accuracy")
        .and_then(|s| s.parse().ok())
        .unwrap_or(f64::NAN)
}

struct Suspect {
    id: String,
    group: String,
    expectation: Expectation,
    model: Model,
}

fn build_suspects(
    config: &PipelineConfig,
    protected: &Dataset,
    benign: &Dataset,
    extra: Option<&Dataset>,
    victims: &[Model],
) -> Result<Vec<Suspect>> {
    let mut out = Vec::new();
    for (i, &arch) in config.suspect_archs.iter().enumerate() {
        let cfg = config.train_cfg(&config.victim_train, "positive", i as u64);
        let init = seed::derive(cfg.seed, "init", 0);
        let model = nn::train(&build_arch(arch, protected.image_shape(), protected.num_classes, init)?, protected, &cfg)?.0;
        out.push(Suspect {
            id: format!("maa-{arch}"),
            group: "maa".into(),
            expectation: Expectation::Stolen,
            model,
        });
    }
    for (i, &arch) in config.suspect_archs.iter().enumerate() {
        let cfg = config.train_cfg(&config.victim_train, "negative", i as u64);
        let init = seed::derive(cfg.seed, "init", 0);
        let model = nn::train(&build_arch(arch, benign.image_shape(), benign.num_classes, init)?, benign, &cfg)?.0;
        out.push(Suspect {
            id: format!("benign-{arch}"),
            group: "benign".into(),
            expectation: Expectation::Benign,
            model,
        });
    }
    let inputs = AttackInputs {
        dataset: protected,
        victim: &victims[0],
        extra,
        target: Some(benign),
    };
    for (i, attack) in config.attacks.iter().enumerate() {
        let mut attack = attack.clone();
        let seeded = config.train_cfg(attack.train_config(), "attack", i as u64);
        match &mut attack {
            AttackConfig::Maa { train, .. }
            | AttackConfig::Daa { train, .. }
            | AttackConfig::Mra { train, .. }
            | AttackConfig::Tla { train, .. }
            | AttackConfig::Mfa { train, .. }
            | AttackConfig::Mpa { train, .. } => *train = seeded,
        }
        let model = run_attack(&attack, &inputs)?;
        let kind = attack.label();
        out.push(Suspect {
            group: kind.split('-').next().unwrap_or("attack").to_string(),
            id: kind,
            expectation: attack.expectation(),
            model,
        });
    }
    Ok(out)
}

/// Runs the whole pipeline. Artifacts go to `config.output_dir` when set.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let started = Instant::now();
    let protected = config.dataset(&config.protected, "protected").map_err(|e| e.in_stage("data"))?;
    let benign = config.dataset(&config.benign, "benign").map_err(|e| e.in_stage("data"))?;
    let extra = match &config.extra {
        Some(spec) => Some(config.dataset(spec, "extra").map_err(|e| e.in_stage("data"))?),
        None => None,
    };

    let t = Instant::now();
    let victim_cfg = config.train_cfg(&config.victim_train, "victims", 0);
    let victims = train_victims(&protected, &config.victim_archs, &victim_cfg).map_err(|e| e.in_stage("train-victims"))?;
    let victim_training_s = t.elapsed().as_secs_f64();
    let out_dir = config.output_dir.as_deref();
    if let Some(dir) = out_dir {
        for (k, v) in victims.iter().enumerate() {
            persist::save_model_file(dir.join(format!("victims/victim-{k}.dtnn")), v).map_err(|e| e.in_stage("persist"))?;
        }
    }

    let svdd = SvddConfig {
        seed: config.stage_seed("svdd", config.svdd.seed),
        ..config.svdd.clone()
    };
    let build = build_meta(&protected, &victims, config.split, &config.spectrum, &svdd).map_err(|e| e.in_stage("build-meta"))?;
    let spectrum_per_image_s = build.fingerprint_seconds / build.fingerprint_attempts.max(1) as f64;
    let meta_training_s = build.svdd_seconds;
    if let Some(dir) = out_dir {
        persist::save_spectra_file(dir.join("spectra/train.dtsp"), &build.train_spectra).map_err(|e| e.in_stage("persist"))?;
        persist::save_spectra_file(dir.join("spectra/val.dtsp"), &build.val_spectra).map_err(|e| e.in_stage("persist"))?;
        persist::save_meta_file(dir.join("meta.dtmc"), &build.meta).map_err(|e| e.in_stage("persist"))?;
    }

    let suspects = build_suspects(config, &protected, &benign, extra.as_ref(), &victims).map_err(|e| e.in_stage("attacks"))?;

    let t = Instant::now();
    let tau = build.meta.threshold().expect("build_meta calibrates");
    let mut outcomes = Vec::new();
    let mut suspect_spectra = Vec::new();
    for s in &suspects {
        let mut set = generate_spectra(&s.model, &build.test.images, &config.spectrum)
            .map_err(|e| e.in_stage("verify"))?;
        set.spectra.truncate(config.num_samples);
        let scores = build.meta.scores(&set.spectra).map_err(|e| e.in_stage("verify"))?;
        let report = VerificationReport::from_scores(s.id.clone(), scores, tau).map_err(|e| e.in_stage("verify"))?;
        if let Some(dir) = out_dir {
            persist::save_json(dir.join(format!("reports/{}.json", s.id)), &report).map_err(|e| e.in_stage("persist"))?;
            persist::save_model_file(dir.join(format!("suspects/{}.dtnn", s.id)), &s.model).map_err(|e| e.in_stage("persist"))?;
        }
        outcomes.push(SuspectOutcome {
            id: s.id.clone(),
            group: s.group.clone(),
            expectation: s.expectation,
            report,
            train_accuracy: accuracy_of(&s.model),
        });
        suspect_spectra.push(set.spectra);
    }
    let verification_per_image_s = t.elapsed().as_secs_f64() / (suspects.len() * build.test.len()).max(1) as f64;

    let (core_metrics, overall_metrics) = core_and_overall(&outcomes).map_err(|e| e.in_stage("evaluate"))?;
    let below = build.val_scores.iter().filter(|&&s| s <= tau).count();
    let summary = RunSummary {
        seed: config.seed,
        victim_accuracy: victims
            .iter()
            .map(|v| (v.metadata.get("arch").cloned().unwrap_or_default(), accuracy_of(v)))
            .collect(),
        victim_success_ratio: build.victim_success.clone(),
        train_spectra: build.train_spectra.len(),
        val_spectra: build.val_spectra.len(),
        val_fraction_below: below as f64 / build.val_scores.len() as f64,
        svdd_initial_mean_score: build.svdd.initial_mean_score,
        svdd_final_mean_score: build.svdd.final_mean_score,
        core_metrics,
        overall_metrics,
        suspects: outcomes
            .iter()
            .map(|o| SuspectSummary {
                id: o.id.clone(),
                group: o.group.clone(),
                expectation: o.expectation,
                verdict: o.report.verdict,
                fraction: o.report.fraction,
                n: o.report.n,
                as_expected: o.as_expected(),
            })
            .collect(),
    };
    let timing = TimingTable {
        victim_training_s,
        spectrum_per_image_s,
        meta_training_s,
        verification_per_image_s,
        total_s: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        persist::save_json(dir.join("summary.json"), &summary).map_err(|e| e.in_stage("persist"))?;
        persist::save_json(dir.join("timing.json"), &timing).map_err(|e| e.in_stage("persist"))?;
    }
    Ok(PipelineOutcome {
        summary,
        suspects: outcomes,
        suspect_spectra,
        build,
        victims,
        timing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub quantile: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub ba: f64,
}

/// Re-thresholds the stored per-sample scores for each quantile (no model is re-run).
pub fn sweep_threshold(outcome: &PipelineOutcome, quantiles: &[f64]) -> Result<Vec<ThresholdRow>> {
    quantiles
        .iter()
        .map(|&q| {
            let tau = threshold_from_scores(&outcome.build.val_scores, q)?;
            let redo = |rs: Vec<&VerificationReport>| -> Vec<VerificationReport> {
                rs.into_iter().map(|r| r.rethreshold(tau)).collect()
            };
            let pos = redo(outcome.reports_where(|s| s.expectation == Expectation::Stolen));
            let neg = redo(outcome.reports_where(|s| s.expectation == Expectation::Benign));
            let m = evaluate(&pos.iter().collect::<Vec<_>>(), &neg.iter().collect::<Vec<_>>())?;
            Ok(ThresholdRow {
                quantile: q,
                tpr: m.tpr,
                tnr: m.tnr,
                ba: m.ba,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub requested: usize,
    /// Training spectra actually available and used.
    pub used: usize,
    pub tpr: f64,
    pub tnr: f64,
    pub ba: f64,
    pub roc_auc: Option<f64>,
}

/// Retrains the meta-classifier on growing prefixes of a seeded shuffle of the
/// training spectra and re-scores the stored suspect fingerprints.
pub fn sweep_size(outcome: &PipelineOutcome, sizes: &[usize], config: &SvddConfig) -> Result<Vec<SizeRow>> {
    use rand::seq::SliceRandom;
    let mut pool = outcome.build.train_spectra.clone();
    pool.shuffle(&mut seed::rng(seed::derive(config.seed, "size-sweep", 0)));
    sizes
        .iter()
        .map(|&requested| {
            let used = requested.min(pool.len());
            let (meta, _) = train_svdd(&pool[..used], config)?;
            let tau = threshold_from_scores(&meta.scores(&outcome.build.val_spectra)?, config.quantile)?;
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (s, spectra) in outcome.suspects.iter().zip(&outcome.suspect_spectra) {
                let r = VerificationReport::from_scores(s.id.clone(), meta.scores(spectra)?, tau)?;
                match s.expectation {
                    Expectation::Stolen => pos.push(r),
                    Expectation::Benign => neg.push(r),
                    Expectation::ExpectedUndetectable => {}
                }
            }
            let m = evaluate(&pos.iter().collect::<Vec<_>>(), &neg.iter().collect::<Vec<_>>())?;
            Ok(SizeRow {
                requested,
                used,
                tpr: m.tpr,
                tnr: m.tnr,
                ba: m.ba,
                roc_auc: m.roc_auc,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinSampleRow {
    pub id: String,
    pub full_n: usize,
    pub full_verdict: Verdict,
    pub small_n: usize,
    pub small_verdict: Verdict,
    pub agree: bool,
}

/// Verdicts from the first `n` fingerprints of each suspect against the full vote.
pub fn min_samples(outcome: &PipelineOutcome, n: usize) -> Result<Vec<MinSampleRow>> {
    outcome
        .suspects
        .iter()
        .map(|s| {
            let small = s.report.truncated(n)?;
            Ok(MinSampleRow {
                id: s.id.clone(),
                full_n: s.report.n,
                full_verdict: s.report.verdict,
                small_n: small.n,
                small_verdict: small.verdict,
                agree: small.verdict == s.report.verdict,
            })
        })
        .collect()
}

/// Default grids for the sweep commands.
pub const THRESHOLD_GRID: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10];
pub const SIZE_GRID: [usize; 4] = [2400, 4800, 7200, 9600];
