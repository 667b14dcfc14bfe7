//! Argument parsing and dispatch for the `genuin` binary.
//!
//! Exit codes:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | other failure                             |
//! | 2    | usage error (bad flag, missing option)    |
//! | 3    | I/O error                                 |
//! | 4    | malformed file or unsupported audio       |
//! | 5    | invalid input data                        |
//! | 6    | invalid configuration                     |
//! | 7    | capacity limit exceeded                   |

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use genuin::classifier::{
    compute_eer, read_model, score_trial, train_gmm_with_report, write_model, GmmConfig, Provenance, ScoreSet,
};
use genuin::experiment::{
    batch_genuinize, run_matrix, write_results_csv, DatasetManifest, MatrixOptions, RunConfig, Subset,
};
use genuin::features::{read_features, write_features, FeatureKind, FeatureMatrix};
use genuin::genuinize::{genuinize, GenuinizeParams, Mode, Reference};
use genuin::pmf::{cdf_from_pmf, estimate_pmf, read_pmf, tv_distance, write_pmf, Keep};
use genuin::synth::{write_toy_corpus, ToyCorpusSpec};
use genuin::vad::{energy_vad, VadConfig, VadMask, DEFAULT_ALPHA};
use genuin::wav::{read_wav, write_wav, Waveform};
use genuin::{Error, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(name = "genuin", version, about = "Amplitude-PMF genuinization and GMM spoofing countermeasure")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate an amplitude PMF from WAV files (CSV, or binary for `.gpmf`).
    EstimatePmf(EstimatePmfArgs),
    /// Genuinize one file, or every file in a manifest.
    Genuinize(GenuinizeArgs),
    /// Print an energy-based speech mask as run-length text.
    Vad(VadArgs),
    /// Extract a feature matrix into a cache file.
    ExtractFeatures(ExtractArgs),
    /// Train a diagonal GMM on WAV or feature-cache files.
    TrainGmm(TrainArgs),
    /// Score manifest files with a genuine/spoof model pair.
    Score(ScoreArgs),
    /// Print the equal error rate of a score file.
    Eer(EerArgs),
    /// Run the full scenario matrix.
    RunMatrix(RunMatrixArgs),
    /// Print the total variation distance between two PMFs.
    PmfDistance(DistanceArgs),
    /// Write the synthetic two-class corpus with its manifest and config.
    MakeToyCorpus(ToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KeepArg {
    All,
    Speech,
    Nonspeech,
}

#[derive(Debug, Args)]
pub struct EstimatePmfArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict counting to samples the VAD marks as speech or non-speech.
    #[arg(long, value_enum, default_value = "all")]
    pub keep: KeepArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Basic,
    Perturbed,
    Random,
}

#[derive(Debug, Args)]
pub struct GenuinizeArgs {
    #[arg(long, value_enum, default_value = "perturbed")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 5)]
    pub d_bits: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target PMF for basic and perturbed modes.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Reference pool for random mode; repeatable.
    #[arg(long = "reference")]
    pub references: Vec<PathBuf>,
    /// Batch mode: genuinize every manifest entry.
    #[arg(long, requires = "out_dir", conflicts_with_all = ["input", "output"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    #[arg(required_unless_present = "manifest")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VadArgs {
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, default_value = "lfcc")]
    pub feature: String,
    #[arg(long)]
    pub out: PathBuf,
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 512)]
    pub components: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Provenance tag stored in the model: O, G or R.
    #[arg(long, default_value = "O")]
    pub provenance: String,
    /// Extractor for WAV inputs; feature-cache inputs are used as-is.
    #[arg(long, default_value = "lfcc")]
    pub feature: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub genuine_model: PathBuf,
    #[arg(long)]
    pub spoof_model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub subset: String,
    #[arg(long, default_value = "lfcc")]
    pub feature: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EerArgs {
    pub scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunMatrixArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML run settings; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep per-scenario results here and resume from them.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Compute at most this many new scenarios, then stop.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Overrides the configured worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write 0 in the seconds column.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2019)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub files_per_cell: usize,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Io => 3,
        ErrorKind::Format => 4,
        ErrorKind::Input => 5,
        ErrorKind::Config => 6,
        ErrorKind::Capacity => 7,
    }
}

fn vad_config(w: &Waveform, alpha: f64) -> VadConfig {
    VadConfig {
        alpha,
        ..VadConfig::for_sample_rate(w.sample_rate())
    }
}

fn load_features(path: &Path, feature: FeatureKind) -> Result<FeatureMatrix> {
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        feature.extractor().extract(&read_wav(path)?)
    } else {
        read_features(path)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Runs one command, writing any report lines to `out`.
pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::EstimatePmf(a) => {
            let waves = a.inputs.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
            let pmf = match a.keep {
                KeepArg::All => estimate_pmf(&waves, None, Keep::All)?,
                keep => {
                    let masks = waves
                        .iter()
                        .map(|w| energy_vad(w, &vad_config(w, a.alpha)))
                        .collect::<Result<Vec<VadMask>>>()?;
                    let keep = if keep == KeepArg::Speech { Keep::Speech } else { Keep::NonSpeech };
                    estimate_pmf(&waves, Some(&masks), keep)?
                }
            };
            write_pmf(&a.out, &pmf)
        }
        Command::Genuinize(a) => {
            let mode = match a.mode {
                ModeArg::Basic => Mode::Basic,
                ModeArg::Perturbed => Mode::Perturbed,
                ModeArg::Random => Mode::Random,
            };
            let params = GenuinizeParams {
                extra_bits: a.d_bits,
                seed: a.seed,
                mode,
            };
            let target = match (&a.target, mode) {
                (Some(p), Mode::Basic | Mode::Perturbed) => Some(cdf_from_pmf(&read_pmf(p)?)),
                (None, Mode::Basic | Mode::Perturbed) => {
                    return Err(Error::Config(format!("--target is required for {mode:?} mode").to_lowercase()))
                }
                (_, Mode::Random) => None,
            };
            let mut pool = a.references.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
            if let Some(manifest_path) = &a.manifest {
                let manifest = DatasetManifest::from_csv(manifest_path, Subset::Test, Subset::Train)?;
                if mode == Mode::Random && pool.is_empty() {
                    pool = manifest
                        .select(Subset::Train, genuin::classifier::Label::Genuine)
                        .map(|e| read_wav(&e.path))
                        .collect::<Result<_>>()?;
                }
                let reference = match &target {
                    Some(t) => Reference::Corpus(t),
                    None => Reference::Pool(&pool),
                };
                let out_dir = a.out_dir.as_deref().expect("clap enforces --out-dir");
                let written = batch_genuinize(&manifest, reference, &params, out_dir)?;
                writeln!(out, "wrote {} files under {}", written.len(), out_dir.display()).map_err(io_err)
            } else {
                let (input, output) = (a.input.expect("clap"), a.output.expect("clap"));
                let reference = match &target {
                    Some(t) => Reference::Corpus(t),
                    None => Reference::Pool(&pool),
                };
                let g = genuinize(&read_wav(&input)?, reference, &params)?;
                write_wav(&output, &g)
            }
        }
        Command::Vad(a) => {
            let w = read_wav(&a.input)?;
            let text = energy_vad(&w, &vad_config(&w, a.alpha))?.to_rle_text();
            match a.out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e)),
                None => out.write_all(text.as_bytes()).map_err(io_err),
            }
        }
        Command::ExtractFeatures(a) => {
            let kind = FeatureKind::parse(&a.feature)?;
            let m = kind.extractor().extract(&read_wav(&a.input)?)?;
            write_features(&a.out, &m)
        }
        Command::TrainGmm(a) => {
            let kind = FeatureKind::parse(&a.feature)?;
            let provenance = Provenance::parse(&a.provenance)?;
            let feats = a
                .inputs
                .iter()
                .map(|p| load_features(p, kind))
                .collect::<Result<Vec<_>>>()?;
            let cfg = GmmConfig {
                components: a.components,
                max_iters: a.iters,
                seed: a.seed,
                ..GmmConfig::default()
            };
            let (model, report) = train_gmm_with_report(&FeatureMatrix::stack(&feats)?, &cfg, provenance)?;
            write_model(&a.out, &model)?;
            writeln!(
                out,
                "trained {} components on {} files, {} EM iterations",
                model.components(),
                feats.len(),
                report.loglik_trace.len()
            )
            .map_err(io_err)
        }
        Command::Score(a) => {
            let kind = FeatureKind::parse(&a.feature)?;
            let subset = Subset::parse(&a.subset)?;
            let genuine = read_model(&a.genuine_model)?;
            let spoof = read_model(&a.spoof_model)?;
            let manifest = DatasetManifest::from_csv(&a.manifest, Subset::Test, Subset::Train)?;
            let extractor = kind.extractor();
            let mut set = ScoreSet::default();
            for e in manifest.entries.iter().filter(|e| e.subset == subset) {
                let x = extractor.extract(&read_wav(&e.path)?)?;
                set.push(e.id.clone(), e.label, score_trial(&genuine, &spoof, &x)?);
            }
            set.write_csv(&a.out)
        }
        Command::Eer(a) => {
            let eer = compute_eer(&ScoreSet::read_csv(&a.scores)?)?;
            writeln!(out, "EER={eer}").map_err(io_err)
        }
        Command::RunMatrix(a) => {
            let mut config = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            config.seed = a.seed;
            if let Some(w) = a.workers {
                config.workers = w;
            }
            if a.no_timing {
                config.record_timing = false;
            }
            let manifest = DatasetManifest::from_csv(&a.manifest, config.attacker_source()?, config.cm_source()?)?;
            let report = run_matrix(
                &manifest,
                &config,
                &MatrixOptions {
                    cache_dir: a.cache_dir.clone(),
                    limit: a.limit,
                },
            )?;
            write_results_csv(&a.out, &report.results)?;
            for r in report.failures() {
                log::error!("{}: {}", r.spec, r.error.as_deref().unwrap_or(""));
            }
            writeln!(
                out,
                "{} of {} scenarios written ({} computed, {} reused, {} failed)",
                report.results.len(),
                report.total,
                report.computed,
                report.reused,
                report.failures().count()
            )
            .map_err(io_err)
        }
        Command::PmfDistance(a) => {
            let tv = tv_distance(&read_pmf(&a.a)?, &read_pmf(&a.b)?)?;
            writeln!(out, "TV={tv}").map_err(io_err)
        }
        Command::MakeToyCorpus(a) => {
            let spec = ToyCorpusSpec {
                files_per_cell: a.files_per_cell,
                seed: a.seed,
                ..ToyCorpusSpec::default()
            };
            let manifest = write_toy_corpus(&a.out_dir, &spec)?;
            writeln!(out, "{}", manifest.display()).map_err(io_err)
        }
    }
}
