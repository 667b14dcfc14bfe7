//! Scenario execution: transforms, models, scoring and the cached matrix run.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::manifest::{DatasetManifest, RunConfig, Subset};
use super::scenario::{enumerate_scenarios, Action, ScenarioSpec};
use crate::classifier::{compute_eer, score_trial, train_gmm_with_report, GmmConfig, GmmModel, Label, Provenance, ScoreSet};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::genuinize::{genuinize, GenuinizeParams, Reference};
use crate::pmf::{cdf_from_pmf, estimate_pmf, Cdf, Keep};
use crate::seed::{derive_labeled, derive_seed};
use crate::wav::{read_wav, write_wav, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Touches spoof files only.
    Attacker,
    /// Touches every file.
    Countermeasure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWave {
    pub id: String,
    pub label: Label,
    pub wave: Waveform,
}

/// Applies one side's action. File `i` is transformed with seed
/// `derive_seed(seed, i)`, so results do not depend on scheduling.
///
/// `target` is needed for [`Action::Genuinize`], `pool` for [`Action::Random`].
pub fn apply_action(
    files: &[LabeledWave],
    side: Side,
    action: Action,
    target: Option<&Cdf>,
    pool: Option<&[Waveform]>,
    d_bits: u32,
    seed: u64,
) -> Result<Vec<LabeledWave>> {
    let (reference, params) = match action {
        Action::None => return Ok(files.to_vec()),
        Action::Genuinize => (
            Reference::Corpus(target.ok_or_else(|| Error::Config("genuinization needs a target PMF".into()))?),
            GenuinizeParams::perturbed(d_bits, seed),
        ),
        Action::Random => (
            Reference::Pool(pool.ok_or_else(|| Error::Config("random genuinization needs a reference pool".into()))?),
            GenuinizeParams::random(d_bits, seed),
        ),
    };
    files
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            if side == Side::Attacker && f.label == Label::Genuine {
                return Ok(f.clone());
            }
            let wave = genuinize(&f.wave, reference, &params.with_seed(derive_seed(seed, i as u64)))
                .map_err(|e| e.context(f.id.clone()))?;
            Ok(LabeledWave { wave, ..f.clone() })
        })
        .collect()
}

/// Seed for transforming the `label` training files into provenance `prov`.
pub fn train_seed(run_seed: u64, label: Label, prov: Provenance) -> u64 {
    derive_labeled(run_seed, &format!("train/{label}/{prov}"))
}

/// Seed for one side's test-time action.
pub fn side_seed(run_seed: u64, side: Side, action: Action) -> u64 {
    let side = match side {
        Side::Attacker => "attacker",
        Side::Countermeasure => "cm",
    };
    derive_labeled(run_seed, &format!("{side}/{action}"))
}

/// Seed for EM initialisation of one model.
pub fn model_seed(run_seed: u64, feature: FeatureKind, label: Label, prov: Provenance) -> u64 {
    derive_labeled(run_seed, &format!("gmm/{feature}/{label}/{prov}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    /// Percent; `None` when the scenario failed.
    pub eer: Option<f64>,
    pub genuine_trials: usize,
    pub spoof_trials: usize,
    /// Scoring time of this scenario; shared preparation is not attributed.
    pub seconds: f64,
    pub error: Option<String>,
}

impl ScenarioResult {
    fn failed(spec: ScenarioSpec, error: String) -> Self {
        Self {
            spec,
            eer: None,
            genuine_trials: 0,
            spoof_trials: 0,
            seconds: 0.0,
            error: Some(error),
        }
    }
}

type Shared<T> = std::result::Result<Arc<T>, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct TrainKey {
    label: Label,
    prov: Provenance,
    d_bits: u32,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct TestKey {
    attacker: Action,
    cm: Action,
    d_bits: u32,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct ModelKey {
    feature: FeatureKind,
    train: TrainKey,
}

/// Loaded corpus plus the targets and pools both sides draw from.
pub struct Experiment {
    config: RunConfig,
    train_genuine: Vec<LabeledWave>,
    train_spoof: Vec<LabeledWave>,
    test: Vec<LabeledWave>,
    cm_target: Cdf,
    cm_pool: Vec<Waveform>,
    attacker_target: Cdf,
    attacker_pool: Vec<Waveform>,
}

fn load_set(manifest: &DatasetManifest, subset: Subset, labels: &[Label]) -> Result<Vec<LabeledWave>> {
    manifest
        .entries
        .par_iter()
        .filter(|e| e.subset == subset && labels.contains(&e.label))
        .map(|e| {
            Ok(LabeledWave {
                id: e.id.clone(),
                label: e.label,
                wave: read_wav(&e.path)?,
            })
        })
        .collect()
}

fn genuine_of(manifest: &DatasetManifest, subset: Subset) -> Result<(Cdf, Vec<Waveform>)> {
    let pool: Vec<Waveform> = load_set(manifest, subset, &[Label::Genuine])?
        .into_iter()
        .map(|f| f.wave)
        .collect();
    let pmf = estimate_pmf(&pool, None, Keep::All).map_err(|e| e.context(format!("{subset} genuine PMF")))?;
    Ok((cdf_from_pmf(&pmf), pool))
}

impl Experiment {
    pub fn load(manifest: &DatasetManifest, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (cm_target, cm_pool) = genuine_of(manifest, manifest.cm_pmf_source)?;
        let (attacker_target, attacker_pool) = genuine_of(manifest, manifest.attacker_pmf_source)?;
        Ok(Self {
            config: config.clone(),
            train_genuine: load_set(manifest, Subset::Train, &[Label::Genuine])?,
            train_spoof: load_set(manifest, Subset::Train, &[Label::Spoof])?,
            test: load_set(manifest, Subset::Test, &[Label::Genuine, Label::Spoof])?,
            cm_target,
            cm_pool,
            attacker_target,
            attacker_pool,
        })
    }

    pub fn cm_target(&self) -> &Cdf {
        &self.cm_target
    }

    pub fn attacker_target(&self) -> &Cdf {
        &self.attacker_target
    }

    fn train_set(&self, k: TrainKey) -> Result<Vec<LabeledWave>> {
        let files = match k.label {
            Label::Genuine => &self.train_genuine,
            Label::Spoof => &self.train_spoof,
        };
        let action = match k.prov {
            Provenance::Original => Action::None,
            Provenance::Genuinized => Action::Genuinize,
            Provenance::Random => Action::Random,
        };
        apply_action(
            files,
            Side::Countermeasure,
            action,
            Some(&self.cm_target),
            Some(&self.cm_pool),
            k.d_bits,
            train_seed(k.seed, k.label, k.prov),
        )
    }

    fn test_set(&self, k: TestKey) -> Result<Vec<LabeledWave>> {
        let attacked = apply_action(
            &self.test,
            Side::Attacker,
            k.attacker,
            Some(&self.attacker_target),
            Some(&self.attacker_pool),
            k.d_bits,
            side_seed(k.seed, Side::Attacker, k.attacker),
        )?;
        apply_action(
            &attacked,
            Side::Countermeasure,
            k.cm,
            Some(&self.cm_target),
            Some(&self.cm_pool),
            k.d_bits,
            side_seed(k.seed, Side::Countermeasure, k.cm),
        )
    }

    fn model(&self, k: ModelKey, files: &[LabeledWave]) -> Result<GmmModel> {
        let extractor = k.feature.extractor();
        let feats = files
            .par_iter()
            .map(|f| extractor.extract(&f.wave).map_err(|e| e.context(f.id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let stacked = FeatureMatrix::stack(&feats)?;
        let cfg = GmmConfig {
            components: self.config.components,
            max_iters: self.config.em_iters,
            rel_tol: self.config.em_rel_tol,
            seed: model_seed(k.train.seed, k.feature, k.train.label, k.train.prov),
            var_floor_ratio: self.config.var_floor_ratio,
        };
        let (model, report) = train_gmm_with_report(&stacked, &cfg, k.train.prov)?;
        log::info!(
            "trained {} {} model ({}) in {} EM iterations",
            k.feature,
            k.train.label,
            k.train.prov,
            report.loglik_trace.len()
        );
        Ok(model)
    }

    /// Runs the given scenarios. Transformed sets, features and models are
    /// computed once and shared; a failure only affects the scenarios that
    /// depend on it.
    pub fn run(&self, specs: &[ScenarioSpec]) -> Vec<ScenarioResult> {
        let train_key = |s: &ScenarioSpec, label: Label| TrainKey {
            label,
            prov: match label {
                Label::Genuine => s.h_train,
                Label::Spoof => s.s_train,
            },
            d_bits: s.d_bits,
            seed: s.seed,
        };
        let test_key = |s: &ScenarioSpec| TestKey {
            attacker: s.attacker,
            cm: s.cm,
            d_bits: s.d_bits,
            seed: s.seed,
        };

        let mut train_keys = BTreeSet::new();
        let mut test_keys = BTreeSet::new();
        let mut model_keys = BTreeSet::new();
        let mut test_feature_keys = BTreeSet::new();
        for s in specs {
            for label in [Label::Genuine, Label::Spoof] {
                let k = train_key(s, label);
                train_keys.insert(k);
                model_keys.insert(ModelKey {
                    feature: s.feature,
                    train: k,
                });
            }
            test_keys.insert(test_key(s));
            test_feature_keys.insert((s.feature, test_key(s)));
        }

        let train_sets: HashMap<TrainKey, Shared<Vec<LabeledWave>>> = train_keys
            .into_par_iter()
            .map(|k| (k, self.train_set(k).map(Arc::new).map_err(|e| e.to_string())))
            .collect();
        let models: HashMap<ModelKey, Shared<GmmModel>> = model_keys
            .into_par_iter()
            .map(|k| {
                let m = match &train_sets[&k.train] {
                    Ok(files) => self.model(k, files).map(Arc::new).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                (k, m)
            })
            .collect();
        let test_sets: HashMap<TestKey, Shared<Vec<LabeledWave>>> = test_keys
            .into_par_iter()
            .map(|k| (k, self.test_set(k).map(Arc::new).map_err(|e| e.to_string())))
            .collect();
        let test_features: HashMap<(FeatureKind, TestKey), Shared<Vec<FeatureMatrix>>> = test_feature_keys
            .into_par_iter()
            .map(|(feature, k)| {
                let feats = match &test_sets[&k] {
                    Ok(files) => {
                        let extractor = feature.extractor();
                        files
                            .par_iter()
                            .map(|f| extractor.extract(&f.wave).map_err(|e| e.context(f.id.clone())))
                            .collect::<Result<Vec<_>>>()
                            .map(Arc::new)
                            .map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.clone()),
                };
                ((feature, k), feats)
            })
            .collect();

        specs
            .par_iter()
            .map(|s| {
                let start = Instant::now();
                let inputs = (|| -> std::result::Result<_, String> {
                    if let Err(e) = s.validate() {
                        return Err(e.to_string());
                    }
                    let genuine = models[&ModelKey {
                        feature: s.feature,
                        train: train_key(s, Label::Genuine),
                    }]
                        .clone()?;
                    let spoof = models[&ModelKey {
                        feature: s.feature,
                        train: train_key(s, Label::Spoof),
                    }]
                        .clone()?;
                    let files = test_sets[&test_key(s)].clone()?;
                    let feats = test_features[&(s.feature, test_key(s))].clone()?;
                    Ok((genuine, spoof, files, feats))
                })();
                let (genuine, spoof, files, feats) = match inputs {
                    Ok(v) => v,
                    Err(e) => return ScenarioResult::failed(*s, e),
                };
                let scored = files
                    .iter()
                    .zip(feats.iter())
                    .map(|(f, x)| Ok((f, score_trial(&genuine, &spoof, x)?)))
                    .collect::<Result<Vec<_>>>()
                    .and_then(|scores| {
                        let mut set = ScoreSet::default();
                        for (f, score) in scores {
                            set.push(f.id.clone(), f.label, score);
                        }
                        Ok((compute_eer(&set)?, set.count(Label::Genuine), set.count(Label::Spoof)))
                    });
                match scored {
                    Ok((eer, genuine_trials, spoof_trials)) => ScenarioResult {
                        spec: *s,
                        eer: Some(eer),
                        genuine_trials,
                        spoof_trials,
                        seconds: if self.config.record_timing {
                            start.elapsed().as_secs_f64()
                        } else {
                            0.0
                        },
                        error: None,
                    },
                    Err(e) => ScenarioResult::failed(*s, e.to_string()),
                }
            })
            .collect()
    }
}

/// Runs one scenario from scratch.
pub fn run_scenario(manifest: &DatasetManifest, config: &RunConfig, spec: &ScenarioSpec) -> Result<ScenarioResult> {
    spec.validate()?;
    let exp = Experiment::load(manifest, config)?;
    Ok(exp.run(std::slice::from_ref(spec)).remove(0))
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    /// Per-scenario result files; finished scenarios found here are reused.
    pub cache_dir: Option<PathBuf>,
    /// Stop after computing this many new scenarios.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixReport {
    /// Sorted by feature, training combination, attacker, countermeasure.
    pub results: Vec<ScenarioResult>,
    pub computed: usize,
    pub reused: usize,
    pub total: usize,
}

impl MatrixReport {
    pub fn complete(&self) -> bool {
        self.results.len() == self.total
    }

    pub fn failures(&self) -> impl Iterator<Item = &ScenarioResult> {
        self.results.iter().filter(|r| r.error.is_some())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Hash of the manifest (including audio content) and result-affecting config.
pub fn run_fingerprint(manifest: &DatasetManifest, config: &RunConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(format!("atk_src={};cm_src={}\n", manifest.attacker_pmf_source, manifest.cm_pmf_source));
    h.update(config.result_key());
    for e in &manifest.entries {
        let bytes = fs::read(&e.path).map_err(|err| Error::io(&e.path, err))?;
        h.update(format!("\n{},{},{},", e.id, e.label, e.subset));
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex(&h.finalize()))
}

fn cache_path(dir: &Path, run: &str, spec: &ScenarioSpec) -> PathBuf {
    let digest = Sha256::digest(format!("{run}\n{}", spec.key()));
    dir.join(format!("{}.row", hex(&digest[..16])))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_cached(r: &ScenarioResult) -> String {
    format!(
        "key={}\neer={:016x}\ngenuine={}\nspoof={}\nseconds={:016x}\n",
        r.spec.key(),
        r.eer.unwrap_or(f64::NAN).to_bits(),
        r.genuine_trials,
        r.spoof_trials,
        r.seconds.to_bits()
    )
}

fn decode_cached(text: &str, spec: &ScenarioSpec) -> Option<ScenarioResult> {
    let mut fields = HashMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=')?;
        fields.insert(k, v);
    }
    if *fields.get("key")? != spec.key() {
        return None;
    }
    let float = |k: &str| u64::from_str_radix(fields.get(k)?, 16).ok().map(f64::from_bits);
    let eer = float("eer")?;
    if !(0.0..=100.0).contains(&eer) {
        return None;
    }
    Some(ScenarioResult {
        spec: *spec,
        eer: Some(eer),
        genuine_trials: fields.get("genuine")?.parse().ok()?,
        spoof_trials: fields.get("spoof")?.parse().ok()?,
        seconds: float("seconds")?,
        error: None,
    })
}

/// Runs the full matrix for every configured feature.
///
/// With a cache directory, finished scenarios are stored one file each and
/// picked up again on the next call, so an interrupted run resumes where it
/// stopped. Failed scenarios are reported but never cached.
pub fn run_matrix(manifest: &DatasetManifest, config: &RunConfig, options: &MatrixOptions) -> Result<MatrixReport> {
    config.validate()?;
    let specs = enumerate_scenarios(&config.feature_kinds()?, config.d_bits, config.seed);
    let total = specs.len();

    let mut results = Vec::new();
    let mut pending = Vec::new();
    let run = match &options.cache_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some((dir.clone(), run_fingerprint(manifest, config)?))
        }
        None => None,
    };
    for spec in &specs {
        let cached = run.as_ref().and_then(|(dir, fp)| {
            let text = fs::read_to_string(cache_path(dir, fp, spec)).ok()?;
            decode_cached(&text, spec)
        });
        match cached {
            Some(r) => results.push(r),
            None => pending.push(*spec),
        }
    }
    let reused = results.len();
    if let Some(limit) = options.limit {
        pending.truncate(limit);
    }

    if !pending.is_empty() {
        let execute = || -> Result<Vec<ScenarioResult>> {
            let exp = Experiment::load(manifest, config)?;
            Ok(exp.run(&pending))
        };
        let fresh = if config.workers > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?
                .install(execute)?
        } else {
            execute()?
        };
        for r in &fresh {
            match (&r.error, &run) {
                (Some(e), _) => log::error!("scenario {} failed: {e}", r.spec),
                (None, Some((dir, fp))) => write_atomic(&cache_path(dir, fp, &r.spec), encode_cached(r).as_bytes())?,
                (None, None) => {}
            }
        }
        results.extend(fresh);
    }

    let computed = results.len() - reused;
    results.sort_by_key(|r| r.spec.sort_key());
    Ok(MatrixReport {
        results,
        computed,
        reused,
        total,
    })
}

pub const RESULTS_HEADER: &str = "feature,h_train,s_train,attacker,cm,eer,genuine_trials,spoof_trials,seconds";

/// Results table; failed scenarios have `NA` in the EER column.
pub fn results_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        let eer = r.eer.map_or_else(|| "NA".to_string(), |e| e.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.3}",
            r.spec.feature,
            r.spec.h_train,
            r.spec.s_train,
            r.spec.attacker,
            r.spec.cm,
            eer,
            r.genuine_trials,
            r.spoof_trials,
            r.seconds
        );
    }
    out
}

pub fn write_results_csv(path: impl AsRef<Path>, results: &[ScenarioResult]) -> Result<()> {
    write_atomic(path.as_ref(), results_csv(results).as_bytes())
}

/// Output name for a batch-genuinized file: `a/b.wav` becomes `a/b.gen.wav`,
/// or `a/b.rgen.wav` for random-reference genuinization.
pub fn batch_output_path(out_dir: &Path, id: &str, random: bool) -> PathBuf {
    let rel = Path::new(id);
    let stem = rel.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = format!("{stem}.{}.wav", if random { "rgen" } else { "gen" });
    out_dir.join(rel.with_file_name(name))
}

/// Genuinizes every manifest entry into a mirror tree under `out_dir`.
/// Entry `i` uses seed `derive_seed(params.seed, i)`.
pub fn batch_genuinize(
    manifest: &DatasetManifest,
    reference: Reference<'_>,
    params: &GenuinizeParams,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let random = matches!(reference, Reference::Pool(_));
    manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let out = batch_output_path(out_dir, &e.id, random);
            let src = read_wav(&e.path)?;
            let g = genuinize(&src, reference, &params.with_seed(derive_seed(params.seed, i as u64)))
                .map_err(|err| err.context(e.id.clone()))?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            }
            write_wav(&out, &g)?;
            Ok(out)
        })
        .collect()
}
