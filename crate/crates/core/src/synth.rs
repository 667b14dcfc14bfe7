//! Deterministic synthetic two-class corpus for smoke tests.
//!
//! Genuine files are low-passed harmonic tones over a faint noise floor.
//! Spoof files have a flatter, soft-clipped harmonic spectrum and exact
//! digital silence between voiced stretches, which puts a spike on the zero
//! level of their amplitude PMF.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::classifier::Label;
use crate::error::{Error, Result};
use crate::seed::{derive_labeled, derive_seed, rng_from_seed, DitherRng};
use crate::wav::{write_wav, Waveform};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpusSpec {
    /// Files per (subset, label) cell.
    pub files_per_cell: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            files_per_cell: 50,
            seconds: 0.5,
            sample_rate: 8000,
            seed: 2019,
        }
    }
}

const NOISE_FLOOR: f64 = 2e-4;

fn harmonic(rng: &mut DitherRng, n: usize, sr: f64, label: Label) -> Vec<f64> {
    let f0 = rng.gen_range(100.0..220.0);
    let vibrato = rng.gen_range(0.0..0.03);
    let cutoff = if label == Label::Genuine { 0.45 * sr } else { 0.48 * sr };
    let harmonics: Vec<(f64, f64)> = (1..)
        .map(|h| h as f64)
        .take_while(|h| h * f0 < cutoff)
        .map(|h| {
            let gain = match label {
                Label::Genuine => (-h * f0 / 700.0).exp(),
                Label::Spoof => 1.0 / h.sqrt(),
            };
            (gain, rng.gen_range(0.0..TAU))
        })
        .collect();
    let norm: f64 = harmonics.iter().map(|(g, _)| g).sum();
    let mut phase = 0.0;
    (0..n)
        .map(|t| {
            let f = f0 * (1.0 + vibrato * (TAU * 4.0 * t as f64 / sr).sin());
            phase += TAU * f / sr;
            let s: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(h, (g, p))| g * ((h + 1) as f64 * phase + p).sin())
                .sum();
            s / norm
        })
        .collect()
}

/// One synthetic utterance.
pub fn synth_utterance(label: Label, spec: &ToyCorpusSpec, seed: u64) -> Result<Waveform> {
    let mut rng = rng_from_seed(seed);
    let sr = f64::from(spec.sample_rate);
    let n = (spec.seconds * sr).round() as usize;
    if n < 16 {
        return Err(Error::Input(format!("{} s is too short to synthesise", spec.seconds)));
    }
    let lead = rng.gen_range(n / 10..n / 5);
    let voiced = rng.gen_range(n / 2..(3 * n) / 4).min(n - lead);
    let level = rng.gen_range(0.2..0.5);
    let tone = harmonic(&mut rng, voiced, sr, label);
    let noise = Normal::new(0.0, NOISE_FLOOR).expect("positive sigma");

    let mut x = vec![0.0; n];
    for (i, &v) in tone.iter().enumerate() {
        let env = (std::f64::consts::PI * (i as f64 + 0.5) / voiced as f64).sin();
        x[lead + i] = match label {
            Label::Genuine => level * env * v,
            Label::Spoof => 0.5 * (2.0 * level * env * v).tanh() + 0.01 * level * rng.gen_range(-1.0..1.0),
        };
    }
    if label == Label::Genuine {
        for v in &mut x {
            *v += noise.sample(&mut rng);
        }
    }
    Waveform::from_amplitudes(&x, spec.sample_rate)
}

/// Writes the corpus under `dir` as `{train,test}/{genuine,spoof}/NNN.wav`,
/// plus `manifest.csv` and `config.toml`. Returns the manifest path.
pub fn write_toy_corpus(dir: impl AsRef<Path>, spec: &ToyCorpusSpec) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut manifest = String::from("path,label,subset\n");
    for subset in ["train", "test"] {
        for label in [Label::Genuine, Label::Spoof] {
            let sub = dir.join(subset).join(label.as_str());
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let cell_seed = derive_labeled(spec.seed, &format!("{subset}/{label}"));
            for i in 0..spec.files_per_cell {
                let w = synth_utterance(label, spec, derive_seed(cell_seed, i as u64))?;
                let rel = format!("{subset}/{label}/{i:03}.wav");
                write_wav(dir.join(&rel), &w)?;
                let _ = writeln!(manifest, "{rel},{label},{subset}");
            }
        }
    }
    let manifest_path = dir.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, TOY_CONFIG).map_err(|e| Error::io(&config_path, e))?;
    Ok(manifest_path)
}

/// Run settings sized for the toy corpus.
pub const TOY_CONFIG: &str = "\
attacker_pmf_source = \"test\"
cm_pmf_source = \"train\"
features = [\"lfcc\"]
components = 16
em_iters = 10
d_bits = 5
";
