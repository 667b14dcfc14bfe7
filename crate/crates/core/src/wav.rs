//! 16-bit PCM waveforms as 1-based amplitude indices.
//!
//! A sample with index `k` in `1..=65536` stands for the amplitude
//! `-1 + k * 2^-15`, so the grid runs from `-1 + 2^-15` up to exactly `1.0`.
//! PCM16 codes `c` in `-32768..=32767` map onto this grid bijectively as
//! `k = c + 32769`; the top code therefore plays the role of the `1.0` level.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Bits per stored sample.
pub const SAMPLE_BITS: u32 = 16;
/// Number of amplitude levels, `2^16`.
pub const LEVELS: u32 = 1 << SAMPLE_BITS;
/// Amplitude step between adjacent levels, `2^-15`.
pub const STEP: f64 = 1.0 / 32768.0;

const CODE_OFFSET: i32 = 32769;

/// Mono signal stored as amplitude indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Waveform {
    samples: Vec<u32>,
    sample_rate: u32,
    source: Option<PathBuf>,
}

impl Waveform {
    pub fn new(samples: Vec<u32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if sample_rate == 0 {
            return Err(Error::Range("sample rate must be positive".into()));
        }
        if let Some((pos, &k)) = samples
            .iter()
            .enumerate()
            .find(|(_, &k)| k == 0 || k > LEVELS)
        {
            return Err(Error::Range(format!(
                "sample {pos} has index {k}, expected 1..={LEVELS}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            source: None,
        })
    }

    /// Quantizes float amplitudes in `(-1, 1]` onto the index grid.
    pub fn from_amplitudes(amplitudes: &[f64], sample_rate: u32) -> Result<Self> {
        let samples = amplitudes
            .iter()
            .map(|&s| amp_to_index(s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, sample_rate)
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source = Some(path.into());
        self
    }

    /// Same rate and source label, new samples. Indices must already be valid.
    pub fn with_samples(&self, samples: Vec<u32>) -> Result<Self> {
        let mut w = Self::new(samples, self.sample_rate)?;
        w.source = self.source.clone();
        Ok(w)
    }

    pub fn samples(&self) -> &[u32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|&k| -1.0 + f64::from(k) * STEP)
            .collect()
    }
}

/// `k = ceil((s + 1) * 2^15)`, clamped to `1..=65536`.
pub fn amp_to_index(s: f64) -> Result<u32> {
    if !(s > -1.0 && s <= 1.0) {
        return Err(Error::Range(format!("amplitude {s} outside (-1, 1]")));
    }
    let k = ((s + 1.0) * 32768.0).ceil();
    Ok(k.clamp(1.0, f64::from(LEVELS)) as u32)
}

/// `s = -1 + k * 2^-15`.
pub fn index_to_amp(k: u32) -> Result<f64> {
    if k == 0 || k > LEVELS {
        return Err(Error::Range(format!("index {k} outside 1..={LEVELS}")));
    }
    Ok(-1.0 + f64::from(k) * STEP)
}

pub fn pcm_to_index(code: i16) -> u32 {
    (i32::from(code) + CODE_OFFSET) as u32
}

pub fn index_to_pcm(k: u32) -> i16 {
    debug_assert!((1..=LEVELS).contains(&k));
    (k as i32 - CODE_OFFSET) as i16
}

fn map_wav_err(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(m) => Error::Format(format!("{}: {m}", path.display())),
        hound::Error::Unsupported => Error::Format(format!(
            "{}: unsupported WAVE encoding (expected PCM)",
            path.display()
        )),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono 16-bit PCM WAVE file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| map_wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "{}: sample format is float, expected integer PCM",
            path.display()
        )));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: {} bits per sample, expected 16",
            path.display(),
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    let expected = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(pcm_to_index))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_wav_err(path, e))?;
    if samples.len() != expected {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated data chunk"),
        ));
    }
    match Waveform::new(samples, spec.sample_rate) {
        Err(Error::EmptyWaveform) => Err(Error::EmptyWaveform.context(path.display().to_string())),
        other => other.map(|w| w.with_source(path)),
    }
}

/// Writes `w` as mono 16-bit PCM. The parent directory must exist.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_wav_err(path, e))?;
    for &k in &w.samples {
        writer
            .write_sample(index_to_pcm(k))
            .map_err(|e| map_wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| map_wav_err(path, e))
}
