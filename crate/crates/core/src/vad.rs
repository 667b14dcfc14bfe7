//! Relative-energy voice activity detection.
//!
//! Frames are scored by the mean square of the zero-centered amplitudes.
//! A frame is speech when its energy reaches `alpha` times the loudest frame
//! of the same file.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::wav::Waveform;

pub const DEFAULT_ALPHA: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    pub alpha: f64,
    pub frame_len: usize,
    pub frame_hop: usize,
}

impl VadConfig {
    /// 20 ms frames with a 10 ms hop.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        Self::from_durations(sample_rate, 20.0, 10.0)
    }

    pub fn from_durations(sample_rate: u32, frame_ms: f64, hop_ms: f64) -> Self {
        let to_samples = |ms: f64| ((ms * f64::from(sample_rate) / 1000.0).round() as usize).max(1);
        Self {
            alpha: DEFAULT_ALPHA,
            frame_len: to_samples(frame_ms),
            frame_hop: to_samples(hop_ms),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("VAD alpha {} not in (0, 1)", self.alpha)));
        }
        if self.frame_hop == 0 || self.frame_len < self.frame_hop {
            return Err(Error::Config(format!(
                "VAD framing needs frame_len >= frame_hop >= 1, got {}/{}",
                self.frame_len, self.frame_hop
            )));
        }
        Ok(())
    }
}

/// Per-sample speech flags aligned with a waveform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VadMask {
    speech: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub speech: bool,
}

impl VadMask {
    pub fn new(speech: Vec<bool>) -> Self {
        Self { speech }
    }

    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    pub fn is_speech(&self, i: usize) -> bool {
        self.speech[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.speech
    }

    pub fn speech_fraction(&self) -> f64 {
        if self.speech.is_empty() {
            return 0.0;
        }
        self.speech.iter().filter(|&&s| s).count() as f64 / self.speech.len() as f64
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        for (i, &s) in self.speech.iter().enumerate() {
            match out.last_mut() {
                Some(seg) if seg.speech == s => seg.end = i + 1,
                _ => out.push(Segment {
                    start: i,
                    end: i + 1,
                    speech: s,
                }),
            }
        }
        out
    }

    /// `start_sample,end_sample,label` lines, end exclusive.
    pub fn to_rle_text(&self) -> String {
        let mut s = String::new();
        for seg in self.segments() {
            let label = if seg.speech { "speech" } else { "nonspeech" };
            let _ = writeln!(s, "{},{},{}", seg.start, seg.end, label);
        }
        s
    }
}

pub fn frame_count(n: usize, frame_len: usize, hop: usize) -> usize {
    if n < frame_len {
        0
    } else {
        1 + (n - frame_len) / hop
    }
}

fn frame_energies(x: &[f64], frame_len: usize, hop: usize) -> Vec<f64> {
    (0..frame_count(x.len(), frame_len, hop))
        .map(|f| {
            let frame = &x[f * hop..f * hop + frame_len];
            frame.iter().map(|v| v * v).sum::<f64>() / frame_len as f64
        })
        .collect()
}

/// Runs the detector on raw float amplitudes.
pub fn energy_vad_amplitudes(x: &[f64], cfg: &VadConfig) -> Result<VadMask> {
    cfg.validate()?;
    if x.len() < cfg.frame_len {
        return Err(Error::Input(format!(
            "waveform has {} samples, shorter than one VAD frame ({})",
            x.len(),
            cfg.frame_len
        )));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let energies = frame_energies(&centered, cfg.frame_len, cfg.frame_hop);
    let max = energies.iter().copied().fold(0.0, f64::max);
    let threshold = cfg.alpha * max;
    let frame_speech: Vec<bool> = energies.iter().map(|&e| e >= threshold).collect();

    let mut speech = vec![false; x.len()];
    for (f, _) in frame_speech.iter().enumerate().filter(|(_, &s)| s) {
        let start = f * cfg.frame_hop;
        speech[start..start + cfg.frame_len].fill(true);
    }
    let last = frame_speech.len() - 1;
    let covered = last * cfg.frame_hop + cfg.frame_len;
    speech[covered..].fill(frame_speech[last]);
    Ok(VadMask { speech })
}

pub fn energy_vad(w: &Waveform, cfg: &VadConfig) -> Result<VadMask> {
    energy_vad_amplitudes(&w.amplitudes(), cfg)
}
