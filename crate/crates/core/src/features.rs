//! Frame-level cepstral features for the countermeasure.
//!
//! LFCC pipeline per frame: Hamming window, power spectrum, linearly spaced
//! triangular filterbank, floored log, orthonormal DCT-II. Optional log frame
//! energy is appended to the cepstra, then regression deltas and
//! delta-deltas.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::vad::frame_count;
use crate::wav::Waveform;

/// Floor applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LfccConfig {
    pub frame_len_ms: f64,
    pub frame_hop_ms: f64,
    pub fft_size: usize,
    pub num_filters: usize,
    pub num_ceps: usize,
    pub include_energy: bool,
    pub delta_window: usize,
}

impl Default for LfccConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 20.0,
            frame_hop_ms: 10.0,
            fft_size: 512,
            num_filters: 20,
            num_ceps: 19,
            include_energy: true,
            delta_window: 2,
        }
    }
}

impl LfccConfig {
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.frame_len_ms, sample_rate)
    }

    pub fn frame_hop(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.frame_hop_ms, sample_rate)
    }

    /// Static coefficients per frame, before deltas.
    pub fn static_width(&self) -> usize {
        self.num_ceps + usize::from(self.include_energy)
    }

    pub fn width(&self) -> usize {
        3 * self.static_width()
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let len = self.frame_len(sample_rate);
        let hop = self.frame_hop(sample_rate);
        if len == 0 || hop == 0 {
            return Err(Error::Config("LFCC frame length and hop must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < len {
            return Err(Error::Config(format!(
                "FFT size {} must be a power of two of at least the frame length {len}",
                self.fft_size
            )));
        }
        if self.num_filters == 0 || self.num_ceps == 0 || self.num_ceps > self.num_filters {
            return Err(Error::Config(format!(
                "need 0 < num_ceps ({}) <= num_filters ({})",
                self.num_ceps, self.num_filters
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self, sample_rate: u32) -> String {
        format!(
            "lfcc/sr{}/len{}/hop{}/fft{}/nf{}/nc{}/e{}/dw{}",
            sample_rate,
            self.frame_len(sample_rate),
            self.frame_hop(sample_rate),
            self.fft_size,
            self.num_filters,
            self.num_ceps,
            u8::from(self.include_energy),
            self.delta_window
        )
    }
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * f64::from(sample_rate) / 1000.0).round() as usize
}

/// `T x F` features, row-major, single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    fingerprint: String,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, fingerprint: impl Into<String>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "{} values do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            rows,
            cols,
            data,
            fingerprint: fingerprint.into(),
        })
    }

    fn from_f64(rows: usize, cols: usize, data: &[f64], fingerprint: String) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect(), fingerprint)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Stacks matrices of equal width, keeping the first fingerprint.
    pub fn stack<'a, I: IntoIterator<Item = &'a FeatureMatrix>>(items: I) -> Result<Self> {
        let mut it = items.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::Input("nothing to stack".into()))?;
        let mut out = first.clone();
        for m in it {
            if m.cols != out.cols {
                return Err(Error::Input(format!(
                    "cannot stack {}-wide features onto {}-wide",
                    m.cols, out.cols
                )));
            }
            out.data.extend_from_slice(&m.data);
            out.rows += m.rows;
        }
        Ok(out)
    }
}

/// Triangular filters with edges evenly spaced from 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct LinearFilterbank {
    /// `num_filters x (fft_size / 2 + 1)` weights.
    weights: Vec<Vec<f64>>,
}

impl LinearFilterbank {
    pub fn new(num_filters: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = f64::from(sample_rate) / 2.0;
        let bins = fft_size / 2 + 1;
        let edge = |i: usize| nyquist * i as f64 / (num_filters + 1) as f64;
        let weights = (0..num_filters)
            .map(|j| {
                let (lo, mid, hi) = (edge(j), edge(j + 1), edge(j + 2));
                (0..bins)
                    .map(|b| {
                        let f = b as f64 * f64::from(sample_rate) / fft_size as f64;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { weights }
    }

    /// Center frequency of filter `j` in Hz.
    pub fn center(num_filters: usize, sample_rate: u32, j: usize) -> f64 {
        f64::from(sample_rate) / 2.0 * (j + 1) as f64 / (num_filters + 1) as f64
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// First `n_out` coefficients of the orthonormal DCT-II of `x`.
pub fn dct_ii(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|m| {
            let scale = if m == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(j, &v)| v * (PI * m as f64 * (j as f64 + 0.5) / n).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Per-frame analysis shared by every frame of one extraction.
struct FrameAnalyzer {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    bank: LinearFilterbank,
}

impl FrameAnalyzer {
    fn new(cfg: &LfccConfig, sample_rate: u32) -> Self {
        Self {
            window: hamming(cfg.frame_len(sample_rate)),
            fft: FftPlanner::new().plan_fft_forward(cfg.fft_size),
            fft_size: cfg.fft_size,
            bank: LinearFilterbank::new(cfg.num_filters, cfg.fft_size, sample_rate),
        }
    }

    fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        buf[..self.fft_size / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    fn filterbank_energies(&self, frame: &[f64]) -> Vec<f64> {
        self.bank.apply(&self.power_spectrum(frame))
    }
}

/// Linear filterbank energies of one frame (windowed, zero-padded to `fft_size`).
pub fn filterbank_energies(frame: &[f64], cfg: &LfccConfig, sample_rate: u32) -> Result<Vec<f64>> {
    cfg.validate(sample_rate)?;
    if frame.len() != cfg.frame_len(sample_rate) {
        return Err(Error::Input(format!(
            "frame has {} samples, expected {}",
            frame.len(),
            cfg.frame_len(sample_rate)
        )));
    }
    Ok(FrameAnalyzer::new(cfg, sample_rate).filterbank_energies(frame))
}

/// Static (pre-delta) LFCC rows, row-major.
pub fn lfcc_static(x: &[f64], cfg: &LfccConfig, sample_rate: u32) -> Result<(usize, Vec<f64>)> {
    cfg.validate(sample_rate)?;
    let len = cfg.frame_len(sample_rate);
    let hop = cfg.frame_hop(sample_rate);
    let frames = frame_count(x.len(), len, hop);
    if frames == 0 {
        return Err(Error::Input(format!(
            "signal of {} samples is shorter than one {len}-sample frame",
            x.len()
        )));
    }
    let analyzer = FrameAnalyzer::new(cfg, sample_rate);
    let width = cfg.static_width();
    let mut out = Vec::with_capacity(frames * width);
    for f in 0..frames {
        let frame = &x[f * hop..f * hop + len];
        let log_energies: Vec<f64> = analyzer
            .filterbank_energies(frame)
            .into_iter()
            .map(|e| e.max(LOG_FLOOR).ln())
            .collect();
        out.extend(dct_ii(&log_energies, cfg.num_ceps));
        if cfg.include_energy {
            let e: f64 = frame.iter().map(|v| v * v).sum();
            out.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok((frames, out))
}

fn regression(rows: usize, cols: usize, x: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || rows == 0 {
        return vec![0.0; x.len()];
    }
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize, c: usize| x[(t.clamp(0, rows as isize - 1) as usize) * cols + c];
    let mut out = vec![0.0; x.len()];
    for t in 0..rows as isize {
        for c in 0..cols {
            let s: f64 = (1..=window as isize)
                .map(|n| n as f64 * (at(t + n, c) - at(t - n, c)))
                .sum();
            out[t as usize * cols + c] = s / denom;
        }
    }
    out
}

/// Appends regression deltas and delta-deltas, edges replicated.
/// Output rows are `[x, delta, delta-delta]`.
pub fn append_deltas_f64(rows: usize, cols: usize, x: &[f64], window: usize) -> Vec<f64> {
    let d1 = regression(rows, cols, x, window);
    let d2 = regression(rows, cols, &d1, window);
    let mut out = Vec::with_capacity(3 * x.len());
    for t in 0..rows {
        let r = t * cols..(t + 1) * cols;
        out.extend_from_slice(&x[r.clone()]);
        out.extend_from_slice(&d1[r.clone()]);
        out.extend_from_slice(&d2[r]);
    }
    out
}

pub fn append_deltas(m: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    let x: Vec<f64> = m.data.iter().map(|&v| f64::from(v)).collect();
    let out = append_deltas_f64(m.rows, m.cols, &x, window);
    FeatureMatrix::from_f64(m.rows, 3 * m.cols, &out, format!("{}+d{window}", m.fingerprint))
}

pub fn lfcc(w: &Waveform, cfg: &LfccConfig) -> Result<FeatureMatrix> {
    let (rows, statics) = lfcc_static(&w.amplitudes(), cfg, w.sample_rate())?;
    let cols = cfg.static_width();
    let full = append_deltas_f64(rows, cols, &statics, cfg.delta_window);
    FeatureMatrix::from_f64(rows, 3 * cols, &full, cfg.fingerprint(w.sample_rate()))
}

/// Pluggable frame-level feature extractor.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &'static str;
    fn fingerprint(&self, sample_rate: u32) -> String;
    fn extract(&self, w: &Waveform) -> Result<FeatureMatrix>;
}

#[derive(Debug, Clone, Default)]
pub struct LfccExtractor {
    pub config: LfccConfig,
}

impl FeatureExtractor for LfccExtractor {
    fn id(&self) -> &'static str {
        "lfcc"
    }

    fn fingerprint(&self, sample_rate: u32) -> String {
        self.config.fingerprint(sample_rate)
    }

    fn extract(&self, w: &Waveform) -> Result<FeatureMatrix> {
        lfcc(w, &self.config)
    }
}

/// Extractors selectable by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKind {
    Lfcc,
}

impl FeatureKind {
    pub fn parse(id: &str) -> Result<Self> {
        match id.to_ascii_lowercase().as_str() {
            "lfcc" => Ok(FeatureKind::Lfcc),
            "cqcc" => Err(Error::Config("the cqcc extractor is not available in this build".into())),
            other => Err(Error::Config(format!("unknown feature extractor `{other}`"))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            FeatureKind::Lfcc => "lfcc",
        }
    }

    pub fn extractor(self) -> Box<dyn FeatureExtractor> {
        match self {
            FeatureKind::Lfcc => Box::new(LfccExtractor::default()),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

const CACHE_MAGIC: &[u8; 4] = b"GFEA";
const CACHE_VERSION: u8 = 1;

/// Feature cache layout: `GFEA`, version byte, u16 fingerprint length, the
/// fingerprint bytes, u32 rows, u32 cols, then row-major f32. All little-endian.
pub fn write_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let fp = m.fingerprint.as_bytes();
    let fp_len = u16::try_from(fp.len()).map_err(|_| Error::Input("fingerprint too long".into()))?;
    let mut buf = Vec::with_capacity(15 + fp.len() + 4 * m.data.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.push(CACHE_VERSION);
    buf.extend_from_slice(&fp_len.to_le_bytes());
    buf.extend_from_slice(fp);
    buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::parse(path, m.to_string());
    if bytes.len() < 7 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing GFEA magic"));
    }
    if bytes[4] != CACHE_VERSION {
        return Err(bad("unsupported feature cache version"));
    }
    let fp_len = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
    let header_end = 7 + fp_len + 8;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let fingerprint = std::str::from_utf8(&bytes[7..7 + fp_len])
        .map_err(|_| bad("fingerprint is not UTF-8"))?
        .to_string();
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let rows = u32_at(7 + fp_len);
    let cols = u32_at(11 + fp_len);
    let body = &bytes[header_end..];
    if body.len() != 4 * rows * cols {
        return Err(bad("payload size does not match header"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureMatrix::new(rows, cols, data, fingerprint).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_power_spectrum(frame: &[f64], window: &[f64], n: usize) -> Vec<f64> {
        (0..=n / 2)
            .map(|b| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, (&x, &w)) in frame.iter().zip(window).enumerate() {
                    let ang = -2.0 * PI * (b * t) as f64 / n as f64;
                    re += x * w * ang.cos();
                    im += x * w * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn one_second_at_16k_has_99_frames_of_60() {
        let w = Waveform::new(vec![32768; 16000], 16000).unwrap();
        let m = lfcc(&w, &LfccConfig::default()).unwrap();
        assert_eq!(m.rows(), 99);
        assert_eq!(m.cols(), 60);
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let x = vec![0.0; 4000];
        let cfg = LfccConfig::default();
        let (rows, s) = lfcc_static(&x, &cfg, 16000).unwrap();
        let width = cfg.static_width();
        for t in 1..rows {
            assert_eq!(&s[t * width..(t + 1) * width], &s[..width]);
        }
        // log floor, DC-only cepstrum
        let floor = LOG_FLOOR.ln();
        assert!((s[0] - floor * (cfg.num_filters as f64).sqrt()).abs() < 1e-9);
        assert!(s[1..cfg.num_ceps].iter().all(|v| v.abs() < 1e-9));
        assert_eq!(s[cfg.num_ceps], floor);

        let w = Waveform::from_amplitudes(&x, 16000).unwrap();
        let m = lfcc(&w, &cfg).unwrap();
        assert!(m.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sinusoid_peaks_in_its_filter() {
        let sr = 16000;
        let cfg = LfccConfig::default();
        let len = cfg.frame_len(sr);
        for j in [0usize, 4, 11, 19] {
            let f0 = LinearFilterbank::center(cfg.num_filters, sr, j);
            let frame: Vec<f64> = (0..len)
                .map(|n| 0.5 * (2.0 * PI * f0 * n as f64 / f64::from(sr)).sin())
                .collect();
            let fast = filterbank_energies(&frame, &cfg, sr).unwrap();
            let bank = LinearFilterbank::new(cfg.num_filters, cfg.fft_size, sr);
            let oracle = bank.apply(&naive_power_spectrum(&frame, &hamming(len), cfg.fft_size));
            for (a, b) in fast.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
            let peak = fast
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, j);
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let x: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64).ln_1p() - 3.0).collect();
        let c = dct_ii(&x, 20);
        let n: f64 = 20.0;
        for (j, &orig) in x.iter().enumerate() {
            let back: f64 = c
                .iter()
                .enumerate()
                .map(|(m, &v)| {
                    let s = if m == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    s * v * (PI * m as f64 * (j as f64 + 0.5) / n).cos()
                })
                .sum();
            assert!((back - orig).abs() < 1e-9);
        }
    }

    #[test]
    fn deltas_of_constant_and_single_frame_are_zero() {
        let x = vec![1.5; 4 * 3];
        let out = append_deltas_f64(4, 3, &x, 2);
        assert_eq!(out.len(), 36);
        for t in 0..4 {
            assert_eq!(&out[t * 9..t * 9 + 3], &[1.5; 3]);
            assert!(out[t * 9 + 3..t * 9 + 9].iter().all(|&v| v == 0.0));
        }
        let single = append_deltas_f64(1, 2, &[3.0, -1.0], 2);
        assert_eq!(single, vec![3.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ramp_delta_is_the_slope() {
        let rows = 10;
        let x: Vec<f64> = (0..rows).map(|t| 0.75 * t as f64 + 2.0).collect();
        let out = append_deltas_f64(rows, 1, &x, 2);
        for t in 2..rows - 2 {
            assert!((out[t * 3 + 1] - 0.75).abs() < 1e-12);
        }
        for t in 4..rows - 4 {
            assert!(out[t * 3 + 2].abs() < 1e-12);
        }
    }

    #[test]
    fn hop_shift_shifts_frames() {
        let sr = 8000;
        let cfg = LfccConfig::default();
        let hop = cfg.frame_hop(sr);
        let x: Vec<f64> = (0..4000)
            .map(|n| 0.3 * (n as f64 * 0.37).sin() + 0.1 * (n as f64 * 1.9).cos())
            .collect();
        let a = lfcc(&Waveform::from_amplitudes(&x, sr).unwrap(), &cfg).unwrap();
        let b = lfcc(&Waveform::from_amplitudes(&x[hop..], sr).unwrap(), &cfg).unwrap();
        for t in 5..b.rows() - 5 {
            for (u, v) in a.row(t + 1).iter().zip(b.row(t)) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_validation() {
        let cfg = LfccConfig {
            num_ceps: 21,
            ..LfccConfig::default()
        };
        assert!(cfg.validate(16000).is_err());
        let cfg = LfccConfig {
            fft_size: 256,
            ..LfccConfig::default()
        };
        assert!(cfg.validate(16000).is_err());
        assert!(LfccConfig::default().validate(8000).is_ok());
        let w = Waveform::new(vec![32768; 100], 16000).unwrap();
        assert!(matches!(lfcc(&w, &LfccConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f64> = (0..2000).map(|n| 0.2 * (n as f64 * 0.1).sin()).collect();
        let m = lfcc(&Waveform::from_amplitudes(&x, 8000).unwrap(), &LfccConfig::default()).unwrap();
        let path = dir.path().join("f.feat");
        write_features(&path, &m).unwrap();
        assert_eq!(read_features(&path).unwrap(), m);
        std::fs::write(&path, b"GFEA\x01\x00\x00").unwrap();
        assert!(read_features(&path).is_err());
    }

    #[test]
    fn kinds() {
        assert_eq!(FeatureKind::parse("LFCC").unwrap(), FeatureKind::Lfcc);
        assert!(FeatureKind::parse("cqcc").is_err());
        assert!(FeatureKind::parse("mfcc").is_err());
    }
}
