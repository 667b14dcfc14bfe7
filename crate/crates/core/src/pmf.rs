//! Amplitude PMFs and CDFs over the 1-based index grid.
//!
//! Everything here is parameterized by the grid depth `bits` so that small
//! grids can be checked exhaustively; audio always uses 16.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::vad::VadMask;
use crate::wav::{Waveform, SAMPLE_BITS};

/// Largest extended CDF `extend_cdf` will materialize by default.
pub const DEFAULT_LEVEL_CAP: u64 = 1 << 26;

const MASS_TOLERANCE: f64 = 1e-9;
const MAX_BITS: u32 = 24;

fn check_bits(bits: u32) -> Result<usize> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::Range(format!("grid depth {bits} not in 1..={MAX_BITS}")));
    }
    Ok(1usize << bits)
}

/// Integer level counts. Merging is plain addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    bits: u32,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bits: u32) -> Result<Self> {
        Ok(Self {
            bits,
            counts: vec![0; check_bits(bits)?],
        })
    }

    pub fn from_indices(bits: u32, indices: &[u32]) -> Result<Self> {
        let mut h = Self::new(bits)?;
        h.add_indices(indices)?;
        Ok(h)
    }

    pub fn add_indices(&mut self, indices: &[u32]) -> Result<()> {
        let levels = self.counts.len() as u32;
        for &k in indices {
            if k == 0 || k > levels {
                return Err(Error::Range(format!("index {k} outside 1..={levels}")));
            }
            self.counts[(k - 1) as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.bits != other.bits {
            return Err(Error::Input(format!(
                "cannot merge {}-bit and {}-bit histograms",
                self.bits, other.bits
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn to_pmf(&self) -> Result<Pmf> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Estimation("no samples retained for PMF estimation".into()));
        }
        let mass = self
            .counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect();
        Ok(Pmf {
            bits: self.bits,
            mass,
            total_count: total,
        })
    }
}

/// Probability mass per amplitude index.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    bits: u32,
    mass: Vec<f64>,
    total_count: u64,
}

impl Pmf {
    /// Validates and wraps raw masses (index `k` lives at position `k - 1`).
    pub fn from_mass(bits: u32, mass: Vec<f64>) -> Result<Self> {
        let levels = check_bits(bits)?;
        if mass.len() != levels {
            return Err(Error::Input(format!(
                "PMF has {} entries, expected {levels}",
                mass.len()
            )));
        }
        if let Some(k) = mass.iter().position(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Input(format!(
                "PMF entry {} is {}, must be finite and non-negative",
                k + 1,
                mass[k]
            )));
        }
        let total = compensated_sum(mass.iter().copied());
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Input(format!("PMF sums to {total}, expected 1")));
        }
        Ok(Self {
            bits,
            mass,
            total_count: 0,
        })
    }

    pub fn from_indices(bits: u32, indices: &[u32]) -> Result<Self> {
        Histogram::from_indices(bits, indices)?.to_pmf()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        self.mass.len()
    }

    /// Mass at 1-based index `k`.
    pub fn mass(&self, k: u32) -> f64 {
        self.mass[(k - 1) as usize]
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Number of samples behind the estimate; 0 when loaded from a file.
    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    /// 1-based indices carrying positive mass, ascending.
    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i as u32 + 1)
    }
}

/// Which samples of a masked waveform feed the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Keep {
    Speech,
    NonSpeech,
    #[default]
    All,
}

fn file_histogram(w: &Waveform, mask: Option<&VadMask>, keep: Keep) -> Result<Histogram> {
    let mut h = Histogram::new(SAMPLE_BITS)?;
    match (mask, keep) {
        (_, Keep::All) | (None, _) => h.add_indices(w.samples())?,
        (Some(m), keep) => {
            if m.len() != w.len() {
                return Err(Error::Input(format!(
                    "VAD mask has {} flags for a waveform of {} samples",
                    m.len(),
                    w.len()
                )));
            }
            let want = keep == Keep::Speech;
            let kept: Vec<u32> = w
                .samples()
                .iter()
                .zip(m.flags())
                .filter(|(_, &s)| s == want)
                .map(|(&k, _)| k)
                .collect();
            h.add_indices(&kept)?;
        }
    }
    Ok(h)
}

/// Pools the sample counts of every waveform into one PMF.
///
/// With `masks` given (one per waveform), `keep` selects speech or
/// non-speech samples; without masks every sample is kept.
pub fn estimate_pmf(waveforms: &[Waveform], masks: Option<&[VadMask]>, keep: Keep) -> Result<Pmf> {
    if let Some(m) = masks {
        if m.len() != waveforms.len() {
            return Err(Error::Input(format!(
                "{} masks for {} waveforms",
                m.len(),
                waveforms.len()
            )));
        }
    }
    let partials = waveforms
        .par_iter()
        .enumerate()
        .map(|(i, w)| file_histogram(w, masks.map(|m| &m[i]), keep))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Histogram::new(SAMPLE_BITS)?;
    for h in &partials {
        total.merge(h)?;
    }
    total.to_pmf()
}

/// Cumulative mass per amplitude index.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf {
    bits: u32,
    cum: Vec<f64>,
}

impl Cdf {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        self.cum.len()
    }

    /// `F(k)` for `k` in `0..=levels`, with `F(0) = 0`.
    pub fn value(&self, k: u32) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cum[(k - 1) as usize]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.cum
    }
}

/// Prefix sums of `p` with compensated accumulation.
///
/// Entries from the last positive-mass index upward are exactly 1, and no
/// entry exceeds 1.
pub fn cdf_from_pmf(p: &Pmf) -> Cdf {
    let mut acc = CompensatedSum::new();
    let mut cum: Vec<f64> = p
        .mass
        .iter()
        .map(|&m| {
            acc.add(m);
            acc.value().min(1.0)
        })
        .collect();
    if let Some(last) = p.mass.iter().rposition(|&m| m > 0.0) {
        cum[last..].fill(1.0);
    }
    // rounding can still produce a one-ulp dip after clamping; restore monotonicity
    for i in 1..cum.len() {
        if cum[i] < cum[i - 1] {
            cum[i] = cum[i - 1];
        }
    }
    Cdf { bits: p.bits, cum }
}

/// `G(m)` for extended index `m = (k - 1) * 2^d + i`, `i` in `1..=2^d`.
///
/// Mass inside segment `k` is spread evenly over its `2^d` sub-levels; the
/// last sub-level of each segment returns the base value `F(k)` itself.
#[inline]
pub(crate) fn extended_value(cdf: &Cdf, pmf: &Pmf, k: u32, i: u32, extra_bits: u32) -> f64 {
    let sub = 1u32 << extra_bits;
    let top = cdf.value(k);
    if i == sub {
        top
    } else {
        let v = cdf.value(k - 1) + (f64::from(i) / f64::from(sub)) * pmf.mass(k);
        v.min(top)
    }
}

/// CDF over `2^(bits + d)` levels under a piecewise-constant density.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedCdf {
    base_bits: u32,
    extra_bits: u32,
    cum: Vec<f64>,
}

impl ExtendedCdf {
    pub fn base_bits(&self) -> u32 {
        self.base_bits
    }

    pub fn extra_bits(&self) -> u32 {
        self.extra_bits
    }

    pub fn levels(&self) -> usize {
        self.cum.len()
    }

    /// `G(m)` for 1-based extended index `m`, `G(0) = 0`.
    pub fn value(&self, m: u64) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.cum[(m - 1) as usize]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.cum
    }
}

pub fn extend_cdf(p: &Pmf, extra_bits: u32) -> Result<ExtendedCdf> {
    extend_cdf_with_cap(p, extra_bits, DEFAULT_LEVEL_CAP)
}

pub fn extend_cdf_with_cap(p: &Pmf, extra_bits: u32, cap: u64) -> Result<ExtendedCdf> {
    let total_bits = p.bits + extra_bits;
    let requested = if total_bits >= 64 { u64::MAX } else { 1u64 << total_bits };
    if requested > cap || extra_bits >= 32 {
        return Err(Error::Capacity { requested, cap });
    }
    let base = cdf_from_pmf(p);
    if extra_bits == 0 {
        return Ok(ExtendedCdf {
            base_bits: p.bits,
            extra_bits,
            cum: base.cum,
        });
    }
    let sub = 1u32 << extra_bits;
    let mut cum = Vec::with_capacity(requested as usize);
    for k in 1..=p.levels() as u32 {
        cum.extend((1..=sub).map(|i| extended_value(&base, p, k, i, extra_bits)));
    }
    Ok(ExtendedCdf {
        base_bits: p.bits,
        extra_bits,
        cum,
    })
}

/// Total variation distance, `0.5 * sum |a - b|`.
pub fn tv_distance(a: &Pmf, b: &Pmf) -> Result<f64> {
    if a.bits != b.bits {
        return Err(Error::Input(format!(
            "cannot compare {}-bit and {}-bit PMFs",
            a.bits, b.bits
        )));
    }
    let s = compensated_sum(a.mass.iter().zip(&b.mass).map(|(x, y)| (x - y).abs()));
    Ok((0.5 * s).clamp(0.0, 1.0))
}

const BINARY_MAGIC: &[u8; 4] = b"GPMF";
const BINARY_VERSION: u8 = 1;

/// `index,probability` rows for nonzero bins only.
pub fn write_pmf_csv(path: impl AsRef<Path>, p: &Pmf) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("index,probability\n");
    for (i, &m) in p.mass.iter().enumerate() {
        if m > 0.0 {
            out.push_str(&format!("{},{}\n", i + 1, m));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pmf_csv(path: impl AsRef<Path>, bits: u32) -> Result<Pmf> {
    let path = path.as_ref();
    let levels = check_bits(bits)?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    if headers.iter().collect::<Vec<_>>() != ["index", "probability"] {
        return Err(Error::parse(path, "expected header `index,probability`"));
    }
    let mut mass = vec![0.0; levels];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let bad = || Error::parse(path, format!("malformed row {}", line + 2));
        let k: usize = record.get(0).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let m: f64 = record.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if k == 0 || k > levels {
            return Err(Error::parse(path, format!("index {k} outside 1..={levels}")));
        }
        mass[k - 1] = m;
    }
    Pmf::from_mass(bits, mass).map_err(|e| e.context(path.display().to_string()))
}

/// `GPMF`, version byte, depth byte, then `2^bits` little-endian f64.
pub fn write_pmf_binary(path: impl AsRef<Path>, p: &Pmf) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(6 + 8 * p.mass.len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.push(BINARY_VERSION);
    buf.push(p.bits as u8);
    for m in &p.mass {
        buf.extend_from_slice(&m.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_pmf_binary(path: impl AsRef<Path>) -> Result<Pmf> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 6 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::parse(path, "missing GPMF magic"));
    }
    if bytes[4] != BINARY_VERSION {
        return Err(Error::parse(path, format!("unsupported GPMF version {}", bytes[4])));
    }
    let bits = u32::from(bytes[5]);
    let levels = check_bits(bits).map_err(|e| e.context(path.display().to_string()))?;
    let body = &bytes[6..];
    if body.len() != 8 * levels {
        return Err(Error::parse(
            path,
            format!("expected {} payload bytes, found {}", 8 * levels, body.len()),
        ));
    }
    let mass = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Pmf::from_mass(bits, mass).map_err(|e| e.context(path.display().to_string()))
}

/// Picks the binary reader for `.gpmf` files and the CSV reader otherwise.
pub fn read_pmf(path: impl AsRef<Path>) -> Result<Pmf> {
    let path = path.as_ref();
    if is_binary_path(path) {
        read_pmf_binary(path)
    } else {
        read_pmf_csv(path, SAMPLE_BITS)
    }
}

pub fn write_pmf(path: impl AsRef<Path>, p: &Pmf) -> Result<()> {
    let path = path.as_ref();
    if is_binary_path(path) {
        write_pmf_binary(path, p)
    } else {
        write_pmf_csv(path, p)
    }
}

fn is_binary_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gpmf"))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::parse(path, e.to_string())
    }
}
