//! Quantile matching of a waveform's amplitude distribution onto a target CDF.
//!
//! For a source level `k` with per-file CDF value `F_s(k)`, the output level is
//! the largest target level `q` carrying positive mass with `F_g(q) <= F_s(k)`.
//! When no such level exists the smallest positive-mass target level is used.
//!
//! The perturbed variant first refines the source quantizer by `d` bits,
//! spreading each level's mass evenly over `2^d` sub-levels, and places every
//! sample on a uniformly drawn sub-level of its own segment before matching.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::pmf::{cdf_from_pmf, extended_value, Cdf, Pmf, DEFAULT_LEVEL_CAP};
use crate::seed::{derive_labeled, rng_from_seed};
use crate::wav::{Waveform, SAMPLE_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Basic,
    Perturbed,
    Random,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Mode::Basic),
            "perturbed" => Ok(Mode::Perturbed),
            "random" => Ok(Mode::Random),
            other => Err(Error::Config(format!("unknown genuinization mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GenuinizeParams {
    /// Extra quantizer bits `d`; ignored in basic mode.
    pub extra_bits: u32,
    pub seed: u64,
    pub mode: Mode,
}

impl GenuinizeParams {
    pub fn basic() -> Self {
        Self {
            extra_bits: 0,
            seed: 0,
            mode: Mode::Basic,
        }
    }

    pub fn perturbed(extra_bits: u32, seed: u64) -> Self {
        Self {
            extra_bits,
            seed,
            mode: Mode::Perturbed,
        }
    }

    pub fn random(extra_bits: u32, seed: u64) -> Self {
        Self {
            extra_bits,
            seed,
            mode: Mode::Random,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Positive-mass target levels and their cumulative values, both ascending.
#[derive(Debug, Clone)]
pub struct TargetLookup {
    levels: Vec<u32>,
    cum: Vec<f64>,
}

impl TargetLookup {
    pub fn new(target: &Cdf) -> Result<Self> {
        let mut levels = Vec::new();
        let mut cum = Vec::new();
        let mut prev = 0.0;
        for (i, &f) in target.values().iter().enumerate() {
            if f > prev {
                levels.push(i as u32 + 1);
                cum.push(f);
                prev = f;
            }
        }
        if levels.is_empty() {
            return Err(Error::Input("target CDF carries no mass".into()));
        }
        Ok(Self { levels, cum })
    }

    /// Largest positive-mass level with `F_g(q) <= v`, else the lowest one.
    #[inline]
    pub fn resolve(&self, v: f64) -> u32 {
        match self.cum.partition_point(|&f| f <= v) {
            0 => self.levels[0],
            n => self.levels[n - 1],
        }
    }
}

fn check_grid(bits: u32, target: &Cdf) -> Result<()> {
    if target.bits() != bits {
        return Err(Error::Input(format!(
            "target CDF is {}-bit, source grid is {bits}-bit",
            target.bits()
        )));
    }
    Ok(())
}

/// Basic genuinization of raw indices on a `bits`-deep grid.
pub fn genuinize_indices_basic(src: &[u32], bits: u32, target: &Cdf) -> Result<Vec<u32>> {
    check_grid(bits, target)?;
    let lookup = TargetLookup::new(target)?;
    let pmf = Pmf::from_indices(bits, src)?;
    let cdf = cdf_from_pmf(&pmf);
    let mut map = vec![0u32; pmf.levels() + 1];
    for k in pmf.support() {
        map[k as usize] = lookup.resolve(cdf.value(k));
    }
    Ok(src.iter().map(|&k| map[k as usize]).collect())
}

/// Perturbed genuinization of raw indices, dither drawn from `rng`.
///
/// Sub-level offsets `n` are the top `d` bits of successive `next_u32` draws,
/// one draw per sample in order. With `d = 0` no draws are made and the result
/// equals [`genuinize_indices_basic`].
pub fn genuinize_indices_perturbed<R: RngCore>(
    src: &[u32],
    bits: u32,
    target: &Cdf,
    extra_bits: u32,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if extra_bits == 0 {
        return genuinize_indices_basic(src, bits, target);
    }
    let requested = 1u64.checked_shl(bits + extra_bits).unwrap_or(u64::MAX);
    if extra_bits >= 32 || requested > DEFAULT_LEVEL_CAP {
        return Err(Error::Capacity {
            requested,
            cap: DEFAULT_LEVEL_CAP,
        });
    }
    check_grid(bits, target)?;
    let lookup = TargetLookup::new(target)?;
    let pmf = Pmf::from_indices(bits, src)?;
    let cdf = cdf_from_pmf(&pmf);
    let sub = 1usize << extra_bits;

    // q* for every sub-level of every occupied source segment
    let mut slot = vec![u32::MAX; pmf.levels() + 1];
    let mut table = Vec::new();
    for (rank, k) in pmf.support().enumerate() {
        slot[k as usize] = rank as u32;
        table.extend((1..=sub as u32).map(|i| {
            lookup.resolve(extended_value(&cdf, &pmf, k, i, extra_bits))
        }));
    }

    let shift = 32 - extra_bits;
    Ok(src
        .iter()
        .map(|&k| {
            let n = (rng.next_u32() >> shift) as usize;
            // extended index k * 2^d - n sits on sub-level 2^d - n of segment k
            let i = sub - n;
            table[slot[k as usize] as usize * sub + i - 1]
        })
        .collect())
}

fn check_mode(params: &GenuinizeParams, want: Mode) -> Result<()> {
    if params.mode != want {
        return Err(Error::Config(format!(
            "expected {want:?} parameters, got {:?}",
            params.mode
        )));
    }
    Ok(())
}

fn check_target(target: &Cdf) -> Result<()> {
    if target.bits() != SAMPLE_BITS {
        return Err(Error::Input(format!(
            "target CDF is {}-bit, waveforms are {SAMPLE_BITS}-bit",
            target.bits()
        )));
    }
    Ok(())
}

pub fn genuinize_basic(src: &Waveform, target: &Cdf) -> Result<Waveform> {
    check_target(target)?;
    src.with_samples(genuinize_indices_basic(src.samples(), SAMPLE_BITS, target)?)
}

/// Dither is drawn from ChaCha8 seeded with `params.seed`.
pub fn genuinize_perturbed(src: &Waveform, target: &Cdf, params: &GenuinizeParams) -> Result<Waveform> {
    check_mode(params, Mode::Perturbed)?;
    check_target(target)?;
    let mut rng = rng_from_seed(params.seed);
    let out = genuinize_indices_perturbed(src.samples(), SAMPLE_BITS, target, params.extra_bits, &mut rng)?;
    src.with_samples(out)
}

/// Index of the pool member that [`genuinize_random`] uses for `seed`.
///
/// The pick has its own stream, so the dither sequence is the same one
/// [`genuinize_perturbed`] would draw for the same seed.
pub fn pick_reference(pool_len: usize, seed: u64) -> Result<usize> {
    if pool_len == 0 {
        return Err(Error::Config("random genuinization needs a non-empty reference pool".into()));
    }
    let mut rng = rng_from_seed(derive_labeled(seed, "reference-pick"));
    Ok(rng.gen_range(0..pool_len))
}

pub fn genuinize_random(src: &Waveform, pool: &[Waveform], params: &GenuinizeParams) -> Result<Waveform> {
    check_mode(params, Mode::Random)?;
    let reference = &pool[pick_reference(pool.len(), params.seed)?];
    let target = cdf_from_pmf(&Pmf::from_indices(SAMPLE_BITS, reference.samples())?);
    genuinize_perturbed(
        src,
        &target,
        &GenuinizeParams {
            mode: Mode::Perturbed,
            ..*params
        },
    )
}

/// What a genuinization call matches against.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Corpus(&'a Cdf),
    Pool(&'a [Waveform]),
}

/// Dispatches on `params.mode`.
pub fn genuinize(src: &Waveform, reference: Reference<'_>, params: &GenuinizeParams) -> Result<Waveform> {
    match (params.mode, reference) {
        (Mode::Basic, Reference::Corpus(cdf)) => genuinize_basic(src, cdf),
        (Mode::Perturbed, Reference::Corpus(cdf)) => genuinize_perturbed(src, cdf, params),
        (Mode::Random, Reference::Pool(pool)) => genuinize_random(src, pool, params),
        (Mode::Random, Reference::Corpus(_)) => {
            Err(Error::Config("random genuinization needs a reference pool".into()))
        }
        (_, Reference::Pool(_)) => Err(Error::Config(
            "basic and perturbed genuinization need a target CDF".into(),
        )),
    }
}
