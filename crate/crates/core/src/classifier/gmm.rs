//! Diagonal-covariance Gaussian mixtures trained by EM.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::{compensated_sum, log_sum_exp};
use crate::seed::rng_from_seed;

/// Lowest variance any component may take, in absolute terms.
pub const MIN_VARIANCE: f64 = 1e-10;

const BLOCK_ROWS: usize = 1024;
const MAX_BLOCKS: usize = 64;
const EMPTY_COMPONENT_MASS: f64 = 1e-6;

/// What the training audio went through before feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    /// Untouched audio.
    Original,
    /// Genuinized against a corpus-level target.
    Genuinized,
    /// Genuinized against randomly drawn reference files.
    Random,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::Original, Provenance::Genuinized, Provenance::Random];

    pub fn letter(self) -> char {
        match self {
            Provenance::Original => 'O',
            Provenance::Genuinized => 'G',
            Provenance::Random => 'R',
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "O" | "o" => Ok(Provenance::Original),
            "G" | "g" => Ok(Provenance::Genuinized),
            "R" | "r" => Ok(Provenance::Random),
            other => Err(Error::Config(format!("unknown provenance `{other}`, expected O, G or R"))),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub(crate) weights: Vec<f64>,
    /// `K x F`, row-major.
    pub(crate) means: Vec<f64>,
    /// `K x F`, row-major.
    pub(crate) variances: Vec<f64>,
    pub(crate) dim: usize,
    pub provenance: Provenance,
    pub fingerprint: String,
}

impl GmmModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        dim: usize,
        provenance: Provenance,
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || dim == 0 {
            return Err(Error::Input("a GMM needs at least one component and dimension".into()));
        }
        if means.len() != k * dim || variances.len() != k * dim {
            return Err(Error::Input(format!(
                "GMM parameter sizes do not match K={k}, F={dim}"
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Input("GMM weights must be finite and non-negative".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("GMM weights sum to {total}")));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Input("GMM variances must be finite and positive".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Input("GMM means must be finite".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
            dim,
            provenance,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    fn scorer(&self) -> Scorer<'_> {
        Scorer::new(self)
    }
}

/// Precomputed per-component terms for log-density evaluation.
struct Scorer<'a> {
    model: &'a GmmModel,
    /// `log w_k - 0.5 * sum_f log(2 pi var_kf)`
    offsets: Vec<f64>,
    inv_var: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a GmmModel) -> Self {
        let offsets = (0..model.components())
            .map(|k| {
                let log_det: f64 = model.variance(k).iter().map(|v| (2.0 * PI * v).ln()).sum();
                model.weights[k].ln() - 0.5 * log_det
            })
            .collect();
        let inv_var = model.variances.iter().map(|v| 1.0 / v).collect();
        Self {
            model,
            offsets,
            inv_var,
        }
    }

    /// Per-component joint log-densities of one frame into `out`.
    fn component_logs(&self, x: &[f64], out: &mut [f64]) {
        let d = self.model.dim;
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &self.model.means[k * d..(k + 1) * d];
            let iv = &self.inv_var[k * d..(k + 1) * d];
            let mut q = 0.0;
            for f in 0..d {
                let diff = x[f] - mu[f];
                q += diff * diff * iv[f];
            }
            *o = self.offsets[k] - 0.5 * q;
        }
    }
}

fn rows_f64(x: &FeatureMatrix) -> Vec<f64> {
    x.data().iter().map(|&v| f64::from(v)).collect()
}

fn check_dim(m: &GmmModel, x: &FeatureMatrix) -> Result<()> {
    if x.cols() != m.dim {
        return Err(Error::Input(format!(
            "features are {}-dimensional, model expects {}",
            x.cols(),
            m.dim
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Input("no frames to score".into()));
    }
    Ok(())
}

/// Mean per-frame log-likelihood of `x` under `m`.
pub fn gmm_loglik(m: &GmmModel, x: &FeatureMatrix) -> Result<f64> {
    check_dim(m, x)?;
    let scorer = m.scorer();
    let data = rows_f64(x);
    let per_frame: Vec<f64> = data
        .par_chunks(m.dim)
        .map_init(
            || vec![0.0; m.components()],
            |buf, row| {
                scorer.component_logs(row, buf);
                log_sum_exp(buf)
            },
        )
        .collect();
    Ok(compensated_sum(per_frame) / x.rows() as f64)
}

/// Log-likelihood ratio, positive when `x` looks genuine.
pub fn score_trial(genuine: &GmmModel, spoof: &GmmModel, x: &FeatureMatrix) -> Result<f64> {
    Ok(gmm_loglik(genuine, x)? - gmm_loglik(spoof, x)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the relative log-likelihood gain drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor_ratio: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 512,
            max_iters: 10,
            rel_tol: 1e-5,
            seed: 0,
            var_floor_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Total log-likelihood of the data before each M-step.
    pub loglik_trace: Vec<f64>,
    pub reseeded: usize,
}

/// Sufficient statistics of one block of rows.
struct Stats {
    loglik: f64,
    occupancy: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    /// Per component: (best responsibility, row index).
    best: Vec<(f64, usize)>,
}

impl Stats {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            loglik: 0.0,
            occupancy: vec![0.0; k],
            first: vec![0.0; k * d],
            second: vec![0.0; k * d],
            best: vec![(f64::NEG_INFINITY, usize::MAX); k],
        }
    }

    fn absorb(&mut self, other: &Stats) {
        self.loglik += other.loglik;
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *a += b;
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
        for (a, b) in self.best.iter_mut().zip(&other.best) {
            if b.0 > a.0 {
                *a = *b;
            }
        }
    }
}

fn e_step_block(scorer: &Scorer<'_>, data: &[f64], first_row: usize) -> Stats {
    let k = scorer.model.components();
    let d = scorer.model.dim;
    let mut s = Stats::zeros(k, d);
    let mut logs = vec![0.0; k];
    for (r, x) in data.chunks_exact(d).enumerate() {
        scorer.component_logs(x, &mut logs);
        let lse = log_sum_exp(&logs);
        s.loglik += lse;
        for c in 0..k {
            let g = (logs[c] - lse).exp();
            if g > s.best[c].0 {
                s.best[c] = (g, first_row + r);
            }
            if g == 0.0 {
                continue;
            }
            s.occupancy[c] += g;
            let (m1, m2) = (&mut s.first[c * d..(c + 1) * d], &mut s.second[c * d..(c + 1) * d]);
            for f in 0..d {
                m1[f] += g * x[f];
                m2[f] += g * x[f] * x[f];
            }
        }
    }
    s
}

/// Fixed block layout so the reduction order never depends on thread count.
fn blocks(rows: usize) -> usize {
    rows.div_ceil(BLOCK_ROWS).clamp(1, MAX_BLOCKS)
}

fn e_step(scorer: &Scorer<'_>, data: &[f64], rows: usize) -> Stats {
    let d = scorer.model.dim;
    let nb = blocks(rows);
    let per = rows.div_ceil(nb);
    let partials: Vec<Stats> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let lo = (b * per).min(rows);
            let hi = ((b + 1) * per).min(rows);
            e_step_block(scorer, &data[lo * d..hi * d], lo)
        })
        .collect();
    let mut total = Stats::zeros(scorer.model.components(), d);
    for p in &partials {
        total.absorb(p);
    }
    total
}

fn global_moments(data: &[f64], rows: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for x in data.chunks_exact(d) {
        for f in 0..d {
            mean[f] += x[f];
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; d];
    for x in data.chunks_exact(d) {
        for f in 0..d {
            let diff = x[f] - mean[f];
            var[f] += diff * diff;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    (mean, var)
}

/// k-means++ seeding: first center uniform, then proportional to squared distance.
fn seed_centers(data: &[f64], rows: usize, d: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut centers = vec![rng.gen_range(0..rows)];
    let dist2 = |a: usize, b: usize| -> f64 {
        data[a * d..(a + 1) * d]
            .iter()
            .zip(&data[b * d..(b + 1) * d])
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let mut nearest: Vec<f64> = (0..rows).map(|r| dist2(r, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = rows - 1;
            for (r, &w) in nearest.iter().enumerate() {
                if u < w {
                    chosen = r;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..rows)
        };
        centers.push(pick);
        for (r, n) in nearest.iter_mut().enumerate() {
            *n = n.min(dist2(r, pick));
        }
    }
    centers
}

pub fn train_gmm(features: &FeatureMatrix, cfg: &GmmConfig) -> Result<GmmModel> {
    train_gmm_with_report(features, cfg, Provenance::Original).map(|(m, _)| m)
}

/// EM training from a seeded k-means++ start.
///
/// Every component starts with the global variance and weight `1/K`. Each
/// M-step floors variances at `var_floor_ratio` times the global variance.
/// A component whose occupancy collapses is re-seeded on the row it was most
/// responsible for.
pub fn train_gmm_with_report(
    features: &FeatureMatrix,
    cfg: &GmmConfig,
    provenance: Provenance,
) -> Result<(GmmModel, TrainReport)> {
    let rows = features.rows();
    let d = features.cols();
    let k = cfg.components;
    if k == 0 {
        return Err(Error::Input("component count must be at least 1".into()));
    }
    if rows < k {
        return Err(Error::Input(format!("{rows} frames cannot train {k} components")));
    }
    if cfg.max_iters == 0 {
        return Err(Error::Config("EM needs at least one iteration".into()));
    }
    if d == 0 {
        return Err(Error::Input("features have zero width".into()));
    }
    let data = rows_f64(features);
    let (_, global_var) = global_moments(&data, rows, d);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (cfg.var_floor_ratio * v).max(MIN_VARIANCE))
        .collect();

    let centers = seed_centers(&data, rows, d, k, cfg.seed);
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: centers
            .iter()
            .flat_map(|&c| data[c * d..(c + 1) * d].iter().copied())
            .collect(),
        variances: (0..k)
            .flat_map(|_| global_var.iter().zip(&floor).map(|(v, f)| v.max(*f)))
            .collect(),
        dim: d,
        provenance,
        fingerprint: features.fingerprint().to_string(),
    };

    let mut report = TrainReport::default();
    for _ in 0..cfg.max_iters {
        let stats = e_step(&model.scorer(), &data, rows);
        let prev = report.loglik_trace.last().copied();
        report.loglik_trace.push(stats.loglik);

        for c in 0..k {
            let occ = stats.occupancy[c];
            if occ < EMPTY_COMPONENT_MASS {
                let (_, row) = stats.best[c];
                let row = if row == usize::MAX { 0 } else { row };
                log::warn!("GMM component {c} emptied; re-seeding from frame {row}");
                report.reseeded += 1;
                model.means[c * d..(c + 1) * d].copy_from_slice(&data[row * d..(row + 1) * d]);
                for f in 0..d {
                    model.variances[c * d + f] = global_var[f].max(floor[f]);
                }
                model.weights[c] = 1.0 / rows as f64;
                continue;
            }
            model.weights[c] = occ / rows as f64;
            for f in 0..d {
                let mu = stats.first[c * d + f] / occ;
                let var = stats.second[c * d + f] / occ - mu * mu;
                model.means[c * d + f] = mu;
                model.variances[c * d + f] = var.max(floor[f]);
            }
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);

        if let Some(p) = prev {
            if (stats.loglik - p) / p.abs().max(f64::MIN_POSITIVE) < cfg.rel_tol {
                break;
            }
        }
    }
    Ok((model, report))
}
