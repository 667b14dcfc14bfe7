//! Dataset manifests and run configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::classifier::Label;
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::pmf::csv_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    Train,
    Test,
}

impl Subset {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Subset::Train),
            "test" => Ok(Subset::Test),
            other => Err(Error::Input(format!("unknown subset `{other}`, expected train or test"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest; doubles as the trial id.
    pub id: String,
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub subset: Subset,
}

/// Audio list plus the subsets whose genuine files define each side's PMF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub attacker_pmf_source: Subset,
    pub cm_pmf_source: Subset,
}

impl DatasetManifest {
    /// Parses a `path,label,subset` CSV. Relative paths resolve against the
    /// CSV's own directory.
    pub fn from_csv(path: impl AsRef<Path>, attacker_pmf_source: Subset, cm_pmf_source: Subset) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["path", "label", "subset"] {
            return Err(Error::parse(path, "expected header `path,label,subset`"));
        }
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let row = i + 2;
            let field = |n: usize| {
                rec.get(n)
                    .map(str::trim)
                    .ok_or_else(|| Error::parse(path, format!("row {row} is missing a column")))
            };
            let id = field(0)?.to_string();
            let label = Label::parse(field(1)?).map_err(|e| Error::parse(path, format!("row {row}: {e}")))?;
            let subset = Subset::parse(field(2)?).map_err(|e| Error::parse(path, format!("row {row}: {e}")))?;
            entries.push(ManifestEntry {
                path: base.join(&id),
                id,
                label,
                subset,
            });
        }
        let m = Self {
            entries,
            attacker_pmf_source,
            cm_pmf_source,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for subset in [Subset::Train, Subset::Test] {
            for label in [Label::Genuine, Label::Spoof] {
                if !self.entries.iter().any(|e| e.subset == subset && e.label == label) {
                    return Err(Error::Input(format!("manifest has no {label} files in {subset}")));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(Error::Input(format!("manifest lists {} twice", e.id)));
            }
            if !e.path.is_file() {
                return Err(Error::io(
                    &e.path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                ));
            }
        }
        Ok(())
    }

    pub fn select(&self, subset: Subset, label: Label) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.subset == subset && e.label == label)
    }
}

fn default_attacker_source() -> String {
    "test".into()
}
fn default_cm_source() -> String {
    "train".into()
}
fn default_features() -> Vec<String> {
    vec!["lfcc".into()]
}
fn default_components() -> usize {
    512
}
fn default_em_iters() -> usize {
    10
}
fn default_rel_tol() -> f64 {
    1e-5
}
fn default_var_floor() -> f64 {
    1e-4
}
fn default_d_bits() -> u32 {
    5
}
fn default_true() -> bool {
    true
}

/// Run settings, read from a small TOML file next to the manifest.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Subset whose genuine files define the attacker's target PMF.
    #[serde(default = "default_attacker_source")]
    pub attacker_pmf_source: String,
    /// Subset whose genuine files define the countermeasure's target PMF.
    #[serde(default = "default_cm_source")]
    pub cm_pmf_source: String,
    #[serde(default = "default_features")]
    pub features: Vec<String>,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_em_iters")]
    pub em_iters: usize,
    #[serde(default = "default_rel_tol")]
    pub em_rel_tol: f64,
    #[serde(default = "default_var_floor")]
    pub var_floor_ratio: f64,
    #[serde(default = "default_d_bits")]
    pub d_bits: u32,
    /// Run-level seed; the CLI requires it on the command line.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads, 0 for one per core.
    #[serde(default)]
    pub workers: usize,
    /// Write measured wall-clock seconds; when off the column holds 0.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.attacker_source()?;
        self.cm_source()?;
        self.feature_kinds()?;
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        if self.em_iters == 0 {
            return Err(Error::Config("em_iters must be at least 1".into()));
        }
        if self.d_bits > 10 {
            return Err(Error::Config(format!("d_bits {} exceeds the extended-CDF cap", self.d_bits)));
        }
        Ok(())
    }

    pub fn attacker_source(&self) -> Result<Subset> {
        Subset::parse(&self.attacker_pmf_source).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn cm_source(&self) -> Result<Subset> {
        Subset::parse(&self.cm_pmf_source).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn feature_kinds(&self) -> Result<Vec<FeatureKind>> {
        if self.features.is_empty() {
            return Err(Error::Config("no feature extractor configured".into()));
        }
        self.features.iter().map(|f| FeatureKind::parse(f)).collect()
    }

    /// Canonical text of every field that affects results.
    pub fn result_key(&self) -> String {
        format!(
            "atk={};cm={};K={};iters={};tol={:e};floor={:e};d={};seed={}",
            self.attacker_pmf_source,
            self.cm_pmf_source,
            self.components,
            self.em_iters,
            self.em_rel_tol,
            self.var_floor_ratio,
            self.d_bits,
            self.seed
        )
    }
}
