//! Equal error rate from genuine/spoof trial scores.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pmf::csv_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Genuine,
    Spoof,
}

impl Label {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "genuine" | "bonafide" | "bona-fide" | "human" => Ok(Label::Genuine),
            "spoof" | "spoofed" => Ok(Label::Spoof),
            other => Err(Error::Input(format!("unknown label `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: String,
    pub label: Label,
    /// Higher means more genuine.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub trials: Vec<Trial>,
}

impl ScoreSet {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self { trials }
    }

    pub fn push(&mut self, id: impl Into<String>, label: Label, score: f64) {
        self.trials.push(Trial {
            id: id.into(),
            label,
            score,
        });
    }

    pub fn count(&self, label: Label) -> usize {
        self.trials.iter().filter(|t| t.label == label).count()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["file_id", "label", "score"])
            .map_err(|e| csv_error(path, e))?;
        for t in &self.trials {
            w.write_record([t.id.as_str(), t.label.as_str(), &t.score.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut trials = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let bad = || Error::parse(path, format!("malformed row {}", i + 2));
            let id = rec.get(0).ok_or_else(bad)?.to_string();
            let label = Label::parse(rec.get(1).ok_or_else(bad)?)
                .map_err(|e| Error::parse(path, e.to_string()))?;
            let score: f64 = rec.get(2).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            trials.push(Trial { id, label, score });
        }
        Ok(Self { trials })
    }
}

/// One point of the detection trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Spoof trials scoring at or above the threshold.
    pub false_accept: f64,
    /// Genuine trials scoring below the threshold.
    pub false_reject: f64,
}

/// Where false rejection first meets or overtakes false acceptance.
///
/// `points` must be ordered by increasing threshold. Between the last point
/// with `FR < FA` and the first with `FR >= FA` the crossing is found by linear
/// interpolation.
pub fn crossing(points: &[OperatingPoint]) -> f64 {
    let gap = |p: &OperatingPoint| p.false_reject - p.false_accept;
    let i = points
        .iter()
        .position(|p| gap(p) >= 0.0)
        .expect("the last operating point always has FR >= FA");
    let hi = points[i];
    if gap(&hi) == 0.0 || i == 0 {
        return hi.false_reject;
    }
    let lo = points[i - 1];
    let t = -gap(&lo) / (gap(&hi) - gap(&lo));
    lo.false_accept + t * (hi.false_accept - lo.false_accept)
}

fn split(scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut genuine = Vec::new();
    let mut spoof = Vec::new();
    for t in &scores.trials {
        if !t.score.is_finite() {
            return Err(Error::Input(format!("trial {} has non-finite score", t.id)));
        }
        match t.label {
            Label::Genuine => genuine.push(t.score),
            Label::Spoof => spoof.push(t.score),
        }
    }
    if genuine.is_empty() || spoof.is_empty() {
        return Err(Error::Input(
            "EER needs at least one genuine and one spoof trial".into(),
        ));
    }
    Ok((genuine, spoof))
}

/// Operating points at every threshold that changes a decision: below all
/// scores, then just above each distinct score.
pub fn operating_points(scores: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    let (mut genuine, mut spoof) = split(scores)?;
    genuine.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    let (ng, ns) = (genuine.len(), spoof.len());

    let mut points = vec![OperatingPoint {
        false_accept: 1.0,
        false_reject: 0.0,
    }];
    let (mut gi, mut si) = (0, 0);
    while gi < ng || si < ns {
        let next = match (genuine.get(gi), spoof.get(si)) {
            (Some(&g), Some(&s)) => g.min(s),
            (Some(&g), None) => g,
            (None, Some(&s)) => s,
            (None, None) => unreachable!(),
        };
        while gi < ng && genuine[gi] <= next {
            gi += 1;
        }
        while si < ns && spoof[si] <= next {
            si += 1;
        }
        points.push(OperatingPoint {
            false_accept: (ns - si) as f64 / ns as f64,
            false_reject: gi as f64 / ng as f64,
        });
    }
    Ok(points)
}

/// Equal error rate in percent.
///
/// Identical scores across both classes give 50%; perfectly separated
/// classes give 0%.
pub fn compute_eer(scores: &ScoreSet) -> Result<f64> {
    Ok(100.0 * crossing(&operating_points(scores)?))
}
