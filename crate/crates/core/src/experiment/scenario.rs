//! Scenario specs and the 45-per-feature matrix.

use std::fmt;

use crate::classifier::Provenance;
use crate::error::{Error, Result};
use crate::features::FeatureKind;

/// What one side does to its audio at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    None,
    Genuinize,
    Random,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::None, Action::Genuinize, Action::Random];

    pub fn letter(self) -> char {
        match self {
            Action::None => 'N',
            Action::Genuinize => 'G',
            Action::Random => 'R',
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "N" | "n" => Ok(Action::None),
            "G" | "g" => Ok(Action::Genuinize),
            "R" | "r" => Ok(Action::Random),
            other => Err(Error::Config(format!("unknown action `{other}`, expected N, G or R"))),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Allowed (genuine model, spoof model) training provenances, in report order.
pub const TRAIN_COMBOS: [(Provenance, Provenance); 5] = [
    (Provenance::Original, Provenance::Original),
    (Provenance::Original, Provenance::Genuinized),
    (Provenance::Genuinized, Provenance::Genuinized),
    (Provenance::Original, Provenance::Random),
    (Provenance::Random, Provenance::Random),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScenarioSpec {
    pub feature: FeatureKind,
    pub h_train: Provenance,
    pub s_train: Provenance,
    pub attacker: Action,
    pub cm: Action,
    pub d_bits: u32,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !TRAIN_COMBOS.contains(&(self.h_train, self.s_train)) {
            return Err(Error::Config(format!(
                "training combination ({},{}) is not part of the matrix",
                self.h_train, self.s_train
            )));
        }
        Ok(())
    }

    /// Position of the training combination in [`TRAIN_COMBOS`].
    pub fn combo_rank(&self) -> usize {
        TRAIN_COMBOS
            .iter()
            .position(|&c| c == (self.h_train, self.s_train))
            .unwrap_or(usize::MAX)
    }

    /// Report ordering: feature, training combination, attacker, countermeasure.
    pub fn sort_key(&self) -> (FeatureKind, usize, Action, Action) {
        (self.feature, self.combo_rank(), self.attacker, self.cm)
    }

    /// Canonical text, used for cache keys.
    pub fn key(&self) -> String {
        format!(
            "{}/{}{}/{}{}/d{}/s{}",
            self.feature, self.h_train, self.s_train, self.attacker, self.cm, self.d_bits, self.seed
        )
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({},{},{},{})",
            self.feature, self.h_train, self.s_train, self.attacker, self.cm
        )
    }
}

/// Every valid scenario for each feature, in report order.
pub fn enumerate_scenarios(features: &[FeatureKind], d_bits: u32, seed: u64) -> Vec<ScenarioSpec> {
    let mut out = Vec::with_capacity(features.len() * 45);
    for &feature in features {
        for (h_train, s_train) in TRAIN_COMBOS {
            for attacker in Action::ALL {
                for cm in Action::ALL {
                    out.push(ScenarioSpec {
                        feature,
                        h_train,
                        s_train,
                        attacker,
                        cm,
                        d_bits,
                        seed,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_shape() {
        let all = enumerate_scenarios(&[FeatureKind::Lfcc], 5, 1);
        assert_eq!(all.len(), 45);
        assert!(all.iter().all(|s| s.validate().is_ok()));
        let mut sorted = all.clone();
        sorted.sort_by_key(|s| s.sort_key());
        assert_eq!(sorted, all);
        for excluded in [
            (Provenance::Genuinized, Provenance::Original),
            (Provenance::Random, Provenance::Original),
            (Provenance::Genuinized, Provenance::Random),
            (Provenance::Random, Provenance::Genuinized),
        ] {
            assert!(!all.iter().any(|s| (s.h_train, s.s_train) == excluded));
            let bad = ScenarioSpec {
                h_train: excluded.0,
                s_train: excluded.1,
                ..all[0]
            };
            assert!(bad.validate().is_err());
        }
    }
}
