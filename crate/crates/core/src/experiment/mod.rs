//! The attacker/countermeasure scenario matrix.
//!
//! Two GMMs (genuine, spoof) are trained on original or transformed training
//! audio. At test time the attacker may genuinize spoof files, then the
//! countermeasure may genuinize every file before scoring. Each combination
//! yields one EER.

mod manifest;
mod runner;
mod scenario;

pub use manifest::{DatasetManifest, ManifestEntry, RunConfig, Subset};
pub use runner::{
    apply_action, batch_genuinize, batch_output_path, model_seed, results_csv, run_fingerprint, run_matrix,
    run_scenario, side_seed, train_seed, write_results_csv, Experiment, LabeledWave, MatrixOptions, MatrixReport,
    ScenarioResult, Side, RESULTS_HEADER,
};
pub use scenario::{enumerate_scenarios, Action, ScenarioSpec, TRAIN_COMBOS};
