//! GMM countermeasure back-end: training, scoring and EER.

mod eer;
mod gmm;
mod io;

pub use eer::{compute_eer, crossing, operating_points, Label, OperatingPoint, ScoreSet, Trial};
pub use gmm::{
    gmm_loglik, score_trial, train_gmm, train_gmm_with_report, GmmConfig, GmmModel, Provenance,
    TrainReport, MIN_VARIANCE,
};
pub use io::{read_model, write_model};
