//! Amplitude-PMF genuinization of speech waveforms and a GMM spoofing
//! countermeasure to study it with.
//!
//! The pieces, bottom-up:
//!
//! * [`wav`]: PCM16 I/O on a 1-based amplitude index grid.
//! * [`pmf`]: PMF/CDF estimation, the extended CDF, TV distance, file formats.
//! * [`genuinize`]: basic, perturbed and random-reference genuinization.
//! * [`vad`]: relative-energy voice activity masks.
//! * [`features`]: LFCC extraction with deltas.
//! * [`classifier`]: diagonal GMMs, log-likelihood-ratio scoring, EER.
//! * [`experiment`]: the attacker/countermeasure scenario matrix.

pub mod classifier;
pub mod error;
pub mod experiment;
pub mod features;
pub mod genuinize;
mod numeric;
pub mod pmf;
pub mod seed;
pub mod synth;
pub mod vad;
pub mod wav;

pub use error::{Error, ErrorKind, Result};
