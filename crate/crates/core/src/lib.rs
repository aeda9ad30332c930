//! Simulation and analysis toolkit for sine-wave-gated silicon single-photon
//! detectors in multiphoton entanglement experiments.
//!
//! The crate is organised bottom-up:
//!
//! - [`polarization`]: few-photon Fock states over (path, polarization) modes,
//!   Jones-calculus waveplates, PBS routing and ±-basis pattern probabilities.
//! - [`spdc`]: per-pulse pair sampling and two-crystal emission states.
//! - [`detector`]: the gated detector as a stochastic click machine, plus the
//!   bundled SPCM / SWG parameter table.
//! - [`coincidence`]: n-fold coincidence folds, GHZ ± pattern tallies,
//!   visibility and the `f·μⁿ·η²ⁿ` rate estimator.
//! - [`characterization`]: closed-loop PDE / DCR / afterpulse estimation.
//! - [`gatechain`]: sampled-waveform avalanche extraction chain.
//! - [`config`] and [`runner`]: configuration-driven scenarios with
//!   deterministic seeding and CSV / JSON output.

pub mod characterization;
pub mod coincidence;
pub mod config;
pub mod detector;
mod error;
pub mod gatechain;
pub mod polarization;
pub mod rng;
pub mod runner;
pub mod spdc;

pub use error::{Error, Result};
