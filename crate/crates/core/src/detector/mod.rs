//! Gated single-photon detector modelled as a stochastic click machine.
//!
//! Each gate of a [`GateClock`] is a Bernoulli trial combining photon-induced
//! avalanches (PDE), thermal dark counts (DCR) and afterpulses released from
//! earlier avalanches. Free-running SPCMs use the same machine with one gate
//! per laser pulse.

mod sim;
pub mod table;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use sim::{run_stream, CauseTally, DetectorSim};

use crate::{Error, Result};

/// Detector label D1..D6 (or any positive index for standalone runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectorId(u8);

impl DetectorId {
    pub fn new(n: u8) -> Self {
        assert!(n > 0, "detector ids start at 1");
        DetectorId(n)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all6() -> [DetectorId; 6] {
        [1, 2, 3, 4, 5, 6].map(DetectorId)
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Photon,
    Dark,
    Afterpulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionEvent {
    pub detector: DetectorId,
    pub gate: u64,
    pub cause: Cause,
}

/// Photons reaching a detector in one gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arrival {
    pub gate: u64,
    pub photons: u32,
}

/// Gate clock derived from the laser synchronization signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateClock {
    pub input_freq_hz: f64,
    pub multiplier: u32,
    /// Gate delay as a fraction of the gate period, in `[0, 1)`.
    #[serde(default)]
    pub delay_phase: f64,
}

impl GateClock {
    pub const LASER_HZ: f64 = 76e6;

    /// 76 MHz sync doubled to 152 MHz sine gates.
    pub fn swg() -> Self {
        GateClock {
            input_freq_hz: Self::LASER_HZ,
            multiplier: 2,
            delay_phase: 0.0,
        }
    }

    /// One gate per laser pulse.
    pub fn spcm() -> Self {
        GateClock {
            input_freq_hz: Self::LASER_HZ,
            multiplier: 1,
            delay_phase: 0.0,
        }
    }

    pub fn gate_freq_hz(&self) -> f64 {
        self.input_freq_hz * self.multiplier as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_freq_hz > 0.0 && self.input_freq_hz.is_finite()) || self.multiplier == 0 {
            return Err(Error::param("clock", "gate frequency must be positive"));
        }
        if !(0.0..1.0).contains(&self.delay_phase) {
            return Err(Error::param("delay_phase", format!("{} not in [0, 1)", self.delay_phase)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub label: String,
    pub pde: f64,
    pub dcr_cps: f64,
    pub p_ap: f64,
    /// Mean of the geometric afterpulse delay, in gates (≥ 1).
    #[serde(default = "default_ap_decay")]
    pub ap_decay_gates: f64,
    /// Gates blanked after every click.
    #[serde(default)]
    pub dead_gates: u32,
    /// Timing jitter, carried for reporting only.
    #[serde(default)]
    pub jitter_sigma: Option<f64>,
}

pub(crate) fn default_ap_decay() -> f64 {
    2.0
}

impl DetectorParams {
    /// A noiseless detector with the given efficiency.
    pub fn ideal(label: impl Into<String>, pde: f64) -> Self {
        DetectorParams {
            label: label.into(),
            pde,
            dcr_cps: 0.0,
            p_ap: 0.0,
            ap_decay_gates: default_ap_decay(),
            dead_gates: 0,
            jitter_sigma: None,
        }
    }

    pub fn validate(&self, clock: &GateClock) -> Result<()> {
        clock.validate()?;
        if !(0.0..=1.0).contains(&self.pde) {
            return Err(Error::param("pde", format!("{} not in [0, 1]", self.pde)));
        }
        if !(0.0..1.0).contains(&self.p_ap) {
            return Err(Error::param("p_ap", format!("{} not in [0, 1)", self.p_ap)));
        }
        if !(self.ap_decay_gates >= 1.0 && self.ap_decay_gates.is_finite()) {
            return Err(Error::param("ap_decay_gates", "mean afterpulse delay must be ≥ 1 gate"));
        }
        if let Some(j) = self.jitter_sigma {
            if !(j >= 0.0) {
                return Err(Error::param("jitter_sigma", "must be non-negative"));
            }
        }
        dark_prob_per_gate(self, clock).map(|_| ())
    }
}

/// Dark-count probability per gate, `dcr / f_gate`.
pub fn dark_prob_per_gate(p: &DetectorParams, c: &GateClock) -> Result<f64> {
    let f = c.gate_freq_hz();
    if !(p.dcr_cps >= 0.0) {
        return Err(Error::param("dcr_cps", "must be non-negative"));
    }
    if p.dcr_cps >= f {
        return Err(Error::param(
            "dcr_cps",
            format!("dark rate {} cps is not below the gate frequency {f} Hz", p.dcr_cps),
        ));
    }
    Ok(p.dcr_cps / f)
}

/// Probability that at least one of `m` photons triggers an avalanche.
pub fn photon_click_probability(m: u32, pde: f64) -> f64 {
    1.0 - (1.0 - pde).powi(m as i32)
}

/// Click probability for a gate holding `m` photons, including dark counts.
pub fn click_probability(m: u32, p: &DetectorParams, c: &GateClock) -> Result<f64> {
    let dark = dark_prob_per_gate(p, c)?;
    let photon = photon_click_probability(m, p.pde);
    Ok(1.0 - (1.0 - photon) * (1.0 - dark))
}

/// Unit-peak gate sensitivity versus the arrival offset from the gate crest,
/// in fractions of a gate period.
///
/// Raised cosine over the open half-period: `½(1 + cos 4πx)` for `|x| ≤ ¼`,
/// zero otherwise, with `x` wrapped into `[−½, ½)`.
pub fn gate_sensitivity(offset: f64) -> f64 {
    let x = offset - offset.round();
    if x.abs() <= 0.25 {
        0.5 * (1.0 + (4.0 * std::f64::consts::PI * x).cos())
    } else {
        0.0
    }
}

/// PDE seen by photons arriving at `arrival_phase` of the gate period.
pub fn effective_pde(p: &DetectorParams, c: &GateClock, arrival_phase: f64) -> f64 {
    p.pde * gate_sensitivity(arrival_phase - c.delay_phase)
}

/// Events of one detector over gates `[0, n_gates)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub detector: DetectorId,
    pub clock: GateClock,
    pub n_gates: u64,
    pub events: Vec<DetectionEvent>,
}

impl EventStream {
    pub fn gates(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().map(|e| e.gate)
    }

    pub fn count(&self, cause: Cause) -> usize {
        self.events.iter().filter(|e| e.cause == cause).count()
    }
}
