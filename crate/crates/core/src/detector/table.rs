//! Bundled SPCM and sine-wave-gated detector parameters for six SLiK diodes,
//! measured at 785 nm. Each diode was characterized first inside its
//! commercial SPCM, then remounted behind the sine-wave-gating electronics.

use serde::{Deserialize, Serialize};

use super::{default_ap_decay, DetectorParams, GateClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Spcm,
    Swg,
}

impl DetectorKind {
    pub fn clock(self) -> GateClock {
        match self {
            DetectorKind::Spcm => GateClock::spcm(),
            DetectorKind::Swg => GateClock::swg(),
        }
    }

    /// Dead gates after a click: none for sine gating (recovery within one
    /// gate), one 13 ns gate for the actively quenched SPCM.
    pub fn dead_gates(self) -> u32 {
        match self {
            DetectorKind::Spcm => 1,
            DetectorKind::Swg => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Spcm => "spcm",
            DetectorKind::Swg => "swg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spcm" => Some(DetectorKind::Spcm),
            "swg" => Some(DetectorKind::Swg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub pde: f64,
    pub dcr_cps: f64,
    pub p_ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub part_number: &'static str,
    pub spcm: Measured,
    pub swg: Measured,
    /// Reported relative PDE improvement, rounded to two digits.
    pub delta_eta: f64,
}

const fn m(pde: f64, dcr_cps: f64, p_ap: f64) -> Measured {
    Measured { pde, dcr_cps, p_ap }
}

pub const ROWS: [Row; 6] = [
    Row { part_number: "SPCM CD 3428 H 24276", spcm: m(0.694, 360.0, 0.005), swg: m(0.757, 410.0, 0.006), delta_eta: 0.09 },
    Row { part_number: "SPCM CD 3428 H 24421", spcm: m(0.718, 230.0, 0.026), swg: m(0.776, 206.0, 0.007), delta_eta: 0.08 },
    Row { part_number: "SPCM CD 3351 H 19730", spcm: m(0.666, 2091.0, 0.023), swg: m(0.697, 914.0, 0.037), delta_eta: 0.05 },
    Row { part_number: "SPCM-AQRH-13-FC 20800", spcm: m(0.678, 160.0, 0.013), swg: m(0.708, 68.0, 0.011), delta_eta: 0.04 },
    Row { part_number: "SPCM CD 3351 H 19695", spcm: m(0.681, 210.0, 0.022), swg: m(0.729, 126.0, 0.038), delta_eta: 0.07 },
    Row { part_number: "SPCM-AQRH-13-FC 15765", spcm: m(0.680, 3043.0, 0.017), swg: m(0.721, 1350.0, 0.015), delta_eta: 0.06 },
];

impl Row {
    pub fn measured(&self, kind: DetectorKind) -> Measured {
        match kind {
            DetectorKind::Spcm => self.spcm,
            DetectorKind::Swg => self.swg,
        }
    }

    /// Exact `PDE_swg / PDE_spcm`.
    pub fn pde_ratio(&self) -> f64 {
        self.swg.pde / self.spcm.pde
    }

    /// Short serial, e.g. `24276`.
    pub fn serial(&self) -> &'static str {
        self.part_number.rsplit(' ').next().unwrap_or(self.part_number)
    }
}

/// Parameters for table row `row` (1-based) in the given mode.
pub fn params(kind: DetectorKind, row: usize) -> Option<DetectorParams> {
    let r = ROWS.get(row.checked_sub(1)?)?;
    let meas = r.measured(kind);
    Some(DetectorParams {
        label: format!("{}-{}", kind.name(), r.serial()),
        pde: meas.pde,
        dcr_cps: meas.dcr_cps,
        p_ap: meas.p_ap,
        ap_decay_gates: default_ap_decay(),
        dead_gates: kind.dead_gates(),
        jitter_sigma: None,
    })
}

/// All six rows in one mode.
pub fn detector_set(kind: DetectorKind) -> Vec<DetectorParams> {
    (1..=ROWS.len()).filter_map(|r| params(kind, r)).collect()
}

/// The twelve named parameter sets, e.g. `swg-24276` or `spcm-15765`.
pub fn named_sets() -> Vec<(DetectorKind, DetectorParams)> {
    [DetectorKind::Spcm, DetectorKind::Swg]
        .into_iter()
        .flat_map(|k| detector_set(k).into_iter().map(move |p| (k, p)))
        .collect()
}

/// Looks up a set by name (`<kind>-<serial>` or `<kind>:<row>`).
pub fn lookup(name: &str) -> Option<(DetectorKind, DetectorParams)> {
    if let Some((kind, row)) = name.split_once(':') {
        let kind = DetectorKind::parse(kind)?;
        return params(kind, row.parse().ok()?).map(|p| (kind, p));
    }
    named_sets().into_iter().find(|(_, p)| p.label.eq_ignore_ascii_case(name))
}
