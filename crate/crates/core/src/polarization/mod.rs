//! Few-photon polarization states, Jones-calculus optics and ±-basis analysis.
//!
//! States live in a sparse Fock representation over `(SpatialPath,
//! Polarization)` modes. Optical elements act as linear transforms of the
//! creation operators, so multi-photon terms pick up the correct bosonic
//! factors.
//!
//! Path and port conventions for the four-photon fusion setup:
//!
//! ```text
//!  crystal 1 ──► paths 1, 2     crystal 2 ──► paths 3, 4
//!  PBS: H of 2 → 2', V of 2 → 3', H of 3 → 3', V of 3 → 2'
//!  analyzers A1..A4 on paths 1, 2', 3', 4; transmit = +, reflect = −
//!  D1 = A1⁺   D2 = A2⁺   D3 = A2⁻   D4 = A3⁻   D5 = A3⁺   D6 = A4⁺
//! ```
//!
//! The reflected ports of A1 and A4 carry no detector.

mod jones;
mod measure;
mod state;

use std::fmt;

pub use jones::{hwp_matrix, qwp_matrix, JonesMatrix};
pub use measure::{
    conditional, conditional_visibility, pattern_probabilities, Sign, SignPattern,
    WaveplateSetting,
};
pub use state::{Occupation, PhotonState};

use crate::detector::DetectorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub const ALL: [Polarization; 2] = [Polarization::H, Polarization::V];

    pub fn index(self) -> usize {
        match self {
            Polarization::H => 0,
            Polarization::V => 1,
        }
    }
}

/// Polarization analyzer (waveplates + PBS) placed on one of the four output paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Analyzer {
    A1,
    A2,
    A3,
    A4,
}

impl Analyzer {
    pub const ALL: [Analyzer; 4] = [Analyzer::A1, Analyzer::A2, Analyzer::A3, Analyzer::A4];

    /// The path feeding this analyzer.
    pub fn input(self) -> SpatialPath {
        match self {
            Analyzer::A1 => SpatialPath::P1,
            Analyzer::A2 => SpatialPath::P2Prime,
            Analyzer::A3 => SpatialPath::P3Prime,
            Analyzer::A4 => SpatialPath::P4,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Port {
    Transmit,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpatialPath {
    P1,
    P2,
    P3,
    P4,
    P2Prime,
    P3Prime,
    Out(Analyzer, Port),
}

pub const NUM_PATHS: usize = 14;
pub const NUM_MODES: usize = NUM_PATHS * 2;

impl SpatialPath {
    pub fn index(self) -> usize {
        match self {
            SpatialPath::P1 => 0,
            SpatialPath::P2 => 1,
            SpatialPath::P3 => 2,
            SpatialPath::P4 => 3,
            SpatialPath::P2Prime => 4,
            SpatialPath::P3Prime => 5,
            SpatialPath::Out(a, p) => 6 + 2 * a.index() + (p == Port::Reflect) as usize,
        }
    }

    pub fn from_index(i: usize) -> Option<SpatialPath> {
        Some(match i {
            0 => SpatialPath::P1,
            1 => SpatialPath::P2,
            2 => SpatialPath::P3,
            3 => SpatialPath::P4,
            4 => SpatialPath::P2Prime,
            5 => SpatialPath::P3Prime,
            6..=13 => {
                let a = Analyzer::ALL[(i - 6) / 2];
                let p = if (i - 6) % 2 == 0 { Port::Transmit } else { Port::Reflect };
                SpatialPath::Out(a, p)
            }
            _ => return None,
        })
    }

    pub fn all() -> impl Iterator<Item = SpatialPath> {
        (0..NUM_PATHS).filter_map(SpatialPath::from_index)
    }

    pub fn mode(self, pol: Polarization) -> Mode {
        Mode { path: self, pol }
    }
}

impl fmt::Display for SpatialPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialPath::P1 => f.write_str("1"),
            SpatialPath::P2 => f.write_str("2"),
            SpatialPath::P3 => f.write_str("3"),
            SpatialPath::P4 => f.write_str("4"),
            SpatialPath::P2Prime => f.write_str("2'"),
            SpatialPath::P3Prime => f.write_str("3'"),
            SpatialPath::Out(a, p) => {
                let port = match p {
                    Port::Transmit => "T",
                    Port::Reflect => "R",
                };
                write!(f, "{}{}", a.input(), port)
            }
        }
    }
}

/// A single bosonic mode: one spatial path, one polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mode {
    pub path: SpatialPath,
    pub pol: Polarization,
}

impl Mode {
    pub fn index(self) -> usize {
        self.path.index() * 2 + self.pol.index()
    }

    pub fn from_index(i: usize) -> Option<Mode> {
        let path = SpatialPath::from_index(i / 2)?;
        let pol = Polarization::ALL[i % 2];
        Some(Mode { path, pol })
    }
}

/// Analyzer output port observed by each detector, D1..D6.
pub fn detector_port(id: DetectorId) -> Option<(Analyzer, Port)> {
    use Analyzer::*;
    use Port::*;
    Some(match id.get() {
        1 => (A1, Transmit),
        2 => (A2, Transmit),
        3 => (A2, Reflect),
        4 => (A3, Reflect),
        5 => (A3, Transmit),
        6 => (A4, Transmit),
        _ => return None,
    })
}

/// Detector watching an analyzer port, if any.
pub fn port_detector(analyzer: Analyzer, port: Port) -> Option<DetectorId> {
    (1..=6)
        .map(DetectorId::new)
        .find(|&d| detector_port(d) == Some((analyzer, port)))
}

/// The fusing PBS: H of path 2 and V of path 3 leave on 2', the rest on 3'.
pub fn fuse(state: &PhotonState) -> crate::Result<PhotonState> {
    state.pbs_route(
        SpatialPath::P2,
        SpatialPath::P3,
        SpatialPath::P2Prime,
        SpatialPath::P3Prime,
    )
}

/// Paths holding photons 1..4 after fusion, in analyzer order.
pub const FUSED_PATHS: [SpatialPath; 4] = [
    SpatialPath::P1,
    SpatialPath::P2Prime,
    SpatialPath::P3Prime,
    SpatialPath::P4,
];
