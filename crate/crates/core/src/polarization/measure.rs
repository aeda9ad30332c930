use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{hwp_matrix, qwp_matrix, JonesMatrix, Occupation, PhotonState, Polarization, SpatialPath};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    /// Row of the analyzer matrix selected by this outcome (+ ↔ H, − ↔ V).
    fn row(self) -> usize {
        match self {
            Sign::Plus => 0,
            Sign::Minus => 1,
        }
    }
}

/// Outcome signs, one per analyzed path, in analyzer order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignPattern(pub Vec<Sign>);

impl SignPattern {
    /// All `2^k` patterns, `+…+` first.
    pub fn all(k: usize) -> Vec<SignPattern> {
        (0..1usize << k)
            .map(|bits| {
                SignPattern(
                    (0..k)
                        .map(|i| {
                            if bits >> (k - 1 - i) & 1 == 1 {
                                Sign::Minus
                            } else {
                                Sign::Plus
                            }
                        })
                        .collect(),
                )
            })
            .collect()
    }

    pub fn minus_count(&self) -> usize {
        self.0.iter().filter(|&&s| s == Sign::Minus).count()
    }
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            f.write_str(match s {
                Sign::Plus => "+",
                Sign::Minus => "-",
            })?;
        }
        Ok(())
    }
}

impl FromStr for SignPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|ch| match ch {
                '+' => Ok(Sign::Plus),
                '-' | '−' => Ok(Sign::Minus),
                _ => Err(Error::param("pattern", format!("unexpected character {ch:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(SignPattern)
    }
}

/// Waveplate angles (radians) in front of one analyzer's PBS.
/// The QWP, when present, acts before the HWP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSetting {
    pub hwp: f64,
    #[serde(default)]
    pub qwp: Option<f64>,
}

impl WaveplateSetting {
    /// HWP at 22.5°, which sends |+⟩ to the transmitted port.
    pub fn pm_basis() -> Self {
        WaveplateSetting {
            hwp: std::f64::consts::FRAC_PI_8,
            qwp: None,
        }
    }

    pub fn matrix(&self) -> JonesMatrix {
        match self.qwp {
            Some(q) => hwp_matrix(self.hwp) * qwp_matrix(q),
            None => hwp_matrix(self.hwp),
        }
    }
}

/// Probability of each ± pattern on the analyzed paths.
///
/// Every term of `state` must hold exactly one photon on each analyzed path.
/// Photons elsewhere are traced out. The result mixes the coherent
/// prediction with the fully dephased one according to the state's
/// coherence factor.
pub fn pattern_probabilities(
    state: &PhotonState,
    settings: &[(SpatialPath, WaveplateSetting)],
) -> Result<BTreeMap<SignPattern, f64>> {
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized(norm));
    }
    let paths: Vec<SpatialPath> = settings.iter().map(|(p, _)| *p).collect();
    let matrices: Vec<JonesMatrix> = settings.iter().map(|(_, s)| s.matrix()).collect();

    // (rest-of-state occupation, input polarization per analyzed path, amplitude)
    let mut groups: BTreeMap<Occupation, Vec<(Vec<usize>, Complex64)>> = BTreeMap::new();
    for (occ, &amp) in state.terms() {
        let mut pols = Vec::with_capacity(paths.len());
        for &p in &paths {
            if occ.in_path(p) != 1 {
                return Err(Error::param(
                    "state",
                    format!("term {occ:?} does not hold exactly one photon on path {p}"),
                ));
            }
            let pol = if occ.get(p.mode(Polarization::H)) == 1 {
                Polarization::H
            } else {
                Polarization::V
            };
            pols.push(pol.index());
        }
        groups
            .entry(occ.without_paths(&paths))
            .or_default()
            .push((pols, amp));
    }

    let v = state.coherence();
    let mut out = BTreeMap::new();
    for pattern in SignPattern::all(paths.len()) {
        let mut coherent = 0.0;
        let mut dephased = 0.0;
        for members in groups.values() {
            let mut sum = Complex64::new(0.0, 0.0);
            for (pols, amp) in members {
                let mut a = *amp;
                for (k, &col) in pols.iter().enumerate() {
                    a *= matrices[k].get(pattern.0[k].row(), col);
                }
                sum += a;
                dephased += a.norm_sqr();
            }
            coherent += sum.norm_sqr();
        }
        out.insert(pattern, v * coherent + (1.0 - v) * dephased);
    }
    Ok(out)
}

/// Distribution conditioned on fixed outcomes at the given positions,
/// renormalized over the surviving patterns.
pub fn conditional(
    probs: &BTreeMap<SignPattern, f64>,
    fixed: &[(usize, Sign)],
) -> Result<BTreeMap<SignPattern, f64>> {
    let kept: BTreeMap<_, _> = probs
        .iter()
        .filter(|(pat, _)| fixed.iter().all(|&(i, s)| pat.0.get(i) == Some(&s)))
        .map(|(p, &w)| (p.clone(), w))
        .collect();
    let total: f64 = kept.values().sum();
    if total <= 0.0 {
        return Err(Error::ZeroProbability);
    }
    Ok(kept.into_iter().map(|(p, w)| (p, w / total)).collect())
}

/// Four-photon visibility with photons 1 and 4 fixed at `+`:
/// `(P(++++) + P(+--+) − P(+-++) − P(++-+)) / (sum of all four)`.
pub fn conditional_visibility(probs: &BTreeMap<SignPattern, f64>) -> Result<f64> {
    let get = |s: &str| probs.get(&s.parse::<SignPattern>().unwrap()).copied().unwrap_or(0.0);
    let sig = get("++++") + get("+--+");
    let noise = get("+-++") + get("++-+");
    if sig + noise <= 0.0 {
        return Err(Error::Undefined("visibility of zero total probability"));
    }
    Ok((sig - noise) / (sig + noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::Analyzer;

    #[test]
    fn single_photon_h_in_pm_basis_is_plus() {
        let s = PhotonState::single(SpatialPath::P1, Polarization::H);
        let pr = pattern_probabilities(&s, &[(SpatialPath::P1, WaveplateSetting::pm_basis())]).unwrap();
        assert!((pr[&"+".parse().unwrap()] - 0.5).abs() < 1e-12);
        // |H⟩ = (|+⟩ + |−⟩)/√2, so the HWP at 22.5° is needed to *measure* ±;
        // a |+⟩ input is what lands deterministically on +.
        let plus = s
            .apply_element(SpatialPath::P1, &hwp_matrix(std::f64::consts::FRAC_PI_8))
            .unwrap();
        let pr = pattern_probabilities(&plus, &[(SpatialPath::P1, WaveplateSetting::pm_basis())]).unwrap();
        assert!((pr[&"+".parse().unwrap()] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hv_basis_setting_reads_h_as_plus() {
        let s = PhotonState::single(SpatialPath::P1, Polarization::H);
        let hv = WaveplateSetting { hwp: 0.0, qwp: None };
        let pr = pattern_probabilities(&s, &[(SpatialPath::P1, hv)]).unwrap();
        assert!((pr[&"+".parse().unwrap()] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let s = PhotonState::from_terms(
            [(Occupation::from_modes(&[(SpatialPath::P1.mode(Polarization::H), 1)]), Complex64::new(2.0, 0.0))],
            4,
        )
        .unwrap();
        let r = pattern_probabilities(&s, &[(SpatialPath::P1, WaveplateSetting::pm_basis())]);
        assert!(matches!(r, Err(Error::Unnormalized(_))));
    }

    #[test]
    fn pattern_strings_round_trip() {
        for p in SignPattern::all(4) {
            assert_eq!(p.to_string().parse::<SignPattern>().unwrap(), p);
        }
        assert_eq!(SignPattern::all(2).len(), 4);
        assert!("+x".parse::<SignPattern>().is_err());
    }

    #[test]
    fn analyzer_ports_match_pattern_probabilities() {
        // |+⟩ on path 2' analyzed at 22.5° exits the transmitted port
        let s = PhotonState::single(SpatialPath::P2Prime, Polarization::H)
            .apply_element(SpatialPath::P2Prime, &hwp_matrix(std::f64::consts::FRAC_PI_8))
            .unwrap();
        let out = s.analyze(Analyzer::A2, &WaveplateSetting::pm_basis()).unwrap();
        let t = SpatialPath::Out(Analyzer::A2, super::super::Port::Transmit);
        let (occ, a) = out.terms().next().unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(occ.in_path(t), 1);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }
}
