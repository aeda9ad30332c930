//! Two-crystal SPDC source: per-pulse pair numbers and the corresponding
//! polarization-entangled Fock states.
//!
//! Crystal 1 feeds paths 1 and 2, crystal 2 feeds paths 3 and 4. One pair is
//! `(|H⟩|H⟩ + |V⟩|V⟩)/√2`; `k` pairs from one crystal are built by applying
//! the pair-creation operator `k` times, which yields the bosonic `√n`
//! factors of multi-pair terms.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::polarization::{Occupation, PhotonState, Polarization, SpatialPath};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStatistics {
    /// Multimode limit, `P(k) = e^{−μ} μᵏ / k!`.
    Poisson,
    /// Single-mode limit, `P(k) = μᵏ / (1 + μ)^{k+1}`.
    Thermal,
    /// At most one pair, emitted with probability `μ`.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Mean pairs per pulse and crystal.
    pub mu: f64,
    #[serde(default = "default_statistics")]
    pub pair_statistics: PairStatistics,
    /// Phenomenological indistinguishability of photons 2 and 3.
    #[serde(default = "default_coherence")]
    pub coherence: f64,
    /// Largest total number of pairs simulated per pulse.
    #[serde(default = "default_n_max")]
    pub n_max: u32,
}

fn default_statistics() -> PairStatistics {
    PairStatistics::Poisson
}

fn default_coherence() -> f64 {
    1.0
}

fn default_n_max() -> u32 {
    2
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            mu: 0.1,
            pair_statistics: default_statistics(),
            coherence: default_coherence(),
            n_max: default_n_max(),
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::param("mu", "must be finite and non-negative"));
        }
        if self.pair_statistics == PairStatistics::Single && self.mu > 1.0 {
            return Err(Error::param("mu", "single-pair probability must be ≤ 1"));
        }
        if !(0.0..=1.0).contains(&self.coherence) {
            return Err(Error::param("coherence", "must lie in [0, 1]"));
        }
        if self.n_max == 0 {
            return Err(Error::param("n_max", "must be ≥ 1"));
        }
        Ok(())
    }

    /// Probability of `k` pairs from one crystal.
    pub fn pmf(&self, k: u32) -> f64 {
        let mu = self.mu;
        match self.pair_statistics {
            PairStatistics::Poisson => {
                let log = -mu + k as f64 * mu.ln() - ln_factorial(k);
                if mu == 0.0 {
                    (k == 0) as u8 as f64
                } else {
                    log.exp()
                }
            }
            PairStatistics::Thermal => mu.powi(k as i32) / (1.0 + mu).powi(k as i32 + 1),
            PairStatistics::Single => match k {
                0 => 1.0 - mu,
                1 => mu,
                _ => 0.0,
            },
        }
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = 0;
        loop {
            acc += self.pmf(k);
            if u < acc || k >= 1000 {
                return k;
            }
            k += 1;
        }
    }
}

fn ln_factorial(k: u32) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// Pair counts from the two crystals in one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PulseEmission {
    pub k1: u32,
    pub k2: u32,
}

impl PulseEmission {
    pub fn total(&self) -> u32 {
        self.k1 + self.k2
    }

    pub fn is_vacuum(&self) -> bool {
        self.total() == 0
    }
}

/// One pulse's draw; `truncated` flags emissions above `n_max` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub emission: PulseEmission,
    pub truncated: bool,
}

/// Draws independent pair numbers for both crystals.
pub fn sample_pairs<R: Rng + ?Sized>(params: &SourceParams, rng: &mut R) -> PairSample {
    let emission = PulseEmission {
        k1: params.sample_one(rng),
        k2: params.sample_one(rng),
    };
    PairSample {
        emission,
        truncated: emission.total() > params.n_max,
    }
}

fn add_pair(state: &PhotonState, a: SpatialPath, b: SpatialPath) -> Result<PhotonState> {
    let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut terms = Vec::with_capacity(state.len() * 2);
    for (occ, &c) in state.terms() {
        for pol in Polarization::ALL {
            let (ma, mb) = (a.mode(pol), b.mode(pol));
            let bosonic = ((occ.get(ma) as f64 + 1.0) * (occ.get(mb) as f64 + 1.0)).sqrt();
            terms.push((occ.plus(ma).plus(mb), c * amp * bosonic));
        }
    }
    PhotonState::from_terms(terms, state.n_max())
}

/// Normalized state of `k1` pairs on paths (1, 2) and `k2` pairs on (3, 4).
pub fn build_emission_state(e: PulseEmission, n_max_photons: usize) -> Result<PhotonState> {
    let photons = 2 * e.total() as usize;
    if photons > n_max_photons {
        return Err(Error::Truncation {
            count: photons,
            n_max: n_max_photons,
        });
    }
    let mut state = PhotonState::from_terms(
        [(Occupation::vacuum(), Complex64::new(1.0, 0.0))],
        n_max_photons,
    )?;
    for _ in 0..e.k1 {
        state = add_pair(&state, SpatialPath::P1, SpatialPath::P2)?;
    }
    for _ in 0..e.k2 {
        state = add_pair(&state, SpatialPath::P3, SpatialPath::P4)?;
    }
    state.normalized()
}
