//! `2n`-fold coincidence rates from `n` independent single-pair sources
//! against the closed form `f·μⁿ·η²ⁿ`.

use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::Serialize;

use super::ghz::merge_sorted;
use crate::coincidence::{eq1_estimate, Eq1Params, WindowFolder};
use crate::detector::{Arrival, DetectionEvent, DetectorId, DetectorParams, DetectorSim, GateClock};
use crate::rng::{Domain, StreamKey, BLOCK};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub n: u32,
    pub mu: f64,
    pub eta: f64,
    pub pulses: u64,
    pub counts: u64,
    pub expected: f64,
    /// Measured rate (counts/s) and its Poisson error.
    pub rate: f64,
    pub rate_se: f64,
    pub analytic_rate: f64,
    pub z: f64,
}

/// Pulses needed for `target` expected coincidences, capped at `max_pulses`.
pub fn pulses_for(p: &Eq1Params, target: f64, max_pulses: u64) -> u64 {
    let per_pulse = eq1_estimate(p) / p.f;
    if per_pulse <= 0.0 {
        return max_pulses;
    }
    ((target / per_pulse).ceil() as u64).clamp(1, max_pulses)
}

/// Simulates `pulses` pulses of `n` sources emitting one pair with
/// probability `μ`, each photon on its own noiseless detector of
/// efficiency `η`, and counts pulses where all `2n` detectors click.
pub fn simulate_scaling(p: &Eq1Params, pulses: u64, key: StreamKey) -> Result<ScalingPoint> {
    p.validate()?;
    if p.n > 32 {
        return Err(Error::param("n", "at most 32 sources"));
    }
    let clock = GateClock {
        input_freq_hz: p.f,
        multiplier: 1,
        delay_phase: 0.0,
    };
    let n_det = 2 * p.n as usize;
    let mut sims: Vec<DetectorSim> = (0..n_det)
        .map(|i| {
            let id = DetectorId::new(i as u8 + 1);
            DetectorSim::new(id, DetectorParams::ideal(id.to_string(), p.eta), clock, key.derive(Domain::PhotonClick, i as u64 + 1))
        })
        .collect::<Result<_>>()?;
    let all: Vec<DetectorId> = (1..=n_det as u8).map(DetectorId::new).collect();
    let gap = (p.mu > 0.0 && p.mu < 1.0).then(|| Geometric::new(p.mu).expect("probability in (0, 1)"));

    let chunk = 64 * BLOCK;
    let mut folder = WindowFolder::new(0);
    let mut counts = 0u64;
    let mut start = 0;
    while start < pulses {
        let end = (start + chunk).min(pulses);
        // per source: emitting pulses in [start, end)
        let per_source: Vec<Vec<u64>> = (0..p.n as u64)
            .into_par_iter()
            .map(|s| {
                let key = key.derive(Domain::Emission, s);
                let mut out = Vec::new();
                if p.mu == 0.0 {
                    return out;
                }
                for b in start / BLOCK..end.div_ceil(BLOCK) {
                    let (lo, hi) = (b * BLOCK, ((b + 1) * BLOCK).min(end));
                    let mut rng = key.block(b);
                    let mut pulse = lo;
                    loop {
                        let skip = gap.as_ref().map_or(0, |g| g.sample(&mut rng));
                        pulse = match pulse.checked_add(skip) {
                            Some(q) if q < hi => q,
                            _ => break,
                        };
                        out.push(pulse);
                        pulse += 1;
                    }
                }
                out
            })
            .collect();
        let events: Vec<Vec<DetectionEvent>> = sims
            .par_iter_mut()
            .enumerate()
            .map(|(d, sim)| {
                let arrivals: Vec<Arrival> = per_source[d / 2]
                    .iter()
                    .map(|&gate| Arrival { gate, photons: 1 })
                    .collect();
                sim.advance(&arrivals, end)
            })
            .collect::<Result<_>>()?;
        folder.push(&merge_sorted(&events), |w| {
            if w.fired.contains_all(&all) {
                counts += 1;
            }
        })?;
        start = end;
    }
    folder.finish(|w| {
        if w.fired.contains_all(&all) {
            counts += 1;
        }
    });

    let analytic_rate = eq1_estimate(p);
    let expected = analytic_rate / p.f * pulses as f64;
    let duration = pulses as f64 / p.f;
    let z = if expected > 0.0 {
        (counts as f64 - expected) / expected.sqrt()
    } else if counts == 0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ScalingPoint {
        n: p.n,
        mu: p.mu,
        eta: p.eta,
        pulses,
        counts,
        expected,
        rate: counts as f64 / duration,
        rate_se: (counts as f64).sqrt() / duration,
        analytic_rate,
        z,
    })
}
