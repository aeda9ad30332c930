use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use super::{
    dark_prob_per_gate, effective_pde, photon_click_probability, Arrival, Cause, DetectionEvent,
    DetectorId, DetectorParams, EventStream, GateClock,
};
use crate::rng::{Domain, StreamKey, BLOCK};
use crate::{Error, Result};

/// Event totals by cause, plus afterpulses lost to dead windows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CauseTally {
    pub photon: u64,
    pub dark: u64,
    pub afterpulse: u64,
    pub blanked_afterpulses: u64,
}

impl CauseTally {
    pub fn total(&self) -> u64 {
        self.photon + self.dark + self.afterpulse
    }

    fn record(&mut self, cause: Cause) {
        match cause {
            Cause::Photon => self.photon += 1,
            Cause::Dark => self.dark += 1,
            Cause::Afterpulse => self.afterpulse += 1,
        }
    }
}

const PHOTON: u8 = 1;
const DARK: u8 = 2;

/// Stateful detector that can be advanced chunk by chunk.
///
/// Random draws are keyed by gate block (see [`crate::rng`]); photon and dark
/// triggers are generated per block in parallel, then a sequential pass
/// applies dead windows and afterpulse scheduling. Pending afterpulses and
/// the current dead window carry over between calls, so any block-aligned
/// chunking of the gate axis yields the same event stream.
#[derive(Debug, Clone)]
pub struct DetectorSim {
    id: DetectorId,
    params: DetectorParams,
    clock: GateClock,
    pde: f64,
    p_dark: f64,
    ap_delay: Option<Geometric>,
    photon_key: StreamKey,
    dark_key: StreamKey,
    ap_key: StreamKey,
    cursor: u64,
    live_from: u64,
    pending: BinaryHeap<Reverse<u64>>,
    tally: CauseTally,
}

impl DetectorSim {
    /// `key` should already be specific to this detector and run.
    pub fn new(id: DetectorId, params: DetectorParams, clock: GateClock, key: StreamKey) -> Result<Self> {
        params.validate(&clock)?;
        let p_dark = dark_prob_per_gate(&params, &clock)?;
        // photons arrive on the pulse, i.e. at phase 0 of the gate period
        let pde = effective_pde(&params, &clock, 0.0);
        let ap_delay = if params.ap_decay_gates > 1.0 {
            Some(
                Geometric::new(1.0 / params.ap_decay_gates)
                    .map_err(|e| Error::param("ap_decay_gates", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(DetectorSim {
            id,
            params,
            clock,
            pde,
            p_dark,
            ap_delay,
            photon_key: key.derive(Domain::PhotonClick, 0),
            dark_key: key.derive(Domain::DarkCount, 0),
            ap_key: key.derive(Domain::Afterpulse, 0),
            cursor: 0,
            live_from: 0,
            pending: BinaryHeap::new(),
            tally: CauseTally::default(),
        })
    }

    pub fn id(&self) -> DetectorId {
        self.id
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn clock(&self) -> &GateClock {
        &self.clock
    }

    /// First gate not yet simulated.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn tally(&self) -> CauseTally {
        self.tally
    }

    /// Simulates gates `[cursor, end_gate)` and returns their events.
    ///
    /// `arrivals` must be sorted by gate and lie inside the range. Unless
    /// this is the final chunk, `end_gate` must be a multiple of
    /// [`BLOCK`]; a call starting off a block boundary is rejected.
    pub fn advance(&mut self, arrivals: &[Arrival], end_gate: u64) -> Result<Vec<DetectionEvent>> {
        if end_gate < self.cursor {
            return Err(Error::param("end_gate", "cannot move backwards"));
        }
        if end_gate == self.cursor {
            return Ok(Vec::new());
        }
        if self.cursor % BLOCK != 0 {
            return Err(Error::param(
                "chunk",
                "previous chunk ended off a block boundary; only the final chunk may",
            ));
        }
        if let (Some(first), Some(last)) = (arrivals.first(), arrivals.last()) {
            if first.gate < self.cursor || last.gate >= end_gate {
                return Err(Error::param("arrivals", "arrival outside the simulated gate range"));
            }
        }
        if arrivals.windows(2).any(|w| w[0].gate > w[1].gate) {
            return Err(Error::param("arrivals", "arrivals must be sorted by gate"));
        }

        let first_block = self.cursor / BLOCK;
        let last_block = end_gate.div_ceil(BLOCK);
        let triggers: Vec<(u64, u8)> = (first_block..last_block)
            .into_par_iter()
            .map(|b| {
                let lo = b * BLOCK;
                let hi = ((b + 1) * BLOCK).min(end_gate);
                let start = arrivals.partition_point(|a| a.gate < lo);
                let stop = arrivals.partition_point(|a| a.gate < hi);
                self.block_triggers(b, lo, hi, &arrivals[start..stop])
            })
            .flatten_iter()
            .collect();

        let events = self.resolve(&triggers, end_gate);
        self.cursor = end_gate;
        Ok(events)
    }

    fn block_triggers(&self, block: u64, lo: u64, hi: u64, arrivals: &[Arrival]) -> Vec<(u64, u8)> {
        let mut photon = Vec::new();
        if self.pde > 0.0 && !arrivals.is_empty() {
            let mut rng = self.photon_key.block(block);
            for a in arrivals {
                if a.photons == 0 {
                    continue;
                }
                let p = photon_click_probability(a.photons, self.pde);
                if rng.random::<f64>() < p {
                    photon.push(a.gate);
                }
            }
        }
        let mut dark = Vec::new();
        if self.p_dark > 0.0 {
            let mut rng = self.dark_key.block(block);
            let gap = Geometric::new(self.p_dark).expect("dark probability in (0, 1)");
            let mut g = lo;
            loop {
                let skip = gap.sample(&mut rng);
                g = match g.checked_add(skip) {
                    Some(v) if v < hi => v,
                    _ => break,
                };
                dark.push(g);
                g += 1;
            }
        }
        merge_triggers(&photon, &dark)
    }

    fn resolve(&mut self, triggers: &[(u64, u8)], end_gate: u64) -> Vec<DetectionEvent> {
        let mut events = Vec::with_capacity(triggers.len());
        let mut ap_rng: Option<(u64, ChaCha8Rng)> = None;
        let mut i = 0;
        loop {
            let next_trigger = triggers.get(i).map(|t| t.0);
            let next_ap = self.pending.peek().map(|r| r.0).filter(|&g| g < end_gate);
            let gate = match (next_trigger, next_ap) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => break,
            };
            let mut flags = 0u8;
            if next_trigger == Some(gate) {
                flags = triggers[i].1;
                i += 1;
            }
            let mut afterpulse = false;
            while self.pending.peek().map(|r| r.0) == Some(gate) {
                self.pending.pop();
                afterpulse = true;
            }
            if gate < self.live_from {
                if afterpulse {
                    self.tally.blanked_afterpulses += 1;
                }
                continue;
            }
            let cause = if flags & PHOTON != 0 {
                Cause::Photon
            } else if afterpulse {
                Cause::Afterpulse
            } else {
                Cause::Dark
            };
            events.push(DetectionEvent {
                detector: self.id,
                gate,
                cause,
            });
            self.tally.record(cause);
            let dead = self.params.dead_gates as u64;
            self.live_from = gate + 1 + dead;

            if self.params.p_ap > 0.0 {
                let block = gate / BLOCK;
                if ap_rng.as_ref().map(|(b, _)| *b) != Some(block) {
                    ap_rng = Some((block, self.ap_key.block(block)));
                }
                let rng = &mut ap_rng.as_mut().expect("set above").1;
                if rng.random::<f64>() < self.params.p_ap {
                    let delay = 1 + self.ap_delay.map_or(0, |g| g.sample(rng));
                    // the delay runs from the end of the dead window
                    self.pending.push(Reverse(gate + dead + delay));
                }
            }
        }
        events
    }
}

fn merge_triggers(photon: &[u64], dark: &[u64]) -> Vec<(u64, u8)> {
    let mut out = Vec::with_capacity(photon.len() + dark.len());
    let (mut i, mut k) = (0, 0);
    while i < photon.len() || k < dark.len() {
        match (photon.get(i), dark.get(k)) {
            (Some(&p), Some(&d)) if p == d => {
                out.push((p, PHOTON | DARK));
                i += 1;
                k += 1;
            }
            (Some(&p), Some(&d)) if p < d => {
                out.push((p, PHOTON));
                i += 1;
            }
            (Some(_), Some(&d)) => {
                out.push((d, DARK));
                k += 1;
            }
            (Some(&p), None) => {
                out.push((p, PHOTON));
                i += 1;
            }
            (None, Some(&d)) => {
                out.push((d, DARK));
                k += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

/// Runs one detector over gates `[0, n_gates)` in a single pass.
pub fn run_stream(
    id: DetectorId,
    arrivals: &[Arrival],
    params: &DetectorParams,
    clock: &GateClock,
    n_gates: u64,
    key: StreamKey,
) -> Result<EventStream> {
    let mut sim = DetectorSim::new(id, params.clone(), *clock, key)?;
    let events = sim.advance(arrivals, n_gates)?;
    Ok(EventStream {
        detector: id,
        clock: *clock,
        n_gates,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> StreamKey {
        StreamKey::root(2024)
    }

    fn every_gate(n: u64) -> Vec<Arrival> {
        (0..n).map(|gate| Arrival { gate, photons: 1 }).collect()
    }

    fn check_invariants(s: &EventStream, dead: u64) {
        for w in s.events.windows(2) {
            assert!(w[1].gate > w[0].gate + dead, "event inside dead window: {:?}", w);
        }
        assert!(s.events.iter().all(|e| e.gate < s.n_gates));
    }

    #[test]
    fn perfect_detector_clicks_every_gate() {
        let p = DetectorParams::ideal("x", 1.0);
        let s = run_stream(DetectorId::new(1), &every_gate(1000), &p, &GateClock::swg(), 1000, key()).unwrap();
        assert_eq!(s.events.len(), 1000);
        assert!(s.events.iter().all(|e| e.cause == Cause::Photon));
    }

    #[test]
    fn dark_counts_follow_binomial_expectation() {
        let mut p = DetectorParams::ideal("x", 0.5);
        p.dcr_cps = 410.0;
        let clock = GateClock::swg();
        let n = 1_000_000_000u64;
        let s = run_stream(DetectorId::new(1), &[], &p, &clock, n, key()).unwrap();
        let q = 410.0 / 152e6;
        let mean = n as f64 * q;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        let got = s.count(Cause::Dark) as f64;
        assert!((got - mean).abs() < 3.0 * sigma, "{got} vs {mean} ± {sigma}");
        assert!((mean - 2697.4).abs() < 0.1);
    }

    #[test]
    fn afterpulse_fraction_matches_probability() {
        let mut p = DetectorParams::ideal("x", 0.5);
        p.p_ap = 0.006;
        let n = 2_000_000u64;
        // a photon every 20th gate leaves room for the afterpulse tail
        let arrivals: Vec<_> = (0..n / 20).map(|i| Arrival { gate: i * 20, photons: 1 }).collect();
        let s = run_stream(DetectorId::new(1), &arrivals, &p, &GateClock::swg(), n, key()).unwrap();
        let clicks = s.events.len() as f64;
        let ap = s.count(Cause::Afterpulse) as f64;
        // each click (including afterpulses) spawns one with probability p_ap
        let expect = clicks * 0.006;
        let sigma = (clicks * 0.006 * 0.994).sqrt();
        assert!((ap - expect).abs() < 3.0 * sigma, "{ap} vs {expect} ± {sigma}");
    }

    #[test]
    fn photon_click_fraction_converges() {
        let p = DetectorParams::ideal("x", 0.3);
        let n = 1_000_000u64;
        let arrivals: Vec<_> = (0..n).map(|gate| Arrival { gate, photons: 2 }).collect();
        let s = run_stream(DetectorId::new(1), &arrivals, &p, &GateClock::swg(), n, key()).unwrap();
        let q = photon_click_probability(2, 0.3);
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((s.events.len() as f64 - n as f64 * q).abs() < 3.0 * sigma);
    }

    #[test]
    fn cause_accounting_and_dead_windows() {
        let mut p = DetectorParams::ideal("x", 0.6);
        p.dcr_cps = 3.0e5;
        p.p_ap = 0.2;
        p.dead_gates = 3;
        let n = 500_000u64;
        let arrivals: Vec<_> = (0..n / 7).map(|i| Arrival { gate: i * 7, photons: 1 }).collect();
        let mut sim = DetectorSim::new(DetectorId::new(2), p.clone(), GateClock::swg(), key()).unwrap();
        let events = sim.advance(&arrivals, n).unwrap();
        let s = EventStream { detector: DetectorId::new(2), clock: GateClock::swg(), n_gates: n, events };
        check_invariants(&s, 3);
        let t = sim.tally();
        assert_eq!(t.total() as usize, s.events.len());
        assert_eq!(t.photon as usize, s.count(Cause::Photon));
        assert_eq!(t.dark as usize, s.count(Cause::Dark));
        assert_eq!(t.afterpulse as usize, s.count(Cause::Afterpulse));
        assert!(t.afterpulse > 0 && t.dark > 0);
    }

    #[test]
    fn chunking_does_not_change_the_stream() {
        let mut p = DetectorParams::ideal("x", 0.4);
        p.dcr_cps = 2.0e5;
        p.p_ap = 0.3;
        p.ap_decay_gates = 5000.0; // long tails cross chunk boundaries
        p.dead_gates = 2;
        let n = 10 * BLOCK + 123;
        let arrivals: Vec<_> = (0..n / 3).map(|i| Arrival { gate: i * 3, photons: 1 }).collect();
        let whole = run_stream(DetectorId::new(1), &arrivals, &p, &GateClock::swg(), n, key()).unwrap();

        for chunk_blocks in [1u64, 3, 4] {
            let mut sim = DetectorSim::new(DetectorId::new(1), p.clone(), GateClock::swg(), key()).unwrap();
            let mut events = Vec::new();
            let mut start = 0;
            while start < n {
                let end = (start + chunk_blocks * BLOCK).min(n);
                let lo = arrivals.partition_point(|a| a.gate < start);
                let hi = arrivals.partition_point(|a| a.gate < end);
                events.extend(sim.advance(&arrivals[lo..hi], end).unwrap());
                start = end;
            }
            assert_eq!(events, whole.events, "chunk of {chunk_blocks} blocks");
        }
    }

    #[test]
    fn worker_count_does_not_change_the_stream() {
        let mut p = DetectorParams::ideal("x", 0.4);
        p.dcr_cps = 1.0e5;
        p.p_ap = 0.05;
        let n = 40 * BLOCK;
        let arrivals: Vec<_> = (0..n / 5).map(|i| Arrival { gate: i * 5, photons: 1 }).collect();
        let run = |workers| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap()
                .install(|| run_stream(DetectorId::new(1), &arrivals, &p, &GateClock::swg(), n, key()).unwrap())
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn misaligned_chunk_is_rejected() {
        let p = DetectorParams::ideal("x", 0.4);
        let mut sim = DetectorSim::new(DetectorId::new(1), p, GateClock::swg(), key()).unwrap();
        sim.advance(&[], 100).unwrap();
        assert!(sim.advance(&[], 200).is_err());
    }

    #[test]
    fn unsorted_or_out_of_range_arrivals_are_rejected() {
        let p = DetectorParams::ideal("x", 0.4);
        let bad = [Arrival { gate: 5, photons: 1 }, Arrival { gate: 2, photons: 1 }];
        assert!(run_stream(DetectorId::new(1), &bad, &p, &GateClock::swg(), 10, key()).is_err());
        let outside = [Arrival { gate: 10, photons: 1 }];
        assert!(run_stream(DetectorId::new(1), &outside, &p, &GateClock::swg(), 10, key()).is_err());
    }
}
