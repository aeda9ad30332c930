//! Four-photon GHZ Monte Carlo: pair emission, fusion, analyzers, coupling
//! loss, six detector machines and a streaming pattern classifier.
//!
//! For every emission `(k1, k2)` within the truncation limit the exact
//! port-occupation distribution is precomputed from the Fock state (coherent
//! part mixed with the Fock-dephased part by the source coherence). The pulse
//! loop then skips vacuum pulses geometrically, samples an emission and an
//! outcome, thins photons by coupling, and hands arrivals to the detectors.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use crate::coincidence::{PatternCounts, PatternMapping, WindowFolder};
use crate::detector::{Arrival, CauseTally, DetectionEvent, DetectorId, DetectorParams, DetectorSim, GateClock};
use crate::polarization::{self, detector_port, Analyzer, PhotonState, SpatialPath, WaveplateSetting};
use crate::rng::{Domain, StreamKey, BLOCK};
use crate::spdc::{build_emission_state, PulseEmission, SourceParams};
use crate::{Error, Result};

const N_DET: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Ghz4Setup {
    pub source: SourceParams,
    /// D1..D6.
    pub detectors: Vec<DetectorParams>,
    pub clock: GateClock,
    /// Coupling of paths 1, 2', 3', 4.
    pub coupling: [f64; 4],
    pub analyzers: [WaveplateSetting; 4],
    pub window_gates: u64,
    pub pulses: u64,
    /// Pulses per pipeline chunk, a multiple of [`BLOCK`].
    pub chunk_pulses: u64,
}

impl Ghz4Setup {
    pub fn new(source: SourceParams, detectors: Vec<DetectorParams>, clock: GateClock, pulses: u64) -> Self {
        Ghz4Setup {
            source,
            detectors,
            clock,
            coupling: [0.9; 4],
            analyzers: [WaveplateSetting::pm_basis(); 4],
            window_gates: 0,
            pulses,
            chunk_pulses: 16 * BLOCK,
        }
    }

    /// Same setup with dark counts and afterpulsing removed.
    pub fn without_noise(&self) -> Self {
        let mut s = self.clone();
        for d in &mut s.detectors {
            d.dcr_cps = 0.0;
            d.p_ap = 0.0;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if self.detectors.len() != N_DET {
            return Err(Error::param("detectors", "need exactly six detectors (D1..D6)"));
        }
        for d in &self.detectors {
            d.validate(&self.clock)?;
        }
        if self.coupling.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::param("coupling", "must lie in [0, 1]"));
        }
        if self.chunk_pulses == 0 || self.chunk_pulses % BLOCK != 0 {
            return Err(Error::param("chunk_pulses", "must be a positive multiple of the RNG block"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ghz4Outcome {
    pub counts: PatternCounts,
    /// Pulses above the pair truncation, simulated as vacuum.
    pub truncated: u64,
    /// Pulses with at least one pair.
    pub emitting: u64,
    pub tallies: Vec<CauseTally>,
}

/// Photons per detector port with their probability.
#[derive(Debug, Clone, PartialEq)]
struct OutcomeTable {
    cumulative: Vec<f64>,
    photons: Vec<[u8; N_DET]>,
}

impl OutcomeTable {
    fn sample(&self, u: f64) -> &[u8; N_DET] {
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.photons.len() - 1);
        &self.photons[i]
    }
}

fn ports() -> [(SpatialPath, usize); N_DET] {
    std::array::from_fn(|i| {
        let (a, p) = detector_port(DetectorId::new(i as u8 + 1)).expect("D1..D6 are mapped");
        (SpatialPath::Out(a, p), a.index())
    })
}

fn analyze_all(state: &PhotonState, analyzers: &[WaveplateSetting; 4]) -> Result<PhotonState> {
    let mut s = state.clone();
    for a in Analyzer::ALL {
        s = s.analyze(a, &analyzers[a.index()])?;
    }
    Ok(s)
}

/// Exact detector-port photon distribution for one emission.
fn outcome_table(e: PulseEmission, source: &SourceParams, analyzers: &[WaveplateSetting; 4]) -> Result<OutcomeTable> {
    let n_photons = 2 * e.total() as usize;
    let fused = polarization::fuse(&build_emission_state(e, n_photons.max(1))?)?;
    let ports = ports();
    let mut dist: std::collections::BTreeMap<[u8; N_DET], f64> = std::collections::BTreeMap::new();
    let mut add = |state: &PhotonState, weight: f64| {
        for (occ, p) in state.populations() {
            let photons = ports.map(|(path, _)| occ.in_path(path) as u8);
            *dist.entry(photons).or_insert(0.0) += weight * p;
        }
    };
    let v = source.coherence;
    if v > 0.0 {
        add(&analyze_all(&fused, analyzers)?, v);
    }
    if v < 1.0 {
        for (occ, p) in fused.populations() {
            let term = PhotonState::from_terms([(*occ, num_complex::Complex64::new(1.0, 0.0))], fused.n_max())?;
            add(&analyze_all(&term, analyzers)?, (1.0 - v) * p);
        }
    }
    let mut cumulative = Vec::with_capacity(dist.len());
    let mut photons = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for (k, p) in dist {
        if p > 1e-15 {
            acc += p;
            cumulative.push(acc);
            photons.push(k);
        }
    }
    if (acc - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized(acc));
    }
    Ok(OutcomeTable { cumulative, photons })
}

/// Joint pair-number distribution conditioned on a non-vacuum pulse.
#[derive(Debug, Clone)]
struct EmissionTable {
    p_event: f64,
    cumulative: Vec<f64>,
    /// `None` marks the truncated remainder.
    entries: Vec<Option<(PulseEmission, OutcomeTable)>>,
}

impl EmissionTable {
    fn new(source: &SourceParams, analyzers: &[WaveplateSetting; 4]) -> Result<Self> {
        let p_vac = source.pmf(0) * source.pmf(0);
        let p_event = 1.0 - p_vac;
        let mut cumulative = Vec::new();
        let mut entries = Vec::new();
        let mut acc = 0.0;
        if p_event > 0.0 {
            for total in 1..=source.n_max {
                for k1 in 0..=total {
                    let e = PulseEmission { k1, k2: total - k1 };
                    let p = source.pmf(e.k1) * source.pmf(e.k2) / p_event;
                    if p <= 0.0 {
                        continue;
                    }
                    acc += p;
                    cumulative.push(acc);
                    entries.push(Some((e, outcome_table(e, source, analyzers)?)));
                }
            }
            cumulative.push(1.0f64.max(acc));
            entries.push(None);
        }
        Ok(EmissionTable {
            p_event,
            cumulative,
            entries,
        })
    }
}

#[derive(Default)]
struct BlockOutput {
    arrivals: Vec<(u8, Arrival)>,
    truncated: u64,
    emitting: u64,
}

fn emit_block(
    table: &EmissionTable,
    setup: &Ghz4Setup,
    key: StreamKey,
    block: u64,
    lo: u64,
    hi: u64,
) -> BlockOutput {
    let mut out = BlockOutput::default();
    if table.p_event <= 0.0 {
        return out;
    }
    let ports = ports();
    let mult = setup.clock.multiplier as u64;
    let mut rng = key.block(block);
    let gap = (table.p_event < 1.0).then(|| Geometric::new(table.p_event).expect("probability in (0, 1)"));
    let mut pulse = lo;
    loop {
        let skip = gap.as_ref().map_or(0, |g| g.sample(&mut rng));
        pulse = match pulse.checked_add(skip) {
            Some(p) if p < hi => p,
            _ => break,
        };
        out.emitting += 1;
        let u: f64 = rng.random();
        let i = table.cumulative.partition_point(|&c| c <= u).min(table.entries.len() - 1);
        match &table.entries[i] {
            None => out.truncated += 1,
            Some((_, outcomes)) => {
                let photons = outcomes.sample(rng.random());
                for (d, &n) in photons.iter().enumerate() {
                    let c = setup.coupling[ports[d].1];
                    let kept = (0..n).filter(|_| rng.random::<f64>() < c).count() as u32;
                    if kept > 0 {
                        out.arrivals.push((
                            d as u8,
                            Arrival {
                                gate: pulse * mult,
                                photons: kept,
                            },
                        ));
                    }
                }
            }
        }
        pulse += 1;
    }
    out
}

/// Merges per-detector sorted event lists by gate.
pub(crate) fn merge_sorted(lists: &[Vec<DetectionEvent>]) -> Vec<DetectionEvent> {
    let mut heads = vec![0usize; lists.len()];
    let mut out = Vec::with_capacity(lists.iter().map(Vec::len).sum());
    loop {
        let mut best: Option<(usize, u64)> = None;
        for (i, l) in lists.iter().enumerate() {
            if let Some(e) = l.get(heads[i]) {
                if best.is_none_or(|(_, g)| e.gate < g) {
                    best = Some((i, e.gate));
                }
            }
        }
        match best {
            Some((i, _)) => {
                out.push(lists[i][heads[i]]);
                heads[i] += 1;
            }
            None => return out,
        }
    }
}

/// Runs the pulse loop. `key` should be specific to this run (or arm).
pub fn simulate_ghz4(setup: &Ghz4Setup, key: StreamKey) -> Result<Ghz4Outcome> {
    setup.validate()?;
    let table = EmissionTable::new(&setup.source, &setup.analyzers)?;
    let mapping = PatternMapping::declared();
    let mult = setup.clock.multiplier as u64;
    let emission_key = key.derive(Domain::Emission, 0);
    let mut sims: Vec<DetectorSim> = setup
        .detectors
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = DetectorId::new(i as u8 + 1);
            DetectorSim::new(id, p.clone(), setup.clock, key.derive(Domain::PhotonClick, i as u64 + 1))
        })
        .collect::<Result<_>>()?;

    let mut counts = PatternCounts::new(setup.pulses, setup.pulses as f64 / setup.clock.input_freq_hz);
    let mut folder = WindowFolder::new(setup.window_gates);
    let (mut truncated, mut emitting) = (0, 0);
    let mut start = 0;
    while start < setup.pulses {
        let end = (start + setup.chunk_pulses).min(setup.pulses);
        let blocks: Vec<BlockOutput> = (start / BLOCK..end.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| emit_block(&table, setup, emission_key, b, b * BLOCK, ((b + 1) * BLOCK).min(end)))
            .collect();
        let mut per_det: Vec<Vec<Arrival>> = vec![Vec::new(); N_DET];
        for b in blocks {
            truncated += b.truncated;
            emitting += b.emitting;
            for (d, a) in b.arrivals {
                per_det[d as usize].push(a);
            }
        }
        let events: Vec<Vec<DetectionEvent>> = sims
            .par_iter_mut()
            .zip(per_det.par_iter())
            .map(|(sim, arr)| sim.advance(arr, end * mult))
            .collect::<Result<_>>()?;
        let merged = merge_sorted(&events);
        folder.push(&merged, |w| {
            counts.record(&mapping.classify(w.fired));
        })?;
        start = end;
    }
    folder.finish(|w| {
        counts.record(&mapping.classify(w.fired));
    });
    Ok(Ghz4Outcome {
        counts,
        truncated,
        emitting,
        tallies: sims.iter().map(DetectorSim::tally).collect(),
    })
}
