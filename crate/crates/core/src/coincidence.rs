//! Coincidence counting over gate-indexed event streams, GHZ ± pattern
//! tallies, visibility, and the `C ≈ f·μⁿ·η²ⁿ` multiphoton rate estimate.
//!
//! Counting is a streaming fold: events from all detectors are merged in gate
//! order and grouped into non-overlapping windows of `window_gates + 1`
//! gates, each opened by the earliest event not yet consumed. A window is
//! summarized by the set of detectors that fired inside it. Open windows carry
//! over between pushes, so chunked input gives the same windows as one pass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionEvent, DetectorId, EventStream};
use crate::polarization::{
    self, conditional, detector_port, pattern_probabilities, Analyzer, Port, Sign, SignPattern,
    WaveplateSetting,
};
use crate::spdc::{build_emission_state, PulseEmission};
use crate::{Error, Result};

/// Set of detectors, as a bitmask over ids `1..=63`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DetectorMask(u64);

impl DetectorMask {
    pub fn insert(&mut self, id: DetectorId) {
        self.0 |= 1 << id.get();
    }

    pub fn contains(&self, id: DetectorId) -> bool {
        self.0 >> id.get() & 1 == 1
    }

    pub fn contains_all(&self, ids: &[DetectorId]) -> bool {
        ids.iter().all(|&d| self.contains(d))
    }

    pub fn len(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

impl FromIterator<DetectorId> for DetectorMask {
    fn from_iter<I: IntoIterator<Item = DetectorId>>(iter: I) -> Self {
        let mut m = DetectorMask::default();
        for d in iter {
            m.insert(d);
        }
        m
    }
}

/// A closed coincidence window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub fired: DetectorMask,
}

/// Streaming window builder with carry-over between pushes.
#[derive(Debug, Clone)]
pub struct WindowFolder {
    window_gates: u64,
    open: Option<Window>,
    last_gate: Option<u64>,
}

impl WindowFolder {
    pub fn new(window_gates: u64) -> Self {
        WindowFolder {
            window_gates,
            open: None,
            last_gate: None,
        }
    }

    /// Feeds events sorted by gate; `emit` receives every window closed by them.
    pub fn push(&mut self, events: &[DetectionEvent], mut emit: impl FnMut(Window)) -> Result<()> {
        for e in events {
            if e.detector.get() >= 64 {
                return Err(Error::param("detector", "coincidence masks support ids below 64"));
            }
            if self.last_gate.is_some_and(|g| e.gate < g) {
                return Err(Error::param("events", "must be sorted by gate"));
            }
            self.last_gate = Some(e.gate);
            match &mut self.open {
                Some(w) if e.gate <= w.start + self.window_gates => w.fired.insert(e.detector),
                slot => {
                    if let Some(w) = slot.take() {
                        emit(w);
                    }
                    let mut fired = DetectorMask::default();
                    fired.insert(e.detector);
                    *slot = Some(Window {
                        start: e.gate,
                        fired,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn finish(self, mut emit: impl FnMut(Window)) {
        if let Some(w) = self.open {
            emit(w);
        }
    }
}

/// Events of several streams merged in gate order (ties keep stream order).
pub fn merge_events<'a>(streams: impl IntoIterator<Item = &'a [DetectionEvent]>) -> Vec<DetectionEvent> {
    let mut all: Vec<DetectionEvent> = streams.into_iter().flatten().copied().collect();
    all.sort_by_key(|e| e.gate);
    all
}

fn check_clocks(streams: &[EventStream]) -> Result<()> {
    if let Some(first) = streams.first() {
        if streams
            .iter()
            .any(|s| s.clock != first.clock || s.n_gates != first.n_gates)
        {
            return Err(Error::ClockMismatch);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceSpec {
    pub detector_sets: Vec<Vec<DetectorId>>,
    /// Extra gates a window spans beyond its first; 0 means same gate.
    #[serde(default)]
    pub window_gates: u64,
}

impl CoincidenceSpec {
    pub fn validate(&self) -> Result<()> {
        for set in &self.detector_sets {
            if set.is_empty() {
                return Err(Error::param("detector_sets", "sets must be non-empty"));
            }
            let mask: DetectorMask = set.iter().copied().collect();
            if mask.len() as usize != set.len() {
                return Err(Error::param("detector_sets", "ids must be distinct within a set"));
            }
        }
        Ok(())
    }
}

/// Number of windows in which every detector of each set fired.
pub fn count_nfold(streams: &[EventStream], spec: &CoincidenceSpec) -> Result<Vec<u64>> {
    spec.validate()?;
    check_clocks(streams)?;
    let sets: Vec<DetectorMask> = spec
        .detector_sets
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    let mut counts = vec![0u64; sets.len()];
    let mut tally = |w: Window| {
        for (c, set) in counts.iter_mut().zip(&sets) {
            if w.fired.0 & set.0 == set.0 {
                *c += 1;
            }
        }
    };
    let merged = merge_events(streams.iter().map(|s| s.events.as_slice()));
    let mut folder = WindowFolder::new(spec.window_gates);
    folder.push(&merged, &mut tally)?;
    folder.finish(&mut tally);
    Ok(counts)
}

/// Which analyzer and outcome each detector reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMapping {
    entries: BTreeMap<DetectorId, (usize, Sign)>,
    analyzers: usize,
}

impl PatternMapping {
    /// `entries`: detector → (analyzer index, sign). Every analyzer in
    /// `0..analyzers` needs at least one detector.
    pub fn new(entries: BTreeMap<DetectorId, (usize, Sign)>, analyzers: usize) -> Result<Self> {
        for a in 0..analyzers {
            if !entries.values().any(|&(i, _)| i == a) {
                return Err(Error::param("mapping", format!("analyzer {a} has no detector")));
            }
        }
        if entries.values().any(|&(i, _)| i >= analyzers) {
            return Err(Error::param("mapping", "analyzer index out of range"));
        }
        let mut seen = BTreeMap::new();
        for &(a, s) in entries.values() {
            if seen.insert((a, s), ()).is_some() {
                return Err(Error::param("mapping", "two detectors on one analyzer output"));
            }
        }
        Ok(PatternMapping {
            entries,
            analyzers,
        })
    }

    /// D1 = A1 +, D2 = A2 +, D3 = A2 −, D4 = A3 −, D5 = A3 +, D6 = A4 +.
    pub fn declared() -> Self {
        let entries = DetectorId::all6()
            .into_iter()
            .map(|d| {
                let (a, port) = detector_port(d).expect("D1..D6 are mapped");
                let sign = match port {
                    Port::Transmit => Sign::Plus,
                    Port::Reflect => Sign::Minus,
                };
                (d, (a.index(), sign))
            })
            .collect();
        PatternMapping::new(entries, Analyzer::ALL.len()).expect("declared mapping is complete")
    }

    pub fn detectors(&self) -> impl Iterator<Item = DetectorId> + '_ {
        self.entries.keys().copied()
    }

    /// Detectors that report `pattern`.
    pub fn detectors_for(&self, pattern: &SignPattern) -> Option<Vec<DetectorId>> {
        (0..self.analyzers)
            .map(|a| {
                self.entries
                    .iter()
                    .find(|(_, &(i, s))| i == a && pattern.0.get(a) == Some(&s))
                    .map(|(&d, _)| d)
            })
            .collect()
    }

    pub fn classify(&self, fired: DetectorMask) -> Classification {
        let mut signs: Vec<Option<Sign>> = vec![None; self.analyzers];
        let mut ambiguous = false;
        for (&d, &(a, s)) in &self.entries {
            if !fired.contains(d) {
                continue;
            }
            match signs[a] {
                None => signs[a] = Some(s),
                Some(prev) if prev != s => ambiguous = true,
                Some(_) => {}
            }
        }
        if signs.iter().any(Option::is_none) {
            return Classification::Incomplete;
        }
        if ambiguous {
            return Classification::MultiClick;
        }
        Classification::Pattern(SignPattern(signs.into_iter().flatten().collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    /// Some analyzer registered no click.
    Incomplete,
    /// Every analyzer clicked but at least one on both outputs.
    MultiClick,
    Pattern(SignPattern),
}

/// Four-fold tallies with photons 1 and 4 conditioned on `+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCounts {
    pub counts: BTreeMap<String, u64>,
    pub multi_click_rejects: u64,
    pub pulses: u64,
    pub elapsed_s: f64,
}

impl PatternCounts {
    pub const PATTERNS: [&'static str; 4] = ["++++", "+-++", "++-+", "+--+"];

    pub fn new(pulses: u64, elapsed_s: f64) -> Self {
        PatternCounts {
            counts: Self::PATTERNS.iter().map(|p| (p.to_string(), 0)).collect(),
            multi_click_rejects: 0,
            pulses,
            elapsed_s,
        }
    }

    pub fn get(&self, pattern: &str) -> u64 {
        self.counts.get(pattern).copied().unwrap_or(0)
    }

    /// Adds one window; returns whether it was a four-fold.
    pub fn record(&mut self, c: &Classification) -> bool {
        match c {
            Classification::Incomplete => false,
            Classification::MultiClick => {
                self.multi_click_rejects += 1;
                true
            }
            Classification::Pattern(p) => {
                *self.counts.entry(p.to_string()).or_insert(0) += 1;
                true
            }
        }
    }

    pub fn classified(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn fourfolds(&self) -> u64 {
        self.classified() + self.multi_click_rejects
    }

    pub fn per_minute(&self, pattern: &str) -> f64 {
        self.get(pattern) as f64 * 60.0 / self.elapsed_s
    }

    pub fn merge(&mut self, other: &PatternCounts) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
        self.multi_click_rejects += other.multi_click_rejects;
        self.pulses += other.pulses;
        self.elapsed_s += other.elapsed_s;
    }

    fn sig_noise(&self) -> (u64, u64) {
        (
            self.get("++++") + self.get("+--+"),
            self.get("+-++") + self.get("++-+"),
        )
    }
}

/// Classifies every window of the merged streams.
pub fn ghz_pattern_counts(
    streams: &[EventStream],
    mapping: &PatternMapping,
    window_gates: u64,
) -> Result<PatternCounts> {
    check_clocks(streams)?;
    let (n_gates, clock) = match streams.first() {
        Some(s) => (s.n_gates, s.clock),
        None => return Err(Error::param("streams", "no event streams")),
    };
    let mut out = PatternCounts::new(
        n_gates / clock.multiplier as u64,
        n_gates as f64 / clock.gate_freq_hz(),
    );
    let mut tally = |w: Window| {
        out.record(&mapping.classify(w.fired));
    };
    let merged = merge_events(streams.iter().map(|s| s.events.as_slice()));
    let mut folder = WindowFolder::new(window_gates);
    folder.push(&merged, &mut tally)?;
    folder.finish(&mut tally);
    Ok(out)
}

/// `(N_sig − N_noise)/(N_sig + N_noise)`, signal = ++++ and +--+.
pub fn visibility(c: &PatternCounts) -> Result<f64> {
    let (sig, noise) = c.sig_noise();
    if sig + noise == 0 {
        return Err(Error::Undefined("visibility of zero four-fold counts"));
    }
    Ok((sig as f64 - noise as f64) / (sig + noise) as f64)
}

/// Binomial standard error of [`visibility`]: `2·√(p(1−p)/N)`.
pub fn visibility_stderr(c: &PatternCounts) -> Result<f64> {
    let (sig, noise) = c.sig_noise();
    let n = (sig + noise) as f64;
    if n == 0.0 {
        return Err(Error::Undefined("visibility of zero four-fold counts"));
    }
    let p = sig as f64 / n;
    Ok(2.0 * (p * (1.0 - p) / n).sqrt())
}

/// Exact four-photon pattern probabilities of the fused two-pair state,
/// conditioned on photons 1 and 4 reading `+`, analyzers in the ± basis.
pub fn analytic_pattern_probabilities(coherence: f64) -> Result<BTreeMap<SignPattern, f64>> {
    let emitted = build_emission_state(PulseEmission { k1: 1, k2: 1 }, 4)?;
    let fused = polarization::fuse(&emitted)?;
    let (ghz, _) = fused.postselect_one_per_path(&polarization::FUSED_PATHS)?;
    let ghz = ghz.with_coherence(coherence)?;
    let settings: Vec<_> = polarization::FUSED_PATHS
        .iter()
        .map(|&p| (p, WaveplateSetting::pm_basis()))
        .collect();
    let probs = pattern_probabilities(&ghz, &settings)?;
    conditional(&probs, &[(0, Sign::Plus), (3, Sign::Plus)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Eq1Params {
    /// Pump repetition frequency (Hz).
    pub f: f64,
    pub mu: f64,
    pub n: u32,
    /// Overall efficiency of each channel.
    pub eta: f64,
}

impl Eq1Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::param("f", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::param("mu", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta", "must lie in [0, 1]"));
        }
        if self.n == 0 {
            return Err(Error::param("n", "must be ≥ 1"));
        }
        Ok(())
    }
}

/// `2n`-fold coincidence rate `f·μⁿ·η²ⁿ` (counts/s).
pub fn eq1_estimate(p: &Eq1Params) -> f64 {
    p.f * p.mu.powi(p.n as i32) * p.eta.powi(2 * p.n as i32)
}

/// Product of `pde_b / pde_a` over the detectors of `pattern`.
pub fn improvement_ratio(
    pde_a: &BTreeMap<DetectorId, f64>,
    pde_b: &BTreeMap<DetectorId, f64>,
    pattern: &[DetectorId],
) -> Result<f64> {
    let mut r = 1.0;
    for d in pattern {
        let (a, b) = match (pde_a.get(d), pde_b.get(d)) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::param("pattern", format!("{d} missing from a PDE map"))),
        };
        if a == 0.0 {
            return Err(Error::param("pde_a", format!("{d} has zero efficiency")));
        }
        r *= b / a;
    }
    Ok(r)
}
