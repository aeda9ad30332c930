//! Closed-loop detector characterization with attenuated pulsed light.
//!
//! A trigger at a sub-multiple of the gate frequency illuminates every
//! `period`-th gate with Poisson light of known mean. A separate dark run
//! gives the dark baseline. From the two event streams:
//!
//! - PDE from the excess click probability of illuminated gates,
//!   `−ln[(1 − P_ill)/(1 − P_dark)] / μ`;
//! - DCR from the dark-run count rate, with dark-triggered afterpulses
//!   removed;
//! - afterpulse probability from the excess clicks trailing the illuminated
//!   gates, per photon-induced click.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::detector::{run_stream, Arrival, Cause, DetectorId, DetectorParams, EventStream, GateClock};
use crate::rng::{Domain, StreamKey, BLOCK};
use crate::{Error, Result};

/// Required fraction of afterpulse delay mass inside one trigger period.
const MIN_AP_MASS: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizationSetup {
    #[serde(default = "default_trigger")]
    pub trigger_freq_hz: f64,
    #[serde(default = "default_mean")]
    pub mean_photons: f64,
    #[serde(default = "default_pulses")]
    pub n_pulses: u64,
    /// Dark-run length; `None` means 100 s of gates.
    #[serde(default)]
    pub dark_run_gates: Option<u64>,
}

fn default_trigger() -> f64 {
    7.6e6
}

fn default_mean() -> f64 {
    0.1
}

fn default_pulses() -> u64 {
    10_000_000
}

impl Default for CharacterizationSetup {
    fn default() -> Self {
        CharacterizationSetup {
            trigger_freq_hz: default_trigger(),
            mean_photons: default_mean(),
            n_pulses: default_pulses(),
            dark_run_gates: None,
        }
    }
}

impl CharacterizationSetup {
    pub const DEFAULT_DARK_RUN_S: f64 = 100.0;

    /// Gates per trigger period.
    pub fn period(&self, clock: &GateClock) -> Result<u64> {
        if !(self.trigger_freq_hz > 0.0) {
            return Err(Error::param("trigger_freq_hz", "must be positive"));
        }
        let ratio = clock.gate_freq_hz() / self.trigger_freq_hz;
        let period = ratio.round();
        if period < 2.0 || (ratio - period).abs() > 1e-9 * ratio {
            return Err(Error::param(
                "trigger_freq_hz",
                format!("must divide the gate frequency {} Hz at least twice", clock.gate_freq_hz()),
            ));
        }
        Ok(period as u64)
    }

    pub fn dark_gates(&self, clock: &GateClock) -> u64 {
        self.dark_run_gates
            .unwrap_or((Self::DEFAULT_DARK_RUN_S * clock.gate_freq_hz()).round() as u64)
    }

    pub fn validate(&self, clock: &GateClock) -> Result<()> {
        clock.validate()?;
        self.period(clock)?;
        if !(self.mean_photons > 0.0 && self.mean_photons.is_finite()) {
            return Err(Error::param("mean_photons", "must be positive"));
        }
        if self.n_pulses == 0 {
            return Err(Error::param("n_pulses", "must be positive"));
        }
        if self.dark_gates(clock) == 0 {
            return Err(Error::param("dark_run_gates", "must be positive"));
        }
        Ok(())
    }
}

/// Value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Distance from `truth` in standard errors.
    pub fn z(&self, truth: f64) -> f64 {
        if self.stderr > 0.0 {
            (self.value - truth).abs() / self.stderr
        } else if self.value == truth {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Clicks out of live gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinomialCount {
    pub clicks: u64,
    pub gates: u64,
}

impl BinomialCount {
    pub fn p(&self) -> f64 {
        self.clicks as f64 / self.gates as f64
    }
}

/// Photon counts for the illuminated gates `k·period`, `k < n_pulses`,
/// listed sparsely (gates without photons are omitted).
pub fn poissonize_arrivals(setup: &CharacterizationSetup, clock: &GateClock, key: StreamKey) -> Result<Vec<Arrival>> {
    setup.validate(clock)?;
    let period = setup.period(clock)?;
    let poisson = Poisson::new(setup.mean_photons).map_err(|e| Error::param("mean_photons", e.to_string()))?;
    let key = key.derive(Domain::Illumination, 0);
    let mut out = Vec::new();
    for block in 0..setup.n_pulses.div_ceil(BLOCK) {
        let mut rng = key.block(block);
        for pulse in block * BLOCK..((block + 1) * BLOCK).min(setup.n_pulses) {
            let n: f64 = poisson.sample(&mut rng);
            if n > 0.0 {
                out.push(Arrival {
                    gate: pulse * period,
                    photons: n as u32,
                });
            }
        }
    }
    Ok(out)
}

/// Clicks binned by gate offset from the last illuminated gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetHistogram {
    pub period: u64,
    pub clicks: Vec<u64>,
    /// Gates per offset not blanked by a preceding click.
    pub live_gates: Vec<u64>,
}

impl OffsetHistogram {
    pub fn from_stream(stream: &EventStream, period: u64, dead_gates: u32) -> Self {
        let p = period as usize;
        let mut clicks = vec![0u64; p];
        let mut blanked = vec![0u64; p];
        for e in &stream.events {
            clicks[(e.gate % period) as usize] += 1;
            for j in 1..=dead_gates as u64 {
                let g = e.gate + j;
                if g < stream.n_gates {
                    blanked[(g % period) as usize] += 1;
                }
            }
        }
        let live_gates = (0..p)
            .map(|k| {
                let total = stream.n_gates / period + u64::from((k as u64) < stream.n_gates % period);
                total - blanked[k]
            })
            .collect();
        OffsetHistogram {
            period,
            clicks,
            live_gates,
        }
    }

    pub fn total(&self) -> u64 {
        self.clicks.iter().sum()
    }

    pub fn illuminated(&self) -> BinomialCount {
        BinomialCount {
            clicks: self.clicks[0],
            gates: self.live_gates[0],
        }
    }

    fn trailing(&self) -> (u64, u64) {
        (self.clicks[1..].iter().sum(), self.live_gates[1..].iter().sum())
    }
}

fn ln1m_var(c: BinomialCount) -> f64 {
    let p = c.p();
    p / ((1.0 - p) * c.gates as f64)
}

/// PDE from illuminated and dark click probabilities.
pub fn estimate_pde(illuminated: BinomialCount, dark: BinomialCount, mean_photons: f64) -> Result<Estimate> {
    let (pi, pd) = (illuminated.p(), dark.p());
    if !(0.0..1.0).contains(&pi) || !(0.0..1.0).contains(&pd) || illuminated.gates == 0 || dark.gates == 0 {
        return Err(Error::param("click statistics", "probabilities must lie in [0, 1)"));
    }
    if pi < pd {
        return Err(Error::NegativeSignal {
            illuminated: pi,
            dark: pd,
        });
    }
    let value = -((1.0 - pi) / (1.0 - pd)).ln() / mean_photons;
    let stderr = (ln1m_var(illuminated) + ln1m_var(dark)).sqrt() / mean_photons;
    Ok(Estimate { value, stderr })
}

/// Raw count rate of a dark run with its Poisson standard error.
pub fn estimate_dcr(dark_run: &EventStream, duration_s: f64) -> Result<Estimate> {
    if !(duration_s > 0.0) {
        return Err(Error::param("duration_s", "must be positive"));
    }
    if dark_run.events.iter().any(|e| e.cause == Cause::Photon) {
        return Err(Error::param("dark_run", "contains photon-induced clicks"));
    }
    let n = dark_run.events.len() as f64;
    Ok(Estimate {
        value: n / duration_s,
        stderr: n.sqrt() / duration_s,
    })
}

/// Afterpulse probability with a flag set when the baseline exceeded the
/// trailing counts and the excess was clipped to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PapEstimate {
    pub estimate: Estimate,
    pub clipped: bool,
}

/// Excess trailing clicks per photon-induced click.
///
/// Every click, afterpulses included, may trigger a further afterpulse, so
/// the excess ratio is `r = p/(1 − p)`; the returned value is `r/(1 + r)`.
pub fn estimate_pap(hist: &OffsetHistogram, dark: BinomialCount) -> Result<PapEstimate> {
    if hist.period < 2 {
        return Err(Error::param("histogram", "needs trailing gates"));
    }
    let pd = dark.p();
    let var_pd = pd * (1.0 - pd) / dark.gates as f64;
    let ill = hist.illuminated();
    let photon_clicks = ill.clicks as f64 - pd * ill.gates as f64;
    if photon_clicks <= 0.0 {
        return Err(Error::NegativeSignal {
            illuminated: ill.p(),
            dark: pd,
        });
    }
    let var_c = ill.clicks as f64 + (ill.gates as f64).powi(2) * var_pd;
    let (trail, live) = hist.trailing();
    let baseline = pd * live as f64;
    let mut excess = trail as f64 - baseline;
    let clipped = excess < 0.0;
    if clipped {
        excess = 0.0;
    }
    let var_e = trail as f64 + (live as f64).powi(2) * var_pd;
    let r = excess / photon_clicks;
    let var_r = var_e / photon_clicks.powi(2) + (excess * excess) * var_c / photon_clicks.powi(4);
    Ok(PapEstimate {
        estimate: Estimate {
            value: r / (1.0 + r),
            stderr: var_r.sqrt() / (1.0 + r).powi(2),
        },
        clipped,
    })
}

/// Share of afterpulses landing before the next illuminated gate.
pub fn afterpulse_mass_within(params: &DetectorParams, period: u64) -> f64 {
    // delay from the click is dead + 1 + G, G geometric with mean (decay − 1)
    let first = params.dead_gates as u64 + 1;
    if first >= period {
        return 0.0;
    }
    let q = 1.0 / params.ap_decay_gates;
    let slots = (period - first) as i32;
    1.0 - (1.0 - q).powi(slots)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub label: String,
    pub pde: Estimate,
    /// Dark-count rate with dark-triggered afterpulses removed.
    pub dcr_cps: Estimate,
    pub dcr_raw_cps: Estimate,
    pub p_ap: Estimate,
    pub p_ap_clipped: bool,
    pub histogram: OffsetHistogram,
    pub dark_events: u64,
    pub dark_gates: u64,
}

impl CharacterizationReport {
    /// Largest deviation from the parameters in standard errors.
    pub fn max_z(&self, truth: &DetectorParams) -> f64 {
        [
            self.pde.z(truth.pde),
            self.dcr_cps.z(truth.dcr_cps),
            self.p_ap.z(truth.p_ap),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Simulates the illuminated and dark runs for one detector and estimates
/// its parameters.
pub fn characterize(
    params: &DetectorParams,
    clock: &GateClock,
    setup: &CharacterizationSetup,
    key: StreamKey,
) -> Result<CharacterizationReport> {
    setup.validate(clock)?;
    params.validate(clock)?;
    let period = setup.period(clock)?;
    if params.p_ap > 0.0 && afterpulse_mass_within(params, period) < MIN_AP_MASS {
        return Err(Error::param(
            "trigger_freq_hz",
            "trigger period too short to hold 99% of the afterpulse delay distribution",
        ));
    }
    let id = DetectorId::new(1);
    let arrivals = poissonize_arrivals(setup, clock, key)?;
    let n_gates = setup.n_pulses * period;
    let lit = run_stream(id, &arrivals, params, clock, n_gates, key.derive(Domain::Illumination, 1))?;
    let dark_gates = setup.dark_gates(clock);
    let dark_run = run_stream(id, &[], params, clock, dark_gates, key.derive(Domain::DarkRun, 0))?;

    let dark_events = dark_run.events.len() as u64;
    let dark = BinomialCount {
        clicks: dark_events,
        gates: dark_gates.saturating_sub(dark_events * params.dead_gates as u64),
    };
    let histogram = OffsetHistogram::from_stream(&lit, period, params.dead_gates);
    let pde = estimate_pde(histogram.illuminated(), dark, setup.mean_photons)?;
    let pap = estimate_pap(&histogram, dark)?;
    let raw = estimate_dcr(&dark_run, dark_gates as f64 / clock.gate_freq_hz())?;
    let keep = 1.0 - pap.estimate.value;
    let dcr = Estimate {
        value: raw.value * keep,
        stderr: ((raw.stderr * keep).powi(2) + (raw.value * pap.estimate.stderr).powi(2)).sqrt(),
    };
    Ok(CharacterizationReport {
        label: params.label.clone(),
        pde,
        dcr_cps: dcr,
        dcr_raw_cps: raw,
        p_ap: pap.estimate,
        p_ap_clipped: pap.clipped,
        histogram,
        dark_events,
        dark_gates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::table::{self, DetectorKind};

    fn short(n_pulses: u64) -> CharacterizationSetup {
        CharacterizationSetup {
            n_pulses,
            dark_run_gates: Some(1_000_000_000),
            ..Default::default()
        }
    }

    #[test]
    fn default_period_is_every_twentieth_gate() {
        let s = CharacterizationSetup::default();
        assert_eq!(s.period(&GateClock::swg()).unwrap(), 20);
        assert_eq!(s.period(&GateClock::spcm()).unwrap(), 10);
        let odd = CharacterizationSetup { trigger_freq_hz: 7e6, ..s };
        assert!(odd.period(&GateClock::swg()).is_err());
    }

    #[test]
    fn arrivals_only_on_illuminated_gates() {
        let s = short(1_000_000);
        let a = poissonize_arrivals(&s, &GateClock::swg(), StreamKey::root(1)).unwrap();
        assert!(a.iter().all(|x| x.gate % 20 == 0 && x.photons > 0));
        let empty = 1.0 - a.len() as f64 / 1e6;
        let p0 = (-0.1f64).exp();
        assert!((empty - p0).abs() < 3.0 * (p0 * (1.0 - p0) / 1e6).sqrt(), "{empty}");
        let mean = a.iter().map(|x| x.photons as f64).sum::<f64>() / 1e6;
        assert!((mean - 0.1).abs() < 3.0 * (0.1f64 / 1e6).sqrt());
    }

    #[test]
    fn zero_mean_is_rejected_and_zero_light_gives_no_arrivals() {
        let s = CharacterizationSetup { mean_photons: 0.0, ..short(10) };
        assert!(poissonize_arrivals(&s, &GateClock::swg(), StreamKey::root(1)).is_err());
    }

    #[test]
    fn pde_estimator_examples() {
        let c = |clicks, gates| BinomialCount { clicks, gates };
        let e = estimate_pde(c(100, 1000), c(100, 1000), 0.1).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(matches!(
            estimate_pde(c(50, 1000), c(100, 1000), 0.1),
            Err(Error::NegativeSignal { .. })
        ));
        // exact inverse of 1 − exp(−μ·pde) at zero dark rate
        for pde in [0.05f64, 0.3, 0.694, 0.757, 1.0] {
            let gates = 1u64 << 52;
            let p_ill = 1.0 - (-0.1 * pde).exp();
            let clicks = (p_ill * gates as f64).round() as u64;
            let e = estimate_pde(c(clicks, gates), c(0, gates), 0.1).unwrap();
            assert!((e.value - pde).abs() < 1e-9, "{pde}: {}", e.value);
        }
    }

    #[test]
    fn pde_stderr_matches_binomial_propagation() {
        // numerical derivative of the estimator times the binomial sd of P_ill
        let (n, clicks) = (10_000_000u64, 720_000u64);
        let ill = BinomialCount { clicks, gates: n };
        let dark = BinomialCount { clicks: 0, gates: n };
        let e = estimate_pde(ill, dark, 0.1).unwrap();
        let p = ill.p();
        let h = 1e-7;
        let f = |p: f64| -(1.0 - p).ln() / 0.1;
        let deriv = (f(p + h) - f(p - h)) / (2.0 * h);
        let expect = deriv * (p * (1.0 - p) / n as f64).sqrt();
        assert!((e.stderr - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn dcr_estimator_examples() {
        let mut s = EventStream {
            detector: DetectorId::new(1),
            clock: GateClock::swg(),
            n_gates: 1000,
            events: Vec::new(),
        };
        assert_eq!(estimate_dcr(&s, 1.0).unwrap().value, 0.0);
        s.events.push(crate::detector::DetectionEvent {
            detector: DetectorId::new(1),
            gate: 3,
            cause: Cause::Photon,
        });
        assert!(estimate_dcr(&s, 1.0).is_err());
        assert!(estimate_dcr(&s, 0.0).is_err());
    }

    #[test]
    fn histogram_conserves_mass() {
        let p = table::params(DetectorKind::Spcm, 3).unwrap();
        let r = characterize(&p, &DetectorKind::Spcm.clock(), &short(200_000), StreamKey::root(4)).unwrap();
        let lit_events: u64 = r.histogram.total();
        assert!(lit_events > 0);
        assert_eq!(r.histogram.clicks.len(), 10);
        // live gates never exceed the per-offset gate count
        assert!(r.histogram.live_gates.iter().all(|&g| g <= 200_000));
    }

    #[test]
    fn afterpulse_mass_check() {
        let p = table::params(DetectorKind::Swg, 1).unwrap();
        assert!(afterpulse_mass_within(&p, 20) > 0.9999);
        let slow = DetectorParams { ap_decay_gates: 10.0, ..p };
        assert!(afterpulse_mass_within(&slow, 20) < MIN_AP_MASS);
        assert!(characterize(&slow, &GateClock::swg(), &short(1000), StreamKey::root(1)).is_err());
    }

    #[test]
    fn noiseless_detector_recovers_pde() {
        let p = DetectorParams::ideal("ideal", 0.6);
        let r = characterize(&p, &GateClock::swg(), &short(2_000_000), StreamKey::root(8)).unwrap();
        assert!(r.pde.z(0.6) < 3.0, "{:?}", r.pde);
        assert_eq!(r.dcr_cps.value, 0.0);
        assert!(r.p_ap.z(0.0) < 3.0 || r.p_ap.value == 0.0);
    }

    #[test]
    fn closed_loop_on_one_table_row() {
        let p = table::params(DetectorKind::Swg, 5).unwrap();
        let r = characterize(&p, &GateClock::swg(), &short(2_000_000), StreamKey::root(12)).unwrap();
        assert!(r.pde.z(p.pde) < 3.0, "pde {:?}", r.pde);
        assert!(r.p_ap.z(p.p_ap) < 3.0, "p_ap {:?}", r.p_ap);
        assert!(r.dcr_cps.z(p.dcr_cps) < 3.0, "dcr {:?}", r.dcr_cps);
    }
}
