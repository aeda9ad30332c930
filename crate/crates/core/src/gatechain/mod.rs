//! Sampled-waveform model of the avalanche extraction chain of a sine-wave
//! gated detector.
//!
//! The gate sine couples into the readout through the diode capacitance
//! (a scaled time derivative), swamping the avalanche pulses. Two band-stop
//! filters around the gate frequency and one low-pass filter remove the
//! feedthrough; a comparator then picks out the avalanches.

mod fir;

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fir::{design_filter, Fir, FilterSpec};

use crate::rng::{Domain, StreamKey};
use crate::{Error, Result};

/// Lowest sample rate relative to the gate frequency.
const MIN_OVERSAMPLING: f64 = 8.0;
const CONV_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate_hz: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::param("sample_rate_hz", "must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("samples", "non-finite value"));
        }
        Ok(Waveform {
            sample_rate_hz,
            samples,
        })
    }

    pub fn zeros(sample_rate_hz: f64, len: usize) -> Self {
        Waveform {
            sample_rate_hz,
            samples: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate_hz
    }

    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        if other.len() != self.len() || other.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::param("waveform", "length or sample rate mismatch"));
        }
        Ok(Waveform {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        Waveform {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples[start.min(self.len())..end.min(self.len())].to_vec(),
        }
    }

    /// Amplitude of the `freq_hz` component by least-squares projection.
    pub fn tone_amplitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &y) in self.samples.iter().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += y * s;
            yc += y * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        a.hypot(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvalancheShape {
    pub amplitude_v: f64,
    pub rise_s: f64,
    pub decay_s: f64,
}

impl AvalancheShape {
    /// Time from onset to the pulse maximum.
    pub fn peak_time(&self) -> f64 {
        let (r, d) = (self.rise_s, self.decay_s);
        r * d / (d - r) * (d / r).ln()
    }

    fn unnormalized(&self, t: f64) -> f64 {
        (-t / self.decay_s).exp() - (-t / self.rise_s).exp()
    }

    /// Pulse value `t` seconds after onset.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.amplitude_v * self.unnormalized(t) / self.unnormalized(self.peak_time())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateChainParams {
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_gate_freq")]
    pub gate_freq_hz: f64,
    #[serde(default = "default_vpp")]
    pub gate_vpp: f64,
    /// Derivative-coupling scale (s), roughly load resistance × diode capacitance.
    #[serde(default = "default_coupling")]
    pub coupling_gain: f64,
    #[serde(default = "default_avalanche")]
    pub avalanche: AvalancheShape,
    /// Excess bias, carried as metadata.
    #[serde(default = "default_vex")]
    pub v_ex: f64,
    #[serde(default = "default_threshold")]
    pub threshold_v: f64,
    #[serde(default = "default_separation")]
    pub min_separation_s: f64,
    #[serde(default = "default_filters")]
    pub filters: Vec<FilterSpec>,
    #[serde(default = "default_max_taps")]
    pub max_taps: usize,
}

fn default_rate() -> f64 {
    10e9
}
fn default_gate_freq() -> f64 {
    152e6
}
fn default_vpp() -> f64 {
    50.0
}
fn default_coupling() -> f64 {
    8.5e-11
}
fn default_avalanche() -> AvalancheShape {
    AvalancheShape {
        amplitude_v: 0.2,
        rise_s: 1e-9,
        decay_s: 5e-9,
    }
}
fn default_vex() -> f64 {
    32.0
}
fn default_threshold() -> f64 {
    0.05
}
fn default_separation() -> f64 {
    20e-9
}
fn default_filters() -> Vec<FilterSpec> {
    vec![
        FilterSpec::gate_bandstop(),
        FilterSpec::gate_bandstop(),
        FilterSpec::avalanche_lowpass(),
    ]
}
fn default_max_taps() -> usize {
    8191
}

impl Default for GateChainParams {
    fn default() -> Self {
        GateChainParams {
            sample_rate_hz: default_rate(),
            gate_freq_hz: default_gate_freq(),
            gate_vpp: default_vpp(),
            coupling_gain: default_coupling(),
            avalanche: default_avalanche(),
            v_ex: default_vex(),
            threshold_v: default_threshold(),
            min_separation_s: default_separation(),
            filters: default_filters(),
            max_taps: default_max_taps(),
        }
    }
}

impl GateChainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_freq_hz > 0.0) {
            return Err(Error::param("gate_freq_hz", "must be positive"));
        }
        if self.sample_rate_hz < MIN_OVERSAMPLING * self.gate_freq_hz {
            return Err(Error::param(
                "sample_rate_hz",
                format!("must be at least {MIN_OVERSAMPLING}× the gate frequency"),
            ));
        }
        if !(self.gate_vpp > 0.0) {
            return Err(Error::param("gate_vpp", "must be positive"));
        }
        let a = &self.avalanche;
        if !(a.rise_s > 0.0 && a.rise_s < a.decay_s) {
            return Err(Error::param("avalanche", "need 0 < rise_s < decay_s"));
        }
        if !(self.threshold_v > 0.0) {
            return Err(Error::param("threshold_v", "must be positive"));
        }
        if !(self.min_separation_s >= 0.0) {
            return Err(Error::param("min_separation_s", "must be non-negative"));
        }
        for f in &self.filters {
            f.validate(self.sample_rate_hz)?;
        }
        Ok(())
    }

    pub fn gate_period_s(&self) -> f64 {
        1.0 / self.gate_freq_hz
    }

    /// Time of the `k`-th gate crest.
    pub fn crest_time(&self, k: u64) -> f64 {
        (k as f64 + 0.25) / self.gate_freq_hz
    }
}

/// Sine gate `(Vpp/2)·sin(2πft)` sampled over `duration_s`.
pub fn synth_gate(p: &GateChainParams, duration_s: f64) -> Result<Waveform> {
    p.validate()?;
    if duration_s < 10.0 * p.gate_period_s() {
        return Err(Error::param("duration_s", "must cover at least 10 gate periods"));
    }
    let n = (duration_s * p.sample_rate_hz).round() as usize;
    let w = 2.0 * PI * p.gate_freq_hz / p.sample_rate_hz;
    let amp = p.gate_vpp / 2.0;
    Waveform::new(p.sample_rate_hz, (0..n).map(|i| amp * (w * i as f64).sin()).collect())
}

/// `coupling_gain · dV/dt`, by central differences (one-sided at the ends).
pub fn capacitive_feedthrough(gate: &Waveform, coupling_gain: f64) -> Waveform {
    let x = &gate.samples;
    let n = x.len();
    let fs = gate.sample_rate_hz;
    let samples = (0..n)
        .map(|i| {
            let d = match (i, n) {
                (_, 0 | 1) => 0.0,
                (0, _) => (x[1] - x[0]) * fs,
                (i, n) if i == n - 1 => (x[i] - x[i - 1]) * fs,
                (i, _) => (x[i + 1] - x[i - 1]) * fs / 2.0,
            };
            coupling_gain * d
        })
        .collect();
    Waveform {
        sample_rate_hz: fs,
        samples,
    }
}

/// Adds one avalanche pulse with onset at `t0_s`.
pub fn add_avalanche(w: &Waveform, t0_s: f64, shape: &AvalancheShape) -> Result<Waveform> {
    if !(t0_s >= 0.0 && t0_s < w.duration_s()) {
        return Err(Error::param("t0_s", "onset outside the waveform"));
    }
    let mut out = w.clone();
    if shape.amplitude_v == 0.0 {
        return Ok(out);
    }
    let first = (t0_s * w.sample_rate_hz).ceil() as usize;
    // the pulse is below 1e-12 of its peak after ~28 decay constants
    let last = ((t0_s + 28.0 * shape.decay_s) * w.sample_rate_hz).ceil() as usize;
    for i in first..last.min(w.len()) {
        out.samples[i] += shape.value(w.time(i) - t0_s);
    }
    Ok(out)
}

/// Centered ("same" length) convolution with zero padding. Each output sample
/// is an independent sum in a fixed order, so the parallel result is
/// bit-identical to a serial one.
pub fn convolve(x: &Waveform, f: &Fir) -> Result<Waveform> {
    if f.sample_rate_hz != x.sample_rate_hz {
        return Err(Error::param("filter", "designed for a different sample rate"));
    }
    let m = f.half_len();
    let mut padded = vec![0.0; x.len() + 2 * m];
    padded[m..m + x.len()].copy_from_slice(&x.samples);
    let h = &f.taps;
    let mut y = vec![0.0; x.len()];
    y.par_chunks_mut(CONV_CHUNK).enumerate().for_each(|(c, out)| {
        for (j, v) in out.iter_mut().enumerate() {
            *v = symmetric_dot(h, &padded, c * CONV_CHUNK + j, m);
        }
    });
    Ok(Waveform {
        sample_rate_hz: x.sample_rate_hz,
        samples: y,
    })
}

/// Serial reference for [`convolve`].
pub fn convolve_serial(x: &Waveform, f: &Fir) -> Waveform {
    let m = f.half_len();
    let mut padded = vec![0.0; x.len() + 2 * m];
    padded[m..m + x.len()].copy_from_slice(&x.samples);
    Waveform {
        sample_rate_hz: x.sample_rate_hz,
        samples: (0..x.len()).map(|n| symmetric_dot(&f.taps, &padded, n, m)).collect(),
    }
}

#[inline]
fn symmetric_dot(h: &[f64], padded: &[f64], n: usize, m: usize) -> f64 {
    // y[n] = Σ_k h[k]·x[n + m − k], with x[i] = padded[i + m]
    let win = &padded[n..n + 2 * m + 1];
    let mut acc = h[m] * win[m];
    for k in 0..m {
        acc += h[k] * (win[2 * m - k] + win[k]);
    }
    acc
}

/// Applies the filters in order.
pub fn apply_chain(w: &Waveform, chain: &[Fir]) -> Result<Waveform> {
    let mut out = w.clone();
    for f in chain {
        out = convolve(&out, f)?;
    }
    Ok(out)
}

/// Designs every filter of `p.filters` at the parameter sample rate.
pub fn design_chain(p: &GateChainParams) -> Result<Vec<Fir>> {
    p.filters
        .iter()
        .map(|s| design_filter(s, p.sample_rate_hz, p.max_taps))
        .collect()
}

/// Samples at each end whose output depends on the zero padding.
pub fn settling_samples(chain: &[Fir]) -> usize {
    chain.iter().map(Fir::half_len).sum()
}

/// Product of the filters' magnitudes, in dB.
pub fn cascade_response_db(chain: &[Fir], freq_hz: f64) -> f64 {
    chain.iter().map(|f| f.magnitude_db(freq_hz)).sum()
}

/// Rising threshold crossings, ignoring any within `min_separation_s` of the
/// previous accepted click.
pub fn discriminate(w: &Waveform, threshold_v: f64, min_separation_s: f64) -> Vec<f64> {
    let mut clicks = Vec::new();
    let mut last: Option<f64> = None;
    for i in 1..w.len() {
        if w.samples[i - 1] < threshold_v && w.samples[i] >= threshold_v {
            let t = w.time(i);
            if last.is_none_or(|l| t - l >= min_separation_s) {
                clicks.push(t);
                last = Some(t);
            }
        }
    }
    clicks
}

/// Outcome of an end-to-end extraction run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionRun {
    pub n_gates: u64,
    /// Avalanche onsets, relative to the start of the analyzed window.
    pub injected_s: Vec<f64>,
    pub clicks_s: Vec<f64>,
    pub matched: usize,
    pub missed: usize,
    pub false_clicks: usize,
    /// Cascade attenuation at the gate frequency from the designed responses.
    pub rejection_db: f64,
    /// Gate-tone attenuation measured on the filtered feedthrough.
    pub measured_rejection_db: f64,
    pub feedthrough_peak_before_v: f64,
    pub feedthrough_peak_after_v: f64,
    pub avalanche_peak_after_v: f64,
    pub filter_taps: Vec<usize>,
    #[serde(skip)]
    pub stages: Option<Stages>,
}

/// Gate, detector output and filtered output over the analyzed window.
#[derive(Debug, Clone, PartialEq)]
pub struct Stages {
    pub gate: Waveform,
    pub raw: Waveform,
    pub filtered: Waveform,
}

/// Simulates `n_gates` gates with one avalanche at a random gate crest in
/// every block of `gates_per_avalanche` gates (none when 0), filters and
/// discriminates.
pub fn run_extraction(
    p: &GateChainParams,
    n_gates: u64,
    gates_per_avalanche: u64,
    key: StreamKey,
    keep_stages: bool,
) -> Result<ExtractionRun> {
    p.validate()?;
    let chain = design_chain(p)?;
    let settle = settling_samples(&chain);
    let period = p.gate_period_s();
    let pad_gates = (settle as f64 / p.sample_rate_hz / period).ceil() as u64 + 1;
    let total_gates = n_gates + 2 * pad_gates;
    let gate = synth_gate(p, total_gates as f64 * period)?;
    let feed = capacitive_feedthrough(&gate, p.coupling_gain);

    // avalanches keep a margin from block edges so neighbours stay separated
    let mut onsets = Vec::new();
    if gates_per_avalanche > 0 {
        let margin = (gates_per_avalanche / 10).min(gates_per_avalanche / 2);
        let span = gates_per_avalanche - 2 * margin;
        let key = key.derive(Domain::Avalanche, 0);
        for block in 0..n_gates / gates_per_avalanche {
            let mut rng = key.block(block);
            let k = block * gates_per_avalanche + margin + rng.random_range(0..span.max(1));
            onsets.push(p.crest_time(pad_gates + k));
        }
    }
    let mut avalanches = Waveform::zeros(p.sample_rate_hz, gate.len());
    for &t in &onsets {
        avalanches = add_avalanche(&avalanches, t, &p.avalanche)?;
    }
    let raw = feed.add(&avalanches)?;

    let filtered_feed = apply_chain(&feed, &chain)?;
    let filtered_aval = apply_chain(&avalanches, &chain)?;
    let filtered = filtered_feed.add(&filtered_aval)?;

    let start = (pad_gates as f64 * period * p.sample_rate_hz).round() as usize;
    let end = start + (n_gates as f64 * period * p.sample_rate_hz).round() as usize;
    let t_start = start as f64 / p.sample_rate_hz;
    let window = filtered.slice(start, end);
    let clicks: Vec<f64> = discriminate(&window, p.threshold_v, p.min_separation_s);
    let injected: Vec<f64> = onsets.iter().map(|t| t - t_start).collect();

    // a click belongs to an avalanche if it falls within a few pulse widths of its onset
    let before = 2.0 * p.avalanche.decay_s;
    let after = 4.0 * p.avalanche.decay_s;
    let mut matched = 0;
    let mut used = vec![false; clicks.len()];
    for &t0 in &injected {
        if let Some(j) = (0..clicks.len()).find(|&j| !used[j] && clicks[j] >= t0 - before && clicks[j] <= t0 + after) {
            used[j] = true;
            matched += 1;
        }
    }
    let false_clicks = used.iter().filter(|u| !**u).count();
    let feed_window = filtered_feed.slice(start, end);
    let measured_rejection_db = 20.0
        * (feed_window.tone_amplitude(p.gate_freq_hz).max(1e-300)
            / feed.slice(start, end).tone_amplitude(p.gate_freq_hz))
        .log10();
    let stages = keep_stages.then(|| Stages {
        gate: gate.slice(start, end),
        raw: raw.slice(start, end),
        filtered: window.clone(),
    });
    Ok(ExtractionRun {
        n_gates,
        matched,
        missed: injected.len() - matched,
        false_clicks,
        injected_s: injected,
        clicks_s: clicks,
        rejection_db: -cascade_response_db(&chain, p.gate_freq_hz),
        measured_rejection_db: -measured_rejection_db,
        feedthrough_peak_before_v: feed.slice(start, end).peak_abs(),
        feedthrough_peak_after_v: feed_window.peak_abs(),
        avalanche_peak_after_v: filtered_aval.slice(start, end).max(),
        filter_taps: chain.iter().map(Fir::len).collect(),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn params() -> GateChainParams {
        GateChainParams::default()
    }

    #[test]
    fn gate_amplitude_and_length() {
        let g = synth_gate(&params(), 1e-6).unwrap();
        assert_eq!(g.len(), 10_000);
        // a sample lands within 0.1 ns of every crest; check the analytic range instead
        let p = params();
        let fine = GateChainParams { sample_rate_hz: 1.52e12, ..p };
        let g = synth_gate(&fine, 20.0 / 152e6).unwrap();
        assert!(((g.max() - g.min()) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn undersampled_and_short_gates_rejected() {
        let p = GateChainParams { sample_rate_hz: 1e9, ..params() };
        assert!(synth_gate(&p, 1e-6).is_err());
        assert!(synth_gate(&params(), 5e-9).is_err());
    }

    #[test]
    fn gate_is_a_pure_tone() {
        // 125 000 samples hold exactly 1900 periods
        let g = synth_gate(&params(), 12.5e-6).unwrap();
        assert_eq!(g.len(), 125_000);
        let mut buf: Vec<Complex<f64>> = g.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let mags: Vec<f64> = buf[..buf.len() / 2].iter().map(|c| c.norm()).collect();
        let (peak_bin, peak) = mags.iter().enumerate().fold((0, 0.0), |a, (i, &m)| if m > a.1 { (i, m) } else { a });
        assert_eq!(peak_bin, 1900);
        let worst = mags.iter().enumerate().filter(|(i, _)| *i != 1900).map(|(_, &m)| m).fold(0.0, f64::max);
        assert!(20.0 * (worst / peak).log10() <= -100.0);
    }

    #[test]
    fn feedthrough_examples() {
        let dc = Waveform::new(10e9, vec![3.0; 100]).unwrap();
        assert!(capacitive_feedthrough(&dc, 1e-10).samples.iter().all(|&v| v == 0.0));

        let g = synth_gate(&params(), 12.5e-6).unwrap();
        let a = capacitive_feedthrough(&g, 1e-10);
        let b = capacitive_feedthrough(&g, 2e-10);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        // interior: cosine of the same frequency, amplitude g·A·sin(ωT)/T
        let w = 2.0 * PI * 152e6 / 10e9;
        let amp = 1e-10 * 25.0 * w.sin() * 10e9;
        for i in 1..1000 {
            let expect = amp * (w * i as f64).cos();
            assert!((a.samples[i] - expect).abs() < 1e-9, "{i}");
        }
        let inner = a.slice(1, a.len() - 1);
        assert!((inner.tone_amplitude(152e6) - amp).abs() < 1e-6 * amp);
    }

    #[test]
    fn avalanche_examples() {
        let p = params();
        let w = Waveform::zeros(10e9, 1000);
        let zero = AvalancheShape { amplitude_v: 0.0, ..p.avalanche };
        assert_eq!(add_avalanche(&w, 10e-9, &zero).unwrap(), w);
        let one = add_avalanche(&w, 10e-9, &p.avalanche).unwrap();
        assert!((one.max() - 0.2).abs() < 0.01 * 0.2);
        let twice = add_avalanche(&one, 10e-9, &p.avalanche).unwrap();
        let doubled = AvalancheShape { amplitude_v: 0.4, ..p.avalanche };
        let big = add_avalanche(&w, 10e-9, &doubled).unwrap();
        for (x, y) in twice.samples.iter().zip(&big.samples) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(add_avalanche(&w, 1e-6, &p.avalanche).is_err());
        // closed-form maximum: derivative vanishes at the peak time
        let s = p.avalanche;
        let tp = s.peak_time();
        assert!((s.value(tp) - 0.2).abs() < 1e-15);
        assert!(s.value(tp - 1e-12) < s.value(tp) && s.value(tp + 1e-12) < s.value(tp));
    }

    #[test]
    fn parallel_convolution_is_bit_exact() {
        let f = design_filter(&FilterSpec::avalanche_lowpass(), 10e9, 8191).unwrap();
        let mut rng = StreamKey::root(3).block(0);
        let x = Waveform::new(10e9, (0..20_000).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let par = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = par.install(|| convolve(&x, &f).unwrap());
        assert_eq!(a, convolve_serial(&x, &f));
    }

    #[test]
    fn convolution_matches_definition() {
        let f = Fir {
            taps: vec![0.25, 0.5, 0.25],
            sample_rate_hz: 1.0,
            spec: FilterSpec::avalanche_lowpass(),
        };
        let x = Waveform::new(1.0, vec![0.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(convolve(&x, &f).unwrap().samples, vec![1.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn chain_is_linear_and_zero_preserving() {
        let p = params();
        let chain = design_chain(&p).unwrap();
        let mut rng = StreamKey::root(9).block(0);
        let a = Waveform::new(10e9, (0..8000).map(|_| rng.random::<f64>()).collect()).unwrap();
        let b = capacitive_feedthrough(&synth_gate(&p, 0.8e-6).unwrap(), p.coupling_gain);
        let sum = apply_chain(&a.add(&b).unwrap(), &chain).unwrap();
        let parts = apply_chain(&a, &chain).unwrap().add(&apply_chain(&b, &chain).unwrap()).unwrap();
        let scale = sum.peak_abs().max(1.0);
        for (x, y) in sum.samples.iter().zip(&parts.samples) {
            assert!((x - y).abs() <= 1e-9 * scale);
        }
        let zero = Waveform::zeros(10e9, 5000);
        assert!(apply_chain(&zero, &chain).unwrap().samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cascade_rejects_gate_tone() {
        let chain = design_chain(&params()).unwrap();
        assert!(-cascade_response_db(&chain, 152e6) >= 96.0);
        assert!(chain.iter().all(Fir::is_symmetric));
    }

    #[test]
    fn discriminator_rules() {
        let w = Waveform::new(1e9, vec![0.0, 0.1, 0.0, 0.2, 0.0, 0.2, 0.0]).unwrap();
        assert!(discriminate(&w, 0.5, 0.0).is_empty());
        assert_eq!(discriminate(&w, 0.15, 0.0).len(), 2);
        // crossings 2 ns apart merge under a 5 ns refractory period
        assert_eq!(discriminate(&w, 0.15, 5e-9).len(), 1);
    }

    #[test]
    fn no_avalanches_no_clicks() {
        let r = run_extraction(&params(), 500, 0, StreamKey::root(1), false).unwrap();
        assert!(r.clicks_s.is_empty());
        assert!(r.feedthrough_peak_before_v > 10.0 * params().avalanche.amplitude_v);
        assert!(r.feedthrough_peak_after_v < params().threshold_v);
    }

    #[test]
    fn short_run_recovers_every_avalanche() {
        let r = run_extraction(&params(), 1000, 100, StreamKey::root(2), true).unwrap();
        assert_eq!(r.injected_s.len(), 10);
        assert_eq!(r.matched, 10);
        assert_eq!(r.false_clicks, 0);
        assert!(r.avalanche_peak_after_v > params().threshold_v);
        assert!(r.stages.is_some());
    }
}
