//! Kaiser-window linear-phase FIR design and magnitude evaluation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Extra attenuation designed in beyond the required rejection.
const DESIGN_MARGIN_DB: f64 = 6.0;
/// Frequency grid spacing used to verify a design.
const CHECK_STEP_HZ: f64 = 0.25e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FilterSpec {
    /// Rejects `stop_hz`; unity outside `pass_hz`.
    Bandstop {
        stop_hz: [f64; 2],
        pass_hz: [f64; 2],
        min_rejection_db: f64,
        #[serde(default = "default_ripple")]
        ripple_db: f64,
    },
    /// Unity up to `pass_edge_hz`, half-amplitude point at `cutoff_hz`, and at
    /// least `min_rejection_db` from the mirrored edge `2·cutoff − pass_edge`.
    Lowpass {
        cutoff_hz: f64,
        pass_edge_hz: f64,
        min_rejection_db: f64,
        #[serde(default = "default_ripple")]
        ripple_db: f64,
    },
}

fn default_ripple() -> f64 {
    1.0
}

impl FilterSpec {
    /// 150–170 MHz stop band, 48 dB, pass band edges at 120 and 200 MHz.
    pub fn gate_bandstop() -> Self {
        FilterSpec::Bandstop {
            stop_hz: [150e6, 170e6],
            pass_hz: [120e6, 200e6],
            min_rejection_db: 48.0,
            ripple_db: 1.0,
        }
    }

    /// 116 MHz cutoff, flat to 105 MHz.
    pub fn avalanche_lowpass() -> Self {
        FilterSpec::Lowpass {
            cutoff_hz: 116e6,
            pass_edge_hz: 105e6,
            min_rejection_db: 30.0,
            ripple_db: 1.0,
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        let ok = match *self {
            FilterSpec::Bandstop { stop_hz, pass_hz, min_rejection_db, ripple_db } => {
                0.0 < pass_hz[0]
                    && pass_hz[0] < stop_hz[0]
                    && stop_hz[0] < stop_hz[1]
                    && stop_hz[1] < pass_hz[1]
                    && pass_hz[1] < nyquist
                    && min_rejection_db > 0.0
                    && ripple_db > 0.0
            }
            FilterSpec::Lowpass { cutoff_hz, pass_edge_hz, min_rejection_db, ripple_db } => {
                0.0 < pass_edge_hz
                    && pass_edge_hz < cutoff_hz
                    && 2.0 * cutoff_hz - pass_edge_hz < nyquist
                    && min_rejection_db > 0.0
                    && ripple_db > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("filter", format!("inconsistent band edges or limits for {sample_rate_hz} Hz sampling")))
        }
    }

    fn min_rejection_db(&self) -> f64 {
        match *self {
            FilterSpec::Bandstop { min_rejection_db, .. } | FilterSpec::Lowpass { min_rejection_db, .. } => {
                min_rejection_db
            }
        }
    }

    /// Narrowest transition band (Hz).
    fn transition_hz(&self) -> f64 {
        match *self {
            FilterSpec::Bandstop { stop_hz, pass_hz, .. } => (stop_hz[0] - pass_hz[0]).min(pass_hz[1] - stop_hz[1]),
            FilterSpec::Lowpass { cutoff_hz, pass_edge_hz, .. } => 2.0 * (cutoff_hz - pass_edge_hz),
        }
    }
}

/// Symmetric (type I) FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Fir {
    pub taps: Vec<f64>,
    pub sample_rate_hz: f64,
    pub spec: FilterSpec,
}

impl Fir {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Samples of delay compensated by centered convolution.
    pub fn half_len(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.taps.len();
        (0..n / 2).all(|k| self.taps[k] == self.taps[n - 1 - k])
    }

    /// `|H(f)|`, evaluated directly from the taps.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let m = self.half_len();
        // zero-phase amplitude of a symmetric filter
        let mut a = self.taps[m];
        for k in 0..m {
            a += 2.0 * self.taps[k] * (w * (m - k) as f64).cos();
        }
        a.abs()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).max(1e-300).log10()
    }

    /// Worst stop-band rejection (dB, positive) and worst pass-band deviation
    /// (dB) on a dense grid.
    pub fn measure(&self) -> (f64, f64) {
        let nyquist = self.sample_rate_hz / 2.0;
        let grid = |lo: f64, hi: f64| {
            let n = ((hi - lo) / CHECK_STEP_HZ).ceil().max(1.0) as usize;
            (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
        };
        let worst_stop = |lo, hi| grid(lo, hi).map(|f| -self.magnitude_db(f)).fold(f64::INFINITY, f64::min);
        let worst_pass = |lo, hi| grid(lo, hi).map(|f| self.magnitude_db(f).abs()).fold(0.0, f64::max);
        match self.spec {
            FilterSpec::Bandstop { stop_hz, pass_hz, .. } => (
                worst_stop(stop_hz[0], stop_hz[1]),
                worst_pass(0.0, pass_hz[0]).max(worst_pass(pass_hz[1], nyquist)),
            ),
            FilterSpec::Lowpass { cutoff_hz, pass_edge_hz, .. } => (
                worst_stop(2.0 * cutoff_hz - pass_edge_hz, nyquist),
                worst_pass(0.0, pass_edge_hz),
            ),
        }
    }
}

/// Zeroth-order modified Bessel function of the first kind.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

fn kaiser_window(n: usize, beta: f64) -> Vec<f64> {
    let m = (n - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    (0..n)
        .map(|i| {
            let r = (i as f64 - m) / m;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect()
}

/// Ideal lowpass impulse response with cutoff `fc` (cycles/sample), centred.
fn ideal_lowpass(n: usize, fc: f64) -> Vec<f64> {
    let m = (n - 1) as f64 / 2.0;
    (0..n)
        .map(|i| {
            let x = i as f64 - m;
            if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            }
        })
        .collect()
}

fn taps_for(spec: &FilterSpec, n: usize, fs: f64, atten_db: f64) -> Vec<f64> {
    let window = kaiser_window(n, kaiser_beta(atten_db));
    let ideal: Vec<f64> = match *spec {
        FilterSpec::Bandstop { stop_hz, pass_hz, .. } => {
            let lo = (pass_hz[0] + stop_hz[0]) / 2.0 / fs;
            let hi = (stop_hz[1] + pass_hz[1]) / 2.0 / fs;
            let (a, b) = (ideal_lowpass(n, lo), ideal_lowpass(n, hi));
            let m = (n - 1) / 2;
            (0..n)
                .map(|i| (i == m) as u8 as f64 - (b[i] - a[i]))
                .collect()
        }
        FilterSpec::Lowpass { cutoff_hz, .. } => ideal_lowpass(n, cutoff_hz / fs),
    };
    ideal.iter().zip(&window).map(|(h, w)| h * w).collect()
}

/// Designs the shortest Kaiser FIR (searching upward from the textbook length
/// estimate) whose measured response meets `spec`.
pub fn design_filter(spec: &FilterSpec, sample_rate_hz: f64, max_taps: usize) -> Result<Fir> {
    spec.validate(sample_rate_hz)?;
    let atten = spec.min_rejection_db() + DESIGN_MARGIN_DB;
    let dw = 2.0 * PI * spec.transition_hz() / sample_rate_hz;
    let estimate = ((atten - 8.0) / (2.285 * dw)).ceil() as usize + 1;
    let mut n = estimate | 1;
    let (pass_limit, stop_limit) = match *spec {
        FilterSpec::Bandstop { ripple_db, min_rejection_db, .. }
        | FilterSpec::Lowpass { ripple_db, min_rejection_db, .. } => (ripple_db, min_rejection_db),
    };
    let mut last = (0.0, 0.0);
    while n <= max_taps {
        let fir = Fir {
            taps: taps_for(spec, n, sample_rate_hz, atten),
            sample_rate_hz,
            spec: *spec,
        };
        last = fir.measure();
        if last.0 >= stop_limit && last.1 <= pass_limit {
            return Ok(fir);
        }
        n = ((n as f64 * 1.1) as usize) | 1;
    }
    Err(Error::UnmeetableFilter {
        max_taps,
        reason: format!(
            "best rejection {:.1} dB (need {stop_limit}), ripple {:.2} dB (limit {pass_limit})",
            last.0, last.1
        ),
    })
}
