//! FMCW chirp parameters, dechirped beat-signal synthesis, burst timing, and
//! range compression.
//!
//! The dechirped echo of a scatterer at total two-way path `R` is a complex
//! baseband tone: `s[n] = A * exp(-j*2*pi*(f_start + slope*t_n)*tau)` with
//! `tau = R/c + extra_delay` and sampling instants `t_n = n*T/(N-1)` spanning
//! the full pulse inclusively. The residual video phase term
//! `pi*slope*tau^2` is not modeled; at a 3 m path it is below 7e-3 cycles.
//! Range compression evaluates the matched correlation
//! `sum_n s[n] * exp(+j*2*pi*f*(t_n - T/2))` on a grid of
//! `(n_samples-1)*upsample` frequencies, so the bin spacing in total path is
//! exactly `c/(B*upsample)` and the value at a scatterer's bin carries the
//! phase `-2*pi*f_center*tau` that back projection compensates.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::{C64, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq)]
pub struct ChirpParams {
    /// Sweep start frequency (Hz).
    pub f_start: f64,
    /// Sweep stop frequency (Hz).
    pub f_stop: f64,
    /// Active sweep duration (s).
    pub pulse_width: f64,
    /// Pulse recurrent time (s).
    pub prt: f64,
    /// Fast-time samples per pulse.
    pub n_samples: usize,
}

impl Default for ChirpParams {
    fn default() -> Self {
        Self {
            f_start: 22e9,
            f_stop: 26e9,
            pulse_width: 30e-6,
            prt: 40e-6,
            n_samples: 201,
        }
    }
}

impl ChirpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_stop > self.f_start) {
            return Err(Error::Config("chirp: f_stop must exceed f_start".into()));
        }
        if !(self.prt >= self.pulse_width) || !(self.pulse_width > 0.0) {
            return Err(Error::Config("chirp: need prt >= pulse_width > 0".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("chirp: n_samples must be >= 2".into()));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.f_stop - self.f_start
    }

    /// Sweep rate B/T (Hz/s).
    pub fn slope(&self) -> f64 {
        self.bandwidth() / self.pulse_width
    }

    pub fn f_center(&self) -> f64 {
        0.5 * (self.f_start + self.f_stop)
    }

    pub fn wavelength_center(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_center()
    }

    /// Fast-time sample interval T/(N-1).
    pub fn sample_interval(&self) -> f64 {
        self.pulse_width / (self.n_samples - 1) as f64
    }

    /// Total-path extent that maps to the beat band without aliasing:
    /// `fs * c / slope = (n_samples - 1) * c / B`, about 15 m at defaults.
    pub fn unambiguous_path(&self) -> f64 {
        (self.n_samples - 1) as f64 * SPEED_OF_LIGHT / self.bandwidth()
    }

    /// Range-profile bin spacing in meters of total path.
    pub fn bin_spacing(&self, upsample: usize) -> f64 {
        SPEED_OF_LIGHT / (self.bandwidth() * upsample as f64)
    }
}

/// Beat frequency of a scatterer at the given total two-way path.
pub fn beat_frequency(total_path: f64, params: &ChirpParams) -> Result<f64> {
    if total_path < 0.0 {
        return Err(Error::Simulation(format!(
            "negative propagation path {total_path}"
        )));
    }
    Ok(params.slope() * total_path / SPEED_OF_LIGHT)
}

/// Accumulate the dechirped tone for one path into `buf` (length n_samples).
///
/// Uses a phasor recurrence: one complex multiply per sample after the two
/// trig evaluations, which is what keeps many-scatterer scenes tractable.
pub fn add_beat_signal(
    buf: &mut [C64],
    total_path: f64,
    amplitude: C64,
    extra_delay: f64,
    params: &ChirpParams,
) {
    debug_assert_eq!(buf.len(), params.n_samples);
    if amplitude == Complex64::ZERO {
        return;
    }
    let tau = total_path / SPEED_OF_LIGHT + extra_delay;
    let dt = params.sample_interval();
    let mut phasor = amplitude * Complex64::from_polar(1.0, -2.0 * PI * params.f_start * tau);
    let step = Complex64::from_polar(1.0, -2.0 * PI * params.slope() * tau * dt);
    for b in buf.iter_mut() {
        *b += phasor;
        phasor *= step;
    }
}

/// Dechirped beat signal for one path: `n_samples` complex baseband values.
pub fn sample_beat_signal(
    total_path: f64,
    amplitude: C64,
    extra_delay: f64,
    params: &ChirpParams,
) -> Vec<C64> {
    let mut buf = vec![Complex64::ZERO; params.n_samples];
    add_beat_signal(&mut buf, total_path, amplitude, extra_delay, params);
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    None,
    Hann,
}

impl Window {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "NONE" => Ok(Window::None),
            "hann" | "HANN" => Ok(Window::Hann),
            _ => Err(Error::Config(format!("unknown window `{s}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Window::None => "none",
            Window::Hann => "hann",
        }
    }

    fn coefficient(&self, n: usize, len: usize) -> f64 {
        match self {
            Window::None => 1.0,
            Window::Hann => {
                0.5 * (1.0 - (2.0 * PI * n as f64 / (len - 1) as f64).cos())
            }
        }
    }
}

/// Compressed range profile of one pulse.
#[derive(Debug, Clone)]
pub struct RangeProfile {
    pub bins: Vec<C64>,
    /// Meters of total two-way path per bin (one-way if `one_way` is set).
    pub bin_spacing: f64,
    pub upsample: usize,
    pub one_way: bool,
}

impl RangeProfile {
    pub fn path_at(&self, bin: f64) -> f64 {
        bin * self.bin_spacing
    }

    /// Linear interpolation of the complex profile at the given path.
    #[inline]
    pub fn sample_at_path(&self, path: f64) -> C64 {
        let u = path / self.bin_spacing;
        if u < 0.0 || u >= (self.bins.len() - 1) as f64 {
            return Complex64::ZERO;
        }
        let i = u as usize;
        let frac = u - i as f64;
        self.bins[i] * (1.0 - frac) + self.bins[i + 1] * frac
    }

    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        let mut best_mag = 0.0;
        for (i, b) in self.bins.iter().enumerate() {
            let m = b.norm_sqr();
            if m > best_mag {
                best_mag = m;
                best = i;
            }
        }
        best
    }

    /// Peak path refined by a three-point quadratic fit on the magnitude.
    pub fn peak_path_interpolated(&self) -> f64 {
        let k = self.peak_bin();
        if k == 0 || k + 1 >= self.bins.len() {
            return self.path_at(k as f64);
        }
        let m = |i: usize| self.bins[i].norm();
        let denom = m(k - 1) - 2.0 * m(k) + m(k + 1);
        let offset = if denom.abs() < f64::EPSILON {
            0.0
        } else {
            (0.5 * (m(k - 1) - m(k + 1)) / denom).clamp(-0.5, 0.5)
        };
        self.path_at(k as f64 + offset)
    }

    /// Profile-domain energy under the convention `sum |bins|^2 / n_bins`,
    /// which matches the fast-time energy for an unwindowed transform.
    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|b| b.norm_sqr()).sum::<f64>() / self.bins.len() as f64
    }
}

/// Pulse-compress dechirped fast-time samples into a range profile.
///
/// The transform grid has `(n_samples - 1) * upsample` bins so the path axis
/// lands exactly on `c/(B*upsample)` per bin; at upsample 1 the final sample
/// aliases onto bin zero of the length-(N-1) grid, which is the exact
/// evaluation of the correlation sum at those frequencies.
pub fn range_compress(
    samples: &[C64],
    params: &ChirpParams,
    window: Window,
    upsample: usize,
) -> Result<RangeProfile> {
    if !matches!(upsample, 1 | 2 | 4 | 8) {
        return Err(Error::Config(format!(
            "upsample must be one of 1, 2, 4, 8; got {upsample}"
        )));
    }
    if samples.len() != params.n_samples {
        return Err(Error::Config(format!(
            "expected {} fast-time samples, got {}",
            params.n_samples,
            samples.len()
        )));
    }
    let n_fft = (params.n_samples - 1) * upsample;
    let mut buf = vec![Complex64::ZERO; n_fft];
    for (n, &s) in samples.iter().enumerate() {
        buf[n % n_fft] += s * window.coefficient(n, samples.len());
    }

    // Inverse-kernel transform: bin k holds sum_n buf[n] e^{+j 2 pi k n / N}.
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n_fft).process(&mut buf);

    // Re-reference the phase to mid-pulse so a scatterer's bin carries
    // exp(-j 2 pi f_center tau) rather than exp(-j 2 pi f_start tau).
    for (k, b) in buf.iter_mut().enumerate() {
        *b *= Complex64::from_polar(1.0, -PI * k as f64 / upsample as f64);
    }

    Ok(RangeProfile {
        bins: buf,
        bin_spacing: params.bin_spacing(upsample),
        upsample,
        one_way: false,
    })
}

/// Per-slot transmit timestamps of one burst.
#[derive(Debug, Clone)]
pub struct BurstSchedule {
    pub slot_times: Vec<f64>,
    pub duration: f64,
}

pub fn burst_schedule(params: &ChirpParams, n_channels: usize) -> BurstSchedule {
    let slot_times = (0..n_channels).map(|k| k as f64 * params.prt).collect();
    BurstSchedule {
        slot_times,
        duration: n_channels as f64 * params.prt,
    }
}
