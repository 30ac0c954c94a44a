//! Synthetic echo generation: point-scatterer scenes on a moving trajectory
//! observed through the time-multiplexed MIMO array.
//!
//! Each pulse is the superposition over scatterers of the dechirped tone for
//! the exact bistatic path from the (perturbed) Tx and Rx phase centers to
//! the scatterer's scene-frame position at that pulse's own timestamp. The
//! target is frozen within a single 30 us pulse but moves between the 128
//! pulses of a burst.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::arraygeom::{ArrayGeometry, VirtualChannel, N_TX};
use crate::error::{Error, Result};
use crate::waveform::{burst_schedule, ChirpParams};
use crate::{C64, SPEED_OF_LIGHT, Vec3};

/// One point scatterer in the target-fixed frame.
#[derive(Debug, Clone, Copy)]
pub struct Scatterer {
    pub position: Vec3,
    pub reflectivity: C64,
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
}

impl Scene {
    pub fn point(position: Vec3, reflectivity: C64) -> Self {
        Scene {
            scatterers: vec![Scatterer {
                position,
                reflectivity,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

/// Target-frame origin track in scene coordinates, piecewise linear in time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Tracking("empty trajectory".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Tracking(
                    "trajectory timestamps must be strictly increasing".into(),
                ));
            }
        }
        Ok(Trajectory { samples })
    }

    /// Constant-velocity track spanning `[t_start, t_end]`, with `start`
    /// being the position at time zero.
    pub fn linear(start: Vec3, velocity: Vec3, t_start: f64, t_end: f64) -> Result<Self> {
        Trajectory::new(vec![
            TrajectorySample {
                t: t_start,
                position: start + velocity * t_start,
                velocity,
            },
            TrajectorySample {
                t: t_end,
                position: start + velocity * t_end,
                velocity,
            },
        ])
    }

    /// Fixed position covering any realistic observation interval.
    pub fn stationary(position: Vec3) -> Self {
        Trajectory::linear(position, Vec3::zeros(), -1e9, 1e9).unwrap()
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn span(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    pub fn covers(&self, t: f64) -> bool {
        let (t0, t1) = self.span();
        t >= t0 && t <= t1
    }

    fn segment(&self, t: f64) -> Result<(&TrajectorySample, &TrajectorySample, f64)> {
        if !self.covers(t) {
            let (t0, t1) = self.span();
            return Err(Error::Tracking(format!(
                "timestamp {t} outside trajectory span [{t0}, {t1}]"
            )));
        }
        let idx = match self
            .samples
            .binary_search_by(|s| s.t.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.samples.len() - 2),
            Err(i) => (i - 1).min(self.samples.len() - 2),
        };
        let a = &self.samples[idx];
        let b = &self.samples[idx + 1];
        Ok((a, b, (t - a.t) / (b.t - a.t)))
    }

    pub fn position_at(&self, t: f64) -> Result<Vec3> {
        let (a, b, f) = self.segment(t)?;
        Ok(a.position + (b.position - a.position) * f)
    }

    pub fn velocity_at(&self, t: f64) -> Result<Vec3> {
        let (a, b, _) = self.segment(t)?;
        Ok((b.position - a.position) / (b.t - a.t))
    }
}

/// Per-antenna channel imperfections, flat-indexed: 0..8 Tx, 8..24 Rx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelError {
    /// Linear amplitude scale, > 0.
    pub amplitude: f64,
    /// Phase imbalance (rad).
    pub phase: f64,
    /// Delay error (s).
    pub delay: f64,
    /// Phase-center offset (m).
    pub position_offset: Vec3,
}

impl ChannelError {
    pub fn identity() -> Self {
        ChannelError {
            amplitude: 1.0,
            phase: 0.0,
            delay: 0.0,
            position_offset: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelErrorModel {
    pub entries: Vec<ChannelError>,
}

impl ChannelErrorModel {
    pub fn identity() -> Self {
        ChannelErrorModel {
            entries: vec![ChannelError::identity(); 24],
        }
    }

    /// Gaussian draws around the identity: relative amplitude, phase (rad),
    /// delay (s), and isotropic position offset (m per axis).
    pub fn random(
        sigma_amplitude: f64,
        sigma_phase: f64,
        sigma_delay: f64,
        sigma_position: f64,
        seed: u64,
    ) -> Self {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let entries = (0..24)
            .map(|_| ChannelError {
                amplitude: (1.0 + sigma_amplitude * gauss.sample(&mut rng)).max(0.05),
                phase: sigma_phase * gauss.sample(&mut rng),
                delay: sigma_delay * gauss.sample(&mut rng),
                position_offset: Vec3::new(
                    sigma_position * gauss.sample(&mut rng),
                    sigma_position * gauss.sample(&mut rng),
                    sigma_position * gauss.sample(&mut rng),
                ),
            })
            .collect();
        ChannelErrorModel { entries }
    }

    pub fn validate(&self, n_antennas: usize) -> Result<()> {
        if self.entries.len() != n_antennas {
            return Err(Error::Simulation(format!(
                "error model has {} entries, geometry has {} antennas",
                self.entries.len(),
                n_antennas
            )));
        }
        if self.entries.iter().any(|e| !(e.amplitude > 0.0)) {
            return Err(Error::Simulation("amplitude scales must be positive".into()));
        }
        Ok(())
    }

    pub fn tx(&self, i: usize) -> &ChannelError {
        &self.entries[i]
    }

    pub fn rx(&self, j: usize) -> &ChannelError {
        &self.entries[N_TX + j]
    }

    pub fn is_identity(&self) -> bool {
        self.entries.iter().all(|e| *e == ChannelError::identity())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Include the 1/(R_t * R_r) spreading factor. Off by default: the
    /// forward model carries no amplitude decay unless asked for.
    pub spreading_loss: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            spreading_loss: false,
        }
    }
}

/// Dechirped samples for every (burst, channel) pulse plus acquisition
/// metadata. Data is stored burst-major, then channel, then fast-time.
#[derive(Debug, Clone)]
pub struct RawDataCube {
    pub data: Vec<C64>,
    pub n_bursts: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub burst_interval: f64,
    pub params: ChirpParams,
    pub geometry_fingerprint: [u8; 32],
    pub spreading_loss: bool,
    /// Seed recorded when noise was injected.
    pub noise_seed: Option<u64>,
    /// Set when some echo path exceeded the unambiguous span during
    /// synthesis. In-memory metadata only; not part of the file format.
    pub aliased: bool,
}

impl RawDataCube {
    pub fn zeros(
        n_bursts: usize,
        n_channels: usize,
        params: &ChirpParams,
        burst_interval: f64,
        geometry_fingerprint: [u8; 32],
    ) -> Self {
        RawDataCube {
            data: vec![Complex64::ZERO; n_bursts * n_channels * params.n_samples],
            n_bursts,
            n_channels,
            n_samples: params.n_samples,
            burst_interval,
            params: params.clone(),
            geometry_fingerprint,
            spreading_loss: false,
            noise_seed: None,
            aliased: false,
        }
    }

    pub fn n_pulses(&self) -> usize {
        self.n_bursts * self.n_channels
    }

    pub fn pulse(&self, burst: usize, channel: usize) -> &[C64] {
        let start = (burst * self.n_channels + channel) * self.n_samples;
        &self.data[start..start + self.n_samples]
    }

    pub fn pulse_mut(&mut self, burst: usize, channel: usize) -> &mut [C64] {
        let start = (burst * self.n_channels + channel) * self.n_samples;
        &mut self.data[start..start + self.n_samples]
    }

    /// Timestamp of the pulse at (burst, sequence slot).
    pub fn pulse_time(&self, burst: usize, channel: usize) -> f64 {
        burst as f64 * self.burst_interval + channel as f64 * self.params.prt
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.n_bursts * self.n_channels * self.n_samples {
            return Err(Error::DataFormat("cube dimensions inconsistent".into()));
        }
        if self.data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numerical("cube contains non-finite samples".into()));
        }
        Ok(())
    }
}

/// Dechirped echo of the scene for one virtual channel, with the target
/// frame at `target_origin`.
pub fn simulate_pulse(
    scene: &Scene,
    target_origin: Vec3,
    vchannel: &VirtualChannel,
    geom: &ArrayGeometry,
    errors: &ChannelErrorModel,
    params: &ChirpParams,
    opts: &SimOptions,
) -> Result<Vec<C64>> {
    let mut buf = vec![Complex64::ZERO; params.n_samples];
    let _ = add_pulse(
        &mut buf,
        scene,
        target_origin,
        vchannel,
        geom,
        errors,
        params,
        opts,
    )?;
    Ok(buf)
}

/// Returns whether any echo path exceeded the unambiguous span.
#[allow(clippy::too_many_arguments)]
fn add_pulse(
    buf: &mut [C64],
    scene: &Scene,
    target_origin: Vec3,
    vchannel: &VirtualChannel,
    geom: &ArrayGeometry,
    errors: &ChannelErrorModel,
    params: &ChirpParams,
    opts: &SimOptions,
) -> Result<bool> {
    errors.validate(geom.n_antennas())?;
    let etx = errors.tx(vchannel.tx_index);
    let erx = errors.rx(vchannel.rx_index);
    let tx_pos = geom.tx[vchannel.tx_index].position + etx.position_offset;
    let rx_pos = geom.rx[vchannel.rx_index].position + erx.position_offset;
    let gain = etx.amplitude * erx.amplitude;
    let phase = Complex64::from_polar(1.0, etx.phase + erx.phase);
    let extra_delay = etx.delay + erx.delay;

    let dt = params.sample_interval();
    let two_pi = 2.0 * PI;
    let unambiguous = params.unambiguous_path();
    let mut aliased = false;

    // Per-scatterer phasor recurrences: initial value and per-sample step.
    let mut chains: Vec<(C64, C64)> = Vec::with_capacity(scene.scatterers.len());
    for sc in &scene.scatterers {
        let p = target_origin + sc.position;
        let r_t = (p - tx_pos).norm();
        let r_r = (p - rx_pos).norm();
        if r_t <= 0.0 || r_r <= 0.0 {
            return Err(Error::Simulation(
                "scatterer coincides with an antenna phase center".into(),
            ));
        }
        let mut amplitude = sc.reflectivity * gain * phase;
        if opts.spreading_loss {
            amplitude /= r_t * r_r;
        }
        if amplitude == Complex64::ZERO {
            continue;
        }
        let tau = (r_t + r_r) / SPEED_OF_LIGHT + extra_delay;
        if tau * SPEED_OF_LIGHT > unambiguous {
            aliased = true;
        }
        chains.push((
            amplitude * Complex64::from_polar(1.0, -two_pi * params.f_start * tau),
            Complex64::from_polar(1.0, -two_pi * params.slope() * tau * dt),
        ));
    }

    // Four interleaved recurrences keep the complex-multiply chains from
    // serializing on instruction latency.
    for group in chains.chunks(4) {
        let mut cur = [Complex64::ZERO; 4];
        let mut step = [Complex64::new(1.0, 0.0); 4];
        for (i, (c, s)) in group.iter().enumerate() {
            cur[i] = *c;
            step[i] = *s;
        }
        for b in buf.iter_mut() {
            *b += (cur[0] + cur[1]) + (cur[2] + cur[3]);
            cur[0] *= step[0];
            cur[1] *= step[1];
            cur[2] *= step[2];
            cur[3] *= step[3];
        }
    }
    Ok(aliased)
}

/// Simulate a full acquisition: `n_bursts` bursts of 128 slot pulses, the
/// target interpolated along the trajectory at each pulse's own timestamp.
///
/// Pulse synthesis is data-parallel over (burst, channel); every pulse is
/// independent, so parallel and serial runs produce identical cubes.
pub fn simulate_collection(
    scene: &Scene,
    trajectory: &Trajectory,
    geom: &ArrayGeometry,
    errors: &ChannelErrorModel,
    params: &ChirpParams,
    n_bursts: usize,
    burst_interval: f64,
    opts: &SimOptions,
) -> Result<RawDataCube> {
    params.validate()?;
    errors.validate(geom.n_antennas())?;
    let vchannels = geom.virtual_channels();
    let schedule = burst_schedule(params, vchannels.len());
    if n_bursts == 0 {
        return Err(Error::Simulation("n_bursts must be >= 1".into()));
    }
    let t_last = (n_bursts - 1) as f64 * burst_interval
        + schedule.slot_times[vchannels.len() - 1];
    if !trajectory.covers(0.0) || !trajectory.covers(t_last) {
        let (t0, t1) = trajectory.span();
        return Err(Error::Simulation(format!(
            "trajectory [{t0}, {t1}] does not cover pulse timestamps [0, {t_last}]"
        )));
    }

    let mut cube = RawDataCube::zeros(
        n_bursts,
        vchannels.len(),
        params,
        burst_interval,
        geom.fingerprint(),
    );
    cube.spreading_loss = opts.spreading_loss;

    let n_samples = params.n_samples;
    let aliased = std::sync::atomic::AtomicBool::new(false);
    cube.data
        .par_chunks_mut(n_samples)
        .enumerate()
        .try_for_each(|(pulse_idx, buf)| -> Result<()> {
            let burst = pulse_idx / vchannels.len();
            let slot = pulse_idx % vchannels.len();
            let t = burst as f64 * burst_interval + schedule.slot_times[slot];
            let origin = trajectory.position_at(t)?;
            if add_pulse(
                buf,
                scene,
                origin,
                &vchannels[slot],
                geom,
                errors,
                params,
                opts,
            )? {
                aliased.store(true, std::sync::atomic::Ordering::Relaxed);
            }
            Ok(())
        })?;
    cube.aliased = aliased.into_inner();
    Ok(cube)
}

/// splitmix64; decorrelates per-pulse noise streams from one seed.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Add complex white Gaussian noise at the given SNR (dB) relative to the
/// mean sample power of the cube. `f64::INFINITY` leaves the cube untouched.
/// Noise is seeded per pulse, so the result is independent of threading.
pub fn add_noise(cube: &RawDataCube, snr_db: f64, seed: u64) -> RawDataCube {
    let mut out = cube.clone();
    if snr_db == f64::INFINITY {
        return out;
    }
    let n = cube.data.len();
    let signal_power: f64 = cube.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
    let noise_power = if signal_power > 0.0 {
        signal_power / 10f64.powf(snr_db / 10.0)
    } else {
        10f64.powf(-snr_db / 10.0)
    };
    let sigma = (noise_power / 2.0).sqrt();
    let n_samples = cube.n_samples;
    out.data
        .par_chunks_mut(n_samples)
        .enumerate()
        .for_each(|(pulse_idx, buf)| {
            let mut rng = rand::rngs::StdRng::seed_from_u64(mix_seed(seed, pulse_idx as u64));
            let gauss = Normal::new(0.0, sigma).unwrap();
            for v in buf.iter_mut() {
                *v += Complex64::new(gauss.sample(&mut rng), gauss.sample(&mut rng));
            }
        });
    out.noise_seed = Some(seed);
    out
}

/// Uniform random scatterer cloud, used by tests and benchmarks.
pub fn random_scene(n: usize, extent: f64, seed: u64) -> Scene {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let scatterers = (0..n)
        .map(|_| Scatterer {
            position: Vec3::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
            ),
            reflectivity: Complex64::from_polar(
                rng.random_range(0.5..1.5),
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            ),
        })
        .collect();
    Scene { scatterers }
}
