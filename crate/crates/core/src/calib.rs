//! Active array calibration.
//!
//! A reference antenna on a 2D scan stage measures the one-way line-of-sight
//! link to each of the 24 physical antennas over a grid of known positions.
//! Per link the propagation delay `T = |p_i - p_j|/c + tau_i`, the peak
//! amplitude `A = a_i / R^2`, and the wrapped phase `phi = 2 pi R / lambda +
//! phi_i` are observed. Per antenna, a damped nonlinear least-squares fit of
//! the delay observables recovers the phase-center offset and delay error;
//! amplitude and phase imbalances follow from log-linear and circular means
//! of the residuals.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::arraygeom::ArrayGeometry;
use crate::error::{Error, Result};
use crate::simulator::{ChannelError, ChannelErrorModel, RawDataCube};
use crate::waveform::{range_compress, ChirpParams, Window};
use crate::{C64, SPEED_OF_LIGHT, Vec3};

/// 2D scan-stage raster. Stage x maps to scene x, stage y to scene z; the
/// plane sits `plane_offset` meters in front of the array.
#[derive(Debug, Clone, Copy)]
pub struct ScanGrid {
    pub extent_x: f64,
    pub extent_y: f64,
    pub step: f64,
    pub plane_offset: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        ScanGrid {
            extent_x: 1.0,
            extent_y: 1.0,
            step: 0.01,
            plane_offset: 1.5,
        }
    }
}

impl ScanGrid {
    /// 11 x 11 desk-scale grid covering the same extents.
    pub fn desk() -> Self {
        ScanGrid {
            step: 0.1,
            ..ScanGrid::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.extent_x > 0.0) || !(self.extent_y > 0.0) {
            return Err(Error::Config("scan grid extents and step must be positive".into()));
        }
        Ok(())
    }

    pub fn counts(&self) -> (usize, usize) {
        (
            (self.extent_x / self.step).round() as usize + 1,
            (self.extent_y / self.step).round() as usize + 1,
        )
    }

    /// Grid positions in scene coordinates, row-major over (x, z).
    /// `standoff` is the array-to-scene distance, so the default plane
    /// offset of 1.5 m from the array lands on the scene-center plane.
    pub fn points(&self, standoff: f64) -> Vec<Vec3> {
        let (nx, nz) = self.counts();
        let y = self.plane_offset - standoff;
        let mut out = Vec::with_capacity(nx * nz);
        for ix in 0..nx {
            for iz in 0..nz {
                out.push(Vec3::new(
                    -self.extent_x / 2.0 + ix as f64 * self.step,
                    y,
                    -self.extent_y / 2.0 + iz as f64 * self.step,
                ));
            }
        }
        out
    }
}

/// Which geometry term the phase observable includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseReference {
    /// `phi = wrap(2 pi R / lambda + phi_i)` — the scan-model convention.
    Geometry,
    /// `phi = phi_i` with the delay term already removed — what peak
    /// extraction from dechirped pulses yields.
    Delay,
}

impl PhaseReference {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseReference::Geometry => "geometry",
            PhaseReference::Delay => "delay",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(PhaseReference::Geometry),
            "delay" => Ok(PhaseReference::Delay),
            _ => Err(Error::DataFormat(format!("unknown phase reference `{s}`"))),
        }
    }
}

/// One measured line-of-sight link between antenna `antenna` and scan-grid
/// point `grid_index`.
#[derive(Debug, Clone, Copy)]
pub struct LinkObservation {
    /// Flat antenna index: 0..8 Tx, 8..24 Rx.
    pub antenna: usize,
    pub grid_index: usize,
    pub grid_point: Vec3,
    /// Propagation delay T (s).
    pub delay: f64,
    /// Peak amplitude A (linear).
    pub amplitude: f64,
    /// Wrapped phase in (-pi, pi].
    pub phase: f64,
    pub phase_reference: PhaseReference,
}

#[derive(Debug, Clone, Copy)]
pub struct CalibOptions {
    /// Exponent of the 1/R^p amplitude law (2 follows the scan model
    /// literally; 1 is the one-way field decay for sensitivity studies).
    pub amplitude_exponent: f64,
    /// Known constant delay of the reference cable, subtracted before
    /// estimation.
    pub reference_cable_delay: f64,
}

impl Default for CalibOptions {
    fn default() -> Self {
        CalibOptions {
            amplitude_exponent: 2.0,
            reference_cable_delay: 0.0,
        }
    }
}

pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Simulate the 2D-scan experiment against ground-truth channel errors.
pub fn simulate_scan(
    geom: &ArrayGeometry,
    truth: &ChannelErrorModel,
    grid: &ScanGrid,
    params: &ChirpParams,
    opts: &CalibOptions,
) -> Result<Vec<LinkObservation>> {
    grid.validate()?;
    truth.validate(geom.n_antennas())?;
    let lambda = params.wavelength_center();
    let points = grid.points(geom.arc_radius);
    let mut out = Vec::with_capacity(geom.n_antennas() * points.len());
    for i in 0..geom.n_antennas() {
        let e = &truth.entries[i];
        let p_i = geom.antenna_position(i) + e.position_offset;
        for (j, q) in points.iter().enumerate() {
            let r = (p_i - q).norm();
            if r <= 0.0 {
                return Err(Error::Calibration(format!(
                    "scan point {j} coincides with antenna {i}"
                )));
            }
            out.push(LinkObservation {
                antenna: i,
                grid_index: j,
                grid_point: *q,
                delay: r / SPEED_OF_LIGHT + e.delay + opts.reference_cable_delay,
                amplitude: e.amplitude / r.powf(opts.amplitude_exponent),
                phase: wrap_phase(2.0 * PI * r / lambda + e.phase),
                phase_reference: PhaseReference::Geometry,
            });
        }
    }
    Ok(out)
}

/// Raw dechirped recording of a single scan link, input to
/// [`extract_observables`].
#[derive(Debug, Clone)]
pub struct LinkPulse {
    pub antenna: usize,
    pub grid_index: usize,
    pub grid_point: Vec3,
    pub samples: Vec<C64>,
}

/// Forward model for one link recording: the one-way dechirped tone with the
/// channel's amplitude, phase, and delay applied.
pub fn link_pulse(
    antenna: usize,
    grid_index: usize,
    grid_point: Vec3,
    antenna_position: Vec3,
    error: &ChannelError,
    params: &ChirpParams,
    opts: &CalibOptions,
) -> LinkPulse {
    let r = (antenna_position - grid_point).norm();
    let amplitude = Complex64::from_polar(error.amplitude / r.powf(opts.amplitude_exponent), error.phase);
    LinkPulse {
        antenna,
        grid_index,
        grid_point,
        samples: crate::waveform::sample_beat_signal(r, amplitude, error.delay, params),
    }
}

/// Pulse-compress link recordings and read off (T, A, phi) per link.
///
/// T comes from a quadratic fit around the upsampled compressed peak; the
/// complex peak value, re-evaluated by direct correlation at the fitted
/// frequency, yields A and the delay-referenced phase. Links without a peak
/// above the profile floor are dropped; the count of drops is returned.
pub fn extract_observables(
    pulses: &[LinkPulse],
    params: &ChirpParams,
) -> Result<(Vec<LinkObservation>, usize)> {
    let upsample = 8;
    let mut out = Vec::with_capacity(pulses.len());
    let mut dropped = 0usize;
    for p in pulses {
        let profile = range_compress(&p.samples, params, Window::None, upsample)?;
        let peak_bin = profile.peak_bin();
        let peak_mag = profile.bins[peak_bin].norm();
        let rms = (profile.bins.iter().map(|b| b.norm_sqr()).sum::<f64>()
            / profile.bins.len() as f64)
            .sqrt();
        if peak_mag <= 0.0 || peak_mag < 6.0 * rms {
            dropped += 1;
            continue;
        }
        let path = profile.peak_path_interpolated();
        let delay = path / SPEED_OF_LIGHT;
        // Direct correlation at the fitted beat frequency, mid-pulse
        // referenced, recovers the complex link coefficient.
        let beat = params.slope() * delay;
        let dt = params.sample_interval();
        let half = params.pulse_width / 2.0;
        let mut acc = Complex64::ZERO;
        for (n, &s) in p.samples.iter().enumerate() {
            let t = n as f64 * dt;
            acc += s * Complex64::from_polar(1.0, 2.0 * PI * beat * (t - half));
        }
        let coeff = acc / p.samples.len() as f64;
        // coeff = A e^{j phi_i} e^{-j 2 pi f_c T}; removing the delay term
        // leaves the channel phase alone.
        let phase = wrap_phase(coeff.arg() + 2.0 * PI * params.f_center() * delay);
        out.push(LinkObservation {
            antenna: p.antenna,
            grid_index: p.grid_index,
            grid_point: p.grid_point,
            delay,
            amplitude: coeff.norm(),
            phase,
            phase_reference: PhaseReference::Delay,
        });
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, Copy)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CalibrationSolution {
    pub errors: ChannelErrorModel,
    /// RMS delay residual per antenna (s).
    pub residual_norms: Vec<f64>,
    pub reports: Vec<SolverReport>,
    pub geometry_fingerprint: [u8; 32],
}

impl CalibrationSolution {
    pub fn identity(geom: &ArrayGeometry) -> Self {
        CalibrationSolution {
            errors: ChannelErrorModel::identity(),
            residual_norms: vec![0.0; geom.n_antennas()],
            reports: vec![
                SolverReport {
                    iterations: 0,
                    final_cost: 0.0,
                    converged: true,
                };
                geom.n_antennas()
            ],
            geometry_fingerprint: geom.fingerprint(),
        }
    }

    pub fn converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }

    /// Nominal geometry with the estimated phase-center offsets applied:
    /// what imaging should use after calibration.
    pub fn apply_to(&self, geom: &ArrayGeometry) -> Result<ArrayGeometry> {
        geom.perturb(&self.errors)
    }
}

struct AntennaFit {
    offset: Vec3,
    delay: f64,
    cost: f64,
    iterations: usize,
    converged: bool,
}

/// Damped Gauss-Newton fit of (position offset, delay) from delay
/// observables of one antenna. Works in meters (delay scaled by c) for
/// conditioning.
fn fit_delay_model(nominal: Vec3, points: &[Vec3], delays_m: &[f64]) -> AntennaFit {
    let mut theta = Vector4::new(0.0, 0.0, 0.0, 0.0);
    let n = points.len() as f64;
    let cost_of = |th: &Vector4<f64>| -> f64 {
        let p = nominal + Vec3::new(th[0], th[1], th[2]);
        points
            .iter()
            .zip(delays_m.iter())
            .map(|(q, &d)| {
                let r = (p - q).norm() + th[3];
                (d - r).powi(2)
            })
            .sum::<f64>()
            / n
    };
    let mut cost = cost_of(&theta);
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..100 {
        iterations = iter + 1;
        let p = nominal + Vec3::new(theta[0], theta[1], theta[2]);
        let mut h = Matrix4::<f64>::zeros();
        let mut g = Vector4::<f64>::zeros();
        for (q, &d) in points.iter().zip(delays_m.iter()) {
            let diff = p - q;
            let r = diff.norm();
            let resid = d - (r + theta[3]);
            let jac = Vector4::new(-diff.x / r, -diff.y / r, -diff.z / r, -1.0);
            h += jac * jac.transpose();
            g += jac * resid;
        }
        // Solve (H + damping * diag(H)) step = -g.
        let mut step = None;
        for _ in 0..10 {
            let mut hd = h;
            for k in 0..4 {
                hd[(k, k)] += damping * h[(k, k)].max(1e-30);
            }
            if let Some(s) = hd.lu().solve(&(-g)) {
                let trial = theta + s;
                let trial_cost = cost_of(&trial);
                if trial_cost <= cost {
                    step = Some((s, trial, trial_cost));
                    break;
                }
            }
            damping *= 10.0;
        }
        let Some((_, trial, trial_cost)) = step else {
            break;
        };
        let improvement = cost - trial_cost;
        theta = trial;
        cost = trial_cost;
        damping = (damping * 0.3).max(1e-12);
        if improvement <= 1e-10 * cost.max(1e-30) || cost < 1e-30 {
            converged = true;
            break;
        }
    }
    AntennaFit {
        offset: Vec3::new(theta[0], theta[1], theta[2]),
        delay: theta[3] / SPEED_OF_LIGHT,
        cost,
        iterations,
        converged,
    }
}

fn collinear(points: &[Vec3]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let origin = points[0];
    let Some(dir) = points[1..]
        .iter()
        .map(|p| p - origin)
        .find(|v| v.norm() > 1e-12)
    else {
        return true;
    };
    let dir = dir.normalize();
    points.iter().all(|p| {
        let v = p - origin;
        (v - dir * v.dot(&dir)).norm() < 1e-9
    })
}

/// Estimate the per-antenna error model from link observations.
pub fn estimate(
    observations: &[LinkObservation],
    geom: &ArrayGeometry,
    params: &ChirpParams,
    opts: &CalibOptions,
) -> Result<CalibrationSolution> {
    let n_ant = geom.n_antennas();
    let lambda = params.wavelength_center();
    let mut entries = Vec::with_capacity(n_ant);
    let mut residual_norms = Vec::with_capacity(n_ant);
    let mut reports = Vec::with_capacity(n_ant);

    for i in 0..n_ant {
        let obs: Vec<&LinkObservation> =
            observations.iter().filter(|o| o.antenna == i).collect();
        if obs.len() < 6 {
            return Err(Error::Calibration(format!(
                "antenna {i}: {} observations, need at least 6 well-spread grid points",
                obs.len()
            )));
        }
        let points: Vec<Vec3> = obs.iter().map(|o| o.grid_point).collect();
        if collinear(&points) {
            return Err(Error::Calibration(format!(
                "antenna {i}: grid points are collinear, offsets unidentifiable"
            )));
        }
        let delays_m: Vec<f64> = obs
            .iter()
            .map(|o| (o.delay - opts.reference_cable_delay) * SPEED_OF_LIGHT)
            .collect();
        let nominal = geom.antenna_position(i);
        let fit = fit_delay_model(nominal, &points, &delays_m);
        let p_hat = nominal + fit.offset;

        // Amplitude: log-linear fit of A * R^p.
        let mut log_sum = 0.0;
        for o in &obs {
            let r = (p_hat - o.grid_point).norm();
            log_sum += (o.amplitude * r.powf(opts.amplitude_exponent)).ln();
        }
        let amplitude = (log_sum / obs.len() as f64).exp();

        // Phase: circular mean of the wrapped residuals.
        let mut phasor = Complex64::ZERO;
        for o in &obs {
            let predicted = match o.phase_reference {
                PhaseReference::Geometry => {
                    2.0 * PI * (p_hat - o.grid_point).norm() / lambda
                }
                PhaseReference::Delay => 0.0,
            };
            phasor += Complex64::from_polar(1.0, o.phase - predicted);
        }
        let phase = phasor.arg();

        if !fit.converged {
            // Returned with the failure flag set rather than erroring; the
            // caller decides whether a partial solution is usable.
            eprintln!("warning: antenna {i} calibration did not converge");
        }
        entries.push(ChannelError {
            amplitude,
            phase,
            delay: fit.delay,
            position_offset: fit.offset,
        });
        residual_norms.push(fit.cost.sqrt() / SPEED_OF_LIGHT);
        reports.push(SolverReport {
            iterations: fit.iterations,
            final_cost: fit.cost,
            converged: fit.converged,
        });
    }

    Ok(CalibrationSolution {
        errors: ChannelErrorModel { entries },
        residual_norms,
        reports,
        geometry_fingerprint: geom.fingerprint(),
    })
}

/// Undo the per-channel amplitude, phase, and delay errors of a raw cube.
///
/// Each channel is scaled by `1/(a_tx a_rx)`, rotated by `-(phi_tx +
/// phi_rx)`, and the delay is removed through the equivalent dechirp
/// frequency shift: multiplication by `exp(+j 2 pi (f_start + slope t_n)
/// (tau_tx + tau_rx))`. Position offsets are geometric and are handled by
/// imaging from the estimated phase centers instead.
pub fn compensate(cube: &RawDataCube, solution: &CalibrationSolution) -> Result<RawDataCube> {
    if cube.geometry_fingerprint != solution.geometry_fingerprint {
        return Err(Error::Calibration(
            "cube and calibration solution refer to different geometries".into(),
        ));
    }
    let n_rx = 16;
    let mut out = cube.clone();
    let params = cube.params.clone();
    let dt = params.sample_interval();
    for b in 0..cube.n_bursts {
        for ch in 0..cube.n_channels {
            let etx = solution.errors.tx(ch / n_rx);
            let erx = solution.errors.rx(ch % n_rx);
            let tau = etx.delay + erx.delay;
            let gain = 1.0 / (etx.amplitude * erx.amplitude);
            let mut rot = Complex64::from_polar(
                gain,
                -(etx.phase + erx.phase) + 2.0 * PI * params.f_start * tau,
            );
            let step = Complex64::from_polar(1.0, 2.0 * PI * params.slope() * tau * dt);
            for v in out.pulse_mut(b, ch) {
                *v *= rot;
                rot *= step;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arraygeom::{build_default_geometry, GeometryConfig};
    use crate::simulator::{simulate_collection, Scene, SimOptions, Trajectory};

    fn geom() -> ArrayGeometry {
        build_default_geometry(&GeometryConfig::default()).unwrap()
    }

    fn params() -> ChirpParams {
        ChirpParams::default()
    }

    #[test]
    fn scan_model_values() {
        // Antenna at the origin, grid point 1.5 m away, no errors.
        let r: f64 = 1.5;
        let lambda = params().wavelength_center();
        let t = r / 299_792_458.0;
        assert!((t - 5.0035e-9).abs() < 1e-12);
        let phi = wrap_phase(2.0 * PI * r / lambda);

        let g = geom();
        let truth = ChannelErrorModel::identity();
        let grid = ScanGrid::desk();
        let obs = simulate_scan(&g, &truth, &grid, &params(), &CalibOptions::default()).unwrap();
        let (nx, nz) = grid.counts();
        assert_eq!(obs.len(), 24 * nx * nz);
        // Pick an observation and check it against the closed-form model.
        let o = obs.iter().find(|o| o.antenna == 0).unwrap();
        let p = g.antenna_position(0);
        let rr = (p - o.grid_point).norm();
        assert!((o.delay - rr / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((o.amplitude - 1.0 / rr.powi(2)).abs() < 1e-12);
        assert!((o.phase - wrap_phase(2.0 * PI * rr / lambda)).abs() < 1e-9);
        // The literal 1.5 m case.
        let a0 = 1.0 / 2.25;
        assert!(a0 > 0.444 && a0 < 0.4445);
        assert!(phi.abs() <= PI);
    }

    #[test]
    fn delay_errors_are_additive_and_amplitudes_multiplicative() {
        let g = geom();
        let grid = ScanGrid::desk();
        let p = params();
        let opts = CalibOptions::default();
        let clean = simulate_scan(&g, &ChannelErrorModel::identity(), &grid, &p, &opts).unwrap();
        let mut truth = ChannelErrorModel::identity();
        truth.entries[3].delay = 50e-12;
        truth.entries[3].amplitude = 2.0;
        let dirty = simulate_scan(&g, &truth, &grid, &p, &opts).unwrap();
        for (a, b) in clean.iter().zip(dirty.iter()) {
            if a.antenna == 3 {
                assert!((b.delay - a.delay - 50e-12).abs() < 1e-21);
                assert!((b.amplitude / a.amplitude - 2.0).abs() < 1e-12);
            } else {
                assert_eq!(a.delay, b.delay);
                assert_eq!(a.amplitude, b.amplitude);
            }
        }
    }

    #[test]
    fn extract_recovers_delay_amplitude_phase() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let error = ChannelError {
            amplitude: 1.3,
            phase: 0.7,
            delay: 80e-12,
            position_offset: Vec3::zeros(),
        };
        let q = Vec3::new(0.2, 0.0, -0.1);
        let pos = g.antenna_position(5);
        let pulse = link_pulse(5, 0, q, pos, &error, &p, &opts);
        let (obs, dropped) = extract_observables(&[pulse], &p).unwrap();
        assert_eq!(dropped, 0);
        let o = &obs[0];
        let r = (pos - q).norm();
        let truth_delay = r / SPEED_OF_LIGHT + 80e-12;
        assert!(
            (o.delay - truth_delay).abs() < 5e-12,
            "delay error {} ps",
            (o.delay - truth_delay).abs() * 1e12
        );
        assert!((o.amplitude - 1.3 / r.powi(2)).abs() / (1.3 / r.powi(2)) < 1e-3);
        assert!(wrap_phase(o.phase - 0.7).abs() < 1e-2);
        assert_eq!(o.phase_reference, PhaseReference::Delay);
    }

    #[test]
    fn zero_amplitude_pulse_dropped() {
        let p = params();
        let pulse = LinkPulse {
            antenna: 0,
            grid_index: 0,
            grid_point: Vec3::zeros(),
            samples: vec![Complex64::ZERO; p.n_samples],
        };
        let (obs, dropped) = extract_observables(&[pulse], &p).unwrap();
        assert!(obs.is_empty());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn phase_rotation_shifts_extracted_phase() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let q = Vec3::new(-0.3, 0.0, 0.2);
        let pos = g.antenna_position(10);
        let base = link_pulse(10, 0, q, pos, &ChannelError::identity(), &p, &opts);
        let theta = 1.9;
        let mut rotated = base.clone();
        let rot = Complex64::from_polar(1.0, theta);
        for s in rotated.samples.iter_mut() {
            *s *= rot;
        }
        let (o0, _) = extract_observables(&[base], &p).unwrap();
        let (o1, _) = extract_observables(&[rotated], &p).unwrap();
        assert!(wrap_phase(o1[0].phase - o0[0].phase - theta).abs() < 1e-6);
    }

    #[test]
    fn estimator_zero_errors_yield_identity() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let obs =
            simulate_scan(&g, &ChannelErrorModel::identity(), &ScanGrid::desk(), &p, &opts)
                .unwrap();
        let sol = estimate(&obs, &g, &p, &opts).unwrap();
        assert!(sol.converged());
        for e in &sol.errors.entries {
            assert!(e.delay.abs() < 0.1e-12, "delay {}", e.delay);
            assert!(e.position_offset.norm() < 10e-6);
            assert!((e.amplitude - 1.0).abs() < 1e-6);
            assert!(e.phase.abs() < 1e-4);
        }
    }

    #[test]
    fn estimator_recovers_injected_delay() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let mut truth = ChannelErrorModel::identity();
        truth.entries[7].delay = 10e-12;
        let obs = simulate_scan(&g, &truth, &ScanGrid::desk(), &p, &opts).unwrap();
        let sol = estimate(&obs, &g, &p, &opts).unwrap();
        assert!((sol.errors.entries[7].delay - 10e-12).abs() < 1e-12);
    }

    #[test]
    fn estimator_recovers_injected_offset() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let mut truth = ChannelErrorModel::identity();
        truth.entries[12].position_offset = Vec3::new(1e-3, 0.0, 0.5e-3);
        let obs = simulate_scan(&g, &truth, &ScanGrid::desk(), &p, &opts).unwrap();
        let sol = estimate(&obs, &g, &p, &opts).unwrap();
        let err = (sol.errors.entries[12].position_offset
            - Vec3::new(1e-3, 0.0, 0.5e-3))
        .norm();
        assert!(err < 0.1e-3, "offset error {err}");
    }

    #[test]
    fn wrap_safety_of_phase_estimates() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let mut truth = ChannelErrorModel::identity();
        truth.entries[4].phase = 0.9;
        let obs_a = simulate_scan(&g, &truth, &ScanGrid::desk(), &p, &opts).unwrap();
        truth.entries[4].phase = 0.9 + 2.0 * PI;
        let obs_b = simulate_scan(&g, &truth, &ScanGrid::desk(), &p, &opts).unwrap();
        let sa = estimate(&obs_a, &g, &p, &opts).unwrap();
        let sb = estimate(&obs_b, &g, &p, &opts).unwrap();
        assert!((sa.errors.entries[4].phase - sb.errors.entries[4].phase).abs() < 1e-9);
    }

    #[test]
    fn too_few_or_collinear_points_rejected() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let obs =
            simulate_scan(&g, &ChannelErrorModel::identity(), &ScanGrid::desk(), &p, &opts)
                .unwrap();
        let few: Vec<LinkObservation> = obs.iter().take(5).cloned().collect();
        assert!(estimate(&few, &g, &p, &opts).is_err());

        // Collinear observations: the first grid row only.
        let (_, nz) = ScanGrid::desk().counts();
        let mut line: Vec<LinkObservation> = Vec::new();
        for i in 0..24 {
            line.extend(
                obs.iter()
                    .filter(|o| o.antenna == i && o.grid_index < nz)
                    .take(8)
                    .map(|o| {
                        let mut c = *o;
                        // Flatten x so the points really are on one line.
                        c.grid_point.x = 0.0;
                        c
                    }),
            );
        }
        assert!(matches!(
            estimate(&line, &g, &p, &opts),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn identifiability_cost_landscape() {
        // Perturbing delay cannot be absorbed by a position shift: the cost
        // at truth is strictly lower than at tau/position trade-off probes.
        let g = geom();
        let grid = ScanGrid::desk();
        let points = grid.points(g.arc_radius);
        let nominal = g.antenna_position(0);
        let delays_m: Vec<f64> = points.iter().map(|q| (nominal - q).norm()).collect();
        let cost = |dp: Vec3, dtau_m: f64| -> f64 {
            points
                .iter()
                .zip(delays_m.iter())
                .map(|(q, &d)| {
                    let r = (nominal + dp - q).norm() + dtau_m;
                    (d - r).powi(2)
                })
                .sum::<f64>()
        };
        let truth_cost = cost(Vec3::zeros(), 0.0);
        for &tau_m in &[1e-3, -1e-3, 5e-3] {
            // Best compensating y-shift still cannot flatten the residual.
            let mut best = f64::MAX;
            for k in -50..=50 {
                let dy = k as f64 * 1e-4;
                best = best.min(cost(Vec3::new(0.0, dy, 0.0), tau_m));
            }
            assert!(
                best > truth_cost + 1e-12,
                "tau {tau_m}: probe cost {best} vs truth {truth_cost}"
            );
        }
    }

    #[test]
    fn estimator_consistency_under_noise() {
        let g = geom();
        let p = params();
        let opts = CalibOptions::default();
        let mut truth = ChannelErrorModel::identity();
        truth.entries[2].delay = 15e-12;
        truth.entries[2].position_offset = Vec3::new(0.5e-3, -0.3e-3, 0.8e-3);
        let clean = simulate_scan(&g, &truth, &ScanGrid::desk(), &p, &opts).unwrap();

        let mut errs = Vec::new();
        for &level_db in &[f64::NEG_INFINITY, -40.0, -20.0] {
            let eps = if level_db.is_finite() {
                10f64.powf(level_db / 20.0)
            } else {
                0.0
            };
            use rand::{Rng, SeedableRng};
            let mut rng = rand::rngs::StdRng::seed_from_u64(5);
            let noisy: Vec<LinkObservation> = clean
                .iter()
                .map(|o| {
                    let mut c = *o;
                    c.delay += eps * 1e-9 * rng.random_range(-1.0..1.0);
                    c.phase = wrap_phase(c.phase + eps * rng.random_range(-1.0..1.0));
                    c.amplitude *= 1.0 + eps * rng.random_range(-1.0..1.0);
                    c
                })
                .collect();
            let sol = estimate(&noisy, &g, &p, &opts).unwrap();
            let e = &sol.errors.entries[2];
            let err = (e.delay - 15e-12).abs() * SPEED_OF_LIGHT
                + (e.position_offset - truth.entries[2].position_offset).norm();
            errs.push(err);
        }
        assert!(errs[0] <= errs[1] + 1e-12);
        assert!(errs[1] <= errs[2] + 1e-12);
    }

    #[test]
    fn identity_compensation_is_noop() {
        let g = geom();
        let p = params();
        let cube = simulate_collection(
            &Scene::point(Vec3::zeros(), Complex64::new(1.0, 0.0)),
            &Trajectory::stationary(Vec3::zeros()),
            &g,
            &ChannelErrorModel::identity(),
            &p,
            1,
            20e-3,
            &SimOptions::default(),
        )
        .unwrap();
        let out = compensate(&cube, &CalibrationSolution::identity(&g)).unwrap();
        assert_eq!(cube.data, out.data);
    }

    #[test]
    fn true_error_compensation_round_trip() {
        let g = geom();
        let p = params();
        let scene = Scene::point(Vec3::new(0.05, -0.02, 0.1), Complex64::new(1.0, 0.0));
        let traj = Trajectory::stationary(Vec3::zeros());
        let opts = SimOptions::default();

        // Amplitude/phase/delay errors only; position offsets are geometric
        // and are undone by imaging from estimated phase centers instead.
        let truth = ChannelErrorModel::random(0.1, 0.5, 20e-12, 0.0, 21);
        let dirty =
            simulate_collection(&scene, &traj, &g, &truth, &p, 1, 20e-3, &opts).unwrap();
        let clean = simulate_collection(
            &scene,
            &traj,
            &g,
            &ChannelErrorModel::identity(),
            &p,
            1,
            20e-3,
            &opts,
        )
        .unwrap();
        let solution = CalibrationSolution {
            errors: truth.clone(),
            residual_norms: vec![0.0; 24],
            reports: vec![
                SolverReport {
                    iterations: 0,
                    final_cost: 0.0,
                    converged: true
                };
                24
            ],
            geometry_fingerprint: g.fingerprint(),
        };
        let fixed = compensate(&dirty, &solution).unwrap();
        let scale = clean.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in fixed.data.iter().zip(clean.data.iter()) {
            assert!((a - b).norm() <= 1e-9 * scale);
        }

        // With position offsets included, compensation removes exactly the
        // a/phi/tau part: the result matches a position-only simulation.
        let truth_full = ChannelErrorModel::random(0.1, 0.5, 20e-12, 2e-3, 22);
        let mut truth_pos_only = truth_full.clone();
        for e in truth_pos_only.entries.iter_mut() {
            e.amplitude = 1.0;
            e.phase = 0.0;
            e.delay = 0.0;
        }
        let dirty_full =
            simulate_collection(&scene, &traj, &g, &truth_full, &p, 1, 20e-3, &opts).unwrap();
        let pos_only =
            simulate_collection(&scene, &traj, &g, &truth_pos_only, &p, 1, 20e-3, &opts)
                .unwrap();
        let solution_full = CalibrationSolution {
            errors: truth_full,
            residual_norms: vec![0.0; 24],
            reports: vec![
                SolverReport {
                    iterations: 0,
                    final_cost: 0.0,
                    converged: true
                };
                24
            ],
            geometry_fingerprint: g.fingerprint(),
        };
        let fixed_full = compensate(&dirty_full, &solution_full).unwrap();
        let scale2 = pos_only.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in fixed_full.data.iter().zip(pos_only.data.iter()) {
            assert!((a - b).norm() <= 1e-9 * scale2);
        }
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let g = geom();
        let p = params();
        let cube = simulate_collection(
            &Scene::point(Vec3::zeros(), Complex64::new(1.0, 0.0)),
            &Trajectory::stationary(Vec3::zeros()),
            &g,
            &ChannelErrorModel::identity(),
            &p,
            1,
            20e-3,
            &SimOptions::default(),
        )
        .unwrap();
        let mut sol = CalibrationSolution::identity(&g);
        sol.geometry_fingerprint = [1u8; 32];
        assert!(matches!(
            compensate(&cube, &sol),
            Err(Error::Calibration(_))
        ));
    }
}
