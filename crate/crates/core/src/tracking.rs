//! Kalman filtering of noisy target-position measurements.
//!
//! Constant-velocity model per axis, axes filtered independently, with an
//! innovation gate that discards measurements jumping more than
//! `gate_sigma` innovation standard deviations from the prediction.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::simulator::{Trajectory, TrajectorySample};
use crate::Vec3;

#[derive(Debug, Clone, Copy)]
pub struct TrackMeasurement {
    pub t: f64,
    pub position: Vec3,
    pub valid: bool,
}

/// Per-axis position/velocity state with covariance.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    /// One 2x2 [position, velocity] covariance per axis.
    pub covariance: [Matrix2<f64>; 3],
}

impl TrackState {
    pub fn validate(&self) -> Result<()> {
        for (axis, p) in self.covariance.iter().enumerate() {
            let asym = (p[(0, 1)] - p[(1, 0)]).abs();
            if asym > 1e-12 * (1.0 + p[(0, 1)].abs()) {
                return Err(Error::Tracking(format!(
                    "axis {axis}: covariance asymmetric by {asym}"
                )));
            }
            // Positive definiteness of a symmetric 2x2.
            if !(p[(0, 0)] > 0.0) || !(p.determinant() > 0.0) {
                return Err(Error::Tracking(format!(
                    "axis {axis}: covariance not positive definite"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KalmanTuning {
    /// White-acceleration intensity sigma_a (m/s^2); the discrete process
    /// noise is sigma_a^2 * [[dt^3/3, dt^2/2], [dt^2/2, dt]].
    pub accel_noise: f64,
    /// Measurement noise standard deviation (m).
    pub meas_noise: f64,
    /// Innovation gate in standard deviations.
    pub gate_sigma: f64,
}

impl Default for KalmanTuning {
    fn default() -> Self {
        KalmanTuning {
            accel_noise: 0.1,
            meas_noise: 0.01,
            gate_sigma: 3.0,
        }
    }
}

/// One predict-gate-update step. Returns the new state and whether the
/// measurement was accepted; a gated (or invalid) measurement leaves only
/// the prediction applied.
pub fn kf_step(
    state: &TrackState,
    measurement: &TrackMeasurement,
    tuning: &KalmanTuning,
) -> Result<(TrackState, bool)> {
    if !(measurement.t > state.t) {
        return Err(Error::Tracking(format!(
            "measurement time {} not after state time {}",
            measurement.t, state.t
        )));
    }
    state.validate()?;
    let dt = measurement.t - state.t;
    let q = tuning.accel_noise * tuning.accel_noise;
    let process = Matrix2::new(
        q * dt.powi(3) / 3.0,
        q * dt.powi(2) / 2.0,
        q * dt.powi(2) / 2.0,
        q * dt,
    );
    let f = Matrix2::new(1.0, dt, 0.0, 1.0);
    let r = tuning.meas_noise * tuning.meas_noise;

    // Predict each axis, then gate on the whole measurement: one jumping
    // axis marks the sample as a fault.
    let mut predicted = [Vector2::zeros(); 3];
    let mut predicted_cov = [Matrix2::zeros(); 3];
    let mut accept = true;
    for axis in 0..3 {
        let x = Vector2::new(state.position[axis], state.velocity[axis]);
        let xp = f * x;
        let pp = f * state.covariance[axis] * f.transpose() + process;
        let innovation = measurement.position[axis] - xp[0];
        let s = pp[(0, 0)] + r;
        if innovation.abs() > tuning.gate_sigma * s.sqrt() {
            accept = false;
        }
        predicted[axis] = xp;
        predicted_cov[axis] = pp;
    }
    if !measurement.valid {
        accept = false;
    }

    let mut out = TrackState {
        t: measurement.t,
        position: Vec3::zeros(),
        velocity: Vec3::zeros(),
        covariance: [Matrix2::zeros(); 3],
    };
    for axis in 0..3 {
        let xp = predicted[axis];
        let pp = predicted_cov[axis];
        if accept {
            let s = pp[(0, 0)] + r;
            let k = Vector2::new(pp[(0, 0)] / s, pp[(1, 0)] / s);
            let innovation = measurement.position[axis] - xp[0];
            let x = xp + k * innovation;
            // Joseph form keeps the covariance symmetric positive definite
            // through long accept/reject sequences.
            let ikh = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
            let mut p = ikh * pp * ikh.transpose() + (k * k.transpose()) * r;
            p = (p + p.transpose()) * 0.5;
            out.position[axis] = x[0];
            out.velocity[axis] = x[1];
            out.covariance[axis] = p;
        } else {
            out.position[axis] = xp[0];
            out.velocity[axis] = xp[1];
            out.covariance[axis] = (pp + pp.transpose()) * 0.5;
        }
    }
    Ok((out, accept))
}

/// Filter a time-sorted measurement list into a smooth trajectory.
///
/// The state initializes from the first two valid measurements (two-point
/// position/velocity differencing); the output is sampled at the input
/// timestamps with the filtered position and velocity.
pub fn filter_track(
    measurements: &[TrackMeasurement],
    tuning: &KalmanTuning,
) -> Result<(Trajectory, FilterStats)> {
    for w in measurements.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::Tracking("measurements not time-sorted".into()));
        }
    }
    let valid_idx: Vec<usize> = measurements
        .iter()
        .enumerate()
        .filter(|(_, m)| m.valid)
        .map(|(i, _)| i)
        .collect();
    if valid_idx.len() < 2 {
        return Err(Error::Tracking(format!(
            "need at least 2 valid measurements, got {}",
            valid_idx.len()
        )));
    }
    let (i0, i1) = (valid_idx[0], valid_idx[1]);
    let m0 = &measurements[i0];
    let m1 = &measurements[i1];
    let dt01 = m1.t - m0.t;
    let vel0 = (m1.position - m0.position) / dt01;
    let r = tuning.meas_noise * tuning.meas_noise;
    let init_cov = Matrix2::new(r, r / dt01, r / dt01, 2.0 * r / (dt01 * dt01));

    let mut state = TrackState {
        t: m1.t,
        position: m1.position,
        velocity: vel0,
        covariance: [init_cov; 3],
    };

    let mut samples = Vec::with_capacity(measurements.len());
    let mut stats = FilterStats::default();
    // Pre-init samples mirror the measurements with the two-point velocity.
    for m in &measurements[..=i1] {
        samples.push(TrajectorySample {
            t: m.t,
            position: m.position,
            velocity: vel0,
        });
    }
    for m in &measurements[i1 + 1..] {
        let (next, accepted) = kf_step(&state, m, tuning)?;
        state = next;
        if m.valid {
            if accepted {
                stats.accepted += 1;
            } else {
                stats.rejected += 1;
            }
        }
        samples.push(TrajectorySample {
            t: state.t,
            position: state.position,
            velocity: state.velocity,
        });
    }
    Ok((Trajectory::new(samples)?, stats))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FilterStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Piecewise-linear resampling of a trajectory at the given timestamps;
/// velocity comes from the segment slope.
pub fn resample_track(trajectory: &Trajectory, timestamps: &[f64]) -> Result<Trajectory> {
    let mut samples = Vec::with_capacity(timestamps.len());
    for &t in timestamps {
        samples.push(TrajectorySample {
            t,
            position: trajectory.position_at(t)?,
            velocity: trajectory.velocity_at(t)?,
        });
    }
    Trajectory::new(samples)
}
