//! CSV tables: trajectories/tracks (`t, x, y, z, vx, vy, vz`), raw
//! measurements (`t, x, y, z, valid`), calibration observations
//! (`i, j, x_j, y_j, z_j, T, A, phi`), and calibration solutions as
//! full-precision key-value text.

use std::path::Path;

use num_complex::Complex64;

use crate::calib::{CalibrationSolution, LinkObservation, PhaseReference, SolverReport};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::fingerprint::{hex32, parse_hex32};
use crate::simulator::{
    ChannelError, ChannelErrorModel, Scatterer, Scene, Trajectory, TrajectorySample,
};
use crate::tracking::TrackMeasurement;
use crate::Vec3;

fn parse_fields(line: &str, expect: usize, what: &str) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
    if fields.len() != expect {
        return Err(Error::DataFormat(format!(
            "{what}: expected {expect} fields, got {}",
            fields.len()
        )));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::DataFormat(format!("{what}: invalid number `{f}`")))
        })
        .collect()
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut text = String::from("t,x,y,z,vx,vy,vz\n");
    for s in traj.samples() {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.t, s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_fields(line, 7, "trajectory row")?;
        samples.push(TrajectorySample {
            t: f[0],
            position: Vec3::new(f[1], f[2], f[3]),
            velocity: Vec3::new(f[4], f[5], f[6]),
        });
    }
    Trajectory::new(samples)
}

pub fn write_measurements(path: &Path, measurements: &[TrackMeasurement]) -> Result<()> {
    let mut text = String::from("t,x,y,z,valid\n");
    for m in measurements {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            m.t,
            m.position.x,
            m.position.y,
            m.position.z,
            if m.valid { 1 } else { 0 }
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<Vec<TrackMeasurement>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_fields(line, 5, "measurement row")?;
        out.push(TrackMeasurement {
            t: f[0],
            position: Vec3::new(f[1], f[2], f[3]),
            valid: f[4] != 0.0,
        });
    }
    Ok(out)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    let mut text = String::from("x,y,z,re,im\n");
    for s in &scene.scatterers {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.position.x, s.position.y, s.position.z, s.reflectivity.re, s.reflectivity.im
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path)?;
    let mut scatterers = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_fields(line, 5, "scene row")?;
        scatterers.push(Scatterer {
            position: Vec3::new(f[0], f[1], f[2]),
            reflectivity: Complex64::new(f[3], f[4]),
        });
    }
    Ok(Scene { scatterers })
}

pub fn write_observations(path: &Path, observations: &[LinkObservation]) -> Result<()> {
    let reference = observations
        .first()
        .map(|o| o.phase_reference)
        .unwrap_or(PhaseReference::Geometry);
    let mut text = format!("# phase_reference = {}\n", reference.as_str());
    text.push_str("i,j,x_j,y_j,z_j,T,A,phi\n");
    for o in observations {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            o.antenna,
            o.grid_index,
            o.grid_point.x,
            o.grid_point.y,
            o.grid_point.z,
            o.delay,
            o.amplitude,
            o.phase
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<Vec<LinkObservation>> {
    let text = std::fs::read_to_string(path)?;
    let mut reference = PhaseReference::Geometry;
    let mut out = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("i,") {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                if k.trim() == "phase_reference" {
                    reference = PhaseReference::parse(v.trim())?;
                }
            }
            continue;
        }
        let f = parse_fields(trimmed, 8, "observation row")?;
        out.push(LinkObservation {
            antenna: f[0] as usize,
            grid_index: f[1] as usize,
            grid_point: Vec3::new(f[2], f[3], f[4]),
            delay: f[5],
            amplitude: f[6],
            phase: f[7],
            phase_reference: reference,
        });
    }
    Ok(out)
}

pub fn write_solution(path: &Path, solution: &CalibrationSolution) -> Result<()> {
    let mut cfg = Config::new();
    cfg.set("calib.format", "misar-calib-v1");
    cfg.set(
        "calib.geometry_fingerprint",
        &hex32(&solution.geometry_fingerprint),
    );
    cfg.set(
        "calib.converged",
        if solution.converged() { "true" } else { "false" },
    );
    for (i, e) in solution.errors.entries.iter().enumerate() {
        cfg.set(&format!("antenna.{i}.amplitude"), &format!("{}", e.amplitude));
        cfg.set(&format!("antenna.{i}.phase"), &format!("{}", e.phase));
        cfg.set(&format!("antenna.{i}.delay"), &format!("{}", e.delay));
        cfg.set(
            &format!("antenna.{i}.position_offset"),
            &format!(
                "{} {} {}",
                e.position_offset.x, e.position_offset.y, e.position_offset.z
            ),
        );
        cfg.set(
            &format!("antenna.{i}.residual"),
            &format!("{}", solution.residual_norms[i]),
        );
        cfg.set(
            &format!("antenna.{i}.iterations"),
            &solution.reports[i].iterations.to_string(),
        );
        cfg.set(
            &format!("antenna.{i}.final_cost"),
            &format!("{}", solution.reports[i].final_cost),
        );
        cfg.set(
            &format!("antenna.{i}.converged"),
            if solution.reports[i].converged { "true" } else { "false" },
        );
    }
    cfg.write_file(path)
}

pub fn read_solution(path: &Path) -> Result<CalibrationSolution> {
    let cfg = Config::from_file(path)?;
    if cfg.get("calib.format") != Some("misar-calib-v1") {
        return Err(Error::DataFormat("unsupported calibration file".into()));
    }
    let geometry_fingerprint = parse_hex32(cfg.require("calib.geometry_fingerprint")?)?;
    let mut entries = Vec::with_capacity(24);
    let mut residual_norms = Vec::with_capacity(24);
    let mut reports = Vec::with_capacity(24);
    for i in 0..24 {
        let get = |field: &str| -> Result<f64> {
            cfg.get_f64(&format!("antenna.{i}.{field}"))?
                .ok_or_else(|| Error::DataFormat(format!("missing antenna.{i}.{field}")))
        };
        entries.push(ChannelError {
            amplitude: get("amplitude")?,
            phase: get("phase")?,
            delay: get("delay")?,
            position_offset: cfg
                .get_vec3(&format!("antenna.{i}.position_offset"))?
                .ok_or_else(|| {
                    Error::DataFormat(format!("missing antenna.{i}.position_offset"))
                })?,
        });
        residual_norms.push(get("residual")?);
        reports.push(SolverReport {
            iterations: cfg.usize_or(&format!("antenna.{i}.iterations"), 0)?,
            final_cost: get("final_cost")?,
            converged: cfg.bool_or(&format!("antenna.{i}.converged"), true)?,
        });
    }
    Ok(CalibrationSolution {
        errors: ChannelErrorModel { entries },
        residual_norms,
        reports,
        geometry_fingerprint,
    })
}
