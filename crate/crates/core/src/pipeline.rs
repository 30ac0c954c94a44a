//! End-to-end experiment orchestration: build the scene, calibrate the
//! array from a simulated scan, synthesize the moving-target collection,
//! track the motion, compensate and focus, then report image metrics.
//!
//! Every stage is seeded and every artifact is persisted with content
//! fingerprints, so a rerun of the same spec reproduces byte-identical
//! reports. Wall-clock timings go to a separate `timing.txt` that is
//! excluded from the determinism contract.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::analysis::{psf_metrics, PsfReport};
use crate::arraygeom::{build_default_geometry, ArrayGeometry, GeometryConfig};
use crate::calib::{estimate, simulate_scan, CalibOptions, CalibrationSolution, ScanGrid};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::imaging::{
    backproject_parallel, export_slices, BpOptions, Image3D, SliceAxis, SliceNorm, VoxelGrid,
};
use crate::io::fingerprint::hex32;
use crate::io::{cube, image as image_io, report::Report, slices as slices_io, table};
use crate::simulator::{
    add_noise, simulate_collection, ChannelErrorModel, Scatterer, Scene, SimOptions, Trajectory,
};
use crate::tracking::{filter_track, KalmanTuning, TrackMeasurement};
use crate::waveform::{ChirpParams, Window};
use crate::{C64, Vec3};

// ---------------------------------------------------------------------------
// Humanoid scene builder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct PlateParams {
    /// Horizontal extent (m).
    pub width: f64,
    /// Vertical extent (m).
    pub height: f64,
    pub spacing: f64,
    /// Plate point reflectivity relative to a body point; must be >= 3.
    pub reflectivity_scale: f64,
    /// Gap between the torso front surface and the plate plane (m).
    pub standoff: f64,
}

impl Default for PlateParams {
    fn default() -> Self {
        PlateParams {
            width: 0.10,
            height: 0.15,
            spacing: 0.006,
            reflectivity_scale: 5.0,
            standoff: 0.025,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HumanoidParams {
    /// Total height (m); all body segments scale with it.
    pub height: f64,
    /// Surface sampling pitch (m); must not exceed half the carrier
    /// wavelength or the surface is undersampled.
    pub spacing: f64,
    pub reflectivity: f64,
    pub plate: Option<PlateParams>,
}

impl Default for HumanoidParams {
    fn default() -> Self {
        HumanoidParams {
            height: 1.7,
            // Half the 24 GHz carrier wavelength.
            spacing: 0.006245,
            reflectivity: 1.0,
            plate: None,
        }
    }
}

/// Axis-aligned box in target-frame meters (min corner, max corner).
pub type RegionBox = (Vec3, Vec3);

#[derive(Debug, Clone)]
pub struct HumanoidScene {
    pub scene: Scene,
    pub body_points: usize,
    pub plate_points: usize,
    /// Voxel neighborhood of the plate, when a plate is present.
    pub plate_region: Option<RegionBox>,
    /// Equal-size body-surface patches used as detection controls.
    pub control_regions: Vec<RegionBox>,
    pub warnings: Vec<String>,
}

/// Sample an ellipsoid shell with approximately uniform surface pitch:
/// latitude rings spaced by `spacing` along the meridian, each ring filled
/// at the same pitch, alternate rings staggered by half a step.
fn sample_ellipsoid(center: Vec3, semi: Vec3, spacing: f64, reflectivity: C64, out: &mut Vec<Scatterer>) {
    let meridian = std::f64::consts::PI * (semi.z + (semi.x + semi.y) / 2.0) / 2.0;
    let n_rings = ((meridian / spacing).ceil() as usize).max(2);
    for ring in 0..=n_rings {
        let v = std::f64::consts::PI * ring as f64 / n_rings as f64;
        let (sv, cv) = v.sin_cos();
        let rx = semi.x * sv;
        let ry = semi.y * sv;
        let circumference = 2.0 * std::f64::consts::PI * ((rx * rx + ry * ry) / 2.0).sqrt();
        let n_pts = ((circumference / spacing).round() as usize).max(1);
        let stagger = 0.5 * (ring % 2) as f64;
        for p in 0..n_pts {
            let u = 2.0 * std::f64::consts::PI * (p as f64 + stagger) / n_pts as f64;
            out.push(Scatterer {
                position: center + Vec3::new(rx * u.cos(), ry * u.sin(), semi.z * cv),
                reflectivity,
            });
        }
    }
}

/// Parametric standing figure: torso, head, legs, and arms as ellipsoid
/// shells (surface point clouds; no volumetric scattering), with an
/// optional high-reflectivity plate carried in front of the torso.
pub fn make_humanoid(params: &HumanoidParams) -> Result<HumanoidScene> {
    if !(params.height > 0.5 && params.height < 3.0) {
        return Err(Error::Config(format!(
            "humanoid height {} m out of range",
            params.height
        )));
    }
    let mut warnings = Vec::new();
    let half_wavelength = crate::SPEED_OF_LIGHT / 24e9 / 2.0;
    if params.spacing > half_wavelength + 1e-12 {
        warnings.push(format!(
            "surface spacing {:.4} m exceeds half wavelength {:.4} m: undersampled surface",
            params.spacing, half_wavelength
        ));
    }
    let s = params.height / 1.7;
    let refl = Complex64::new(params.reflectivity, 0.0);
    let mut points = Vec::new();

    // Segment layout for a 1.7 m figure, z = 0 at mid-height.
    let torso_semi = Vec3::new(0.15, 0.09, 0.28) * s;
    let torso_center = Vec3::new(0.0, 0.0, 0.25 * s);
    sample_ellipsoid(torso_center, torso_semi, params.spacing, refl, &mut points);
    sample_ellipsoid(
        Vec3::new(0.0, 0.0, 0.72 * s),
        Vec3::new(0.09, 0.09, 0.11) * s,
        params.spacing,
        refl,
        &mut points,
    );
    for side in [-1.0, 1.0] {
        sample_ellipsoid(
            Vec3::new(side * 0.08 * s, 0.0, -0.45 * s),
            Vec3::new(0.065, 0.065, 0.40) * s,
            params.spacing,
            refl,
            &mut points,
        );
        sample_ellipsoid(
            Vec3::new(side * 0.205 * s, 0.0, 0.25 * s),
            Vec3::new(0.045, 0.045, 0.27) * s,
            params.spacing,
            refl,
            &mut points,
        );
    }
    let body_points = points.len();

    let mut plate_points = 0;
    let mut plate_region = None;
    let mut control_regions = Vec::new();
    if let Some(plate) = &params.plate {
        if plate.width > 0.0 && plate.height > 0.0 {
            if plate.reflectivity_scale < 3.0 {
                return Err(Error::Config(format!(
                    "plate reflectivity scale {} must be at least 3",
                    plate.reflectivity_scale
                )));
            }
            let plate_y = -(torso_semi.y + plate.standoff);
            let plate_center = Vec3::new(0.0, plate_y, torso_center.z);
            let nx = (plate.width / plate.spacing).floor() as usize + 1;
            let nz = (plate.height / plate.spacing).floor() as usize + 1;
            let plate_refl = Complex64::new(params.reflectivity * plate.reflectivity_scale, 0.0);
            for ix in 0..nx {
                for iz in 0..nz {
                    points.push(Scatterer {
                        position: plate_center
                            + Vec3::new(
                                -plate.width / 2.0 + ix as f64 * plate.spacing,
                                0.0,
                                -plate.height / 2.0 + iz as f64 * plate.spacing,
                            ),
                        reflectivity: plate_refl,
                    });
                }
            }
            plate_points = nx * nz;

            // Plate neighborhood: a box around the plate plane. Controls:
            // equal-size boxes over the bare torso front above and below.
            let hw = plate.width / 2.0 + 0.015;
            let hh = plate.height / 2.0 + 0.015;
            let y_lo = plate_y - 0.02;
            let y_hi = -torso_semi.y + 0.02;
            let make_box = |cx: f64, cz: f64| -> RegionBox {
                (
                    Vec3::new(cx - hw, y_lo, cz - hh),
                    Vec3::new(cx + hw, y_hi, cz + hh),
                )
            };
            plate_region = Some(make_box(0.0, torso_center.z));
            let dz = plate.height + 0.05;
            control_regions.push(make_box(0.0, torso_center.z + dz));
            control_regions.push(make_box(0.0, torso_center.z - dz));
        }
    }

    Ok(HumanoidScene {
        scene: Scene { scatterers: points },
        body_points,
        plate_points,
        plate_region,
        control_regions,
        warnings,
    })
}

/// Mean voxel magnitudes over the plate neighborhood vs the pooled control
/// regions, in dB.
#[derive(Debug, Clone, Copy)]
pub struct RegionContrast {
    pub plate_mean: f64,
    pub control_mean: f64,
    pub contrast_db: f64,
    pub plate_voxels: usize,
    pub control_voxels: usize,
}

pub fn region_contrast(
    image: &Image3D,
    plate: &RegionBox,
    controls: &[RegionBox],
) -> Result<RegionContrast> {
    let mean_over = |b: &RegionBox| -> (f64, usize) {
        let grid = &image.grid;
        let mut sum = 0.0;
        let mut n = 0usize;
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    let p = grid.center_of(i, j, k);
                    if (0..3).all(|a| p[a] >= b.0[a] && p[a] <= b.1[a]) {
                        sum += image.voxels[grid.index(i, j, k)].norm();
                        n += 1;
                    }
                }
            }
        }
        (sum, n)
    };
    let (plate_sum, plate_voxels) = mean_over(plate);
    let mut control_sum = 0.0;
    let mut control_voxels = 0usize;
    for c in controls {
        let (s, n) = mean_over(c);
        control_sum += s;
        control_voxels += n;
    }
    if plate_voxels == 0 || control_voxels == 0 {
        return Err(Error::Analysis(
            "plate or control region lies outside the image grid".into(),
        ));
    }
    let plate_mean = plate_sum / plate_voxels as f64;
    let control_mean = control_sum / control_voxels as f64;
    Ok(RegionContrast {
        plate_mean,
        control_mean,
        contrast_db: 20.0 * (plate_mean / control_mean).log10(),
        plate_voxels,
        control_voxels,
    })
}

// ---------------------------------------------------------------------------
// Config -> domain builders (shared between the pipeline and the CLI)
// ---------------------------------------------------------------------------

pub fn chirp_from_config(cfg: &Config) -> Result<ChirpParams> {
    let d = ChirpParams::default();
    let params = ChirpParams {
        f_start: cfg.f64_or("chirp.f_start", d.f_start)?,
        f_stop: cfg.f64_or("chirp.f_stop", d.f_stop)?,
        pulse_width: cfg.f64_or("chirp.pulse_width", d.pulse_width)?,
        prt: cfg.f64_or("chirp.prt", d.prt)?,
        n_samples: cfg.usize_or("chirp.n_samples", d.n_samples)?,
    };
    params.validate()?;
    Ok(params)
}

pub fn geometry_from_config(cfg: &Config) -> Result<ArrayGeometry> {
    if cfg.contains("tx.0.position") {
        let geom = ArrayGeometry::from_config(cfg)?;
        geom.validate()?;
        Ok(geom)
    } else {
        build_default_geometry(&GeometryConfig::from_config(cfg)?)
    }
}

pub fn scan_grid_from_config(cfg: &Config) -> Result<ScanGrid> {
    let d = ScanGrid::desk();
    Ok(ScanGrid {
        extent_x: cfg.f64_or("scan.extent_x", d.extent_x)?,
        extent_y: cfg.f64_or("scan.extent_y", d.extent_y)?,
        step: cfg.f64_or("scan.step", d.step)?,
        plane_offset: cfg.f64_or("scan.plane_offset", d.plane_offset)?,
    })
}

pub fn error_model_from_config(cfg: &Config, default_seed: u64) -> Result<ChannelErrorModel> {
    if !cfg.bool_or("errors.enabled", false)? {
        return Ok(ChannelErrorModel::identity());
    }
    let seed = cfg.get_u64("errors.seed")?.unwrap_or(default_seed);
    Ok(ChannelErrorModel::random(
        cfg.f64_or("errors.sigma_amplitude", 0.10)?,
        cfg.f64_or("errors.sigma_phase_deg", 30.0)?.to_radians(),
        cfg.f64_or("errors.sigma_delay_ps", 20.0)? * 1e-12,
        cfg.f64_or("errors.sigma_position_mm", 2.0)? * 1e-3,
        seed,
    ))
}

pub fn humanoid_from_config(cfg: &Config) -> Result<HumanoidParams> {
    let d = HumanoidParams::default();
    let pd = PlateParams::default();
    let width = cfg.f64_or("humanoid.plate.width", 0.0)?;
    let height = cfg.f64_or("humanoid.plate.height", 0.0)?;
    let plate = (width > 0.0 && height > 0.0).then_some(PlateParams {
        width,
        height,
        spacing: cfg.f64_or("humanoid.plate.spacing", pd.spacing)?,
        reflectivity_scale: cfg.f64_or("humanoid.plate.reflectivity_scale", pd.reflectivity_scale)?,
        standoff: cfg.f64_or("humanoid.plate.standoff", pd.standoff)?,
    });
    Ok(HumanoidParams {
        height: cfg.f64_or("humanoid.height", d.height)?,
        spacing: cfg.f64_or("humanoid.spacing", d.spacing)?,
        reflectivity: cfg.f64_or("humanoid.reflectivity", d.reflectivity)?,
        plate,
    })
}

/// Scene plus the humanoid metadata when the scene is a humanoid.
pub fn scene_from_config(cfg: &Config, base_dir: &Path) -> Result<(Scene, Option<HumanoidScene>)> {
    match cfg.get("scene.kind").unwrap_or("point") {
        "point" => {
            let position = cfg.vec3_or("scene.point.position", Vec3::zeros())?;
            let r = cfg.vec3_or("scene.point.reflectivity", Vec3::new(1.0, 0.0, 0.0))?;
            Ok((
                Scene::point(position, Complex64::new(r.x, r.y)),
                None,
            ))
        }
        "humanoid" => {
            let h = make_humanoid(&humanoid_from_config(cfg)?)?;
            Ok((h.scene.clone(), Some(h)))
        }
        "file" => {
            let file = cfg.require("scene.file")?;
            Ok((table::read_scene(&base_dir.join(file))?, None))
        }
        other => Err(Error::Config(format!("unknown scene.kind `{other}`"))),
    }
}

pub fn trajectory_from_config(cfg: &Config, base_dir: &Path, t_end: f64) -> Result<Trajectory> {
    match cfg.get("trajectory.kind").unwrap_or("stationary") {
        "stationary" => Ok(Trajectory::stationary(
            cfg.vec3_or("trajectory.position", Vec3::zeros())?,
        )),
        "linear" => Trajectory::linear(
            cfg.vec3_or("trajectory.position", Vec3::zeros())?,
            cfg.vec3_or("trajectory.velocity", Vec3::zeros())?,
            -1.0,
            t_end + 1.0,
        ),
        "file" => {
            let file = cfg.require("trajectory.file")?;
            table::read_trajectory(&base_dir.join(file))
        }
        other => Err(Error::Config(format!("unknown trajectory.kind `{other}`"))),
    }
}

pub fn grid_from_config(cfg: &Config) -> Result<VoxelGrid> {
    let grid = VoxelGrid {
        origin: cfg.vec3_or("grid.origin", Vec3::new(-0.16, -0.16, -0.08))?,
        spacing: cfg.vec3_or("grid.spacing", Vec3::new(0.005, 0.005, 0.005))?,
        dims: {
            let d = cfg.vec3_or("grid.dims", Vec3::new(64.0, 64.0, 32.0))?;
            [d.x as usize, d.y as usize, d.z as usize]
        },
    };
    grid.validate()?;
    Ok(grid)
}

pub fn bp_options_from_config(cfg: &Config) -> Result<BpOptions> {
    Ok(BpOptions {
        upsample: cfg.usize_or("imaging.upsample", 8)?,
        window: Window::parse(cfg.get("imaging.window").unwrap_or("none"))?,
        deterministic: cfg.bool_or("imaging.deterministic", true)?,
    })
}

pub fn tracking_tuning_from_config(cfg: &Config) -> Result<KalmanTuning> {
    let d = KalmanTuning::default();
    // The configured noise is the 3D-norm RMS of the position error; the
    // per-axis deviation feeding the filter is 1/sqrt(3) of it.
    let sigma_total = cfg.f64_or("tracking.sigma_total", 0.01)?;
    Ok(KalmanTuning {
        accel_noise: cfg.f64_or("tracking.accel_noise", d.accel_noise)?,
        meas_noise: sigma_total / 3f64.sqrt(),
        gate_sigma: cfg.f64_or("tracking.gate_sigma", d.gate_sigma)?,
    })
}

/// Noisy position measurements of a trajectory at a fixed rate.
pub fn synthesize_measurements(
    trajectory: &Trajectory,
    rate_hz: f64,
    sigma_per_axis: f64,
    t_end: f64,
    seed: u64,
) -> Result<Vec<TrackMeasurement>> {
    let n = (t_end * rate_hz).ceil() as usize + 2;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, sigma_per_axis.max(1e-300)).unwrap();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate_hz;
        let noise = Vec3::new(
            gauss.sample(&mut rng),
            gauss.sample(&mut rng),
            gauss.sample(&mut rng),
        );
        out.push(TrackMeasurement {
            t,
            position: trajectory.position_at(t)? + noise,
            valid: true,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub report: Report,
    pub image: Image3D,
}

/// Tag stage failures so a pipeline abort names the stage that died.
fn stage<T>(what: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io),
        Error::Config(m) => Error::Config(format!("[{what}] {m}")),
        Error::Geometry(m) => Error::Geometry(format!("[{what}] {m}")),
        Error::Simulation(m) => Error::Simulation(format!("[{what}] {m}")),
        Error::Calibration(m) => Error::Calibration(format!("[{what}] {m}")),
        Error::Tracking(m) => Error::Tracking(format!("[{what}] {m}")),
        Error::Imaging(m) => Error::Imaging(format!("[{what}] {m}")),
        Error::Analysis(m) => Error::Analysis(format!("[{what}] {m}")),
        Error::DataFormat(m) => Error::DataFormat(format!("[{what}] {m}")),
        Error::Numerical(m) => Error::Numerical(format!("[{what}] {m}")),
    })
}

/// Run the full experiment described by `cfg`, leaving all artifacts under
/// `out_dir`: geometry.txt, truth_errors.txt, observations.csv, calib.txt,
/// scene.csv, cube.bin, measurements.csv, track.csv, image.bin/.txt,
/// slices/, report.txt, report.csv, and timing.txt.
pub fn run_experiment(cfg: &Config, out_dir: &Path, workers: usize) -> Result<ExperimentSummary> {
    std::fs::create_dir_all(out_dir)?;
    let base_dir = out_dir.parent().unwrap_or(Path::new(".")).to_path_buf();
    let seed = cfg.get_u64("experiment.seed")?.unwrap_or(1);
    let mut timing: Vec<(String, f64)> = Vec::new();
    let mut clock = std::time::Instant::now();
    let lap = |name: &str, timing: &mut Vec<(String, f64)>, clock: &mut std::time::Instant| {
        timing.push((name.to_string(), clock.elapsed().as_secs_f64()));
        *clock = std::time::Instant::now();
    };

    let params = stage("config", chirp_from_config(cfg))?;
    let geom = stage("config", geometry_from_config(cfg))?;
    geom.to_config().write_file(&out_dir.join("geometry.txt"))?;

    // Ground-truth channel errors.
    let truth = stage("errors", error_model_from_config(cfg, seed))?;
    table::write_solution(
        &out_dir.join("truth_errors.txt"),
        &CalibrationSolution {
            errors: truth.clone(),
            residual_norms: vec![0.0; geom.n_antennas()],
            reports: vec![
                crate::calib::SolverReport {
                    iterations: 0,
                    final_cost: 0.0,
                    converged: true,
                };
                geom.n_antennas()
            ],
            geometry_fingerprint: geom.fingerprint(),
        },
    )?;
    lap("setup", &mut timing, &mut clock);

    // Calibration from a simulated scan.
    let calibrate = cfg.bool_or("calib.enabled", !truth.is_identity())?;
    let solution = if calibrate {
        let grid = stage("scan", scan_grid_from_config(cfg))?;
        let opts = CalibOptions::default();
        let observations = stage("scan", simulate_scan(&geom, &truth, &grid, &params, &opts))?;
        table::write_observations(&out_dir.join("observations.csv"), &observations)?;
        let solution = stage("calibrate", estimate(&observations, &geom, &params, &opts))?;
        table::write_solution(&out_dir.join("calib.txt"), &solution)?;
        solution
    } else {
        CalibrationSolution::identity(&geom)
    };
    lap("calibration", &mut timing, &mut clock);

    // Scene and trajectory.
    let (scene, humanoid) = stage("scene", scene_from_config(cfg, &base_dir))?;
    table::write_scene(&out_dir.join("scene.csv"), &scene)?;
    let n_bursts = cfg.usize_or("collection.n_bursts", 64)?;
    let burst_interval = cfg.f64_or("collection.burst_interval", 0.02)?;
    let t_last = (n_bursts.saturating_sub(1)) as f64 * burst_interval
        + (crate::arraygeom::N_VIRTUAL - 1) as f64 * params.prt;
    let truth_traj = stage("scene", trajectory_from_config(cfg, &base_dir, t_last))?;

    // Raw data collection.
    let sim_opts = SimOptions {
        spreading_loss: cfg.bool_or("simulation.spreading_loss", false)?,
    };
    let mut cube_data = stage(
        "simulate",
        simulate_collection(
            &scene,
            &truth_traj,
            &geom,
            &truth,
            &params,
            n_bursts,
            burst_interval,
            &sim_opts,
        ),
    )?;
    let snr_db = cfg.f64_or("noise.snr_db", f64::INFINITY)?;
    if snr_db.is_finite() {
        let noise_seed = cfg.get_u64("noise.seed")?.unwrap_or(seed.wrapping_add(1));
        cube_data = add_noise(&cube_data, snr_db, noise_seed);
    }
    cube::write_cube(&out_dir.join("cube.bin"), &cube_data)?;
    // The persisted cube (f32 payload) is the source of truth from here on,
    // so rerunning downstream stages from the artifact reproduces this run
    // bit for bit.
    let cube_data = cube::read_cube(&out_dir.join("cube.bin"))?;
    lap("simulate", &mut timing, &mut clock);

    // Motion tracking.
    let track_enabled = cfg.bool_or("tracking.enabled", false)?;
    let (imaging_traj, track_stats) = if track_enabled {
        let tuning = stage("track", tracking_tuning_from_config(cfg))?;
        let rate = cfg.f64_or("tracking.rate_hz", 30.0)?;
        let track_seed = cfg.get_u64("tracking.seed")?.unwrap_or(seed.wrapping_add(2));
        let measurements = stage(
            "track",
            synthesize_measurements(&truth_traj, rate, tuning.meas_noise, t_last + 0.2, track_seed),
        )?;
        table::write_measurements(&out_dir.join("measurements.csv"), &measurements)?;
        let (traj, stats) = stage("track", filter_track(&measurements, &tuning))?;
        (traj, Some(stats))
    } else {
        (truth_traj.clone(), None)
    };
    table::write_trajectory(&out_dir.join("track.csv"), &imaging_traj)?;
    lap("track", &mut timing, &mut clock);

    // Compensate and focus.
    let compensated = stage("compensate", crate::calib::compensate(&cube_data, &solution))?;
    let imaging_geom = stage("image", solution.apply_to(&geom))?;
    let grid = stage("image", grid_from_config(cfg))?;
    let bp_opts = stage("image", bp_options_from_config(cfg))?;
    let img = stage(
        "image",
        backproject_parallel(&compensated, &imaging_geom, &imaging_traj, &grid, &bp_opts, workers),
    )?;
    image_io::write_image(&out_dir.join("image.bin"), &img)?;
    let norm = SliceNorm {
        db_floor: cfg.f64_or("imaging.db_floor", -40.0)?,
        max_project: false,
    };
    let axis = SliceAxis::parse(cfg.get("imaging.slice_axis").unwrap_or("y"))?;
    slices_io::write_slices(&out_dir.join("slices"), &export_slices(&img, axis, &norm), &norm)?;
    lap("image", &mut timing, &mut clock);

    // Report.
    let mut report = Report::new();
    report.push("experiment", "name", cfg.get("experiment.name").unwrap_or("unnamed"));
    report.push("experiment", "seed", seed);
    report.push("experiment", "geometry_fingerprint", hex32(&geom.fingerprint()));
    report.push(
        "experiment",
        "cube_fingerprint",
        hex32(&cube::cube_fingerprint(&cube_data)),
    );
    report.push(
        "experiment",
        "image_fingerprint",
        hex32(&crate::io::fingerprint::sha256(&image_payload_bytes(&img))),
    );
    report.push("collection", "n_bursts", n_bursts);
    report.push("collection", "n_channels", cube_data.n_channels);
    report.push("collection", "n_samples", cube_data.n_samples);
    report.push("collection", "scatterers", scene.scatterers.len());

    if calibrate {
        // Recovery quality against the known truth.
        let mut max_delay = 0.0f64;
        let mut max_offset = 0.0f64;
        let mut max_phase = 0.0f64;
        let mut max_amp = 0.0f64;
        for (e, t) in solution.errors.entries.iter().zip(truth.entries.iter()) {
            max_delay = max_delay.max((e.delay - t.delay).abs());
            max_offset = max_offset.max((e.position_offset - t.position_offset).norm());
            max_phase = max_phase.max(crate::calib::wrap_phase(e.phase - t.phase).abs());
            max_amp = max_amp.max((e.amplitude / t.amplitude - 1.0).abs());
        }
        report.push("calibration", "converged", solution.converged());
        report.push("calibration", "max_delay_error_ps", max_delay * 1e12);
        report.push("calibration", "max_offset_error_mm", max_offset * 1e3);
        report.push("calibration", "max_phase_error_deg", max_phase.to_degrees());
        report.push("calibration", "max_amplitude_error_rel", max_amp);
    }
    if let Some(stats) = track_stats {
        report.push("tracking", "accepted", stats.accepted);
        report.push("tracking", "rejected", stats.rejected);
    }

    let analysis_kind = cfg.get("analysis.kind").unwrap_or(match &humanoid {
        Some(h) if h.plate_region.is_some() => "region",
        _ => "psf",
    });
    match analysis_kind {
        "psf" => {
            let psf = stage("analysis", psf_metrics(&img, None))?;
            push_psf(&mut report, "image", &psf);
            if calibrate {
                // Companion uncalibrated rendering for the before/after
                // comparison: raw cube on the nominal phase centers.
                let uncal = stage(
                    "analysis",
                    backproject_parallel(&cube_data, &geom, &imaging_traj, &grid, &bp_opts, workers),
                )?;
                image_io::write_image(&out_dir.join("image_uncal.bin"), &uncal)?;
                let cmp = stage("analysis", crate::analysis::compare_before_after(&uncal, &img))?;
                report.push("compare", "before_psl_db", cmp.before.psl_db);
                report.push("compare", "after_psl_db", cmp.after.psl_db);
                report.push("compare", "delta_psl_db", cmp.delta_psl_db);
                report.push("compare", "before_width_z_m", cmp.before.widths[2]);
                report.push("compare", "after_width_z_m", cmp.after.widths[2]);
                report.push("compare", "peak_displacement_m", cmp.peak_displacement);
            }
        }
        "region" => {
            let h = humanoid.as_ref().ok_or_else(|| {
                Error::Config("region analysis requires a humanoid scene with a plate".into())
            })?;
            let plate = h.plate_region.as_ref().ok_or_else(|| {
                Error::Config("region analysis requires a plate".into())
            })?;
            let rc = stage("analysis", region_contrast(&img, plate, &h.control_regions))?;
            report.push("region", "plate_mean", rc.plate_mean);
            report.push("region", "control_mean", rc.control_mean);
            report.push("region", "contrast_db", rc.contrast_db);
            report.push("region", "plate_voxels", rc.plate_voxels);
            report.push("region", "control_voxels", rc.control_voxels);
        }
        "none" => {}
        other => {
            return Err(Error::Config(format!("unknown analysis.kind `{other}`")));
        }
    }
    report.write(&out_dir.join("report.txt"), &out_dir.join("report.csv"))?;
    lap("analysis", &mut timing, &mut clock);

    // Wall-clock timings live outside the deterministic artifact set.
    let mut timing_text = String::new();
    for (name, secs) in &timing {
        timing_text.push_str(&format!("{name}: {secs:.3} s\n"));
    }
    std::fs::write(out_dir.join("timing.txt"), timing_text)?;

    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        report,
        image: img,
    })
}

fn push_psf(report: &mut Report, section: &str, psf: &PsfReport) {
    report.push(section, "peak_x_m", psf.peak_position.x);
    report.push(section, "peak_y_m", psf.peak_position.y);
    report.push(section, "peak_z_m", psf.peak_position.z);
    report.push(section, "peak_magnitude", psf.peak_magnitude);
    report.push(section, "width_x_m", psf.widths[0]);
    report.push(section, "width_y_m", psf.widths[1]);
    report.push(section, "width_z_m", psf.widths[2]);
    report.push(section, "psl_db", psf.psl_db);
    report.push(section, "mainlobe_voxels", psf.mainlobe_voxels);
}

fn image_payload_bytes(img: &Image3D) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.voxels.len() * 8);
    for v in &img.voxels {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out
}
