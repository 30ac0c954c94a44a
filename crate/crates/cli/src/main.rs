//! Command-line front end: simulation, calibration, tracking, imaging,
//! metrics, full pipelines, and the kernel benchmark.
//!
//! Exit codes: 0 success, 2 usage, 3 config, 4 data format, 5 numerical
//! failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use misar_core::analysis::{compare_before_after, psf_metrics};
use misar_core::calib::{estimate, simulate_scan, CalibOptions};
use misar_core::config::Config;
use misar_core::imaging::{
    export_slices, measure_throughput, SliceAxis, SliceNorm,
};
use misar_core::io::{cube, image as image_io, report::Report, slices as slices_io, table};
use misar_core::pipeline::{
    self, bp_options_from_config, chirp_from_config, error_model_from_config,
    geometry_from_config, grid_from_config, scan_grid_from_config, scene_from_config,
    synthesize_measurements, tracking_tuning_from_config, trajectory_from_config,
};
use misar_core::simulator::{add_noise, simulate_collection, SimOptions};
use misar_core::tracking::filter_track;
use misar_core::waveform::Window;
use misar_core::Error;

#[derive(Parser)]
#[command(name = "misar", version, about = "Sparse-MIMO FMCW 3D ISAR toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override experiment.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); defaults to $MISAR_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Override imaging.upsample.
    #[arg(long)]
    upsample: Option<usize>,
    /// Override imaging.window (none | hann).
    #[arg(long)]
    window: Option<String>,
    /// Force deterministic accumulation mode.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn load_config(&self) -> misar_core::Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::from_file(path)?,
            None => Config::new(),
        };
        if let Some(seed) = self.seed {
            cfg.set("experiment.seed", &seed.to_string());
        }
        if let Some(up) = self.upsample {
            cfg.set("imaging.upsample", &up.to_string());
        }
        if let Some(w) = &self.window {
            Window::parse(w)?;
            cfg.set("imaging.window", w);
        }
        if self.deterministic {
            cfg.set("imaging.deterministic", "true");
        }
        Ok(cfg)
    }

    fn workers(&self) -> usize {
        self.workers
            .or_else(|| {
                std::env::var("MISAR_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(0)
    }

    fn base_dir(&self) -> PathBuf {
        self.config
            .as_ref()
            .and_then(|p| p.parent().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a raw data cube from the configured scene and trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the 2D calibration scan and write link observations.
    Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the channel error model from link observations.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Observations CSV (default <out>/observations.csv).
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// Filter noisy track measurements into a smooth trajectory.
    Track {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV; synthesized from the config when omitted.
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Back-project a cube onto the configured voxel grid.
    Image {
        #[command(flatten)]
        common: Common,
        /// Input cube (default <out>/cube.bin).
        #[arg(long)]
        cube: Option<PathBuf>,
        /// Trajectory CSV; config trajectory when omitted.
        #[arg(long)]
        track: Option<PathBuf>,
        /// Calibration solution to compensate with.
        #[arg(long)]
        calib: Option<PathBuf>,
    },
    /// Point-spread-function metrics of an image.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Image payload (.bin with .txt sidecar).
        #[arg(long)]
        image: PathBuf,
        /// Second image for a before/after comparison.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Run the full experiment pipeline from one config.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Benchmark the back-projection kernel per worker count.
    Bench {
        /// Key-value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for bench.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated worker counts.
        #[arg(long, default_value = "1,2,4,8")]
        workers: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Geometry(_) => 3,
                Error::DataFormat(_) => 4,
                Error::Numerical(_) => 5,
                _ => 1,
            })
        }
    }
}

fn run(command: Command) -> misar_core::Result<()> {
    match command {
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Scan { common } => cmd_scan(&common),
        Command::Calibrate { common, obs } => cmd_calibrate(&common, obs),
        Command::Track {
            common,
            measurements,
        } => cmd_track(&common, measurements),
        Command::Image {
            common,
            cube,
            track,
            calib,
        } => cmd_image(&common, cube, track, calib),
        Command::Metrics {
            common,
            image,
            compare,
        } => cmd_metrics(&common, &image, compare),
        Command::Pipeline { common } => {
            let cfg = common.load_config()?;
            std::fs::create_dir_all(&common.out)?;
            pipeline::run_experiment(&cfg, &common.out, common.workers())?;
            println!("pipeline artifacts in {}", common.out.display());
            Ok(())
        }
        Command::Bench {
            config,
            out,
            workers,
        } => cmd_bench(
            &Common {
                config,
                out,
                seed: None,
                workers: None,
                upsample: None,
                window: None,
                deterministic: false,
            },
            &workers,
        ),
    }
}

fn collection_span(cfg: &Config, params: &misar_core::waveform::ChirpParams) -> misar_core::Result<(usize, f64, f64)> {
    let n_bursts = cfg.usize_or("collection.n_bursts", 64)?;
    let interval = cfg.f64_or("collection.burst_interval", 0.02)?;
    let t_last = (n_bursts.saturating_sub(1)) as f64 * interval
        + (misar_core::arraygeom::N_VIRTUAL - 1) as f64 * params.prt;
    Ok((n_bursts, interval, t_last))
}

fn cmd_simulate(common: &Common) -> misar_core::Result<()> {
    let cfg = common.load_config()?;
    std::fs::create_dir_all(&common.out)?;
    let params = chirp_from_config(&cfg)?;
    let geom = geometry_from_config(&cfg)?;
    let seed = cfg.get_u64("experiment.seed")?.unwrap_or(1);
    let errors = error_model_from_config(&cfg, seed)?;
    let (scene, _) = scene_from_config(&cfg, &common.base_dir())?;
    let (n_bursts, interval, t_last) = collection_span(&cfg, &params)?;
    let traj = trajectory_from_config(&cfg, &common.base_dir(), t_last)?;
    let opts = SimOptions {
        spreading_loss: cfg.bool_or("simulation.spreading_loss", false)?,
    };
    let mut data = simulate_collection(
        &scene, &traj, &geom, &errors, &params, n_bursts, interval, &opts,
    )?;
    let snr = cfg.f64_or("noise.snr_db", f64::INFINITY)?;
    if snr.is_finite() {
        data = add_noise(&data, snr, cfg.get_u64("noise.seed")?.unwrap_or(seed.wrapping_add(1)));
    }
    geom.to_config().write_file(&common.out.join("geometry.txt"))?;
    table::write_scene(&common.out.join("scene.csv"), &scene)?;
    table::write_trajectory(&common.out.join("track.csv"), &traj)?;
    cube::write_cube(&common.out.join("cube.bin"), &data)?;
    println!(
        "wrote {} ({} bursts x {} channels x {} samples)",
        common.out.join("cube.bin").display(),
        data.n_bursts,
        data.n_channels,
        data.n_samples
    );
    Ok(())
}

fn cmd_scan(common: &Common) -> misar_core::Result<()> {
    let cfg = common.load_config()?;
    std::fs::create_dir_all(&common.out)?;
    let params = chirp_from_config(&cfg)?;
    let geom = geometry_from_config(&cfg)?;
    let seed = cfg.get_u64("experiment.seed")?.unwrap_or(1);
    let truth = error_model_from_config(&cfg, seed)?;
    let grid = scan_grid_from_config(&cfg)?;
    let observations = simulate_scan(&geom, &truth, &grid, &params, &CalibOptions::default())?;
    table::write_observations(&common.out.join("observations.csv"), &observations)?;
    geom.to_config().write_file(&common.out.join("geometry.txt"))?;
    println!("wrote {} observations", observations.len());
    Ok(())
}

fn cmd_calibrate(common: &Common, obs: Option<PathBuf>) -> misar_core::Result<()> {
    let cfg = common.load_config()?;
    std::fs::create_dir_all(&common.out)?;
    let params = chirp_from_config(&cfg)?;
    let geom = geometry_from_config(&cfg)?;
    let obs_path = obs.unwrap_or_else(|| common.out.join("observations.csv"));
    let observations = table::read_observations(&obs_path)?;
    let solution = estimate(&observations, &geom, &params, &CalibOptions::default())?;
    if !solution.converged() {
        eprintln!("warning: calibration did not converge on all antennas");
    }
    table::write_solution(&common.out.join("calib.txt"), &solution)?;
    println!("wrote {}", common.out.join("calib.txt").display());
    Ok(())
}

fn cmd_track(common: &Common, measurements: Option<PathBuf>) -> misar_core::Result<()> {
    let cfg = common.load_config()?;
    std::fs::create_dir_all(&common.out)?;
    let tuning = tracking_tuning_from_config(&cfg)?;
    let meas = match measurements {
        Some(path) => table::read_measurements(&path)?,
        None => {
            let params = chirp_from_config(&cfg)?;
            let (_, _, t_last) = collection_span(&cfg, &params)?;
            let traj = trajectory_from_config(&cfg, &common.base_dir(), t_last)?;
            let seed = cfg.get_u64("experiment.seed")?.unwrap_or(1);
            let m = synthesize_measurements(
                &traj,
                cfg.f64_or("tracking.rate_hz", 30.0)?,
                tuning.meas_noise,
                t_last + 0.2,
                cfg.get_u64("tracking.seed")?.unwrap_or(seed.wrapping_add(2)),
            )?;
            table::write_measurements(&common.out.join("measurements.csv"), &m)?;
            m
        }
    };
    let (traj, stats) = filter_track(&meas, &tuning)?;
    table::write_trajectory(&common.out.join("track.csv"), &traj)?;
    println!(
        "filtered {} measurements ({} accepted, {} rejected)",
        meas.len(),
        stats.accepted,
        stats.rejected
    );
    Ok(())
}

fn cmd_image(
    common: &Common,
    cube_path: Option<PathBuf>,
    track: Option<PathBuf>,
    calib: Option<PathBuf>,
) -> misar_core::Result<()> {
    let cfg = common.load_config()?;
    std::fs::create_dir_all(&common.out)?;
    let cube_path = cube_path.unwrap_or_else(|| common.out.join("cube.bin"));
    let data = cube::read_cube(&cube_path)?;
    let geom = geometry_from_config(&cfg)?;

    let (data, imaging_geom) = match calib {
        Some(path) => {
            let solution = table::read_solution(&path)?;
            let compensated = misar_core::calib::compensate(&data, &solution)?;
            let corrected = solution.apply_to(&geom)?;
            (compensated, corrected)
        }
        None => (data, geom),
    };

    let traj = match track {
        Some(path) => table::read_trajectory(&path)?,
        None => {
            let t_last = (data.n_bursts.saturating_sub(1)) as f64 * data.burst_interval
                + (data.n_channels - 1) as f64 * data.params.prt;
            trajectory_from_config(&cfg, &common.base_dir(), t_last)?
        }
    };

    let grid = grid_from_config(&cfg)?;
    let opts = bp_options_from_config(&cfg)?;
    let img = misar_core::imaging::backproject_parallel(
        &data,
        &imaging_geom,
        &traj,
        &grid,
        &opts,
        common.workers(),
    )?;
    image_io::write_image(&common.out.join("image.bin"), &img)?;
    let norm = SliceNorm {
        db_floor: cfg.f64_or("imaging.db_floor", -40.0)?,
        max_project: false,
    };
    let axis = SliceAxis::parse(cfg.get("imaging.slice_axis").unwrap_or("y"))?;
    slices_io::write_slices(
        &common.out.join("slices"),
        &export_slices(&img, axis, &norm),
        &norm,
    )?;
    println!("wrote {}", common.out.join("image.bin").display());
    Ok(())
}

fn cmd_metrics(
    common: &Common,
    image: &Path,
    compare: Option<PathBuf>,
) -> misar_core::Result<()> {
    std::fs::create_dir_all(&common.out)?;
    let img = image_io::read_image(image)?;
    let mut report = Report::new();
    match compare {
        None => {
            let psf = psf_metrics(&img, None)?;
            report.push("psf", "peak_x_m", psf.peak_position.x);
            report.push("psf", "peak_y_m", psf.peak_position.y);
            report.push("psf", "peak_z_m", psf.peak_position.z);
            report.push("psf", "width_x_m", psf.widths[0]);
            report.push("psf", "width_y_m", psf.widths[1]);
            report.push("psf", "width_z_m", psf.widths[2]);
            report.push("psf", "psl_db", psf.psl_db);
        }
        Some(other) => {
            let after = image_io::read_image(&other)?;
            let cmp = compare_before_after(&img, &after)?;
            report.push("compare", "before_psl_db", cmp.before.psl_db);
            report.push("compare", "after_psl_db", cmp.after.psl_db);
            report.push("compare", "delta_psl_db", cmp.delta_psl_db);
            report.push("compare", "delta_width_x_m", cmp.delta_widths[0]);
            report.push("compare", "delta_width_y_m", cmp.delta_widths[1]);
            report.push("compare", "delta_width_z_m", cmp.delta_widths[2]);
            report.push("compare", "peak_displacement_m", cmp.peak_displacement);
        }
    }
    report.write(
        &common.out.join("report.txt"),
        &common.out.join("report.csv"),
    )?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_bench(common: &Common, workers_list: &str) -> misar_core::Result<()> {
    let cfg = common.load_config()?;
    std::fs::create_dir_all(&common.out)?;
    let workers: Vec<usize> = workers_list
        .split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad worker count `{w}`")))
        })
        .collect::<misar_core::Result<_>>()?;

    let params = chirp_from_config(&cfg)?;
    let geom = geometry_from_config(&cfg)?;
    let (scene, _) = scene_from_config(&cfg, &common.base_dir())?;
    let (n_bursts, interval, t_last) = collection_span(&cfg, &params)?;
    let traj = trajectory_from_config(&cfg, &common.base_dir(), t_last)?;
    let data = simulate_collection(
        &scene,
        &traj,
        &geom,
        &misar_core::simulator::ChannelErrorModel::identity(),
        &params,
        n_bursts,
        interval,
        &SimOptions::default(),
    )?;
    let grid = grid_from_config(&cfg)?;
    let opts = bp_options_from_config(&cfg)?;
    let samples = measure_throughput(&data, &geom, &traj, &grid, &opts, &workers)?;

    let mut csv = String::from("workers,seconds,voxel_channels_per_second\n");
    for s in &samples {
        csv.push_str(&format!(
            "{},{},{}\n",
            s.workers, s.seconds, s.voxel_channels_per_second
        ));
        println!(
            "workers {:>2}: {:>8.2} s  {:>10.1} Mvox-ch/s",
            s.workers,
            s.seconds,
            s.voxel_channels_per_second / 1e6
        );
    }
    std::fs::write(common.out.join("bench.csv"), csv)?;
    Ok(())
}
