//! Sparse-MIMO FMCW 3D ISAR toolkit: synthetic echo generation, active array
//! calibration, motion-tracked back-projection focusing, and image metrics.

pub mod analysis;
pub mod arraygeom;
pub mod calib;
pub mod config;
pub mod error;
pub mod imaging;
pub mod io;
pub mod pipeline;
pub mod simulator;
pub mod tracking;
pub mod waveform;

pub use error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// 3-vector in meters, scene-center origin, +z vertical, +y toward the scene.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
