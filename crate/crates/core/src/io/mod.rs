//! File formats: the binary cube container, raw image volumes with text
//! sidecars, CSV tables for tracks and calibration observables, grayscale
//! slice export, and key-value reports. All formats round-trip byte for
//! byte.

pub mod cube;
pub mod fingerprint;
pub mod image;
pub mod report;
pub mod slices;
pub mod table;

pub use cube::{read_cube, write_cube, CUBE_MAGIC, CUBE_VERSION};
pub use fingerprint::{hex32, parse_hex32, sha256};
pub use image::{read_image, write_image};
pub use report::Report;
