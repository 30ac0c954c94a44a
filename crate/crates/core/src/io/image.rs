//! Image volume persistence: raw little-endian f32 (re, im) pairs, voxel
//! major with x fastest, plus a structured text sidecar carrying the grid
//! and provenance. `image.bin` pairs with `image.txt`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::imaging::{Image3D, ImageProvenance, VoxelGrid};
use crate::io::fingerprint::{hex32, parse_hex32};
use crate::waveform::Window;
use crate::Vec3;

fn sidecar_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("txt")
}

pub fn write_image(bin_path: &Path, image: &Image3D) -> Result<()> {
    let mut w = BufWriter::new(File::create(bin_path)?);
    for v in &image.voxels {
        w.write_all(&(v.re as f32).to_le_bytes())?;
        w.write_all(&(v.im as f32).to_le_bytes())?;
    }
    w.flush()?;

    let mut cfg = Config::new();
    cfg.set("image.format", "misar-image-v1");
    cfg.set(
        "image.dims",
        &format!(
            "{} {} {}",
            image.grid.dims[0], image.grid.dims[1], image.grid.dims[2]
        ),
    );
    let v3 = |v: &Vec3| format!("{} {} {}", v.x, v.y, v.z);
    cfg.set("image.origin", &v3(&image.grid.origin));
    cfg.set("image.spacing", &v3(&image.grid.spacing));
    cfg.set("image.cube_fingerprint", &hex32(&image.provenance.cube_fingerprint));
    cfg.set(
        "image.geometry_fingerprint",
        &hex32(&image.provenance.geometry_fingerprint),
    );
    cfg.set("image.upsample", &image.provenance.upsample.to_string());
    cfg.set("image.window", image.provenance.window.as_str());
    cfg.set(
        "image.deterministic",
        if image.provenance.deterministic { "true" } else { "false" },
    );
    cfg.set(
        "image.excluded_voxels",
        &image.provenance.excluded_voxels.to_string(),
    );
    cfg.write_file(&sidecar_path(bin_path))?;
    Ok(())
}

pub fn read_image(bin_path: &Path) -> Result<Image3D> {
    let cfg = Config::from_file(&sidecar_path(bin_path))?;
    if cfg.get("image.format") != Some("misar-image-v1") {
        return Err(Error::DataFormat("unsupported image sidecar format".into()));
    }
    let dims_raw = cfg
        .get_vec3("image.dims")?
        .ok_or_else(|| Error::DataFormat("sidecar missing dims".into()))?;
    let dims = [dims_raw.x as usize, dims_raw.y as usize, dims_raw.z as usize];
    let grid = VoxelGrid {
        origin: cfg
            .get_vec3("image.origin")?
            .ok_or_else(|| Error::DataFormat("sidecar missing origin".into()))?,
        spacing: cfg
            .get_vec3("image.spacing")?
            .ok_or_else(|| Error::DataFormat("sidecar missing spacing".into()))?,
        dims,
    };
    grid.validate()?;

    let mut payload = Vec::new();
    BufReader::new(File::open(bin_path)?).read_to_end(&mut payload)?;
    if payload.len() != grid.len() * 8 {
        return Err(Error::DataFormat(format!(
            "image payload {} bytes, expected {}",
            payload.len(),
            grid.len() * 8
        )));
    }
    let voxels = payload
        .chunks_exact(8)
        .map(|c| {
            Complex64::new(
                f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
            )
        })
        .collect();

    Ok(Image3D {
        grid,
        voxels,
        provenance: ImageProvenance {
            cube_fingerprint: parse_hex32(cfg.require("image.cube_fingerprint")?)?,
            geometry_fingerprint: parse_hex32(cfg.require("image.geometry_fingerprint")?)?,
            upsample: cfg.usize_or("image.upsample", 8)?,
            window: Window::parse(cfg.get("image.window").unwrap_or("none"))?,
            deterministic: cfg.bool_or("image.deterministic", true)?,
            excluded_voxels: cfg.usize_or("image.excluded_voxels", 0)?,
        },
    })
}
