//! PGM (P5, 8-bit) export of image slices with a text metadata sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::Config;
use crate::error::Result;
use crate::imaging::{GraySlice, SliceNorm};

/// Write each slice as `slice_NNN.pgm` plus one `slices.txt` sidecar mapping
/// file names to axis coordinates.
pub fn write_slices(dir: &Path, slices: &[GraySlice], norm: &SliceNorm) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut meta = Config::new();
    if let Some(first) = slices.first() {
        meta.set("slices.axis", first.axis.as_str());
    }
    meta.set("slices.count", &slices.len().to_string());
    meta.set_f64("slices.db_floor", norm.db_floor);
    meta.set(
        "slices.mode",
        if norm.max_project { "max_project" } else { "raw" },
    );
    for s in slices {
        let name = format!("slice_{:03}.pgm", s.index);
        let mut w = BufWriter::new(File::create(dir.join(&name))?);
        write!(w, "P5\n{} {}\n255\n", s.width, s.height)?;
        w.write_all(&s.pixels)?;
        w.flush()?;
        meta.set(&format!("slice.{}.file", s.index), &name);
        meta.set_f64(&format!("slice.{}.coordinate", s.index), s.coordinate);
    }
    meta.write_file(&dir.join("slices.txt"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::SliceAxis;

    #[test]
    fn pgm_header_and_sidecar() {
        let dir = std::env::temp_dir().join("misar_slices_test");
        let slices = vec![GraySlice {
            axis: SliceAxis::Z,
            index: 0,
            coordinate: 0.125,
            width: 3,
            height: 2,
            pixels: vec![0, 128, 255, 10, 20, 30],
        }];
        write_slices(&dir, &slices, &SliceNorm::default()).unwrap();
        let bytes = std::fs::read(dir.join("slice_000.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
        let meta = std::fs::read_to_string(dir.join("slices.txt")).unwrap();
        assert!(meta.contains("slice.0.coordinate = 0.125"));
    }
}
