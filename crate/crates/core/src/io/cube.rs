//! Binary raw-data-cube container.
//!
//! Fixed 128-byte little-endian header followed by the sample payload as
//! interleaved f32 (re, im) pairs, fast-time sample fastest, then channel,
//! then burst:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MISR"
//!      4     1  version 0x01
//!      5     4  u32 n_bursts
//!      9     4  u32 n_channels
//!     13     4  u32 n_samples
//!     17     8  f64 f_start
//!     25     8  f64 f_stop
//!     33     8  f64 pulse_width
//!     41     8  f64 prt
//!     49     8  f64 burst_interval
//!     57     1  u8 flags (bit0 spreading_loss, bit1 noisy)
//!     58     8  u64 noise seed
//!     66    32  geometry fingerprint
//!     98    30  zero padding
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::simulator::RawDataCube;
use crate::waveform::ChirpParams;

pub const CUBE_MAGIC: [u8; 4] = *b"MISR";
pub const CUBE_VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 128;

const FLAG_SPREADING_LOSS: u8 = 1 << 0;
const FLAG_NOISY: u8 = 1 << 1;

pub fn encode_header(cube: &RawDataCube) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&CUBE_MAGIC);
    h[4] = CUBE_VERSION;
    h[5..9].copy_from_slice(&(cube.n_bursts as u32).to_le_bytes());
    h[9..13].copy_from_slice(&(cube.n_channels as u32).to_le_bytes());
    h[13..17].copy_from_slice(&(cube.n_samples as u32).to_le_bytes());
    h[17..25].copy_from_slice(&cube.params.f_start.to_le_bytes());
    h[25..33].copy_from_slice(&cube.params.f_stop.to_le_bytes());
    h[33..41].copy_from_slice(&cube.params.pulse_width.to_le_bytes());
    h[41..49].copy_from_slice(&cube.params.prt.to_le_bytes());
    h[49..57].copy_from_slice(&cube.burst_interval.to_le_bytes());
    let mut flags = 0u8;
    if cube.spreading_loss {
        flags |= FLAG_SPREADING_LOSS;
    }
    if cube.noise_seed.is_some() {
        flags |= FLAG_NOISY;
    }
    h[57] = flags;
    h[58..66].copy_from_slice(&cube.noise_seed.unwrap_or(0).to_le_bytes());
    h[66..98].copy_from_slice(&cube.geometry_fingerprint);
    h
}

/// Content hash of the cube exactly as it would be written to disk.
pub fn cube_fingerprint(cube: &RawDataCube) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(encode_header(cube));
    for v in &cube.data {
        hasher.update((v.re as f32).to_le_bytes());
        hasher.update((v.im as f32).to_le_bytes());
    }
    hasher.finalize().into()
}

pub fn write_cube(path: &Path, cube: &RawDataCube) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_header(cube))?;
    let mut payload = Vec::with_capacity(cube.data.len() * 8);
    for v in &cube.data {
        payload.extend_from_slice(&(v.re as f32).to_le_bytes());
        payload.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_cube(path: &Path) -> Result<RawDataCube> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)
        .map_err(|_| Error::DataFormat("cube file shorter than header".into()))?;
    if h[0..4] != CUBE_MAGIC {
        return Err(Error::DataFormat("bad magic, not a cube file".into()));
    }
    if h[4] != CUBE_VERSION {
        return Err(Error::DataFormat(format!(
            "unsupported cube version 0x{:02x} (expected 0x{CUBE_VERSION:02x})",
            h[4]
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let n_bursts = u32_at(5);
    let n_channels = u32_at(9);
    let n_samples = u32_at(13);
    let params = ChirpParams {
        f_start: f64_at(17),
        f_stop: f64_at(25),
        pulse_width: f64_at(33),
        prt: f64_at(41),
        n_samples,
    };
    let burst_interval = f64_at(49);
    let flags = h[57];
    let seed = u64::from_le_bytes(h[58..66].try_into().unwrap());
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(&h[66..98]);

    let n_values = n_bursts * n_channels * n_samples;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n_values * 8 {
        return Err(Error::DataFormat(format!(
            "payload length {} does not match declared {} samples ({} bytes)",
            payload.len(),
            n_values,
            n_values * 8
        )));
    }
    let mut data = Vec::with_capacity(n_values);
    for c in payload.chunks_exact(8) {
        let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
        let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
        data.push(Complex64::new(re as f64, im as f64));
    }
    Ok(RawDataCube {
        data,
        n_bursts,
        n_channels,
        n_samples,
        burst_interval,
        params,
        geometry_fingerprint: fingerprint,
        spreading_loss: flags & FLAG_SPREADING_LOSS != 0,
        noise_seed: (flags & FLAG_NOISY != 0).then_some(seed),
        aliased: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cube() -> RawDataCube {
        let params = ChirpParams {
            n_samples: 5,
            ..ChirpParams::default()
        };
        let mut cube = RawDataCube::zeros(2, 3, &params, 20e-3, [7u8; 32]);
        for (i, v) in cube.data.iter_mut().enumerate() {
            *v = Complex64::new(i as f64, -(i as f64) / 2.0);
        }
        cube.spreading_loss = true;
        cube.noise_seed = Some(99);
        cube
    }

    #[test]
    fn header_is_128_bytes_and_payload_matches() {
        let cube = sample_cube();
        let dir = std::env::temp_dir().join("misar_cube_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.bin");
        write_cube(&path, &cube).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + cube.data.len() * 8);
        assert_eq!(&bytes[0..4], b"MISR");
        assert_eq!(bytes[4], 0x01);

        let back = read_cube(&path).unwrap();
        assert_eq!(back.n_bursts, 2);
        assert_eq!(back.n_channels, 3);
        assert_eq!(back.geometry_fingerprint, [7u8; 32]);
        assert_eq!(back.noise_seed, Some(99));
        assert!(back.spreading_loss);

        // Write -> read -> write is byte-identical.
        let path2 = dir.join("roundtrip2.bin");
        write_cube(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path2).unwrap(), bytes);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let cube = sample_cube();
        let dir = std::env::temp_dir().join("misar_cube_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("truncated.bin");
        write_cube(&path, &cube).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::DataFormat(_))));
    }

    #[test]
    fn unknown_version_rejected() {
        let cube = sample_cube();
        let dir = std::env::temp_dir().join("misar_cube_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("version.bin");
        write_cube(&path, &cube).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 0x02;
        std::fs::write(&path, &bytes).unwrap();
        match read_cube(&path) {
            Err(Error::DataFormat(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("misar_cube_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("magic.bin");
        std::fs::write(&path, vec![0u8; 200]).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::DataFormat(_))));
    }
}
