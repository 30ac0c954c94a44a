//! Content fingerprints for provenance tracking.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

pub fn hex32(bytes: &[u8; 32]) -> String {
    let mut s = String::with_capacity(64);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn parse_hex32(s: &str) -> Result<[u8; 32]> {
    let s = s.trim();
    if s.len() != 64 {
        return Err(Error::DataFormat(format!(
            "fingerprint must be 64 hex chars, got {}",
            s.len()
        )));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hex = std::str::from_utf8(chunk).map_err(|_| bad_hex(s))?;
        out[i] = u8::from_str_radix(hex, 16).map_err(|_| bad_hex(s))?;
    }
    Ok(out)
}

fn bad_hex(s: &str) -> Error {
    Error::DataFormat(format!("invalid fingerprint hex `{s}`"))
}
