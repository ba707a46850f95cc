//! The `SSIG1` binary container and a debugging CSV dump.
//!
//! Layout: 8-byte magic `SSIG\x01\0\0\0`, three little-endian `u32`
//! (`F`, `n_theta`, `n_phi`), then `F * n_theta * n_phi` little-endian `f64`
//! in `(feature, theta, phi)` row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EquiangularGrid, SphericalSignal};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"SSIG\x01\0\0\0";

const HEADER_LEN: usize = 8 + 3 * 4;

pub fn encode(x: &SphericalSignal) -> Result<Vec<u8>> {
    let g = x.grid();
    let dims = [x.n_features(), g.n_theta(), g.n_phi()];
    let mut header = [0u32; 3];
    for (h, d) in header.iter_mut().zip(dims) {
        *h = u32::try_from(d).map_err(|_| Error::DimensionOverflow {
            features: u32::MAX,
            n_theta: u32::MAX,
            n_phi: u32::MAX,
        })?;
    }
    checked_cells(header[0], header[1], header[2])?;

    let mut out = Vec::with_capacity(HEADER_LEN + 8 * x.values().len());
    out.extend_from_slice(&MAGIC);
    for h in header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for v in x.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<SphericalSignal> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let word = |k: usize| {
        let o = 8 + 4 * k;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
    };
    let (features, n_theta, n_phi) = (word(0), word(1), word(2));
    let cells = checked_cells(features, n_theta, n_phi)?;
    if features == 0 || n_theta == 0 || n_phi == 0 {
        return Err(Error::InvalidArgument(format!(
            "signal file declares an empty shape {features}x{n_theta}x{n_phi}"
        )));
    }

    let expected = HEADER_LEN as u64 + 8 * cells;
    if (bytes.len() as u64) < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after the payload",
            bytes.len() as u64 - expected
        )));
    }

    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let grid = EquiangularGrid::new(n_theta as usize, n_phi as usize)?;
    SphericalSignal::from_values(grid, features as usize, values)
}

/// Total cell count; it must fit in a `u32`.
fn checked_cells(features: u32, n_theta: u32, n_phi: u32) -> Result<u64> {
    features
        .checked_mul(n_theta)
        .and_then(|v| v.checked_mul(n_phi))
        .map(u64::from)
        .ok_or(Error::DimensionOverflow {
            features,
            n_theta,
            n_phi,
        })
}

pub fn read_signal(path: impl AsRef<Path>) -> Result<SphericalSignal> {
    decode(&fs::read(path)?)
}

pub fn write_signal(x: &SphericalSignal, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(x)?)?;
    Ok(())
}

/// One row per node: `f,i,j,theta,phi,value`.
pub fn write_signal_csv(x: &SphericalSignal, mut w: impl Write) -> Result<()> {
    let g = x.grid();
    writeln!(w, "f,i,j,theta,phi,value")?;
    for f in 0..x.n_features() {
        for i in 0..g.n_theta() {
            for j in 0..g.n_phi() {
                writeln!(
                    w,
                    "{f},{i},{j},{},{},{}",
                    g.theta(i),
                    g.phi(j),
                    x.get(f, i, j)
                )?;
            }
        }
    }
    Ok(())
}
