//! Binary field snapshots.
//!
//! Layout: a 64-byte ASCII header `KRF1 n=<n> N=<N> t=<float>\n` padded
//! with spaces, then `N^(2n)` little-endian `f64` samples in row-major axis
//! order `(x1, y1, x2, y2)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{PeriodicGrid, ScalarField};
use crate::error::{KrfError, Result};

pub const HEADER_LEN: usize = 64;

/// Encodes `field` at time `t`. `t` is written in shortest round-trip form.
pub fn encode(field: &ScalarField, t: f64) -> Vec<u8> {
    let grid = field.grid();
    let mut header = format!(
        "KRF1 n={} N={} t={:?}\n",
        grid.complex_dim(),
        grid.resolution(),
        t
    )
    .into_bytes();
    assert!(header.len() <= HEADER_LEN, "snapshot header overflow");
    header.resize(HEADER_LEN, b' ');
    let mut out = header;
    out.reserve(8 * field.values().len());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ScalarField, f64)> {
    if bytes.len() < HEADER_LEN {
        return Err(KrfError::Snapshot(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    let header = std::str::from_utf8(&bytes[..HEADER_LEN])
        .map_err(|_| KrfError::Snapshot("header is not ASCII".into()))?;
    let line = header
        .split('\n')
        .next()
        .filter(|_| header.contains('\n'))
        .ok_or_else(|| KrfError::Snapshot("header has no newline".into()))?;
    let mut parts = line.split(' ');
    if parts.next() != Some("KRF1") {
        return Err(KrfError::Snapshot(format!("bad magic in `{line}`")));
    }
    let mut field = |key: &str| -> Result<&str> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .ok_or_else(|| KrfError::Snapshot(format!("missing `{key}` in `{line}`")))
    };
    let n: usize = parse(field("n=")?, line)?;
    let res: usize = parse(field("N=")?, line)?;
    let t: f64 = parse(field("t=")?, line)?;
    let grid = PeriodicGrid::new(n, res).map_err(|e| KrfError::Snapshot(e.to_string()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.point_count() {
        return Err(KrfError::Snapshot(format!(
            "expected {} payload bytes, found {}",
            8 * grid.point_count(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = ScalarField::new(&grid, values).map_err(|e| KrfError::Snapshot(e.to_string()))?;
    Ok((field, t))
}

fn parse<T: std::str::FromStr>(s: &str, line: &str) -> Result<T> {
    s.parse()
        .map_err(|_| KrfError::Snapshot(format!("cannot parse `{s}` in `{line}`")))
}

pub fn write(path: &Path, field: &ScalarField, t: f64) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(field, t))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(ScalarField, f64)> {
    decode(&fs::read(path)?)
}
