//! DGEM embedding cache.
//!
//! Layout (little-endian): magic `DGEM`, u32 version = 1, u64 n, u32 m,
//! f64 eigenvalues[m], f64 stationary[n], f32 eigenvectors[n·m] particle-major.

use std::io::{Read, Write};

use super::embedding::DiffusionEmbedding;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DGEM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

pub fn write_embedding<W: Write>(e: &DiffusionEmbedding, mut w: W) -> Result<()> {
    let (n, m) = (e.n(), e.modes());
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (m + n) + 4 * n * m);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    for v in e.eigenvalues().iter().chain(e.stationary()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in e.eigenvectors() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_embedding<R: Read>(mut r: R) -> Result<DiffusionEmbedding> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing DGEM magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt("truncated DGEM header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported DGEM version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let m = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
    let expected = n
        .checked_mul(m)
        .and_then(|nm| nm.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN + 8 * (n + m)))
        .ok_or_else(|| Error::Corrupt("DGEM sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "DGEM header declares n={n}, m={m} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let f64s = |from: usize, count: usize| -> Vec<f64> {
        bytes[from..from + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let eigenvalues = f64s(HEADER_LEN, m);
    let stationary = f64s(HEADER_LEN + 8 * m, n);
    let eigenvectors = bytes[HEADER_LEN + 8 * (m + n)..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    DiffusionEmbedding::new(eigenvalues, eigenvectors, stationary)
}
