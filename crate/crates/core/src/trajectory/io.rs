//! PTRJ binary and CSV trajectory files.
//!
//! PTRJ layout (little-endian): magic `PTRJ`, u32 version, u64 n, u32 T,
//! u32 d, f64 times[T], then positions[n·T·d] particle-major, then time,
//! then dimension. Version 1 stores positions as f32, version 2 as f64.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::TrajectoryDataset;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PTRJ";
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionPrecision {
    #[default]
    F32,
    F64,
}

impl PositionPrecision {
    fn version(self) -> u32 {
        match self {
            PositionPrecision::F32 => 1,
            PositionPrecision::F64 => 2,
        }
    }
}

pub fn write_ptrj<W: Write>(ds: &TrajectoryDataset, mut w: W, precision: PositionPrecision) -> Result<()> {
    let mut header = Vec::with_capacity(HEADER_LEN + 8 * ds.steps());
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&precision.version().to_le_bytes());
    header.extend_from_slice(&(ds.n() as u64).to_le_bytes());
    header.extend_from_slice(&(ds.steps() as u32).to_le_bytes());
    header.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    for t in ds.times() {
        header.extend_from_slice(&t.to_le_bytes());
    }
    w.write_all(&header)?;
    let body: Vec<u8> = match precision {
        PositionPrecision::F32 => ds.positions().iter().flat_map(|&p| (p as f32).to_le_bytes()).collect(),
        PositionPrecision::F64 => ds.positions().iter().flat_map(|p| p.to_le_bytes()).collect(),
    };
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Writes the default (f32) PTRJ encoding.
pub fn write_trajectories<W: Write>(ds: &TrajectoryDataset, w: W) -> Result<()> {
    write_ptrj(ds, w, PositionPrecision::F32)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("slice of 4"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("slice of 8"))
}

pub fn load_ptrj<R: Read>(mut r: R) -> Result<TrajectoryDataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_ptrj(&bytes)
}

fn parse_ptrj(bytes: &[u8]) -> Result<TrajectoryDataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing PTRJ magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt("truncated PTRJ header".into()));
    }
    let version = u32_at(bytes, 4);
    let width = match version {
        1 => 4,
        2 => 8,
        v => return Err(Error::Format(format!("unsupported PTRJ version {v}"))),
    };
    let n = u64_at(bytes, 8) as usize;
    let steps = u32_at(bytes, 16) as usize;
    let dim = u32_at(bytes, 20) as usize;
    let count = n
        .checked_mul(steps)
        .and_then(|x| x.checked_mul(dim))
        .ok_or_else(|| Error::Corrupt("record counts overflow".into()))?;
    let expected = HEADER_LEN + 8 * steps + width * count;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "PTRJ header declares n={n}, T={steps}, d={dim} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let mut at = HEADER_LEN;
    let times: Vec<f64> = (0..steps)
        .map(|k| f64::from_le_bytes(bytes[at + 8 * k..at + 8 * k + 8].try_into().expect("8 bytes")))
        .collect();
    at += 8 * steps;
    let body = &bytes[at..];
    let positions: Vec<f64> = match width {
        4 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        _ => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    TrajectoryDataset::new(dim, times, positions)
}

/// Reads CSV with header `id,t,x,y[,z]`, one row per particle per step.
/// Particles are numbered in order of first appearance.
pub fn load_csv<R: Read>(r: R) -> Result<TrajectoryDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let dim = match names.as_slice() {
        ["id", "t", "x", "y"] => 2,
        ["id", "t", "x", "y", "z"] => 3,
        _ => {
            return Err(Error::Format(format!(
                "CSV header must be id,t,x,y[,z], got {}",
                names.join(",")
            )))
        }
    };

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, Vec<f64>)>> = HashMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().map_err(|e| {
                Error::Format(format!("row {}: column {} '{}': {e}", line + 2, names[c], &rec[c]))
            })
        };
        let id = rec[0].to_string();
        let t = parse(1)?;
        let p = (2..2 + dim).map(parse).collect::<Result<Vec<f64>>>()?;
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((t, p));
    }
    if order.is_empty() {
        return Err(Error::Format("CSV contains no rows".into()));
    }

    let mut times: Option<Vec<f64>> = None;
    let mut positions = Vec::new();
    for id in &order {
        let mut samples = rows.remove(id).expect("id recorded");
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
        if ts.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Corrupt(format!("particle {id} has duplicate time values")));
        }
        match &times {
            None => times = Some(ts),
            Some(expected) if *expected != ts => {
                return Err(Error::Corrupt(format!(
                    "particle {id} does not share the time samples of particle {}",
                    order[0]
                )))
            }
            _ => {}
        }
        for (_, p) in samples {
            positions.extend(p);
        }
    }
    TrajectoryDataset::new(dim, times.expect("at least one particle"), positions)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("CSV: {e}"))
}

/// Reads either format, detected from the leading bytes.
pub fn load_trajectories<R: Read>(mut r: R) -> Result<TrajectoryDataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.starts_with(b"id,") || bytes.starts_with(b"id ,") {
        load_csv(bytes.as_slice())
    } else {
        parse_ptrj(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrajectoryDataset {
        let positions: Vec<f64> = (0..2 * 3 * 2).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
        TrajectoryDataset::new(2, vec![0.0, 0.25, 1.0], positions).unwrap()
    }

    #[test]
    fn f64_round_trip_is_bitwise() {
        let ds = sample();
        let mut buf = Vec::new();
        write_ptrj(&ds, &mut buf, PositionPrecision::F64).unwrap();
        let back = load_trajectories(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn f32_round_trip_stores_rounded_positions() {
        let ds = sample();
        let mut buf = Vec::new();
        write_trajectories(&ds, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 3 * 8 + 12 * 4);
        let back = load_trajectories(buf.as_slice()).unwrap();
        assert_eq!(back.times(), ds.times());
        for (a, b) in back.positions().iter().zip(ds.positions()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let mut again = Vec::new();
        write_trajectories(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let ds = sample();
        let mut buf = Vec::new();
        write_trajectories(&ds, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_ptrj(bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(load_ptrj(short), Err(Error::Corrupt(_))));
        let mut v9 = buf.clone();
        v9[4] = 9;
        assert!(matches!(load_ptrj(v9.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn non_monotone_times_fail_validation() {
        let ds = sample();
        let mut buf = Vec::new();
        write_trajectories(&ds, &mut buf).unwrap();
        // overwrite t[1] with 5.0 so times are no longer increasing
        buf[HEADER_LEN + 8..HEADER_LEN + 16].copy_from_slice(&5.0f64.to_le_bytes());
        assert!(matches!(load_ptrj(buf.as_slice()), Err(Error::Validation(_))));
    }

    #[test]
    fn csv_two_by_two() {
        let text = "id,t,x,y\n7,0,0.0,1.0\n7,1,0.5,1.5\n3,0,2.0,2.0\n3,1,2.5,2.5\n";
        let ds = load_trajectories(text.as_bytes()).unwrap();
        assert_eq!((ds.n(), ds.steps(), ds.dim()), (2, 2, 2));
        assert_eq!(ds.position(0, 1), &[0.5, 1.5]);
        assert_eq!(ds.position(1, 0), &[2.0, 2.0]);
    }

    #[test]
    fn csv_rejects_mismatched_times() {
        let text = "id,t,x,y\n1,0,0,0\n1,1,0,0\n2,0,1,1\n2,2,1,1\n";
        assert!(matches!(load_csv(text.as_bytes()), Err(Error::Corrupt(_))));
        let header = "id,time,x,y\n1,0,0,0\n";
        assert!(matches!(load_csv(header.as_bytes()), Err(Error::Format(_))));
    }
}
