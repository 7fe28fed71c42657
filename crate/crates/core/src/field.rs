//! Per-particle scalar fields and the DGSF field file.
//!
//! DGSF layout (little-endian): magic `DGSF`, u64 n, f32 values[n]. Field
//! metadata travels in a JSON sidecar next to the binary file.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    ParticleSeparation,
    DiffusionSeparation,
    Distance,
    Density,
    Opacity,
}

/// Forward time looks at neighbourhoods at `t_1` (repulsion), backward at
/// `t_T` (attraction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Config(format!("direction must be forward or backward, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub kind: FieldKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<Direction>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sources: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_step: Option<usize>,
}

impl FieldMeta {
    pub fn new(kind: FieldKind) -> Self {
        FieldMeta { kind, direction: None, scale: None, k: None, sources: None, time_step: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub meta: FieldMeta,
}

impl ScalarField {
    pub fn new(values: Vec<f64>, meta: FieldMeta) -> Self {
        ScalarField { values, meta }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kind(&self) -> FieldKind {
        self.meta.kind
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Min–max rescales a field to [0, 1] and raises it to `exponent`; with
/// `invert` returns `1 − v^a` instead. A constant field maps to all zeros
/// (all ones when inverted).
pub fn opacity_map(field: &ScalarField, exponent: f64, invert: bool) -> Result<ScalarField> {
    if !(exponent > 0.0) || !exponent.is_finite() {
        return Err(Error::Argument(format!("opacity exponent must be positive, got {exponent}")));
    }
    let (lo, hi) = field.min_max();
    let span = hi - lo;
    let constant = !(span > 0.0);
    if constant {
        log::warn!("opacity map of a constant field; all values map to 0");
    }
    let values = field
        .values
        .iter()
        .map(|&v| {
            let base = if constant { 0.0 } else { ((v - lo) / span).clamp(0.0, 1.0) };
            let o = base.powf(exponent);
            if invert {
                1.0 - o
            } else {
                o
            }
        })
        .collect();
    let mut meta = field.meta.clone();
    meta.kind = FieldKind::Opacity;
    Ok(ScalarField { values, meta })
}

const MAGIC: &[u8; 4] = b"DGSF";

pub fn write_field_values<W: Write>(values: &[f64], mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_field_values<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing DGSF magic".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Corrupt("truncated DGSF header".into()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 12 + 4 * n {
        return Err(Error::Corrupt(format!("DGSF declares {n} values but holds {} bytes", bytes.len() - 12)));
    }
    Ok(bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect())
}

/// `field.dgsf` → `field.dgsf.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    #[serde(flatten)]
    meta: FieldMeta,
}

/// Writes the binary field and its JSON sidecar.
pub fn save_field(field: &ScalarField, path: &Path) -> Result<()> {
    write_field_values(&field.values, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    let sidecar = Sidecar { n: field.len(), meta: field.meta.clone() };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<ScalarField> {
    let values = read_field_values(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let text = std::fs::read_to_string(sidecar_path(path))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if sidecar.n != values.len() {
        return Err(Error::Corrupt("sidecar length disagrees with field file".into()));
    }
    Ok(ScalarField { values, meta: sidecar.meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(values: Vec<f64>) -> ScalarField {
        ScalarField::new(values, FieldMeta::new(FieldKind::DiffusionSeparation))
    }

    #[test]
    fn linear_opacity_spans_unit_interval() {
        let o = opacity_map(&field(vec![2.0, 3.0, 4.0]), 1.0, false).unwrap();
        assert_eq!(o.values, vec![0.0, 0.5, 1.0]);
        assert_eq!(o.kind(), FieldKind::Opacity);
    }

    #[test]
    fn squared_and_inverted() {
        let f = field(vec![0.0, 0.5, 1.0]);
        let sq = opacity_map(&f, 2.0, false).unwrap();
        assert_eq!(sq.values[1], 0.25);
        let inv = opacity_map(&f, 2.0, true).unwrap();
        assert_eq!(inv.values, vec![1.0, 0.75, 0.0]);
    }

    #[test]
    fn constant_field_maps_to_zero() {
        let o = opacity_map(&field(vec![7.0; 4]), 1.5, false).unwrap();
        assert!(o.values.iter().all(|&v| v == 0.0));
        assert!(opacity_map(&field(vec![1.0]), 0.0, false).is_err());
    }

    #[test]
    fn dgsf_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sep.dgsf");
        let mut f = field(vec![0.5, -1.25, 3.0]);
        f.meta.scale = Some(145.0);
        f.meta.direction = Some(Direction::Forward);
        save_field(&f, &path).unwrap();
        let back = load_field(&path).unwrap();
        assert_eq!(back, f);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(json["scale"], 145.0);
        assert_eq!(json["kind"], "diffusion-separation");
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DGSF");
        assert_eq!(bytes.len(), 12 + 12);
    }
}
