//! Field persistence.
//!
//! A snapshot is one line of JSON (`d`, `R`, `boundary_mode`, `time`, `seed`,
//! `center`) terminated by `\n`, followed by the site values as little-endian
//! IEEE-754 doubles in site-index order. `-inf` is stored as its bit pattern.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::field::Field;
use super::geometry::{BoundaryMode, LatticeBox};
use crate::error::{PamError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub time: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    d: usize,
    #[serde(rename = "R")]
    radius: usize,
    boundary_mode: BoundaryMode,
    time: f64,
    seed: Option<u64>,
    #[serde(default)]
    center: Option<Vec<i64>>,
}

pub fn encode_field(f: &Field, meta: SnapshotMeta) -> Vec<u8> {
    let b = f.lattice();
    let header = Header {
        d: b.dim(),
        radius: b.radius(),
        boundary_mode: b.boundary(),
        time: meta.time,
        seed: meta.seed,
        center: Some(b.center().to_vec()),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(8 * f.len());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<(Field, SnapshotMeta)> {
    let nl = bytes.iter().position(|&c| c == b'\n').ok_or_else(|| PamError::SnapshotParse("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| PamError::SnapshotParse(format!("malformed header: {e}")))?;
    let center = header.center.unwrap_or_else(|| vec![0; header.d]);
    let lattice = LatticeBox::with_center(header.d, header.radius, center, header.boundary_mode)
        .map_err(|e| PamError::SnapshotParse(e.to_string()))?;
    let payload = &bytes[nl + 1..];
    let expected = lattice.len();
    if payload.len() != 8 * expected {
        return Err(PamError::SizeMismatch { expected, found: payload.len() / 8 });
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let field = Field::new(lattice, values)?;
    Ok((field, SnapshotMeta { time: header.time, seed: header.seed }))
}

pub fn save_field(f: &Field, meta: SnapshotMeta, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_field(f, meta))?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<(Field, SnapshotMeta)> {
    decode_field(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cube_round_trip_through_file() {
        let b = LatticeBox::new(3, 2).unwrap();
        let f = Field::from_fn(b, |x| (x[0] * 7 + x[1] * 3 - x[2]) as f64 / 3.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.snap");
        let meta = SnapshotMeta { time: 1.5, seed: Some(42) };
        save_field(&f, meta, &path).unwrap();
        let (g, m) = load_field(&path).unwrap();
        assert_eq!(g, f);
        assert_eq!(m, meta);
    }

    #[test]
    fn neg_infinity_round_trips() {
        let b = LatticeBox::new(1, 2).unwrap().with_boundary(BoundaryMode::Periodic);
        let f = Field::new(b, vec![0.0, f64::NEG_INFINITY, -1.25, f64::NEG_INFINITY, 3.0]).unwrap();
        let (g, _) = decode_field(&encode_field(&f, SnapshotMeta::default())).unwrap();
        assert_eq!(g.values()[1].to_bits(), f64::NEG_INFINITY.to_bits());
        assert_eq!(g, f);
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let f = Field::constant(LatticeBox::new(2, 1).unwrap(), 1.0);
        let mut bytes = encode_field(&f, SnapshotMeta::default());
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(decode_field(&bytes), Err(PamError::SizeMismatch { expected: 9, found: 8 })));
    }

    #[test]
    fn malformed_header_is_parse_error() {
        assert!(matches!(decode_field(b"{\"d\": 1}\n"), Err(PamError::SnapshotParse(_))));
        assert!(matches!(decode_field(b"no newline"), Err(PamError::SnapshotParse(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(
            prop_oneof![Just(f64::NEG_INFINITY), -1e300f64..1e300], 25)) {
            let f = Field::new(LatticeBox::new(2, 2).unwrap(), vals).unwrap();
            let (g, _) = decode_field(&encode_field(&f, SnapshotMeta { time: 0.0, seed: None })).unwrap();
            let a: Vec<u64> = f.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = g.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
