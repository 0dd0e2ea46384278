//! Ensemble export: a columnar binary container and CSV.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"FLPE"`                         |
//! | 4      | 2    | format version, currently 1             |
//! | 6      | 2    | reserved, zero                          |
//! | 8      | 4    | `L`, byte length of the label           |
//! | 12     | L    | label, UTF-8 JSON of [`ProcessLabel`]   |
//! | 12+L   | 8    | horizon `T` (f64)                       |
//! | 20+L   | 8    | steps `N` (u64)                         |
//! | 28+L   | 8    | paths `M` (u64)                         |
//! | 36+L   | 8    | master seed (u64)                       |
//! | 44+L   | 8·M·(N+1) | path values, row-major f64         |
//!
//! Driving increments and jump records are not part of the container.

use ndarray::Array2;
use std::io::{Read, Write};

use super::{PathEnsemble, ProcessLabel, TimeGrid};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FLPE";
pub const VERSION: u16 = 1;

pub fn write_binary<W: Write>(ensemble: &PathEnsemble, mut w: W) -> Result<()> {
    let label = serde_json::to_vec(ensemble.label())?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(label.len() as u32).to_le_bytes())?;
    w.write_all(&label)?;
    w.write_all(&ensemble.grid().horizon().to_le_bytes())?;
    w.write_all(&(ensemble.grid().steps() as u64).to_le_bytes())?;
    w.write_all(&(ensemble.num_paths() as u64).to_le_bytes())?;
    w.write_all(&ensemble.seed().to_le_bytes())?;
    for x in ensemble.paths().iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads an ensemble written by [`write_binary`]. The seed is returned
/// alongside since the container does not carry the full noise provenance.
pub fn read_binary<R: Read>(mut r: R) -> Result<(PathEnsemble, u64)> {
    if read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let _reserved = read_array::<2, _>(&mut r)?;
    let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut label = vec![0u8; len];
    r.read_exact(&mut label)?;
    let label: ProcessLabel = serde_json::from_slice(&label)?;
    let horizon = f64::from_le_bytes(read_array(&mut r)?);
    let steps = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let m = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let grid = TimeGrid::new(horizon, steps)?;
    let mut values = Vec::with_capacity(m * (steps + 1));
    for _ in 0..m * (steps + 1) {
        values.push(f64::from_le_bytes(read_array(&mut r)?));
    }
    let paths = Array2::from_shape_vec((m, steps + 1), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((PathEnsemble::from_matrix(grid, paths, label)?, seed))
}

/// CSV with header `path_id,t_0,...,t_N` holding node times, then one row
/// per path. Meant for small ensembles.
pub fn write_csv<W: Write>(ensemble: &PathEnsemble, mut w: W) -> Result<()> {
    if ensemble.num_paths() == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let mut header = String::from("path_id");
    for t in ensemble.grid().nodes() {
        header.push_str(&format!(",{t}"));
    }
    writeln!(w, "{header}")?;
    for (m, row) in ensemble.paths().outer_iter().enumerate() {
        let mut line = m.to_string();
        for x in row.iter() {
            line.push_str(&format!(",{x}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::simulate_brownian;

    #[test]
    fn binary_layout_and_roundtrip() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let e = simulate_brownian(&g, 3, 77).unwrap();
        let mut buf = Vec::new();
        write_binary(&e, &mut buf).unwrap();
        let label = br#"{"kind":"brownian"}"#;
        assert_eq!(&buf[..4], b"FLPE");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize, label.len());
        assert_eq!(buf.len(), 44 + label.len() + 8 * 3 * 5);
        let (back, seed) = read_binary(&buf[..]).unwrap();
        assert_eq!(seed, 77);
        assert_eq!(back.paths(), e.paths());
        assert_eq!(back.label(), e.label());
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_binary(&b"NOPE...."[..]).is_err());
    }

    #[test]
    fn csv_shape() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let e = simulate_brownian(&g, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&e, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,0,0.5,1");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0,"));
    }
}
