//! Field persistence: a self-describing little-endian binary container and
//! CSV export of scalar fields.
//!
//! Container layout: magic `DHFIELD1`, `u32` format version, `u8` grid kind
//! (0 torus, 1 box), `u8` dimension, `u8` rank, `u8` symmetry flag, `u64`
//! intervals per axis, `f64` lo, `f64` hi, `u64` component count, `u64` node
//! count, then the component-major `f64` payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fields::{BoxGrid, Field, Grid, Symmetry, TorusGrid};

const MAGIC: &[u8; 8] = b"DHFIELD1";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_field(mut w: impl Write, f: &Field) -> Result<()> {
    let g = f.grid();
    let (kind, n, lo, hi) = match g {
        Grid::Torus(t) => (0u8, t.n(), 0.0, 1.0),
        Grid::Box(b) => (1u8, b.n(), b.lo(), b.hi()),
    };
    let sym = match f.symmetry() {
        Symmetry::General => 0u8,
        Symmetry::Symmetric => 1,
        Symmetry::Skew => 2,
    };
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[kind, g.d() as u8, f.rank() as u8, sym])?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&lo.to_le_bytes())?;
    w.write_all(&hi.to_le_bytes())?;
    w.write_all(&(f.num_components() as u64).to_le_bytes())?;
    w.write_all(&(f.num_nodes() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * f.data().len());
    for v in f.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_field(mut r: impl Read) -> Result<Field> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a field container".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let mut hdr = [0u8; 4];
    r.read_exact(&mut hdr)?;
    let (kind, d, rank, sym) = (hdr[0], hdr[1] as usize, hdr[2] as usize, hdr[3]);
    let n = read_u64(&mut r)? as usize;
    let lo = read_f64(&mut r)?;
    let hi = read_f64(&mut r)?;
    let ncomp = read_u64(&mut r)? as usize;
    let nnodes = read_u64(&mut r)? as usize;
    let grid: Grid = match kind {
        0 => TorusGrid::new(d, n)?.into(),
        1 => BoxGrid::domain(d, lo, hi, n)?.into(),
        k => return Err(Error::Format(format!("unknown grid kind {k}"))),
    };
    if rank > 2 || ncomp != d.pow(rank as u32) || nnodes != grid.num_nodes() {
        return Err(Error::Format("header sizes are inconsistent".into()));
    }
    let mut bytes = vec![0u8; 8 * ncomp * nnodes];
    r.read_exact(&mut bytes)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let comps = data.chunks(nnodes).map(|c| c.to_vec()).collect();
    let mut f = Field::from_components(grid, rank, comps)?;
    let symmetry = match sym {
        0 => Symmetry::General,
        1 => Symmetry::Symmetric,
        2 => Symmetry::Skew,
        s => return Err(Error::Format(format!("unknown symmetry flag {s}"))),
    };
    f.set_symmetry(symmetry)?;
    Ok(f)
}

/// CSV with one row per node: coordinates `x0..x{d-1}` then the value.
pub fn write_csv(mut w: impl Write, f: &Field) -> Result<()> {
    if f.rank() != 0 {
        return Err(Error::RankMismatch("CSV export is for scalar fields".into()));
    }
    let d = f.d();
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).chain(["value".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    let g = f.grid();
    for k in 0..f.num_nodes() {
        let x = g.point(k);
        let coords: Vec<String> = x[..d].iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{},{:.17e}", coords.join(","), f.at(k))?;
    }
    Ok(())
}

/// Serde adapter for exponents that may be infinite: written as the string
/// `"inf"`, since JSON has no infinity.
pub mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("`{t}` is not an exponent"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip() {
        let g = BoxGrid::centered(2, 2.0, 8).unwrap();
        let mut m = Field::matrix_fn(g, |x| [[0.0, x[0] - x[1], 0.0], [x[1] - x[0], 0.0, 0.0], [0.0; 3]]);
        m.set_symmetry(Symmetry::Skew).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &m).unwrap();
        let back = read_field(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let t = Field::scalar_fn(TorusGrid::new(1, 8).unwrap(), |x| x[0].sin());
        let mut buf = Vec::new();
        write_field(&mut buf, &t).unwrap();
        assert_eq!(read_field(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn corrupt_container_is_rejected() {
        assert!(matches!(read_field(&b"NOTAFIELD..."[..]), Err(Error::Format(_))));
        let t = Field::zeros(TorusGrid::new(1, 8).unwrap(), 0);
        let mut buf = Vec::new();
        write_field(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_field(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let t = Field::scalar_fn(TorusGrid::new(2, 8).unwrap(), |x| x[0] + x[1]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &t).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 65);
        assert!(s.starts_with("x0,x1,value"));
    }
}
