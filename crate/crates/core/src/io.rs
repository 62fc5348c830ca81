//! Binary snapshots and CSV helpers.
//!
//! `DSWF` layout (all little-endian):
//!
//! ```text
//! magic   b"DSWF"
//! version u16        (= 1)
//! dim     u16        (1 or 2)
//! points  u32 x dim
//! bounds  (f64 lower, f64 upper) x dim
//! hbar    f64
//! mass    f64
//! frame   u8         (0 laboratory, 1 center-of-mass)
//! data    (f64 re, f64 im) x N, row-major
//! ```
//!
//! Real fields (`DSRF`) share the header and store one f64 per point.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{Frame, WaveField};
use crate::grid::{Axis, Grid};

pub const WAVE_MAGIC: &[u8; 4] = b"DSWF";
pub const REAL_MAGIC: &[u8; 4] = b"DSRF";
pub const FORMAT_VERSION: u16 = 1;

/// Header fields common to both snapshot kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub grid: Grid,
    pub hbar: f64,
    pub mass: f64,
    pub frame: Frame,
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], h: &SnapshotHeader) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(h.grid.dim() as u16).to_le_bytes())?;
    for a in h.grid.axes() {
        w.write_all(&(a.points as u32).to_le_bytes())?;
    }
    for a in h.grid.axes() {
        w.write_all(&a.lower.to_le_bytes())?;
        w.write_all(&a.upper.to_le_bytes())?;
    }
    w.write_all(&h.hbar.to_le_bytes())?;
    w.write_all(&h.mass.to_le_bytes())?;
    w.write_all(&[h.frame.tag()])?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated snapshot: {e}")))?;
    Ok(b)
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array::<8>(r)?))
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<SnapshotHeader> {
    let m = read_array::<4>(r)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u16::from_le_bytes(read_array::<2>(r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u16::from_le_bytes(read_array::<2>(r)?) as usize;
    if dim == 0 || dim > 2 {
        return Err(Error::Format(format!("bad dimension {dim}")));
    }
    let mut points = Vec::with_capacity(dim);
    for _ in 0..dim {
        points.push(u32::from_le_bytes(read_array::<4>(r)?) as usize);
    }
    let mut axes = Vec::with_capacity(dim);
    for &n in &points {
        let lo = read_f64(r)?;
        let hi = read_f64(r)?;
        axes.push(Axis::new(lo, hi, n).map_err(|e| Error::Format(e.to_string()))?);
    }
    let grid = Grid::new(axes)?;
    let hbar = read_f64(r)?;
    let mass = read_f64(r)?;
    let frame = Frame::from_tag(read_array::<1>(r)?[0])?;
    Ok(SnapshotHeader { grid, hbar, mass, frame })
}

pub fn write_wave(w: &mut impl Write, field: &WaveField) -> Result<()> {
    let h = SnapshotHeader {
        grid: field.grid().clone(),
        hbar: field.hbar(),
        mass: field.mass(),
        frame: field.frame(),
    };
    write_header(w, WAVE_MAGIC, &h)?;
    let mut buf = Vec::with_capacity(field.amplitudes().len() * 16);
    for z in field.amplitudes() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_wave(r: &mut impl Read) -> Result<WaveField> {
    let h = read_header(r, WAVE_MAGIC)?;
    let n = h.grid.len();
    let mut raw = vec![0u8; n * 16];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Format(format!("truncated amplitude block: {e}")))?;
    let amps = raw
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    WaveField::new(h.grid, amps, h.hbar, h.mass, h.frame)
}

pub fn wave_to_bytes(field: &WaveField) -> Vec<u8> {
    let mut v = Vec::new();
    write_wave(&mut v, field).expect("writing to a Vec cannot fail");
    v
}

pub fn write_real(w: &mut impl Write, header: &SnapshotHeader, values: &[f64]) -> Result<()> {
    if values.len() != header.grid.len() {
        return Err(Error::GridMismatch("real field does not match grid".into()));
    }
    write_header(w, REAL_MAGIC, header)?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_real(r: &mut impl Read) -> Result<(SnapshotHeader, Vec<f64>)> {
    let h = read_header(r, REAL_MAGIC)?;
    let mut raw = vec![0u8; h.grid.len() * 8];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Format(format!("truncated value block: {e}")))?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, values))
}

/// Formats a float with 17 significant digits (exact f64 round trip).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_row(cols: &[f64]) -> String {
    let mut s = cols.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_packet;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = Grid::line(-10.0, 10.0, 16).unwrap();
        let f = WaveField::new(g, vec![Complex64::new(1.0, -2.0); 16], 0.5, 2.0, Frame::CenterOfMass).unwrap();
        let b = wave_to_bytes(&f);
        assert_eq!(&b[..4], b"DSWF");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 16);
        assert_eq!(f64::from_le_bytes(b[12..20].try_into().unwrap()), -10.0);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), 10.0);
        assert_eq!(f64::from_le_bytes(b[28..36].try_into().unwrap()), 0.5);
        assert_eq!(f64::from_le_bytes(b[36..44].try_into().unwrap()), 2.0);
        assert_eq!(b[44], 1);
        assert_eq!(f64::from_le_bytes(b[45..53].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[53..61].try_into().unwrap()), -2.0);
        assert_eq!(b.len(), 45 + 16 * 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let g = Grid::line(-10.0, 10.0, 16).unwrap();
        let f = WaveField::new(g, vec![Complex64::new(0.0, 0.0); 16], 1.0, 1.0, Frame::Laboratory).unwrap();
        let mut b = wave_to_bytes(&f);
        b.truncate(100);
        assert!(matches!(read_wave(&mut b.as_slice()), Err(Error::Format(_))));
        b[0] = b'X';
        assert!(matches!(read_wave(&mut b.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn real_field_round_trip() {
        let g = Grid::square(-1.0, 1.0, 16).unwrap();
        let h = SnapshotHeader { grid: g.clone(), hbar: 1.0, mass: 3.0, frame: Frame::Laboratory };
        let vals: Vec<f64> = (0..g.len()).map(|i| i as f64 * 0.1).collect();
        let mut buf = Vec::new();
        write_real(&mut buf, &h, &vals).unwrap();
        assert_eq!(&buf[..4], b"DSRF");
        let (h2, v2) = read_real(&mut buf.as_slice()).unwrap();
        assert_eq!(h2, h);
        assert_eq!(v2, vals);
    }

    #[test]
    fn csv_precision_round_trips() {
        let x = 0.1 + 0.2;
        let s = fmt_f64(x);
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }

    proptest! {
        #[test]
        fn wave_snapshot_round_trip(c in -2.0f64..2.0, v in -2.0f64..2.0, s in 0.5f64..1.5, hbar in 0.1f64..2.0) {
            let g = Grid::square(-10.0, 10.0, 32).unwrap();
            let f = gaussian_packet(&g, [c, -c], [v, 0.5], s, hbar, 1.5).unwrap();
            let bytes = wave_to_bytes(&f);
            let back = read_wave(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
