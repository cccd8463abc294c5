//! Field dumps and tabular output.
//!
//! A field dump is the `CGF1` container: magic, `d`, box extents, a JSON blob
//! with the generator metadata, then the row-major matrix entries of every
//! cell as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{CoefficientField, FieldMeta, Region};

const MAGIC: &[u8; 4] = b"CGF1";

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_field<W: Write>(field: &CoefficientField, mut w: W) -> Result<()> {
    let r = field.region();
    let meta = serde_json::to_vec(&field.meta).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(field.d() as u32).to_le_bytes()).map_err(io_err)?;
    for lo in &r.lo {
        w.write_all(&lo.to_le_bytes()).map_err(io_err)?;
    }
    for n in &r.shape {
        w.write_all(&(*n as u64).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&(meta.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&meta).map_err(io_err)?;
    let mut buf = Vec::with_capacity(field.raw().len() * 8);
    for v in field.raw() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_field<R: Read>(mut r: R) -> Result<CoefficientField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    let d = u32::from_le_bytes(b4) as usize;
    if d == 0 || d > 3 {
        return Err(Error::Format(format!("unsupported dimension {d}")));
    }
    let lo = (0..d).map(|_| read_u64(&mut r).map(|v| v as i64)).collect::<Result<Vec<_>>>()?;
    let shape = (0..d).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let mlen = read_u64(&mut r)? as usize;
    if mlen > 1 << 24 {
        return Err(Error::Format(format!("metadata length {mlen} out of range")));
    }
    let mut meta = vec![0u8; mlen];
    r.read_exact(&mut meta).map_err(io_err)?;
    let meta: FieldMeta = serde_json::from_slice(&meta).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let region = Region::new(lo, shape);
    let n = region
        .shape
        .iter()
        .try_fold(d * d, |acc, s| acc.checked_mul(*s))
        .ok_or_else(|| Error::Format("box too large".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() != n * 8 {
        return Err(Error::Format(format!("expected {} data bytes, found {}", n * 8, bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    CoefficientField::new(region, data, meta)
}

pub fn save_field(field: &CoefficientField, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err)?;
    write_field(field, std::io::BufWriter::new(f))
}

pub fn load_field(path: &Path) -> Result<CoefficientField> {
    let f = std::fs::File::open(path).map_err(io_err)?;
    read_field(std::io::BufReader::new(f))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// A CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    /// Floats joined by `;` inside one column.
    Floats(Vec<f64>),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Floats(v) => v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";"),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

/// In-memory table rendered as CSV with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(Cell::render).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

/// Parses a float written by [`fmt_f64`].
pub fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::Format(format!("not a number: {s:?}"))),
    }
}
