//! File formats: the `GVT1` tensor container, `GVTR` trace files and a
//! CSV import path for small matrices.
//!
//! `GVT1` layout (all integers little-endian u32 unless noted):
//! magic `"GVT1"`, version, dtype (0 = i32), signedness (0 = signed,
//! 1 = unsigned), bits, ndim, dims[ndim], then the row-major i32
//! payload.
//!
//! `GVTR` layout: magic `"GVTR"`, u32 {C, S_BITS, n_cycles}, then
//! `n_cycles` packed little-endian u16 triplets (exact, prev, sampled).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{IntMatrix, Signedness};
use crate::oracle::{ErrorTrace, TraceRecord};

pub const GVT_MAGIC: &[u8; 4] = b"GVT1";
pub const GVT_VERSION: u32 = 1;
pub const GVTR_MAGIC: &[u8; 4] = b"GVTR";

/// An n-dimensional i32 tensor as stored in a `GVT1` container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<i32>,
    pub bits: u8,
    pub signedness: Signedness,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// View a 2-D tensor as a matrix.
    pub fn into_matrix(self) -> Result<IntMatrix> {
        if self.dims.len() != 2 {
            return Err(Error::format(format!(
                "expected 2-D tensor, got {} dims",
                self.dims.len()
            )));
        }
        IntMatrix::new(self.dims[0], self.dims[1], self.data, self.bits, self.signedness)
    }

    pub fn from_matrix(m: &IntMatrix) -> Self {
        Tensor {
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
            bits: m.bits(),
            signedness: m.signedness(),
        }
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Serialize a tensor into a `GVT1` byte stream.
pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    if t.len() != t.data.len() {
        return Err(Error::DimensionMismatch(format!(
            "dims {:?} vs {} elements",
            t.dims,
            t.data.len()
        )));
    }
    w.write_all(GVT_MAGIC)?;
    write_u32(w, GVT_VERSION)?;
    write_u32(w, 0)?; // dtype: i32
    write_u32(w, match t.signedness {
        Signedness::Signed => 0,
        Signedness::Unsigned => 1,
    })?;
    write_u32(w, t.bits as u32)?;
    write_u32(w, t.dims.len() as u32)?;
    for &d in &t.dims {
        write_u32(w, d as u32)?;
    }
    for &v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Parse one `GVT1` record from a byte stream.
pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GVT_MAGIC {
        return Err(Error::format("bad magic, not a GVT1 container"));
    }
    let version = read_u32(r)?;
    if version != GVT_VERSION {
        return Err(Error::format(format!("unsupported GVT1 version {version}")));
    }
    let dtype = read_u32(r)?;
    if dtype != 0 {
        return Err(Error::format(format!("unsupported dtype {dtype}")));
    }
    let signedness = match read_u32(r)? {
        0 => Signedness::Signed,
        1 => Signedness::Unsigned,
        other => return Err(Error::format(format!("bad signedness field {other}"))),
    };
    let bits = read_u32(r)?;
    if !(2..=32).contains(&bits) {
        return Err(Error::format(format!("bad bits field {bits}")));
    }
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::format(format!("bad ndim {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(read_u32(r)? as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = vec![0i32; n];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = i32::from_le_bytes(buf);
    }
    Ok(Tensor { dims, data, bits: bits as u8, signedness })
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &IntMatrix) -> Result<()> {
    save_tensor(path, &Tensor::from_matrix(m))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<IntMatrix> {
    load_tensor(path)?.into_matrix()
}

/// Import a small matrix from CSV (one row per line, integer cells).
pub fn matrix_from_csv(
    path: impl AsRef<Path>,
    bits: u8,
    signedness: Signedness,
) -> Result<IntMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::format(format!("csv: {e}")))?;
    let mut data = Vec::new();
    let mut rows = 0usize;
    let mut cols = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(format!("csv: {e}")))?;
        let width = record.len();
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::format(format!(
                    "ragged csv: row {rows} has {width} cells, expected {c}"
                )))
            }
            _ => {}
        }
        for cell in record.iter() {
            let v: i32 = cell
                .parse()
                .map_err(|_| Error::format(format!("csv cell {cell:?} is not an integer")))?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::format("empty csv"))?;
    IntMatrix::new(rows, cols, data, bits, signedness)
}

/// Write an error trace as a `GVTR` file.
pub fn save_trace(path: impl AsRef<Path>, trace: &ErrorTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GVTR_MAGIC)?;
    write_u32(&mut w, trace.c as u32)?;
    write_u32(&mut w, trace.s_bits)?;
    write_u32(&mut w, trace.records.len() as u32)?;
    for rec in &trace.records {
        w.write_all(&rec.exact.to_le_bytes())?;
        w.write_all(&rec.prev.to_le_bytes())?;
        w.write_all(&rec.sampled.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `GVTR` trace file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<ErrorTrace> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GVTR_MAGIC {
        return Err(Error::format("bad magic, not a GVTR trace"));
    }
    let c = read_u32(&mut r)? as usize;
    let s_bits = read_u32(&mut r)?;
    if s_bits != crate::schedule::s_bits_for(c) {
        return Err(Error::format(format!(
            "trace S_BITS {s_bits} inconsistent with C={c}"
        )));
    }
    let n = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(n);
    let mut buf = [0u8; 6];
    let limit = (1u32 << s_bits) as u16;
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        let rec = TraceRecord {
            exact: u16::from_le_bytes([buf[0], buf[1]]),
            prev: u16::from_le_bytes([buf[2], buf[3]]),
            sampled: u16::from_le_bytes([buf[4], buf[5]]),
        };
        if rec.exact >= limit || rec.prev >= limit || rec.sampled >= limit {
            return Err(Error::format("trace value exceeds 2^S_BITS"));
        }
        records.push(rec);
    }
    Ok(ErrorTrace { c, s_bits, records })
}

/// SHA-256 of a file, as a lowercase hex string.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex_string(&h.finalize()))
}

/// SHA-256 of a byte slice, as a lowercase hex string.
pub fn bytes_digest(bytes: &[u8]) -> String {
    hex_string(&Sha256::digest(bytes))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip() {
        let t = Tensor {
            dims: vec![2, 3],
            data: vec![1, -2, 3, -4, 5, -6],
            bits: 4,
            signedness: Signedness::Signed,
        };
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], GVT_MAGIC);
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOPE1234".to_vec();
        assert!(matches!(read_tensor(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn trace_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.gvtr");
        let trace = ErrorTrace {
            c: 32,
            s_bits: 6,
            records: vec![
                TraceRecord { exact: 5, prev: 0, sampled: 7 },
                TraceRecord { exact: 32, prev: 5, sampled: 32 },
            ],
        };
        save_trace(&path, &trace).unwrap();
        let back = load_trace(&path).unwrap();
        assert_eq!(back.c, 32);
        assert_eq!(back.records, trace.records);
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1, -2, 3\n4, 5, -6\n").unwrap();
        let m = matrix_from_csv(&path, 4, Signedness::Signed).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.get(1, 2), -6);
    }
}
