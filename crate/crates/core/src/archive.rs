//! Single-file model archive: a JSON header followed by raw matrices.
//!
//! Layout:
//!
//! ```text
//! b"QPAR"            magic
//! u32 LE             format version (1)
//! u64 LE             header length in bytes
//! header             UTF-8 JSON, model specific
//! blob               concatenated little-endian f64 matrices
//! ```
//!
//! The header refers to matrices through [`BlobRef`]s: a byte offset into the
//! blob section plus a row-major shape.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"QPAR";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub offset: u64,
    pub rows: usize,
    pub cols: usize,
}

/// Accumulates matrices for the blob section.
#[derive(Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn push(&mut self, m: &DMatrix<f64>) -> BlobRef {
        let r = BlobRef {
            offset: self.bytes.len() as u64,
            rows: m.nrows(),
            cols: m.ncols(),
        };
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
        r
    }

    pub fn push_vec(&mut self, v: &[f64]) -> BlobRef {
        self.push(&DMatrix::from_row_slice(1, v.len(), v))
    }
}

pub struct BlobReader {
    bytes: Vec<u8>,
    path: std::path::PathBuf,
}

impl BlobReader {
    pub fn matrix(&self, r: &BlobRef) -> Result<DMatrix<f64>> {
        let start = r.offset as usize;
        let len = r.rows * r.cols * 8;
        let slice = start
            .checked_add(len)
            .and_then(|end| self.bytes.get(start..end))
            .ok_or_else(|| Error::format(&self.path, format!("blob {r:?} out of range")))?;
        let values: Vec<f64> = slice
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &values))
    }

    pub fn vec(&self, r: &BlobRef) -> Result<Vec<f64>> {
        Ok(self.matrix(r)?.transpose().as_slice().to_vec())
    }
}

pub fn write_archive<H: Serialize>(path: impl AsRef<Path>, header: &H, blobs: &BlobWriter) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&blobs.bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_archive<H: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(H, BlobReader)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a model archive (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported archive version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header = serde_json::from_slice(&bytes[16..end])?;
    Ok((
        header,
        BlobReader {
            bytes: bytes[end..].to_vec(),
            path: path.to_path_buf(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Header {
        name: String,
        m: BlobRef,
        v: BlobRef,
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.qpar");
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) * std::f64::consts::PI.powi(j as i32));
        let mut blobs = BlobWriter::default();
        let header = Header {
            name: "x".into(),
            m: blobs.push(&m),
            v: blobs.push_vec(&[1.5, -2.0]),
        };
        write_archive(&path, &header, &blobs).unwrap();
        let (h, r): (Header, _) = read_archive(&path).unwrap();
        assert_eq!(h.name, "x");
        assert_eq!(r.matrix(&h.m).unwrap(), m);
        assert_eq!(r.vec(&h.v).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        std::fs::write(&path, b"hello world, not an archive").unwrap();
        assert!(read_archive::<serde_json::Value>(&path).is_err());
    }
}
