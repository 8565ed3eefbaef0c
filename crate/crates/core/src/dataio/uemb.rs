//! The UEMB binary embedding container.
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"UEMB"`                         |
//! | 4      | 2    | version (`u16`, currently 1)            |
//! | 6      | 2    | dtype (`u16`: 1 = `f32`, 2 = `f64`)     |
//! | 8      | 8    | row count `n` (`u64`)                   |
//! | 16     | 4    | dimension `d` (`u32`)                   |
//! | 20     | ...  | id table: `n` x (`u32` byte length, UTF-8 bytes) |
//! | ...    | ...  | `n * d` values, row-major               |
//!
//! A file holds exactly one record; trailing bytes are a size mismatch.
//! [`decode_record`] reads one record from the front of a buffer so records
//! can be concatenated (the checkpoint format does this).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const MAGIC: [u8; 4] = *b"UEMB";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn code(self) -> u16 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub version: u16,
    pub dtype: Dtype,
    pub rows: u64,
    pub dim: u32,
}

/// Row ids paired with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    ids: Vec<String>,
    matrix: DenseMatrix,
    index: HashMap<String, usize>,
}

impl Embeddings {
    pub fn new(ids: Vec<String>, matrix: DenseMatrix) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::SizeMismatch(format!(
                "{} ids for {} rows",
                ids.len(),
                matrix.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, matrix, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.matrix.row(i))
    }

    pub fn into_parts(self) -> (Vec<String>, DenseMatrix) {
        (self.ids, self.matrix)
    }
}

pub fn encode_record(ids: &[String], matrix: &DenseMatrix, dtype: Dtype) -> Result<Vec<u8>> {
    if ids.len() != matrix.rows() {
        return Err(Error::SizeMismatch(format!(
            "{} ids for {} rows",
            ids.len(),
            matrix.rows()
        )));
    }
    let dim = u32::try_from(matrix.cols())
        .map_err(|_| Error::SizeMismatch(format!("dimension {} exceeds u32", matrix.cols())))?;
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.values().len() * dtype.width());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for id in ids {
        let len = u32::try_from(id.len())
            .map_err(|_| Error::SizeMismatch(format!("id of {} bytes", id.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    match dtype {
        Dtype::F64 => {
            for v in matrix.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for (i, v) in matrix.values().iter().enumerate() {
                let narrow = *v as f32;
                if !narrow.is_finite() {
                    return Err(Error::NonFinite { index: i });
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

pub fn decode_header(buf: &[u8]) -> Result<EmbeddingFileHeader> {
    let mut c = Cursor { buf, pos: 0 };
    read_header(&mut c)
}

fn read_header(c: &mut Cursor<'_>) -> Result<EmbeddingFileHeader> {
    let magic: [u8; 4] = c.array()?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(u16::from_le_bytes(c.array()?))?;
    let rows = u64::from_le_bytes(c.array()?);
    let dim = u32::from_le_bytes(c.array()?);
    Ok(EmbeddingFileHeader {
        version,
        dtype,
        rows,
        dim,
    })
}

/// Decodes one record from the front of `buf`, returning it with its
/// original dtype and the number of bytes consumed.
pub fn decode_record(buf: &[u8]) -> Result<(Embeddings, Dtype, usize)> {
    let mut c = Cursor { buf, pos: 0 };
    let header = read_header(&mut c)?;
    let rows = usize::try_from(header.rows)
        .map_err(|_| Error::SizeMismatch(format!("{} rows", header.rows)))?;
    let dim = header.dim as usize;
    // Each row needs at least a 4-byte id length; reject absurd counts before allocating.
    if rows > buf.len() / 4 {
        return Err(Error::Truncated {
            offset: c.pos,
            needed: rows.saturating_mul(4),
        });
    }
    let mut ids = Vec::with_capacity(rows);
    for r in 0..rows {
        let len = u32::from_le_bytes(c.array()?) as usize;
        let bytes = c.take(len)?;
        ids.push(String::from_utf8(bytes.to_vec()).map_err(|_| Error::InvalidId(r))?);
    }
    let count = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::SizeMismatch(format!("{rows}x{dim} overflows")))?;
    let payload = c.take(
        count
            .checked_mul(header.dtype.width())
            .ok_or_else(|| Error::SizeMismatch(format!("{rows}x{dim} overflows")))?,
    )?;
    let values: Vec<f64> = match header.dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    let matrix = DenseMatrix::new(rows, dim, values)?;
    Ok((Embeddings::new(ids, matrix)?, header.dtype, c.pos))
}

/// Decodes a buffer holding exactly one record.
pub fn decode_embeddings(buf: &[u8]) -> Result<Embeddings> {
    let (emb, _, used) = decode_record(buf)?;
    if used != buf.len() {
        return Err(Error::SizeMismatch(format!(
            "{} trailing bytes after the payload",
            buf.len() - used
        )));
    }
    Ok(emb)
}

pub fn write_embeddings(
    path: impl AsRef<Path>,
    ids: &[String],
    matrix: &DenseMatrix,
    dtype: Dtype,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_record(ids, matrix, dtype)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Embeddings> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("row-{i}")).collect()
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let bytes = encode_record(&["a".to_string()], &m, Dtype::F64).unwrap();
        assert_eq!(&bytes[0..4], b"UEMB");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[2, 0]);
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        assert_eq!(bytes[24], b'a');
        assert_eq!(&bytes[25..33], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 25 + 16);
        let h = decode_header(&bytes).unwrap();
        assert_eq!(h.rows, 1);
        assert_eq!(h.dim, 2);
        assert_eq!(h.dtype, Dtype::F64);
    }

    #[test]
    fn zero_rows_roundtrip() {
        let m = DenseMatrix::zeros(0, 7);
        let bytes = encode_record(&[], &m, Dtype::F32).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let e = decode_embeddings(&bytes).unwrap();
        assert_eq!(e.len(), 0);
        assert_eq!(e.dim(), 7);
    }

    #[test]
    fn f32_widening_is_exact() {
        let m = DenseMatrix::from_rows(&[[0.1, -3.5, 1e-7]]).unwrap();
        let bytes = encode_record(&ids(1), &m, Dtype::F32).unwrap();
        let (e, dtype, _) = decode_record(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F32);
        for (a, b) in e.matrix().values().iter().zip(m.values()) {
            assert_eq!(*a, (*b as f32) as f64);
        }
    }

    #[test]
    fn distinct_errors() {
        let m = DenseMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let good = encode_record(&ids(2), &m, Dtype::F64).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_embeddings(&bad), Err(Error::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_embeddings(&bad),
            Err(Error::UnsupportedVersion(9))
        ));

        let mut bad = good.clone();
        bad[6] = 7;
        assert!(matches!(
            decode_embeddings(&bad),
            Err(Error::UnknownDtype(7))
        ));

        assert!(matches!(
            decode_embeddings(&good[..good.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            decode_embeddings(&good[..10]),
            Err(Error::Truncated { .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            decode_embeddings(&bad),
            Err(Error::SizeMismatch(_))
        ));

        let dup = vec!["x".to_string(), "x".to_string()];
        assert!(matches!(
            encode_record(&dup, &m, Dtype::F64),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            encode_record(&ids(3), &m, Dtype::F64),
            Err(Error::SizeMismatch(_))
        ));

        // Duplicate ids smuggled into a file are caught on read.
        let mut smuggled = good.clone();
        let second_id = 20 + 4 + "row-0".len() + 4;
        smuggled[second_id + 4] = b'0';
        assert!(matches!(
            decode_embeddings(&smuggled),
            Err(Error::DuplicateId(_))
        ));

        let mut huge = good.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_embeddings(&huge).is_err());
    }

    #[test]
    fn files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.uemb");
        let m = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        write_embeddings(&path, &ids(2), &m, Dtype::F64).unwrap();
        let e = read_embeddings(&path).unwrap();
        assert_eq!(e.matrix(), &m);
        assert_eq!(e.get("row-1").unwrap(), &[4.0, 5.0, 6.0]);
        let missing = dir.path().join("nope.uemb");
        let err = read_embeddings(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.uemb"));
    }

    proptest! {
        #[test]
        fn f64_roundtrip_is_bitwise(
            (rows, dim, vals) in (0usize..6, 1usize..9).prop_flat_map(|(r, d)| {
                (Just(r), Just(d), proptest::collection::vec(-1e300f64..1e300, r * d))
            })
        ) {
            let m = DenseMatrix::new(rows, dim, vals).unwrap();
            let bytes = encode_record(&ids(rows), &m, Dtype::F64).unwrap();
            let e = decode_embeddings(&bytes).unwrap();
            prop_assert_eq!(e.ids(), &ids(rows)[..]);
            prop_assert_eq!(e.matrix().shape(), (rows, dim));
            for (a, b) in e.matrix().values().iter().zip(m.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(encode_record(e.ids(), e.matrix(), Dtype::F64).unwrap(), bytes);
        }
    }
}
