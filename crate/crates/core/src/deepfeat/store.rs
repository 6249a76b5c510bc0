//! `HFV1` feature-store files.
//!
//! ```text
//! magic "HFV1" | u8 kind (0=hog, 1=deep, 2=fused) | u32 rows | u32 dim
//! per row: u32 label id | u16 id length | id bytes (UTF-8) | dim × f32
//! ```
//!
//! All integers and floats are little-endian. Fused files hold the HOG block
//! first, then the deep block.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::ClassLabel;
use crate::features::{FeatureKind, FeatureMatrix};

pub const MAGIC: &[u8; 4] = b"HFV1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic {0:02x?}, expected \"HFV1\"")]
    BadMagic([u8; 4]),
    #[error("truncated file: needed {needed} more byte(s) at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing byte(s) after the last row")]
    TrailingBytes(usize),
    #[error("unknown feature kind code {0}")]
    BadKind(u8),
    #[error("unknown label id {label} in row {row}")]
    BadLabel { row: usize, label: u32 },
    #[error("row {0} id is not valid UTF-8")]
    BadId(usize),
    #[error("row {row} id is {len} bytes, the limit is 65535")]
    IdTooLong { row: usize, len: usize },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, file has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("kind mismatch: expected {expected}, file has {found}")]
    KindMismatch {
        expected: FeatureKind,
        found: FeatureKind,
    },
    #[error("{0}")]
    Io(#[from] io::Error),
}

pub fn encode(matrix: &FeatureMatrix) -> Result<Vec<u8>, StoreError> {
    let rows = u32::try_from(matrix.rows()).map_err(|_| io::Error::other("too many rows"))?;
    let dim = u32::try_from(matrix.dim()).map_err(|_| io::Error::other("dim too large"))?;
    let mut out = Vec::with_capacity(13 + matrix.rows() * (6 + 24 + 4 * matrix.dim()));
    out.extend_from_slice(MAGIC);
    out.push(matrix.kind().code());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for i in 0..matrix.rows() {
        let id = matrix.sample_ids()[i].as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| StoreError::IdTooLong {
            row: i,
            len: id.len(),
        })?;
        out.extend_from_slice(&(matrix.labels()[i].id() as u32).to_le_bytes());
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        for v in matrix.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(StoreError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<FeatureMatrix, StoreError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match cur.take(4) {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(StoreError::BadMagic(m));
        }
    };
    if &magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let code = cur.u8()?;
    let kind = FeatureKind::from_code(code).ok_or(StoreError::BadKind(code))?;
    let rows = cur.u32()? as usize;
    let dim = cur.u32()? as usize;

    let remaining = bytes.len() - cur.pos;
    let min_row = 6 + 4 * dim;
    if rows > 0 && min_row.saturating_mul(rows) > remaining {
        return Err(StoreError::Truncated {
            offset: cur.pos,
            needed: min_row.saturating_mul(rows) - remaining,
        });
    }

    let mut m = FeatureMatrix::empty(kind, dim);
    let mut row = vec![0f32; dim];
    for i in 0..rows {
        let label = cur.u32()?;
        let label_id = ClassLabel::from_id(label as usize).ok_or(StoreError::BadLabel { row: i, label })?;
        let id_len = cur.u16()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| StoreError::BadId(i))?
            .to_owned();
        let raw = cur.take(4 * dim)?;
        for (v, chunk) in row.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        m.push_row(id, label_id, &row)
            .map_err(|_| StoreError::NonFinite(i))?;
    }
    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(StoreError::TrailingBytes(trailing));
    }
    Ok(m)
}

pub fn write_feature_store(path: &Path, matrix: &FeatureMatrix) -> Result<(), StoreError> {
    let bytes = encode(matrix)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_feature_store(path: &Path) -> Result<FeatureMatrix, StoreError> {
    decode(&fs::read(path)?)
}

/// Reads a store and checks that it holds `kind` features of width `dim`.
pub fn read_feature_store_expecting(
    path: &Path,
    kind: FeatureKind,
    dim: usize,
) -> Result<FeatureMatrix, StoreError> {
    let m = read_feature_store(path)?;
    if m.kind() != kind {
        return Err(StoreError::KindMismatch {
            expected: kind,
            found: m.kind(),
        });
    }
    if m.dim() != dim {
        return Err(StoreError::DimMismatch {
            expected: dim,
            found: m.dim(),
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureMatrix {
        FeatureMatrix::from_rows(
            FeatureKind::Deep,
            3,
            vec![
                ("colon_n/a.png".to_owned(), ClassLabel::ColonN, vec![1.0, -2.5, 0.0]),
                ("lung_scc/β.png".to_owned(), ClassLabel::LungScc, vec![f32::MIN_POSITIVE, 3.25, -0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn exact_byte_layout() {
        let m = FeatureMatrix::from_rows(
            FeatureKind::Fused,
            1,
            vec![("ab".to_owned(), ClassLabel::LungAca, vec![1.0])],
        )
        .unwrap();
        let bytes = encode(&m).unwrap();
        let mut expect = b"HFV1".to_vec();
        expect.push(2);
        expect.extend([1, 0, 0, 0]);
        expect.extend([1, 0, 0, 0]);
        expect.extend([2, 0, 0, 0]);
        expect.extend([2, 0]);
        expect.extend(b"ab");
        expect.extend(1.0f32.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.hfv");
        let m = sample();
        write_feature_store(&p, &m).unwrap();
        let back = read_feature_store(&p).unwrap();
        assert_eq!(back, m);
        // -0.0 survives bit-exactly
        assert_eq!(back.row(1)[2].to_bits(), (-0.0f32).to_bits());
        assert!(read_feature_store_expecting(&p, FeatureKind::Deep, 3).is_ok());
        assert!(matches!(
            read_feature_store_expecting(&p, FeatureKind::Deep, 4),
            Err(StoreError::DimMismatch { expected: 4, found: 3 })
        ));
        assert!(matches!(
            read_feature_store_expecting(&p, FeatureKind::Hog, 3),
            Err(StoreError::KindMismatch { .. })
        ));
    }

    #[test]
    fn empty_matrix_round_trips() {
        let m = FeatureMatrix::empty(FeatureKind::Hog, 36);
        let back = decode(&encode(&m).unwrap()).unwrap();
        assert_eq!(back.rows(), 0);
        assert_eq!(back.dim(), 36);
        assert_eq!(back.kind(), FeatureKind::Hog);
    }

    #[test]
    fn corruptions_map_to_distinct_errors() {
        let good = encode(&sample()).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(StoreError::BadMagic(_))));
        assert!(matches!(decode(b"HF"), Err(StoreError::BadMagic(_))));

        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(StoreError::Truncated { needed: 1, .. })
        ));
        assert!(matches!(decode(&good[..7]), Err(StoreError::Truncated { .. })));

        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(StoreError::TrailingBytes(1))));

        let mut kind = good.clone();
        kind[4] = 9;
        assert!(matches!(decode(&kind), Err(StoreError::BadKind(9))));

        let mut label = good.clone();
        label[13] = 7;
        assert!(matches!(decode(&label), Err(StoreError::BadLabel { row: 0, label: 7 })));

        // header claims a wider row than is stored
        let one = FeatureMatrix::from_rows(
            FeatureKind::Deep,
            3,
            vec![("a".to_owned(), ClassLabel::ColonAca, vec![1.0, 2.0, 3.0])],
        )
        .unwrap();
        let mut dim = encode(&one).unwrap();
        dim[9] = 4;
        assert!(matches!(decode(&dim), Err(StoreError::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn random_matrices_round_trip_bit_exactly(
            rows in 0usize..12,
            dim in 0usize..20,
            bits in proptest::collection::vec(any::<u32>(), 240),
            kind in 0u8..3,
        ) {
            let mut m = FeatureMatrix::empty(FeatureKind::from_code(kind).unwrap(), dim);
            for r in 0..rows {
                let row: Vec<f32> = (0..dim)
                    .map(|j| {
                        let v = f32::from_bits(bits[(r * dim + j) % bits.len()]);
                        if v.is_finite() { v } else { 1.5 }
                    })
                    .collect();
                m.push_row(format!("lung_n/{r}.png"), ClassLabel::ALL[r % 5], &row).unwrap();
            }
            let back = decode(&encode(&m).unwrap()).unwrap();
            prop_assert_eq!(back.sample_ids(), m.sample_ids());
            prop_assert_eq!(back.labels(), m.labels());
            let a: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = m.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
