use std::io::{Read, Write};

use super::{top_k, DocId, Hit, IndexError};
use crate::embed::Embedding;

const MAGIC: &[u8; 8] = b"TSDENSE\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 4;

/// Row-major single-precision matrix searched by exhaustive cosine scan.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl DenseIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.norms.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, v: &Embedding) {
        assert_eq!(v.dim(), self.dim, "embedding dimension mismatch");
        self.push_row(&v.to_f32());
    }

    pub fn push_row(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        self.norms.push(row.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt());
        self.data.extend_from_slice(row);
    }

    /// Copies every row of `other` after the existing ones.
    pub fn extend_from(&mut self, other: &DenseIndex) {
        for i in 0..other.rows() {
            self.push_row(other.row(i));
        }
    }

    pub fn cosine(&self, query: &Embedding, doc: DocId) -> f64 {
        let qn = query.norm();
        let rn = self.norms[doc];
        if qn == 0.0 || rn == 0.0 {
            return 0.0;
        }
        let dot: f64 = self
            .row(doc)
            .iter()
            .zip(query.as_slice())
            .map(|(r, q)| f64::from(*r) * q)
            .sum();
        dot / (qn * rn)
    }

    /// Exact top-`k` by cosine among rows accepted by `keep`; a zero query
    /// vector matches nothing.
    pub fn search(&self, query: &Embedding, k: usize, keep: impl Fn(DocId) -> bool) -> Vec<Hit> {
        if k == 0 || query.is_zero() {
            return Vec::new();
        }
        let hits = (0..self.rows())
            .filter(|doc| keep(*doc))
            .map(|doc| Hit {
                doc,
                score: self.cosine(query, doc),
            })
            .collect();
        top_k(hits, k)
    }

    /// Header (magic, version, rows, dim) then little-endian `f32` rows.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.rows() as u64).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, IndexError> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| IndexError::Corrupt(format!("dense matrix unreadable: {e}")))?;
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(IndexError::Corrupt("dense matrix: bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(IndexError::Corrupt(format!("dense matrix: unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != rows * dim * 4 {
            return Err(IndexError::Corrupt(format!(
                "dense matrix: expected {} payload bytes for {rows}x{dim}, found {}",
                rows * dim * 4,
                body.len()
            )));
        }
        let mut index = DenseIndex::new(dim);
        index.data.reserve(rows * dim);
        for row in body.chunks_exact(dim.max(1) * 4).take(rows) {
            let values: Vec<f32> = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            index.push_row(&values);
        }
        if dim == 0 {
            index.norms = vec![0.0; rows];
        }
        Ok(index)
    }
}
