//! Exact dense index: brute-force top-K by dot product, plus the binary and
//! JSONL on-disk formats.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::dot_unchecked;

const MAGIC: &[u8; 4] = b"RFDX";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 4 + 8;

/// Immutable matrix of passage vectors keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    vectors: Vec<f32>,
    ids: Vec<String>,
    rows_by_id: HashMap<String, usize>,
}

/// One retrieved document.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub score: f64,
    pub row: usize,
}

/// Ranked candidates for one query: score descending, ties by doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query_id: String,
    pub entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.doc_id.as_str())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|c| c.score).collect()
    }
}

/// Ranking order used everywhere: higher score first, then doc id ascending.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

impl DenseIndex {
    /// Builds an index keeping input order as row order. The dimension is
    /// taken from the first record; an empty input yields an empty index of
    /// dimension 0.
    pub fn build<I, S>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut dim = None;
        let mut vectors = Vec::new();
        let mut ids = Vec::new();
        let mut rows_by_id = HashMap::new();
        for (id, vector) in records {
            let id = id.into();
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: vector.len(),
                });
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteVector { id });
            }
            if rows_by_id.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            vectors.extend_from_slice(&vector);
            ids.push(id);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            vectors,
            ids,
            rows_by_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, doc_id: &str) -> Option<usize> {
        self.rows_by_id.get(doc_id).copied()
    }

    pub fn vector(&self, doc_id: &str) -> Option<&[f32]> {
        self.row_of(doc_id).map(|r| self.row(r))
    }

    /// Dot product of `query` with every row, in row order.
    pub fn scores(&self, query: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(query.len())?;
        Ok(self
            .vectors
            .chunks_exact(self.dim.max(1))
            .take(self.len())
            .map(|row| dot_unchecked(query, row))
            .collect())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }

    /// Exact top-`k` rows by dot product.
    pub fn search(&self, query_id: &str, query: &[f32], k: usize) -> Result<CandidateSet> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let cmp = |a: &usize, b: &usize| rank_order(scores[*a], &self.ids[*a], scores[*b], &self.ids[*b]);
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(CandidateSet {
            query_id: query_id.to_string(),
            entries: order
                .into_iter()
                .map(|row| Candidate {
                    doc_id: self.ids[row].clone(),
                    score: scores[row],
                    row,
                })
                .collect(),
        })
    }

    /// Passage vectors for a candidate list, in candidate order.
    pub fn candidate_vectors<'a>(&'a self, candidates: &CandidateSet) -> Vec<&'a [f32]> {
        candidates.entries.iter().map(|c| self.row(c.row)).collect()
    }

    /// Writes the little-endian binary format.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.vectors.len() * 4);
        for x in &self.vectors {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
        for id in &self.ids {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected \"RFDX\"".into(),
            });
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let dim = cur.u32()? as usize;
        let count = cur.u64()?;
        let floats = count.checked_mul(dim as u64).and_then(|n| n.checked_mul(4));
        let Some(float_bytes) = floats.filter(|n| *n <= bytes.len() as u64) else {
            return Err(Error::Truncated {
                offset: HEADER_LEN,
                expected: floats.unwrap_or(u64::MAX),
                actual: bytes.len() as u64 - HEADER_LEN,
            });
        };
        let raw = cur.take(float_bytes as usize)?;
        let vectors: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut ids = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let at = cur.pos as u64;
            let len = cur.u32()? as usize;
            let raw = cur.take(len)?;
            let id = std::str::from_utf8(raw).map_err(|e| Error::Format {
                offset: at + 4,
                msg: format!("document id is not UTF-8: {e}"),
            })?;
            ids.push(id.to_string());
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                offset: cur.pos as u64,
                msg: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }
        let rows = ids.into_iter().enumerate().map(|(r, id)| {
            let start = r * dim;
            (id, vectors[start..start + dim].to_vec())
        });
        let mut index = Self::build(rows).map_err(|e| match e {
            Error::DuplicateId(_) | Error::NonFiniteVector { .. } => e,
            other => Error::Format {
                offset: HEADER_LEN,
                msg: other.to_string(),
            },
        })?;
        index.dim = dim;
        Ok(index)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                expected: n as u64,
                actual: available as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// One line of the JSONL embedding format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

/// Reads `{"id": ..., "vector": [...]}` lines. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[EmbeddingRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
