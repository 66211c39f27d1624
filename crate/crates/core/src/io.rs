//! On-disk formats.
//!
//! Embedding files (little-endian):
//!
//! ```text
//! magic    b"EMB1"
//! version  u16            (currently 1)
//! count    u32
//! count x {
//!     id_len  u16
//!     id      id_len bytes, UTF-8
//!     rows    u32
//!     cols    u32
//!     data    rows * cols f32, row-major
//! }
//! ```
//!
//! Alignment files are JSON Lines, one [`AlignmentRecord`] per utterance.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::ValidationReport;
use crate::tensor::EmbeddingSequence;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const EMBEDDING_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("bad magic {0:?}, expected \"EMB1\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("sequence {index}: {reason}")]
    BadRecord { index: usize, reason: String },

    #[error("{0} trailing bytes after the last sequence")]
    TrailingBytes(usize),

    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
}

/// One named sequence in an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub sequence: EmbeddingSequence,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, sequence: EmbeddingSequence) -> Self {
        Self {
            id: id.into(),
            sequence,
        }
    }
}

pub fn write_embeddings<W: Write>(mut w: W, records: &[EmbeddingRecord]) -> Result<(), FormatError> {
    let count = u32::try_from(records.len()).map_err(|_| FormatError::BadRecord {
        index: records.len(),
        reason: "too many sequences".into(),
    })?;
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for (index, rec) in records.iter().enumerate() {
        let bad = |reason: &str| FormatError::BadRecord {
            index,
            reason: reason.into(),
        };
        let id_len = u16::try_from(rec.id.len()).map_err(|_| bad("id longer than 65535 bytes"))?;
        let rows = u32::try_from(rec.sequence.len()).map_err(|_| bad("too many rows"))?;
        let cols = u32::try_from(rec.sequence.dim()).map_err(|_| bad("too many columns"))?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(rec.id.as_bytes())?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        let mut buf = Vec::with_capacity(rec.sequence.data().len() * 4);
        for v in rec.sequence.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<Vec<EmbeddingRecord>, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let mut u16_buf = [0u8; 2];
    let mut u32_buf = [0u8; 4];
    r.read_exact(&mut u16_buf)?;
    let version = u16::from_le_bytes(u16_buf);
    if version != EMBEDDING_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    r.read_exact(&mut u32_buf)?;
    let count = u32::from_le_bytes(u32_buf) as usize;

    let mut records = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let bad = |reason: String| FormatError::BadRecord { index, reason };
        r.read_exact(&mut u16_buf)?;
        let mut id = vec![0u8; u16::from_le_bytes(u16_buf) as usize];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|e| bad(format!("id is not UTF-8: {e}")))?;
        r.read_exact(&mut u32_buf)?;
        let rows = u32::from_le_bytes(u32_buf) as usize;
        r.read_exact(&mut u32_buf)?;
        let cols = u32::from_le_bytes(u32_buf) as usize;
        let n_bytes = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("declared size overflows".into()))?;
        let mut bytes = Vec::new();
        (&mut r).take(n_bytes as u64).read_to_end(&mut bytes)?;
        if bytes.len() != n_bytes {
            return Err(bad(format!(
                "declared {rows} x {cols} floats but only {} bytes remain",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let sequence = EmbeddingSequence::new(rows, cols, data).map_err(|e| bad(format!("{id}: {e}")))?;
        records.push(EmbeddingRecord { id, sequence });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(FormatError::TrailingBytes(rest.len()));
    }
    Ok(records)
}

pub fn write_embeddings_file(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<(), FormatError> {
    write_embeddings(BufWriter::new(File::create(path)?), records)
}

pub fn read_embeddings_file(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>, FormatError> {
    read_embeddings(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidFlags {
    pub monotonic: bool,
    pub surjective: bool,
}

impl From<&ValidationReport> for ValidFlags {
    fn from(r: &ValidationReport) -> Self {
        Self {
            monotonic: r.monotonic,
            surjective: r.surjective,
        }
    }
}

/// One line of an alignment file.
///
/// Records for utterances that failed carry an `error` message, an empty
/// alignment, and a null score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub id: String,
    pub n_frames: usize,
    pub n_tokens: usize,
    pub alignment: Vec<usize>,
    pub score: Option<f64>,
    pub method: String,
    pub valid: ValidFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Word-to-token expansion for word-level references.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_tokens: Option<Vec<usize>>,
}

impl AlignmentRecord {
    fn check(&self) -> Result<(), String> {
        if self.error.is_some() {
            return Ok(());
        }
        if self.alignment.len() != self.n_frames {
            return Err(format!(
                "alignment has {} entries, n_frames is {}",
                self.alignment.len(),
                self.n_frames
            ));
        }
        let bound = self.word_tokens.as_ref().map_or(self.n_tokens, |w| w.len());
        if let Some(j) = self.alignment.iter().find(|&&j| j >= bound) {
            return Err(format!("index {j} out of range ({bound})"));
        }
        Ok(())
    }
}

pub fn write_alignments<W: Write>(mut w: W, records: &[AlignmentRecord]) -> Result<(), FormatError> {
    for (i, rec) in records.iter().enumerate() {
        serde_json::to_writer(&mut w, rec).map_err(|source| FormatError::Json { line: i + 1, source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON Lines; blank lines are ignored.
pub fn read_alignments<R: BufRead>(r: R) -> Result<Vec<AlignmentRecord>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AlignmentRecord =
            serde_json::from_str(&line).map_err(|source| FormatError::Json { line: i + 1, source })?;
        rec.check()
            .map_err(|reason| FormatError::BadLine { line: i + 1, reason })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_alignments_file(path: impl AsRef<Path>, records: &[AlignmentRecord]) -> Result<(), FormatError> {
    write_alignments(BufWriter::new(File::create(path)?), records)
}

pub fn read_alignments_file(path: impl AsRef<Path>) -> Result<Vec<AlignmentRecord>, FormatError> {
    read_alignments(BufReader::new(File::open(path)?))
}
