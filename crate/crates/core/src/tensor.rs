//! Embedding containers and the frame/token cosine similarity.
//!
//! Embeddings are stored as row-major `f32`; every reduction (dot products,
//! norms, similarities) is carried out in `f64`.

use crate::error::{AlignError, Result};

/// A length-`len` sequence of `dim`-dimensional embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    len: usize,
    dim: usize,
    data: Vec<f32>,
}

/// Output of the mixup constructors. Same shape as the frame sequence it was
/// built from.
pub type MixupSequence = EmbeddingSequence;

impl EmbeddingSequence {
    pub fn new(len: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if len == 0 {
            return Err(AlignError::EmptySequence);
        }
        if dim == 0 {
            return Err(AlignError::InvalidValue("embedding dimension must be positive".into()));
        }
        if data.len() != len * dim {
            return Err(AlignError::InvalidValue(format!(
                "data has {} values, expected {len} x {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(AlignError::InvalidValue(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { len, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let len = rows.len();
        if len == 0 {
            return Err(AlignError::EmptySequence);
        }
        let dim = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(len * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(AlignError::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(len, dim, data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: sequences hold at least one timestep.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Rows `start..end` as a new sequence.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len {
            return Err(AlignError::InvalidValue(format!(
                "row range {start}..{end} invalid for length {}",
                self.len
            )));
        }
        Ok(Self {
            len: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        })
    }
}

/// N x M matrix of frame/token similarities, row-major over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n_frames: usize,
    n_tokens: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n_frames: usize, n_tokens: usize, values: Vec<f64>) -> Result<Self> {
        if n_frames == 0 || n_tokens == 0 {
            return Err(AlignError::EmptyInput { n_frames, n_tokens });
        }
        if values.len() != n_frames * n_tokens {
            return Err(AlignError::InvalidValue(format!(
                "similarity matrix has {} values, expected {n_frames} x {n_tokens}",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(AlignError::InvalidValue("NaN similarity".into()));
        }
        Ok(Self {
            n_frames,
            n_tokens,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_frames = rows.len();
        let n_tokens = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(n_frames * n_tokens);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n_tokens {
                return Err(AlignError::DimensionMismatch {
                    expected: n_tokens,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(n_frames, n_tokens, values)
    }

    #[inline]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[inline]
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.n_tokens + j]
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_tokens..(t + 1) * self.n_tokens]
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            n_frames: self.n_frames,
            n_tokens: self.n_tokens,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}

const LANES: usize = 4;

/// Dot product with lane `k` accumulating elements `k, k + 4, k + 8, ...`;
/// lanes and the tail are then summed in a fixed order. Uses AVX2/FMA when the
/// CPU has it, so results are deterministic per machine but may differ in the
/// last bits between machines.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            // SAFETY: AVX2 and FMA availability checked at runtime.
            return unsafe { simd::dot(a, b) };
        }
    }
    dot_portable(a, b)
}

fn dot_portable(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks_a = a.chunks_exact(LANES);
    let chunks_b = b.chunks_exact(LANES);
    let tail = tail_dot(chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..LANES {
            acc[k] += ca[k] * cb[k];
        }
    }
    ((acc[0] + acc[2]) + (acc[1] + acc[3])) + tail
}

#[inline]
fn tail_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

/// Row-major `n x m` matrix of dot products between the `dim`-wide rows of
/// `a` and `b`. Every entry is bitwise equal to `dot` on that pair of rows.
fn dot_matrix(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let n = a.len() / dim;
    let m = b.len() / dim;
    let mut out = vec![0.0; n * m];
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            // Blocks of four `b` rows stay in L1 while a band of `a` rows,
            // sized to stay in L2, streams past them.
            const BAND: usize = 32;
            let m4 = m - m % 4;
            let n2 = n - n % 2;
            for band in (0..n2).step_by(BAND) {
                let band_end = (band + BAND).min(n2);
                for j in (0..m4).step_by(4) {
                    let block = [0, 1, 2, 3].map(|r| &b[(j + r) * dim..(j + r + 1) * dim]);
                    for i in (band..band_end).step_by(2) {
                        let rows = [&a[i * dim..(i + 1) * dim], &a[(i + 1) * dim..(i + 2) * dim]];
                        // SAFETY: AVX2 and FMA availability checked at runtime.
                        let tile = unsafe { simd::tile(rows, block) };
                        out[i * m + j..i * m + j + 4].copy_from_slice(&tile[0]);
                        out[(i + 1) * m + j..(i + 1) * m + j + 4].copy_from_slice(&tile[1]);
                    }
                }
            }
            for j in (0..m4).step_by(4) {
                let block = [0, 1, 2, 3].map(|r| &b[(j + r) * dim..(j + r + 1) * dim]);
                for i in n2..n {
                    for (r, row) in block.iter().enumerate() {
                        out[i * m + j + r] = dot(&a[i * dim..(i + 1) * dim], row);
                    }
                }
            }
            for j in m4..m {
                for i in 0..n {
                    out[i * m + j] = dot(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim]);
                }
            }
            return out;
        }
    }
    for (i, ar) in a.chunks_exact(dim).enumerate() {
        for (j, br) in b.chunks_exact(dim).enumerate() {
            out[i * m + j] = dot_portable(ar, br);
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
fn has_avx2_fma() -> bool {
    is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    use super::{tail_dot, LANES};

    /// Loads a four-lane chunk. Goes through an array transmute rather than
    /// `_mm256_loadu_pd`, whose debug-build precondition checks keep the
    /// accumulators from staying in registers.
    #[inline(always)]
    fn load(chunk: &[f64]) -> __m256d {
        let lanes: [f64; LANES] = chunk.try_into().expect("chunk of LANES elements");
        // SAFETY: `[f64; 4]` and `__m256d` have the same size and any bit
        // pattern is valid for both.
        unsafe { std::mem::transmute(lanes) }
    }

    #[target_feature(enable = "avx2", enable = "fma")]
    unsafe fn hsum(acc: __m256d) -> f64 {
        let pair = _mm_add_pd(_mm256_castpd256_pd128(acc), _mm256_extractf128_pd(acc, 1));
        _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)))
    }

    #[target_feature(enable = "avx2", enable = "fma")]
    pub(super) unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        let ca = a.chunks_exact(LANES);
        let cb = b.chunks_exact(LANES);
        let tail = tail_dot(ca.remainder(), cb.remainder());
        let mut acc = _mm256_setzero_pd();
        for (x, y) in ca.zip(cb) {
            acc = _mm256_fmadd_pd(load(x), load(y), acc);
        }
        hsum(acc) + tail
    }

    /// Two rows against four rows; each entry is bitwise equal to [`dot`].
    #[target_feature(enable = "avx2", enable = "fma")]
    pub(super) unsafe fn tile(a: [&[f64]; 2], b: [&[f64]; 4]) -> [[f64; 4]; 2] {
        let dim = a[0].len();
        assert!(a.iter().chain(&b).all(|r| r.len() == dim));
        let body = dim - dim % LANES;
        let mut acc = [[_mm256_setzero_pd(); 4]; 2];
        let rows = a[0][..body]
            .chunks_exact(LANES)
            .zip(a[1][..body].chunks_exact(LANES))
            .zip(b[0][..body].chunks_exact(LANES))
            .zip(b[1][..body].chunks_exact(LANES))
            .zip(b[2][..body].chunks_exact(LANES))
            .zip(b[3][..body].chunks_exact(LANES));
        for (((((a0, a1), b0), b1), b2), b3) in rows {
            let va = [load(a0), load(a1)];
            for (c, chunk) in [b0, b1, b2, b3].into_iter().enumerate() {
                let vb = load(chunk);
                acc[0][c] = _mm256_fmadd_pd(va[0], vb, acc[0][c]);
                acc[1][c] = _mm256_fmadd_pd(va[1], vb, acc[1][c]);
            }
        }
        let mut out = [[0.0; 4]; 2];
        for r in 0..2 {
            for c in 0..4 {
                out[r][c] = hsum(acc[r][c]) + tail_dot(&a[r][body..], &b[c][body..]);
            }
        }
        out
    }
}

fn widen(seq: &EmbeddingSequence) -> Vec<f64> {
    seq.data.iter().map(|&x| x as f64).collect()
}

fn norms(wide: &[f64], dim: usize) -> Vec<f64> {
    wide.chunks_exact(dim).map(|r| dot(r, r).sqrt()).collect()
}

/// Cosine similarity between every frame and every token.
///
/// A zero-norm vector has similarity 0.0 with everything.
pub fn cosine_similarity_matrix(frames: &EmbeddingSequence, tokens: &EmbeddingSequence) -> Result<SimilarityMatrix> {
    if frames.dim != tokens.dim {
        return Err(AlignError::DimensionMismatch {
            expected: frames.dim,
            actual: tokens.dim,
        });
    }
    if frames.len == 0 || tokens.len == 0 {
        return Err(AlignError::EmptySequence);
    }
    let dim = frames.dim;
    let f = widen(frames);
    let e = widen(tokens);
    let f_norm = norms(&f, dim);
    let e_norm = norms(&e, dim);

    let mut values = dot_matrix(&f, &e, dim);
    for (row, &f_len) in values.chunks_exact_mut(tokens.len).zip(&f_norm) {
        for (v, &e_len) in row.iter_mut().zip(&e_norm) {
            let denom = f_len * e_len;
            *v = if denom > 0.0 { *v / denom } else { 0.0 };
        }
    }
    Ok(SimilarityMatrix {
        n_frames: frames.len,
        n_tokens: tokens.len,
        values,
    })
}

/// Variable-length sequences zero-padded into one `batch x max_len x dim` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub batch: usize,
    pub max_len: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub lengths: Vec<usize>,
    /// `batch x max_len`, true on valid timesteps.
    pub mask: Vec<bool>,
}

impl PaddedBatch {
    #[inline]
    pub fn is_valid(&self, item: usize, t: usize) -> bool {
        self.mask[item * self.max_len + t]
    }

    pub fn item_rows(&self, item: usize) -> &[f32] {
        let start = item * self.max_len * self.dim;
        &self.data[start..start + self.lengths[item] * self.dim]
    }

    /// Inverse of [`batch_pad_mask`].
    pub fn unpad(&self) -> Vec<EmbeddingSequence> {
        (0..self.batch)
            .map(|b| EmbeddingSequence {
                len: self.lengths[b],
                dim: self.dim,
                data: self.item_rows(b).to_vec(),
            })
            .collect()
    }
}

pub fn batch_pad_mask(sequences: &[EmbeddingSequence]) -> Result<PaddedBatch> {
    let first = sequences.first().ok_or(AlignError::EmptySequence)?;
    let dim = first.dim;
    if let Some(bad) = sequences.iter().find(|s| s.dim != dim) {
        return Err(AlignError::DimensionMismatch {
            expected: dim,
            actual: bad.dim,
        });
    }
    let batch = sequences.len();
    let max_len = sequences.iter().map(|s| s.len).max().unwrap_or(0);
    let mut data = vec![0.0f32; batch * max_len * dim];
    let mut mask = vec![false; batch * max_len];
    for (b, seq) in sequences.iter().enumerate() {
        let start = b * max_len * dim;
        data[start..start + seq.data.len()].copy_from_slice(&seq.data);
        mask[b * max_len..b * max_len + seq.len].fill(true);
    }
    Ok(PaddedBatch {
        batch,
        max_len,
        dim,
        data,
        lengths: sequences.iter().map(|s| s.len).collect(),
        mask,
    })
}
