//! Constrained DTW between a frame sequence (length N) and a token sequence
//! (length M <= N).
//!
//! Only the token axis is warped: every frame is assigned exactly one token,
//! assignments never decrease, and every token receives at least one frame.
//!
//! The trellis recursion is
//!
//! ```text
//! T[0][0] = S[0][0]
//! T[0][j] = -inf                                   j > 0
//! T[t][0] = +inf                                   t > N - M
//! T[t][0] = S[t][0] + T[t-1][0]                    0 < t <= N - M
//! T[t][j] = max(T[t-1][j], T[t-1][j-1]) + S[t][j]  t > 0, j > 0
//! ```
//!
//! and backtracking starts from `a[N-1] = M-1`, stepping down one token at frame
//! `t` only when `T[t][a[t+1]-1] > T[t][a[t+1]]`.
//!
//! The `-inf` cells fill exactly the region `j > t`. The `+inf` cells in column
//! zero propagate through the `max` into the region `t - j > N - M`, i.e. the
//! cells from which the last token can no longer be reached. Backtracking never
//! visits either region.

mod batch;
mod oracle;

pub use batch::{align_batch, align_batch_par};
pub use oracle::{brute_force_align, brute_force_search, path_count, BruteForce, ENUMERATION_BUDGET};

use crate::error::{AlignError, Result};
use crate::tensor::{cosine_similarity_matrix, EmbeddingSequence, SimilarityMatrix};

/// Best-prefix alignment scores, N x M row-major. Cells may be `+inf` or `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trellis {
    n_frames: usize,
    n_tokens: usize,
    values: Vec<f64>,
}

impl Trellis {
    #[inline]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[inline]
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.n_tokens + j]
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_tokens..(t + 1) * self.n_tokens]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A monotonic, surjective frame-to-token assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    n_tokens: usize,
    assignment: Vec<usize>,
    score: f64,
}

impl AlignmentPath {
    /// Wraps an assignment after checking the path invariants
    /// (monotonic steps of 0 or 1, starts at 0, ends at `n_tokens - 1`).
    pub fn new(assignment: Vec<usize>, n_tokens: usize, score: f64) -> Result<Self> {
        if assignment.is_empty() || n_tokens == 0 {
            return Err(AlignError::EmptyInput {
                n_frames: assignment.len(),
                n_tokens,
            });
        }
        if assignment[0] != 0 || *assignment.last().unwrap() != n_tokens - 1 {
            return Err(AlignError::PathMismatch(format!(
                "path must start at token 0 and end at token {}",
                n_tokens - 1
            )));
        }
        if let Some(t) = assignment.windows(2).position(|w| w[1] < w[0] || w[1] - w[0] > 1) {
            return Err(AlignError::PathMismatch(format!("invalid step at frame {}", t + 1)));
        }
        Ok(Self {
            n_tokens,
            assignment,
            score,
        })
    }

    #[inline]
    pub fn n_frames(&self) -> usize {
        self.assignment.len()
    }

    #[inline]
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    #[inline]
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn into_assignment(self) -> Vec<usize> {
        self.assignment
    }

    /// Sum of the similarities along the path, accumulated in frame order.
    #[inline]
    pub fn score(&self) -> f64 {
        self.score
    }
}

fn check_shape(n_frames: usize, n_tokens: usize) -> Result<()> {
    if n_frames == 0 || n_tokens == 0 {
        return Err(AlignError::EmptyInput { n_frames, n_tokens });
    }
    if n_frames < n_tokens {
        return Err(AlignError::TooFewFrames { n_frames, n_tokens });
    }
    Ok(())
}

/// Fills trellis row `t` from row `t - 1` (ignored when `t == 0`).
///
/// `slack` is `N - M`. Shared by the single and batched drivers so both
/// produce identical bits.
#[inline]
pub(crate) fn trellis_row(t: usize, slack: usize, sim: &[f64], prev: &[f64], out: &mut [f64]) {
    if t == 0 {
        out[0] = sim[0];
        out[1..].fill(f64::NEG_INFINITY);
        return;
    }
    out[0] = if t > slack { f64::INFINITY } else { sim[0] + prev[0] };
    for j in 1..out.len() {
        out[j] = prev[j].max(prev[j - 1]) + sim[j];
    }
}

/// One backtracking step: the token at frame `t` given the token at `t + 1`.
///
/// `row` is trellis row `t`. Every cell compared is passed to `probe`.
#[inline]
pub(crate) fn backtrack_step(row: &[f64], next: usize, probe: &mut impl FnMut(f64)) -> usize {
    if next == 0 {
        return 0;
    }
    let lower = row[next - 1];
    let stay = row[next];
    probe(lower);
    probe(stay);
    if lower > stay {
        next - 1
    } else {
        next
    }
}

pub fn build_trellis(sim: &SimilarityMatrix) -> Result<Trellis> {
    let (n, m) = (sim.n_frames(), sim.n_tokens());
    check_shape(n, m)?;
    let slack = n - m;
    let mut values = vec![0.0; n * m];
    let (first, _) = values.split_at_mut(m);
    trellis_row(0, slack, sim.row(0), &[], first);
    for t in 1..n {
        let (done, rest) = values.split_at_mut(t * m);
        trellis_row(t, slack, sim.row(t), &done[(t - 1) * m..], &mut rest[..m]);
    }
    Ok(Trellis {
        n_frames: n,
        n_tokens: m,
        values,
    })
}

fn backtrack_with(trellis: &Trellis, probe: &mut impl FnMut(f64)) -> AlignmentPath {
    let (n, m) = (trellis.n_frames, trellis.n_tokens);
    let mut assignment = vec![0; n];
    assignment[n - 1] = m - 1;
    for t in (0..n - 1).rev() {
        assignment[t] = backtrack_step(trellis.row(t), assignment[t + 1], probe);
    }
    AlignmentPath {
        n_tokens: m,
        assignment,
        // Following the argmax predecessor reproduces the final cell exactly.
        score: trellis.get(n - 1, m - 1),
    }
}

pub fn backtrack(trellis: &Trellis) -> AlignmentPath {
    backtrack_with(trellis, &mut |_| {})
}

/// Counts of the trellis cells read by the backtracking comparator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BacktrackTrace {
    pub cells_read: usize,
    pub positive_infinity_reads: usize,
    pub negative_infinity_reads: usize,
}

/// [`backtrack`] with every comparison recorded.
pub fn backtrack_traced(trellis: &Trellis) -> (AlignmentPath, BacktrackTrace) {
    let mut trace = BacktrackTrace::default();
    let path = backtrack_with(trellis, &mut |v| {
        trace.cells_read += 1;
        if v == f64::INFINITY {
            trace.positive_infinity_reads += 1;
        } else if v == f64::NEG_INFINITY {
            trace.negative_infinity_reads += 1;
        }
    });
    (path, trace)
}

/// Aligns a similarity matrix directly.
pub fn align_similarity(sim: &SimilarityMatrix) -> Result<AlignmentPath> {
    build_trellis(sim).map(|t| backtrack(&t))
}

/// Aligns `frames` (N) to `tokens` (M <= N) by cosine similarity.
pub fn align(frames: &EmbeddingSequence, tokens: &EmbeddingSequence) -> Result<AlignmentPath> {
    check_shape(frames.len(), tokens.len())?;
    let sim = cosine_similarity_matrix(frames, tokens)?;
    align_similarity(&sim)
}
