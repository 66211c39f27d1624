use rayon::prelude::*;

use super::{align, backtrack_step, check_shape, trellis_row, AlignmentPath};
use crate::error::Result;
use crate::tensor::{cosine_similarity_matrix, EmbeddingSequence, SimilarityMatrix};

struct Item {
    index: usize,
    sim: SimilarityMatrix,
    trellis: Vec<f64>,
}

/// Aligns every `(frames, tokens)` pair in one pass.
///
/// The trellis is swept row by row across the whole batch (row `t` of every
/// item before row `t + 1` of any), and backtracking steps every item back one
/// frame at a time under a per-item length mask. Results are bitwise identical
/// to calling [`align`] on each pair. A failing item yields its own error and
/// does not affect the others.
pub fn align_batch(pairs: &[(EmbeddingSequence, EmbeddingSequence)]) -> Vec<Result<AlignmentPath>> {
    let mut results: Vec<Option<Result<AlignmentPath>>> = vec![None; pairs.len()];
    let mut items = Vec::with_capacity(pairs.len());
    for (index, (frames, tokens)) in pairs.iter().enumerate() {
        let sim = check_shape(frames.len(), tokens.len()).and_then(|_| cosine_similarity_matrix(frames, tokens));
        match sim {
            Ok(sim) => {
                let cells = sim.n_frames() * sim.n_tokens();
                items.push(Item {
                    index,
                    sim,
                    trellis: vec![0.0; cells],
                })
            }
            Err(e) => results[index] = Some(Err(e)),
        }
    }

    let max_frames = items.iter().map(|it| it.sim.n_frames()).max().unwrap_or(0);

    for t in 0..max_frames {
        for it in items.iter_mut().filter(|it| t < it.sim.n_frames()) {
            let m = it.sim.n_tokens();
            let slack = it.sim.n_frames() - m;
            let (done, rest) = it.trellis.split_at_mut(t * m);
            let prev = if t == 0 { &[][..] } else { &done[(t - 1) * m..] };
            trellis_row(t, slack, it.sim.row(t), prev, &mut rest[..m]);
        }
    }

    let mut assignments: Vec<Vec<usize>> = items
        .iter()
        .map(|it| {
            let mut a = vec![0; it.sim.n_frames()];
            a[it.sim.n_frames() - 1] = it.sim.n_tokens() - 1;
            a
        })
        .collect();
    for t in (0..max_frames.saturating_sub(1)).rev() {
        for (it, a) in items.iter().zip(assignments.iter_mut()) {
            if t + 1 >= it.sim.n_frames() {
                continue;
            }
            let m = it.sim.n_tokens();
            a[t] = backtrack_step(&it.trellis[t * m..(t + 1) * m], a[t + 1], &mut |_| {});
        }
    }

    for (it, assignment) in items.into_iter().zip(assignments) {
        let (n, m) = (it.sim.n_frames(), it.sim.n_tokens());
        results[it.index] = Some(Ok(AlignmentPath {
            n_tokens: m,
            assignment,
            score: it.trellis[n * m - 1],
        }));
    }
    results.into_iter().map(|r| r.expect("every item resolved")).collect()
}

/// Per-item parallel alignment; output order follows input order.
pub fn align_batch_par(pairs: &[(EmbeddingSequence, EmbeddingSequence)]) -> Vec<Result<AlignmentPath>> {
    pairs.par_iter().map(|(f, e)| align(f, e)).collect()
}
