//! Structural validation of alignments, frame-level accuracy against reference
//! alignments, and synthetic data with a planted ground truth.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AlignError, Result};
use crate::tensor::EmbeddingSequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_frames: usize,
    pub n_tokens: usize,
    /// Token indices never decrease.
    pub monotonic: bool,
    /// Every token in `0..n_tokens` is used.
    pub surjective: bool,
    pub starts_at_zero: bool,
    pub ends_at_last: bool,
    /// Every index is below `n_tokens`.
    pub in_range: bool,
    /// First frame whose token is lower than the previous frame's.
    pub first_violation: Option<usize>,
    pub skipped_tokens: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.monotonic && self.surjective && self.starts_at_zero && self.ends_at_last && self.in_range
    }
}

pub fn validate_path(assignment: &[usize], n_tokens: usize) -> ValidationReport {
    let first_violation = assignment.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1);
    let mut used = vec![false; n_tokens];
    let mut in_range = true;
    for &j in assignment {
        match used.get_mut(j) {
            Some(u) => *u = true,
            None => in_range = false,
        }
    }
    let skipped_tokens: Vec<usize> = (0..n_tokens).filter(|&j| !used[j]).collect();
    ValidationReport {
        n_frames: assignment.len(),
        n_tokens,
        monotonic: first_violation.is_none(),
        surjective: skipped_tokens.is_empty(),
        starts_at_zero: assignment.first() == Some(&0),
        ends_at_last: n_tokens > 0 && assignment.last() == Some(&(n_tokens - 1)),
        in_range,
        first_violation,
        skipped_tokens,
    }
}

/// A predicted alignment tagged with its utterance id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledAlignment {
    pub id: String,
    pub assignment: Vec<usize>,
}

/// Ground-truth alignment from an external aligner.
///
/// When `word_tokens` is present, `assignment` indexes words and
/// `word_tokens[w]` is the number of tokens word `w` expands to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceAlignment {
    pub id: String,
    pub assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_tokens: Option<Vec<usize>>,
}

impl ReferenceAlignment {
    pub fn n_frames(&self) -> usize {
        self.assignment.len()
    }

    /// The reference at token level. Each run of frames on one word is split
    /// evenly, in order, over that word's tokens.
    pub fn token_level(&self) -> Result<Vec<usize>> {
        match &self.word_tokens {
            None => Ok(self.assignment.clone()),
            Some(counts) => expand_word_alignment(&self.assignment, counts),
        }
    }
}

pub fn expand_word_alignment(words: &[usize], word_tokens: &[usize]) -> Result<Vec<usize>> {
    let mut offsets = Vec::with_capacity(word_tokens.len());
    let mut acc = 0;
    for (w, &k) in word_tokens.iter().enumerate() {
        if k == 0 {
            return Err(AlignError::InvalidValue(format!("word {w} expands to zero tokens")));
        }
        offsets.push(acc);
        acc += k;
    }
    let mut out = Vec::with_capacity(words.len());
    let mut start = 0;
    while start < words.len() {
        let w = words[start];
        if w >= word_tokens.len() {
            return Err(AlignError::IndexOutOfRange {
                index: w,
                size: word_tokens.len(),
            });
        }
        let run = words[start..].iter().take_while(|&&x| x == w).count();
        let k = word_tokens[w];
        out.extend((0..run).map(|r| offsets[w] + r * k / run));
        start += run;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceAccuracy {
    pub id: String,
    pub accuracy: f64,
    pub n_frames: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedUtterance {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Correct frames over all scored frames.
    pub micro_frame_accuracy: f64,
    /// Mean of per-utterance accuracies.
    pub macro_utterance_accuracy: f64,
    pub per_utterance: Vec<UtteranceAccuracy>,
    pub n_utterances: usize,
    /// References that could not be scored (missing prediction, length
    /// mismatch, bad expansion table).
    pub skipped: Vec<SkippedUtterance>,
    /// Predicted ids with no reference.
    pub unmatched_predictions: Vec<String>,
}

/// Frame-level agreement between predictions and references, matched by id.
pub fn accuracy(predicted: &[LabeledAlignment], reference: &[ReferenceAlignment]) -> AccuracyReport {
    let by_id: HashMap<&str, &LabeledAlignment> = predicted.iter().map(|p| (p.id.as_str(), p)).collect();
    let ref_ids: HashSet<&str> = reference.iter().map(|r| r.id.as_str()).collect();

    let mut per_utterance = Vec::new();
    let mut skipped = Vec::new();
    for r in reference {
        let skip = |reason: String| SkippedUtterance {
            id: r.id.clone(),
            reason,
        };
        let Some(pred) = by_id.get(r.id.as_str()) else {
            skipped.push(skip("no prediction".into()));
            continue;
        };
        let truth = match r.token_level() {
            Ok(t) => t,
            Err(e) => {
                skipped.push(skip(e.to_string()));
                continue;
            }
        };
        if truth.len() != pred.assignment.len() {
            skipped.push(skip(format!(
                "length mismatch: predicted {} frames, reference {}",
                pred.assignment.len(),
                truth.len()
            )));
            continue;
        }
        if truth.is_empty() {
            skipped.push(skip("empty alignment".into()));
            continue;
        }
        let correct = truth.iter().zip(&pred.assignment).filter(|(a, b)| a == b).count();
        per_utterance.push(UtteranceAccuracy {
            id: r.id.clone(),
            accuracy: correct as f64 / truth.len() as f64,
            n_frames: truth.len(),
            correct,
        });
    }

    let frames: usize = per_utterance.iter().map(|u| u.n_frames).sum();
    let correct: usize = per_utterance.iter().map(|u| u.correct).sum();
    let n = per_utterance.len();
    AccuracyReport {
        micro_frame_accuracy: if frames == 0 {
            0.0
        } else {
            correct as f64 / frames as f64
        },
        macro_utterance_accuracy: if n == 0 {
            0.0
        } else {
            per_utterance.iter().map(|u| u.accuracy).sum::<f64>() / n as f64
        },
        n_utterances: n,
        per_utterance,
        skipped,
        unmatched_predictions: predicted
            .iter()
            .filter(|p| !ref_ids.contains(p.id.as_str()))
            .map(|p| p.id.clone())
            .collect(),
    }
}

/// Synthetic frames and tokens with the alignment that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub frames: EmbeddingSequence,
    pub tokens: EmbeddingSequence,
    pub planted: Vec<usize>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// `count` orthonormal vectors in `dim` dimensions by Gram-Schmidt on
/// Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// A uniformly random monotonic surjective assignment of `n` frames to `m` tokens.
fn random_assignment(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = sample(rng, n - 1, m - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(n);
    let mut token = 0;
    for t in 0..n {
        if token < cuts.len() && cuts[token] == t {
            token += 1;
        }
        out.push(token);
    }
    out
}

fn build_pair(rng: &mut ChaCha8Rng, tokens: Vec<Vec<f64>>, n_frames: usize, noise: f64) -> Result<SyntheticPair> {
    let (m, dim) = (tokens.len(), tokens[0].len());
    let planted = random_assignment(rng, n_frames, m);
    let normal = Normal::new(0.0, noise).map_err(|e| AlignError::InvalidValue(e.to_string()))?;
    let mut frames = Vec::with_capacity(n_frames * dim);
    for &j in &planted {
        frames.extend(tokens[j].iter().map(|&x| {
            let eps = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
            (x + eps) as f32
        }));
    }
    let token_data = tokens.iter().flatten().map(|&x| x as f32).collect();
    Ok(SyntheticPair {
        frames: EmbeddingSequence::new(n_frames, dim, frames)?,
        tokens: EmbeddingSequence::new(m, dim, token_data)?,
        planted,
    })
}

fn check_synth_args(n_frames: usize, n_tokens: usize, noise: f64) -> Result<()> {
    if n_frames == 0 || n_tokens == 0 {
        return Err(AlignError::EmptyInput { n_frames, n_tokens });
    }
    if n_frames < n_tokens {
        return Err(AlignError::TooFewFrames { n_frames, n_tokens });
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(AlignError::InvalidValue(format!("noise must be >= 0, got {noise}")));
    }
    Ok(())
}

/// Orthonormal random tokens, a random planted alignment, and frames equal to
/// their planted token plus isotropic Gaussian noise of scale `noise`.
pub fn synth_planted(n_frames: usize, n_tokens: usize, dim: usize, noise: f64, seed: u64) -> Result<SyntheticPair> {
    check_synth_args(n_frames, n_tokens, noise)?;
    if dim < n_tokens {
        return Err(AlignError::DimensionTooSmall { dim, n_tokens });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = orthonormal(&mut rng, n_tokens, dim);
    build_pair(&mut rng, tokens, n_frames, noise)
}

/// Like [`synth_planted`], but tokens are unit vectors clustered around a
/// shared direction: `sqrt(1 - spread^2) * c + spread * q_j` with `c` and all
/// `q_j` orthonormal. Pairwise token cosine is `1 - spread^2`, so small
/// `spread` makes tokens hard to tell apart.
pub fn synth_clustered(
    n_frames: usize,
    n_tokens: usize,
    dim: usize,
    noise: f64,
    spread: f64,
    seed: u64,
) -> Result<SyntheticPair> {
    check_synth_args(n_frames, n_tokens, noise)?;
    if dim <= n_tokens {
        return Err(AlignError::DimensionTooSmall {
            dim,
            n_tokens: n_tokens + 1,
        });
    }
    if !(0.0..=1.0).contains(&spread) {
        return Err(AlignError::InvalidValue(format!(
            "spread must lie in [0, 1], got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = orthonormal(&mut rng, n_tokens + 1, dim);
    let center = basis.pop().expect("n_tokens + 1 vectors");
    let shared = (1.0 - spread * spread).sqrt();
    let tokens = basis
        .iter()
        .map(|q| q.iter().zip(&center).map(|(q, c)| shared * c + spread * q).collect())
        .collect();
    build_pair(&mut rng, tokens, n_frames, noise)
}
