//! Mixed speech/text sequences built from a frame-to-token alignment.
//!
//! Discrete mixup replaces frame `i` by its aligned token embedding `e[a[i]]`
//! unless a per-frame uniform draw `p` exceeds `p_star`. Interpolation mixup
//! takes `(1 - p_star) * f[i] + p_star * e[a[i]]`.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AlignError, Result};
use crate::tensor::{EmbeddingSequence, MixupSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixupMode {
    Discrete,
    Interpolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupConfig {
    pub p_star: f64,
    pub mode: MixupMode,
    pub rng_seed: u64,
}

impl MixupConfig {
    pub fn new(p_star: f64, mode: MixupMode, rng_seed: u64) -> Result<Self> {
        check_p_star(p_star)?;
        Ok(Self { p_star, mode, rng_seed })
    }
}

fn check_p_star(p_star: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p_star) {
        Ok(())
    } else {
        Err(AlignError::InvalidValue(format!(
            "p_star must lie in [0, 1], got {p_star}"
        )))
    }
}

fn check_inputs(frames: &EmbeddingSequence, tokens: &EmbeddingSequence, path: &[usize]) -> Result<()> {
    if frames.dim() != tokens.dim() {
        return Err(AlignError::DimensionMismatch {
            expected: frames.dim(),
            actual: tokens.dim(),
        });
    }
    if path.len() != frames.len() {
        return Err(AlignError::PathMismatch(format!(
            "path has {} entries for {} frames",
            path.len(),
            frames.len()
        )));
    }
    if let Some((i, &j)) = path.iter().enumerate().find(|(_, &j)| j >= tokens.len()) {
        return Err(AlignError::PathMismatch(format!(
            "frame {i} aligned to token {j}, but there are only {} tokens",
            tokens.len()
        )));
    }
    Ok(())
}

/// Random stream for one sequence of a batch. Items draw from disjoint
/// ChaCha streams of the same seed, so batch order never changes an item.
pub fn sequence_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-frame text/speech decisions for discrete mixup; `true` selects the
/// token embedding.
///
/// Draws come from the open interval (0, 1), so `p_star = 0` keeps every frame
/// and `p_star = 1` replaces every frame. A draw equal to `p_star` selects text.
pub fn discrete_decisions(n_frames: usize, p_star: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..n_frames)
        .map(|_| {
            let p: f64 = rng.sample(Open01);
            p <= p_star
        })
        .collect()
}

pub fn discrete_mixup_with_rng(
    frames: &EmbeddingSequence,
    tokens: &EmbeddingSequence,
    path: &[usize],
    p_star: f64,
    rng: &mut impl Rng,
) -> Result<MixupSequence> {
    check_p_star(p_star)?;
    check_inputs(frames, tokens, path)?;
    let take_text = discrete_decisions(frames.len(), p_star, rng);
    let mut data = Vec::with_capacity(frames.data().len());
    for (i, (&j, text)) in path.iter().zip(take_text).enumerate() {
        data.extend_from_slice(if text { tokens.row(j) } else { frames.row(i) });
    }
    EmbeddingSequence::new(frames.len(), frames.dim(), data)
}

/// Discrete mixup on stream 0 of `config.rng_seed`.
pub fn discrete_mixup(
    frames: &EmbeddingSequence,
    tokens: &EmbeddingSequence,
    path: &[usize],
    config: &MixupConfig,
) -> Result<MixupSequence> {
    if config.mode != MixupMode::Discrete {
        return Err(AlignError::InvalidValue("config mode is not discrete".into()));
    }
    discrete_mixup_with_rng(
        frames,
        tokens,
        path,
        config.p_star,
        &mut sequence_rng(config.rng_seed, 0),
    )
}

pub fn interpolation_mixup(
    frames: &EmbeddingSequence,
    tokens: &EmbeddingSequence,
    path: &[usize],
    p_star: f64,
) -> Result<MixupSequence> {
    check_p_star(p_star)?;
    check_inputs(frames, tokens, path)?;
    let keep = 1.0 - p_star;
    let mut data = Vec::with_capacity(frames.data().len());
    for (i, &j) in path.iter().enumerate() {
        // Endpoints copy verbatim so signed zeros survive.
        if p_star == 0.0 {
            data.extend_from_slice(frames.row(i));
            continue;
        }
        if p_star == 1.0 {
            data.extend_from_slice(tokens.row(j));
            continue;
        }
        data.extend(
            frames
                .row(i)
                .iter()
                .zip(tokens.row(j))
                .map(|(&f, &e)| (keep * f as f64 + p_star * e as f64) as f32),
        );
    }
    EmbeddingSequence::new(frames.len(), frames.dim(), data)
}

/// Dispatches on `config.mode`, drawing from `stream` of the configured seed.
pub fn mixup(
    frames: &EmbeddingSequence,
    tokens: &EmbeddingSequence,
    path: &[usize],
    config: &MixupConfig,
    stream: u64,
) -> Result<MixupSequence> {
    match config.mode {
        MixupMode::Discrete => discrete_mixup_with_rng(
            frames,
            tokens,
            path,
            config.p_star,
            &mut sequence_rng(config.rng_seed, stream),
        ),
        MixupMode::Interpolation => interpolation_mixup(frames, tokens, path, config.p_star),
    }
}
