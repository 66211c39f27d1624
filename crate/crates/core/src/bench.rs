//! Wall-clock comparison of the DTW aligner and the Sinkhorn baseline.
//!
//! A benchmark runs `warmup` untimed passes over the dataset, then `repeats`
//! timed passes. Every pass must reproduce the first pass's alignments bit for
//! bit.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtw::align;
use crate::error::{AlignError, Result as AlignResult};
use crate::eval::synth_planted;
use crate::ot::{ot_align, SinkhornConfig};
use crate::tensor::EmbeddingSequence;

pub type Pair = (EmbeddingSequence, EmbeddingSequence);

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("at least 3 timed repeats are required, got {0}")]
    TooFewRepeats(usize),

    #[error("item {index} failed: {source}")]
    ItemFailed {
        index: usize,
        #[source]
        source: AlignError,
    },

    #[error("pass {pass} produced different alignments than pass 0")]
    Nondeterministic { pass: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Dtw,
    Ot(SinkhornConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dtw => "dtw",
            Method::Ot(_) => "ot",
        }
    }

    fn run(&self, frames: &EmbeddingSequence, tokens: &EmbeddingSequence) -> AlignResult<(Vec<usize>, f64)> {
        match self {
            Method::Dtw => align(frames, tokens).map(|p| {
                let score = p.score();
                (p.into_assignment(), score)
            }),
            Method::Ot(cfg) => ot_align(frames, tokens, cfg).map(|o| (o.alignment.assignment, o.score)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub repeats: usize,
    /// Spread items over the rayon pool instead of running on one thread.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            warmup: 1,
            repeats: 3,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub mean_frames: f64,
    pub mean_tokens: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinkhorn: Option<SinkhornConfig>,
    /// Sum of all timed passes, seconds.
    pub total_seconds: f64,
    /// Median timed pass, seconds.
    pub median_pass_seconds: f64,
    pub pass_seconds: Vec<f64>,
    pub pairs: usize,
    /// `1000 * total_seconds / (pairs * timed_runs)`.
    pub per_pair_ms: f64,
    pub shape_stats: ShapeStats,
    pub warmup_runs: usize,
    pub timed_runs: usize,
    /// No warmup pass preceded the timed passes.
    pub cold_start: bool,
    pub parallel: bool,
}

/// Timing plus the alignments the benchmarked passes produced.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub result: BenchResult,
    pub assignments: Vec<Vec<usize>>,
    pub scores: Vec<f64>,
}

type PassOutput = Vec<(Vec<usize>, f64)>;

fn run_pass(dataset: &[Pair], method: &Method, parallel: bool) -> Result<PassOutput, BenchError> {
    let run = |(index, (f, e)): (usize, &Pair)| {
        method
            .run(f, e)
            .map_err(|source| BenchError::ItemFailed { index, source })
    };
    if parallel {
        dataset.par_iter().enumerate().map(run).collect()
    } else {
        dataset.iter().enumerate().map(run).collect()
    }
}

fn same_output(a: &PassOutput, b: &PassOutput) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn run_bench(dataset: &[Pair], method: Method, options: BenchOptions) -> Result<BenchRun, BenchError> {
    if dataset.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    if options.repeats < 3 {
        return Err(BenchError::TooFewRepeats(options.repeats));
    }

    let mut reference: Option<PassOutput> = None;
    let mut check = |out: PassOutput, pass: usize| -> Result<(), BenchError> {
        match &reference {
            Some(r) if !same_output(r, &out) => Err(BenchError::Nondeterministic { pass }),
            Some(_) => Ok(()),
            None => {
                reference = Some(out);
                Ok(())
            }
        }
    };

    let mut pass = 0;
    for _ in 0..options.warmup {
        let out = run_pass(dataset, &method, options.parallel)?;
        check(out, pass)?;
        pass += 1;
    }
    let mut pass_seconds = Vec::with_capacity(options.repeats);
    for _ in 0..options.repeats {
        let start = Instant::now();
        let out = run_pass(dataset, &method, options.parallel)?;
        pass_seconds.push(start.elapsed().as_secs_f64());
        check(out, pass)?;
        pass += 1;
    }

    let pairs = dataset.len();
    let total_seconds: f64 = pass_seconds.iter().sum();
    let shape_stats = ShapeStats {
        mean_frames: dataset.iter().map(|(f, _)| f.len() as f64).sum::<f64>() / pairs as f64,
        mean_tokens: dataset.iter().map(|(_, e)| e.len() as f64).sum::<f64>() / pairs as f64,
        dim: dataset[0].0.dim(),
    };
    let (assignments, scores) = reference.expect("at least one pass").into_iter().unzip();
    Ok(BenchRun {
        result: BenchResult {
            method: method.name().into(),
            sinkhorn: match method {
                Method::Ot(cfg) => Some(cfg),
                Method::Dtw => None,
            },
            total_seconds,
            median_pass_seconds: median(&pass_seconds),
            per_pair_ms: 1000.0 * total_seconds / (pairs * options.repeats) as f64,
            pass_seconds,
            pairs,
            shape_stats,
            warmup_runs: options.warmup,
            timed_runs: options.repeats,
            cold_start: options.warmup == 0,
            parallel: options.parallel,
        },
        assignments,
        scores,
    })
}

/// Both methods on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchComparison {
    pub dtw: BenchResult,
    pub ot: BenchResult,
    /// `ot.total_seconds / dtw.total_seconds`.
    pub speedup: f64,
    /// Ratio of the median passes.
    pub median_speedup: f64,
}

impl BenchComparison {
    pub fn new(dtw: BenchResult, ot: BenchResult) -> Self {
        Self {
            speedup: ot.total_seconds / dtw.total_seconds,
            median_speedup: ot.median_pass_seconds / dtw.median_pass_seconds,
            dtw,
            ot,
        }
    }
}

/// Shape and seed of the synthetic benchmark workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub n_frames: usize,
    pub n_tokens: usize,
    pub dim: usize,
    pub pairs: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Workload {
    /// 64 pairs of 512 frames and 32 tokens in 512 dimensions, seed 42.
    pub const STANDARD: Workload = Workload {
        n_frames: 512,
        n_tokens: 32,
        dim: 512,
        pairs: 64,
        noise: 0.1,
        seed: 42,
    };

    /// Item `i` is planted synthetic data seeded with `seed + i`.
    pub fn generate(&self) -> AlignResult<Vec<Pair>> {
        (0..self.pairs as u64)
            .map(|i| {
                synth_planted(
                    self.n_frames,
                    self.n_tokens,
                    self.dim,
                    self.noise,
                    self.seed.wrapping_add(i),
                )
                .map(|s| (s.frames, s.tokens))
            })
            .collect()
    }
}

impl Default for Workload {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Plain-text table of one or more results.
pub fn format_table(results: &[&BenchResult]) -> String {
    let mut out = format!(
        "{:<6} {:>6} {:>8} {:>14} {:>14} {:>12}\n",
        "method", "pairs", "repeats", "median pass s", "total s", "ms / pair"
    );
    for r in results {
        out.push_str(&format!(
            "{:<6} {:>6} {:>8} {:>14.6} {:>14.6} {:>12.4}\n",
            r.method, r.pairs, r.timed_runs, r.median_pass_seconds, r.total_seconds, r.per_pair_ms
        ));
    }
    out
}
