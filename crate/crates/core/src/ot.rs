//! Entropic optimal-transport baseline.
//!
//! Frames and tokens carry uniform mass (`1/N` and `1/M`). The coupling is
//! found with log-domain Sinkhorn iterations on the cost `1 - cos`, and a hard
//! alignment is read off by per-frame argmax. Nothing forces that alignment
//! to be monotonic or to cover every token.

use serde::{Deserialize, Serialize};

use crate::error::{AlignError, Result};
use crate::tensor::{cosine_similarity_matrix, EmbeddingSequence, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(AlignError::InvalidValue(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(AlignError::InvalidValue(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Transport cost, N x M row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(AlignError::EmptyInput {
                n_frames: n_rows,
                n_tokens: n_cols,
            });
        }
        if values.len() != n_rows * n_cols || values.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::InvalidValue(
                "cost matrix must hold n_rows x n_cols finite values".into(),
            ));
        }
        Ok(Self { n_rows, n_cols, values })
    }

    /// `1 - s` for every similarity `s`.
    pub fn from_similarity(sim: &SimilarityMatrix) -> Self {
        Self {
            n_rows: sim.n_frames(),
            n_cols: sim.n_tokens(),
            values: sim.values().iter().map(|s| 1.0 - s).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n_frames: usize,
    pub n_tokens: usize,
    /// N x M row-major.
    pub plan: Vec<f64>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// L1 marginal violation (rows plus columns) after each iteration.
    pub violation_history: Vec<f64>,
}

impl TransportPlan {
    #[inline]
    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.plan[t * self.n_tokens + j]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.plan[t * self.n_tokens..(t + 1) * self.n_tokens]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks_exact(self.n_tokens).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_tokens];
        for row in self.plan.chunks_exact(self.n_tokens) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// Largest absolute deviation of any row or column sum from its marginal.
    pub fn max_marginal_violation(&self) -> f64 {
        let rows = self
            .row_sums()
            .iter()
            .zip(&self.row_marginal)
            .map(|(s, a)| (s - a).abs())
            .fold(0.0, f64::max);
        let cols = self
            .col_sums()
            .iter()
            .zip(&self.col_marginal)
            .map(|(s, b)| (s - b).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.iter().sum()
    }
}

#[inline]
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn between uniform marginals.
pub fn sinkhorn(cost: &CostMatrix, config: &SinkhornConfig) -> Result<TransportPlan> {
    config.validate()?;
    let (n, m) = (cost.n_rows, cost.n_cols);
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();

    // Log-kernel in both layouts so row and column reductions stream contiguously.
    let kernel: Vec<f64> = cost.values.iter().map(|c| -c / config.epsilon).collect();
    let mut kernel_t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            kernel_t[j * n + i] = kernel[i * m + j];
        }
    }

    // Scaled dual potentials: u = f / epsilon, v = g / epsilon.
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut row_lse: Vec<f64> = kernel.chunks_exact(m).map(|k| log_sum_exp(k.iter().copied())).collect();
    let mut col_lse = vec![0.0; m];

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;

    for iter in 1..=config.max_iters {
        for (ui, lse) in u.iter_mut().zip(&row_lse) {
            *ui = log_a - lse;
        }
        for (j, k) in kernel_t.chunks_exact(n).enumerate() {
            col_lse[j] = log_sum_exp(k.iter().zip(&u).map(|(k, u)| k + u));
            v[j] = log_b - col_lse[j];
        }
        for (i, k) in kernel.chunks_exact(m).enumerate() {
            row_lse[i] = log_sum_exp(k.iter().zip(&v).map(|(k, v)| k + v));
        }
        if u.iter().chain(&v).chain(&row_lse).any(|x| !x.is_finite()) {
            return Err(AlignError::NumericalUnderflow { iteration: iter });
        }

        let a = 1.0 / n as f64;
        let b = 1.0 / m as f64;
        let row_err: f64 = u.iter().zip(&row_lse).map(|(u, l)| ((u + l).exp() - a).abs()).sum();
        let col_err: f64 = v.iter().zip(&col_lse).map(|(v, l)| ((v + l).exp() - b).abs()).sum();
        let violation = row_err + col_err;
        history.push(violation);
        iterations_run = iter;
        if violation < config.tol {
            converged = true;
            break;
        }
    }

    let mut plan = Vec::with_capacity(n * m);
    for (k, ui) in kernel.chunks_exact(m).zip(&u) {
        plan.extend(k.iter().zip(&v).map(|(k, vj)| (ui + vj + k).exp()));
    }
    Ok(TransportPlan {
        n_frames: n,
        n_tokens: m,
        plan,
        row_marginal: vec![1.0 / n as f64; n],
        col_marginal: vec![1.0 / m as f64; m],
        iterations_run,
        converged,
        violation_history: history,
    })
}

/// Per-frame argmax of a transport plan. Carries no structural guarantees.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedAssignment {
    pub n_tokens: usize,
    pub assignment: Vec<usize>,
    /// Tokens that received no frame, ascending.
    pub skipped_tokens: Vec<usize>,
}

pub fn plan_to_alignment(plan: &TransportPlan) -> UnconstrainedAssignment {
    let assignment: Vec<usize> = plan
        .plan
        .chunks_exact(plan.n_tokens)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |(bj, bv), (j, &v)| if v > bv { (j, v) } else { (bj, bv) },
                )
                .0
        })
        .collect();
    let mut used = vec![false; plan.n_tokens];
    for &j in &assignment {
        used[j] = true;
    }
    UnconstrainedAssignment {
        n_tokens: plan.n_tokens,
        skipped_tokens: (0..plan.n_tokens).filter(|&j| !used[j]).collect(),
        assignment,
    }
}

/// Result of the full OT baseline on one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OtAlignment {
    pub plan: TransportPlan,
    pub alignment: UnconstrainedAssignment,
    /// Similarity summed along the argmax assignment in frame order.
    pub score: f64,
}

pub fn ot_align_similarity(sim: &SimilarityMatrix, config: &SinkhornConfig) -> Result<OtAlignment> {
    let plan = sinkhorn(&CostMatrix::from_similarity(sim), config)?;
    let alignment = plan_to_alignment(&plan);
    let score = alignment
        .assignment
        .iter()
        .enumerate()
        .fold(0.0, |acc, (t, &j)| acc + sim.get(t, j));
    Ok(OtAlignment { plan, alignment, score })
}

pub fn ot_align(
    frames: &EmbeddingSequence,
    tokens: &EmbeddingSequence,
    config: &SinkhornConfig,
) -> Result<OtAlignment> {
    ot_align_similarity(&cosine_similarity_matrix(frames, tokens)?, config)
}
