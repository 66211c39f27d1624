//! Loss kernels over per-position output distributions: cross entropy, KL,
//! symmetric KL, and the combined multitask loss.

use serde::{Deserialize, Serialize};

use crate::error::{AlignError, Result};

/// L x V table of probabilities; each row is a distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable {
    positions: usize,
    vocab: usize,
    probs: Vec<f64>,
}

const ROW_SUM_TOL: f64 = 1e-5;

impl DistributionTable {
    pub fn new(positions: usize, vocab: usize, probs: Vec<f64>) -> Result<Self> {
        if positions == 0 || vocab == 0 {
            return Err(AlignError::EmptyInput {
                n_frames: positions,
                n_tokens: vocab,
            });
        }
        if probs.len() != positions * vocab {
            return Err(AlignError::InvalidValue(format!(
                "table has {} values, expected {positions} x {vocab}",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact(vocab).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(AlignError::InvalidValue(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(AlignError::InvalidValue(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            positions,
            vocab,
            probs,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let vocab = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != vocab) {
            return Err(AlignError::DimensionMismatch {
                expected: vocab,
                actual: bad.as_ref().len(),
            });
        }
        let probs = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), vocab, probs)
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.vocab..(i + 1) * self.vocab]
    }

    fn shape(&self) -> (usize, usize) {
        (self.positions, self.vocab)
    }
}

/// How per-position terms are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    fn apply(self, total: f64, positions: usize) -> f64 {
        match self {
            Reduction::Mean => total / positions as f64,
            Reduction::Sum => total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Weight of the KL terms in [`total_loss`].
    pub lambda: f64,
    /// Added inside every logarithm.
    pub epsilon_smooth: f64,
    pub reduction: Reduction,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            epsilon_smooth: 1e-9,
            reduction: Reduction::Mean,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(AlignError::InvalidValue(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon_smooth > 0.0 && self.epsilon_smooth <= 1e-6) {
            return Err(AlignError::InvalidValue(format!(
                "epsilon_smooth must lie in (0, 1e-6], got {}",
                self.epsilon_smooth
            )));
        }
        Ok(())
    }
}

/// Negative log-likelihood of `targets` under `pred`.
pub fn cross_entropy(pred: &DistributionTable, targets: &[usize], config: &ObjectiveConfig) -> Result<f64> {
    config.validate()?;
    if targets.len() != pred.positions {
        return Err(AlignError::ShapeMismatch {
            left: pred.shape(),
            right: (targets.len(), pred.vocab),
        });
    }
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        if y >= pred.vocab {
            return Err(AlignError::IndexOutOfRange {
                index: y,
                size: pred.vocab,
            });
        }
        total -= (pred.row(i)[y] + config.epsilon_smooth).ln();
    }
    Ok(config.reduction.apply(total, pred.positions))
}

/// `KL(p || q)` per position, reduced over positions.
pub fn kl_divergence(p: &DistributionTable, q: &DistributionTable, config: &ObjectiveConfig) -> Result<f64> {
    config.validate()?;
    if p.shape() != q.shape() {
        return Err(AlignError::ShapeMismatch {
            left: p.shape(),
            right: q.shape(),
        });
    }
    let eps = config.epsilon_smooth;
    let total: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&pv, &qv)| pv * ((pv + eps) / (qv + eps)).ln())
        .sum();
    Ok(config.reduction.apply(total, p.positions))
}

/// `KL(p || q) + KL(q || p)`.
pub fn symmetric_kl(p: &DistributionTable, q: &DistributionTable, config: &ObjectiveConfig) -> Result<f64> {
    Ok(kl_divergence(p, q, config)? + kl_divergence(q, p, config)?)
}

/// `l_st + l_mt + lambda * (kl_sm + kl_xm) / 2`.
pub fn total_loss(l_st: f64, l_mt: f64, kl_sm: f64, kl_xm: f64, config: &ObjectiveConfig) -> f64 {
    l_st + l_mt + config.lambda * (kl_sm + kl_xm) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ObjectiveConfig {
        ObjectiveConfig::default()
    }

    fn random_table(rng: &mut impl Rng, l: usize, v: usize) -> DistributionTable {
        let mut probs = Vec::with_capacity(l * v);
        for _ in 0..l {
            let raw: Vec<f64> = (0..v).map(|_| rng.random::<f64>().powi(3)).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|x| x / s));
        }
        DistributionTable::new(l, v, probs).unwrap()
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let one_hot = DistributionTable::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert!(cross_entropy(&one_hot, &[1, 0], &cfg()).unwrap().abs() <= 1e-6);

        let uniform = DistributionTable::from_rows(&[[0.25; 4], [0.25; 4]]).unwrap();
        assert!((cross_entropy(&uniform, &[0, 3], &cfg()).unwrap() - 4f64.ln()).abs() < 1e-8);

        let half = DistributionTable::from_rows(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert!((cross_entropy(&half, &[0, 1, 1], &cfg()).unwrap() - 2f64.ln()).abs() < 1e-8);

        let sum = ObjectiveConfig {
            reduction: Reduction::Sum,
            ..cfg()
        };
        assert!((cross_entropy(&half, &[0, 1, 1], &sum).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn cross_entropy_errors() {
        let t = DistributionTable::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_eq!(
            cross_entropy(&t, &[2], &cfg()).unwrap_err(),
            AlignError::IndexOutOfRange { index: 2, size: 2 }
        );
        assert!(cross_entropy(&t, &[0, 1], &cfg()).is_err());
    }

    #[test]
    fn bernoulli_kl_values() {
        let p = DistributionTable::from_rows(&[[0.9, 0.1]]).unwrap();
        let q = DistributionTable::from_rows(&[[0.5, 0.5]]).unwrap();
        let pq = kl_divergence(&p, &q, &cfg()).unwrap();
        let qp = kl_divergence(&q, &p, &cfg()).unwrap();
        let expected_pq = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        let expected_qp = 0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5.0f64.ln();
        assert!((pq - expected_pq).abs() < 1e-8 && (pq - 0.3681).abs() < 1e-3);
        assert!((qp - expected_qp).abs() < 1e-8 && (qp - 0.5108).abs() < 1e-3);
        assert!((pq - qp).abs() > 0.1);
        let s = symmetric_kl(&p, &q, &cfg()).unwrap();
        assert!((s - 0.8789).abs() < 1e-3);
        assert_eq!(s.to_bits(), symmetric_kl(&q, &p, &cfg()).unwrap().to_bits());
        assert!(kl_divergence(&p, &p, &cfg()).unwrap().abs() < 1e-9);
        assert_eq!(symmetric_kl(&p, &p, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn kl_shape_mismatch() {
        let p = DistributionTable::from_rows(&[[0.9, 0.1]]).unwrap();
        let q = DistributionTable::from_rows(&[[0.5, 0.25, 0.25]]).unwrap();
        assert!(matches!(
            kl_divergence(&p, &q, &cfg()),
            Err(AlignError::ShapeMismatch { .. })
        ));
        assert!(symmetric_kl(&p, &q, &cfg()).is_err());
    }

    #[test]
    fn kl_nonnegative_and_symmetric_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let l = rng.random_range(1..6);
            let v = rng.random_range(2..8);
            let p = random_table(&mut rng, l, v);
            let q = random_table(&mut rng, l, v);
            let pq = kl_divergence(&p, &q, &cfg()).unwrap();
            let qp = kl_divergence(&q, &p, &cfg()).unwrap();
            assert!(pq >= -1e-9 && qp >= -1e-9);
            assert!(symmetric_kl(&p, &q, &cfg()).unwrap() >= pq.max(qp));
        }
    }

    #[test]
    fn total_loss_values() {
        let zero = ObjectiveConfig { lambda: 0.0, ..cfg() };
        assert_eq!(total_loss(1.5, 2.5, 9.0, 9.0, &zero), 4.0);
        assert_eq!(total_loss(1.0, 2.0, 0.4, 0.6, &cfg()), 4.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &cfg()), 0.0);
        for lambda in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let c = ObjectiveConfig { lambda, ..cfg() };
            assert_eq!(total_loss(1.0, 2.0, 0.25, 0.75, &c), 3.0 + lambda * 0.5);
        }
    }

    #[test]
    fn table_and_config_validation() {
        assert!(DistributionTable::from_rows(&[[0.5, 0.6]]).is_err());
        assert!(DistributionTable::from_rows(&[[1.2, -0.2]]).is_err());
        assert!(DistributionTable::new(0, 2, vec![]).is_err());
        let bad = ObjectiveConfig {
            epsilon_smooth: 1e-3,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = ObjectiveConfig { lambda: -1.0, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
