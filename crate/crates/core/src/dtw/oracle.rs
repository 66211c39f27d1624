//! Exhaustive search over every admissible path. Test oracle for the trellis
//! and backtracking; shares no code with them.

use super::AlignmentPath;
use crate::error::{AlignError, Result};
use crate::tensor::SimilarityMatrix;

/// Largest number of paths [`brute_force_align`] will enumerate.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Number of monotonic surjective paths for `n` frames and `m` tokens,
/// `C(n - 1, m - 1)`. Saturates at `u128::MAX`.
pub fn path_count(n: usize, m: usize) -> u128 {
    if n == 0 || m == 0 || m > n {
        return 0;
    }
    let (top, k) = ((n - 1) as u128, (m - 1).min(n - m) as u128);
    let mut c: u128 = 1;
    for i in 0..k {
        // Exact at each step: c * (top - i) is divisible by (i + 1).
        c = match c.checked_mul(top - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub path: AlignmentPath,
    pub enumerated: u128,
}

/// Enumerates every path and keeps the best one.
///
/// Scores are summed in frame order starting from `S[0][0]`. Among equal
/// scores the path whose token transitions come earliest wins, which is the
/// path strict-descent backtracking selects.
pub fn brute_force_search(sim: &SimilarityMatrix) -> Result<BruteForce> {
    let (n, m) = (sim.n_frames(), sim.n_tokens());
    if n < m {
        return Err(AlignError::TooFewFrames {
            n_frames: n,
            n_tokens: m,
        });
    }
    let total = path_count(n, m);
    if total > ENUMERATION_BUDGET {
        return Err(AlignError::BudgetExceeded {
            paths: total,
            budget: ENUMERATION_BUDGET,
        });
    }

    // `cuts[k]` is the first frame of token k + 1. Combinations are visited in
    // lexicographic order, so earlier transitions are seen first and a later
    // path only replaces the incumbent on a strictly higher score.
    let k = m - 1;
    let mut cuts: Vec<usize> = (1..=k).collect();
    let mut assignment = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut enumerated: u128 = 0;

    loop {
        let mut token = 0;
        let mut next_cut = 0;
        let mut score = 0.0;
        for (t, slot) in assignment.iter_mut().enumerate() {
            if next_cut < k && cuts[next_cut] == t {
                token += 1;
                next_cut += 1;
            }
            *slot = token;
            score = if t == 0 {
                sim.get(0, 0)
            } else {
                score + sim.get(t, token)
            };
        }
        enumerated += 1;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, assignment.clone()));
        }

        // Advance to the next combination of k cut points from 1..n.
        let mut i = k;
        loop {
            if i == 0 {
                let (score, assignment) = best.expect("at least one path");
                return Ok(BruteForce {
                    path: AlignmentPath {
                        n_tokens: m,
                        assignment,
                        score,
                    },
                    enumerated,
                });
            }
            i -= 1;
            if cuts[i] < n - k + i {
                cuts[i] += 1;
                for r in i + 1..k {
                    cuts[r] = cuts[r - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn brute_force_align(sim: &SimilarityMatrix) -> Result<AlignmentPath> {
    brute_force_search(sim).map(|b| b.path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtw::align_similarity;

    #[test]
    fn counts() {
        assert_eq!(path_count(3, 2), 2);
        assert_eq!(path_count(5, 3), 6);
        assert_eq!(path_count(1, 1), 1);
        assert_eq!(path_count(10, 5), 126);
        assert_eq!(path_count(2, 3), 0);
        assert_eq!(path_count(60, 30), 59132290782430712);
    }

    #[test]
    fn enumerates_every_path() {
        for (n, m, expected) in [(3, 2, 2u128), (5, 3, 6), (7, 1, 1), (6, 6, 1)] {
            let sim = SimilarityMatrix::new(n, m, vec![0.0; n * m]).unwrap();
            assert_eq!(brute_force_search(&sim).unwrap().enumerated, expected);
        }
    }

    #[test]
    fn hand_example() {
        let s = SimilarityMatrix::from_rows(&[[0.9, 0.1], [0.8, 0.2], [0.1, 0.9]]).unwrap();
        let p = brute_force_align(&s).unwrap();
        assert_eq!(p.assignment(), &[0, 0, 1]);
        assert!((p.score() - 2.6).abs() < 1e-12);
    }

    #[test]
    fn ties_match_backtracking() {
        let s = SimilarityMatrix::new(4, 2, vec![0.0; 8]).unwrap();
        assert_eq!(brute_force_align(&s).unwrap(), align_similarity(&s).unwrap());
        let s = SimilarityMatrix::new(7, 3, vec![1.0; 21]).unwrap();
        assert_eq!(brute_force_align(&s).unwrap(), align_similarity(&s).unwrap());
    }

    #[test]
    fn budget_and_shape_errors() {
        let s = SimilarityMatrix::new(40, 20, vec![0.0; 800]).unwrap();
        assert!(matches!(brute_force_align(&s), Err(AlignError::BudgetExceeded { .. })));
        let s = SimilarityMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(brute_force_align(&s), Err(AlignError::TooFewFrames { .. })));
    }
}
