//! Uniform without-replacement client sampling, plus exhaustive subset
//! enumeration used as an oracle by the verification suite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::vector::{ordered_mean, ModelVector};

/// Largest `C(N, M)` that [`enumerate_subsets`] will materialise.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// The participant set of one round: `M` distinct ids in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: usize,
    pub participants: Vec<usize>,
}

impl RoundPlan {
    pub fn new(round: usize, mut participants: Vec<usize>, num_clients: usize) -> Result<Self> {
        participants.sort_unstable();
        if participants.is_empty() {
            return Err(SimError::config("a round needs at least one participant"));
        }
        if participants.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::config("duplicate participant id"));
        }
        if let Some(&max) = participants.last() {
            if max >= num_clients {
                return Err(SimError::config(format!(
                    "participant {max} out of range for N={num_clients}"
                )));
            }
        }
        Ok(RoundPlan {
            round,
            participants,
        })
    }

    /// Every client participates.
    pub fn full(round: usize, num_clients: usize) -> Self {
        RoundPlan {
            round,
            participants: (0..num_clients).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn contains(&self, client: usize) -> bool {
        self.participants.binary_search(&client).is_ok()
    }
}

fn check_counts(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(SimError::config(format!(
            "need 1 <= M <= N, got M={m} N={n}"
        )));
    }
    Ok(())
}

/// Draws `M` of `N` clients uniformly without replacement (partial
/// Fisher-Yates, then sorted).
pub fn sample_round<R: Rng + ?Sized>(
    round: usize,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<RoundPlan> {
    check_counts(n, m)?;
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool.sort_unstable();
    Ok(RoundPlan {
        round,
        participants: pool,
    })
}

/// Exact `C(n, k)`, or `None` on `u128` overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// All `C(N, M)` subsets in lexicographic order.
pub fn enumerate_subsets(n: usize, m: usize) -> Result<Vec<RoundPlan>> {
    check_counts(n, m)?;
    let count = binomial(n, m).unwrap_or(u128::MAX);
    if count > ENUMERATION_CAP {
        return Err(SimError::OracleScale {
            n,
            m,
            count,
            cap: ENUMERATION_CAP,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(RoundPlan {
            round: 0,
            participants: idx.clone(),
        });
        // rightmost position that can still advance
        let Some(pos) = (0..m).rev().find(|&p| idx[p] < n - m + p) else {
            break;
        };
        idx[pos] += 1;
        for q in pos + 1..m {
            idx[q] = idx[q - 1] + 1;
        }
    }
    Ok(out)
}

/// Closed-form variance of the mean of a uniform without-replacement sample
/// of size `M`:
/// `(1/M) * ((N - M)/(N - 1)) * (1/N) * sum_i |x_i - x_bar|^2`.
///
/// `N = 1` forces `M = N`, where the sample mean is deterministic, so the
/// undefined `N - 1` denominator is never formed.
pub fn without_replacement_variance(xs: &[ModelVector], m: usize) -> Result<f64> {
    if xs.is_empty() {
        return Err(SimError::config("variance of an empty population"));
    }
    let n = xs.len();
    check_counts(n, m)?;
    if m == n {
        return Ok(0.0);
    }
    let spread = population_spread(xs)?;
    let (n, m) = (n as f64, m as f64);
    Ok((1.0 / m) * ((n - m) / (n - 1.0)) * spread)
}

/// `(1/N) sum_i |x_i - x_bar|^2`.
pub fn population_spread(xs: &[ModelVector]) -> Result<f64> {
    let mean = ordered_mean(xs).ok_or_else(|| SimError::config("empty population"))?;
    let mut acc = 0.0;
    for x in xs {
        acc += x.dist_sq(&mean)?;
    }
    Ok(acc / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn scalars(v: &[f64]) -> Vec<ModelVector> {
        v.iter()
            .map(|x| ModelVector::new(vec![*x]).unwrap())
            .collect()
    }

    #[test]
    fn full_participation() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let plan = sample_round(0, 6, 6, &mut r).unwrap();
        assert_eq!(plan.participants, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn plan_invariants_hold() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p = sample_round(3, 20, 7, &mut r).unwrap();
            assert_eq!(p.len(), 7);
            assert!(p.participants.windows(2).all(|w| w[0] < w[1]));
            assert!(p.participants.iter().all(|&i| i < 20));
        }
        assert!(sample_round(0, 3, 4, &mut r).is_err());
        assert!(sample_round(0, 3, 0, &mut r).is_err());
    }

    #[test]
    fn marginal_inclusion_frequency() {
        let draws = 100_000;
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut hits = [0usize; 5];
        for _ in 0..draws {
            for i in sample_round(0, 5, 2, &mut r).unwrap().participants {
                hits[i] += 1;
            }
        }
        let p: f64 = 2.0 / 5.0;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        for h in hits {
            let freq = h as f64 / draws as f64;
            assert!((freq - p).abs() <= 3.0 * sd, "freq {freq}");
        }
    }

    #[test]
    fn subset_frequencies_match_enumeration() {
        let draws = 100_000;
        let subsets = enumerate_subsets(4, 2).unwrap();
        assert_eq!(subsets.len(), 6);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..draws {
            *counts
                .entry(sample_round(0, 4, 2, &mut r).unwrap().participants)
                .or_default() += 1;
        }
        let p = 1.0 / subsets.len() as f64;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        for s in subsets {
            let freq = counts.get(&s.participants).copied().unwrap_or(0) as f64 / draws as f64;
            assert!((freq - p).abs() <= 3.0 * sd, "{:?}: {freq}", s.participants);
        }
    }

    #[test]
    fn enumeration_examples() {
        let s: Vec<Vec<usize>> = enumerate_subsets(3, 2)
            .unwrap()
            .into_iter()
            .map(|p| p.participants)
            .collect();
        assert_eq!(s, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(enumerate_subsets(4, 4).unwrap().len(), 1);
        assert_eq!(enumerate_subsets(6, 3).unwrap().len(), 20);
        assert!(matches!(
            enumerate_subsets(40, 20),
            Err(SimError::OracleScale { .. })
        ));
    }

    #[test]
    fn enumeration_is_lexicographic_and_unique() {
        let s = enumerate_subsets(7, 3).unwrap();
        assert_eq!(s.len() as u128, binomial(7, 3).unwrap());
        assert!(s.windows(2).all(|w| w[0].participants < w[1].participants));
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), Some(6));
        assert_eq!(binomial(50, 5), Some(2_118_760));
        assert_eq!(binomial(3, 5), Some(0));
        assert_eq!(binomial(10, 0), Some(1));
    }

    #[test]
    fn variance_examples() {
        assert_eq!(
            without_replacement_variance(&scalars(&[0.0, 1.0, 2.0]), 3).unwrap(),
            0.0
        );
        let v = without_replacement_variance(&scalars(&[0.0, 1.0, 2.0]), 2).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(
            without_replacement_variance(&scalars(&[4.0; 5]), 2).unwrap(),
            0.0
        );
        assert_eq!(
            without_replacement_variance(&scalars(&[4.0]), 1).unwrap(),
            0.0
        );
        assert!(matches!(
            without_replacement_variance(&[], 1),
            Err(SimError::Config(_))
        ));
        assert!(without_replacement_variance(&scalars(&[1.0, 2.0]), 3).is_err());
    }
}
