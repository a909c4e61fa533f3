//! Similarity-statistics anomaly scores over embeddings.
//!
//! For each query embedding the cosine similarities to a reference set are
//! summarised by their mean `mu` and standard deviation `sigma` (divisor =
//! number of similarities, i.e. `N - 1` when a row is scored against the set
//! it belongs to). The anomaly score is `-mu`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::contrastive::normalize_rows;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStats<T> {
    pub mean_sim: T,
    pub std_sim: T,
    /// `-mean_sim`; higher is more anomalous.
    pub score: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Fraud when `mu - sigma > t`.
    PaperLiteral,
    /// Fraud when `mu < t`.
    #[default]
    LowMean,
}

impl DecisionRule {
    pub const ALL: [DecisionRule; 2] = [DecisionRule::PaperLiteral, DecisionRule::LowMean];

    pub fn name(self) -> &'static str {
        match self {
            DecisionRule::PaperLiteral => "paper_literal",
            DecisionRule::LowMean => "low_mean",
        }
    }

    /// The statistic the rule thresholds.
    fn statistic<T: Scalar>(self, stats: &ScoreStats<T>) -> T {
        match self {
            DecisionRule::PaperLiteral => stats.mean_sim - stats.std_sim,
            DecisionRule::LowMean => stats.mean_sim,
        }
    }

    fn flags<T: Scalar>(self, stats: &ScoreStats<T>, threshold: T) -> bool {
        let v = self.statistic(stats);
        match self {
            DecisionRule::PaperLiteral => v > threshold,
            DecisionRule::LowMean => v < threshold,
        }
    }
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown decision rule {s:?}; valid rules: paper_literal, low_mean"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision<T> {
    pub is_fraud: bool,
    pub score: T,
    pub threshold_used: T,
    pub rule: DecisionRule,
}

/// Similarity statistics of every query row against `reference`.
///
/// When `query_is_reference` is set the query must be the reference set
/// itself and row `i` is not compared with itself.
pub fn score_all<T: Scalar>(
    query: &Matrix<T>,
    reference: &Matrix<T>,
    query_is_reference: bool,
) -> Result<Vec<ScoreStats<T>>> {
    if query.cols() != reference.cols() {
        return Err(Error::DimensionMismatch {
            expected: reference.cols(),
            found: query.cols(),
        });
    }
    if reference.rows() < 2 {
        return Err(Error::Data(format!(
            "reference set needs at least 2 rows, got {}",
            reference.rows()
        )));
    }
    if query_is_reference && query.rows() != reference.rows() {
        return Err(Error::DimensionMismatch {
            expected: reference.rows(),
            found: query.rows(),
        });
    }
    let (q, _) = normalize_rows(query)?;
    let (r, _) = normalize_rows(reference)?;
    let count = reference.rows() - usize::from(query_is_reference);
    let count_t = T::from_count(count);
    let (lo, hi) = (-T::one(), T::one());

    let mut out = Vec::with_capacity(query.rows());
    let mut sims = Vec::with_capacity(count);
    for i in 0..q.rows() {
        sims.clear();
        let qi = q.row(i);
        for (j, rj) in r.iter_rows().enumerate() {
            if query_is_reference && i == j {
                continue;
            }
            sims.push(dot(qi, rj).max(lo).min(hi));
        }
        let mean = sims.iter().copied().sum::<T>() / count_t;
        let var = sims.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>() / count_t;
        out.push(ScoreStats {
            mean_sim: mean,
            std_sim: var.sqrt(),
            score: -mean,
        });
    }
    Ok(out)
}

/// Seeded subsample of at most `max_rows` reference rows (original order).
pub fn subsample_reference<T: Scalar>(reference: &Matrix<T>, max_rows: usize, seed: u64) -> Matrix<T> {
    if reference.rows() <= max_rows {
        return reference.clone();
    }
    let mut picked = sample(&mut rng_from_seed(seed), reference.rows(), max_rows).into_vec();
    picked.sort_unstable();
    reference.select_rows(&picked)
}

pub fn decide<T: Scalar>(stats: &ScoreStats<T>, threshold: T, rule: DecisionRule) -> Decision<T> {
    Decision {
        is_fraud: rule.flags(stats, threshold),
        score: stats.score,
        threshold_used: threshold,
        rule,
    }
}

/// `ceil(contamination * n)`, tolerant of representation error in the
/// product (`0.1 * 1000` must give 100, not 101).
pub fn flagged_count(contamination: f64, n: usize) -> Result<usize> {
    if !(contamination > 0.0 && contamination < 1.0) {
        return Err(Error::Config(format!(
            "contamination must lie strictly between 0 and 1, got {contamination}"
        )));
    }
    let k = (contamination * n as f64 * (1.0 - 1e-12)).ceil() as usize;
    Ok(k.clamp(1, n.max(1)))
}

/// A threshold between the `k`-th most extreme value of `values` (in the
/// direction given by `flag_low`) and the next one, so that exactly the `k`
/// most extreme values plus any ties with the `k`-th are flagged.
pub fn quantile_threshold<T: Scalar>(values: &[T], k: usize, flag_low: bool) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Data("cannot choose a threshold for zero samples".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut sorted = values.to_vec();
    // Orient so that the flagged values come first and are "small".
    if !flag_low {
        sorted.iter_mut().for_each(|v| *v = -*v);
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let kth = sorted[k.min(sorted.len()) - 1];
    let t = match sorted.iter().find(|&&v| v > kth) {
        Some(&next) => {
            let mid = kth + (next - kth) / T::lit(2.0);
            if mid > kth {
                mid
            } else {
                next
            }
        }
        None => kth + T::one(),
    };
    Ok(if flag_low { t } else { -t })
}

/// Threshold that flags `ceil(contamination * N)` samples under `rule`,
/// ties with the last flagged sample included.
pub fn choose_threshold<T: Scalar>(
    stats: &[ScoreStats<T>],
    contamination: f64,
    rule: DecisionRule,
) -> Result<T> {
    let k = flagged_count(contamination, stats.len())?;
    let values: Vec<T> = stats.iter().map(|s| rule.statistic(s)).collect();
    quantile_threshold(&values, k, rule == DecisionRule::LowMean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn stats(mu: f64, sigma: f64) -> ScoreStats<f64> {
        ScoreStats {
            mean_sim: mu,
            std_sim: sigma,
            score: -mu,
        }
    }

    fn random(n: usize, e: usize, seed: u64) -> Matrix<f64> {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(n, e, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn identical_cluster_has_unit_mean_and_zero_spread() {
        let r: Matrix<f64> = Matrix::from_rows(&[[1.0, 2.0, 0.5]; 3]).unwrap();
        let s = score_all(&r.select_rows(&[0]), &r, false).unwrap();
        assert!((s[0].mean_sim - 1.0).abs() < 1e-15);
        assert!(s[0].std_sim < 1e-7);
    }

    #[test]
    fn orthogonal_query_has_zero_mean() {
        let r = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [3.0, -1.0, 0.0]]).unwrap();
        let q = Matrix::from_rows(&[[0.0, 0.0, 4.0]]).unwrap();
        let s = score_all(&q, &r, false).unwrap();
        assert_eq!(s[0].mean_sim, 0.0);
        assert_eq!(s[0].score, -0.0);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let r = random(5, 3, 1);
        for self_ref in [true, false] {
            let q = if self_ref { r.clone() } else { random(4, 3, 2) };
            let ours = score_all(&q, &r, self_ref).unwrap();
            let oracle = fraud_oracles::similarity_stats(&q.to_rows(), &r.to_rows(), self_ref);
            for (s, (mu, sd)) in ours.iter().zip(oracle) {
                assert!((s.mean_sim - mu).abs() <= 1e-12);
                assert!((s.std_sim - sd).abs() <= 1e-12);
                assert_eq!(s.score, -s.mean_sim);
            }
        }
    }

    #[test]
    fn self_exclusion() {
        let r = random(6, 4, 3);
        for s in score_all(&r, &r, true).unwrap() {
            assert!(s.mean_sim < 1.0);
        }
    }

    #[test]
    fn positive_rescaling_leaves_stats_unchanged() {
        let r = random(8, 3, 4);
        let scaled = r.map(|x| x * 7.5);
        let a = score_all(&r, &r, true).unwrap();
        let b = score_all(&scaled, &scaled, true).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.mean_sim - y.mean_sim).abs() < 1e-12);
            assert!((x.std_sim - y.std_sim).abs() < 1e-12);
        }
    }

    #[test]
    fn scoring_errors() {
        let r = random(1, 3, 5);
        assert!(score_all(&r, &r, false).is_err());
        let z = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(score_all(&z, &z, true), Err(Error::ZeroNorm { .. })));
        assert!(score_all(&random(2, 2, 1), &random(3, 3, 1), false).is_err());
    }

    #[test]
    fn decide_examples() {
        let s = stats(0.9, 0.05);
        assert!(decide(&s, 0.5, DecisionRule::PaperLiteral).is_fraud);
        let d = decide(&s, 0.5, DecisionRule::LowMean);
        assert!(!d.is_fraud);
        assert_eq!(d.rule, DecisionRule::LowMean);
        assert_eq!(d.threshold_used, 0.5);
        let err = "vae".parse::<DecisionRule>().unwrap_err().to_string();
        assert!(err.contains("paper_literal") && err.contains("low_mean"));
        assert_eq!("low_mean".parse::<DecisionRule>().unwrap(), DecisionRule::LowMean);
    }

    #[test]
    fn low_mean_flag_count_is_monotone_in_threshold() {
        let mut rng = rng_from_seed(9);
        let all: Vec<_> = (0..200).map(|_| stats(rng.random_range(-1.0..1.0), 0.1)).collect();
        let mut sorted: Vec<f64> = all.iter().map(|s| s.mean_sim).collect();
        sorted.sort_by(f64::total_cmp);
        let mut last = 0;
        for t in sorted {
            let count = all.iter().filter(|s| decide(s, t, DecisionRule::LowMean).is_fraud).count();
            assert!(count >= last);
            last = count;
        }
    }

    #[test]
    fn threshold_examples() {
        let s = [stats(0.9, 0.0), stats(0.8, 0.0), stats(0.1, 0.0)];
        let t = choose_threshold(&s, 1.0 / 3.0, DecisionRule::LowMean).unwrap();
        assert!(t > 0.1 && t < 0.8);
        let t = choose_threshold(&s, 0.999, DecisionRule::LowMean).unwrap();
        assert!(s.iter().all(|x| decide(x, t, DecisionRule::LowMean).is_fraud));
        assert!(choose_threshold(&s, 0.0, DecisionRule::LowMean).is_err());
        assert!(choose_threshold(&s, 1.0, DecisionRule::LowMean).is_err());

        let t = choose_threshold(&s, 1.0 / 3.0, DecisionRule::PaperLiteral).unwrap();
        let flagged: Vec<bool> = s.iter().map(|x| decide(x, t, DecisionRule::PaperLiteral).is_fraud).collect();
        assert_eq!(flagged, [true, false, false]);
    }

    #[test]
    fn threshold_on_uniform_scores_flags_requested_fraction() {
        let mut rng = rng_from_seed(11);
        let s: Vec<_> = (0..1000).map(|_| stats(rng.random_range(-1.0..1.0), 0.0)).collect();
        let t = choose_threshold(&s, 0.1, DecisionRule::LowMean).unwrap();
        let count = s.iter().filter(|x| decide(x, t, DecisionRule::LowMean).is_fraud).count();
        assert_eq!(count, 100);
    }

    #[test]
    fn ties_are_flagged_together() {
        let s = [stats(0.2, 0.0), stats(0.2, 0.0), stats(0.2, 0.0), stats(0.9, 0.0)];
        let t = choose_threshold(&s, 0.25, DecisionRule::LowMean).unwrap();
        let count = s.iter().filter(|x| decide(x, t, DecisionRule::LowMean).is_fraud).count();
        assert_eq!(count, 3);
    }

    #[test]
    fn subsample_caps_and_is_seeded() {
        let r = random(50, 2, 1);
        let a = subsample_reference(&r, 10, 4);
        assert_eq!(a.rows(), 10);
        assert_eq!(a, subsample_reference(&r, 10, 4));
        assert_eq!(subsample_reference(&r, 100, 4), r);
    }
}
