//! Sequential model-based minimization over box-constrained spaces.
//!
//! The first block of iterations samples uniformly; afterwards each
//! candidate is proposed by a density-ratio ranker: trials are split into
//! good and bad quantiles, candidates are drawn near good points, and the
//! one with the highest good-to-bad density ratio is evaluated next.
//! Evaluation failures are recorded as infinite scores rather than aborting
//! the search.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One tunable dimension.
#[derive(Debug, Clone)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Values are rounded to integers before evaluation.
    pub integer: bool,
    /// Sampled log-uniformly; bounds must be positive.
    pub log_scale: bool,
}

impl ParamRange {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        ParamRange {
            name: name.into(),
            lo,
            hi,
            integer: false,
            log_scale: false,
        }
    }

    pub fn integer(name: &str, lo: usize, hi: usize) -> Self {
        ParamRange {
            name: name.into(),
            lo: lo as f64,
            hi: hi as f64,
            integer: true,
            log_scale: false,
        }
    }

    pub fn log(name: &str, lo: f64, hi: f64) -> Self {
        ParamRange {
            name: name.into(),
            lo,
            hi,
            integer: false,
            log_scale: true,
        }
    }

    fn to_internal(&self, v: f64) -> f64 {
        if self.log_scale {
            v.ln()
        } else {
            v
        }
    }

    fn clamp_from_internal(&self, v: f64) -> f64 {
        let raw = if self.log_scale { v.exp() } else { v };
        let clamped = raw.clamp(self.lo, self.hi);
        if self.integer {
            clamped.round()
        } else {
            clamped
        }
    }

    fn sample_uniform(&self, rng: &mut Rng) -> f64 {
        let raw = if self.log_scale {
            rng.log_uniform(self.lo, self.hi)
        } else {
            rng.range_f64(self.lo, self.hi)
        };
        if self.integer {
            // Uniform over the integers of the closed range.
            rng.range_usize(self.lo as usize, self.hi as usize) as f64
        } else {
            raw
        }
    }

    fn bandwidth(&self) -> f64 {
        let span = self.to_internal(self.hi) - self.to_internal(self.lo);
        (span / 5.0).max(1e-12)
    }
}

/// Search outcome: all trials in evaluation order plus the best point.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub trials: Vec<(Vec<f64>, f64)>,
}

fn log_kernel_density(point: f64, centers: &[f64], bandwidth: f64) -> f64 {
    let mut acc = 0.0;
    for c in centers {
        let z = (point - c) / bandwidth;
        acc += (-0.5 * z * z).exp();
    }
    (acc / centers.len() as f64 / bandwidth).max(1e-300).ln()
}

/// Minimizes `objective` over the space with the given evaluation budget.
pub fn minimize<F>(
    space: &[ParamRange],
    iterations: usize,
    seed: u64,
    mut objective: F,
) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if iterations == 0 {
        return Err(Error::Tuning("at least one iteration is required".into()));
    }
    if space.is_empty() {
        return Err(Error::Tuning("the search space is empty".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let n_init = (iterations / 5).max(10).min(iterations);
    let candidates_per_round = 24;

    let mut trials: Vec<(Vec<f64>, f64)> = Vec::with_capacity(iterations);
    for iter in 0..iterations {
        let point: Vec<f64> = if iter < n_init || trials.iter().all(|(_, v)| !v.is_finite()) {
            space.iter().map(|r| r.sample_uniform(&mut rng)).collect()
        } else {
            propose(space, &trials, candidates_per_round, &mut rng)
        };
        let value = match objective(&point) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => f64::INFINITY,
            Err(Error::Numeric(_)) | Err(Error::Training { .. }) => f64::INFINITY,
            Err(other) => return Err(other),
        };
        trials.push((point, value));
    }

    let best_idx = trials
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| v.is_finite())
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::Tuning(format!(
                "all {} trials failed numerically; trial log: {:?}",
                trials.len(),
                trials.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>()
            ))
        })?;

    Ok(SearchResult {
        best: trials[best_idx].0.clone(),
        best_value: trials[best_idx].1,
        trials,
    })
}

fn propose(
    space: &[ParamRange],
    trials: &[(Vec<f64>, f64)],
    candidates: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    let mut finite: Vec<(&Vec<f64>, f64)> = trials
        .iter()
        .filter(|(_, v)| v.is_finite())
        .map(|(p, v)| (p, *v))
        .collect();
    finite.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let n_good = ((finite.len() as f64 * 0.25).ceil() as usize).max(1);
    let good: Vec<&Vec<f64>> = finite[..n_good].iter().map(|(p, _)| *p).collect();
    let bad: Vec<&Vec<f64>> = finite[n_good..].iter().map(|(p, _)| *p).collect();

    let mut best_point: Option<Vec<f64>> = None;
    let mut best_score = f64::NEG_INFINITY;
    for _ in 0..candidates {
        // Draw each dimension from a kernel around a random good point.
        let mut point = Vec::with_capacity(space.len());
        for (d, range) in space.iter().enumerate() {
            let center = good[rng.range_usize(0, good.len() - 1)][d];
            let drawn = range.to_internal(center) + rng.normal(0.0, range.bandwidth());
            point.push(range.clamp_from_internal(drawn));
        }
        let mut score = 0.0;
        for (d, range) in space.iter().enumerate() {
            let x = range.to_internal(point[d]);
            let good_centers: Vec<f64> = good.iter().map(|p| range.to_internal(p[d])).collect();
            score += log_kernel_density(x, &good_centers, range.bandwidth());
            if !bad.is_empty() {
                let bad_centers: Vec<f64> = bad.iter().map(|p| range.to_internal(p[d])).collect();
                score -= log_kernel_density(x, &bad_centers, range.bandwidth());
            }
        }
        if score > best_score {
            best_score = score;
            best_point = Some(point);
        }
    }
    best_point.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_iteration_returns_the_only_sample() {
        let space = [ParamRange::new("x", 0.0, 1.0)];
        let result = minimize(&space, 1, 3, |p| Ok(p[0])).unwrap();
        assert_eq!(result.trials.len(), 1);
        assert_eq!(result.best, result.trials[0].0);
    }

    #[test]
    fn constant_objective_reports_that_constant() {
        let space = [ParamRange::new("x", -2.0, 2.0)];
        let result = minimize(&space, 20, 5, |_| Ok(7.5)).unwrap();
        assert_eq!(result.best_value, 7.5);
    }

    #[test]
    fn finds_midpoint_minimum_within_ten_percent() {
        // Quadratic with its minimum at the midpoint of the range.
        let space = [ParamRange::new("x", 0.0, 10.0)];
        let result = minimize(&space, 50, 11, |p| Ok((p[0] - 5.0) * (p[0] - 5.0))).unwrap();
        assert!(
            (result.best[0] - 5.0).abs() < 1.0,
            "best {} not within 10% of range width",
            result.best[0]
        );
    }

    #[test]
    fn respects_bounds_and_integrality() {
        let space = [
            ParamRange::integer("n", 3, 9),
            ParamRange::log("lr", 0.001, 0.1),
        ];
        let result = minimize(&space, 40, 13, |p| {
            assert!((3.0..=9.0).contains(&p[0]));
            assert_eq!(p[0], p[0].round());
            assert!((0.001..=0.1).contains(&p[1]));
            Ok(p[1] + (p[0] - 6.0).abs())
        })
        .unwrap();
        assert!((3.0..=9.0).contains(&result.best[0]));
    }

    #[test]
    fn failures_are_tolerated_but_not_total_failure() {
        let space = [ParamRange::new("x", 0.0, 1.0)];
        let mut calls = 0;
        let result = minimize(&space, 20, 17, |p| {
            calls += 1;
            if calls % 2 == 0 {
                Err(Error::Numeric("diverged".into()))
            } else {
                Ok(p[0])
            }
        })
        .unwrap();
        assert_eq!(result.trials.len(), 20);
        assert!(result.best_value.is_finite());

        let err = minimize(&space, 5, 19, |_| -> Result<f64> {
            Err(Error::Numeric("always".into()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Tuning(_)));
    }

    #[test]
    fn fixed_seed_reproduces_the_whole_trace() {
        let space = [
            ParamRange::new("a", 0.0, 1.0),
            ParamRange::integer("b", 1, 5),
        ];
        let run = |seed| minimize(&space, 25, seed, |p| Ok((p[0] - 0.3).abs() + p[1])).unwrap();
        let r1 = run(23);
        let r2 = run(23);
        assert_eq!(r1.trials.len(), r2.trials.len());
        for (a, b) in r1.trials.iter().zip(&r2.trials) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }
}
