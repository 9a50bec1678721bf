//! Additive seasonal-trend decomposition with a deterministic (periodic)
//! seasonal component.
//!
//! The inner loop follows the classic decomposition procedure: detrend,
//! smooth the cycle subseries, remove a low-pass filtered copy of that
//! smooth, then re-estimate the trend with loess — run for two iterations
//! with no robustness weighting. Because the seasonal window is periodic,
//! cycle-subseries smoothing degenerates to a per-phase mean, and the final
//! seasonal component is averaged per phase so it repeats exactly. The
//! remainder is defined by subtraction, so the three components always add
//! back to the input.
//!
//! Series shorter than two full periods are treated as having no
//! seasonality: the seasonal component is identically zero and the trend is
//! a loess smooth of the series itself.

use crate::error::{Error, Result};

/// Seasonal / trend / remainder triple for one series.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub seasonal: Vec<f64>,
    pub trend: Vec<f64>,
    pub remainder: Vec<f64>,
    pub period: usize,
}

impl Decomposition {
    /// Seasonal value at any index, extending periodically past the end of
    /// the series. Indices may point into the forecast region.
    pub fn seasonal_at(&self, index: usize) -> f64 {
        self.seasonal
            .get(index % self.period)
            .copied()
            .unwrap_or(0.0)
    }
}

fn next_odd(x: usize) -> usize {
    if x.is_multiple_of(2) {
        x + 1
    } else {
        x
    }
}

fn trend_window(period: usize) -> usize {
    next_odd((1.5 * period as f64).ceil() as usize).max(3)
}

/// Degree-1 local regression with tricube weights over the `window` nearest
/// points. Windows wider than the series scale the bandwidth out, matching
/// the usual convention.
pub fn loess_smooth(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return values.to_vec();
    }
    let q = window.max(1);
    let q_eff = q.min(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let half = (q_eff - 1) / 2;
        let lo = if i > half {
            (i - half).min(n - q_eff)
        } else {
            0
        };
        let hi = lo + q_eff; // exclusive
        let mut d_max = ((hi - 1).abs_diff(i)).max(lo.abs_diff(i)) as f64;
        if q > n {
            d_max += (q - n) as f64 / 2.0;
        }
        if d_max == 0.0 {
            out.push(values[i]);
            continue;
        }
        let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (j, &y) in values.iter().enumerate().take(hi).skip(lo) {
            let dx = j as f64 - i as f64;
            let u = dx.abs() / d_max;
            if u >= 1.0 {
                continue;
            }
            let w = {
                let t = 1.0 - u * u * u;
                t * t * t
            };
            sw += w;
            swx += w * dx;
            swy += w * y;
            swxx += w * dx * dx;
            swxy += w * dx * y;
        }
        let denom = sw * swxx - swx * swx;
        let fitted = if denom.abs() < 1e-12 * sw.max(1.0) {
            swy / sw
        } else {
            (swxx * swy - swx * swxy) / denom
        };
        out.push(fitted);
    }
    out
}

/// Centered moving average of the given window; output is shorter by
/// `window - 1`.
fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    if window == 0 || n < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n - window + 1);
    let mut acc: f64 = values[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..n {
        acc += values[i] - values[i - window];
        out.push(acc / window as f64);
    }
    out
}

fn phase_means(values: &[f64], period: usize) -> Vec<f64> {
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (i, v) in values.iter().enumerate() {
        sums[i % period] += v;
        counts[i % period] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Periodic seasonal-trend decomposition.
pub fn stl_periodic(values: &[f64], period: usize) -> Result<Decomposition> {
    if period == 0 {
        return Err(Error::Contract("period must be at least 1".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite input value {bad} in decomposition"
        )));
    }
    let n = values.len();

    // No seasonality: too short for even two cycles, or period 1.
    if period == 1 || n < 2 * period {
        let trend = loess_smooth(values, trend_window(period));
        let remainder = values.iter().zip(&trend).map(|(y, t)| y - t).collect();
        return Ok(Decomposition {
            seasonal: vec![0.0; n],
            trend,
            remainder,
            period,
        });
    }

    let n_l = next_odd(period);
    let n_t = trend_window(period);

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    for _ in 0..2 {
        let detrended: Vec<f64> = values.iter().zip(&trend).map(|(y, t)| y - t).collect();
        // Periodic seasonal window: each cycle subseries collapses to its
        // mean, extended one full period on both ends.
        let means = phase_means(&detrended, period);
        let cycle_field: Vec<f64> = (0..n + 2 * period).map(|j| means[j % period]).collect();
        // Low-pass: MA(p) twice, MA(3), then loess; trims back to length n.
        let low = moving_average(&cycle_field, period);
        let low = moving_average(&low, period);
        let low = moving_average(&low, 3);
        debug_assert_eq!(low.len(), n);
        let low = loess_smooth(&low, n_l);
        for i in 0..n {
            seasonal[i] = cycle_field[period + i] - low[i];
        }
        let deseasonalized: Vec<f64> = values.iter().zip(&seasonal).map(|(y, s)| y - s).collect();
        trend = loess_smooth(&deseasonalized, n_t);
    }

    // Make the seasonal component exactly periodic, then define the
    // remainder by subtraction so the sum identity is exact.
    let cycle = phase_means(&seasonal, period);
    for i in 0..n {
        seasonal[i] = cycle[i % period];
    }
    let remainder: Vec<f64> = values
        .iter()
        .zip(&seasonal)
        .zip(&trend)
        .map(|((y, s), t)| y - s - t)
        .collect();

    Ok(Decomposition {
        seasonal,
        trend,
        remainder,
        period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn reconstruction_error(d: &Decomposition, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(i, y)| (d.seasonal[i] + d.trend[i] + d.remainder[i] - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_series_decomposes_into_trend() {
        let values = vec![5.0; 48];
        let d = stl_periodic(&values, 12).unwrap();
        for i in 0..48 {
            assert!(d.seasonal[i].abs() < 1e-12);
            assert!((d.trend[i] - 5.0).abs() < 1e-12);
            assert!(d.remainder[i].abs() < 1e-12);
        }
    }

    #[test]
    fn short_series_has_zero_seasonal() {
        let values: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let d = stl_periodic(&values, 12).unwrap();
        assert!(d.seasonal.iter().all(|&s| s == 0.0));
        assert!(reconstruction_error(&d, &values) < 1e-12);
    }

    #[test]
    fn pure_sinusoid_leaves_tiny_remainder() {
        let period = 12;
        let amplitude = 3.0;
        let values: Vec<f64> = (0..period * 20)
            .map(|i| amplitude * (std::f64::consts::TAU * i as f64 / period as f64).sin())
            .collect();
        let d = stl_periodic(&values, period).unwrap();
        let max_rem = d.remainder.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(
            max_rem < 1e-6 * amplitude,
            "remainder {max_rem} too large for amplitude {amplitude}"
        );
    }

    #[test]
    fn seasonal_is_exactly_periodic_and_sum_is_exact() {
        let mut rng = Rng::from_seed(3);
        for round in 0..20 {
            let period = [4, 7, 12][round % 3];
            let len = period * 2 + rng.range_usize(0, 40);
            let values: Vec<f64> = (0..len)
                .map(|i| {
                    10.0 + 0.1 * i as f64
                        + 2.0 * (std::f64::consts::TAU * i as f64 / period as f64).sin()
                        + rng.normal(0.0, 0.5)
                })
                .collect();
            let d = stl_periodic(&values, period).unwrap();
            assert!(reconstruction_error(&d, &values) < 1e-8);
            for i in 0..len.saturating_sub(period) {
                assert_eq!(
                    d.seasonal[i],
                    d.seasonal[i + period],
                    "round {round}, i {i}"
                );
            }
        }
    }

    #[test]
    fn seasonal_extension_wraps_periodically() {
        let period = 7;
        let values: Vec<f64> = (0..35)
            .map(|i| (std::f64::consts::TAU * i as f64 / 7.0).sin())
            .collect();
        let d = stl_periodic(&values, period).unwrap();
        for k in 0..14 {
            assert_eq!(d.seasonal_at(35 + k), d.seasonal[(35 + k) % 7]);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let values = vec![1.0, f64::NAN, 2.0];
        assert!(matches!(stl_periodic(&values, 2), Err(Error::Numeric(_))));
    }

    #[test]
    fn loess_reproduces_straight_lines() {
        let values: Vec<f64> = (0..30).map(|i| 2.0 * i as f64 - 7.0).collect();
        for window in [3, 7, 15, 61] {
            let smoothed = loess_smooth(&values, window);
            for (s, v) in smoothed.iter().zip(&values) {
                assert!((s - v).abs() < 1e-9, "window {window}");
            }
        }
    }
}
