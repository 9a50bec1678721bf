//! Forecast accuracy metrics and cross-model aggregation.
//!
//! SMAPE comes in the standard form and a modified form whose denominator
//! is floored, so series that hit zero cannot blow the metric up. MASE
//! scales the forecast error by the in-sample seasonal-naive error, making
//! 1.0 the break-even point against the naive benchmark.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Default denominator floor offset of the modified SMAPE.
pub const SMAPE_EPSILON: f64 = 0.1;

/// Standard symmetric mean absolute percentage error, as a percentage.
/// Undefined when forecast and actual are both zero at any step.
pub fn smape(forecast: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(forecast, actual)?;
    let mut total = 0.0;
    for (k, (f, y)) in forecast.iter().zip(actual).enumerate() {
        let denom = (y.abs() + f.abs()) / 2.0;
        if denom == 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "smape denominator is zero at step {}; use the modified variant",
                k + 1
            )));
        }
        total += (f - y).abs() / denom;
    }
    Ok(100.0 * total / forecast.len() as f64)
}

/// Modified-denominator SMAPE: the denominator is floored at `0.5 + epsilon`
/// so the metric stays defined near zero and agrees with standard SMAPE for
/// large magnitudes.
pub fn smape_modified(forecast: &[f64], actual: &[f64], epsilon: f64) -> Result<f64> {
    check_lengths(forecast, actual)?;
    let mut total = 0.0;
    for (f, y) in forecast.iter().zip(actual) {
        let denom = (y.abs() + f.abs() + epsilon).max(0.5 + epsilon) / 2.0;
        total += (f - y).abs() / denom;
    }
    Ok(100.0 * total / forecast.len() as f64)
}

/// Mean absolute scaled error: forecast MAE over the mean in-sample
/// M-step naive error. Undefined when the in-sample naive error is zero.
pub fn mase(forecast: &[f64], actual: &[f64], insample: &[f64], period: usize) -> Result<f64> {
    check_lengths(forecast, actual)?;
    if period == 0 {
        return Err(Error::Contract("mase period must be at least 1".into()));
    }
    if insample.len() <= period {
        return Err(Error::Contract(format!(
            "mase needs more than {period} in-sample values, found {}",
            insample.len()
        )));
    }
    let naive_total: f64 = insample
        .iter()
        .skip(period)
        .zip(insample.iter())
        .map(|(cur, prev)| (cur - prev).abs())
        .sum();
    let denom = naive_total / (insample.len() - period) as f64;
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "in-sample naive error is zero (constant periodic series)".into(),
        ));
    }
    let mae: f64 = forecast
        .iter()
        .zip(actual)
        .map(|(f, y)| (f - y).abs())
        .sum::<f64>()
        / forecast.len() as f64;
    Ok(mae / denom)
}

fn check_lengths(forecast: &[f64], actual: &[f64]) -> Result<()> {
    if forecast.is_empty() {
        return Err(Error::Contract("metric requires at least one step".into()));
    }
    if forecast.len() != actual.len() {
        return Err(Error::Contract(format!(
            "forecast has {} steps but actuals have {}",
            forecast.len(),
            actual.len()
        )));
    }
    Ok(())
}

/// Per-series scores; a metric that came out undefined is None.
#[derive(Debug, Clone, Default)]
pub struct SeriesScore {
    pub smape: Option<f64>,
    pub mase: Option<f64>,
}

/// Mean/median aggregates over the defined per-series values.
#[derive(Debug, Clone)]
pub struct Aggregates {
    pub mean_smape: f64,
    pub median_smape: f64,
    pub mean_mase: Option<f64>,
    pub median_mase: Option<f64>,
    /// Series whose SMAPE or MASE was undefined and skipped.
    pub skipped: usize,
}

/// Everything reported for one model over one collection.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub model_label: String,
    /// Per-series scores in input order.
    pub per_series: Vec<(String, SeriesScore)>,
    pub aggregates: Aggregates,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Aggregates per-series scores, skipping undefined entries and recording
/// how many were skipped. Errors when every series is undefined.
pub fn aggregate(
    model_label: &str,
    per_series: Vec<(String, SeriesScore)>,
) -> Result<EvaluationReport> {
    let smapes: Vec<f64> = per_series.iter().filter_map(|(_, s)| s.smape).collect();
    let mases: Vec<f64> = per_series.iter().filter_map(|(_, s)| s.mase).collect();
    if smapes.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "every series was undefined for model '{model_label}'"
        )));
    }
    let skipped = per_series
        .iter()
        .filter(|(_, s)| s.smape.is_none() || s.mase.is_none())
        .count();
    let aggregates = Aggregates {
        mean_smape: mean(&smapes),
        median_smape: median(&smapes),
        mean_mase: (!mases.is_empty()).then(|| mean(&mases)),
        median_mase: (!mases.is_empty()).then(|| median(&mases)),
        skipped,
    };
    Ok(EvaluationReport {
        model_label: model_label.to_string(),
        per_series,
        aggregates,
    })
}

/// Average rank per model over a shared series set. Within each series,
/// models are ranked ascending by metric; ties get the mean of their ranks.
pub fn rank_models(tables: &[(String, BTreeMap<String, f64>)]) -> Result<Vec<(String, f64)>> {
    if tables.len() < 2 {
        return Err(Error::Contract("ranking needs at least two models".into()));
    }
    let reference: Vec<&String> = tables[0].1.keys().collect();
    for (label, table) in tables.iter().skip(1) {
        let keys: Vec<&String> = table.keys().collect();
        if keys != reference {
            return Err(Error::Contract(format!(
                "model '{label}' scores a different series set than '{}'",
                tables[0].0
            )));
        }
    }

    let mut totals = vec![0.0; tables.len()];
    for series in &reference {
        let mut entries: Vec<(usize, f64)> = tables
            .iter()
            .enumerate()
            .map(|(i, (_, table))| (i, table[*series]))
            .collect();
        entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let mut pos = 0;
        while pos < entries.len() {
            let mut end = pos + 1;
            while end < entries.len() && entries[end].1 == entries[pos].1 {
                end += 1;
            }
            // 1-based ranks pos+1 ..= end, shared equally among ties.
            let rank = (pos + 1 + end) as f64 / 2.0;
            for e in &entries[pos..end] {
                totals[e.0] += rank;
            }
            pos = end;
        }
    }
    Ok(tables
        .iter()
        .zip(&totals)
        .map(|((label, _), total)| (label.clone(), total / reference.len() as f64))
        .collect())
}
