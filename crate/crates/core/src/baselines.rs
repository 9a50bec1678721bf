//! Statistical baselines: seasonal naive and ridge autoregression, the
//! latter either pooled across all series as a global linear model or fit
//! per series, with recursive multi-step forecasting.

use crate::data::SeriesCollection;
use crate::error::{Error, Result};
use crate::metrics::{smape_modified, SMAPE_EPSILON};
use crate::rng::Rng;
use crate::smbo::{self, ParamRange};

/// Repeats the last observed seasonal cycle over the horizon.
pub fn seasonal_naive(values: &[f64], period: usize, horizon: usize) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(Error::Contract("period must be at least 1".into()));
    }
    if values.len() < period {
        return Err(Error::Sizing(format!(
            "seasonal naive needs at least one full period ({period}), found {}",
            values.len()
        )));
    }
    let base = values.len() - period;
    Ok((0..horizon).map(|k| values[base + k % period]).collect())
}

/// Linear AR model with a ridge penalty; the intercept is unpenalized.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub lags: usize,
    /// Intercept first, then the coefficient of the most recent lag.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub pooled: bool,
}

/// Result of fitting: one pooled model, or one model per series (None for
/// series too short to fit, which fall back to the seasonal naive).
#[derive(Debug, Clone)]
pub enum RidgeFit {
    Pooled(RidgeModel),
    PerSeries(Vec<Option<RidgeModel>>),
}

/// Lag rows of one value sequence: features [1, y_{t-1}, ..., y_{t-lags}],
/// target y_t.
fn lag_rows(values: &[f64], lags: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rows = Vec::new();
    for t in lags..values.len() {
        let mut features = Vec::with_capacity(lags + 1);
        features.push(1.0);
        for j in 1..=lags {
            features.push(values[t - j]);
        }
        rows.push((features, values[t]));
    }
    rows
}

/// Minimizes mean squared error plus `lambda` times the squared coefficient
/// norm (intercept unpenalized), i.e. solves (X'X/N + lambda*D) beta =
/// X'y/N by Gaussian elimination with partial pivoting. Normalizing the
/// data term by the row count keeps the penalty comparable across
/// collection sizes and makes duplicated rows a no-op.
fn solve_ridge(rows: &[(Vec<f64>, f64)], lags: usize, lambda: f64) -> Result<Vec<f64>> {
    let p = lags + 1;
    let n = rows.len() as f64;
    let mut ata = vec![vec![0.0; p]; p];
    let mut aty = vec![0.0; p];
    for (x, y) in rows {
        for i in 0..p {
            aty[i] += x[i] * y / n;
            for j in 0..p {
                ata[i][j] += x[i] * x[j] / n;
            }
        }
    }
    for (i, row) in ata.iter_mut().enumerate().skip(1) {
        row[i] += lambda;
    }

    // Forward elimination with partial pivoting.
    let mut a = ata;
    let mut b = aty;
    for col in 0..p {
        let pivot_row = (col..p)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < 1e-10 {
            return Err(Error::Numeric(
                "singular lag system; collinear lags need a ridge penalty above zero".into(),
            ));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..p {
            let factor = a[row][col] / a[col][col];
            let (pivot_rows, rest) = a.split_at_mut(row);
            let pivot = &pivot_rows[col];
            for (k, slot) in rest[0].iter_mut().enumerate().skip(col) {
                *slot -= factor * pivot[k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut beta = vec![0.0; p];
    for row in (0..p).rev() {
        let mut acc = b[row];
        for k in row + 1..p {
            acc -= a[row][k] * beta[k];
        }
        beta[row] = acc / a[row][row];
    }
    if beta.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite ridge coefficients".into()));
    }
    Ok(beta)
}

fn series_mean(values: &[f64]) -> Result<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(mean > 0.0) {
        return Err(Error::Domain(format!(
            "pooled ridge needs mean-scalable series; found mean {mean}"
        )));
    }
    Ok(mean)
}

/// Fits the ridge AR model. A pooled fit mean-scales every series and
/// stacks all lag rows into one system; an unpooled fit solves one system
/// per series and skips those with fewer than lags + 2 values.
pub fn fit_ridge(
    collection: &SeriesCollection,
    lags: usize,
    lambda: f64,
    pooled: bool,
) -> Result<RidgeFit> {
    if lags < 1 {
        return Err(Error::Contract("ridge needs at least one lag".into()));
    }
    if pooled {
        let mut rows = Vec::new();
        for series in &collection.series {
            let mean = series_mean(&series.values)?;
            let scaled: Vec<f64> = series.values.iter().map(|v| v / mean).collect();
            rows.extend(lag_rows(&scaled, lags));
        }
        if rows.is_empty() {
            return Err(Error::Sizing(format!(
                "no series long enough for {lags} lags"
            )));
        }
        let coefficients = solve_ridge(&rows, lags, lambda)?;
        Ok(RidgeFit::Pooled(RidgeModel {
            lags,
            coefficients,
            lambda,
            pooled: true,
        }))
    } else {
        let mut models = Vec::with_capacity(collection.series.len());
        for series in &collection.series {
            if series.values.len() < lags + 2 {
                models.push(None);
                continue;
            }
            let rows = lag_rows(&series.values, lags);
            let coefficients = solve_ridge(&rows, lags, lambda)?;
            models.push(Some(RidgeModel {
                lags,
                coefficients,
                lambda,
                pooled: false,
            }));
        }
        Ok(RidgeFit::PerSeries(models))
    }
}

/// One-step-at-a-time forecast, shifting each prediction into the lag
/// vector. Pooled models scale by the series mean and reverse it at the end.
pub fn ridge_recursive_forecast(
    model: &RidgeModel,
    values: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    if values.len() < model.lags {
        return Err(Error::Sizing(format!(
            "series of length {} is shorter than {} lags",
            values.len(),
            model.lags
        )));
    }
    let mean = if model.pooled {
        series_mean(values)?
    } else {
        1.0
    };
    // Most recent value first.
    let mut window: Vec<f64> = values[values.len() - model.lags..]
        .iter()
        .rev()
        .map(|v| v / mean)
        .collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut pred = model.coefficients[0];
        for (j, lag) in window.iter().enumerate() {
            pred += model.coefficients[j + 1] * lag;
        }
        out.push(pred * mean);
        window.rotate_right(1);
        window[0] = pred;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaTuneMethod {
    /// 10-fold cross-validation over lag rows with squared error.
    GridCv,
    /// Surrogate-guided search on a 70/30 chronological split scored by
    /// modified SMAPE.
    Smbo,
}

fn lambda_range(pooled: bool) -> (f64, f64) {
    if pooled {
        (0.0, 1.0)
    } else {
        (0.0, 200.0)
    }
}

const LAMBDA_TUNE_ITERATIONS: usize = 50;

/// Finds a shared penalty weight for the collection within the pooled or
/// unpooled range.
pub fn tune_ridge_lambda(
    collection: &SeriesCollection,
    lags: usize,
    pooled: bool,
    method: LambdaTuneMethod,
    seed: u64,
) -> Result<f64> {
    let (lo, hi) = lambda_range(pooled);
    match method {
        LambdaTuneMethod::GridCv => {
            let rows = collect_rows(collection, lags, pooled)?;
            let folds = assign_folds(rows.len(), 10, seed);
            let mut best = (f64::INFINITY, lo);
            for step in 0..LAMBDA_TUNE_ITERATIONS {
                let lambda = lo + (hi - lo) * step as f64 / (LAMBDA_TUNE_ITERATIONS - 1) as f64;
                match cv_mse(&rows, &folds, lags, lambda) {
                    Ok(mse) if mse < best.0 => best = (mse, lambda),
                    _ => {}
                }
            }
            if best.0.is_infinite() {
                return Err(Error::Numeric("every cross-validation fold failed".into()));
            }
            Ok(best.1)
        }
        LambdaTuneMethod::Smbo => {
            let space = [ParamRange::new("lambda", lo, hi)];
            let result = smbo::minimize(&space, LAMBDA_TUNE_ITERATIONS, seed, |point| {
                holdout_smape(collection, lags, pooled, point[0])
            })?;
            Ok(result.best[0])
        }
    }
}

fn collect_rows(
    collection: &SeriesCollection,
    lags: usize,
    pooled: bool,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut rows = Vec::new();
    for series in &collection.series {
        if pooled {
            let mean = series_mean(&series.values)?;
            let scaled: Vec<f64> = series.values.iter().map(|v| v / mean).collect();
            rows.extend(lag_rows(&scaled, lags));
        } else {
            rows.extend(lag_rows(&series.values, lags));
        }
    }
    if rows.len() < 10 {
        return Err(Error::Sizing(format!(
            "{} lag rows are too few for 10-fold cross-validation",
            rows.len()
        )));
    }
    Ok(rows)
}

fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::child(seed, "ridge-folds", 0).shuffle(&mut order);
    let mut folds = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k;
    }
    folds
}

fn cv_mse(rows: &[(Vec<f64>, f64)], folds: &[usize], lags: usize, lambda: f64) -> Result<f64> {
    let k = folds.iter().max().copied().unwrap_or(0) + 1;
    let mut total = 0.0;
    let mut count = 0usize;
    for fold in 0..k {
        let train: Vec<(Vec<f64>, f64)> = rows
            .iter()
            .zip(folds)
            .filter(|(_, f)| **f != fold)
            .map(|(r, _)| r.clone())
            .collect();
        let beta = solve_ridge(&train, lags, lambda)?;
        for ((x, y), _) in rows.iter().zip(folds).filter(|(_, f)| **f == fold) {
            let pred: f64 = x.iter().zip(&beta).map(|(xi, bi)| xi * bi).sum();
            total += (pred - y) * (pred - y);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean modified SMAPE of recursive forecasts over the last 30% of every
/// series, with models fit on the first 70%.
fn holdout_smape(
    collection: &SeriesCollection,
    lags: usize,
    pooled: bool,
    lambda: f64,
) -> Result<f64> {
    let mut truncated = Vec::new();
    let mut tails = Vec::new();
    for series in &collection.series {
        let cut = ((series.values.len() as f64) * 0.7).ceil() as usize;
        if cut < lags + 2 || cut >= series.values.len() {
            continue;
        }
        let mut head = series.clone();
        head.values = series.values[..cut].to_vec();
        tails.push(series.values[cut..].to_vec());
        truncated.push(head);
    }
    if truncated.is_empty() {
        return Err(Error::Sizing(
            "no series long enough for a 70/30 penalty-tuning split".into(),
        ));
    }
    let head_collection = SeriesCollection {
        name: collection.name.clone(),
        series: truncated,
        horizon: collection.horizon,
    };
    let fit = fit_ridge(&head_collection, lags, lambda, pooled)?;
    let mut total = 0.0;
    let mut scored = 0usize;
    for (i, series) in head_collection.series.iter().enumerate() {
        let tail = &tails[i];
        let model = match &fit {
            RidgeFit::Pooled(m) => Some(m),
            RidgeFit::PerSeries(models) => models[i].as_ref(),
        };
        let Some(model) = model else { continue };
        let forecast = ridge_recursive_forecast(model, &series.values, tail.len())?;
        total += smape_modified(&forecast, tail, SMAPE_EPSILON)?;
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::Sizing("no series could be scored".into()));
    }
    Ok(total / scored as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeSeries;

    fn collection(series: Vec<TimeSeries>) -> SeriesCollection {
        SeriesCollection {
            name: "test".into(),
            horizon: series.first().map(|s| s.horizon).unwrap_or(1),
            series,
        }
    }

    fn make_series(id: &str, values: Vec<f64>, period: usize, horizon: usize) -> TimeSeries {
        TimeSeries {
            id: id.into(),
            values,
            period,
            start_index: 0,
            integer_valued: false,
            horizon,
        }
    }

    #[test]
    fn seasonal_naive_repeats_last_cycle() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(seasonal_naive(&values, 3, 3).unwrap(), vec![4.0, 5.0, 6.0]);
        assert_eq!(
            seasonal_naive(&values, 3, 6).unwrap(),
            vec![4.0, 5.0, 6.0, 4.0, 5.0, 6.0]
        );
        assert_eq!(seasonal_naive(&values, 1, 3).unwrap(), vec![6.0, 6.0, 6.0]);
        assert!(seasonal_naive(&values[..2], 3, 1).is_err());
    }

    #[test]
    fn huge_penalty_shrinks_coefficients_to_intercept_mean() {
        let values: Vec<f64> = (0..40).map(|i| 5.0 + (i % 3) as f64).collect();
        let c = collection(vec![make_series("a", values.clone(), 1, 1)]);
        let RidgeFit::PerSeries(models) = fit_ridge(&c, 3, 1e12, false).unwrap() else {
            panic!()
        };
        let model = models[0].as_ref().unwrap();
        for coef in &model.coefficients[1..] {
            assert!(coef.abs() < 1e-6, "{coef}");
        }
        let target_mean: f64 = {
            let rows = lag_rows(&values, 3);
            rows.iter().map(|(_, y)| y).sum::<f64>() / rows.len() as f64
        };
        assert!((model.coefficients[0] - target_mean).abs() < 1e-6);
    }

    #[test]
    fn recovers_exact_ar1_coefficient() {
        let mut values = vec![8.0];
        for _ in 0..60 {
            let prev = *values.last().unwrap();
            values.push(0.5 * prev + 1.0);
        }
        let c = collection(vec![make_series("a", values, 1, 1)]);
        let RidgeFit::PerSeries(models) = fit_ridge(&c, 1, 0.0, false).unwrap() else {
            panic!()
        };
        let model = models[0].as_ref().unwrap();
        assert!(
            (model.coefficients[1] - 0.5).abs() < 1e-6,
            "{:?}",
            model.coefficients
        );
        assert!((model.coefficients[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn pooled_on_identical_series_equals_unpooled_on_one() {
        // Mean scaling divides by the same constant for identical copies,
        // so the pooled system is the single-series system with duplicated
        // rows, which has the same solution.
        let mut values = vec![2.0, 3.0];
        for i in 2..50 {
            let v = 0.6 * values[i - 1] + 0.3 * values[i - 2] + 0.4;
            values.push(v);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let scaled: Vec<f64> = values.iter().map(|v| v / mean).collect();

        let two = collection(vec![
            make_series("a", values.clone(), 1, 1),
            make_series("b", values.clone(), 1, 1),
        ]);
        let RidgeFit::Pooled(pooled) = fit_ridge(&two, 2, 0.01, true).unwrap() else {
            panic!()
        };
        let one = collection(vec![make_series("a", scaled, 1, 1)]);
        let RidgeFit::PerSeries(models) = fit_ridge(&one, 2, 0.01, false).unwrap() else {
            panic!()
        };
        let single = models[0].as_ref().unwrap();
        for (p, s) in pooled.coefficients.iter().zip(&single.coefficients) {
            assert!((p - s).abs() < 1e-9, "{p} vs {s}");
        }
    }

    #[test]
    fn closed_form_matches_gradient_descent() {
        // Descend f(b) = mean squared error + lambda * |b_noint|^2 directly
        // and compare against the closed-form solution.
        let values = vec![1.0, 2.0, 1.5, 3.0, 2.5, 3.5, 3.0, 4.0, 3.8, 4.5];
        let lags = 2;
        let lambda = 0.3;
        let rows = lag_rows(&values, lags);
        let beta = solve_ridge(&rows, lags, lambda).unwrap();

        let n = rows.len() as f64;
        let mut gd = vec![0.0; lags + 1];
        let lr = 0.01;
        for _ in 0..300_000 {
            let mut grad = vec![0.0; lags + 1];
            for (x, y) in &rows {
                let pred: f64 = x.iter().zip(&gd).map(|(a, b)| a * b).sum();
                for j in 0..=lags {
                    grad[j] += 2.0 * (pred - y) * x[j] / n;
                }
            }
            for j in 1..=lags {
                grad[j] += 2.0 * lambda * gd[j];
            }
            for j in 0..=lags {
                gd[j] -= lr * grad[j];
            }
        }
        for (a, b) in beta.iter().zip(&gd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn singular_system_suggests_positive_penalty() {
        // Two identical lags make the system collinear at lambda = 0.
        let values = vec![3.0; 30];
        let c = collection(vec![make_series("a", values, 1, 1)]);
        let err = fit_ridge(&c, 2, 0.0, false).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("ridge"), "{err}");
    }

    #[test]
    fn identity_model_forecasts_flat() {
        let model = RidgeModel {
            lags: 1,
            coefficients: vec![0.0, 1.0],
            lambda: 0.0,
            pooled: false,
        };
        let forecast = ridge_recursive_forecast(&model, &[2.0, 5.0, 9.0], 4).unwrap();
        assert_eq!(forecast, vec![9.0; 4]);
    }

    #[test]
    fn recursion_follows_ar1_trajectory() {
        let model = RidgeModel {
            lags: 1,
            coefficients: vec![0.0, 0.5],
            lambda: 0.0,
            pooled: false,
        };
        let forecast = ridge_recursive_forecast(&model, &[8.0], 3).unwrap();
        assert_eq!(forecast, vec![4.0, 2.0, 1.0]);

        // Exactly fitted AR(2) keeps matching the analytic trajectory.
        let (a1, a2) = (0.6, 0.25);
        let mut values = vec![1.0, 1.5];
        for i in 2..40 {
            values.push(a1 * values[i - 1] + a2 * values[i - 2]);
        }
        let c = collection(vec![make_series("a", values.clone(), 1, 1)]);
        let RidgeFit::PerSeries(models) = fit_ridge(&c, 2, 0.0, false).unwrap() else {
            panic!()
        };
        let model = models[0].as_ref().unwrap();
        let forecast = ridge_recursive_forecast(model, &values, 5).unwrap();
        let mut extended = values.clone();
        for (i, f) in forecast.iter().enumerate() {
            let n = extended.len();
            let next = a1 * extended[n - 1] + a2 * extended[n - 2];
            extended.push(next);
            assert!((f - next).abs() < 1e-8, "step {i}");
        }
    }

    #[test]
    fn zero_horizon_gives_empty_forecast() {
        let model = RidgeModel {
            lags: 1,
            coefficients: vec![0.0, 1.0],
            lambda: 0.0,
            pooled: false,
        };
        assert!(ridge_recursive_forecast(&model, &[1.0], 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn short_series_are_skipped_unpooled() {
        let c = collection(vec![
            make_series("tiny", vec![1.0, 2.0], 1, 1),
            make_series("ok", (0..30).map(|i| (i % 5) as f64 + 1.0).collect(), 1, 1),
        ]);
        let RidgeFit::PerSeries(models) = fit_ridge(&c, 3, 0.1, false).unwrap() else {
            panic!()
        };
        assert!(models[0].is_none());
        assert!(models[1].is_some());
    }

    fn noiseless_ar_collection() -> SeriesCollection {
        let mut series = Vec::new();
        for s in 0..4 {
            let mut values = vec![4.0 + s as f64, 5.0];
            for i in 2..60 {
                let v = 0.55 * values[i - 1] + 0.4 * values[i - 2] + 0.6;
                values.push(v);
            }
            series.push(make_series(&format!("s{s}"), values, 1, 6));
        }
        collection(series)
    }

    #[test]
    fn lambda_tuning_prefers_small_penalty_on_noiseless_ar() {
        let c = noiseless_ar_collection();
        let lambda = tune_ridge_lambda(&c, 2, true, LambdaTuneMethod::GridCv, 7).unwrap();
        assert!(lambda < 0.05, "grid-cv picked {lambda}");
        let lambda = tune_ridge_lambda(&c, 2, true, LambdaTuneMethod::Smbo, 7).unwrap();
        assert!((0.0..=1.0).contains(&lambda));
        assert!(lambda < 0.2, "smbo picked {lambda}");
    }

    #[test]
    fn lambda_bounds_are_respected() {
        let c = noiseless_ar_collection();
        let pooled = tune_ridge_lambda(&c, 2, true, LambdaTuneMethod::Smbo, 3).unwrap();
        assert!((0.0..=1.0).contains(&pooled));
        let unpooled = tune_ridge_lambda(&c, 2, false, LambdaTuneMethod::Smbo, 3).unwrap();
        assert!((0.0..=200.0).contains(&unpooled));
    }
}
