//! Model configuration, the training loop, validation scoring, surrogate
//! hyperparameter tuning, and multi-seed median ensembling.
//!
//! One model is trained across the whole collection: each minibatch of
//! series contributes the mean of their per-series regularized losses to a
//! single optimizer step, and an epoch traverses every series epoch_size
//! times. All randomness (initialization, shuffling, input noise) flows
//! from per-component streams derived from one seed, so a run is
//! bit-reproducible at any parallelism level.

use crate::arch::{regularized_loss, ArchKind, Network};
use crate::autodiff::{ParamSet, Tape};
use crate::cells::{dim_from_param_budget, CellKind};
use crate::data::SeriesCollection;
use crate::error::{Error, Result};
use crate::metrics::{smape_modified, SMAPE_EPSILON};
use crate::optim::{make_optimizer, OptimizerKind};
use crate::preprocess::{
    forecast_window_run, postprocess_forecast, preprocess_series, FitRegion, InputFormat, Pipeline,
    Stage, WindowSet, WindowVariant,
};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// The nine tunable hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub minibatch_size: usize,
    pub epochs: usize,
    pub epoch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub noise_sigma: f64,
    pub l2_psi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_budget: Option<usize>,
    pub layers: usize,
    pub init_sigma: f64,
}

/// A fully specified model: architecture, cell, optimizer, pipeline, input
/// window choice, and hyperparameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: ArchKind,
    pub cell: CellKind,
    pub optimizer: OptimizerKind,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub input_window_variant: WindowVariant,
    pub hyperparameters: Hyperparameters,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let h = &self.hyperparameters;
        match (h.cell_dim, h.param_budget) {
            (Some(_), Some(_)) => {
                return Err(Error::Contract(
                    "set either cell_dim or param_budget, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Contract(
                    "one of cell_dim or param_budget is required".into(),
                ))
            }
            _ => {}
        }
        let needs_lr = self.optimizer != OptimizerKind::Cocob;
        if needs_lr && h.learning_rate.is_none() {
            return Err(Error::Contract(format!(
                "{} requires a learning rate",
                self.optimizer
            )));
        }
        if !needs_lr && h.learning_rate.is_some() {
            return Err(Error::Contract(
                "cocob is parameter-free and takes no learning rate".into(),
            ));
        }
        if h.minibatch_size < 1 || h.epoch_size < 1 || h.layers < 1 {
            return Err(Error::Contract(
                "minibatch_size, epoch_size and layers must be at least 1".into(),
            ));
        }
        if h.noise_sigma < 0.0 || h.l2_psi < 0.0 || h.init_sigma < 0.0 {
            return Err(Error::Contract(
                "noise_sigma, l2_psi and init_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::error::io_err(path, e))?;
        let config: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_dim(&self, input_size: usize) -> Result<usize> {
        match (
            self.hyperparameters.cell_dim,
            self.hyperparameters.param_budget,
        ) {
            (Some(d), None) => Ok(d),
            (None, Some(budget)) => {
                dim_from_param_budget(self.cell, input_size, self.hyperparameters.layers, budget)
            }
            _ => Err(Error::Contract(
                "exactly one of cell_dim or param_budget must be set".into(),
            )),
        }
    }
}

/// Preprocessed views of one collection for a fixed (pipeline, format, m).
#[derive(Debug, Clone)]
pub struct PreparedCollection {
    pub ids: Vec<String>,
    /// Tuning-phase training windows (validation region held out).
    pub train: Vec<WindowSet>,
    /// Full-length block runs used to forecast the held-out region.
    pub validation: Vec<WindowSet>,
    /// Full-series training windows for the final model.
    pub full_train: Vec<WindowSet>,
    /// Single final input window per series.
    pub test: Vec<WindowSet>,
    /// Raw held-out values, for validation scoring only.
    pub validation_truth: Vec<Vec<f64>>,
    pub horizon: usize,
    pub input_window: usize,
    pub integer_valued: bool,
}

/// Runs the forward transforms and window construction over the whole
/// collection. Requires a uniform horizon; collections mixing horizons are
/// trained per horizon group.
pub fn prepare(
    collection: &SeriesCollection,
    pipeline: Pipeline,
    format: InputFormat,
    input_window: usize,
) -> Result<PreparedCollection> {
    if collection.series.is_empty() {
        return Err(Error::Validation("no series found".into()));
    }
    let horizon = collection.series[0].horizon;
    if collection.series.iter().any(|s| s.horizon != horizon) {
        return Err(Error::Contract(
            "prepare needs a uniform horizon; split the collection by horizon first".into(),
        ));
    }
    let integer_valued = collection.series[0].integer_valued;
    let mut prepared = PreparedCollection {
        ids: Vec::new(),
        train: Vec::new(),
        validation: Vec::new(),
        full_train: Vec::new(),
        test: Vec::new(),
        validation_truth: Vec::new(),
        horizon,
        input_window,
        integer_valued,
    };
    for series in &collection.series {
        prepared.ids.push(series.id.clone());
        prepared.train.push(preprocess_series(
            series,
            pipeline,
            format,
            input_window,
            horizon,
            Stage::Train,
            FitRegion::TrainOnly,
        )?);
        prepared.validation.push(preprocess_series(
            series,
            pipeline,
            format,
            input_window,
            horizon,
            Stage::Validation,
            FitRegion::TrainOnly,
        )?);
        prepared.full_train.push(preprocess_series(
            series,
            pipeline,
            format,
            input_window,
            horizon,
            Stage::Validation,
            FitRegion::Full,
        )?);
        // Stateful moving-window forecasts rebuild state over the whole
        // window run; scalar encoders already consume the full history.
        prepared.test.push(match format {
            InputFormat::MovingWindow => {
                forecast_window_run(series, pipeline, input_window, horizon)?
            }
            InputFormat::Scalar => preprocess_series(
                series,
                pipeline,
                format,
                input_window,
                horizon,
                Stage::Test,
                FitRegion::Full,
            )?,
        });
        prepared
            .validation_truth
            .push(series.values[series.values.len() - horizon..].to_vec());
    }
    Ok(prepared)
}

/// Builds the network for a config against the prepared window geometry.
fn build_network(
    config: &ModelConfig,
    input_window: usize,
    horizon: usize,
    seed: u64,
    params: &mut ParamSet,
) -> Result<Network> {
    let input_size = match config.architecture.input_format() {
        InputFormat::MovingWindow => input_window,
        InputFormat::Scalar => 1,
    };
    let dim = config.resolve_dim(input_size)?;
    let mut rng = Rng::child(seed, "init", 0);
    Ok(Network::new(
        config.architecture,
        config.cell,
        config.hyperparameters.layers,
        input_size,
        dim,
        horizon,
        config.hyperparameters.init_sigma,
        params,
        &mut rng,
    ))
}

/// Trains one model over the given per-series window sets. Each minibatch
/// takes one optimizer step on the mean regularized loss; the whole
/// collection is traversed epochs x epoch_size times. Bit-reproducible for
/// a fixed (config, windows, seed).
pub fn train_model(
    config: &ModelConfig,
    windows: &[WindowSet],
    horizon: usize,
    input_window: usize,
    seed: u64,
) -> Result<(ParamSet, Network)> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Validation("no series to train on".into()));
    }
    let mut params = ParamSet::new();
    let network = build_network(config, input_window, horizon, seed, &mut params)?;
    let mut optimizer = make_optimizer(config.optimizer, config.hyperparameters.learning_rate)?;
    let mut noise_rng = Rng::child(seed, "noise", 0);
    let mut shuffle_rng = Rng::child(seed, "shuffle", 0);
    let h = &config.hyperparameters;

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut step = 0usize;
    for epoch in 0..h.epochs {
        for _pass in 0..h.epoch_size {
            shuffle_rng.shuffle(&mut order);
            for chunk in order.chunks(h.minibatch_size) {
                let grads = {
                    let mut tape = Tape::new(&params);
                    let mut total: Option<_> = None;
                    for &series_idx in chunk {
                        let noise =
                            (h.noise_sigma > 0.0).then_some((&mut noise_rng, h.noise_sigma));
                        let e = network.series_error(
                            &mut tape,
                            &windows[series_idx].blocks,
                            noise.map(|(r, s)| (&mut *r, s)),
                        )?;
                        total = Some(match total {
                            None => e,
                            Some(prev) => tape.add(prev, e)?,
                        });
                    }
                    let mean_error = tape.scale(total.unwrap(), 1.0 / chunk.len() as f64)?;
                    let loss = regularized_loss(&mut tape, mean_error, &params, h.l2_psi)?;
                    tape.backward(loss)
                }
                .map_err(|e| training_error(e, epoch, step))?;
                optimizer
                    .step(&mut params, &grads)
                    .map_err(|e| training_error(e, epoch, step))?;
                if !params.all_finite() {
                    return Err(Error::Training {
                        epoch,
                        step,
                        msg: "parameters diverged to a non-finite value".into(),
                    });
                }
                step += 1;
            }
        }
    }
    Ok((params, network))
}

fn training_error(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Training { epoch, step, msg },
        other => other,
    }
}

/// Mean training error (the E term) over all series, with no noise. Used
/// to monitor fit quality.
pub fn training_error_of(
    network: &Network,
    params: &ParamSet,
    windows: &[WindowSet],
) -> Result<f64> {
    let mut total = 0.0;
    for ws in windows {
        let mut tape = Tape::new(params);
        let e = network.series_error(&mut tape, &ws.blocks, None)?;
        total += tape.scalar_value(e)?;
    }
    Ok(total / windows.len() as f64)
}

/// Forecasts one series: feeds every block in sequence to build state,
/// takes the prediction after the final input window, and reverses the
/// forward transforms with that block's record.
pub fn forecast_series(
    network: &Network,
    params: &ParamSet,
    windows: &WindowSet,
    integer_valued: bool,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new(params);
    let raw = network.predict(&mut tape, &windows.blocks)?;
    let record = windows
        .blocks
        .last()
        .and_then(|b| b.record.as_ref())
        .ok_or_else(|| {
            Error::Contract(format!(
                "series '{}' has no normalization record to reverse",
                windows.series_id
            ))
        })?;
    postprocess_forecast(&raw, record, integer_valued)
}

/// Mean modified SMAPE of per-series forecasts against their truths.
pub fn score_forecasts(forecasts: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    if forecasts.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} forecasts for {} truth series",
            forecasts.len(),
            truths.len()
        )));
    }
    let mut total = 0.0;
    for (f, y) in forecasts.iter().zip(truths) {
        total += smape_modified(f, y, SMAPE_EPSILON)?;
    }
    Ok(total / forecasts.len() as f64)
}

/// Trains on the held-out layout and scores post-processed forecasts of
/// the reserved region with the modified SMAPE. The reserved values are
/// read only for scoring.
pub fn validate(config: &ModelConfig, prepared: &PreparedCollection, seed: u64) -> Result<f64> {
    let (params, network) = train_model(
        config,
        &prepared.train,
        prepared.horizon,
        prepared.input_window,
        seed,
    )?;
    let mut forecasts = Vec::with_capacity(prepared.validation.len());
    for ws in &prepared.validation {
        forecasts.push(forecast_series(
            &network,
            &params,
            ws,
            prepared.integer_valued,
        )?);
    }
    score_forecasts(&forecasts, &prepared.validation_truth)
}

/// Closed hyperparameter intervals mirroring the nine tunables. Bounds are
/// inclusive; the minibatch lower bound is conventionally around a tenth
/// of the collection size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    pub minibatch_size: (usize, usize),
    pub epochs: (usize, usize),
    pub epoch_size: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<(f64, f64)>,
    pub noise_sigma: (f64, f64),
    pub l2_psi: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_dim: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_budget: Option<(usize, usize)>,
    pub layers: (usize, usize),
    pub init_sigma: (f64, f64),
}

impl HyperparameterSpace {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::error::io_err(path, e))?;
        let space: HyperparameterSpace = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        fn ordered<T: PartialOrd + std::fmt::Debug>(name: &str, (lo, hi): &(T, T)) -> Result<()> {
            if lo > hi {
                return Err(Error::Contract(format!(
                    "{name} range is inverted: {lo:?} > {hi:?}"
                )));
            }
            Ok(())
        }
        ordered("minibatch_size", &self.minibatch_size)?;
        ordered("epochs", &self.epochs)?;
        ordered("epoch_size", &self.epoch_size)?;
        if let Some(lr) = &self.learning_rate {
            ordered("learning_rate", lr)?;
            if lr.0 <= 0.0 {
                return Err(Error::Contract(
                    "learning_rate bounds must be positive".into(),
                ));
            }
        }
        ordered("noise_sigma", &self.noise_sigma)?;
        ordered("l2_psi", &self.l2_psi)?;
        match (&self.cell_dim, &self.param_budget) {
            (Some(cd), None) => ordered("cell_dim", cd)?,
            (None, Some(pb)) => ordered("param_budget", pb)?,
            _ => {
                return Err(Error::Contract(
                    "set exactly one of cell_dim or param_budget ranges".into(),
                ))
            }
        }
        ordered("layers", &self.layers)?;
        ordered("init_sigma", &self.init_sigma)?;
        Ok(())
    }
}

/// The model choices held fixed during a tuning run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FixedChoices {
    pub architecture: ArchKind,
    pub cell: CellKind,
    pub optimizer: OptimizerKind,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub input_window_variant: WindowVariant,
}

/// Tuning outcome: the winning configuration and the full trial history.
#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best_config: ModelConfig,
    /// (configuration, validation error) per trial, in evaluation order.
    pub trials: Vec<(ModelConfig, f64)>,
    /// Wall-clock seconds per trial; the one non-reproducible column of the
    /// trial log.
    pub seconds_per_trial: Vec<f64>,
    pub iterations: usize,
}

pub const DEFAULT_TUNE_ITERATIONS: usize = 50;

fn config_from_point(
    fixed: &FixedChoices,
    space: &HyperparameterSpace,
    point: &[f64],
) -> ModelConfig {
    let mut i = 0;
    let mut next = || {
        let v = point[i];
        i += 1;
        v
    };
    let minibatch_size = next() as usize;
    let epochs = next() as usize;
    let epoch_size = next() as usize;
    let learning_rate = space.learning_rate.as_ref().map(|_| next());
    let noise_sigma = next();
    let l2_psi = next();
    let (cell_dim, param_budget) = if space.cell_dim.is_some() {
        (Some(next() as usize), None)
    } else {
        (None, Some(next() as usize))
    };
    let layers = next() as usize;
    let init_sigma = next();
    ModelConfig {
        architecture: fixed.architecture,
        cell: fixed.cell,
        optimizer: fixed.optimizer,
        pipeline: fixed.pipeline,
        input_window_variant: fixed.input_window_variant,
        hyperparameters: Hyperparameters {
            minibatch_size,
            epochs,
            epoch_size,
            learning_rate,
            noise_sigma,
            l2_psi,
            cell_dim,
            param_budget,
            layers,
            init_sigma,
        },
    }
}

/// Surrogate-guided search over the space: uniform exploration first, then
/// density-ratio proposals. Every evaluation trains on one fixed seed and
/// scores the held-out region.
pub fn tune(
    space: &HyperparameterSpace,
    fixed: &FixedChoices,
    prepared: &PreparedCollection,
    iterations: usize,
    seed: u64,
) -> Result<TuneResult> {
    space.validate()?;
    if fixed.optimizer == OptimizerKind::Cocob && space.learning_rate.is_some() {
        return Err(Error::Contract(
            "cocob takes no learning rate; drop it from the space".into(),
        ));
    }
    if fixed.optimizer != OptimizerKind::Cocob && space.learning_rate.is_none() {
        return Err(Error::Contract(format!(
            "{} needs a learning_rate range in the space",
            fixed.optimizer
        )));
    }

    use crate::smbo::ParamRange;
    let mut dims = vec![
        ParamRange::integer(
            "minibatch_size",
            space.minibatch_size.0,
            space.minibatch_size.1,
        ),
        ParamRange::integer("epochs", space.epochs.0, space.epochs.1),
        ParamRange::integer("epoch_size", space.epoch_size.0, space.epoch_size.1),
    ];
    if let Some((lo, hi)) = space.learning_rate {
        dims.push(ParamRange::log("learning_rate", lo, hi));
    }
    dims.push(ParamRange::new(
        "noise_sigma",
        space.noise_sigma.0,
        space.noise_sigma.1,
    ));
    dims.push(ParamRange::new("l2_psi", space.l2_psi.0, space.l2_psi.1));
    if let Some((lo, hi)) = space.cell_dim {
        dims.push(ParamRange::integer("cell_dim", lo, hi));
    } else if let Some((lo, hi)) = space.param_budget {
        dims.push(ParamRange::integer("param_budget", lo, hi));
    }
    dims.push(ParamRange::integer(
        "layers",
        space.layers.0,
        space.layers.1,
    ));
    dims.push(ParamRange::new(
        "init_sigma",
        space.init_sigma.0,
        space.init_sigma.1,
    ));

    let eval_seed = crate::rng::derive_seed(seed, "tune-eval", 0);
    let search_seed = crate::rng::derive_seed(seed, "tune-search", 0);
    let mut trial_configs = Vec::with_capacity(iterations);
    let mut seconds_per_trial = Vec::with_capacity(iterations);
    let result = crate::smbo::minimize(&dims, iterations, search_seed, |point| {
        let config = config_from_point(fixed, space, point);
        trial_configs.push(config.clone());
        let start = std::time::Instant::now();
        let outcome = validate(&config, prepared, eval_seed);
        seconds_per_trial.push(start.elapsed().as_secs_f64());
        outcome
    })?;

    let trials: Vec<(ModelConfig, f64)> = trial_configs
        .into_iter()
        .zip(result.trials.iter().map(|(_, v)| *v))
        .collect();
    let best_config = config_from_point(fixed, space, &result.best);
    Ok(TuneResult {
        best_config,
        trials,
        seconds_per_trial,
        iterations,
    })
}

/// Runs `count` independent jobs on up to `jobs` threads; results come back
/// indexed, so reduction order never depends on scheduling.
pub fn run_indexed<T, F>(count: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(count.max(1));
    if jobs <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    let f = &f;
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..jobs {
            handles.push(scope.spawn(move || {
                let mut mine = Vec::new();
                let mut idx = worker;
                while idx < count {
                    mine.push((idx, f(idx)));
                    idx += jobs;
                }
                mine
            }));
        }
        for handle in handles {
            for (idx, value) in handle.join().expect("worker panicked") {
                slots[idx] = Some(value);
            }
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

fn elementwise_median(per_seed: &[Vec<f64>]) -> Vec<f64> {
    let h = per_seed[0].len();
    (0..h)
        .map(|k| {
            let mut column: Vec<f64> = per_seed.iter().map(|f| f[k]).collect();
            column.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = column.len();
            if n % 2 == 1 {
                column[n / 2]
            } else {
                0.5 * (column[n / 2 - 1] + column[n / 2])
            }
        })
        .collect()
}

/// Per-seed and median-ensembled forecasts.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// seed index -> series index -> H-vector forecast.
    pub per_seed: Vec<Vec<Vec<f64>>>,
    /// series index -> H-vector elementwise median across seeds.
    pub ensemble: Vec<Vec<f64>>,
}

/// Trains one model per seed on the full un-split series, post-processes
/// every seed's forecasts, and takes the elementwise median per series and
/// step. Seeds run in parallel; the result never depends on scheduling.
pub fn ensemble_forecast(
    config: &ModelConfig,
    prepared: &PreparedCollection,
    seeds: &[u64],
    jobs: usize,
) -> Result<EnsembleResult> {
    if seeds.is_empty() {
        return Err(Error::Contract("at least one seed is required".into()));
    }
    let per_seed_results: Vec<Result<Vec<Vec<f64>>>> = run_indexed(seeds.len(), jobs, |seed_idx| {
        let (params, network) = train_model(
            config,
            &prepared.full_train,
            prepared.horizon,
            prepared.input_window,
            seeds[seed_idx],
        )?;
        let mut forecasts = Vec::with_capacity(prepared.test.len());
        for ws in &prepared.test {
            forecasts.push(forecast_series(
                &network,
                &params,
                ws,
                prepared.integer_valued,
            )?);
        }
        Ok(forecasts)
    });
    let mut per_seed = Vec::with_capacity(seeds.len());
    for result in per_seed_results {
        per_seed.push(result?);
    }

    let n_series = prepared.test.len();
    let ensemble = (0..n_series)
        .map(|s| {
            let columns: Vec<Vec<f64>> = per_seed.iter().map(|seed| seed[s].clone()).collect();
            let mut median = elementwise_median(&columns);
            // An even seed count midpoints two integer forecasts; integer
            // data rounds and clips again at the very end.
            if prepared.integer_valued {
                for v in &mut median {
                    *v = v.round().max(0.0);
                }
            }
            median
        })
        .collect();
    Ok(EnsembleResult { per_seed, ensemble })
}
