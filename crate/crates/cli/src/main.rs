//! Command-line front end: preprocess, tune, forecast, evaluate, baseline.
//!
//! All randomness flows from the single `--seed` flag through per-component
//! derived streams, so identical invocations produce byte-identical output
//! files at any `--jobs` value. Progress goes to standard error; data goes
//! to files and standard output.

use clap::{Parser, Subcommand, ValueEnum};
use gloft_core::arch::ArchKind;
use gloft_core::baselines::{
    fit_ridge, ridge_recursive_forecast, seasonal_naive, tune_ridge_lambda, LambdaTuneMethod,
    RidgeFit,
};
use gloft_core::cells::CellKind;
use gloft_core::data::{
    impute_missing, CollectionManifest, ImputePolicy, SeriesCollection, TimeSeries,
};
use gloft_core::error::Error;
use gloft_core::metrics::{
    aggregate, mase, rank_models, smape_modified, SeriesScore, SMAPE_EPSILON,
};
use gloft_core::optim::OptimizerKind;
use gloft_core::preprocess::{
    choose_input_window_size, preprocess_series, write_cache, CacheKey, FitRegion, InputFormat,
    Pipeline, Stage, WindowVariant,
};
use gloft_core::rng::derive_seed;
use gloft_core::train::{
    ensemble_forecast, prepare, tune, FixedChoices, HyperparameterSpace, ModelConfig,
    DEFAULT_TUNE_ITERATIONS,
};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "gloft",
    about = "Global recurrent-network forecasting across collections of related time series",
    version
)]
struct Cli {
    /// Root seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads for independent jobs (seeds, series).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Stl,
    Nostl,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Stl => Pipeline::Stl,
            PipelineArg::Nostl => Pipeline::NoStl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    /// Moving-window vector inputs.
    Mw,
    /// One scalar per step.
    Scalar,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Mw => InputFormat::MovingWindow,
            FormatArg::Scalar => InputFormat::Scalar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Small,
    Large,
}

impl From<WindowArg> for WindowVariant {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Small => WindowVariant::Small,
            WindowArg::Large => WindowVariant::Large,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Stacked,
    S2sDecoder,
    S2sDense,
    S2sDenseMw,
}

impl From<ArchArg> for ArchKind {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Stacked => ArchKind::StackedMw,
            ArchArg::S2sDecoder => ArchKind::S2sDecoderNmw,
            ArchArg::S2sDense => ArchKind::S2sDenseNmw,
            ArchArg::S2sDenseMw => ArchKind::S2sDenseMw,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CellArg {
    Ernn,
    Lstm,
    Gru,
}

impl From<CellArg> for CellKind {
    fn from(c: CellArg) -> Self {
        match c {
            CellArg::Ernn => CellKind::Ernn,
            CellArg::Lstm => CellKind::LstmPeephole,
            CellArg::Gru => CellKind::Gru,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Adagrad,
    Cocob,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Adagrad => OptimizerKind::Adagrad,
            OptimizerArg::Cocob => OptimizerKind::Cocob,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ImputeArg {
    /// Median over the observed values in the same seasonal phase.
    MedianByPhase,
    /// Replace missing values with zero.
    Zero,
    /// Refuse collections that still contain missing values.
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKindArg {
    Snaive,
    RidgePooled,
    RidgeUnpooled,
}

#[derive(Clone, Copy, ValueEnum)]
enum LambdaMethodArg {
    GridCv,
    Smbo,
}

#[derive(Subcommand)]
enum Command {
    /// Run imputation and the forward transforms; write window caches.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = PipelineArg::Stl)]
        pipeline: PipelineArg,
        #[arg(long, value_enum, default_value_t = FormatArg::Mw)]
        format: FormatArg,
        #[arg(long, value_enum, default_value_t = WindowArg::Small)]
        window: WindowArg,
        #[arg(long, value_enum, default_value_t = ImputeArg::None)]
        impute: ImputeArg,
    },
    /// Search the hyperparameter space with a surrogate-guided optimizer.
    Tune {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON file with per-hyperparameter ranges.
        #[arg(long)]
        space: PathBuf,
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long, value_enum)]
        cell: CellArg,
        #[arg(long, value_enum)]
        optimizer: OptimizerArg,
        #[arg(long, value_enum, default_value_t = PipelineArg::Stl)]
        pipeline: PipelineArg,
        #[arg(long, value_enum, default_value_t = WindowArg::Small)]
        window: WindowArg,
        #[arg(long, default_value_t = DEFAULT_TUNE_ITERATIONS)]
        iterations: usize,
        #[arg(long, value_enum, default_value_t = ImputeArg::None)]
        impute: ImputeArg,
    },
    /// Train one model per seed on the full series and write per-seed and
    /// median-ensemble forecasts.
    Forecast {
        #[arg(long)]
        manifest: PathBuf,
        /// Model configuration JSON (as written by tune).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed list; defaults to ten seeds derived from --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_enum, default_value_t = ImputeArg::None)]
        impute: ImputeArg,
    },
    /// Score forecast CSVs against the truth; write metrics and summary TSVs.
    Evaluate {
        /// Truth CSV: id,y1,...,yH per row.
        #[arg(long)]
        truth: PathBuf,
        /// One or more forecast CSVs; the file stem is the model label.
        #[arg(long, required = true, num_args = 1..)]
        forecasts: Vec<PathBuf>,
        /// Full training series CSV (id,v1,...) for the MASE denominator.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Seasonal period for the MASE denominator.
        #[arg(long)]
        period: Option<usize>,
    },
    /// Classical baseline forecasts in the same CSV schema.
    Baseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: BaselineKindArg,
        #[arg(long, default_value_t = 10)]
        lags: usize,
        /// Fixed ridge penalty; when absent the penalty is tuned.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_enum, default_value_t = LambdaMethodArg::GridCv)]
        tune_lambda: LambdaMethodArg,
        #[arg(long, value_enum, default_value_t = ImputeArg::None)]
        impute: ImputeArg,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.display().to_string(),
        source: e,
    })?;
    match &cli.command {
        Command::Preprocess {
            manifest,
            pipeline,
            format,
            window,
            impute,
        } => cmd_preprocess(
            &cli,
            manifest,
            (*pipeline).into(),
            (*format).into(),
            (*window).into(),
            *impute,
        ),
        Command::Tune {
            manifest,
            space,
            arch,
            cell,
            optimizer,
            pipeline,
            window,
            iterations,
            impute,
        } => cmd_tune(
            &cli,
            manifest,
            space,
            FixedChoices {
                architecture: (*arch).into(),
                cell: (*cell).into(),
                optimizer: (*optimizer).into(),
                pipeline: (*pipeline).into(),
                input_window_variant: (*window).into(),
            },
            *iterations,
            *impute,
        ),
        Command::Forecast {
            manifest,
            config,
            seeds,
            impute,
        } => cmd_forecast(&cli, manifest, config, seeds.clone(), *impute),
        Command::Evaluate {
            truth,
            forecasts,
            train_data,
            period,
        } => cmd_evaluate(&cli, truth, forecasts, train_data.as_deref(), *period),
        Command::Baseline {
            manifest,
            kind,
            lags,
            lambda,
            tune_lambda,
            impute,
        } => cmd_baseline(&cli, manifest, *kind, *lags, *lambda, *tune_lambda, *impute),
    }
}

fn load_and_impute(
    manifest_path: &Path,
    impute: ImputeArg,
) -> Result<(CollectionManifest, SeriesCollection), Error> {
    let manifest = CollectionManifest::load(manifest_path)?;
    let mut collection = manifest.load_collection(manifest_path)?;
    let policy = match impute {
        ImputeArg::MedianByPhase => Some(ImputePolicy::MedianByPhase),
        ImputeArg::Zero => Some(ImputePolicy::ZeroFill),
        ImputeArg::None => None,
    };
    match policy {
        Some(policy) => {
            for series in &mut collection.series {
                *series = impute_missing(series, policy)?;
            }
        }
        None => {
            if let Some(s) = collection.series.iter().find(|s| s.has_missing()) {
                return Err(Error::Contract(format!(
                    "series '{}' contains missing values; pass --impute median-by-phase or --impute zero",
                    s.id
                )));
            }
        }
    }
    Ok((manifest, collection))
}

/// Splits a collection into uniform-horizon groups, keeping series order
/// within each group. Collections like CIF mix horizons 6 and 12.
fn horizon_groups(collection: &SeriesCollection) -> Vec<SeriesCollection> {
    let mut groups: Vec<(usize, Vec<TimeSeries>)> = Vec::new();
    for series in &collection.series {
        match groups.iter_mut().find(|(h, _)| *h == series.horizon) {
            Some((_, members)) => members.push(series.clone()),
            None => groups.push((series.horizon, vec![series.clone()])),
        }
    }
    groups
        .into_iter()
        .map(|(horizon, series)| SeriesCollection {
            name: format!("{}_h{}", collection.name, horizon),
            series,
            horizon,
        })
        .collect()
}

fn pick_window(
    group: &SeriesCollection,
    period: usize,
    variant: WindowVariant,
) -> Result<usize, Error> {
    let horizon = group.horizon;
    let min_len = group.series.iter().map(|s| s.values.len()).min().unwrap();
    choose_input_window_size(horizon, period, min_len, variant)
}

fn cache_dir(cli: &Cli) -> PathBuf {
    match std::env::var_os("FORECAST_CACHE_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => cli.out.join("cache"),
    }
}

fn cmd_preprocess(
    cli: &Cli,
    manifest_path: &Path,
    pipeline: Pipeline,
    format: InputFormat,
    window: WindowVariant,
    impute: ImputeArg,
) -> Result<(), Error> {
    let (manifest, collection) = load_and_impute(manifest_path, impute)?;
    let dir = cache_dir(cli);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut stdout = std::io::stdout().lock();
    for group in horizon_groups(&collection) {
        let m = pick_window(&group, manifest.period, window)?;
        let n = group.horizon;
        eprintln!(
            "preprocess: group {} ({} series), input window {m}, horizon {n}",
            group.name,
            group.series.len()
        );
        for series in &group.series {
            let mut counts = Vec::new();
            for (stage, fit) in [
                (Stage::Train, FitRegion::TrainOnly),
                (Stage::Validation, FitRegion::TrainOnly),
                (Stage::Test, FitRegion::Full),
            ] {
                let ws = preprocess_series(series, pipeline, format, m, n, stage, fit)?;
                let key = CacheKey {
                    collection: group.name.clone(),
                    pipeline,
                    m,
                    n,
                    stage,
                };
                let path = dir.join(key.file_name(&series.id));
                write_cache(&path, &key, &ws)?;
                counts.push(format!("{stage}={}", ws.blocks.len()));
            }
            writeln!(stdout, "{} {}", series.id, counts.join(" ")).ok();
        }
    }
    eprintln!("preprocess: caches written to {}", dir.display());
    Ok(())
}

fn format_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

fn format_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

fn cmd_tune(
    cli: &Cli,
    manifest_path: &Path,
    space_path: &Path,
    fixed: FixedChoices,
    iterations: usize,
    impute: ImputeArg,
) -> Result<(), Error> {
    let (manifest, collection) = load_and_impute(manifest_path, impute)?;
    let groups = horizon_groups(&collection);
    if groups.len() != 1 {
        return Err(Error::Contract(format!(
            "tuning needs a uniform horizon but the collection has {} horizon groups; \
             tune each subgroup separately",
            groups.len()
        )));
    }
    let group = &groups[0];
    let space = HyperparameterSpace::load(space_path)?;
    let m = pick_window(group, manifest.period, fixed.input_window_variant)?;
    let format = fixed.architecture.input_format();
    eprintln!(
        "tune: {} series, horizon {}, input window {m}, {iterations} iterations",
        group.series.len(),
        group.horizon
    );
    let prepared = prepare(group, fixed.pipeline, format, m)?;
    let result = tune(&space, &fixed, &prepared, iterations, cli.seed)?;

    let trials_path = cli.out.join("trials.csv");
    let mut rows = String::from(
        "trial,minibatch_size,epochs,epoch_size,learning_rate,noise_sigma,l2_psi,cell_dim,param_budget,layers,init_sigma,validation_smape,seconds\n",
    );
    for (i, ((config, error), seconds)) in result
        .trials
        .iter()
        .zip(&result.seconds_per_trial)
        .enumerate()
    {
        let h = &config.hyperparameters;
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}\n",
            i + 1,
            h.minibatch_size,
            h.epochs,
            h.epoch_size,
            format_opt(h.learning_rate),
            h.noise_sigma,
            h.l2_psi,
            format_opt_usize(h.cell_dim),
            format_opt_usize(h.param_budget),
            h.layers,
            h.init_sigma,
            if error.is_finite() {
                error.to_string()
            } else {
                "failed".into()
            },
            seconds
        ));
    }
    write_text(&trials_path, &rows)?;

    let config_path = cli.out.join("best_config.json");
    let json = serde_json::to_string_pretty(&result.best_config).expect("config serializes");
    write_text(&config_path, &json)?;
    eprintln!(
        "tune: best validation smape {:.4}, config written to {}",
        result
            .trials
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min),
        config_path.display()
    );
    Ok(())
}

fn forecast_row(id: &str, values: &[f64]) -> String {
    let mut row = String::from(id);
    for v in values {
        row.push(',');
        row.push_str(&v.to_string());
    }
    row.push('\n');
    row
}

fn cmd_forecast(
    cli: &Cli,
    manifest_path: &Path,
    config_path: &Path,
    seeds: Option<Vec<u64>>,
    impute: ImputeArg,
) -> Result<(), Error> {
    let (manifest, collection) = load_and_impute(manifest_path, impute)?;
    let config = ModelConfig::load(config_path)?;
    let seeds = seeds.unwrap_or_else(|| {
        (0..10)
            .map(|i| derive_seed(cli.seed, "ensemble-seed", i))
            .collect()
    });

    // Forecast each horizon group with its own model; reassemble rows in
    // the original series order.
    let mut by_id: BTreeMap<String, (Vec<f64>, Vec<Vec<f64>>)> = BTreeMap::new();
    for group in horizon_groups(&collection) {
        let m = pick_window(&group, manifest.period, config.input_window_variant)?;
        let format = config.architecture.input_format();
        eprintln!(
            "forecast: group {} ({} series), {} seeds, input window {m}",
            group.name,
            group.series.len(),
            seeds.len()
        );
        let prepared = prepare(&group, config.pipeline, format, m)?;
        let result = ensemble_forecast(&config, &prepared, &seeds, cli.jobs)?;
        for (i, id) in prepared.ids.iter().enumerate() {
            let per_seed = result.per_seed.iter().map(|s| s[i].clone()).collect();
            by_id.insert(id.clone(), (result.ensemble[i].clone(), per_seed));
        }
    }

    let mut ensemble_rows = String::new();
    let mut seed_rows: Vec<String> = vec![String::new(); seeds.len()];
    for series in &collection.series {
        let (ensemble, per_seed) = &by_id[&series.id];
        ensemble_rows.push_str(&forecast_row(&series.id, ensemble));
        for (s, forecast) in per_seed.iter().enumerate() {
            seed_rows[s].push_str(&forecast_row(&series.id, forecast));
        }
    }
    let ensemble_path = cli.out.join("forecast_ensemble.csv");
    write_text(&ensemble_path, &ensemble_rows)?;
    for (s, rows) in seed_rows.iter().enumerate() {
        write_text(
            &cli.out.join(format!("forecast_seed{}.csv", seeds[s])),
            rows,
        )?;
    }
    eprintln!(
        "forecast: wrote {} and {} per-seed files",
        ensemble_path.display(),
        seeds.len()
    );
    Ok(())
}

fn parse_forecast_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (row_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: row_idx + 1,
                col: 1,
                msg: "empty id".into(),
            });
        }
        let mut values = Vec::new();
        for (col, field) in fields.enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                row: row_idx + 1,
                col: col + 2,
                msg: format!("malformed numeric field '{}'", field.trim()),
            })?;
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: row_idx + 1,
                col: 2,
                msg: "row has no values".into(),
            });
        }
        rows.push((id, values));
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "no series found in {}",
            path.display()
        )));
    }
    Ok(rows)
}

fn cmd_evaluate(
    cli: &Cli,
    truth_path: &Path,
    forecast_paths: &[PathBuf],
    train_data: Option<&Path>,
    period: Option<usize>,
) -> Result<(), Error> {
    let truth = parse_forecast_csv(truth_path)?;
    let truth_map: BTreeMap<&str, &Vec<f64>> =
        truth.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let insample: Option<BTreeMap<String, Vec<f64>>> = match (train_data, period) {
        (Some(path), Some(_)) => Some(
            parse_forecast_csv(path)?
                .into_iter()
                .collect::<BTreeMap<_, _>>(),
        ),
        (None, None) => None,
        _ => {
            return Err(Error::Contract(
                "MASE needs both --train-data and --period".into(),
            ))
        }
    };

    let mut metrics_rows = String::from("model\tseries\tsmape\tmase\n");
    let mut reports = Vec::new();
    let mut smape_tables: Vec<(String, BTreeMap<String, f64>)> = Vec::new();
    let mut mase_tables: Vec<(String, BTreeMap<String, f64>)> = Vec::new();

    for path in forecast_paths {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let forecasts = parse_forecast_csv(path)?;
        let missing: Vec<&str> = forecasts
            .iter()
            .map(|(id, _)| id.as_str())
            .filter(|id| !truth_map.contains_key(id))
            .chain(
                truth
                    .iter()
                    .map(|(id, _)| id.as_str())
                    .filter(|id| !forecasts.iter().any(|(fid, _)| fid == id)),
            )
            .collect();
        if !missing.is_empty() {
            return Err(Error::Contract(format!(
                "series ids of '{label}' do not match the truth file: {}",
                missing.join(", ")
            )));
        }

        let mut per_series = Vec::new();
        let mut smape_table = BTreeMap::new();
        let mut mase_table = BTreeMap::new();
        for (id, forecast) in &forecasts {
            let actual = truth_map[id.as_str()];
            let smape_value = smape_modified(forecast, actual, SMAPE_EPSILON).ok();
            let mase_value = match (&insample, period) {
                (Some(map), Some(m)) => map
                    .get(id)
                    .and_then(|ins| mase(forecast, actual, ins, m).ok()),
                _ => None,
            };
            if let Some(v) = smape_value {
                smape_table.insert(id.clone(), v);
            }
            if let Some(v) = mase_value {
                mase_table.insert(id.clone(), v);
            }
            metrics_rows.push_str(&format!(
                "{label}\t{id}\t{}\t{}\n",
                format_opt(smape_value),
                format_opt(mase_value)
            ));
            per_series.push((
                id.clone(),
                SeriesScore {
                    smape: smape_value,
                    mase: mase_value,
                },
            ));
        }
        reports.push(aggregate(&label, per_series)?);
        smape_tables.push((label.clone(), smape_table));
        if insample.is_some() {
            mase_tables.push((label, mase_table));
        }
    }

    let smape_ranks: BTreeMap<String, f64> = if smape_tables.len() >= 2 {
        rank_models(&smape_tables)?.into_iter().collect()
    } else {
        BTreeMap::new()
    };
    let mase_ranks: BTreeMap<String, f64> = if mase_tables.len() >= 2 {
        match rank_models(&mase_tables) {
            Ok(r) => r.into_iter().collect(),
            Err(_) => BTreeMap::new(),
        }
    } else {
        BTreeMap::new()
    };

    let mut summary_rows = String::from(
        "model\tmean_smape\tmedian_smape\tmean_mase\tmedian_mase\tmean_rank_smape\tmean_rank_mase\tskipped\n",
    );
    for report in &reports {
        let a = &report.aggregates;
        summary_rows.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            report.model_label,
            a.mean_smape,
            a.median_smape,
            format_opt(a.mean_mase),
            format_opt(a.median_mase),
            format_opt(smape_ranks.get(&report.model_label).copied()),
            format_opt(mase_ranks.get(&report.model_label).copied()),
            a.skipped
        ));
    }

    write_text(&cli.out.join("metrics.tsv"), &metrics_rows)?;
    write_text(&cli.out.join("summary.tsv"), &summary_rows)?;
    print!("{summary_rows}");
    Ok(())
}

fn cmd_baseline(
    cli: &Cli,
    manifest_path: &Path,
    kind: BaselineKindArg,
    lags: usize,
    lambda: Option<f64>,
    tune_method: LambdaMethodArg,
    impute: ImputeArg,
) -> Result<(), Error> {
    let (manifest, collection) = load_and_impute(manifest_path, impute)?;
    let period = manifest.period;
    let (kind_name, rows, used_lambda) = match kind {
        BaselineKindArg::Snaive => {
            let mut rows = String::new();
            for series in &collection.series {
                let f = seasonal_naive(&series.values, period, series.horizon)?;
                rows.push_str(&forecast_row(&series.id, &f));
            }
            ("snaive", rows, None)
        }
        BaselineKindArg::RidgePooled | BaselineKindArg::RidgeUnpooled => {
            let pooled = matches!(kind, BaselineKindArg::RidgePooled);
            let method = match tune_method {
                LambdaMethodArg::GridCv => LambdaTuneMethod::GridCv,
                LambdaMethodArg::Smbo => LambdaTuneMethod::Smbo,
            };
            let lambda = match lambda {
                Some(l) => l,
                None => {
                    eprintln!("baseline: tuning ridge penalty ({lags} lags)");
                    tune_ridge_lambda(&collection, lags, pooled, method, cli.seed)?
                }
            };
            eprintln!("baseline: ridge penalty {lambda}");
            let fit = fit_ridge(&collection, lags, lambda, pooled)?;
            let mut rows = String::new();
            for (i, series) in collection.series.iter().enumerate() {
                let model = match &fit {
                    RidgeFit::Pooled(m) => Some(m),
                    RidgeFit::PerSeries(models) => models[i].as_ref(),
                };
                let forecast = match model {
                    Some(model) => ridge_recursive_forecast(model, &series.values, series.horizon)?,
                    // Series too short to fit fall back to the naive.
                    None => seasonal_naive(&series.values, period, series.horizon)?,
                };
                rows.push_str(&forecast_row(&series.id, &forecast));
            }
            (
                if pooled {
                    "ridge-pooled"
                } else {
                    "ridge-unpooled"
                },
                rows,
                Some(lambda),
            )
        }
    };

    let csv_path = cli.out.join(format!("baseline_{kind_name}.csv"));
    write_text(&csv_path, &rows)?;
    let meta = serde_json::json!({
        "kind": kind_name,
        "lags": if kind_name == "snaive" { None } else { Some(lags) },
        "lambda": used_lambda,
        "period": period,
    });
    write_text(
        &cli.out.join(format!("baseline_{kind_name}.meta.json")),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    eprintln!("baseline: wrote {}", csv_path.display());
    Ok(())
}

fn write_text(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}
