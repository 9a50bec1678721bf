//! Forward transforms, window construction, and exact reversal on forecasts.
//!
//! Two pipelines are supported. The decomposition pipeline takes logs,
//! removes the periodic seasonal component, and normalizes each window by
//! the trend value at the last input step. The plain pipeline divides the
//! series by its mean and then takes logs. Every block carries a
//! [`NormalizationRecord`] holding exactly what is needed to reverse the
//! transforms on an H-step forecast.
//!
//! Transform statistics (decomposition, mean, log offset) are estimated on
//! a fit region: the train portion during tuning, so validation targets are
//! never read, and the whole series for final training and test forecasts.

use crate::data::TimeSeries;
use crate::error::{io_err, Error, Result};
use crate::stl::{stl_periodic, Decomposition};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Log transform, periodic decomposition, deseasonalize, trend-normalize.
    Stl,
    /// Mean scale, then log transform.
    NoStl,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pipeline::Stl => write!(f, "stl"),
            Pipeline::NoStl => write!(f, "nostl"),
        }
    }
}

/// How a series is fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// Moving-window blocks of m inputs and n targets, shifted by one step.
    MovingWindow,
    /// One scalar observation per step (encoder-style input).
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Tuning-phase training: the last n values are held out.
    Train,
    /// Full-length block set: used to forecast the held-out region during
    /// tuning and as the training set when re-training on the whole series.
    Validation,
    /// A single final input window with no target.
    Test,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Train => write!(f, "train"),
            Stage::Validation => write!(f, "validation"),
            Stage::Test => write!(f, "test"),
        }
    }
}

/// Which prefix of the series transform statistics are estimated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitRegion {
    /// Everything but the reserved validation target.
    TrainOnly,
    /// The whole series.
    Full,
}

/// Everything needed to reverse the forward transforms on one forecast.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalizationRecord {
    Stl {
        /// 1 when the log transform added 1 before taking logs.
        log_offset: u8,
        /// Trend value at the last input step, subtracted from the window.
        trend_anchor: f64,
        /// Seasonal component at each of the n forecast steps.
        seasonal_future: Vec<f64>,
    },
    NoStl {
        log_offset: u8,
        /// The series mean every value was divided by.
        series_mean: f64,
    },
}

/// One (input window, target window) pair in transformed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub input: Vec<f64>,
    pub target: Option<Vec<f64>>,
    pub record: Option<NormalizationRecord>,
}

/// All blocks of one series for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub series_id: String,
    pub blocks: Vec<Block>,
    pub m: usize,
    pub n: usize,
    pub stage: Stage,
    pub format: InputFormat,
}

/// Elementwise natural log; adds 1 first when the minimum does not clear
/// `epsilon`. Returns the transformed values and the offset flag.
pub fn log_transform(values: &[f64], epsilon: f64) -> Result<(Vec<f64>, u8)> {
    if let Some(bad) = values.iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!(
            "log transform requires non-negative values, found {bad}"
        )));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let offset = if min > epsilon { 0u8 } else { 1u8 };
    let shift = offset as f64;
    Ok((values.iter().map(|v| (v + shift).ln()).collect(), offset))
}

/// Divides by the series mean; requires a positive mean.
pub fn mean_scale(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(mean > 0.0) {
        return Err(Error::Domain(format!(
            "mean scaling requires a positive mean, found {mean}"
        )));
    }
    Ok((values.iter().map(|v| v / mean).collect(), mean))
}

/// The two candidate input window sizes: slightly bigger than the horizon,
/// and slightly bigger than the seasonal period.
pub fn window_size_options(horizon: usize, period: usize) -> (usize, usize) {
    let horizon_based = (1.25 * horizon as f64).ceil() as usize;
    let period_based = (1.25 * period as f64).ceil() as usize;
    (horizon_based, period_based)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowVariant {
    /// Input window slightly bigger than one seasonal cycle.
    #[default]
    Small,
    /// Input window slightly bigger than the forecast horizon.
    Large,
}

/// Picks the input window size for a collection whose shortest effective
/// series has `min_length` values. Falls back to the other option, then to
/// the largest size that still admits one training block everywhere.
pub fn choose_input_window_size(
    horizon: usize,
    period: usize,
    min_length: usize,
    variant: WindowVariant,
) -> Result<usize> {
    let (horizon_based, period_based) = window_size_options(horizon, period);
    let (preferred, other) = match variant {
        WindowVariant::Small => (period_based, horizon_based),
        WindowVariant::Large => (horizon_based, period_based),
    };
    let feasible = |m: usize| m >= 1 && min_length > m + 2 * horizon;
    if feasible(preferred) {
        return Ok(preferred);
    }
    if feasible(other) {
        return Ok(other);
    }
    if min_length >= 2 * horizon + 2 {
        return Ok(min_length - 2 * horizon - 1);
    }
    Err(Error::Sizing(format!(
        "no feasible input window: shortest series has {min_length} values but \
         at least {} are required for horizon {horizon}",
        2 * horizon + 2
    )))
}

#[derive(Debug, Clone, Copy)]
struct BlockSpan {
    input_start: usize,
    has_target: bool,
}

/// Start offsets of every moving-window block for the stage. Inputs cover
/// `[s, s+m)` and targets `[s+m, s+m+n)`; consecutive starts differ by one.
fn block_spans(len: usize, m: usize, n: usize, stage: Stage) -> Result<Vec<BlockSpan>> {
    match stage {
        Stage::Train => {
            let required = m + 2 * n + 1;
            if len < required {
                return Err(Error::Sizing(format!(
                    "series of length {len} is too short for training windows: \
                     needs at least {required} (m={m}, n={n})"
                )));
            }
            let count = len - 2 * n - m;
            Ok((1..=count)
                .map(|s| BlockSpan {
                    input_start: s,
                    has_target: true,
                })
                .collect())
        }
        Stage::Validation => {
            let required = m + n + 1;
            if len < required {
                return Err(Error::Sizing(format!(
                    "series of length {len} is too short for validation windows: \
                     needs at least {required} (m={m}, n={n})"
                )));
            }
            let count = len - n - m;
            Ok((1..=count)
                .map(|s| BlockSpan {
                    input_start: s,
                    has_target: true,
                })
                .collect())
        }
        Stage::Test => {
            if len < m {
                return Err(Error::Sizing(format!(
                    "series of length {len} is too short for a final window of {m}"
                )));
            }
            Ok(vec![BlockSpan {
                input_start: len - m,
                has_target: false,
            }])
        }
    }
}

/// Cuts plain moving-window blocks out of a value sequence, with no
/// normalization applied. The test stage yields exactly one final input
/// window with no target.
pub fn build_windows(values: &[f64], m: usize, n: usize, stage: Stage) -> Result<WindowSet> {
    let spans = block_spans(values.len(), m, n, stage)?;
    let blocks = spans
        .iter()
        .map(|span| {
            let s = span.input_start;
            Block {
                input: values[s..s + m].to_vec(),
                target: span.has_target.then(|| values[s + m..s + m + n].to_vec()),
                record: None,
            }
        })
        .collect();
    Ok(WindowSet {
        series_id: String::new(),
        blocks,
        m,
        n,
        stage,
        format: InputFormat::MovingWindow,
    })
}

/// Subtracts the trend value at the last input step from an input window
/// and its target.
pub fn trend_normalize(input: &mut [f64], target: Option<&mut [f64]>, anchor: f64) {
    for v in input.iter_mut() {
        *v -= anchor;
    }
    if let Some(target) = target {
        for v in target.iter_mut() {
            *v -= anchor;
        }
    }
}

const REAL_VALUED_EPSILON: f64 = 1e-8;

fn log_epsilon(series: &TimeSeries) -> f64 {
    if series.integer_valued {
        0.0
    } else {
        REAL_VALUED_EPSILON
    }
}

/// A series after the forward transforms, able to stamp out the reversal
/// record for any window position.
struct TransformedSeries {
    values: Vec<f64>,
    factory: RecordFactory,
}

enum RecordFactory {
    Stl {
        decomp: Decomposition,
        log_offset: u8,
    },
    NoStl {
        log_offset: u8,
        series_mean: f64,
    },
}

impl RecordFactory {
    fn record_at(&self, last_input: usize, n: usize) -> NormalizationRecord {
        match self {
            RecordFactory::Stl { decomp, log_offset } => NormalizationRecord::Stl {
                log_offset: *log_offset,
                trend_anchor: decomp.trend[last_input],
                seasonal_future: (1..=n)
                    .map(|k| decomp.seasonal_at(last_input + k))
                    .collect(),
            },
            RecordFactory::NoStl {
                log_offset,
                series_mean,
            } => NormalizationRecord::NoStl {
                log_offset: *log_offset,
                series_mean: *series_mean,
            },
        }
    }
}

fn transform_series(
    series: &TimeSeries,
    pipeline: Pipeline,
    fit_len: usize,
) -> Result<TransformedSeries> {
    if series.has_missing() {
        return Err(Error::Contract(format!(
            "series '{}' still contains missing values; impute before preprocessing",
            series.id
        )));
    }
    let epsilon = log_epsilon(series);
    match pipeline {
        Pipeline::Stl => {
            let (logv, log_offset) = log_transform(&series.values[..fit_len], epsilon)?;
            let decomp = stl_periodic(&logv, series.period)?;
            let deseason: Vec<f64> = logv
                .iter()
                .zip(&decomp.seasonal)
                .map(|(v, s)| v - s)
                .collect();
            Ok(TransformedSeries {
                values: deseason,
                factory: RecordFactory::Stl { decomp, log_offset },
            })
        }
        Pipeline::NoStl => {
            let (scaled, series_mean) = mean_scale(&series.values[..fit_len])?;
            let (logv, log_offset) = log_transform(&scaled, epsilon)?;
            Ok(TransformedSeries {
                values: logv,
                factory: RecordFactory::NoStl {
                    log_offset,
                    series_mean,
                },
            })
        }
    }
}

fn make_block(
    transformed: &TransformedSeries,
    n: usize,
    input_range: std::ops::Range<usize>,
    target_range: Option<std::ops::Range<usize>>,
    with_record: bool,
) -> Block {
    let last_input = input_range.end - 1;
    let record = transformed.factory.record_at(last_input, n);
    let mut input = transformed.values[input_range].to_vec();
    let mut target = target_range.map(|r| transformed.values[r].to_vec());
    if let NormalizationRecord::Stl { trend_anchor, .. } = record {
        trend_normalize(&mut input, target.as_deref_mut(), trend_anchor);
    }
    Block {
        input,
        target,
        record: with_record.then_some(record),
    }
}

/// Runs the full forward pipeline on one series and cuts it into blocks.
pub fn preprocess_series(
    series: &TimeSeries,
    pipeline: Pipeline,
    format: InputFormat,
    m: usize,
    n: usize,
    stage: Stage,
    fit: FitRegion,
) -> Result<WindowSet> {
    let l = series.len();
    let fit_len = match fit {
        FitRegion::Full => l,
        FitRegion::TrainOnly => {
            if stage == Stage::Test {
                return Err(Error::Contract(
                    "test windows need transforms fitted on the full series".into(),
                ));
            }
            if l <= n {
                return Err(Error::Split {
                    series: series.id.clone(),
                    len: l,
                    horizon: n,
                });
            }
            l - n
        }
    };
    let transformed = transform_series(series, pipeline, fit_len)?;
    assemble_blocks(series, format, m, n, stage, fit_len, &transformed)
}

/// The forecast-time window run for stateful moving-window architectures:
/// every consecutive window over the whole series, inputs only, ending at
/// the final window which carries the reversal record. Feeding the run in
/// sequence rebuilds the state exactly as training did before the forecast
/// is read off the last step.
pub fn forecast_window_run(
    series: &TimeSeries,
    pipeline: Pipeline,
    m: usize,
    n: usize,
) -> Result<WindowSet> {
    let l = series.len();
    if l < m + 1 {
        return Err(Error::Sizing(format!(
            "series of length {l} is too short for a window run of {m}"
        )));
    }
    let transformed = transform_series(series, pipeline, l)?;
    let last_start = l - m;
    let blocks = (1..=last_start)
        .map(|s| make_block(&transformed, n, s..s + m, None, s == last_start))
        .collect();
    Ok(WindowSet {
        series_id: series.id.clone(),
        blocks,
        m,
        n,
        stage: Stage::Test,
        format: InputFormat::MovingWindow,
    })
}

fn assemble_blocks(
    series: &TimeSeries,
    format: InputFormat,
    m: usize,
    n: usize,
    stage: Stage,
    fit_len: usize,
    transformed: &TransformedSeries,
) -> Result<WindowSet> {
    let blocks = match format {
        InputFormat::MovingWindow => {
            let spans = block_spans(series.len(), m, n, stage)?;
            spans
                .iter()
                .map(|span| {
                    let s = span.input_start;
                    // Targets that reach past the fit region are dropped;
                    // those blocks only feed state.
                    let target_range =
                        (span.has_target && s + m + n <= fit_len).then(|| s + m..s + m + n);
                    make_block(transformed, n, s..s + m, target_range, true)
                })
                .collect()
        }
        InputFormat::Scalar => {
            let l = series.len();
            let (input_end, target_range): (usize, Option<std::ops::Range<usize>>) = match stage {
                Stage::Train => {
                    let l1 = l - n; // train portion
                    if l1 <= n {
                        return Err(Error::Sizing(format!(
                            "series of length {l} is too short for encoder training: \
                             needs at least {} (n={n})",
                            2 * n + 1
                        )));
                    }
                    (l1 - n, Some(l1 - n..l1))
                }
                Stage::Validation => {
                    if l <= n {
                        return Err(Error::Sizing(format!(
                            "series of length {l} is too short for an encoder pass (n={n})"
                        )));
                    }
                    let target = (l <= fit_len).then(|| l - n..l);
                    (l - n, target)
                }
                Stage::Test => (l, None),
            };
            vec![make_block(transformed, n, 0..input_end, target_range, true)]
        }
    };

    Ok(WindowSet {
        series_id: series.id.clone(),
        blocks,
        m: if format == InputFormat::Scalar { 1 } else { m },
        n,
        stage,
        format,
    })
}

fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Reverses the forward transforms on a raw network forecast, in exactly
/// the pipeline's reversal order, ending with rounding for integer data and
/// clipping at zero.
pub fn postprocess_forecast(
    raw: &[f64],
    record: &NormalizationRecord,
    integer_valued: bool,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(raw.len());
    match record {
        NormalizationRecord::Stl {
            log_offset,
            trend_anchor,
            seasonal_future,
        } => {
            if seasonal_future.len() != raw.len() {
                return Err(Error::Contract(format!(
                    "record has {} seasonal steps but the forecast has {}",
                    seasonal_future.len(),
                    raw.len()
                )));
            }
            for (k, &v) in raw.iter().enumerate() {
                let mut f = v + trend_anchor + seasonal_future[k];
                f = f.exp();
                if *log_offset == 1 {
                    f -= 1.0;
                }
                if integer_valued {
                    f = round_half_away(f);
                }
                out.push(f.max(0.0));
            }
        }
        NormalizationRecord::NoStl {
            log_offset,
            series_mean,
        } => {
            for &v in raw {
                let mut f = v.exp();
                if *log_offset == 1 {
                    f -= 1.0;
                }
                f *= series_mean;
                if integer_valued {
                    f = round_half_away(f);
                }
                out.push(f.max(0.0));
            }
        }
    }
    Ok(out)
}

/// Cache key for a preprocessed window file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub collection: String,
    pub pipeline: Pipeline,
    pub m: usize,
    pub n: usize,
    pub stage: Stage,
}

impl CacheKey {
    pub fn file_name(&self, series_id: &str) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect()
        };
        format!(
            "{}__{}_m{}_n{}_{}__{}.gwc",
            clean(&self.collection),
            self.pipeline,
            self.m,
            self.n,
            self.stage,
            clean(series_id)
        )
    }
}

const CACHE_MAGIC: &[u8; 4] = b"GWC1";

fn stage_tag(stage: Stage) -> u8 {
    match stage {
        Stage::Train => 0,
        Stage::Validation => 1,
        Stage::Test => 2,
    }
}

fn stage_from_tag(tag: u8) -> Result<Stage> {
    match tag {
        0 => Ok(Stage::Train),
        1 => Ok(Stage::Validation),
        2 => Ok(Stage::Test),
        _ => Err(Error::Contract(format!("unknown stage tag {tag}"))),
    }
}

/// Writes one series' window set to a versioned binary cache file. The
/// encoding has no unordered containers or timestamps, so identical inputs
/// produce byte-identical files.
pub fn write_cache(path: &Path, key: &CacheKey, windows: &WindowSet) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    let write_str = |buf: &mut Vec<u8>, s: &str| {
        buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    };
    let write_vals = |buf: &mut Vec<u8>, vals: &[f64]| {
        buf.extend_from_slice(&(vals.len() as u64).to_le_bytes());
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    write_str(&mut buf, &key.collection);
    buf.push(match key.pipeline {
        Pipeline::Stl => 0,
        Pipeline::NoStl => 1,
    });
    buf.extend_from_slice(&(key.m as u64).to_le_bytes());
    buf.extend_from_slice(&(key.n as u64).to_le_bytes());
    buf.push(stage_tag(key.stage));
    write_str(&mut buf, &windows.series_id);
    buf.push(match windows.format {
        InputFormat::MovingWindow => 0,
        InputFormat::Scalar => 1,
    });
    buf.extend_from_slice(&(windows.m as u64).to_le_bytes());
    buf.extend_from_slice(&(windows.n as u64).to_le_bytes());
    buf.push(stage_tag(windows.stage));
    buf.extend_from_slice(&(windows.blocks.len() as u64).to_le_bytes());
    for block in &windows.blocks {
        write_vals(&mut buf, &block.input);
        match &block.target {
            Some(t) => {
                buf.push(1);
                write_vals(&mut buf, t);
            }
            None => buf.push(0),
        }
        match &block.record {
            None => buf.push(0),
            Some(NormalizationRecord::Stl {
                log_offset,
                trend_anchor,
                seasonal_future,
            }) => {
                buf.push(1);
                buf.push(*log_offset);
                buf.extend_from_slice(&trend_anchor.to_le_bytes());
                write_vals(&mut buf, seasonal_future);
            }
            Some(NormalizationRecord::NoStl {
                log_offset,
                series_mean,
            }) => {
                buf.push(2);
                buf.push(*log_offset);
                buf.extend_from_slice(&series_mean.to_le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads a cache file back; the stored key must round-trip.
pub fn read_cache(path: &Path) -> Result<(CacheKey, WindowSet)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let mut pos = 0usize;
    let fail = |msg: &str, pos: usize| Error::Parse {
        path: path.display().to_string(),
        row: 0,
        col: pos,
        msg: msg.into(),
    };
    macro_rules! take {
        ($n:expr) => {{
            let n = $n;
            if pos + n > bytes.len() {
                return Err(fail("truncated cache file", pos));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            s
        }};
    }
    macro_rules! read_u64 {
        () => {
            u64::from_le_bytes(take!(8).try_into().unwrap()) as usize
        };
    }
    macro_rules! read_f64 {
        () => {
            f64::from_le_bytes(take!(8).try_into().unwrap())
        };
    }
    macro_rules! read_str {
        () => {{
            let len = read_u64!();
            String::from_utf8(take!(len).to_vec())
                .map_err(|_| fail("invalid utf-8 in cache", pos))?
        }};
    }
    macro_rules! read_vals {
        () => {{
            let len = read_u64!();
            let mut vals = Vec::with_capacity(len);
            for _ in 0..len {
                vals.push(read_f64!());
            }
            vals
        }};
    }

    if take!(4) != CACHE_MAGIC {
        return Err(fail("bad cache magic", 0));
    }
    let collection = read_str!();
    let pipeline = match take!(1)[0] {
        0 => Pipeline::Stl,
        1 => Pipeline::NoStl,
        t => return Err(fail(&format!("unknown pipeline tag {t}"), pos)),
    };
    let key_m = read_u64!();
    let key_n = read_u64!();
    let key_stage = stage_from_tag(take!(1)[0])?;
    let series_id = read_str!();
    let format = match take!(1)[0] {
        0 => InputFormat::MovingWindow,
        1 => InputFormat::Scalar,
        t => return Err(fail(&format!("unknown format tag {t}"), pos)),
    };
    let m = read_u64!();
    let n = read_u64!();
    let stage = stage_from_tag(take!(1)[0])?;
    let block_count = read_u64!();
    let mut blocks = Vec::with_capacity(block_count);
    for _ in 0..block_count {
        let input = read_vals!();
        let target = match take!(1)[0] {
            1 => Some(read_vals!()),
            _ => None,
        };
        let record = match take!(1)[0] {
            0 => None,
            1 => {
                let log_offset = take!(1)[0];
                let trend_anchor = read_f64!();
                let seasonal_future = read_vals!();
                Some(NormalizationRecord::Stl {
                    log_offset,
                    trend_anchor,
                    seasonal_future,
                })
            }
            2 => {
                let log_offset = take!(1)[0];
                let series_mean = read_f64!();
                Some(NormalizationRecord::NoStl {
                    log_offset,
                    series_mean,
                })
            }
            t => return Err(fail(&format!("unknown record tag {t}"), pos)),
        };
        blocks.push(Block {
            input,
            target,
            record,
        });
    }
    Ok((
        CacheKey {
            collection,
            pipeline,
            m: key_m,
            n: key_n,
            stage: key_stage,
        },
        WindowSet {
            series_id,
            blocks,
            m,
            n,
            stage,
            format,
        },
    ))
}
