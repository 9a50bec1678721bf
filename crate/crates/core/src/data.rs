//! Series collections on disk: loading, missing-value imputation, and the
//! train/validation split.
//!
//! Missing observations are an explicit marker in the file format (an empty
//! field or the literal `NA`), never a numeric code; in memory they are
//! carried as NaN until imputation. Two row formats are supported: one
//! series per row (`id,v1,v2,...`, optionally with a horizon column), and a
//! long format with one `id,value` observation per row, grouped by order of
//! first appearance.

use crate::error::{io_err, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// One identified series. `period` is the seasonality length M (12 for
/// monthly data, 7 for daily data with a weekly cycle); `start_index` is
/// the 0-based position of the first observation within one period.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub id: String,
    pub values: Vec<f64>,
    pub period: usize,
    pub start_index: usize,
    pub integer_valued: bool,
    pub horizon: usize,
}

pub const MISSING: f64 = f64::NAN;

pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        values: Vec<f64>,
        period: usize,
        horizon: usize,
    ) -> Result<Self> {
        let series = TimeSeries {
            id: id.into(),
            values,
            period,
            start_index: 0,
            integer_valued: false,
            horizon,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Validation(format!(
                "series '{}' has no values",
                self.id
            )));
        }
        if self.period < 1 {
            return Err(Error::Validation(format!(
                "series '{}': period must be >= 1",
                self.id
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Validation(format!(
                "series '{}': horizon must be >= 1",
                self.id
            )));
        }
        if self.start_index >= self.period {
            return Err(Error::Validation(format!(
                "series '{}': start_index {} must be below period {}",
                self.id, self.start_index, self.period
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|&v| is_missing(v))
    }

    /// Phase class of observation `i` within the seasonal cycle.
    pub fn phase_of(&self, i: usize) -> usize {
        (self.start_index + i) % self.period
    }
}

/// A named set of series sharing a seasonal period and (by default) a
/// forecast horizon. Individual series may override the horizon.
#[derive(Debug, Clone)]
pub struct SeriesCollection {
    pub name: String,
    pub series: Vec<TimeSeries>,
    pub horizon: usize,
}

impl SeriesCollection {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.series {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate series id '{}'", s.id)));
            }
        }
        if self.series.is_empty() {
            return Err(Error::Validation("no series found".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

/// Train portion plus the reserved validation target of one series.
#[derive(Debug, Clone)]
pub struct SplitSeries {
    pub train: Vec<f64>,
    pub validation_target: Vec<f64>,
}

/// Row layout of an input CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvFormat {
    /// `id,value` per row; rows of one series are contiguous or at least
    /// grouped by id, series ordered by first appearance.
    Long,
    /// `id,v1,v2,...` — one whole series per row.
    Rows,
}

/// Missing-value replacement policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputePolicy {
    /// Replace by the median of all observed values sharing the phase
    /// (same day of week for daily data, and so on).
    MedianByPhase,
    /// Replace every missing value with 0 (for data where a missing entry
    /// means nothing was recorded).
    ZeroFill,
}

/// Manifest describing a collection on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectionManifest {
    pub name: String,
    pub period: usize,
    pub horizon: usize,
    #[serde(default)]
    pub integer_valued: bool,
    pub files: Vec<String>,
    #[serde(default)]
    pub format: Option<CsvFormat>,
    /// Present when the row format carries a per-series horizon override in
    /// its second column.
    #[serde(default)]
    pub horizon_column: bool,
}

impl CollectionManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Loads and concatenates every file the manifest points at. Paths are
    /// resolved relative to the manifest's own directory.
    pub fn load_collection(&self, manifest_path: &Path) -> Result<SeriesCollection> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut all = Vec::new();
        for file in &self.files {
            let path = base.join(file);
            let loaded = load_collection(
                &path,
                self.format.unwrap_or(CsvFormat::Rows),
                self.period,
                self.horizon,
                self.horizon_column,
            )?;
            all.extend(loaded.series);
        }
        let mut collection = SeriesCollection {
            name: self.name.clone(),
            series: all,
            horizon: self.horizon,
        };
        for s in &mut collection.series {
            s.integer_valued = self.integer_valued;
        }
        collection.validate()?;
        Ok(collection)
    }
}

fn parse_value(field: &str, path: &Path, row: usize, col: usize) -> Result<f64> {
    let trimmed = field.trim();
    if trimmed.is_empty() || trimmed == "NA" {
        return Ok(MISSING);
    }
    trimmed.parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        row,
        col,
        msg: format!("malformed numeric field '{trimmed}'"),
    })
}

/// Loads one CSV file into a collection. Missing markers are preserved;
/// imputation is a separate step. Series keep file order.
pub fn load_collection(
    path: &Path,
    format: CsvFormat,
    period: usize,
    horizon: usize,
    horizon_column: bool,
) -> Result<SeriesCollection> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut series: Vec<TimeSeries> = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::HashMap<String, (Vec<f64>, usize)> =
        std::collections::HashMap::new();

    for (row_idx, line) in text.lines().enumerate() {
        let row = row_idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match format {
            CsvFormat::Rows => {
                if fields.len() < 2 {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        row,
                        col: 1,
                        msg: "row needs an id and at least one value".into(),
                    });
                }
                let id = fields[0].trim().to_string();
                if id.is_empty() {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        row,
                        col: 1,
                        msg: "empty series id".into(),
                    });
                }
                let mut h = horizon;
                let mut start = 1;
                if horizon_column {
                    let f = fields[1].trim();
                    h = f.parse::<usize>().map_err(|_| Error::Parse {
                        path: path.display().to_string(),
                        row,
                        col: 2,
                        msg: format!("malformed horizon field '{f}'"),
                    })?;
                    start = 2;
                }
                let mut values = Vec::with_capacity(fields.len() - start);
                for (k, field) in fields[start..].iter().enumerate() {
                    values.push(parse_value(field, path, row, start + k + 1)?);
                }
                if values.is_empty() {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        row,
                        col: start + 1,
                        msg: "row has no values".into(),
                    });
                }
                if series.iter().any(|s| s.id == id) {
                    return Err(Error::Validation(format!("duplicate series id '{id}'")));
                }
                series.push(TimeSeries {
                    id,
                    values,
                    period,
                    start_index: 0,
                    integer_valued: false,
                    horizon: h,
                });
            }
            CsvFormat::Long => {
                if fields.len() != 2 {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        row,
                        col: 1,
                        msg: format!(
                            "long format expects 'id,value', found {} fields",
                            fields.len()
                        ),
                    });
                }
                let id = fields[0].trim().to_string();
                let value = parse_value(fields[1], path, row, 2)?;
                if !by_id.contains_key(&id) {
                    order.push(id.clone());
                    by_id.insert(id.clone(), (Vec::new(), order.len()));
                }
                by_id.get_mut(&id).unwrap().0.push(value);
            }
        }
    }

    if format == CsvFormat::Long {
        for id in order {
            let (values, _) = by_id.remove(&id).unwrap();
            series.push(TimeSeries {
                id,
                values,
                period,
                start_index: 0,
                integer_valued: false,
                horizon,
            });
        }
    }

    if series.is_empty() {
        return Err(Error::Validation(format!(
            "no series found in {}",
            path.display()
        )));
    }

    let collection = SeriesCollection {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        series,
        horizon,
    };
    collection.validate()?;
    Ok(collection)
}

fn median_of(mut sorted: Vec<f64>) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Replaces missing values. `MedianByPhase` substitutes the median of the
/// observed values in the same phase class; `ZeroFill` substitutes 0.
pub fn impute_missing(series: &TimeSeries, policy: ImputePolicy) -> Result<TimeSeries> {
    if !series.has_missing() {
        return Ok(series.clone());
    }
    let mut out = series.clone();
    match policy {
        ImputePolicy::ZeroFill => {
            for v in &mut out.values {
                if is_missing(*v) {
                    *v = 0.0;
                }
            }
        }
        ImputePolicy::MedianByPhase => {
            let mut medians: Vec<Option<f64>> = vec![None; series.period];
            for i in 0..series.values.len() {
                if is_missing(series.values[i]) {
                    let phase = series.phase_of(i);
                    if medians[phase].is_none() {
                        let observed: Vec<f64> = series
                            .values
                            .iter()
                            .enumerate()
                            .filter(|(j, v)| series.phase_of(*j) == phase && !is_missing(**v))
                            .map(|(_, v)| *v)
                            .collect();
                        if observed.is_empty() {
                            return Err(Error::Imputation {
                                series: series.id.clone(),
                                phase,
                            });
                        }
                        medians[phase] = Some(median_of(observed));
                    }
                    out.values[i] = medians[phase].unwrap();
                }
            }
        }
    }
    Ok(out)
}

/// Reserves the last H values for validation; the rest is the train part.
/// Final testing re-trains on the whole, un-split series.
pub fn split_train_validation(series: &TimeSeries) -> Result<SplitSeries> {
    let h = series.horizon;
    if series.values.len() <= h {
        return Err(Error::Split {
            series: series.id.clone(),
            len: series.values.len(),
            horizon: h,
        });
    }
    let cut = series.values.len() - h;
    Ok(SplitSeries {
        train: series.values[..cut].to_vec(),
        validation_target: series.values[cut..].to_vec(),
    })
}
