//! Loading of per-view feature tables and survival tables, and alignment of
//! all inputs onto one canonical sample order.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One view of the samples: rows are samples, columns are features.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    sample_ids: Vec<String>,
    values: DMatrix<f64>,
    view_name: String,
}

impl DataMatrix {
    pub fn new(view_name: impl Into<String>, sample_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if sample_ids.len() != values.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                values.nrows()
            )));
        }
        if values.nrows() < 2 {
            return Err(Error::TooFewSamples {
                found: values.nrows(),
                required: 2,
            });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidArgument("data matrix has no features".into()));
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        for (row, id) in sample_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSampleId {
                    path: Default::default(),
                    id: id.clone(),
                    row: row + 1,
                });
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::NonFinite(format!(
                "sample {:?}, feature {}",
                sample_ids[row],
                col + 1
            )));
        }
        Ok(Self {
            sample_ids,
            values,
            view_name: view_name.into(),
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn view_name(&self) -> &str {
        &self.view_name
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Keep only the listed samples, in the listed order.
    fn select(&self, ids: &[String]) -> DataMatrix {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
        let values = DMatrix::from_fn(rows.len(), self.n_features(), |r, c| self.values[(rows[r], c)]);
        DataMatrix {
            sample_ids: ids.to_vec(),
            values,
            view_name: self.view_name.clone(),
        }
    }
}

/// Follow-up of one sample. `event` is true when death was observed and
/// false when the sample was censored at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub sample_id: String,
    pub time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(sample_id: impl Into<String>, time: f64, event: bool) -> Self {
        Self {
            sample_id: sample_id.into(),
            time,
            event,
        }
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Read a feature CSV: header `sample_id,<feature>...`, one sample per row.
///
/// Row numbers in errors are 1-based file lines (the header is line 1);
/// column numbers are 1-based fields.
pub fn load_matrix(path: impl AsRef<Path>, view_name: &str) -> Result<DataMatrix> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("sample_id") {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "first header field must be \"sample_id\"".into(),
        });
    }
    let width = header.len();
    if width < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no feature columns".into(),
        });
    }

    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut flat = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 2;
        if record.len() != width {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected: width,
                found: record.len(),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSampleId {
                path: path.to_path_buf(),
                id,
                row,
            });
        }
        for (col, cell) in record.iter().enumerate().skip(1) {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => flat.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        path: path.to_path_buf(),
                        row,
                        col: col + 1,
                        value: cell.to_string(),
                    })
                }
            }
        }
        ids.push(id);
    }
    let values = DMatrix::from_row_slice(ids.len(), width - 1, &flat);
    DataMatrix::new(view_name, ids, values)
}

/// Read a survival CSV with header exactly `sample_id,time,event`.
pub fn load_survival(path: impl AsRef<Path>) -> Result<Vec<SurvivalRecord>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["sample_id", "time", "event"] {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "header must be exactly sample_id,time,event".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 2;
        if record.len() != 3 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected: 3,
                found: record.len(),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSampleId {
                path: path.to_path_buf(),
                id,
                row,
            });
        }
        let time = match record[1].parse::<f64>() {
            Ok(t) if t.is_finite() => t,
            _ => {
                return Err(Error::NonNumeric {
                    path: path.to_path_buf(),
                    row,
                    col: 2,
                    value: record[1].to_string(),
                })
            }
        };
        if time < 0.0 {
            return Err(Error::NegativeTime {
                path: path.to_path_buf(),
                row,
                value: time,
            });
        }
        let event = match &record[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::InvalidEvent {
                    path: path.to_path_buf(),
                    row,
                    value: other.to_string(),
                })
            }
        };
        out.push(SurvivalRecord::new(id, time, event));
    }
    Ok(out)
}

/// Restrict every input to the samples present in all of them, ordered
/// ascending by sample id.
pub fn align_samples(
    views: &[DataMatrix],
    survival: &[SurvivalRecord],
) -> Result<(Vec<DataMatrix>, Vec<SurvivalRecord>)> {
    let Some(first) = views.first() else {
        return Err(Error::InvalidArgument("at least one view is required".into()));
    };
    let mut common: BTreeSet<&str> = first.sample_ids().iter().map(String::as_str).collect();
    for view in &views[1..] {
        let ids: HashSet<&str> = view.sample_ids().iter().map(String::as_str).collect();
        common.retain(|id| ids.contains(id));
    }
    let surv_ids: HashSet<&str> = survival.iter().map(|r| r.sample_id.as_str()).collect();
    common.retain(|id| surv_ids.contains(id));

    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    if common.len() < 2 {
        return Err(Error::TooFewSamples {
            found: common.len(),
            required: 2,
        });
    }
    let order: Vec<String> = common.into_iter().map(str::to_string).collect();

    let aligned_views = views.iter().map(|v| v.select(&order)).collect();
    let by_id: HashMap<&str, &SurvivalRecord> = survival.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let aligned_survival = order.iter().map(|id| by_id[id.as_str()].clone()).collect();
    Ok((aligned_views, aligned_survival))
}
