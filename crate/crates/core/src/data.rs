//! Longitudinal datasets: subjects observed at irregular times.
//!
//! The intercept covariate `x_0 ≡ 1` is implicit; an observation stores only
//! the `d` additional covariates.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TvcmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub response: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub observations: Vec<Observation>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, observations: Vec<Observation>) -> Self {
        Self {
            id: id.into(),
            observations,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Immutable, validated longitudinal dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongitudinalDataset {
    subjects: Vec<SubjectRecord>,
    covariate_dim: usize,
    time_domain: (f64, f64),
}

impl LongitudinalDataset {
    /// Validate and build a dataset.
    ///
    /// Observations are stably sorted by time within each subject. When
    /// `time_domain` is `None` it defaults to the observed `[min t, max t]`.
    pub fn new(
        mut subjects: Vec<SubjectRecord>,
        covariate_dim: usize,
        time_domain: Option<(f64, f64)>,
    ) -> Result<Self> {
        if subjects.is_empty() || subjects.iter().all(SubjectRecord::is_empty) {
            return Err(TvcmError::EmptyData);
        }
        let mut seen = HashMap::with_capacity(subjects.len());
        for subject in &mut subjects {
            if subject.is_empty() {
                return Err(TvcmError::InvalidData(format!(
                    "subject `{}` has no observations",
                    subject.id
                )));
            }
            if seen.insert(subject.id.clone(), ()).is_some() {
                return Err(TvcmError::InvalidData(format!(
                    "duplicate subject id `{}`",
                    subject.id
                )));
            }
            for obs in &subject.observations {
                if obs.covariates.len() != covariate_dim {
                    return Err(TvcmError::InvalidData(format!(
                        "subject `{}` has an observation with {} covariates, expected {}",
                        subject.id,
                        obs.covariates.len(),
                        covariate_dim
                    )));
                }
                let finite = obs.time.is_finite()
                    && obs.response.is_finite()
                    && obs.covariates.iter().all(|x| x.is_finite());
                if !finite {
                    return Err(TvcmError::InvalidData(format!(
                        "subject `{}` has a non-finite value",
                        subject.id
                    )));
                }
            }
            subject
                .observations
                .sort_by(|a, b| a.time.total_cmp(&b.time));
        }

        let (lo, hi) = subjects
            .iter()
            .flat_map(|s| s.observations.iter().map(|o| o.time))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                (lo.min(t), hi.max(t))
            });
        let time_domain = match time_domain {
            Some((a, b)) => {
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(TvcmError::InvalidData(format!(
                        "invalid time domain [{a}, {b}]"
                    )));
                }
                if lo < a || hi > b {
                    return Err(TvcmError::InvalidData(format!(
                        "observation times [{lo}, {hi}] fall outside the time domain [{a}, {b}]"
                    )));
                }
                (a, b)
            }
            None => (lo, hi),
        };

        Ok(Self {
            subjects,
            covariate_dim,
            time_domain,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    /// Number of subjects `n`.
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Total number of observations `N`.
    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(SubjectRecord::len).sum()
    }

    /// Number of covariates `d`, excluding the intercept.
    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn time_domain(&self) -> (f64, f64) {
        self.time_domain
    }

    /// Copy of the dataset with a different declared time domain.
    pub fn with_time_domain(&self, domain: (f64, f64)) -> Result<Self> {
        Self::new(self.subjects.clone(), self.covariate_dim, Some(domain))
    }

    /// All observations in row order (subject by subject).
    pub fn observations(&self) -> impl Iterator<Item = &Observation> + '_ {
        self.subjects.iter().flat_map(|s| s.observations.iter())
    }

    /// Observation times in row order.
    pub fn times(&self) -> Vec<f64> {
        self.observations().map(|o| o.time).collect()
    }

    /// Responses in row order.
    pub fn responses(&self) -> Vec<f64> {
        self.observations().map(|o| o.response).collect()
    }

    /// Subject index of every row.
    pub fn row_subjects(&self) -> Vec<usize> {
        self.subjects
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.len()))
            .collect()
    }

    /// Keep only the rows for which `keep(row)` is true; subjects left empty
    /// are dropped. The declared time domain is preserved.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let mut row = 0;
        let mut subjects = Vec::with_capacity(self.subjects.len());
        for subject in &self.subjects {
            let observations: Vec<Observation> = subject
                .observations
                .iter()
                .filter(|_| {
                    let k = keep(row);
                    row += 1;
                    k
                })
                .cloned()
                .collect();
            if !observations.is_empty() {
                subjects.push(SubjectRecord::new(subject.id.clone(), observations));
            }
        }
        Self::new(subjects, self.covariate_dim, Some(self.time_domain))
    }

    /// Write the dataset as long-format CSV (`subject,time,y,x1,...,xd`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["subject".to_string(), "time".into(), "y".into()];
        header.extend((1..=self.covariate_dim).map(|r| format!("x{r}")));
        wtr.write_record(&header)?;
        for subject in &self.subjects {
            for obs in &subject.observations {
                let mut record = vec![
                    subject.id.clone(),
                    format_float(obs.time),
                    format_float(obs.response),
                ];
                record.extend(obs.covariates.iter().map(|&x| format_float(x)));
                wtr.write_record(&record)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Shortest decimal representation that parses back to the same `f64`.
fn format_float(x: f64) -> String {
    format!("{x:?}")
}

/// Column names used by [`ingest_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub subject: String,
    pub time: String,
    pub response: String,
    /// Covariate columns, in order. `None` takes every other header column.
    pub covariates: Option<Vec<String>>,
    pub time_domain: Option<(f64, f64)>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            time: "time".into(),
            response: "y".into(),
            covariates: None,
            time_domain: None,
        }
    }
}

/// Read a long-format CSV file into a dataset.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LongitudinalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Parse long-format CSV from any reader.
///
/// Rows are grouped by subject id in order of first appearance; row numbers
/// in parse errors count data rows from 1 (the header is not counted).
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<LongitudinalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(TvcmError::EmptyData);
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TvcmError::Schema(format!("missing column `{name}`")))
    };
    let subject_col = find(&schema.subject)?;
    let time_col = find(&schema.time)?;
    let response_col = find(&schema.response)?;
    let covariate_cols: Vec<(usize, String)> = match &schema.covariates {
        Some(names) => names
            .iter()
            .map(|n| find(n).map(|i| (i, n.clone())))
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![subject_col, time_col, response_col].contains(i))
            .map(|(i, h)| (i, h.to_string()))
            .collect(),
    };

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Observation>> = HashMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let cell = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TvcmError::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("`{raw}` is not a finite number"),
                })
        };
        let id = record.get(subject_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(TvcmError::Parse {
                row,
                column: schema.subject.clone(),
                message: "empty subject id".into(),
            });
        }
        let time = cell(time_col, &schema.time)?;
        let response = cell(response_col, &schema.response)?;
        let covariates = covariate_cols
            .iter()
            .map(|(col, name)| cell(*col, name))
            .collect::<Result<Vec<_>>>()?;
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(Observation {
                time,
                response,
                covariates,
            });
    }
    if order.is_empty() {
        return Err(TvcmError::EmptyData);
    }
    let subjects = order
        .into_iter()
        .map(|id| {
            let obs = groups.remove(&id).unwrap_or_default();
            SubjectRecord::new(id, obs)
        })
        .collect();
    LongitudinalDataset::new(subjects, covariate_cols.len(), schema.time_domain)
}

/// Subject-uniform weights `w_i = 1 / (n · n_i)`, one entry per row.
pub fn subject_uniform_weights(data: &LongitudinalDataset) -> Vec<f64> {
    let n = data.n_subjects() as f64;
    data.subjects()
        .iter()
        .flat_map(|s| std::iter::repeat_n(1.0 / (n * s.len() as f64), s.len()))
        .collect()
}
