//! Tabular datasets: schemas, CSV ingestion, standardization and splits.
//!
//! A [`DatasetSchema`] names the columns to read, how each is encoded, which
//! column is the binary protected attribute (privileged → 1) and which is the
//! target (favourable → 1). Categoricals are ordinal-encoded by sorted
//! category name, so the mapping depends only on the set of values present.
//! The protected attribute stays inside the feature matrix as a 0/1 column,
//! since training flips it.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{self, Purpose};

/// Environment variable pointing at the directory holding `<name>.csv`.
pub const DATA_DIR_ENV: &str = "FAIRVIC_DATA_DIR";

const STD_FLOOR: f64 = 1e-8;

/// Which raw values encode to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryRule {
    /// Value (trimmed) is one of these strings.
    OneOf(Vec<String>),
    /// Value parses as a number strictly greater than the threshold.
    GreaterThan(f64),
}

impl BinaryRule {
    fn encode(&self, raw: &str) -> std::result::Result<f64, String> {
        match self {
            BinaryRule::OneOf(values) => Ok(if values.iter().any(|v| v == raw) {
                1.0
            } else {
                0.0
            }),
            BinaryRule::GreaterThan(t) => raw
                .parse::<f64>()
                .map(|v| if v > *t { 1.0 } else { 0.0 })
                .map_err(|_| format!("{raw:?} is not numeric")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Protected { privileged: BinaryRule },
    Target { favourable: BinaryRule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    fn new(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.to_owned(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
}

impl DatasetSchema {
    /// Checks that there is exactly one target and one protected column.
    pub fn validate(&self) -> Result<()> {
        let count =
            |pred: fn(&ColumnKind) -> bool| self.columns.iter().filter(|c| pred(&c.kind)).count();
        let targets = count(|k| matches!(k, ColumnKind::Target { .. }));
        let protected = count(|k| matches!(k, ColumnKind::Protected { .. }));
        if targets != 1 || protected != 1 {
            return Err(Error::invalid(format!(
                "schema {:?} needs exactly one target and one protected column \
                 (found {targets} and {protected})",
                self.name
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(&c.name) {
                return Err(Error::invalid(format!("duplicate column {:?}", c.name)));
            }
        }
        Ok(())
    }

    /// Parses a schema from TOML text:
    ///
    /// ```toml
    /// name = "toy"
    /// [[columns]]
    /// name = "age"
    /// kind = "protected"
    /// privileged = { greater_than = 25.0 }
    /// [[columns]]
    /// name = "outcome"
    /// kind = "target"
    /// favourable = { one_of = ["good"] }
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Self =
            toml::from_str(text).map_err(|e| Error::invalid(format!("bad schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| !matches!(c.kind, ColumnKind::Target { .. }))
            .map(|c| c.name.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinDataset {
    Adult,
    Compas,
    German,
}

impl BuiltinDataset {
    pub const ALL: [BuiltinDataset; 3] = [Self::Adult, Self::Compas, Self::German];

    pub fn name(self) -> &'static str {
        match self {
            Self::Adult => "adult",
            Self::Compas => "compas",
            Self::German => "german",
        }
    }
}

impl std::fmt::Display for BuiltinDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adult" => Ok(Self::Adult),
            "compas" => Ok(Self::Compas),
            "german" => Ok(Self::German),
            other => Err(Error::invalid(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Schema for one of the three benchmark datasets.
///
/// | dataset | protected | privileged (1) | target | favourable (1) |
/// |---------|-----------|----------------|--------|----------------|
/// | adult   | sex       | Male           | income | >50K           |
/// | compas  | race      | Caucasian      | two_year_recid | 0 (no recidivism) |
/// | german  | age       | > 25           | credit | 1 (good)       |
pub fn builtin_schema(dataset: BuiltinDataset) -> DatasetSchema {
    use ColumnKind::{Categorical as Cat, Continuous as Num};
    let one_of = |v: &[&str]| BinaryRule::OneOf(v.iter().map(|s| s.to_string()).collect());
    let cols: Vec<ColumnSpec> = match dataset {
        BuiltinDataset::Adult => vec![
            ColumnSpec::new("age", Num),
            ColumnSpec::new("workclass", Cat),
            ColumnSpec::new("education-num", Num),
            ColumnSpec::new("marital-status", Cat),
            ColumnSpec::new("occupation", Cat),
            ColumnSpec::new("relationship", Cat),
            ColumnSpec::new("race", Cat),
            ColumnSpec::new(
                "sex",
                ColumnKind::Protected {
                    privileged: one_of(&["Male"]),
                },
            ),
            ColumnSpec::new("capital-gain", Num),
            ColumnSpec::new("capital-loss", Num),
            ColumnSpec::new("hours-per-week", Num),
            ColumnSpec::new(
                "income",
                ColumnKind::Target {
                    favourable: one_of(&[">50K"]),
                },
            ),
        ],
        BuiltinDataset::Compas => vec![
            ColumnSpec::new("sex", Cat),
            ColumnSpec::new("age", Num),
            ColumnSpec::new(
                "race",
                ColumnKind::Protected {
                    privileged: one_of(&["Caucasian"]),
                },
            ),
            ColumnSpec::new("juv_fel_count", Num),
            ColumnSpec::new("juv_misd_count", Num),
            ColumnSpec::new("juv_other_count", Num),
            ColumnSpec::new("priors_count", Num),
            ColumnSpec::new("c_charge_degree", Cat),
            ColumnSpec::new(
                "two_year_recid",
                ColumnKind::Target {
                    favourable: one_of(&["0"]),
                },
            ),
        ],
        BuiltinDataset::German => vec![
            ColumnSpec::new("status", Cat),
            ColumnSpec::new("duration", Num),
            ColumnSpec::new("credit_history", Cat),
            ColumnSpec::new("purpose", Cat),
            ColumnSpec::new("credit_amount", Num),
            ColumnSpec::new("savings", Cat),
            ColumnSpec::new("present_employment", Cat),
            ColumnSpec::new("installment_rate", Num),
            ColumnSpec::new("status_sex", Cat),
            ColumnSpec::new("other_debtors", Cat),
            ColumnSpec::new("residence_since", Num),
            ColumnSpec::new("property", Cat),
            ColumnSpec::new(
                "age",
                ColumnKind::Protected {
                    privileged: BinaryRule::GreaterThan(25.0),
                },
            ),
            ColumnSpec::new("installment_plans", Cat),
            ColumnSpec::new("housing", Cat),
            ColumnSpec::new("number_of_credits", Num),
            ColumnSpec::new("job", Cat),
            ColumnSpec::new("people_liable", Num),
            ColumnSpec::new("telephone", Cat),
            ColumnSpec::new("foreign_worker", Cat),
            ColumnSpec::new(
                "credit",
                ColumnKind::Target {
                    favourable: one_of(&["1"]),
                },
            ),
        ],
    };
    DatasetSchema {
        name: dataset.name().to_owned(),
        columns: cols,
    }
}

/// Train-set column statistics used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Applies the stored transform. Rejects data that is already standardized.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.standardization.is_some() {
            return Err(Error::invalid(format!(
                "dataset {:?} is already standardized",
                data.name
            )));
        }
        if self.means.len() != data.features.cols() {
            return Err(Error::shape(format!(
                "statistics cover {} columns, dataset has {}",
                self.means.len(),
                data.features.cols()
            )));
        }
        let mut out = data.clone();
        let cols = out.features.cols();
        for row in out.features.data_mut().chunks_exact_mut(cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        out.standardization = Some(self.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    /// 1 = favourable label.
    pub labels: Vec<f64>,
    /// 1 = privileged group.
    pub protected: Vec<f64>,
    pub feature_names: Vec<String>,
    pub protected_col: usize,
    /// Set once the features have been z-scored.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<f64>,
        protected_col: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let rows = features.rows();
        if labels.len() != rows {
            return Err(Error::shape(format!(
                "{} labels for {rows} rows",
                labels.len()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if protected_col >= features.cols() {
            return Err(Error::invalid("protected column out of range"));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        let protected = features.column(protected_col);
        if protected.iter().any(|&p| p != 0.0 && p != 1.0) {
            return Err(Error::invalid("protected column must be 0 or 1"));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            protected,
            feature_names,
            protected_col,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            protected: indices.iter().map(|&i| self.protected[i]).collect(),
            feature_names: self.feature_names.clone(),
            protected_col: self.protected_col,
            standardization: self.standardization.clone(),
        }
    }

    /// Same rows with the protected attribute complemented, both in the
    /// feature matrix and in the group vector.
    pub fn with_protected_flipped(&self) -> Result<Self> {
        let mut out = self.clone();
        out.features = crate::loss::flip_protected(&self.features, self.protected_col)?;
        out.protected = self.protected.iter().map(|p| 1.0 - p).collect();
        Ok(out)
    }
}

/// Reads a comma-delimited CSV with a header row.
///
/// Rows with an empty or `?` cell in any schema column are dropped.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    schema.validate()?;
    let load_err = |message: String| Error::Load {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| load_err(e.to_string()))?
        .clone();
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| load_err(format!("missing column {:?}", c.name)))
        })
        .collect::<Result<_>>()?;

    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| load_err(e.to_string()))?;
        let cells: Vec<String> = positions
            .iter()
            .map(|&p| record.get(p).unwrap_or("").to_owned())
            .collect();
        if cells.iter().any(|c| c.is_empty() || c == "?") {
            continue;
        }
        raw_rows.push(cells);
    }

    let categories: Vec<Option<HashMap<String, f64>>> = schema
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| match c.kind {
            ColumnKind::Categorical => {
                let set: BTreeSet<&str> = raw_rows.iter().map(|r| r[j].as_str()).collect();
                Some(
                    set.into_iter()
                        .enumerate()
                        .map(|(code, v)| (v.to_owned(), code as f64))
                        .collect(),
                )
            }
            _ => None,
        })
        .collect();

    let n_features = schema.columns.len() - 1;
    let mut features = Vec::with_capacity(raw_rows.len() * n_features);
    let mut labels = Vec::with_capacity(raw_rows.len());
    let mut protected_col = 0;
    for (r, row) in raw_rows.iter().enumerate() {
        let mut f = 0;
        for (j, (cell, col)) in row.iter().zip(&schema.columns).enumerate() {
            let cell_err =
                |msg: String| load_err(format!("row {} column {:?}: {msg}", r + 1, col.name));
            match &col.kind {
                ColumnKind::Continuous => {
                    let v: f64 = cell
                        .parse()
                        .map_err(|_| cell_err(format!("{cell:?} is not numeric")))?;
                    if !v.is_finite() {
                        return Err(cell_err(format!("{cell:?} is not finite")));
                    }
                    features.push(v);
                    f += 1;
                }
                ColumnKind::Categorical => {
                    features.push(categories[j].as_ref().unwrap()[cell]);
                    f += 1;
                }
                ColumnKind::Protected { privileged } => {
                    features.push(privileged.encode(cell).map_err(cell_err)?);
                    protected_col = f;
                    f += 1;
                }
                ColumnKind::Target { favourable } => {
                    labels.push(favourable.encode(cell).map_err(cell_err)?);
                }
            }
        }
    }
    if labels.is_empty() {
        return Err(load_err("no complete rows".into()));
    }

    let features = Matrix::from_vec(labels.len(), n_features, features)?;
    Dataset::new(
        schema.name.clone(),
        features,
        labels,
        protected_col,
        schema.feature_names(),
    )
}

/// Directory holding the benchmark CSVs: `$FAIRVIC_DATA_DIR`, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub fn load_builtin(dataset: BuiltinDataset, dir: impl AsRef<Path>) -> Result<Dataset> {
    let path = dir.as_ref().join(format!("{}.csv", dataset.name()));
    load_csv(path, &builtin_schema(dataset))
}

/// Z-scores every feature column except the protected one using `train`
/// statistics (population std, floored at 1e-8), and applies the same
/// transform to `others`.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    if train.is_empty() {
        return Err(Error::invalid("cannot standardize an empty training set"));
    }
    let (n, d) = train.features.shape();
    let nf = n as f64;
    let sums = train.features.column_sums();
    let mut means: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let mut sq = vec![0.0; d];
    for r in 0..n {
        for (j, s) in sq.iter_mut().enumerate() {
            let c = train.features.get(r, j) - means[j];
            *s += c * c;
        }
    }
    let mut stds: Vec<f64> = sq.iter().map(|s| (s / nf).sqrt().max(STD_FLOOR)).collect();
    means[train.protected_col] = 0.0;
    stds[train.protected_col] = 1.0;

    let stats = Standardization { means, stds };
    let train = stats.apply(train)?;
    let others = others
        .iter()
        .map(|o| stats.apply(o))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, others))
}

/// Seeded random split. The test side gets `round(n·test_fraction)` rows.
pub fn train_test_split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = data.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} leaves an empty side for {n} rows"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::stream(seed, Purpose::Split, &[]));
    let (test, train) = idx.split_at(n_test);
    Ok((data.subset(train), data.subset(test)))
}
