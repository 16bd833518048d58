//! Analytic Hierarchy Process for cost-value requirement prioritization.
//!
//! Priorities are the row means of the column-normalized pairwise comparison
//! matrix.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

/// Allowed relative deviation of `a[i][j]·a[j][i]` from 1 before a warning.
pub const RECIPROCITY_TOLERANCE: f64 = 0.05;
const DIAGONAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AhpError {
    #[error("entry ({row}, {col}) is {value}, entries must be positive")]
    NonpositiveEntry { row: String, col: String, value: f64 },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("label sets differ: {0}")]
    LabelMismatch(String),
    #[error("cannot parse matrix: {0}")]
    Parse(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl AhpError {
    pub fn code(&self) -> &'static str {
        match self {
            AhpError::NonpositiveEntry { .. } => "NONPOSITIVE_ENTRY",
            AhpError::InvalidMatrix(_) => "INVALID_MATRIX",
            AhpError::LabelMismatch(_) => "LABEL_MISMATCH",
            AhpError::Parse(_) => "PARSE",
            AhpError::Io(_) => "IO_FAILURE",
        }
    }
}

/// Pairs whose product strays from 1 by more than the reciprocity tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct ReciprocityWarning {
    pub row: String,
    pub col: String,
    pub product: f64,
}

impl std::fmt::Display for ReciprocityWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "a[{0}][{1}]·a[{1}][{0}] = {2}", self.row, self.col, self.product)
    }
}

/// Square matrix of pairwise comparisons; entry (i, j) says how much more
/// requirement i contributes than requirement j.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonMatrix {
    labels: Vec<String>,
    entries: Vec<Vec<f64>>,
}

impl ComparisonMatrix {
    pub fn new(labels: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self, AhpError> {
        let n = labels.len();
        if n < 2 {
            return Err(AhpError::InvalidMatrix("need at least two labels".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(AhpError::InvalidMatrix(format!("duplicate label {l:?}")));
            }
        }
        if entries.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(AhpError::InvalidMatrix(format!("expected a {n}×{n} matrix")));
        }
        for (i, row) in entries.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(AhpError::NonpositiveEntry {
                        row: labels[i].clone(),
                        col: labels[j].clone(),
                        value: v,
                    });
                }
            }
            if (row[i] - 1.0).abs() > DIAGONAL_TOLERANCE {
                return Err(AhpError::InvalidMatrix(format!(
                    "diagonal entry for {:?} is {}, expected 1",
                    labels[i], row[i]
                )));
            }
        }
        Ok(ComparisonMatrix { labels, entries })
    }

    /// Matrix `a[i][j] = w_i / w_j`, perfectly consistent.
    pub fn from_weights(labels: Vec<String>, weights: &[f64]) -> Result<Self, AhpError> {
        let entries = weights
            .iter()
            .map(|wi| weights.iter().map(|wj| wi / wj).collect())
            .collect();
        Self::new(labels, entries)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn reciprocity_warnings(&self) -> Vec<ReciprocityWarning> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let product = self.entries[i][j] * self.entries[j][i];
                if (product - 1.0).abs() > RECIPROCITY_TOLERANCE {
                    out.push(ReciprocityWarning {
                        row: self.labels[i].clone(),
                        col: self.labels[j].clone(),
                        product,
                    });
                }
            }
        }
        out
    }

    /// Read a matrix from CSV: a header row whose first cell is ignored and
    /// whose other cells are labels, then one row per label in the same
    /// order. Cells may be decimals or fractions such as `1/3`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, AhpError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| AhpError::Parse(e.to_string()))?.clone();
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut entries = Vec::with_capacity(labels.len());
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| AhpError::Parse(e.to_string()))?;
            let row_label = record.get(0).unwrap_or_default();
            match labels.get(r) {
                Some(expected) if expected == row_label => {}
                _ => {
                    return Err(AhpError::InvalidMatrix(format!(
                        "row {} is labelled {row_label:?}, expected {:?}",
                        r + 1,
                        labels.get(r)
                    )))
                }
            }
            let row = record
                .iter()
                .skip(1)
                .map(parse_cell)
                .collect::<Result<Vec<f64>, _>>()?;
            entries.push(row);
        }
        Self::new(labels, entries)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, AhpError> {
        let file =
            std::fs::File::open(path).map_err(|e| AhpError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }
}

fn parse_cell(cell: &str) -> Result<f64, AhpError> {
    let bad = || AhpError::Parse(format!("not a number: {cell:?}"));
    match cell.split_once('/') {
        Some((num, den)) => {
            let n: f64 = num.trim().parse().map_err(|_| bad())?;
            let d: f64 = den.trim().parse().map_err(|_| bad())?;
            Ok(n / d)
        }
        None => cell.parse().map_err(|_| bad()),
    }
}

/// Divide every entry by its column sum.
pub fn normalize(m: &ComparisonMatrix) -> Vec<Vec<f64>> {
    let n = m.len();
    let sums: Vec<f64> = (0..n).map(|j| m.entries.iter().map(|r| r[j]).sum()).collect();
    m.entries
        .iter()
        .map(|row| row.iter().zip(&sums).map(|(v, s)| v / s).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorityVector {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl PriorityVector {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.values[i])
    }
}

/// Row means of the normalized matrix.
pub fn priority_vector(m: &ComparisonMatrix) -> PriorityVector {
    let n = m.len() as f64;
    PriorityVector {
        labels: m.labels.clone(),
        values: normalize(m)
            .iter()
            .map(|row| row.iter().sum::<f64>() / n)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostValuePoint {
    pub label: String,
    pub cost_percent: f64,
    pub value_percent: f64,
}

/// Cost and value percentages per requirement, highest value/cost ratio
/// first; ties go to the smaller label.
pub fn cost_value_points(
    value: &PriorityVector,
    cost: &PriorityVector,
) -> Result<Vec<CostValuePoint>, AhpError> {
    let vs: HashSet<&String> = value.labels.iter().collect();
    let cs: HashSet<&String> = cost.labels.iter().collect();
    if vs != cs || vs.len() != value.labels.len() || cs.len() != cost.labels.len() {
        let mut only: Vec<String> = vs.symmetric_difference(&cs).map(|s| s.to_string()).collect();
        only.sort();
        return Err(AhpError::LabelMismatch(if only.is_empty() {
            "duplicate labels".into()
        } else {
            only.join(", ")
        }));
    }
    let mut points: Vec<CostValuePoint> = value
        .labels
        .iter()
        .zip(&value.values)
        .map(|(label, &v)| CostValuePoint {
            label: label.clone(),
            cost_percent: 100.0 * cost.get(label).expect("label sets match"),
            value_percent: 100.0 * v,
        })
        .collect();
    points.sort_by(|a, b| {
        let ra = a.value_percent / a.cost_percent;
        let rb = b.value_percent / b.cost_percent;
        rb.partial_cmp(&ra)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    Ok(points)
}

/// Write points as `label,cost_percent,value_percent` rows.
pub fn write_points_csv<W: std::io::Write>(points: &[CostValuePoint], sink: W) -> Result<(), AhpError> {
    let io = |e: csv::Error| AhpError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["label", "cost_percent", "value_percent"]).map_err(io)?;
    for p in points {
        w.write_record([
            p.label.clone(),
            format!("{:.16e}", p.cost_percent),
            format!("{:.16e}", p.value_percent),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| AhpError::Io(e.to_string()))
}
