use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Header of an optional leading column of integer timestamps.
pub const TIMESTAMP_COLUMN: &str = "timestamp";

/// A `T×N` multivariate series: one row per time step, one column per node.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub node_names: Vec<String>,
    pub timestamps: Option<Vec<i64>>,
    values: Tensor,
}

impl SeriesDataset {
    pub fn new(
        name: impl Into<String>,
        node_names: Vec<String>,
        timestamps: Option<Vec<i64>>,
        values: Tensor,
    ) -> Result<Self> {
        let name = name.into();
        let s = values.shape();
        if s.len() != 2 {
            return Err(Error::shape("dataset", format!("values {s:?} must be T×N")));
        }
        if s[1] < 2 {
            return Err(Error::Contract(format!(
                "dataset needs N ≥ 2 nodes, got {}",
                s[1]
            )));
        }
        if node_names.len() != s[1] {
            return Err(Error::shape(
                "dataset",
                format!("{} names for {} nodes", node_names.len(), s[1]),
            ));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != s[0] {
                return Err(Error::shape(
                    "dataset",
                    format!("{} timestamps for {} rows", ts.len(), s[0]),
                ));
            }
            if let Some(i) = ts.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::Contract(format!(
                    "timestamps not increasing at row {}",
                    i + 1
                )));
            }
        }
        let bad: Vec<usize> = values
            .data()
            .chunks(s[1])
            .enumerate()
            .filter(|(_, r)| r.iter().any(|v| v.is_nan()))
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(Error::NanRows {
                path: name.into(),
                rows: bad,
            });
        }
        Ok(SeriesDataset {
            name,
            node_names,
            timestamps,
            values,
        })
    }

    /// Nodes named `node0, node1, …`, no timestamps.
    pub fn from_values(name: impl Into<String>, values: Tensor) -> Result<Self> {
        let n = values.shape().get(1).copied().unwrap_or(0);
        let names = (0..n).map(|i| format!("node{i}")).collect();
        Self::new(name, names, None, values)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[1]
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let n = self.nodes();
        let values = Tensor::new(
            &[end - start, n],
            self.values.data()[start * n..end * n].to_vec(),
        )?;
        SeriesDataset::new(
            self.name.clone(),
            self.node_names.clone(),
            self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
            values,
        )
    }

    /// Writes the dataset in the format [`load_csv`] reads.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let mut header: Vec<&str> = Vec::new();
        if self.timestamps.is_some() {
            header.push(TIMESTAMP_COLUMN);
        }
        header.extend(self.node_names.iter().map(String::as_str));
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (t, row) in self.values.data().chunks(self.nodes()).enumerate() {
            if let Some(ts) = &self.timestamps {
                write!(w, "{},", ts[t]).map_err(io)?;
            }
            writeln!(w, "{}", format_row(row)).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Formats an `f64` with 17 significant digits, which round-trips exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_row(row: &[f64]) -> String {
    row.iter()
        .map(|&v| format_f64(v))
        .collect::<Vec<_>>()
        .join(",")
}

/// Reads a header row of node names followed by one numeric row per time step.
/// A first column headed `timestamp` is read as integer timestamps.
///
/// Error coordinates are 1-based file line and column, so the header is line 1.
pub fn load_csv(path: &Path) -> Result<SeriesDataset> {
    let shown = path.to_path_buf();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: shown.clone(),
        line,
        reason,
    };
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let has_ts = header
        .get(0)
        .is_some_and(|h| h.eq_ignore_ascii_case(TIMESTAMP_COLUMN));
    let skip = usize::from(has_ts);
    let node_names: Vec<String> = header.iter().skip(skip).map(str::to_owned).collect();
    let width = header.len();
    let n = node_names.len();

    let mut data = Vec::new();
    let mut timestamps = Vec::new();
    let mut nan_rows = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        if has_ts {
            let cell = &record[0];
            let ts = cell.parse::<i64>().map_err(|_| Error::Cell {
                path: shown.clone(),
                row: line,
                col: 1,
                value: cell.to_owned(),
            })?;
            timestamps.push(ts);
        }
        let mut has_nan = false;
        for (j, cell) in record.iter().enumerate().skip(skip) {
            let v = cell.parse::<f64>().map_err(|_| Error::Cell {
                path: shown.clone(),
                row: line,
                col: j + 1,
                value: cell.to_owned(),
            })?;
            has_nan |= v.is_nan();
            data.push(v);
        }
        if has_nan {
            nan_rows.push(line);
        }
        rows += 1;
    }
    if !nan_rows.is_empty() {
        return Err(Error::NanRows {
            path: shown,
            rows: nan_rows,
        });
    }
    let values = Tensor::new(&[rows, n], data)?;
    let name = path.file_stem().map_or_else(
        || shown.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    SeriesDataset::new(name, node_names, has_ts.then_some(timestamps), values)
}

/// Writes a dense matrix as headerless CSV with round-trippable numbers.
pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let s = m.shape();
    if s.len() != 2 {
        return Err(Error::shape(
            "write_matrix_csv",
            format!("{s:?} is not a matrix"),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in m.data().chunks(s[1]) {
        writeln!(w, "{}", format_row(row)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a headerless numeric CSV matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let shown = path.to_path_buf();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: shown.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rows + 1;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::Parse {
                path: shown,
                line,
                reason: format!(
                    "expected {} fields, found {}",
                    cols.unwrap_or(0),
                    record.len()
                ),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            data.push(cell.parse::<f64>().map_err(|_| Error::Cell {
                path: shown.clone(),
                row: line,
                col: j + 1,
                value: cell.to_owned(),
            })?);
        }
        rows += 1;
    }
    Tensor::new(&[rows, cols.unwrap_or(0)], data)
}
