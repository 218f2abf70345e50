//! CSV readers and writers for checkpoint series, transactions and response tables.
//!
//! Every reader checks the header line exactly, rejects an empty data section and reports
//! failures with the 1-based data row and the file line it sits on.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};
use demlab::clusterse::{ClusterAggregates, ClusteredRecord, ClusteredRecords};
use demlab::seqkit::Checkpoint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_HEADER: [&str; 7] = [
    "experiment_id",
    "variant_id",
    "metric_id",
    "time_index",
    "count_c",
    "mean_c",
    "variance_c",
];
pub const TRANSACTION_HEADER: [&str; 3] = ["user_id", "product_id", "value"];
pub const TRANSACTION_HEADER_NO_PRODUCT: [&str; 2] = ["user_id", "value"];
pub const RESPONSE_HEADER: [&str; 3] = ["unit_id", "group", "value"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or wrong header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("no rows")]
    Empty,
    #[error("row {row} (line {line}): {message}")]
    Row {
        row: usize,
        line: u64,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type DataResult<T> = std::result::Result<T, DataError>;

fn open(path: &Path) -> DataResult<File> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads the header and hands out data records with their row and line numbers.
struct Records<R: Read> {
    reader: csv::Reader<R>,
    record: StringRecord,
    row: usize,
}

impl<R: Read> Records<R> {
    fn new(input: R, accepted: &[&[&str]]) -> DataResult<(Self, usize)> {
        let mut reader = ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut header = StringRecord::new();
        if !reader.read_record(&mut header)? {
            return Err(DataError::Header {
                expected: accepted[0].join(","),
                found: String::new(),
            });
        }
        let found: Vec<&str> = header.iter().collect();
        let which = accepted
            .iter()
            .position(|h| *h == found.as_slice())
            .ok_or_else(|| DataError::Header {
                expected: accepted
                    .iter()
                    .map(|h| h.join(","))
                    .collect::<Vec<_>>()
                    .join("` or `"),
                found: found.join(","),
            })?;
        let width = accepted[which].len();
        Ok((
            Self {
                reader,
                record: StringRecord::new(),
                row: 0,
            },
            width,
        ))
    }

    /// Next record, checked to have `width` fields.
    fn next(&mut self, width: usize) -> DataResult<Option<Row<'_>>> {
        if !self.reader.read_record(&mut self.record)? {
            return Ok(None);
        }
        self.row += 1;
        let line = self.record.position().map_or(0, |p| p.line());
        let row = Row {
            record: &self.record,
            row: self.row,
            line,
        };
        if self.record.len() != width {
            return Err(row.error(format!(
                "expected {width} fields, found {}",
                self.record.len()
            )));
        }
        Ok(Some(row))
    }
}

struct Row<'a> {
    record: &'a StringRecord,
    row: usize,
    line: u64,
}

impl Row<'_> {
    fn error(&self, message: impl Into<String>) -> DataError {
        DataError::Row {
            row: self.row,
            line: self.line,
            message: message.into(),
        }
    }

    fn text(&self, i: usize, name: &str) -> DataResult<String> {
        let s = &self.record[i];
        if s.is_empty() {
            return Err(self.error(format!("empty {name}")));
        }
        Ok(s.to_string())
    }

    fn real(&self, i: usize, name: &str) -> DataResult<f64> {
        let s = &self.record[i];
        let v: f64 = s
            .parse()
            .map_err(|_| self.error(format!("{name} is not a number: '{s}'")))?;
        if !v.is_finite() {
            return Err(self.error(format!("{name} is not finite: '{s}'")));
        }
        Ok(v)
    }

    fn count(&self, i: usize, name: &str) -> DataResult<u64> {
        let s = &self.record[i];
        s.parse()
            .map_err(|_| self.error(format!("{name} is not a non-negative integer: '{s}'")))
    }
}

/// One cumulative checkpoint of one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub time_index: u64,
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSeries {
    pub variant_id: String,
    pub rows: Vec<CheckpointRow>,
}

/// All variants of one metric in one experiment, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub experiment_id: String,
    pub metric_id: String,
    pub variants: Vec<VariantSeries>,
}

impl CheckpointSeries {
    /// Pairs the two variants by time index, the first variant as control.
    pub fn to_checkpoints(&self) -> DataResult<Vec<Checkpoint>> {
        let [a, b] = self.variants.as_slice() else {
            return Err(DataError::Invalid(format!(
                "experiment '{}' metric '{}' has {} variants; two-sample monitors need exactly two",
                self.experiment_id,
                self.metric_id,
                self.variants.len()
            )));
        };
        let times = |v: &VariantSeries| v.rows.iter().map(|r| r.time_index).collect::<Vec<_>>();
        if times(a) != times(b) {
            return Err(DataError::Invalid(format!(
                "experiment '{}' metric '{}': variants '{}' and '{}' have different time indices",
                self.experiment_id, self.metric_id, a.variant_id, b.variant_id
            )));
        }
        Ok(a.rows
            .iter()
            .zip(&b.rows)
            .map(|(ra, rb)| Checkpoint {
                t: ra.time_index as f64,
                n_a: ra.count,
                mean_a: ra.mean,
                var_a: ra.variance,
                n_b: rb.count,
                mean_b: rb.mean,
                var_b: rb.variance,
            })
            .collect())
    }
}

pub fn read_checkpoint_csv(path: &Path) -> DataResult<Vec<CheckpointSeries>> {
    parse_checkpoints(open(path)?)
}

/// Groups rows by experiment and metric. Within a variant, time indices must strictly
/// increase and cumulative counts must not decrease, in file order.
pub fn parse_checkpoints<R: Read>(input: R) -> DataResult<Vec<CheckpointSeries>> {
    let (mut records, width) = Records::new(input, &[&CHECKPOINT_HEADER])?;
    let mut series: Vec<CheckpointSeries> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    while let Some(row) = records.next(width)? {
        let experiment_id = row.text(0, "experiment_id")?;
        let variant_id = row.text(1, "variant_id")?;
        let metric_id = row.text(2, "metric_id")?;
        let point = CheckpointRow {
            time_index: row.count(3, "time_index")?,
            count: row.count(4, "count_c")?,
            mean: row.real(5, "mean_c")?,
            variance: row.real(6, "variance_c")?,
        };
        if point.variance < 0.0 {
            return Err(row.error(format!("negative variance_c {}", point.variance)));
        }
        let key = (experiment_id, metric_id);
        let s = *index.entry(key.clone()).or_insert_with(|| {
            series.push(CheckpointSeries {
                experiment_id: key.0.clone(),
                metric_id: key.1.clone(),
                variants: Vec::new(),
            });
            series.len() - 1
        });
        let variants = &mut series[s].variants;
        let v = match variants.iter().position(|v| v.variant_id == variant_id) {
            Some(v) => v,
            None => {
                variants.push(VariantSeries {
                    variant_id,
                    rows: Vec::new(),
                });
                variants.len() - 1
            }
        };
        if let Some(prev) = variants[v].rows.last() {
            if point.time_index <= prev.time_index {
                return Err(row.error(format!(
                    "time_index {} does not increase (previous {})",
                    point.time_index, prev.time_index
                )));
            }
            if point.count < prev.count {
                return Err(row.error(format!(
                    "count_c decreased from {} to {}",
                    prev.count, point.count
                )));
            }
        }
        variants[v].rows.push(point);
    }
    if series.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(series)
}

pub fn write_checkpoints<W: Write>(out: W, series: &[CheckpointSeries]) -> DataResult<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(CHECKPOINT_HEADER)?;
    for s in series {
        for v in &s.variants {
            for r in &v.rows {
                w.write_record([
                    s.experiment_id.as_str(),
                    v.variant_id.as_str(),
                    s.metric_id.as_str(),
                    &r.time_index.to_string(),
                    &r.count.to_string(),
                    &r.mean.to_string(),
                    &r.variance.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| DataError::Csv(e.into()))
}

fn transaction_rows<R: Read>(
    input: R,
) -> DataResult<impl Iterator<Item = DataResult<ClusteredRecord>>> {
    let (mut records, width) = Records::new(
        input,
        &[&TRANSACTION_HEADER, &TRANSACTION_HEADER_NO_PRODUCT],
    )?;
    let mut done = false;
    Ok(std::iter::from_fn(move || {
        if done {
            return None;
        }
        let parsed = match records.next(width) {
            Err(e) => Some(Err(e)),
            Ok(None) => None,
            Ok(Some(row)) => Some(row.text(0, "user_id").and_then(|user| {
                if width == 3 {
                    let product = row.text(1, "product_id")?;
                    Ok(ClusteredRecord::new(
                        user,
                        Some(product),
                        row.real(2, "value")?,
                    ))
                } else {
                    Ok(ClusteredRecord::new(user, None, row.real(1, "value")?))
                }
            })),
        };
        if !matches!(parsed, Some(Ok(_))) {
            done = true;
        }
        parsed
    }))
}

pub fn read_transactions_csv(path: &Path) -> DataResult<ClusteredRecords> {
    parse_transactions(open(path)?)
}

pub fn parse_transactions<R: Read>(input: R) -> DataResult<ClusteredRecords> {
    let rows = transaction_rows(input)?.collect::<DataResult<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    ClusteredRecords::new(rows).map_err(|e| DataError::Invalid(e.to_string()))
}

/// Folds a transactions file straight into bootstrap aggregates without keeping the rows.
pub fn aggregate_transactions_csv(path: &Path) -> DataResult<ClusterAggregates> {
    let mut stream_error = None;
    let mut seen = 0usize;
    let rows = transaction_rows(open(path)?)?.map_while(|r| match r {
        Ok(rec) => {
            seen += 1;
            Some(Ok(rec))
        }
        Err(e) => {
            stream_error = Some(e);
            None
        }
    });
    let agg = ClusterAggregates::from_rows(rows);
    if let Some(e) = stream_error {
        return Err(e);
    }
    if seen == 0 {
        return Err(DataError::Empty);
    }
    agg.map_err(|e| DataError::Invalid(e.to_string()))
}

pub fn write_transactions<W: Write>(out: W, records: &ClusteredRecords) -> DataResult<()> {
    let with_products = records.rows().iter().any(|r| r.product_id.is_some());
    let mut w = WriterBuilder::new().from_writer(out);
    if with_products {
        w.write_record(TRANSACTION_HEADER)?;
    } else {
        w.write_record(TRANSACTION_HEADER_NO_PRODUCT)?;
    }
    for r in records.rows() {
        let value = r.value.to_string();
        match &r.product_id {
            Some(p) if with_products => w.write_record([r.user_id.as_str(), p, &value])?,
            _ => w.write_record([r.user_id.as_str(), &value])?,
        }
    }
    w.flush().map_err(|e| DataError::Csv(e.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub unit_id: String,
    pub group: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub rows: Vec<Response>,
}

impl ResponseTable {
    /// Group labels in order of first appearance.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.group.as_str()) {
                out.push(&r.group);
            }
        }
        out
    }

    pub fn values(&self, group: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.group == group)
            .map(|r| r.value)
            .collect()
    }
}

pub fn read_responses_csv(path: &Path) -> DataResult<ResponseTable> {
    parse_responses(open(path)?)
}

pub fn parse_responses<R: Read>(input: R) -> DataResult<ResponseTable> {
    let (mut records, width) = Records::new(input, &[&RESPONSE_HEADER])?;
    let mut rows = Vec::new();
    while let Some(row) = records.next(width)? {
        rows.push(Response {
            unit_id: row.text(0, "unit_id")?,
            group: row.text(1, "group")?,
            value: row.real(2, "value")?,
        });
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(ResponseTable { rows })
}

pub fn write_responses<W: Write>(out: W, table: &ResponseTable) -> DataResult<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(RESPONSE_HEADER)?;
    for r in &table.rows {
        w.write_record([r.unit_id.as_str(), r.group.as_str(), &r.value.to_string()])?;
    }
    w.flush().map_err(|e| DataError::Csv(e.into()))
}
