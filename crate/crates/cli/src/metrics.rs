//! Per-round metrics CSV: written append-only and flushed after every row.

use std::fs::File;
use std::path::{Path, PathBuf};

use hetfl_core::server::RoundReport;
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 8] = [
    "round",
    "global_kn_acc",
    "mean_local_acc",
    "mean_local_train_acc",
    "bytes_up",
    "bytes_down",
    "cumulative_bytes",
    "distinct_clients",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u32,
    pub global_kn_acc: f64,
    pub mean_local_acc: f64,
    pub mean_local_train_acc: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub cumulative_bytes: u64,
    pub distinct_clients: u64,
}

impl From<&RoundReport> for MetricsRow {
    fn from(r: &RoundReport) -> Self {
        MetricsRow {
            round: r.round,
            global_kn_acc: r.global_accuracy,
            mean_local_acc: r.mean_local_accuracy,
            mean_local_train_acc: r.mean_local_train_accuracy,
            bytes_up: r.bytes_up,
            bytes_down: r.bytes_down,
            cumulative_bytes: r.cumulative_bytes,
            distinct_clients: r.distinct_clients,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: header is {found:?}, expected {expected}")]
    Header { path: PathBuf, found: Vec<String>, expected: String },
    #[error("{path}: no rounds recorded")]
    Empty { path: PathBuf },
}

pub struct MetricsSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsSink {
    /// Truncates `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self, MetricsError> {
        let file = File::create(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut sink = MetricsSink {
            path: path.to_path_buf(),
            writer: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        };
        sink.writer.write_record(HEADER).map_err(|e| sink.csv_err(e))?;
        sink.flush()?;
        Ok(sink)
    }

    fn csv_err(&self, source: csv::Error) -> MetricsError {
        MetricsError::Csv {
            path: self.path.clone(),
            source,
        }
    }

    fn flush(&mut self) -> Result<(), MetricsError> {
        self.writer.flush().map_err(|source| MetricsError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<(), MetricsError> {
        let fields = [
            row.round.to_string(),
            format!("{:.6}", row.global_kn_acc),
            format!("{:.6}", row.mean_local_acc),
            format!("{:.6}", row.mean_local_train_acc),
            row.bytes_up.to_string(),
            row.bytes_down.to_string(),
            row.cumulative_bytes.to_string(),
            row.distinct_clients.to_string(),
        ];
        self.writer.write_record(&fields).map_err(|e| self.csv_err(e))?;
        self.flush()
    }
}

/// Reads a metrics file, checking the header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let csv_err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != HEADER {
        return Err(MetricsError::Header {
            path: path.to_path_buf(),
            found: header,
            expected: HEADER.join(","),
        });
    }
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(csv_err)?;
    if rows.is_empty() {
        return Err(MetricsError::Empty { path: path.to_path_buf() });
    }
    Ok(rows)
}
