//! CSV ingestion and output, and a synthetic ridership-like data generator.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{ar1_covariance, stream_rng, DataMatrix, MvnSampler};

/// Reads a numeric CSV file; rows are observations, columns variables.
///
/// Row numbers in errors are 1-based file lines (the header counts),
/// column numbers are 1-based.
pub fn read_csv(path: impl AsRef<Path>, has_header: bool) -> Result<DataMatrix> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv_from(file, has_header)
}

pub fn read_csv_from<R: Read>(reader: R, has_header: bool) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 1;
        if has_header && i == 0 {
            continue;
        }
        if record.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                row: line,
                col: record.len().min(w) + 1,
                msg: format!("expected {w} fields, found {}", record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row: line,
                        col: j + 1,
                        msg: format!("'{cell}' is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no data rows in CSV input".into()));
    }
    DataMatrix::from_rows(&rows)
}

/// Parses a comma-separated list of numbers such as `"0.5, 1, -2"`.
pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .enumerate()
        .map(|(j, t)| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { row: 1, col: j + 1, msg: format!("'{t}' is not a finite number") })
        })
        .collect()
}

/// Writes a matrix as CSV with an optional header.
pub fn write_csv<W: Write>(writer: W, header: Option<&[String]>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Shape of the synthetic station-ridership panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    /// Days (rows).
    pub n: usize,
    /// Stations (columns).
    pub p: usize,
    pub seed: u64,
    /// Neighbouring-station correlation of the daily fluctuations.
    pub rho: f64,
    /// Relative growth of every station's mean over the whole period.
    pub growth: f64,
}

impl FixtureSpec {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        Self { n, p, seed, rho: 0.6, growth: 0.0 }
    }
}

/// Daily exit counts for `p` stations over `n` days.
///
/// Each station has a log-normal base level; a day is base level times a
/// weekday factor (weekends quieter) times a linear trend, plus AR(1)
/// correlated noise across neighbouring stations proportional to the level.
pub fn metro_fixture(spec: &FixtureSpec) -> Result<DataMatrix> {
    if spec.n == 0 || spec.p == 0 {
        return Err(Error::InvalidInput("fixture needs n >= 1 and p >= 1".into()));
    }
    let mut rng = stream_rng(spec.seed, 0);
    let base = DVector::from_fn(spec.p, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        20_000.0 * (0.6 * z).exp()
    });
    let noise = MvnSampler::new(DVector::zeros(spec.p), &ar1_covariance(spec.rho, spec.p)?)?
        .sample(spec.n, &mut stream_rng(spec.seed, 1))
        .into_inner();
    let m = DMatrix::from_fn(spec.n, spec.p, |i, j| {
        let weekday = match i % 7 {
            5 => 0.75,
            6 => 0.65,
            _ => 1.0,
        };
        let trend = 1.0 + spec.growth * i as f64 / spec.n.max(2).saturating_sub(1) as f64;
        let level = base[j] * weekday * trend;
        (level * (1.0 + 0.08 * noise[(i, j)])).max(0.0).round()
    });
    DataMatrix::new(m)
}
