//! CSV and JSON input/output.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! table read back is bit-identical to what was written.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReturnSeries;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Column name (needs a header) or zero-based index. Defaults to the
    /// last column.
    pub column: Option<String>,
    /// Treat the column as prices and convert to de-meaned log returns.
    pub price_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub source: String,
    pub len: usize,
    pub price_mode: bool,
    pub had_header: bool,
    /// Every return is zero, so only the linearization offset informs the fit.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnData {
    pub series: ReturnSeries,
    pub info: DataInfo,
}

fn malformed(row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Malformed { row, column, message: message.into() }
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => malformed(pos.line() as usize, 0, e.to_string()),
        None => Error::Csv(e),
    }
}

/// Parses one numeric column of returns (or prices) from CSV text. A header
/// row is detected when the selected field of the first row is not numeric.
pub fn parse_returns<R: Read>(reader: R, label: &str, opts: &ReadOptions) -> Result<ReturnData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_error)?;
    let Some(first) = records.first() else {
        return Err(Error::InvalidInput(format!("{label}: no data rows")));
    };
    let width = first.len();
    let by_name = opts.column.as_deref().filter(|c| c.parse::<usize>().is_err());
    let col = match (&opts.column, by_name) {
        (_, Some(name)) => first
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| malformed(1, 0, format!("no column named '{name}' in header")))?,
        (Some(idx), None) => idx.parse::<usize>().expect("checked numeric"),
        (None, None) => width - 1,
    };
    if col >= width {
        return Err(malformed(1, col + 1, format!("column {col} out of range ({width} columns)")));
    }
    let had_header = by_name.is_some() || first[col].parse::<f64>().is_err();
    let start = usize::from(had_header);

    let mut values = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate().skip(start) {
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let field = rec.get(col).ok_or_else(|| malformed(line, col + 1, "missing field"))?;
        let v: f64 = field
            .parse()
            .map_err(|_| malformed(line, col + 1, format!("not a number: '{field}'")))?;
        if !v.is_finite() {
            return Err(malformed(line, col + 1, format!("non-finite value '{field}'")));
        }
        if opts.price_mode && v <= 0.0 {
            return Err(malformed(line, col + 1, format!("price must be > 0, got {v}")));
        }
        values.push(v);
    }

    let y = if opts.price_mode {
        let r: Vec<f64> = values.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        let mean = if r.is_empty() { 0.0 } else { r.iter().sum::<f64>() / r.len() as f64 };
        r.iter().map(|v| v - mean).collect()
    } else {
        values
    };
    let degenerate = y.iter().all(|&v| v == 0.0);
    let series = ReturnSeries::new(y, label)?;
    Ok(ReturnData {
        info: DataInfo {
            source: label.to_string(),
            len: series.len(),
            price_mode: opts.price_mode,
            had_header,
            degenerate,
        },
        series,
    })
}

pub fn read_returns(path: &Path, opts: &ReadOptions) -> Result<ReturnData> {
    let file = File::open(path)?;
    parse_returns(file, &path.display().to_string(), opts)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a single named column.
pub fn write_column(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{name}")?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table<const N: usize>(path: &Path, names: &[&str; N], rows: &[[f64; N]]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", names.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed numeric table into named columns.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let names: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| malformed(line, j + 1, format!("not a number: '{field}'")))?;
            cols[j].push(v);
        }
    }
    Ok((names, cols))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, opts: &ReadOptions) -> Result<ReturnData> {
        parse_returns(text.as_bytes(), "t", opts)
    }

    #[test]
    fn headerless_single_column() {
        let d = parse("0.01\n-0.02\n0.005\n", &ReadOptions::default()).unwrap();
        assert_eq!(d.series.y, vec![0.01, -0.02, 0.005]);
        assert!(!d.info.had_header);
    }

    #[test]
    fn named_column_with_header() {
        let text = "date,close,ret\n2020-01-01,10,0.1\n2020-01-02,11,-0.2\n2020-01-03,12,0.3\n";
        let opts = ReadOptions { column: Some("ret".into()), ..Default::default() };
        assert_eq!(parse(text, &opts).unwrap().series.y, vec![0.1, -0.2, 0.3]);
        let idx = ReadOptions { column: Some("1".into()), ..Default::default() };
        assert_eq!(parse(text, &idx).unwrap().series.y, vec![10.0, 11.0, 12.0]);
        assert!(parse(text, &ReadOptions::default()).unwrap().info.had_header);
    }

    #[test]
    fn price_mode_demeans_log_returns() {
        let opts = ReadOptions { price_mode: true, ..Default::default() };
        let d = parse("price\n100\n110\n99\n105\n", &opts).unwrap();
        let raw = [(110f64 / 100.0).ln(), (99f64 / 110.0).ln(), (105f64 / 99.0).ln()];
        let m = raw.iter().sum::<f64>() / 3.0;
        for (a, b) in d.series.y.iter().zip(raw) {
            assert!((a - (b - m)).abs() < 1e-15);
        }
        assert!(!d.info.degenerate);
    }

    #[test]
    fn constant_prices_are_degenerate() {
        let opts = ReadOptions { price_mode: true, ..Default::default() };
        let d = parse("5\n5\n5\n5\n", &opts).unwrap();
        assert!(d.info.degenerate);
        assert!(d.series.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn malformed_rows_report_position() {
        let err = parse("y\n0.1\nabc\n0.3\n", &ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Malformed { row: 3, column: 1, .. }), "{err:?}");
        let err = parse("y\n0.1\ninf\n0.3\n", &ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Malformed { row: 3, .. }), "{err:?}");
        let err = parse("a,b\n1,2\n3\n", &ReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Malformed { row: 3, .. }), "{err:?}");
        let opts = ReadOptions { price_mode: true, ..Default::default() };
        assert!(matches!(parse("1\n0\n2\n", &opts), Err(Error::Malformed { row: 2, .. })));
    }

    #[test]
    fn too_short_series() {
        assert!(matches!(parse("y\n0.1\n", &ReadOptions::default()), Err(Error::TooShort { .. })));
        assert!(parse("", &ReadOptions::default()).is_err());
        let opts = ReadOptions { column: Some("nope".into()), ..Default::default() };
        assert!(parse("y\n1\n2\n", &opts).is_err());
    }

    proptest! {
        #[test]
        fn table_round_trip_is_exact(rows in proptest::collection::vec(
            proptest::array::uniform4(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO), 1..50)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            write_table(&path, &["a", "b", "c", "d"], &rows).unwrap();
            let (names, cols) = read_table(&path).unwrap();
            prop_assert_eq!(names, vec!["a", "b", "c", "d"]);
            for (i, row) in rows.iter().enumerate() {
                for j in 0..4 {
                    prop_assert_eq!(cols[j][i].to_bits(), row[j].to_bits());
                }
            }
        }
    }
}
