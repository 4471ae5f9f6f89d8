//! CSV ingest and atomic file output.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thermoda_core::TimeSeriesTable;

use crate::error::{Error, Result};

/// Column roles for a CSV file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    /// Input columns in model order. Empty means every column that is
    /// neither the timestamp nor a target, in file order.
    #[serde(default)]
    pub features: Vec<String>,
    pub targets: Vec<String>,
    /// Sample period in seconds; inferred as the smallest timestamp step
    /// when absent.
    #[serde(default)]
    pub sample_period_secs: Option<i64>,
}

fn default_timestamp_column() -> String {
    "timestamp".to_string()
}

impl Schema {
    pub fn new(features: &[&str], targets: &[&str]) -> Self {
        Schema {
            timestamp_column: default_timestamp_column(),
            features: features.iter().map(|s| s.to_string()).collect(),
            targets: targets.iter().map(|s| s.to_string()).collect(),
            sample_period_secs: None,
        }
    }
}

/// Parses epoch seconds or an ISO-8601 date-time. Date-times without an
/// offset are taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 {
            return Some(v as i64);
        }
        return None;
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<TimeSeriesTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, path)
}

/// Reads a table from any reader; `label` names the source in errors.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &Schema,
    label: impl AsRef<Path>,
) -> Result<TimeSeriesTable> {
    let label = label.as_ref();
    let fail = |message: String| Error::Ingest {
        path: label.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| fail(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(fail("file is empty".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = find(&schema.timestamp_column).ok_or_else(|| {
        fail(format!(
            "missing timestamp column `{}`",
            schema.timestamp_column
        ))
    })?;
    if schema.targets.is_empty() {
        return Err(fail("schema names no target column".into()));
    }
    let features: Vec<String> = if schema.features.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != ts_col && !schema.targets.iter().any(|t| t == h))
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.features.clone()
    };
    let mut names: Vec<String> = Vec::new();
    for n in features.iter().chain(&schema.targets) {
        if !names.contains(n) {
            names.push(n.clone());
        }
    }
    let mut idx = Vec::with_capacity(names.len());
    for n in &names {
        let role = if schema.targets.contains(n) {
            "target"
        } else {
            "feature"
        };
        idx.push(find(n).ok_or_else(|| fail(format!("missing {role} column `{n}`")))?);
    }

    let mut timestamps = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, record) in rdr.records().enumerate() {
        let row = row + 1;
        let record = record.map_err(|e| fail(format!("row {row}: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| {
            fail(format!(
                "row {row}: cannot parse timestamp `{}`",
                field(ts_col)
            ))
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts == prev {
                return Err(fail(format!(
                    "row {row}: duplicated timestamp {}",
                    field(ts_col)
                )));
            }
            if ts < prev {
                return Err(fail(format!(
                    "row {row}: timestamp {} goes backwards",
                    field(ts_col)
                )));
            }
        }
        timestamps.push(ts);
        for ((col, &i), name) in columns.iter_mut().zip(&idx).zip(&names) {
            let v: f64 = field(i).parse().map_err(|_| {
                fail(format!(
                    "row {row}: cannot parse `{}` in column `{name}`",
                    field(i)
                ))
            })?;
            col.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(fail("no data rows".into()));
    }
    let period = match schema.sample_period_secs {
        Some(p) => p,
        None => timestamps
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .ok_or_else(|| fail("cannot infer the sample period from a single row".into()))?,
    };
    TimeSeriesTable::new(
        timestamps,
        names,
        columns,
        features,
        schema.targets.clone(),
        period,
    )
    .map_err(|e| fail(e.to_string()))
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Renders a header and rows as CSV text.
pub fn csv_bytes<S: AsRef<str>>(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<S>>,
) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref()))
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes a table as CSV with an epoch-seconds `timestamp` column.
pub fn write_table_csv(path: impl AsRef<Path>, table: &TimeSeriesTable) -> Result<()> {
    let mut header = vec!["timestamp"];
    header.extend(table.names().iter().map(|s| s.as_str()));
    let rows = (0..table.len()).map(|r| {
        let mut row = Vec::with_capacity(header.len());
        row.push(table.timestamps()[r].to_string());
        row.extend(table.columns().iter().map(|c| c[r].to_string()));
        row
    });
    write_atomic(path, &csv_bytes(&header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("1546300800"), Some(1_546_300_800));
        assert_eq!(parse_timestamp("2019-01-01T00:00:00Z"), Some(1_546_300_800));
        assert_eq!(parse_timestamp("2019-01-01 00:15:00"), Some(1_546_301_700));
        assert_eq!(
            parse_timestamp("2019-01-01T01:00:00+01:00"),
            Some(1_546_300_800)
        );
        assert_eq!(parse_timestamp("2019-01-01"), Some(1_546_300_800));
        assert_eq!(parse_timestamp("yesterday"), None);
        assert_eq!(parse_timestamp("1.5"), None);
    }

    #[test]
    fn features_default_to_remaining_columns() {
        let text = "timestamp,a,y,b\n0,1,2,3\n60,4,5,6\n";
        let schema = Schema::new(&[], &["y"]);
        let t = read_csv(text.as_bytes(), &schema, "mem").unwrap();
        assert_eq!(t.feature_names(), &["a", "b"]);
        assert_eq!(t.sample_period(), 60);
    }
}
