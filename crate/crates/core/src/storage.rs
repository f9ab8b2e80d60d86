//! RunLog CSV files and GA result documents.
//!
//! A RunLog file starts with one `#`-prefixed JSON header line carrying the
//! schema version and run metadata, followed by a CSV table with columns
//! `t_s,setpoint_c,u_duty,y_c,t_env_c,i_a,v_v`. Numbers are written in the
//! shortest form that parses back to the identical `f64`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{GaConfig, GaResult, ParamBounds};
use crate::runlog::{DataError, RunLog, RunMeta, TelemetrySample};

pub const RUNLOG_SCHEMA: u32 = 1;
pub const COLUMNS: [&str; 7] = ["t_s", "setpoint_c", "u_duty", "y_c", "t_env_c", "i_a", "v_v"];

/// Line of the first data row.
const FIRST_ROW_LINE: u64 = 3;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("missing `#` metadata header line")]
    MissingHeader,
    #[error("bad metadata header: {0}")]
    Header(String),
    #[error("unsupported schema version {found} (expected {RUNLOG_SCHEMA})")]
    SchemaVersion { found: u32 },
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("line {line}: {source}")]
    Invalid { line: u64, source: DataError },
    #[error("refusing to write invalid run log: {0}")]
    Refused(DataError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: u32,
    meta: RunMeta,
}

pub fn write_runlog_to<W: Write>(run: &RunLog, out: W) -> Result<(), StorageError> {
    run.validate().map_err(StorageError::Refused)?;
    let mut out = BufWriter::new(out);
    let header = Header {
        schema: RUNLOG_SCHEMA,
        meta: run.meta.clone(),
    };
    writeln!(out, "# {}", serde_json::to_string(&header)?)?;
    writeln!(out, "{}", COLUMNS.join(","))?;
    for s in &run.samples {
        let row: Vec<String> = s.fields().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_runlog_from<R: Read>(input: R) -> Result<RunLog, StorageError> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let json = first.strip_prefix('#').ok_or(StorageError::MissingHeader)?;
    let value: serde_json::Value =
        serde_json::from_str(json.trim()).map_err(|e| StorageError::Header(e.to_string()))?;
    let found = value
        .get("schema")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| StorageError::Header("missing schema version".into()))?;
    if found != RUNLOG_SCHEMA as u64 {
        return Err(StorageError::SchemaVersion { found: found as u32 });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| StorageError::Header(e.to_string()))?;

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let cols = reader.headers().map_err(|e| StorageError::Malformed {
        line: 2,
        msg: e.to_string(),
    })?;
    if cols.iter().ne(COLUMNS) {
        return Err(StorageError::Malformed {
            line: 2,
            msg: format!("expected columns {}", COLUMNS.join(",")),
        });
    }

    let mut samples = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = FIRST_ROW_LINE + idx as u64;
        let record = record.map_err(|e| StorageError::Malformed {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != COLUMNS.len() {
            return Err(StorageError::Malformed {
                line,
                msg: format!("expected {} fields, found {}", COLUMNS.len(), record.len()),
            });
        }
        let mut v = [0.0; 7];
        for (slot, (field, name)) in v.iter_mut().zip(record.iter().zip(COLUMNS)) {
            *slot = field.trim().parse().map_err(|_| StorageError::Malformed {
                line,
                msg: format!("column {name}: `{field}` is not a number"),
            })?;
        }
        samples.push(TelemetrySample {
            t: v[0],
            setpoint: v[1],
            u: v[2],
            y: v[3],
            t_env: v[4],
            i: v[5],
            v: v[6],
        });
    }

    let run = RunLog {
        meta: header.meta,
        samples,
    };
    run.validate().map_err(|e| {
        let line = match &e {
            DataError::NonMonotoneTime { index, .. }
            | DataError::NonFinite { index }
            | DataError::DutyOutOfRange { index, .. } => FIRST_ROW_LINE + *index as u64,
            _ => FIRST_ROW_LINE,
        };
        StorageError::Invalid { line, source: e }
    })?;
    Ok(run)
}

pub fn write_runlog(run: &RunLog, path: impl AsRef<Path>) -> Result<(), StorageError> {
    run.validate().map_err(StorageError::Refused)?;
    write_runlog_to(run, File::create(path)?)
}

pub fn read_runlog(path: impl AsRef<Path>) -> Result<RunLog, StorageError> {
    read_runlog_from(File::open(path)?)
}

/// Persisted outcome of a behavioral-matching run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaReport {
    pub seed: u64,
    pub config: GaConfig,
    pub bounds: ParamBounds,
    pub result: GaResult,
}

pub fn write_ga_report(report: &GaReport, path: impl AsRef<Path>) -> Result<(), StorageError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, report)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn read_ga_report(path: impl AsRef<Path>) -> Result<GaReport, StorageError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runlog::Source;
    use crate::sim::{simulate, Scenario};

    fn small_run() -> RunLog {
        simulate(&Scenario {
            duration: 20.0,
            seed: 4,
            ..Scenario::default()
        })
        .unwrap()
    }

    fn bytes(run: &RunLog) -> Vec<u8> {
        let mut buf = Vec::new();
        write_runlog_to(run, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let run = small_run();
        let back = read_runlog_from(bytes(&run).as_slice()).unwrap();
        assert_eq!(run, back);
    }

    #[test]
    fn header_and_columns() {
        let text = String::from_utf8(bytes(&small_run())).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# {\"schema\":1"));
        assert_eq!(lines.next().unwrap(), "t_s,setpoint_c,u_duty,y_c,t_env_c,i_a,v_v");
    }

    #[test]
    fn shuffled_rows_rejected() {
        let text = String::from_utf8(bytes(&small_run())).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(4, 6);
        let err = read_runlog_from(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            StorageError::Invalid {
                line,
                source: DataError::NonMonotoneTime { .. },
            } => assert_eq!(line, 6),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = String::from_utf8(bytes(&small_run())).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = "1,2,abc,4,5,6,7".into();
        let err = read_runlog_from(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, StorageError::Malformed { line: 5, .. }), "{err}");
    }

    #[test]
    fn schema_mismatch() {
        let text = String::from_utf8(bytes(&small_run())).unwrap();
        let text = text.replacen("\"schema\":1", "\"schema\":2", 1);
        assert!(matches!(
            read_runlog_from(text.as_bytes()),
            Err(StorageError::SchemaVersion { found: 2 })
        ));
        assert!(matches!(
            read_runlog_from("t_s\n".as_bytes()),
            Err(StorageError::MissingHeader)
        ));
    }

    #[test]
    fn empty_refused() {
        let run = RunLog::new(Source::Simulated, None, vec![]);
        assert!(matches!(
            write_runlog_to(&run, Vec::new()),
            Err(StorageError::Refused(DataError::Empty))
        ));
    }

    #[test]
    fn ga_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let report = GaReport {
            seed: 3,
            config: GaConfig::default(),
            bounds: ParamBounds::default(),
            result: GaResult {
                best: crate::presets::Preset::Matched.params(),
                best_cost: 1.5,
                history: vec![3.0, 1.5],
                evaluations: 9,
            },
        };
        write_ga_report(&report, &path).unwrap();
        assert_eq!(read_ga_report(&path).unwrap(), report);
    }

    proptest::proptest! {
        #[test]
        fn numeric_fields_round_trip(values in proptest::collection::vec(
            (-1e6f64..1e6, -1.0f64..=1.0, -300.0f64..300.0, -1e-9f64..1e-9), 1..20)) {
            let samples = values.iter().enumerate().map(|(k, &(a, u, y, tiny))| TelemetrySample {
                t: k as f64 * 0.1 + tiny.abs(),
                setpoint: a,
                u,
                y,
                t_env: tiny,
                i: a / 3.0,
                v: y * 1e-7,
            }).collect();
            let run = RunLog::new(Source::LiveTwin, None, samples);
            let back = read_runlog_from(bytes(&run).as_slice()).unwrap();
            proptest::prop_assert_eq!(run, back);
        }
    }
}
