//! Append-only run logs: one JSON record per line, events and decisions in
//! separate files named `<run_id>.events.log` and `<run_id>.decisions.log`.
//!
//! Every line carries `schema_version` and `run_id` alongside the record
//! payload, e.g.
//!
//! ```text
//! {"schema_version":1,"run_id":"lookback-s7","record_type":"event","timestamp":900,"kind":"impression","cost_micros":2500}
//! {"schema_version":1,"run_id":"lookback-s7","record_type":"decision","timestamp":900,"epsilon_used":0.3,"chosen":"model7","probabilities":[...]}
//! ```
//!
//! Appends are rejected when a record's timestamp falls behind the last
//! record of the same type, so each file is time-ordered by construction.
//! Round-trips are lossless for every field (spend stays in integer micros;
//! floats serialize with shortest round-trippable formatting), which is what
//! makes replay reports byte-identical to live ones.

use crate::kpi::Event;
use crate::policy::SelectionDecision;
use crate::report::{self, DailyRow, ReportError};
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record timestamp {got} is older than the last appended {last}")]
    Ordering { last: i64, got: i64 },
    #[error("unsupported schema_version {found} at {path}:{line} (supported: {SCHEMA_VERSION})")]
    SchemaVersion {
        path: String,
        line: usize,
        found: u32,
    },
    #[error("parse error at {path}:{line}: {message} ({} records recovered before the error)", partial.events.len() + partial.decisions.len())]
    Parse {
        path: String,
        line: usize,
        message: String,
        /// Records successfully parsed before the bad line.
        partial: Box<LoadedLogs>,
    },
    #[error("invalid run id `{0}` (allowed: alphanumeric, `-`, `_`, `.`)")]
    InvalidRunId(String),
    #[error("log is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// One log line: schema/run metadata plus the record payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub schema_version: u32,
    pub run_id: String,
    #[serde(flatten)]
    pub record: LogRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum LogRecord {
    Event(Event),
    Decision(SelectionDecision),
}

impl LogRecord {
    pub fn timestamp(&self) -> i64 {
        match self {
            LogRecord::Event(e) => e.timestamp,
            LogRecord::Decision(d) => d.timestamp,
        }
    }
}

pub fn events_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.events.log"))
}

pub fn decisions_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.decisions.log"))
}

fn validate_run_id(run_id: &str) -> Result<(), StoreError> {
    let ok = !run_id.is_empty()
        && run_id.len() <= 128
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidRunId(run_id.to_string()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writer for one run's pair of log files. Single writer per run; appends
/// enforce per-type timestamp ordering.
pub struct EventStore {
    run_id: String,
    events_path: PathBuf,
    decisions_path: PathBuf,
    events_file: BufWriter<File>,
    decisions_file: BufWriter<File>,
    last_event_ts: Option<i64>,
    last_decision_ts: Option<i64>,
}

impl EventStore {
    /// Creates (truncating) the two log files for `run_id` under `dir`.
    pub fn create(dir: &Path, run_id: &str) -> Result<Self, StoreError> {
        validate_run_id(run_id)?;
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let events_path = events_path(dir, run_id);
        let decisions_path = decisions_path(dir, run_id);
        let events_file = File::create(&events_path).map_err(io_err(&events_path))?;
        let decisions_file = File::create(&decisions_path).map_err(io_err(&decisions_path))?;
        Ok(EventStore {
            run_id: run_id.to_string(),
            events_file: BufWriter::new(events_file),
            decisions_file: BufWriter::new(decisions_file),
            events_path,
            decisions_path,
            last_event_ts: None,
            last_decision_ts: None,
        })
    }

    /// Reopens existing logs for appending, with ordering watermarks primed
    /// from the already-persisted records (as returned by [`load_run`]).
    pub fn resume(
        dir: &Path,
        run_id: &str,
        last_event_ts: Option<i64>,
        last_decision_ts: Option<i64>,
    ) -> Result<Self, StoreError> {
        validate_run_id(run_id)?;
        let events_path = events_path(dir, run_id);
        let decisions_path = decisions_path(dir, run_id);
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(io_err(p))
        };
        Ok(EventStore {
            run_id: run_id.to_string(),
            events_file: BufWriter::new(open(&events_path)?),
            decisions_file: BufWriter::new(open(&decisions_path)?),
            events_path,
            decisions_path,
            last_event_ts,
            last_decision_ts,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn events_path(&self) -> &Path {
        &self.events_path
    }

    pub fn decisions_path(&self) -> &Path {
        &self.decisions_path
    }

    pub fn last_event_ts(&self) -> Option<i64> {
        self.last_event_ts
    }

    /// Appends one record to its file. Timestamps may repeat but must not
    /// regress within a record type.
    pub fn append(&mut self, record: LogRecord) -> Result<(), StoreError> {
        let ts = record.timestamp();
        let (watermark, file, path) = match &record {
            LogRecord::Event(_) => (
                &mut self.last_event_ts,
                &mut self.events_file,
                &self.events_path,
            ),
            LogRecord::Decision(_) => (
                &mut self.last_decision_ts,
                &mut self.decisions_file,
                &self.decisions_path,
            ),
        };
        if let Some(last) = *watermark
            && ts < last
        {
            return Err(StoreError::Ordering { last, got: ts });
        }
        let line = LogLine {
            schema_version: SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            record,
        };
        let json =
            serde_json::to_string(&line).expect("log records contain no non-serializable values");
        writeln!(file, "{json}").map_err(io_err(path))?;
        *watermark = Some(ts);
        Ok(())
    }

    pub fn append_event(&mut self, event: &Event) -> Result<(), StoreError> {
        self.append(LogRecord::Event(event.clone()))
    }

    pub fn append_decision(&mut self, decision: &SelectionDecision) -> Result<(), StoreError> {
        self.append(LogRecord::Decision(decision.clone()))
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.events_file
            .flush()
            .map_err(io_err(&self.events_path))?;
        self.decisions_file
            .flush()
            .map_err(io_err(&self.decisions_path))?;
        Ok(())
    }
}

/// Fully parsed logs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedLogs {
    pub run_id: Option<String>,
    pub events: Vec<Event>,
    pub decisions: Vec<SelectionDecision>,
}

/// Parses one log file. Either record type may appear; a malformed or
/// semantically invalid line fails with its line number, with everything
/// parsed before it preserved in the error.
pub fn load(path: &Path) -> Result<LoadedLogs, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut logs = LoadedLogs::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let fail = |message: String, partial: &LoadedLogs| StoreError::Parse {
            path: path.display().to_string(),
            line: line_no,
            message,
            partial: Box::new(partial.clone()),
        };
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|e| fail(e.to_string(), &logs))?;
        if parsed.schema_version != SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion {
                path: path.display().to_string(),
                line: line_no,
                found: parsed.schema_version,
            });
        }
        match &logs.run_id {
            None => logs.run_id = Some(parsed.run_id.clone()),
            Some(existing) if *existing != parsed.run_id => {
                return Err(fail(
                    format!("run_id changed from `{existing}` to `{}`", parsed.run_id),
                    &logs,
                ));
            }
            Some(_) => {}
        }
        match parsed.record {
            LogRecord::Event(e) => {
                e.validate().map_err(|err| fail(err.to_string(), &logs))?;
                logs.events.push(e);
            }
            LogRecord::Decision(d) => {
                d.validate().map_err(|err| fail(err.to_string(), &logs))?;
                logs.decisions.push(d);
            }
        }
    }
    Ok(logs)
}

/// Loads a run's event and decision files from `dir` and merges them.
pub fn load_run(dir: &Path, run_id: &str) -> Result<LoadedLogs, StoreError> {
    validate_run_id(run_id)?;
    let events = load(&events_path(dir, run_id))?;
    let decisions = load(&decisions_path(dir, run_id))?;
    if let (Some(a), Some(b)) = (&events.run_id, &decisions.run_id)
        && a != b
    {
        return Err(StoreError::Inconsistent(format!(
            "event log is for run `{a}` but decision log for `{b}`"
        )));
    }
    Ok(LoadedLogs {
        run_id: events.run_id.or(decisions.run_id),
        events: events.events,
        decisions: decisions.decisions,
    })
}

/// Recomputes the per-day report purely from logs. Produces exactly the
/// series the live run produced; replaying twice is idempotent.
pub fn replay(
    events: &[Event],
    decisions: &[SelectionDecision],
    lookback_days: f64,
) -> Result<Vec<DailyRow>, StoreError> {
    Ok(report::build_daily_rows(events, decisions, lookback_days)?)
}
