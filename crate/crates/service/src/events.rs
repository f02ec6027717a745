//! Append-only event log, one JSON record per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const EVENTS_FILE: &str = "events.ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    /// Decimal string so 64-bit seeds survive any JSON reader.
    pub seed: String,
    /// Attribute names in the order shown to the respondent.
    pub attribute_display_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecorded {
    pub session_id: String,
    pub task_index: usize,
    pub profile_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireRecorded {
    pub session_id: String,
    /// Canonical answers keyed by question key, in questionnaire order.
    pub answers: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    SessionCreated(SessionCreated),
    ChoiceRecorded(ChoiceRecorded),
    QuestionnaireRecorded(QuestionnaireRecorded),
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::SessionCreated(_) => "session_created",
            Event::ChoiceRecorded(_) => "choice_recorded",
            Event::QuestionnaireRecorded(_) => "questionnaire_recorded",
        }
    }

    pub fn session_id(&self) -> &str {
        match self {
            Event::SessionCreated(e) => &e.session_id,
            Event::ChoiceRecorded(e) => &e.session_id,
            Event::QuestionnaireRecorded(e) => &e.session_id,
        }
    }

    fn payload(&self) -> serde_json::Value {
        match self {
            Event::SessionCreated(e) => serde_json::to_value(e),
            Event::ChoiceRecorded(e) => serde_json::to_value(e),
            Event::QuestionnaireRecorded(e) => serde_json::to_value(e),
        }
        .expect("event payloads serialize")
    }
}

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub kind: String,
    pub timestamp: DateTime<Utc>,
    pub payload: serde_json::Value,
}

impl EventRecord {
    pub fn new(seq: u64, timestamp: DateTime<Utc>, event: &Event) -> Self {
        Self {
            seq,
            kind: event.kind().to_string(),
            timestamp,
            payload: event.payload(),
        }
    }

    pub fn event(&self) -> Result<Event, String> {
        let p = self.payload.clone();
        let e = match self.kind.as_str() {
            "session_created" => serde_json::from_value(p).map(Event::SessionCreated),
            "choice_recorded" => serde_json::from_value(p).map(Event::ChoiceRecorded),
            "questionnaire_recorded" => serde_json::from_value(p).map(Event::QuestionnaireRecorded),
            other => return Err(format!("unknown event kind {other:?}")),
        };
        e.map_err(|e| e.to_string())
    }
}

/// Single writer for the log. Records are kept in memory and, when a path
/// is set, appended to that file. The file is opened on first append, so
/// an unwritable store surfaces as a failed write rather than a failed
/// start.
#[derive(Debug, Default)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    history: Vec<EventRecord>,
}

impl EventLog {
    /// Log kept only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// In-memory log that already holds `history`.
    pub fn with_history(history: Vec<EventRecord>) -> Self {
        Self {
            history,
            ..Self::default()
        }
    }

    /// Appends after `history` to the file at `path`.
    pub fn at(path: impl Into<PathBuf>, history: Vec<EventRecord>) -> Self {
        Self {
            path: Some(path.into()),
            file: None,
            history,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn next_seq(&self) -> u64 {
        self.history.len() as u64 + 1
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.history
    }

    /// Writes the event and returns its record. Nothing is consumed on
    /// failure.
    pub fn append(&mut self, timestamp: DateTime<Utc>, event: &Event) -> Result<EventRecord, ServiceError> {
        let record = EventRecord::new(self.next_seq(), timestamp, event);
        if let Some(path) = &self.path {
            if self.file.is_none() {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ServiceError::Unavailable(format!("{}: {e}", path.display())))?;
                self.file = Some(file);
            }
            let mut line = serde_json::to_string(&record).map_err(|e| ServiceError::Internal(e.to_string()))?;
            line.push('\n');
            let file = self.file.as_mut().expect("opened above");
            if let Err(e) = file.write_all(line.as_bytes()).and_then(|_| file.flush()) {
                self.file = None;
                return Err(ServiceError::Unavailable(format!("{}: {e}", path.display())));
            }
        }
        self.history.push(record.clone());
        Ok(record)
    }
}

/// One NDJSON line per record.
pub fn to_ndjson(records: &[EventRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

/// Reads every record, checking that sequence numbers run 1, 2, 3, ...
/// A missing file is an empty log.
pub fn read_log(path: &Path) -> Result<Vec<EventRecord>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::Unavailable(format!("{}: {e}", path.display()))),
    };
    parse_log(BufReader::new(file))
}

pub fn parse_log(reader: impl BufRead) -> Result<Vec<EventRecord>, ServiceError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ServiceError::Unavailable(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| ServiceError::CorruptLog { line: i + 1, message };
        let record: EventRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        let expected = out.len() as u64 + 1;
        if record.seq != expected {
            return Err(corrupt(format!("sequence {} where {expected} expected", record.seq)));
        }
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn created() -> Event {
        Event::SessionCreated(SessionCreated {
            session_id: "s1".into(),
            seed: u64::MAX.to_string(),
            attribute_display_order: vec!["A".into()],
        })
    }

    #[test]
    fn record_round_trip() {
        let r = EventRecord::new(1, DateTime::UNIX_EPOCH, &created());
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.starts_with("{\"seq\":1,\"kind\":\"session_created\""));
        let back: EventRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.event().unwrap(), created());
    }

    #[test]
    fn gaps_are_rejected() {
        let a = serde_json::to_string(&EventRecord::new(1, DateTime::UNIX_EPOCH, &created())).unwrap();
        let c = serde_json::to_string(&EventRecord::new(3, DateTime::UNIX_EPOCH, &created())).unwrap();
        let err = parse_log(format!("{a}\n{c}\n").as_bytes()).unwrap_err();
        assert!(matches!(err, ServiceError::CorruptLog { line: 2, .. }));
    }

    #[test]
    fn unknown_kind_is_reported() {
        let mut r = EventRecord::new(1, DateTime::UNIX_EPOCH, &created());
        r.kind = "session_deleted".into();
        assert!(r.event().is_err());
    }

    #[test]
    fn in_memory_log_counts() {
        let mut log = EventLog::in_memory();
        assert_eq!(log.append(DateTime::UNIX_EPOCH, &created()).unwrap().seq, 1);
        assert_eq!(log.append(DateTime::UNIX_EPOCH, &created()).unwrap().seq, 2);
        assert_eq!(log.next_seq(), 3);
    }
}
