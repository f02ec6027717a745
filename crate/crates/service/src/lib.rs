//! HTTP survey service: hands out randomized choice tasks, records choices
//! and questionnaire answers in an append-only event log, and exports
//! complete sessions as a choice dataset.

pub mod error;
pub mod events;
pub mod http;
pub mod service;

pub use error::ServiceError;
pub use events::{read_log, to_ndjson, Event, EventLog, EventRecord, EVENTS_FILE};
pub use http::router;
pub use service::{
    Clock, Entropy, ManualClock, OsEntropy, SeededEntropy, ServiceConfig, SessionStatus, SurveyService, SystemClock,
};
