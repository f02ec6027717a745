//! Session lifecycle over an event log.
//!
//! Every state change is first appended to the log and then applied to
//! memory through the same code path replay uses, so a service rebuilt
//! from its log is indistinguishable from the original.

use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use conjoint_core::dataset::ChoiceDataset;
use conjoint_core::design::{DesignSpec, Question, ResponseFormat};
use conjoint_core::randomizer::{generate_plan, SessionPlan};
use indexmap::IndexMap;
use parking_lot::{Mutex, RwLock};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::events::{
    read_log, ChoiceRecorded, Event, EventLog, EventRecord, QuestionnaireRecorded, SessionCreated, EVENTS_FILE,
};

pub const DEFAULT_ABANDON_AFTER_HOURS: i64 = 24;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

/// Source of plan seeds and session ids.
pub trait Entropy: Send + Sync {
    fn seed(&self) -> u64;
    fn session_id(&self) -> String;
}

/// Operating-system randomness.
#[derive(Debug, Default)]
pub struct OsEntropy;

impl Entropy for OsEntropy {
    fn seed(&self) -> u64 {
        rand::rng().random()
    }

    fn session_id(&self) -> String {
        uuid::Uuid::new_v4().to_string()
    }
}

/// Reproducible seeds and ids from one master seed.
#[derive(Debug)]
pub struct SeededEntropy(Mutex<ChaCha8Rng>);

impl SeededEntropy {
    pub fn new(seed: u64) -> Self {
        Self(Mutex::new(ChaCha8Rng::seed_from_u64(seed)))
    }
}

impl Entropy for SeededEntropy {
    fn seed(&self) -> u64 {
        self.0.lock().next_u64()
    }

    fn session_id(&self) -> String {
        let mut bytes = [0u8; 16];
        self.0.lock().fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
    }
}

#[derive(Clone)]
pub struct ServiceConfig {
    /// In-progress sessions idle longer than this are abandoned.
    pub abandon_after: Duration,
    pub clock: Arc<dyn Clock>,
    pub entropy: Arc<dyn Entropy>,
}

impl ServiceConfig {
    pub fn with_abandon_after_hours(mut self, hours: i64) -> Self {
        self.abandon_after = Duration::hours(hours);
        self
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            abandon_after: Duration::hours(DEFAULT_ABANDON_AFTER_HOURS),
            clock: Arc::new(SystemClock),
            entropy: Arc::new(OsEntropy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    InProgress,
    Complete,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedChoice {
    pub profile_index: usize,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub plan: SessionPlan,
    pub created_at: DateTime<Utc>,
    pub last_activity: DateTime<Utc>,
    /// One slot per task, in task order.
    pub choices: Vec<Option<RecordedChoice>>,
    /// Canonical answers keyed by question key.
    pub answers: Option<IndexMap<String, String>>,
}

impl SessionState {
    pub fn session_id(&self) -> &str {
        &self.plan.session_id
    }

    pub fn tasks_answered(&self) -> usize {
        self.choices.iter().filter(|c| c.is_some()).count()
    }

    /// Lowest unanswered task, 1-based.
    pub fn current_task(&self) -> Option<usize> {
        self.choices.iter().position(|c| c.is_none()).map(|i| i + 1)
    }

    pub fn status(&self, now: DateTime<Utc>, abandon_after: Duration) -> SessionStatus {
        if self.answers.is_some() {
            SessionStatus::Complete
        } else if now - self.last_activity > abandon_after {
            SessionStatus::Abandoned
        } else {
            SessionStatus::InProgress
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub tasks_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_index: usize,
    pub tasks_total: usize,
    /// Attribute names in display order.
    pub attribute_display_order: Vec<String>,
    /// Attribute name to level label, keys in display order.
    pub profiles: Vec<IndexMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceAck {
    pub task_index: usize,
    pub profile_index: usize,
    /// Next task to fetch, or `None` when the questionnaire is due.
    pub next_task: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireAck {
    pub session_id: String,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub status: SessionStatus,
    pub tasks_total: usize,
    pub tasks_answered: usize,
    pub questionnaire_complete: bool,
}

/// Questionnaire item as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: String,
    pub key: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleView {
    pub min: i64,
    pub max: i64,
}

impl From<&Question> for QuestionView {
    fn from(q: &Question) -> Self {
        let (options, scale) = match &q.response {
            ResponseFormat::Options(o) => (Some(o.clone()), None),
            ResponseFormat::Scale { min, max } => (None, Some(ScaleView { min: *min, max: *max })),
        };
        Self {
            id: q.id.clone(),
            key: q.key.clone(),
            prompt: q.prompt.clone(),
            options,
            scale,
        }
    }
}

struct Inner {
    sessions: IndexMap<String, SessionState>,
    log: EventLog,
}

pub struct SurveyService {
    design: Arc<DesignSpec>,
    config: ServiceConfig,
    inner: RwLock<Inner>,
}

impl SurveyService {
    /// A service whose log lives only in memory.
    pub fn in_memory(design: Arc<DesignSpec>, config: ServiceConfig) -> Self {
        Self {
            design,
            config,
            inner: RwLock::new(Inner {
                sessions: IndexMap::new(),
                log: EventLog::in_memory(),
            }),
        }
    }

    /// Opens `store`, replaying any existing log, and appends new events to
    /// it. A store that cannot be written still opens; writes then fail
    /// with [`ServiceError::Unavailable`].
    pub fn open(design: Arc<DesignSpec>, store: &Path, config: ServiceConfig) -> Result<Self, ServiceError> {
        if let Err(e) = std::fs::create_dir_all(store) {
            tracing::warn!("cannot create store {}: {e}", store.display());
        }
        let path = store.join(EVENTS_FILE);
        let records = match read_log(&path) {
            Err(ServiceError::Unavailable(e)) => {
                tracing::warn!("cannot read event log: {e}");
                Vec::new()
            }
            other => other?,
        };
        let svc = Self::replay(design, &records, config)?;
        {
            let mut inner = svc.inner.write();
            let history = inner.log.records().to_vec();
            inner.log = EventLog::at(path, history);
        }
        Ok(svc)
    }

    /// Rebuilds state from records; later events extend an in-memory log.
    pub fn replay(design: Arc<DesignSpec>, records: &[EventRecord], config: ServiceConfig) -> Result<Self, ServiceError> {
        let svc = Self::in_memory(design, config);
        {
            let mut inner = svc.inner.write();
            for (i, record) in records.iter().enumerate() {
                let corrupt = |message: String| ServiceError::CorruptLog { line: i + 1, message };
                if record.seq != i as u64 + 1 {
                    return Err(corrupt(format!("sequence {} where {} expected", record.seq, i + 1)));
                }
                let event = record.event().map_err(corrupt)?;
                svc.check(&inner, &event).map_err(|e| corrupt(e.to_string()))?;
                svc.apply(&mut inner, &event, record.timestamp).map_err(|e| corrupt(e.to_string()))?;
            }
            inner.log = EventLog::with_history(records.to_vec());
        }
        Ok(svc)
    }

    pub fn design(&self) -> &Arc<DesignSpec> {
        &self.design
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn now(&self) -> DateTime<Utc> {
        self.config.clock.now()
    }

    /// Validates an event against current state without changing it.
    fn check(&self, inner: &Inner, event: &Event) -> Result<(), ServiceError> {
        match event {
            Event::SessionCreated(e) => {
                if inner.sessions.contains_key(&e.session_id) {
                    return Err(ServiceError::conflict(format!("session {} exists", e.session_id)));
                }
                e.seed
                    .parse::<u64>()
                    .map_err(|_| ServiceError::Internal(format!("bad seed {:?}", e.seed)))?;
            }
            Event::ChoiceRecorded(e) => {
                let s = inner
                    .sessions
                    .get(&e.session_id)
                    .ok_or_else(|| ServiceError::NotFound(e.session_id.clone()))?;
                if s.current_task() != Some(e.task_index) {
                    return Err(ServiceError::conflict(format!("task {} is not current", e.task_index)));
                }
                if !(1..=self.design.profiles_per_task).contains(&e.profile_index) {
                    return Err(ServiceError::unprocessable(format!("profile {}", e.profile_index)));
                }
            }
            Event::QuestionnaireRecorded(e) => {
                let s = inner
                    .sessions
                    .get(&e.session_id)
                    .ok_or_else(|| ServiceError::NotFound(e.session_id.clone()))?;
                if s.current_task().is_some() || s.answers.is_some() {
                    return Err(ServiceError::conflict("questionnaire out of order"));
                }
            }
        }
        Ok(())
    }

    fn apply(&self, inner: &mut Inner, event: &Event, at: DateTime<Utc>) -> Result<(), ServiceError> {
        match event {
            Event::SessionCreated(e) => {
                let seed: u64 = e
                    .seed
                    .parse()
                    .map_err(|_| ServiceError::Internal(format!("bad seed {:?}", e.seed)))?;
                let plan = generate_plan(&self.design, e.session_id.clone(), seed)
                    .map_err(|err| ServiceError::Internal(err.to_string()))?;
                if display_order(&self.design, &plan) != e.attribute_display_order {
                    return Err(ServiceError::Internal("display order differs from plan".into()));
                }
                let n = plan.tasks.len();
                inner.sessions.insert(
                    e.session_id.clone(),
                    SessionState {
                        plan,
                        created_at: at,
                        last_activity: at,
                        choices: vec![None; n],
                        answers: None,
                    },
                );
            }
            Event::ChoiceRecorded(e) => {
                let s = inner.sessions.get_mut(&e.session_id).expect("checked");
                s.choices[e.task_index - 1] = Some(RecordedChoice {
                    profile_index: e.profile_index,
                    at,
                });
                s.last_activity = at;
            }
            Event::QuestionnaireRecorded(e) => {
                let s = inner.sessions.get_mut(&e.session_id).expect("checked");
                s.answers = Some(e.answers.clone());
                s.last_activity = at;
            }
        }
        Ok(())
    }

    fn commit(&self, inner: &mut Inner, event: Event) -> Result<(), ServiceError> {
        self.check(inner, &event)?;
        let now = self.now();
        inner.log.append(now, &event)?;
        self.apply(inner, &event, now)
    }

    fn writable<'a>(&self, inner: &'a Inner, id: &str) -> Result<&'a SessionState, ServiceError> {
        let s = inner
            .sessions
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        if s.status(self.now(), self.config.abandon_after) == SessionStatus::Abandoned {
            return Err(ServiceError::conflict(format!("session {id} was abandoned")));
        }
        Ok(s)
    }

    pub fn create_session(&self) -> Result<CreatedSession, ServiceError> {
        let seed = self.config.entropy.seed();
        let session_id = self.config.entropy.session_id();
        let plan = generate_plan(&self.design, session_id.clone(), seed)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let event = Event::SessionCreated(SessionCreated {
            session_id: session_id.clone(),
            seed: seed.to_string(),
            attribute_display_order: display_order(&self.design, &plan),
        });
        let mut inner = self.inner.write();
        self.commit(&mut inner, event)?;
        tracing::info!(%session_id, "session created");
        Ok(CreatedSession {
            session_id,
            tasks_total: plan.tasks.len(),
        })
    }

    pub fn next_task(&self, id: &str) -> Result<TaskPayload, ServiceError> {
        let inner = self.inner.read();
        let s = self.writable(&inner, id)?;
        let Some(n) = s.current_task() else {
            return Err(ServiceError::Conflict {
                message: "all tasks answered; submit the questionnaire".into(),
                next: Some(format!("/sessions/{id}/questionnaire")),
            });
        };
        let task = &s.plan.tasks[n - 1];
        let order = &task.attribute_display_order;
        Ok(TaskPayload {
            task_index: task.task_index,
            tasks_total: s.plan.tasks.len(),
            attribute_display_order: order.iter().map(|&a| self.design.attributes[a].name.clone()).collect(),
            profiles: task
                .profiles
                .iter()
                .map(|p| {
                    order
                        .iter()
                        .map(|&a| {
                            let attr = &self.design.attributes[a];
                            (attr.name.clone(), attr.levels[p.levels[a]].name.clone())
                        })
                        .collect()
                })
                .collect(),
        })
    }

    pub fn record_choice(&self, id: &str, task_index: usize, profile_index: usize) -> Result<ChoiceAck, ServiceError> {
        let mut inner = self.inner.write();
        let s = self.writable(&inner, id)?;
        let total = s.plan.tasks.len();
        if !(1..=total).contains(&task_index) {
            return Err(ServiceError::unprocessable(format!("no task {task_index}; tasks run 1..={total}")));
        }
        let per_task = self.design.profiles_per_task;
        if !(1..=per_task).contains(&profile_index) {
            return Err(ServiceError::unprocessable(format!(
                "profile_index {profile_index} outside 1..={per_task}"
            )));
        }
        if let Some(prev) = &s.choices[task_index - 1] {
            if prev.profile_index == profile_index {
                return Ok(ChoiceAck {
                    task_index,
                    profile_index,
                    next_task: s.current_task(),
                });
            }
            return Err(ServiceError::conflict(format!(
                "task {task_index} already answered with profile {}",
                prev.profile_index
            )));
        }
        let current = s.current_task().expect("an unanswered task exists");
        if task_index != current {
            return Err(ServiceError::conflict(format!(
                "task {task_index} is not the current task; answer task {current} first"
            )));
        }
        self.commit(
            &mut inner,
            Event::ChoiceRecorded(ChoiceRecorded {
                session_id: id.to_string(),
                task_index,
                profile_index,
            }),
        )?;
        Ok(ChoiceAck {
            task_index,
            profile_index,
            next_task: inner.sessions[id].current_task(),
        })
    }

    /// Normalizes raw answers keyed by question key or id. JSON strings
    /// and integers are accepted.
    pub fn normalize_answers(
        &self,
        raw: &IndexMap<String, serde_json::Value>,
    ) -> Result<IndexMap<String, String>, ServiceError> {
        let qs = &self.design.questionnaire;
        for k in raw.keys() {
            if !qs.iter().any(|q| &q.key == k || &q.id == k) {
                return Err(ServiceError::unprocessable(format!("unknown question {k:?}")));
            }
        }
        let mut out = IndexMap::new();
        for q in qs {
            let invalid = |message: String| ServiceError::Unprocessable {
                message,
                question: Some(q.id.clone()),
            };
            let value = raw
                .get(&q.key)
                .or_else(|| raw.get(&q.id))
                .ok_or_else(|| invalid(format!("{}: answer required", q.id)))?;
            let text = match value {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                other => return Err(invalid(format!("{}: unsupported answer {other}", q.id))),
            };
            let canonical = q.normalize_answer(&text).map_err(invalid)?;
            out.insert(q.key.clone(), canonical);
        }
        Ok(out)
    }

    pub fn submit_questionnaire(
        &self,
        id: &str,
        raw: &IndexMap<String, serde_json::Value>,
    ) -> Result<QuestionnaireAck, ServiceError> {
        let mut inner = self.inner.write();
        let s = self.writable(&inner, id)?;
        if let Some(n) = s.current_task() {
            return Err(ServiceError::Conflict {
                message: format!("choice tasks incomplete; task {n} is next"),
                next: Some(format!("/sessions/{id}/tasks/next")),
            });
        }
        let answers = self.normalize_answers(raw)?;
        if let Some(prev) = &s.answers {
            if *prev == answers {
                return Ok(QuestionnaireAck {
                    session_id: id.to_string(),
                    status: SessionStatus::Complete,
                });
            }
            return Err(ServiceError::conflict("questionnaire already submitted with different answers"));
        }
        self.commit(
            &mut inner,
            Event::QuestionnaireRecorded(QuestionnaireRecorded {
                session_id: id.to_string(),
                answers,
            }),
        )?;
        Ok(QuestionnaireAck {
            session_id: id.to_string(),
            status: SessionStatus::Complete,
        })
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, ServiceError> {
        let inner = self.inner.read();
        let s = inner
            .sessions
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        Ok(SessionSummary {
            session_id: id.to_string(),
            status: s.status(self.now(), self.config.abandon_after),
            tasks_total: s.plan.tasks.len(),
            tasks_answered: s.tasks_answered(),
            questionnaire_complete: s.answers.is_some(),
        })
    }

    pub fn questionnaire(&self) -> Vec<QuestionView> {
        self.design.questionnaire.iter().map(QuestionView::from).collect()
    }

    /// Every record written or replayed so far.
    pub fn events(&self) -> Vec<EventRecord> {
        self.inner.read().log.records().to_vec()
    }

    /// Snapshot of every session, in creation order.
    pub fn sessions(&self) -> Vec<SessionState> {
        self.inner.read().sessions.values().cloned().collect()
    }

    /// Complete sessions as a dataset, in session creation order.
    pub fn complete_dataset(&self) -> Result<ChoiceDataset, ServiceError> {
        let complete: Vec<SessionState> = {
            let inner = self.inner.read();
            inner
                .sessions
                .values()
                .filter(|s| s.answers.is_some())
                .cloned()
                .collect()
        };
        let mut ds = ChoiceDataset::empty(self.design.clone());
        for s in complete {
            let choices: Vec<usize> = s.choices.iter().map(|c| c.as_ref().expect("complete").profile_index).collect();
            ds = ds
                .append_session(&s.plan, &choices, s.answers.as_ref().expect("complete"))
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        Ok(ds)
    }

    /// CSV export of complete sessions.
    pub fn export_csv(&self) -> Result<String, ServiceError> {
        Ok(self.complete_dataset()?.export_csv())
    }
}

fn display_order(design: &DesignSpec, plan: &SessionPlan) -> Vec<String> {
    plan.tasks
        .first()
        .map(|t| {
            t.attribute_display_order
                .iter()
                .map(|&a| design.attributes[a].name.clone())
                .collect()
        })
        .unwrap_or_default()
}
