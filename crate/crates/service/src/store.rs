//! Append-only response log and the in-memory state rebuilt from it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use kgmcq_core::hashing::{derive_seed, stable_u64};
use kgmcq_core::mcq::shuffled_options;
use kgmcq_core::Mcq;
use kgmcq_model::ResponseSummary;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const OPTION_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub mcq_id: String,
    pub session: String,
    /// Index into the options as presented to this session.
    pub option: usize,
    pub correct: bool,
    /// Normalized to [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liking: Option<f64>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Presented { session: String, mcq_id: String, timestamp: u64 },
    Response(ResponseRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseInput {
    pub session: String,
    pub mcq_id: String,
    pub option: usize,
    /// Percentage scale, 0 to 100.
    #[serde(default)]
    pub liking: Option<i64>,
    #[serde(default)]
    pub submission_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub session: String,
    pub mcq_id: String,
    pub answered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presented {
    pub mcq_id: String,
    pub stem: String,
    pub options: Vec<String>,
    pub answered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Question(Presented),
    Complete { answered: usize, total: usize },
}

#[derive(Debug, Default)]
struct SessionState {
    presented: Vec<String>,
    answered: BTreeMap<String, usize>,
}

/// Questions, every event seen so far, and an optional log file that each
/// new event is appended to before it becomes visible.
#[derive(Debug)]
pub struct Store {
    mcqs: Vec<Mcq>,
    index: HashMap<String, usize>,
    seed: u64,
    events: Vec<LogEvent>,
    records: Vec<ResponseRecord>,
    per_mcq: Vec<Vec<usize>>,
    sessions: HashMap<String, SessionState>,
    log: Option<(PathBuf, BufWriter<File>)>,
}

/// Reads every event of a log file; a missing file is an empty log.
pub fn replay(path: &Path) -> Result<Vec<LogEvent>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ServiceError::Log { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

impl Store {
    pub fn in_memory(mcqs: Vec<Mcq>, seed: u64) -> Self {
        let index = mcqs.iter().enumerate().map(|(i, m)| (m.id.clone(), i)).collect();
        let per_mcq = vec![Vec::new(); mcqs.len()];
        Self {
            mcqs,
            index,
            seed,
            events: Vec::new(),
            records: Vec::new(),
            per_mcq,
            sessions: HashMap::new(),
            log: None,
        }
    }

    /// Replays `log_path` (if it exists) and appends new events to it.
    pub fn open(mcqs: Vec<Mcq>, seed: u64, log_path: &Path) -> Result<Self, ServiceError> {
        let mut store = Self::in_memory(mcqs, seed);
        for event in replay(log_path)? {
            store.apply(event)?;
        }
        if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(log_path)?;
        store.log = Some((log_path.to_path_buf(), BufWriter::new(file)));
        Ok(store)
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn mcqs(&self) -> &[Mcq] {
        &self.mcqs
    }

    pub fn mcq(&self, id: &str) -> Option<&Mcq> {
        self.index.get(id).map(|&i| &self.mcqs[i])
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn responses_for(&self, id: &str) -> impl Iterator<Item = &ResponseRecord> {
        let list = self.index.get(id).map(|&i| self.per_mcq[i].as_slice()).unwrap_or(&[]);
        list.iter().map(|&r| &self.records[r])
    }

    /// Option order for `(session, mcq)`; stable across calls and restarts.
    pub fn option_order(&self, session: &str, mcq: &Mcq) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &["present", session, &mcq.id]));
        shuffled_options(mcq, &mut rng)
    }

    fn apply(&mut self, event: LogEvent) -> Result<(), ServiceError> {
        match &event {
            LogEvent::Presented { session, mcq_id, .. } => {
                if !self.index.contains_key(mcq_id) {
                    return Err(ServiceError::NotFound(mcq_id.clone()));
                }
                let s = self.sessions.entry(session.clone()).or_default();
                if !s.presented.contains(mcq_id) {
                    s.presented.push(mcq_id.clone());
                }
            }
            LogEvent::Response(r) => {
                let &i = self.index.get(&r.mcq_id).ok_or_else(|| ServiceError::NotFound(r.mcq_id.clone()))?;
                let s = self.sessions.entry(r.session.clone()).or_default();
                if s.answered.contains_key(&r.mcq_id) {
                    return Err(ServiceError::Duplicate { session: r.session.clone(), mcq_id: r.mcq_id.clone() });
                }
                if !s.presented.contains(&r.mcq_id) {
                    s.presented.push(r.mcq_id.clone());
                }
                s.answered.insert(r.mcq_id.clone(), self.records.len());
                self.per_mcq[i].push(self.records.len());
                self.records.push(r.clone());
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn commit(&mut self, event: LogEvent) -> Result<(), ServiceError> {
        if let Some((_, w)) = self.log.as_mut() {
            serde_json::to_writer(&mut *w, &event).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.apply(event)
    }

    fn answered(&self, session: &str) -> usize {
        self.sessions.get(session).map_or(0, |s| s.answered.len())
    }

    /// A pending question of the session if one exists, otherwise the
    /// unanswered question with the fewest responses overall.
    pub fn next_question(&mut self, session: &str, timestamp: u64) -> Result<Next, ServiceError> {
        if session.trim().is_empty() {
            return Err(ServiceError::EmptySession);
        }
        let total = self.mcqs.len();
        let answered = self.answered(session);
        let state = self.sessions.get(session);
        let pending = state.and_then(|s| s.presented.iter().find(|id| !s.answered.contains_key(*id)).cloned());
        let chosen = match pending {
            Some(id) => Some(id),
            None => (0..total)
                .filter(|&i| state.is_none_or(|s| !s.answered.contains_key(&self.mcqs[i].id)))
                .min_by_key(|&i| (self.per_mcq[i].len(), stable_u64(&[session, &self.mcqs[i].id]), i))
                .map(|i| self.mcqs[i].id.clone()),
        };
        let Some(id) = chosen else {
            return Ok(Next::Complete { answered, total });
        };
        if !state.is_some_and(|s| s.presented.contains(&id)) {
            self.commit(LogEvent::Presented { session: session.to_string(), mcq_id: id.clone(), timestamp })?;
        }
        let mcq = self.mcq(&id).expect("chosen from the question list");
        Ok(Next::Question(Presented {
            mcq_id: id.clone(),
            stem: mcq.stem.clone(),
            options: self.option_order(session, mcq),
            answered,
            total,
        }))
    }

    pub fn record_response(&mut self, input: &ResponseInput, timestamp: u64) -> Result<Ack, ServiceError> {
        if input.session.trim().is_empty() {
            return Err(ServiceError::EmptySession);
        }
        let mcq = self.mcq(&input.mcq_id).ok_or_else(|| ServiceError::NotFound(input.mcq_id.clone()))?;
        let state = self.sessions.get(&input.session);
        if let Some(&prev) = state.and_then(|s| s.answered.get(&input.mcq_id)) {
            let prev = &self.records[prev];
            // a retried submission gets the original acknowledgment
            if input.submission_id.is_some() && prev.submission_id == input.submission_id {
                return Ok(self.ack(&input.session, &input.mcq_id));
            }
            return Err(ServiceError::Duplicate { session: input.session.clone(), mcq_id: input.mcq_id.clone() });
        }
        if !state.is_some_and(|s| s.presented.contains(&input.mcq_id)) {
            return Err(ServiceError::NotPresented { session: input.session.clone(), mcq_id: input.mcq_id.clone() });
        }
        if input.option >= OPTION_COUNT {
            return Err(ServiceError::InvalidOption(input.option));
        }
        let liking = match input.liking {
            Some(l) if !(0..=100).contains(&l) => return Err(ServiceError::InvalidLiking(l)),
            Some(l) => Some(l as f64 / 100.0),
            None => None,
        };
        let correct = self.option_order(&input.session, mcq)[input.option] == mcq.key;
        let record = ResponseRecord {
            mcq_id: input.mcq_id.clone(),
            session: input.session.clone(),
            option: input.option,
            correct,
            liking,
            timestamp,
            submission_id: input.submission_id.clone(),
        };
        self.commit(LogEvent::Response(record))?;
        Ok(self.ack(&input.session, &input.mcq_id))
    }

    fn ack(&self, session: &str, mcq_id: &str) -> Ack {
        Ack {
            accepted: true,
            session: session.to_string(),
            mcq_id: mcq_id.to_string(),
            answered: self.answered(session),
            total: self.mcqs.len(),
        }
    }

    /// Per-question counts recomputed from the stored records.
    pub fn summaries(&self) -> Vec<ResponseSummary> {
        self.mcqs.iter().map(|m| summarize(&m.id, self.responses_for(&m.id))).collect()
    }

    pub fn sessions(&self) -> BTreeSet<&str> {
        self.sessions.keys().map(String::as_str).collect()
    }
}

pub fn summarize<'a>(mcq_id: &str, records: impl Iterator<Item = &'a ResponseRecord>) -> ResponseSummary {
    let (mut n, mut wrong, mut liking_sum, mut liking_n) = (0, 0, 0.0, 0usize);
    for r in records {
        n += 1;
        wrong += usize::from(!r.correct);
        if let Some(l) = r.liking {
            liking_sum += l;
            liking_n += 1;
        }
    }
    ResponseSummary {
        mcq_id: mcq_id.to_string(),
        responses: n,
        incorrect: wrong,
        liking_mean: (liking_n > 0).then(|| liking_sum / liking_n as f64),
    }
}

/// Summaries straight from a log file, without the question list.
pub fn summaries_from_log(path: &Path) -> Result<Vec<ResponseSummary>, ServiceError> {
    let mut by_id: BTreeMap<String, Vec<ResponseRecord>> = BTreeMap::new();
    for e in replay(path)? {
        if let LogEvent::Response(r) = e {
            by_id.entry(r.mcq_id.clone()).or_default().push(r);
        }
    }
    Ok(by_id.iter().map(|(id, rs)| summarize(id, rs.iter())).collect())
}
