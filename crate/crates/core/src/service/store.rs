//! In-memory session map backed by an append-only JSON-lines journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elicitation::{ElicitationSession, Judgment, OutcomeScale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    Create {
        id: String,
        scale: OutcomeScale,
        feedback_seed: u64,
    },
    Apply {
        id: String,
        timestamp_ms: u64,
        #[serde(flatten)]
        judgment: Judgment,
    },
    /// Stored reply to a request carrying an idempotency key.
    Response {
        key: String,
        status: u16,
        body: serde_json::Value,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSession {
    pub session: ElicitationSession,
    pub feedback_seed: u64,
}

#[derive(Debug)]
pub struct SessionStore {
    sessions: HashMap<String, StoredSession>,
    responses: HashMap<String, (u16, serde_json::Value)>,
    journal: Option<(PathBuf, File)>,
}

impl SessionStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        Self {
            sessions: HashMap::new(),
            responses: HashMap::new(),
            journal: None,
        }
    }

    /// Opens (or creates) a journal and replays every event in it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: JournalEvent =
                    serde_json::from_str(&line).map_err(|e| Error::parse(idx + 1, e.column(), e.to_string()))?;
                store.replay(event).map_err(|e| Error::parse(idx + 1, 1, format!("replay failed: {e}")))?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.journal = Some((path, file));
        Ok(store)
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|(p, _)| p.as_path())
    }

    fn replay(&mut self, event: JournalEvent) -> Result<()> {
        match event {
            JournalEvent::Create { id, scale, feedback_seed } => {
                self.sessions.insert(
                    id.clone(),
                    StoredSession {
                        session: ElicitationSession::with_id(id, scale),
                        feedback_seed,
                    },
                );
            }
            JournalEvent::Apply { id, timestamp_ms, judgment } => {
                let stored = self
                    .sessions
                    .get_mut(&id)
                    .ok_or_else(|| Error::NotFound(format!("session {id}")))?;
                stored.session = stored.session.apply(judgment, timestamp_ms)?;
            }
            JournalEvent::Response { key, status, body } => {
                self.responses.insert(key, (status, body));
            }
        }
        Ok(())
    }

    fn append(&mut self, event: &JournalEvent) -> Result<()> {
        if let Some((_, file)) = &mut self.journal {
            let mut line = serde_json::to_string(event)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        Ok(())
    }

    pub fn create(&mut self, scale: OutcomeScale, feedback_seed: u64) -> Result<&StoredSession> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let event = JournalEvent::Create {
            id: id.clone(),
            scale,
            feedback_seed,
        };
        self.append(&event)?;
        self.replay(event)?;
        Ok(&self.sessions[&id])
    }

    pub fn get(&self, id: &str) -> Result<&StoredSession> {
        self.sessions
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    /// Applies a judgement; only successful transitions reach the journal.
    pub fn apply(&mut self, id: &str, judgment: Judgment, timestamp_ms: u64) -> Result<&StoredSession> {
        let next = self.get(id)?.session.apply(judgment.clone(), timestamp_ms)?;
        self.append(&JournalEvent::Apply {
            id: id.to_string(),
            timestamp_ms,
            judgment,
        })?;
        let stored = self.sessions.get_mut(id).expect("checked above");
        stored.session = next;
        Ok(stored)
    }

    pub fn recall(&self, key: &str) -> Option<&(u16, serde_json::Value)> {
        self.responses.get(key)
    }

    pub fn remember(&mut self, key: String, status: u16, body: serde_json::Value) -> Result<()> {
        let event = JournalEvent::Response { key, status, body };
        self.append(&event)?;
        self.replay(event)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Sessions sorted by id, for comparing stores.
    pub fn snapshot(&self) -> Vec<StoredSession> {
        let mut all: Vec<StoredSession> = self.sessions.values().cloned().collect();
        all.sort_by(|a, b| a.session.id.cmp(&b.session.id));
        all
    }
}
