//! Concurrent session registry backed by append-only JSON-lines logs.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use crate::session::{
    now_ms, EstimateSnapshot, Event, NextQuery, Session, SessionError, SessionInfo, SessionResult,
    SessionSpec,
};

#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<RwLock<Session>>>>,
    log_dir: Option<PathBuf>,
}

fn storage(e: impl std::fmt::Display) -> SessionError {
    SessionError::Storage(e.to_string())
}

impl SessionStore {
    /// In-memory store without persistence.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Store persisting to `dir`, rebuilding every session already logged there.
    pub fn open(dir: impl Into<PathBuf>) -> SessionResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(storage)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(storage)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let session = Session::replay(&read_log(&path)?)?;
            sessions.insert(session.id().to_string(), Arc::new(RwLock::new(session)));
        }
        Ok(SessionStore {
            sessions: RwLock::new(sessions),
            log_dir: Some(dir),
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, event: &Event) -> SessionResult<()> {
        let Some(path) = self.log_path(id) else {
            return Ok(());
        };
        let mut line = serde_json::to_string(event).map_err(storage)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(storage)?;
        f.write_all(line.as_bytes()).map_err(storage)
    }

    fn get(&self, id: &str) -> SessionResult<Arc<RwLock<Session>>> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn create(&self, spec: SessionSpec) -> SessionResult<String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let at_ms = now_ms();
        let session = Session::new(id.clone(), spec.clone(), at_ms)?;
        self.append(
            &id,
            &Event::Created {
                session_id: id.clone(),
                spec,
                at_ms,
            },
        )?;
        self.sessions
            .write()
            .expect("registry lock")
            .insert(id.clone(), Arc::new(RwLock::new(session)));
        Ok(id)
    }

    pub fn next_query(&self, id: &str) -> SessionResult<NextQuery> {
        let s = self.get(id)?;
        let mut s = s.write().expect("session lock");
        s.next_query()
    }

    /// Accepts an answer to the pending query. The event is logged before the
    /// in-memory state changes, both under the session's write lock.
    pub fn submit(&self, id: &str, value: i64) -> SessionResult<EstimateSnapshot> {
        let s = self.get(id)?;
        let mut s = s.write().expect("session lock");
        let at_ms = now_ms();
        let event = s.answer_event(value, at_ms)?;
        self.append(id, &event)?;
        s.submit(value, at_ms)
    }

    pub fn estimate(&self, id: &str) -> SessionResult<EstimateSnapshot> {
        Ok(self.get(id)?.read().expect("session lock").snapshot())
    }

    pub fn info(&self, id: &str) -> SessionResult<SessionInfo> {
        Ok(self.get(id)?.read().expect("session lock").info())
    }
}

pub fn read_log(path: &Path) -> SessionResult<Vec<Event>> {
    fs::read_to_string(path)
        .map_err(storage)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(storage))
        .collect()
}
