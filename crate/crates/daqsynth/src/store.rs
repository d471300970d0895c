//! Append-only session logs: one JSON record per line,
//! `{"seq": n, "ts": unix_ms, "event": {...}}`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use daqsynth_core::flow::{ApplyError, EventSink, SessionEvent, SessionState, SinkError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path} line {line}: event rejected: {error}")]
    Replay { path: PathBuf, line: usize, error: ApplyError },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub ts: u64,
    pub event: SessionEvent,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Writes records to one log file.
pub struct JsonlSink {
    file: File,
    seq: u64,
}

impl JsonlSink {
    /// Creates or truncates `path`.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            file: File::create(path)?,
            seq: 0,
        })
    }

    /// Continues an existing log after its last line.
    pub fn append(path: &Path) -> std::io::Result<Self> {
        let seq = match File::open(path) {
            Ok(f) => BufReader::new(f).lines().count() as u64,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e),
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file, seq })
    }

    pub fn write(&mut self, event: &SessionEvent) -> std::io::Result<()> {
        let record = Record {
            seq: self.seq,
            ts: now_ms(),
            event: event.clone(),
        };
        let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        self.seq += 1;
        Ok(())
    }
}

impl EventSink for JsonlSink {
    fn record(&mut self, event: &SessionEvent) -> Result<(), SinkError> {
        self.write(event).map_err(|e| SinkError(e.to_string()))
    }
}

/// Reads every event of a log. A bad line is reported with its 1-based
/// number.
pub fn read_log(path: &Path) -> Result<Vec<SessionEvent>, StoreError> {
    let (events, error) = read_log_prefix(path)?;
    match error {
        Some(e) => Err(e),
        None => Ok(events),
    }
}

/// Reads events up to the first bad line and returns them along with the
/// error, if any.
pub fn read_log_prefix(path: &Path) -> Result<(Vec<SessionEvent>, Option<StoreError>), StoreError> {
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Record>(body)
            .map_err(|e| e.to_string())
            .and_then(|r| if complete { Ok(r) } else { Err(String::from("truncated record")) });
        match parsed {
            Ok(record) => events.push(record.event),
            Err(message) => {
                return Ok((
                    events,
                    Some(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message,
                    }),
                ))
            }
        }
    }
    Ok((events, None))
}

/// Rebuilds a state from a log, naming the line of the first event that
/// does not apply.
pub fn replay_log(path: &Path, events: &[SessionEvent]) -> Result<SessionState, StoreError> {
    let first = events.first().ok_or_else(|| StoreError::Corrupt {
        path: path.to_path_buf(),
        line: 1,
        message: String::from("log is empty"),
    })?;
    let mut state = SessionState::start(first).map_err(|error| StoreError::Replay {
        path: path.to_path_buf(),
        line: 1,
        error,
    })?;
    for (i, event) in events.iter().enumerate().skip(1) {
        state.apply(event).map_err(|error| StoreError::Replay {
            path: path.to_path_buf(),
            line: i + 1,
            error,
        })?;
    }
    Ok(state)
}

/// Session logs kept as `<root>/<id>.jsonl`.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{}.jsonl", sanitize(id)))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.path(id).is_file()
    }

    /// A sink for a new session; an existing log with the same id is
    /// replaced.
    pub fn create(&self, id: &str) -> std::io::Result<JsonlSink> {
        JsonlSink::create(&self.path(id))
    }

    /// A sink that continues an existing log.
    pub fn append_to(&self, id: &str) -> std::io::Result<JsonlSink> {
        JsonlSink::append(&self.path(id))
    }

    pub fn save_event(&self, id: &str, event: &SessionEvent) -> Result<(), StoreError> {
        self.append_to(id)?.write(event)?;
        Ok(())
    }

    pub fn load_events(&self, id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        let path = self.path(id);
        if !path.is_file() {
            return Err(StoreError::NotFound(id.to_owned()));
        }
        read_log(&path)
    }

    pub fn load_session(&self, id: &str) -> Result<SessionState, StoreError> {
        let events = self.load_events(id)?;
        replay_log(&self.path(id), &events)
    }

    pub fn ids(&self) -> std::io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// File-name-safe form of an id: anything but ASCII alphanumerics, `-`, `_`
/// and `.` becomes `_`; a leading dot is replaced too.
pub fn sanitize(id: &str) -> String {
    let mut out: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if out.starts_with('.') || out.is_empty() {
        out.insert(0, '_');
    }
    out
}

/// Forwards to a sink and keeps a copy of every recorded event.
pub struct Tee<S> {
    inner: S,
    events: Vec<SessionEvent>,
}

impl<S> Tee<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, events: Vec::new() }
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<SessionEvent> {
        self.events
    }
}

impl<S: EventSink> EventSink for Tee<S> {
    fn record(&mut self, event: &SessionEvent) -> Result<(), SinkError> {
        self.inner.record(event)?;
        self.events.push(event.clone());
        Ok(())
    }
}
