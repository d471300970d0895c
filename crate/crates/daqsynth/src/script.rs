//! Script files: loading them as a backend, and recording live traffic
//! into the same format.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use daqsynth_core::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, ScriptEntry, ScriptedBackend};
use daqsynth_core::testbench::sha256_hex;

pub fn load_script(path: &Path) -> Result<ScriptedBackend, LlmError> {
    let text = std::fs::read_to_string(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
    ScriptedBackend::from_jsonl(&text)
}

/// Proxies another backend and appends every successful exchange to a
/// script file. Failed calls are passed through and not recorded.
pub struct RecordingBackend<B> {
    inner: B,
    sink: File,
    recorded: usize,
}

impl<B> RecordingBackend<B> {
    pub fn recorded(&self) -> usize {
        self.recorded
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

pub fn record_wrap<B: ChatBackend>(inner: B, sink: &Path) -> Result<RecordingBackend<B>, LlmError> {
    let sink = OpenOptions::new()
        .create(true)
        .append(true)
        .open(sink)
        .map_err(|e| LlmError::Io(format!("{}: {e}", sink.display())))?;
    Ok(RecordingBackend {
        inner,
        sink,
        recorded: 0,
    })
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.send(request)?;
        let entry = ScriptEntry {
            response: response.content.clone(),
            request_digest: Some(sha256_hex(request.to_json().as_bytes())),
            finish_reason: Some(response.finish_reason),
            usage: response.usage,
        };
        writeln!(self.sink, "{}", entry.to_line()).map_err(|e| LlmError::Io(e.to_string()))?;
        self.recorded += 1;
        Ok(response)
    }
}
