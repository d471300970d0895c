//! SVG rendering through an external Graphviz `dot` binary.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

/// Overrides the renderer binary.
pub const RENDERER_ENV: &str = "DAQSYNTH_DOT";

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("renderer failed: {0}")]
    Failed(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Renderer {
    program: PathBuf,
}

impl Default for Renderer {
    fn default() -> Self {
        Self::from_env()
    }
}

impl Renderer {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self { program: program.into() }
    }

    pub fn from_env() -> Self {
        match std::env::var_os(RENDERER_ENV) {
            Some(p) if !p.is_empty() => Self::new(p),
            _ => Self::new("dot"),
        }
    }

    /// `Ok(None)` when the binary cannot be started; a missing renderer is
    /// not an error.
    pub fn svg(&self, dot: &str) -> Result<Option<String>, RenderError> {
        let spawn = || {
            Command::new(&self.program)
                .arg("-Tsvg")
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .spawn()
        };
        let mut child = spawn();
        // ETXTBSY: a freshly written executable can still be open in a
        // concurrently forked process.
        for _ in 0..5 {
            match &child {
                Err(e) if e.raw_os_error() == Some(26) => {
                    std::thread::sleep(std::time::Duration::from_millis(20));
                    child = spawn();
                }
                _ => break,
            }
        }
        let mut child = match child {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) if e.kind() == std::io::ErrorKind::PermissionDenied => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        // Write from a separate thread so a large SVG cannot deadlock the pipes.
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let input = dot.to_owned();
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let output = child.wait_with_output()?;
        let _ = writer.join();
        if !output.status.success() {
            return Err(RenderError::Failed(String::from_utf8_lossy(&output.stderr).trim().to_owned()));
        }
        String::from_utf8(output.stdout)
            .map(Some)
            .map_err(|_| RenderError::Failed(String::from("renderer output is not UTF-8")))
    }
}
