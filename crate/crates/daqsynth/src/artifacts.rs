//! Files written for a finished or failed session.

use std::path::{Path, PathBuf};

use daqsynth_core::diagram::{format_label, to_dot};
use daqsynth_core::flow::SessionState;
use daqsynth_core::metrics::Metrics;

use crate::render::Renderer;
use crate::store::sanitize;

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct WrittenArtifacts {
    pub architecture_dot: Option<PathBuf>,
    pub architecture_svg: Option<PathBuf>,
    pub blocks: Vec<PathBuf>,
    pub summary: Option<PathBuf>,
    pub metrics: PathBuf,
}

/// Canonical DOT of the accepted architecture.
pub fn architecture_dot(state: &SessionState) -> Option<String> {
    state.architecture.as_ref().map(|g| to_dot(g).into_string())
}

pub fn block_markdown(state: &SessionState, block: &str) -> Option<String> {
    let text = state.details.get(block)?;
    let queued = state.block_queue.iter().find(|q| q.block == block);
    let mut out = String::new();
    match queued {
        Some(q) => {
            out.push_str(&format!("# {}\n\n", format_label(&q.label, q.multiplicity)));
            out.push_str(&format!("Category: {}\n\n", q.category.name()));
        }
        None => out.push_str(&format!("# {block}\n\n")),
    }
    out.push_str(text.trim_end());
    out.push('\n');
    Some(out)
}

/// Writes whatever the state holds. Missing pieces of a failed run are
/// skipped; SVG is attempted only when a renderer is given and silently
/// skipped when it is unavailable or fails.
pub fn write_artifacts(
    dir: &Path,
    state: &SessionState,
    metrics: &Metrics,
    renderer: Option<&Renderer>,
) -> std::io::Result<WrittenArtifacts> {
    std::fs::create_dir_all(dir)?;
    let mut written = WrittenArtifacts {
        metrics: dir.join("metrics.json"),
        ..WrittenArtifacts::default()
    };

    if let Some(dot) = architecture_dot(state) {
        let path = dir.join("architecture.dot");
        std::fs::write(&path, &dot)?;
        written.architecture_dot = Some(path);
        if let Some(Ok(Some(svg))) = renderer.map(|r| r.svg(&dot)) {
            let path = dir.join("architecture.svg");
            std::fs::write(&path, svg)?;
            written.architecture_svg = Some(path);
        }
    }

    if !state.details.is_empty() {
        let blocks = dir.join("blocks");
        std::fs::create_dir_all(&blocks)?;
        for block in state.details.keys() {
            if let Some(md) = block_markdown(state, block) {
                let path = blocks.join(format!("{}.md", sanitize(block)));
                std::fs::write(&path, md)?;
                written.blocks.push(path);
            }
        }
    }

    if let Some(summary) = &state.summary {
        let path = dir.join("summary.md");
        std::fs::write(&path, format!("{}\n", summary.trim_end()))?;
        written.summary = Some(path);
    }

    let json = serde_json::to_string_pretty(metrics).map_err(std::io::Error::other)?;
    std::fs::write(&written.metrics, format!("{json}\n"))?;
    Ok(written)
}
