//! Batch runner: N automated sessions of one testbench in one emulation
//! mode, each in its own run directory, plus an aggregate CSV.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use daqsynth_core::emulation::{entry_description, DirectPort, EmulationMode, OpenPort, VerdictPolicy};
use daqsynth_core::fixture::SessionPlan;
use daqsynth_core::flow::{
    ClientPort, Engine, EngineOptions, FlowError, RunOrigin, SessionEvent, SessionSpec, SessionStatus,
};
use daqsynth_core::llm::{ChatBackend, LlmError, ModelConfig, ScriptEntry, ScriptedBackend};
use daqsynth_core::metrics::{collect_metrics, Metrics};
use daqsynth_core::prompts::PromptCatalog;
use daqsynth_core::testbench::{testbench, CorpusError, Testbench, TestbenchId};

use crate::artifacts::write_artifacts;
use crate::http::{HttpBackend, RetryPolicy};
use crate::render::Renderer;
use crate::script::{load_script, record_wrap};
use crate::store::{read_log, JsonlSink, StoreError, Tee};

pub const DEFAULT_ITERATIONS: usize = 20;

pub const AGGREGATE_HEADER: [&str; 9] = [
    "iteration",
    "status",
    "blocks",
    "questions",
    "retries",
    "feedback_rounds",
    "prompt_tokens",
    "completion_tokens",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    /// Every iteration replays the same script from its first entry. With
    /// no path, the built-in fixture for the testbench is used.
    Scripted { script: Option<PathBuf> },
    /// A live endpoint taken from the designer config; exchanges are
    /// recorded per iteration.
    Live,
    /// A previous batch directory (`run_<k>/script.jsonl` per iteration) or
    /// a single script file.
    Replay { path: PathBuf },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub testbench: TestbenchId,
    pub mode: EmulationMode,
    pub iterations: usize,
    pub output_dir: PathBuf,
    pub designer: ModelConfig,
    pub emulator: ModelConfig,
    pub backend: BackendChoice,
    pub workers: usize,
    pub policy: VerdictPolicy,
    pub renderer: Option<Renderer>,
}

impl RunConfig {
    pub fn new(testbench: TestbenchId, mode: EmulationMode, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            testbench,
            mode,
            iterations: DEFAULT_ITERATIONS,
            output_dir: output_dir.into(),
            designer: ModelConfig::designer(),
            emulator: ModelConfig::emulator(),
            backend: BackendChoice::Scripted { script: None },
            workers: 1,
            policy: VerdictPolicy::StructuralOnce,
            renderer: None,
        }
    }

    /// `<out>/<testbench>/<mode>`
    pub fn batch_dir(&self) -> PathBuf {
        self.output_dir.join(self.testbench.as_str()).join(self.mode.as_str())
    }

    pub fn run_dir(&self, k: usize) -> PathBuf {
        self.batch_dir().join(format!("run_{k}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// One aggregate row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationRow {
    pub iteration: usize,
    pub status: SessionStatus,
    pub blocks: usize,
    pub questions: usize,
    pub retries: usize,
    pub feedback_rounds: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
}

impl IterationRow {
    pub fn from_metrics(iteration: usize, m: &Metrics) -> Self {
        Self {
            iteration,
            status: m.status,
            blocks: m.block_count,
            questions: m.questions,
            retries: m.diagram_retries,
            feedback_rounds: m.feedback_rounds,
            prompt_tokens: m.prompt_tokens,
            completion_tokens: m.completion_tokens,
            wall_ms: m.wall_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Totals {
    pub done: usize,
    pub failed: usize,
    pub blocks: usize,
    pub questions: usize,
    pub retries: usize,
    pub feedback_rounds: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
}

impl Totals {
    pub fn of(rows: &[IterationRow]) -> Self {
        let mut t = Totals::default();
        for r in rows {
            match r.status {
                SessionStatus::Done => t.done += 1,
                _ => t.failed += 1,
            }
            t.blocks += r.blocks;
            t.questions += r.questions;
            t.retries += r.retries;
            t.feedback_rounds += r.feedback_rounds;
            t.prompt_tokens += r.prompt_tokens;
            t.completion_tokens += r.completion_tokens;
            t.wall_ms += r.wall_ms;
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub rows: Vec<IterationRow>,
    pub totals: Totals,
    pub aggregate: PathBuf,
    pub run_dirs: Vec<PathBuf>,
}

/// Result of a single session run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: Metrics,
    pub events: Vec<SessionEvent>,
}

pub fn run_batch(cfg: &RunConfig) -> Result<BatchSummary, RunError> {
    if cfg.iterations == 0 {
        return Err(RunError::NoIterations);
    }
    if cfg.workers == 0 {
        return Err(RunError::NoWorkers);
    }
    let bench = testbench(cfg.testbench)?;
    let catalog = PromptCatalog::builtin();
    let batch_dir = cfg.batch_dir();
    std::fs::create_dir_all(&batch_dir)?;

    // Parse shared script material once; a bad script fails the batch
    // before any run directory is created.
    let shared_script = match &cfg.backend {
        BackendChoice::Scripted { script: Some(path) } => Some(script_entries(path)?),
        BackendChoice::Scripted { script: None } => {
            Some(SessionPlan::for_testbench(cfg.testbench).script(cfg.mode))
        }
        BackendChoice::Replay { path } if path.is_file() => Some(script_entries(path)?),
        _ => None,
    };

    let next = AtomicUsize::new(1);
    let rows: Mutex<Vec<IterationRow>> = Mutex::new(Vec::new());
    let fatal: Mutex<Option<RunError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(cfg.iterations) {
            scope.spawn(|| loop {
                if fatal.lock().unwrap().is_some() {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k > cfg.iterations {
                    break;
                }
                let backend: Result<Box<dyn ChatBackend>, RunError> = match (&cfg.backend, &shared_script) {
                    (_, Some(entries)) => Ok(Box::new(ScriptedBackend::new(entries.clone()))),
                    (BackendChoice::Replay { path }, None) => load_script(&path.join(format!("run_{k}")).join("script.jsonl"))
                        .map(|b| Box::new(b) as Box<dyn ChatBackend>)
                        .map_err(RunError::from),
                    _ => HttpBackend::new(&cfg.designer, RetryPolicy::default())
                        .map(|b| Box::new(b) as Box<dyn ChatBackend>)
                        .map_err(RunError::from),
                };
                let result = backend.and_then(|backend| {
                    let spec = SessionSpec {
                        id: batch_session_id(cfg.testbench, cfg.mode, k),
                        description: entry_description(&bench, cfg.mode),
                        designer: cfg.designer.clone(),
                        emulator: (cfg.mode == EmulationMode::Open).then(|| cfg.emulator.clone()),
                        origin: Some(RunOrigin {
                            testbench: cfg.testbench,
                            mode: cfg.mode,
                            policy: cfg.policy,
                        }),
                    };
                    run_session(&catalog, &bench, spec, backend, &cfg.run_dir(k), cfg.renderer.as_ref())
                });
                match result {
                    Ok(outcome) => rows.lock().unwrap().push(IterationRow::from_metrics(k, &outcome.metrics)),
                    Err(e) => {
                        fatal.lock().unwrap().get_or_insert(e);
                    }
                }
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let mut rows = rows.into_inner().unwrap();
    rows.sort_by_key(|r| r.iteration);
    let totals = Totals::of(&rows);
    let aggregate = batch_dir.join("aggregate.csv");
    write_aggregate(&aggregate, &rows, &totals)?;
    Ok(BatchSummary {
        run_dirs: rows.iter().map(|r| cfg.run_dir(r.iteration)).collect(),
        rows,
        totals,
        aggregate,
    })
}

pub fn batch_session_id(tb: TestbenchId, mode: EmulationMode, k: usize) -> String {
    format!("{tb}-{mode}-{k:03}")
}

fn script_entries(path: &Path) -> Result<Vec<ScriptEntry>, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    daqsynth_core::llm::parse_script(&text).map_err(|e| RunError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Runs one automated session into `dir`, replacing anything already
/// there. Model and port failures end the session as failed; only I/O
/// problems are returned as errors.
pub fn run_session(
    catalog: &PromptCatalog,
    bench: &Testbench,
    spec: SessionSpec,
    backend: Box<dyn ChatBackend>,
    dir: &Path,
    renderer: Option<&Renderer>,
) -> Result<RunOutcome, RunError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    let origin = spec.origin.clone().ok_or_else(|| RunError::Invalid {
        path: dir.to_path_buf(),
        message: String::from("automated sessions need a run origin"),
    })?;
    let recorder = record_wrap(backend, &dir.join("script.jsonl"))?;
    let shared: Rc<RefCell<dyn ChatBackend>> = Rc::new(RefCell::new(recorder));

    let port: Box<dyn ClientPort + '_> = match origin.mode {
        EmulationMode::Direct => Box::new(DirectPort::new(origin.policy)),
        EmulationMode::Open => {
            let config = spec.emulator.clone().unwrap_or_else(ModelConfig::emulator);
            match OpenPort::new(catalog, &bench.requirements, config, shared.clone(), origin.policy) {
                Ok(p) => Box::new(p),
                Err(e) => {
                    return Err(RunError::Invalid {
                        path: dir.to_path_buf(),
                        message: e.to_string(),
                    })
                }
            }
        }
    };

    let sink = Tee::new(JsonlSink::create(&dir.join("session.jsonl"))?);
    let started = Instant::now();
    let (failure, state, events) = match Engine::start(catalog, spec, shared.clone(), port, sink, EngineOptions::batch()) {
        Ok(mut engine) => {
            let result = engine.run();
            let (state, _, _, sink) = engine.into_parts();
            let failure = match result {
                Ok(_) => None,
                Err(FlowError::Sink(e)) => return Err(RunError::Io(std::io::Error::other(e.0))),
                Err(e) => Some(e.to_string()),
            };
            (failure, Some(state), sink.into_events())
        }
        Err(FlowError::Sink(e)) => return Err(RunError::Io(std::io::Error::other(e.0))),
        Err(e) => (Some(e.to_string()), None, Vec::new()),
    };
    let wall_ms = started.elapsed().as_millis() as u64;

    let mut metrics = collect_metrics(&events);
    metrics.wall_ms = wall_ms;
    if let Some(reason) = failure {
        metrics.status = SessionStatus::Failed;
        metrics.failure.get_or_insert(reason);
    }
    if let Some(state) = &state {
        write_artifacts(dir, state, &metrics, renderer)?;
    } else {
        let json = serde_json::to_string_pretty(&metrics).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("metrics.json"), format!("{json}\n"))?;
    }
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        metrics,
        events,
    })
}

/// Re-runs a recorded run directory offline: the session parameters come
/// from its log, the model output from its script.
pub fn replay_run(run_dir: &Path, out: &Path, renderer: Option<&Renderer>) -> Result<RunOutcome, RunError> {
    let events = read_log(&run_dir.join("session.jsonl"))?;
    let Some(SessionEvent::SessionStarted {
        id,
        description,
        designer,
        emulator,
        origin,
    }) = events.first().cloned()
    else {
        return Err(RunError::Invalid {
            path: run_dir.join("session.jsonl"),
            message: String::from("log does not start with session_started"),
        });
    };
    let origin = origin.ok_or_else(|| RunError::Invalid {
        path: run_dir.join("session.jsonl"),
        message: String::from("session has no run origin; only automated runs can be replayed"),
    })?;
    let bench = testbench(origin.testbench)?;
    let backend = load_script(&run_dir.join("script.jsonl"))?;
    let spec = SessionSpec {
        id,
        description,
        designer,
        emulator,
        origin: Some(origin),
    };
    let catalog = PromptCatalog::builtin();
    run_session(&catalog, &bench, spec, Box::new(backend), out, renderer)
}

pub fn write_aggregate(path: &Path, rows: &[IterationRow], totals: &Totals) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.status.to_string(),
            r.blocks.to_string(),
            r.questions.to_string(),
            r.retries.to_string(),
            r.feedback_rounds.to_string(),
            r.prompt_tokens.to_string(),
            r.completion_tokens.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.write_record([
        String::from("total"),
        format!("{}/{} done", totals.done, totals.done + totals.failed),
        totals.blocks.to_string(),
        totals.questions.to_string(),
        totals.retries.to_string(),
        totals.feedback_rounds.to_string(),
        totals.prompt_tokens.to_string(),
        totals.completion_tokens.to_string(),
        totals.wall_ms.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
