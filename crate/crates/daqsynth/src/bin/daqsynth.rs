use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use daqsynth::artifacts::write_artifacts;
use daqsynth::http::{HttpBackend, RetryPolicy};
use daqsynth::render::Renderer;
use daqsynth::runner::{replay_run, run_batch, BackendChoice, RunConfig, DEFAULT_ITERATIONS};
use daqsynth::script::load_script;
use daqsynth::service::{serve, Service, ServiceBackend, ServiceConfig};
use daqsynth::store::{sanitize, FileStore, JsonlSink, Tee};
use daqsynth::terminal::TerminalPort;
use daqsynth_core::diagram::{extract_dot, parse, validate, Severity};
use daqsynth_core::emulation::{EmulationMode, VerdictPolicy};
use daqsynth_core::fixture::SessionPlan;
use daqsynth_core::flow::{Engine, EngineOptions, SessionSpec, SessionStatus};
use daqsynth_core::llm::{ChatBackend, ModelConfig};
use daqsynth_core::metrics::collect_metrics;
use daqsynth_core::prompts::PromptCatalog;
use daqsynth_core::testbench::{testbench, TestbenchId};

#[derive(Parser)]
#[command(name = "daqsynth", version, about = "Top-down data acquisition system design assistant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive design session on the terminal.
    Design(DesignArgs),
    /// Repeated automated sessions over one testbench.
    Batch(BatchArgs),
    /// HTTP and event-stream backend for the web UI.
    Serve(ServeArgs),
    /// Re-run a recorded run directory offline.
    Replay(ReplayArgs),
    /// Render a .dot file to SVG with Graphviz.
    Render(RenderArgs),
    /// Lint a .dot file.
    Validate(ValidateArgs),
    /// Write the built-in scripted session for a testbench.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Scripted,
    Live,
    Replay,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Designer model name.
    #[arg(long)]
    model: Option<String>,
    /// Emulator model name (open mode).
    #[arg(long)]
    emulator_model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
}

impl ModelArgs {
    fn apply(&self, mut config: ModelConfig, model: Option<&String>) -> ModelConfig {
        if let Some(m) = model {
            config = config.with_model(m.clone());
        }
        if let Some(u) = &self.base_url {
            config = config.with_base_url(u.clone());
        }
        if let Some(k) = &self.api_key_env {
            config = config.with_api_key_env(k.clone());
        }
        config
    }

    fn designer(&self) -> ModelConfig {
        self.apply(ModelConfig::designer(), self.model.as_ref())
    }

    fn emulator(&self) -> ModelConfig {
        self.apply(ModelConfig::emulator(), self.emulator_model.as_ref())
    }
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, conflicts_with_all = ["description_file", "testbench"])]
    description: Option<String>,
    #[arg(long, conflicts_with = "testbench")]
    description_file: Option<PathBuf>,
    /// Use a reference project description.
    #[arg(long)]
    testbench: Option<TestbenchId>,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    /// Script for the scripted backend; defaults to the built-in angular
    /// position session.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = ".daqsynth/sessions")]
    store: PathBuf,
    #[arg(long, default_value = ".daqsynth/artifacts")]
    out: PathBuf,
    /// Continue a stored session instead of starting one.
    #[arg(long, conflicts_with_all = ["description", "description_file", "testbench"])]
    resume: Option<String>,
    #[command(flatten)]
    models: ModelArgs,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    testbench: TestbenchId,
    #[arg(long, default_value = "direct")]
    mode: EmulationMode,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS, value_parser = clap::value_parser!(usize))]
    iterations: usize,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    /// Script file (scripted), or a script file or previous batch
    /// directory (replay).
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "structural_once")]
    policy: VerdictPolicy,
    /// Also write architecture.svg when Graphviz is available.
    #[arg(long)]
    svg: bool,
    #[command(flatten)]
    models: ModelArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = ".daqsynth/sessions")]
    store: PathBuf,
    #[arg(long, default_value = ".daqsynth/artifacts")]
    out: PathBuf,
    #[command(flatten)]
    models: ModelArgs,
}

#[derive(Args)]
struct ReplayArgs {
    run_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct RenderArgs {
    input: PathBuf,
    /// Defaults to the input path with an .svg extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    input: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    testbench: TestbenchId,
    #[arg(long, default_value = "direct")]
    mode: EmulationMode,
    #[arg(long)]
    out: PathBuf,
}

type CliResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => design(a),
        Command::Batch(a) => batch(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Replay(a) => replay(a),
        Command::Render(a) => render(a),
        Command::Validate(a) => validate_cmd(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn err<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> String {
    move |e| format!("{context}: {e}")
}

fn design_backend(kind: BackendKind, script: Option<&Path>, designer: &ModelConfig) -> Result<Box<dyn ChatBackend>, String> {
    match kind {
        BackendKind::Live => HttpBackend::new(designer, RetryPolicy::default())
            .map(|b| Box::new(b) as Box<dyn ChatBackend>)
            .map_err(|e| e.to_string()),
        BackendKind::Scripted | BackendKind::Replay => match script {
            Some(path) => load_script(path)
                .map(|b| Box::new(b) as Box<dyn ChatBackend>)
                .map_err(|e| e.to_string()),
            None => Ok(Box::new(daqsynth_core::llm::ScriptedBackend::new(
                SessionPlan::for_testbench(TestbenchId::AngularPosition).script(EmulationMode::Direct),
            ))),
        },
    }
}

fn design(a: DesignArgs) -> CliResult {
    let designer = a.models.designer();
    let store = FileStore::open(&a.store).map_err(|e| format!("{}: {e}", a.store.display()))?;
    let backend = design_backend(a.backend, a.script.as_deref(), &designer)?;
    let catalog = PromptCatalog::builtin();
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();

    let (id, state, events) = match &a.resume {
        Some(id) => {
            let state = store.load_session(id).map_err(|e| e.to_string())?;
            if state.status != SessionStatus::Running {
                return Err(format!("session {id} has already ended ({})", state.status));
            }
            let sink = Tee::new(store.append_to(id).map_err(|e| e.to_string())?);
            let port = terminal_port(stdin.lock(), stdout.lock(), &a.out, id);
            println!("Resuming session {id} at stage {}", state.stage);
            let mut engine = Engine::resume(&catalog, state, backend, port, sink, EngineOptions::interactive())
                .map_err(|e| e.to_string())?;
            let result = engine.run();
            let (state, _, _, sink) = engine.into_parts();
            report_error(result.err());
            (id.clone(), state, store.load_events(id).unwrap_or_else(|_| sink.into_events()))
        }
        None => {
            let description = match (&a.description, &a.description_file, a.testbench) {
                (Some(d), _, _) => d.clone(),
                (_, Some(path), _) => std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?,
                (_, _, Some(tb)) => testbench(tb).map_err(|e| e.to_string())?.description,
                _ => prompt_description(&mut stdin.lock())?,
            };
            let id = uuid::Uuid::new_v4().to_string();
            let spec = SessionSpec {
                id: id.clone(),
                description,
                designer,
                emulator: None,
                origin: None,
            };
            let sink: Tee<JsonlSink> = Tee::new(store.create(&id).map_err(|e| e.to_string())?);
            let port = terminal_port(stdin.lock(), stdout.lock(), &a.out, &id);
            println!("Session {id}");
            let mut engine = Engine::start(&catalog, spec, backend, port, sink, EngineOptions::interactive())
                .map_err(|e| e.to_string())?;
            let result = engine.run();
            let (state, _, _, sink) = engine.into_parts();
            report_error(result.err());
            (id, state, sink.into_events())
        }
    };

    let dir = a.out.join(sanitize(&id));
    let metrics = collect_metrics(&events);
    write_artifacts(&dir, &state, &metrics, Some(&Renderer::from_env())).map_err(err(dir.display()))?;
    println!("Artifacts written to {}", dir.display());
    match state.status {
        SessionStatus::Done => {
            println!("Session {id} is done.");
            Ok(ExitCode::SUCCESS)
        }
        SessionStatus::Failed => {
            eprintln!("Session {id} failed: {}", state.failure.unwrap_or_default());
            Ok(ExitCode::FAILURE)
        }
        SessionStatus::Running => {
            eprintln!("Session {id} stopped at stage {}; continue with --resume {id}", state.stage);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn terminal_port<R: BufRead, W: Write>(input: R, output: W, out: &Path, id: &str) -> TerminalPort<R, W> {
    TerminalPort::new(input, output).with_diagram_dir(out.join(sanitize(id)).join("proposals"), Some(Renderer::from_env()))
}

fn report_error(error: Option<daqsynth_core::flow::FlowError>) {
    if let Some(e) = error {
        eprintln!("error: {e}");
    }
}

fn prompt_description(input: &mut impl BufRead) -> Result<String, String> {
    println!("Describe the project (end with an empty line):");
    let mut text = String::new();
    loop {
        let mut line = String::new();
        if input.read_line(&mut line).map_err(|e| e.to_string())? == 0 || line.trim().is_empty() {
            break;
        }
        text.push_str(&line);
    }
    if text.trim().is_empty() {
        return Err(String::from("no project description given"));
    }
    Ok(text.trim_end().to_owned())
}

fn batch(a: BatchArgs) -> CliResult {
    let backend = match a.backend {
        BackendKind::Scripted => BackendChoice::Scripted { script: a.script.clone() },
        BackendKind::Live => BackendChoice::Live,
        BackendKind::Replay => BackendChoice::Replay {
            path: a.script.clone().ok_or("--backend replay needs --script")?,
        },
    };
    let mut cfg = RunConfig::new(a.testbench, a.mode, &a.out);
    cfg.iterations = a.iterations;
    cfg.workers = a.workers;
    cfg.policy = a.policy;
    cfg.backend = backend;
    cfg.designer = a.models.designer();
    cfg.emulator = a.models.emulator();
    cfg.renderer = a.svg.then(Renderer::from_env);
    let summary = run_batch(&cfg).map_err(|e| e.to_string())?;
    let t = &summary.totals;
    println!(
        "{} runs ({} done, {} failed), {} blocks, {} questions; aggregate at {}",
        summary.rows.len(),
        t.done,
        t.failed,
        t.blocks,
        t.questions,
        summary.aggregate.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn serve_cmd(a: ServeArgs) -> CliResult {
    let store = FileStore::open(&a.store).map_err(err(a.store.display()))?;
    let mut config = ServiceConfig::new(store, &a.out);
    config.designer = a.models.designer();
    config.renderer = Some(Renderer::from_env());
    config.backend = match (a.backend, &a.script) {
        (BackendKind::Live, _) => ServiceBackend::Live,
        (_, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ServiceBackend::Scripted(daqsynth_core::llm::parse_script(&text).map_err(|e| e.to_string())?)
        }
        (_, None) => ServiceBackend::default(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await.map_err(err(&a.addr))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        println!("listening on http://{addr}");
        serve(listener, Service::new(config)).await.map_err(|e| e.to_string())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn replay(a: ReplayArgs) -> CliResult {
    let renderer = a.svg.then(Renderer::from_env);
    let outcome = replay_run(&a.run_dir, &a.out, renderer.as_ref()).map_err(|e| e.to_string())?;
    println!(
        "replayed {} into {}: {}, {} blocks",
        outcome.metrics.session_id,
        outcome.dir.display(),
        outcome.metrics.status,
        outcome.metrics.block_count
    );
    Ok(if outcome.metrics.status == SessionStatus::Done {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn render(a: RenderArgs) -> CliResult {
    let dot = std::fs::read_to_string(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let out = a.out.unwrap_or_else(|| a.input.with_extension("svg"));
    match Renderer::from_env().svg(&dot).map_err(|e| e.to_string())? {
        Some(svg) => {
            std::fs::write(&out, svg).map_err(|e| format!("{}: {e}", out.display()))?;
            println!("{}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        None => Err(String::from("Graphviz dot was not found; install it or set DAQSYNTH_DOT")),
    }
}

fn validate_cmd(a: ValidateArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let dot = match extract_dot(&text) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{}: {e}", a.input.display());
            return Ok(ExitCode::FAILURE);
        }
    };
    let graph = match parse(&dot) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("{}: {e}", a.input.display());
            return Ok(ExitCode::FAILURE);
        }
    };
    let findings = validate(&graph);
    for f in &findings {
        println!("{}: {f}", a.input.display());
    }
    if findings.iter().any(|f| f.severity == Severity::Error) {
        Ok(ExitCode::FAILURE)
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn fixture(a: FixtureArgs) -> CliResult {
    let text = SessionPlan::for_testbench(a.testbench).script_jsonl(a.mode);
    std::fs::write(&a.out, text).map_err(|e| format!("{}: {e}", a.out.display()))?;
    Ok(ExitCode::SUCCESS)
}
