use std::cell::RefCell;
use std::rc::Rc;

use daqsynth_core::category::CategoryId;
use daqsynth_core::conversation::ARCHITECTURE_ACCEPTED;
use daqsynth_core::diagram::{mentions_digraph, parse};
use daqsynth_core::emulation::{entry_description, DirectPort, EmulationMode, OpenPort, ScriptedPort, VerdictPolicy};
use daqsynth_core::fixture::{BlockPlan, SessionPlan};
use daqsynth_core::flow::{
    Caller, ClientPort, Engine, EngineOptions, FeedbackVerdict, FlowError, SessionEvent, SessionSpec, SessionState,
    SessionStatus, Stage,
};
use daqsynth_core::llm::{ChatRequest, ModelConfig, Role, ScriptedBackend};
use daqsynth_core::metrics::collect_metrics;
use daqsynth_core::prompts::PromptCatalog;
use daqsynth_core::testbench::{testbench, TestbenchId};

struct Run {
    status: SessionStatus,
    state: SessionState,
    events: Vec<SessionEvent>,
}

fn spec(tb: TestbenchId, mode: EmulationMode) -> SessionSpec {
    let bench = testbench(tb).unwrap();
    SessionSpec {
        id: format!("{tb}-{mode}"),
        description: entry_description(&bench, mode),
        designer: ModelConfig::designer(),
        emulator: (mode == EmulationMode::Open).then(ModelConfig::emulator),
        origin: None,
    }
}

fn run_with_port<P: ClientPort>(tb: TestbenchId, responses: Vec<String>, port: P, options: EngineOptions) -> Run {
    let catalog = PromptCatalog::builtin();
    let backend = ScriptedBackend::from_responses(responses);
    let mut events = Vec::new();
    let mut engine = Engine::start(&catalog, spec(tb, EmulationMode::Direct), backend, port, &mut events, options).unwrap();
    let status = engine.run().unwrap();
    let state = engine.state().clone();
    drop(engine);
    Run { status, state, events }
}

fn run_direct(tb: TestbenchId, plan: &SessionPlan) -> Run {
    let port = ScriptedPort::new([], plan.verdicts());
    run_with_port(tb, plan.responses(EmulationMode::Direct), port, EngineOptions::batch())
}

fn run_open(tb: TestbenchId, plan: &SessionPlan) -> Run {
    let catalog = PromptCatalog::builtin();
    let bench = testbench(tb).unwrap();
    let shared = Rc::new(RefCell::new(ScriptedBackend::new(plan.script(EmulationMode::Open))));
    let port = OpenPort::new(
        &catalog,
        &bench.requirements,
        ModelConfig::emulator(),
        shared.clone(),
        VerdictPolicy::AcceptFirst,
    )
    .unwrap();
    let mut events = Vec::new();
    let mut engine =
        Engine::start(&catalog, spec(tb, EmulationMode::Open), shared.clone(), port, &mut events, EngineOptions::batch())
            .unwrap();
    let status = engine.run().unwrap();
    let state = engine.state().clone();
    drop(engine);
    assert_eq!(shared.borrow().remaining(), 0, "script fully consumed");
    Run { status, state, events }
}

fn requests(events: &[SessionEvent], who: Caller) -> Vec<(Stage, Option<String>, &ChatRequest)> {
    events
        .iter()
        .filter_map(|e| match e {
            SessionEvent::ModelExchange {
                caller,
                stage,
                block,
                request,
                ..
            } if *caller == who => Some((*stage, block.clone(), request)),
            _ => None,
        })
        .collect()
}

#[test]
fn every_testbench_completes_in_both_modes() {
    for tb in TestbenchId::ALL {
        let plan = SessionPlan::for_testbench(tb);
        for run in [run_direct(tb, &plan), run_open(tb, &plan)] {
            assert_eq!(run.status, SessionStatus::Done, "{tb}");
            assert_eq!(run.state.stage, Stage::Done);
            assert_eq!(run.state.details.len(), plan.blocks.len());
            assert!(run.state.summary_accepted);
            assert_eq!(SessionState::replay(&run.events).unwrap(), run.state);
        }
    }
}

#[test]
fn start_seeds_persona_and_prompt() {
    let catalog = PromptCatalog::builtin();
    let mut events = Vec::new();
    let engine = Engine::start(
        &catalog,
        spec(TestbenchId::AngularPosition, EmulationMode::Direct),
        ScriptedBackend::default(),
        DirectPort::new(VerdictPolicy::AcceptFirst),
        &mut events,
        EngineOptions::batch(),
    )
    .unwrap();
    assert_eq!(engine.state().stage, Stage::Architectural);
    assert_eq!(engine.state().conversation.len(), 2);
    assert!(engine.state().conversation.messages()[1]
        .content
        .contains("calculates the angle of a pendulum"));

    let mut blank = spec(TestbenchId::AngularPosition, EmulationMode::Direct);
    blank.description = String::from("  ");
    let err = Engine::start(
        &catalog,
        blank,
        ScriptedBackend::default(),
        DirectPort::new(VerdictPolicy::AcceptFirst),
        Vec::new(),
        EngineOptions::batch(),
    )
    .err()
    .unwrap();
    assert_eq!(err, FlowError::EmptyDescription);
}

#[test]
fn architecture_revisions_leave_one_diagram() {
    let mut plan = SessionPlan::for_testbench(TestbenchId::AngularPosition);
    plan.diagram_revisions = 2;
    let run = run_direct(TestbenchId::AngularPosition, &plan);
    assert_eq!(run.status, SessionStatus::Done);
    let accepted = run.state.conversation.marker(ARCHITECTURE_ACCEPTED).unwrap();
    let architectural: Vec<_> = run.state.conversation.messages()[..=accepted].to_vec();
    assert_eq!(architectural.iter().filter(|m| mentions_digraph(&m.content)).count(), 1);

    let after: Vec<_> = requests(&run.events, Caller::Designer)
        .into_iter()
        .filter(|(stage, _, _)| *stage != Stage::Architectural)
        .collect();
    assert!(!after.is_empty());
    for (_, _, request) in after {
        let payloads = request.messages.iter().filter(|m| mentions_digraph(&m.content)).count();
        assert_eq!(payloads, 1);
    }
    assert_eq!(collect_metrics(&run.events).feedback_rounds, 2);
}

#[test]
fn malformed_diagrams_are_retried() {
    let mut plan = SessionPlan::for_testbench(TestbenchId::Accelerometry);
    plan.malformed_diagrams = 2;
    let run = run_direct(TestbenchId::Accelerometry, &plan);
    assert_eq!(run.status, SessionStatus::Done);
    assert!(run.state.architecture.as_ref().unwrap().nodes().len() >= 2);
    assert_eq!(collect_metrics(&run.events).diagram_retries, 2);
}

#[test]
fn three_malformed_diagrams_fail_the_session() {
    let mut plan = SessionPlan::for_testbench(TestbenchId::Accelerometry);
    plan.malformed_diagrams = 3;
    let run = run_direct(TestbenchId::Accelerometry, &plan);
    assert_eq!(run.status, SessionStatus::Failed);
    assert_eq!(run.state.stage, Stage::Architectural);
    assert!(run.state.details.is_empty());
    let metrics = collect_metrics(&run.events);
    assert_eq!(metrics.status, SessionStatus::Failed);
    assert_eq!(metrics.diagram_retries, 3);
    assert_eq!(SessionState::replay(&run.events).unwrap(), run.state);
}

#[test]
fn categorisation_never_touches_the_port() {
    let plan = SessionPlan::for_testbench(TestbenchId::AngularPosition);
    let run = run_direct(TestbenchId::AngularPosition, &plan);
    let start = run
        .events
        .iter()
        .position(|e| matches!(e, SessionEvent::StageAdvanced { stage: Stage::Categorisation }))
        .unwrap();
    let end = run
        .events
        .iter()
        .position(|e| matches!(e, SessionEvent::StageAdvanced { stage: Stage::Detailing }))
        .unwrap();
    for event in &run.events[start..end] {
        assert!(
            !matches!(
                event,
                SessionEvent::QuestionsAsked { .. } | SessionEvent::AnswersGiven { .. } | SessionEvent::VerdictGiven { .. }
            ),
            "{event:?}"
        );
    }
    let categories: Vec<CategoryId> = run.state.block_queue.iter().map(|q| q.category).collect();
    assert_eq!(
        categories,
        [
            CategoryId::Sensor,
            CategoryId::SignalConditioning,
            CategoryId::Amplification,
            CategoryId::Filtering,
            CategoryId::AnalogueDigitalConverter
        ]
    );
}

#[test]
fn unknown_and_missing_categories_default_to_others() {
    let plan = SessionPlan {
        blocks: vec![
            BlockPlan::new("foo", "Foo", 1, CategoryId::Sensor, "foo detail"),
            BlockPlan::new("zed", "Zed", 1, CategoryId::Sensor, "zed detail"),
        ],
        edges: vec![(String::from("foo"), String::from("zed"))],
        ..SessionPlan::for_testbench(TestbenchId::Accelerometry)
    };
    let mut responses = plan.responses(EmulationMode::Direct);
    let cat = responses.iter().position(|r| r == &plan.categorisation_reply()).unwrap();
    responses[cat] = String::from("Foo: Quantum");
    let run = run_with_port(
        TestbenchId::Accelerometry,
        responses,
        DirectPort::new(VerdictPolicy::AcceptFirst),
        EngineOptions::batch(),
    );
    assert_eq!(run.status, SessionStatus::Done);
    assert!(run.state.block_queue.iter().all(|q| q.category == CategoryId::Others));
    assert_eq!(run.state.defaulted_blocks, ["zed"]);
    assert_eq!(collect_metrics(&run.events).categorisation_defaults, 1);
}

#[test]
fn detail_requests_use_category_prompts() {
    let plan = SessionPlan::for_testbench(TestbenchId::AngularPosition);
    let run = run_direct(TestbenchId::AngularPosition, &plan);
    let daq = requests(&run.events, Caller::Designer)
        .into_iter()
        .find(|(_, block, _)| block.as_deref() == Some("daq"))
        .unwrap();
    let last = daq.2.messages.last().unwrap();
    assert_eq!(last.role, Role::User);
    assert!(last.content.contains("sampling rate"));
    assert!(last.content.contains("DAQ"));
}

#[test]
fn block_histories_are_isolated() {
    let mut plan = SessionPlan::for_testbench(TestbenchId::PressureTemperature);
    for block in &mut plan.blocks {
        block.detail = format!("{} SENTINEL-{}-END", block.detail, block.id);
        block.revisions = 1;
    }
    let run = run_direct(TestbenchId::PressureTemperature, &plan);
    assert_eq!(run.status, SessionStatus::Done);
    let log = requests(&run.events, Caller::Designer);
    let mut checked = 0;
    for (_, block, request) in &log {
        let Some(block) = block else { continue };
        let body = request.to_json();
        for other in &plan.blocks {
            if &other.id != block {
                assert!(!body.contains(&format!("SENTINEL-{}-END", other.id)), "{block} saw {}", other.id);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
    let main = &run.state.conversation;
    let accepted = main.marker(ARCHITECTURE_ACCEPTED).unwrap();
    assert_eq!(main.len(), accepted + 3, "revision prompt and summary only");
}

#[test]
fn revision_revise_then_accept() {
    let mut plan = SessionPlan::for_testbench(TestbenchId::Thermometry);
    plan.summary_revisions = 1;
    let run = run_direct(TestbenchId::Thermometry, &plan);
    assert_eq!(run.status, SessionStatus::Done);
    let produced = run
        .events
        .iter()
        .filter(|e| matches!(e, SessionEvent::SummaryProduced { .. }))
        .count();
    assert_eq!(produced, 2);
    assert_eq!(run.state.summary.as_deref(), Some(plan.summary.as_str()));
    let revision_request = requests(&run.events, Caller::Designer)
        .into_iter()
        .find(|(stage, _, _)| *stage == Stage::Revision)
        .unwrap();
    let prompt = &revision_request.2.messages.last().unwrap().content;
    assert!(prompt.contains("numerical values"));
    let positions: Vec<usize> = plan.blocks.iter().map(|b| prompt.find(&b.detail).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "details in queue order");
    assert!(run.state.details.values().any(|d| d.contains("Wheatstone bridge")));
}

#[test]
fn temperatures_per_caller() {
    let plan = SessionPlan::for_testbench(TestbenchId::AngularPosition);
    let run = run_open(TestbenchId::AngularPosition, &plan);
    let designer = requests(&run.events, Caller::Designer);
    let emulator = requests(&run.events, Caller::Emulator);
    assert!(!emulator.is_empty());
    assert!(designer.iter().all(|(_, _, r)| r.to_json().contains("\"temperature\":0.8,")));
    assert!(emulator.iter().all(|(_, _, r)| r.to_json().contains("\"temperature\":0.2,")));
    let persona = &designer[0].2.messages[0].content;
    for (_, _, request) in &emulator {
        assert!(request.messages.iter().all(|m| &m.content != persona));
    }
}

#[test]
fn failed_block_continues_in_batch_and_aborts_interactively() {
    let plan = SessionPlan::for_testbench(TestbenchId::Accelerometry);
    let mut responses = plan.responses(EmulationMode::Direct);
    let first_detail = responses.iter().position(|r| r == &plan.blocks[0].detail).unwrap();
    responses.splice(first_detail..=first_detail, ["", " ", ""].map(String::from));

    let run = run_with_port(
        TestbenchId::Accelerometry,
        responses.clone(),
        DirectPort::new(VerdictPolicy::AcceptFirst),
        EngineOptions::batch(),
    );
    assert_eq!(run.status, SessionStatus::Done);
    assert_eq!(run.state.failed_blocks, ["accel"]);
    assert_eq!(run.state.details.len(), plan.blocks.len() - 1);

    let run = run_with_port(
        TestbenchId::Accelerometry,
        responses,
        DirectPort::new(VerdictPolicy::AcceptFirst),
        EngineOptions::interactive(),
    );
    assert_eq!(run.status, SessionStatus::Failed);
    assert!(run.state.failure.unwrap().contains("accel"));
}

#[test]
fn script_underrun_fails_with_partial_state() {
    let plan = SessionPlan::for_testbench(TestbenchId::AngularPosition);
    let mut responses = plan.responses(EmulationMode::Direct);
    responses.truncate(responses.len() - 1);
    let run = run_with_port(
        TestbenchId::AngularPosition,
        responses,
        DirectPort::new(VerdictPolicy::AcceptFirst),
        EngineOptions::batch(),
    );
    assert_eq!(run.status, SessionStatus::Failed);
    assert_eq!(run.state.stage, Stage::Revision);
    assert_eq!(run.state.details.len(), plan.blocks.len());
    assert!(run.state.failure.unwrap().contains("script exhausted"));
}

#[test]
fn verdicts_reach_the_port_in_order() {
    let mut plan = SessionPlan::for_testbench(TestbenchId::AngularPosition);
    plan.blocks[1].revisions = 1;
    let mut port = ScriptedPort::new([], plan.verdicts());
    let run = run_with_port(
        TestbenchId::AngularPosition,
        plan.responses(EmulationMode::Direct),
        &mut port,
        EngineOptions::batch(),
    );
    assert_eq!(run.status, SessionStatus::Done);
    let kinds: Vec<&str> = port.judged.iter().map(|a| a.kind().as_str()).collect();
    assert_eq!(
        kinds,
        ["diagram", "detail", "detail", "detail", "detail", "detail", "detail", "summary"]
    );
    assert_eq!(port.asked.len(), 2, "architecture and DAQ rounds");
    assert_eq!(run.state.details["buffer"], plan.blocks[1].detail);
}

#[test]
fn resume_after_interruption_matches_uninterrupted_run() {
    let plan = SessionPlan::for_testbench(TestbenchId::Thermometry);
    let full = run_direct(TestbenchId::Thermometry, &plan);
    let catalog = PromptCatalog::builtin();

    // Cut the log at every main-conversation boundary and resume from there.
    let cut_points: Vec<usize> = full
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e, SessionEvent::MessageAppended { .. } | SessionEvent::StageAdvanced { .. }))
        .map(|(i, _)| i + 1)
        .collect();
    for cut in cut_points {
        let prefix = &full.events[..cut];
        let state = SessionState::replay(prefix).unwrap();
        if state.status != SessionStatus::Running {
            continue;
        }
        let served = prefix
            .iter()
            .filter(|e| matches!(e, SessionEvent::ModelExchange { .. }))
            .count();
        let remaining: Vec<String> = plan.responses(EmulationMode::Direct).into_iter().skip(served).collect();
        let backend = ScriptedBackend::from_responses(remaining);
        let mut events = prefix.to_vec();
        let mut engine = Engine::resume(
            &catalog,
            state,
            backend,
            DirectPort::new(VerdictPolicy::AcceptFirst),
            &mut events,
            EngineOptions::batch(),
        )
        .unwrap();
        let status = engine.run().unwrap();
        assert_eq!(status, SessionStatus::Done, "cut at {cut}");
        assert_eq!(engine.state().details, full.state.details, "cut at {cut}");
        assert_eq!(engine.state().summary, full.state.summary, "cut at {cut}");
        assert_eq!(
            engine.state().conversation.messages(),
            full.state.conversation.messages(),
            "cut at {cut}"
        );
    }
}

#[test]
fn accepted_architecture_parses() {
    for tb in TestbenchId::ALL {
        let run = run_direct(tb, &SessionPlan::for_testbench(tb));
        let dot = run.state.architecture_dot.unwrap();
        assert_eq!(parse(&dot).unwrap(), run.state.architecture.unwrap());
    }
}

#[test]
fn revise_verdicts_need_feedback() {
    assert!(FeedbackVerdict::revise("").is_err());
}

/// Hands out `budget` verdicts, then reports the client gone.
struct Hangup {
    budget: usize,
}

impl ClientPort for Hangup {
    fn answer_questions(
        &mut self,
        _stage: Stage,
        _block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, daqsynth_core::flow::PortError> {
        Ok(vec![String::new(); questions.len()])
    }

    fn give_verdict(
        &mut self,
        _artifact: &daqsynth_core::flow::Artifact,
    ) -> Result<FeedbackVerdict, daqsynth_core::flow::PortError> {
        if self.budget == 0 {
            return Err(daqsynth_core::flow::PortError::Closed);
        }
        self.budget -= 1;
        Ok(FeedbackVerdict::Accept)
    }
}

#[test]
fn closed_client_leaves_session_resumable() {
    let tb = TestbenchId::AngularPosition;
    let plan = SessionPlan::for_testbench(tb);
    let catalog = PromptCatalog::builtin();
    let mut events = Vec::new();
    let mut engine = Engine::start(
        &catalog,
        spec(tb, EmulationMode::Direct),
        ScriptedBackend::from_responses(plan.responses(EmulationMode::Direct)),
        Hangup { budget: 2 },
        &mut events,
        EngineOptions::interactive(),
    )
    .unwrap();
    let err = engine.run().unwrap_err();
    assert!(matches!(err, FlowError::Port(daqsynth_core::flow::PortError::Closed)));
    let state = engine.state().clone();
    drop(engine);
    assert_eq!(state.status, SessionStatus::Running);
    assert!(!events.iter().any(|e| matches!(e, SessionEvent::SessionFailed { .. })));
    assert_eq!(SessionState::replay(&events).unwrap(), state);

    // The interrupted block's fork restarts, so its reply is served again.
    let last_accepted = events
        .iter()
        .rposition(|e| matches!(e, SessionEvent::DetailAccepted { .. }))
        .unwrap();
    let served = events[..last_accepted]
        .iter()
        .filter(|e| matches!(e, SessionEvent::ModelExchange { .. }))
        .count();
    let rest: Vec<String> = plan.responses(EmulationMode::Direct).into_iter().skip(served).collect();
    let mut engine = Engine::resume(
        &catalog,
        state,
        ScriptedBackend::from_responses(rest),
        DirectPort::new(VerdictPolicy::AcceptFirst),
        &mut events,
        EngineOptions::interactive(),
    )
    .unwrap();
    assert_eq!(engine.run().unwrap(), SessionStatus::Done);
}
