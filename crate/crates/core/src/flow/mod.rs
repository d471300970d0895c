//! The session state machine: architectural, categorisation, detailing and
//! revision stages, driven against a [`ClientPort`] that stands for the user.
//!
//! All state changes go through [`SessionEvent`]s. The engine applies each
//! event to its own state with [`SessionState::apply`] and hands the same
//! event to an [`EventSink`], so replaying a saved log rebuilds the state.

mod engine;
mod questions;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::category::CategoryId;
use crate::conversation::{Conversation, ConversationError};
use crate::diagram::{BlockGraph, DotSource, Finding};
use crate::emulation::{EmulationMode, VerdictPolicy};
use crate::llm::{ChatMessage, ChatRequest, ChatResponse, LlmError, ModelConfig};
use crate::prompts::PromptError;
use crate::testbench::TestbenchId;

pub use engine::{BlockFailurePolicy, Engine, EngineOptions, SessionSpec, MAX_ATTEMPTS};
pub use questions::{list_items, parse_questions, question_items, split_answers, ListItem, MAX_QUESTIONS};

/// Stands in for blank model replies so user and assistant turns stay paired.
pub const EMPTY_REPLY: &str = "(empty reply)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Architectural,
    Categorisation,
    Detailing,
    Revision,
    Done,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Architectural,
        Stage::Categorisation,
        Stage::Detailing,
        Stage::Revision,
        Stage::Done,
    ];

    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Architectural => Some(Stage::Categorisation),
            Stage::Categorisation => Some(Stage::Detailing),
            Stage::Detailing => Some(Stage::Revision),
            Stage::Revision => Some(Stage::Done),
            Stage::Done => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Architectural => "architectural",
            Stage::Categorisation => "categorisation",
            Stage::Detailing => "detailing",
            Stage::Revision => "revision",
            Stage::Done => "done",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Done,
    Failed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Running => "running",
            SessionStatus::Done => "done",
            SessionStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which model made a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Caller {
    Designer,
    Emulator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Diagram,
    Detail,
    Summary,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Diagram => "diagram",
            ArtifactKind::Detail => "detail",
            ArtifactKind::Summary => "summary",
        }
    }
}

/// What the port is asked to judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Diagram {
        dot: DotSource,
        graph: BlockGraph,
        findings: Vec<Finding>,
    },
    Detail {
        block: String,
        label: String,
        category: CategoryId,
        text: String,
    },
    Summary {
        text: String,
    },
}

impl Artifact {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            Artifact::Diagram { .. } => ArtifactKind::Diagram,
            Artifact::Detail { .. } => ArtifactKind::Detail,
            Artifact::Summary { .. } => ArtifactKind::Summary,
        }
    }

    pub fn block(&self) -> Option<&str> {
        match self {
            Artifact::Detail { block, .. } => Some(block),
            _ => None,
        }
    }
}

/// A user's answer to an artifact. `Revise` always carries nonempty text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawVerdict")]
pub enum FeedbackVerdict {
    Accept,
    Revise { feedback: String },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawVerdict {
    Accept,
    Revise { feedback: String },
}

impl TryFrom<RawVerdict> for FeedbackVerdict {
    type Error = VerdictError;

    fn try_from(raw: RawVerdict) -> Result<Self, Self::Error> {
        match raw {
            RawVerdict::Accept => Ok(FeedbackVerdict::Accept),
            RawVerdict::Revise { feedback } => FeedbackVerdict::revise(feedback),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("revise verdict needs nonempty feedback")]
pub struct VerdictError;

impl FeedbackVerdict {
    pub fn revise(feedback: impl Into<String>) -> Result<Self, VerdictError> {
        let feedback = feedback.into();
        if feedback.trim().is_empty() {
            return Err(VerdictError);
        }
        Ok(FeedbackVerdict::Revise { feedback })
    }

    pub fn is_accept(&self) -> bool {
        matches!(self, FeedbackVerdict::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PortError {
    #[error("client went away")]
    Closed,
    #[error("emulator model failed: {0}")]
    Backend(#[from] LlmError),
    #[error("emulator prompt failed: {0}")]
    Prompt(#[from] PromptError),
    #[error("{0}")]
    Other(String),
}

/// The user side of a session: a person at a terminal or browser, or an
/// emulator.
pub trait ClientPort {
    /// Answers may be empty strings; the engine pads or truncates to the
    /// question count.
    fn answer_questions(
        &mut self,
        stage: Stage,
        block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError>;

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError>;

    /// Events the port produced since the last call, such as emulator
    /// model exchanges.
    fn drain_log(&mut self) -> Vec<SessionEvent> {
        Vec::new()
    }
}

impl<P: ClientPort + ?Sized> ClientPort for &mut P {
    fn answer_questions(
        &mut self,
        stage: Stage,
        block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError> {
        (**self).answer_questions(stage, block, questions)
    }

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError> {
        (**self).give_verdict(artifact)
    }

    fn drain_log(&mut self) -> Vec<SessionEvent> {
        (**self).drain_log()
    }
}

impl<P: ClientPort + ?Sized> ClientPort for alloc::boxed::Box<P> {
    fn answer_questions(
        &mut self,
        stage: Stage,
        block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError> {
        (**self).answer_questions(stage, block, questions)
    }

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError> {
        (**self).give_verdict(artifact)
    }

    fn drain_log(&mut self) -> Vec<SessionEvent> {
        (**self).drain_log()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event sink failed: {0}")]
pub struct SinkError(pub String);

pub trait EventSink {
    fn record(&mut self, event: &SessionEvent) -> Result<(), SinkError>;
}

impl EventSink for Vec<SessionEvent> {
    fn record(&mut self, event: &SessionEvent) -> Result<(), SinkError> {
        self.push(event.clone());
        Ok(())
    }
}

impl<S: EventSink + ?Sized> EventSink for &mut S {
    fn record(&mut self, event: &SessionEvent) -> Result<(), SinkError> {
        (**self).record(event)
    }
}

impl<S: EventSink + ?Sized> EventSink for alloc::boxed::Box<S> {
    fn record(&mut self, event: &SessionEvent) -> Result<(), SinkError> {
        (**self).record(event)
    }
}

/// Where an automated session came from, so it can be replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOrigin {
    pub testbench: TestbenchId,
    pub mode: EmulationMode,
    pub policy: VerdictPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedBlock {
    /// Node id in the accepted architecture.
    pub block: String,
    pub label: String,
    pub multiplicity: u32,
    pub category: CategoryId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionStarted {
        id: String,
        description: String,
        designer: ModelConfig,
        emulator: Option<ModelConfig>,
        #[serde(default)]
        origin: Option<RunOrigin>,
    },
    /// Main conversation only; detailing forks are never persisted.
    MessageAppended { message: ChatMessage },
    MarkerSet { label: String, index: usize },
    ArchitecturePruned { accepted: DotSource, removed: usize },
    StageAdvanced { stage: Stage },
    ModelExchange {
        caller: Caller,
        stage: Stage,
        block: Option<String>,
        request: ChatRequest,
        response: Option<ChatResponse>,
        error: Option<String>,
    },
    QuestionsAsked {
        stage: Stage,
        block: Option<String>,
        questions: Vec<String>,
        /// Questions beyond the cap that were dropped.
        discarded: usize,
    },
    AnswersGiven {
        stage: Stage,
        block: Option<String>,
        answers: Vec<String>,
    },
    AnswerCountMismatch {
        stage: Stage,
        block: Option<String>,
        expected: usize,
        received: usize,
    },
    DiagramRejected { attempt: u32, error: String },
    DiagramProposed { dot: DotSource, findings: Vec<Finding> },
    VerdictGiven {
        artifact: ArtifactKind,
        block: Option<String>,
        verdict: FeedbackVerdict,
    },
    ArchitectureAccepted { dot: DotSource, graph: BlockGraph },
    BlocksCategorised { queue: Vec<QueuedBlock>, defaulted: Vec<String> },
    DetailAccepted { block: String, text: String },
    BlockFailed { block: String, reason: String },
    SummaryProduced { text: String },
    SummaryAccepted,
    SessionFailed { reason: String },
    SessionCompleted,
}

impl SessionEvent {
    pub fn type_name(&self) -> &'static str {
        match self {
            SessionEvent::SessionStarted { .. } => "session_started",
            SessionEvent::MessageAppended { .. } => "message_appended",
            SessionEvent::MarkerSet { .. } => "marker_set",
            SessionEvent::ArchitecturePruned { .. } => "architecture_pruned",
            SessionEvent::StageAdvanced { .. } => "stage_advanced",
            SessionEvent::ModelExchange { .. } => "model_exchange",
            SessionEvent::QuestionsAsked { .. } => "questions_asked",
            SessionEvent::AnswersGiven { .. } => "answers_given",
            SessionEvent::AnswerCountMismatch { .. } => "answer_count_mismatch",
            SessionEvent::DiagramRejected { .. } => "diagram_rejected",
            SessionEvent::DiagramProposed { .. } => "diagram_proposed",
            SessionEvent::VerdictGiven { .. } => "verdict_given",
            SessionEvent::ArchitectureAccepted { .. } => "architecture_accepted",
            SessionEvent::BlocksCategorised { .. } => "blocks_categorised",
            SessionEvent::DetailAccepted { .. } => "detail_accepted",
            SessionEvent::BlockFailed { .. } => "block_failed",
            SessionEvent::SummaryProduced { .. } => "summary_produced",
            SessionEvent::SummaryAccepted => "summary_accepted",
            SessionEvent::SessionFailed { .. } => "session_failed",
            SessionEvent::SessionCompleted => "session_completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApplyError {
    #[error("event log is empty")]
    EmptyLog,
    #[error("first event must be session_started, got {0}")]
    NotStarted(&'static str),
    #[error("session_started may only appear first")]
    AlreadyStarted,
    #[error("session is {0}; no further events accepted")]
    Terminated(SessionStatus),
    #[error("cannot move from {from} to {to}")]
    StageOrder { from: Stage, to: Stage },
    #[error("{event} is not valid during {stage}")]
    WrongStage { event: &'static str, stage: Stage },
    #[error("{0}")]
    Precondition(&'static str),
    #[error("block {0:?} is not queued")]
    UnknownBlock(String),
    #[error("pruning removed {actual} messages, log says {logged}")]
    PruneMismatch { logged: usize, actual: usize },
    #[error(transparent)]
    Conversation(#[from] ConversationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub stage: Stage,
    pub status: SessionStatus,
    pub description: String,
    pub conversation: Conversation,
    pub architecture: Option<BlockGraph>,
    pub architecture_dot: Option<DotSource>,
    pub block_queue: Vec<QueuedBlock>,
    /// Blocks the categoriser did not mention; they default to Others.
    pub defaulted_blocks: Vec<String>,
    pub details: BTreeMap<String, String>,
    pub failed_blocks: Vec<String>,
    pub summary: Option<String>,
    pub summary_accepted: bool,
    pub designer: ModelConfig,
    pub emulator: Option<ModelConfig>,
    pub origin: Option<RunOrigin>,
    pub failure: Option<String>,
}

impl SessionState {
    /// Builds the initial state from a `session_started` event.
    pub fn start(event: &SessionEvent) -> Result<Self, ApplyError> {
        match event {
            SessionEvent::SessionStarted {
                id,
                description,
                designer,
                emulator,
                origin,
            } => Ok(Self {
                id: id.clone(),
                stage: Stage::Architectural,
                status: SessionStatus::Running,
                description: description.clone(),
                conversation: Conversation::new(),
                architecture: None,
                architecture_dot: None,
                block_queue: Vec::new(),
                defaulted_blocks: Vec::new(),
                details: BTreeMap::new(),
                failed_blocks: Vec::new(),
                summary: None,
                summary_accepted: false,
                designer: designer.clone(),
                emulator: emulator.clone(),
                origin: origin.clone(),
                failure: None,
            }),
            other => Err(ApplyError::NotStarted(other.type_name())),
        }
    }

    /// Rebuilds a state from a complete event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<Self, ApplyError> {
        let mut events = events.into_iter();
        let mut state = Self::start(events.next().ok_or(ApplyError::EmptyLog)?)?;
        for event in events {
            state.apply(event)?;
        }
        Ok(state)
    }

    fn queued(&self, block: &str) -> Result<(), ApplyError> {
        if self.block_queue.iter().any(|q| q.block == block) {
            Ok(())
        } else {
            Err(ApplyError::UnknownBlock(String::from(block)))
        }
    }

    fn require_stage(&self, event: &SessionEvent, stage: Stage) -> Result<(), ApplyError> {
        if self.stage == stage {
            Ok(())
        } else {
            Err(ApplyError::WrongStage {
                event: event.type_name(),
                stage: self.stage,
            })
        }
    }

    /// Blocks neither detailed nor failed, in queue order.
    pub fn pending_blocks(&self) -> impl Iterator<Item = &QueuedBlock> {
        self.block_queue.iter().filter(|q| {
            !self.details.contains_key(&q.block) && !self.failed_blocks.contains(&q.block)
        })
    }

    /// Applies one event. Invalid events leave the state untouched.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), ApplyError> {
        if self.status != SessionStatus::Running {
            return Err(ApplyError::Terminated(self.status));
        }
        match event {
            SessionEvent::SessionStarted { .. } => return Err(ApplyError::AlreadyStarted),
            SessionEvent::MessageAppended { message } => self.conversation.append(message.clone()),
            SessionEvent::MarkerSet { label, index } => {
                self.conversation.set_marker(label.clone(), *index)?
            }
            SessionEvent::ArchitecturePruned { accepted, removed } => {
                self.require_stage(event, Stage::Architectural)?;
                let mut pruned = self.conversation.clone();
                let actual = pruned.prune_architecture_loop(accepted)?;
                if actual != *removed {
                    return Err(ApplyError::PruneMismatch {
                        logged: *removed,
                        actual,
                    });
                }
                self.conversation = pruned;
            }
            SessionEvent::StageAdvanced { stage } => {
                if self.stage.next() != Some(*stage) {
                    return Err(ApplyError::StageOrder {
                        from: self.stage,
                        to: *stage,
                    });
                }
                match stage {
                    Stage::Categorisation if self.architecture.is_none() => {
                        return Err(ApplyError::Precondition("no accepted architecture"));
                    }
                    Stage::Detailing if self.block_queue.is_empty() => {
                        return Err(ApplyError::Precondition("block queue is empty"));
                    }
                    Stage::Revision if self.pending_blocks().next().is_some() => {
                        return Err(ApplyError::Precondition("blocks still pending"));
                    }
                    Stage::Done if !self.summary_accepted => {
                        return Err(ApplyError::Precondition("summary not accepted"));
                    }
                    _ => {}
                }
                self.stage = *stage;
            }
            SessionEvent::ArchitectureAccepted { dot, graph } => {
                self.require_stage(event, Stage::Architectural)?;
                if graph.is_empty() {
                    return Err(ApplyError::Precondition("architecture is empty"));
                }
                self.architecture = Some(graph.clone());
                self.architecture_dot = Some(dot.clone());
            }
            SessionEvent::BlocksCategorised { queue, defaulted } => {
                self.require_stage(event, Stage::Categorisation)?;
                let graph = self
                    .architecture
                    .as_ref()
                    .ok_or(ApplyError::Precondition("no accepted architecture"))?;
                if let Some(q) = queue.iter().find(|q| graph.node(&q.block).is_none()) {
                    return Err(ApplyError::UnknownBlock(q.block.clone()));
                }
                self.block_queue = queue.clone();
                self.defaulted_blocks = defaulted.clone();
            }
            SessionEvent::DetailAccepted { block, text } => {
                self.require_stage(event, Stage::Detailing)?;
                self.queued(block)?;
                self.details.insert(block.clone(), text.clone());
            }
            SessionEvent::BlockFailed { block, .. } => {
                self.require_stage(event, Stage::Detailing)?;
                self.queued(block)?;
                if !self.failed_blocks.contains(block) {
                    self.failed_blocks.push(block.clone());
                }
            }
            SessionEvent::SummaryProduced { text } => {
                self.require_stage(event, Stage::Revision)?;
                self.summary = Some(text.clone());
                self.summary_accepted = false;
            }
            SessionEvent::SummaryAccepted => {
                self.require_stage(event, Stage::Revision)?;
                if self.summary.is_none() {
                    return Err(ApplyError::Precondition("no summary to accept"));
                }
                self.summary_accepted = true;
            }
            SessionEvent::SessionFailed { reason } => {
                self.status = SessionStatus::Failed;
                self.failure = Some(reason.clone());
            }
            SessionEvent::SessionCompleted => {
                self.require_stage(event, Stage::Done)?;
                self.status = SessionStatus::Done;
            }
            SessionEvent::ModelExchange { .. }
            | SessionEvent::QuestionsAsked { .. }
            | SessionEvent::AnswersGiven { .. }
            | SessionEvent::AnswerCountMismatch { .. }
            | SessionEvent::DiagramRejected { .. }
            | SessionEvent::DiagramProposed { .. }
            | SessionEvent::VerdictGiven { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("empty project description")]
    EmptyDescription,
    #[error("session is not running")]
    NotRunning,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Port(#[from] PortError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("engine produced an invalid event: {0}")]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
}
