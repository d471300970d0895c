use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::category::CategoryId;
use crate::conversation::{Conversation, ARCHITECTURE_ACCEPTED, ARCHITECTURE_LOOP_START};
use crate::diagram::{extract_dot, format_label, mentions_digraph, parse, split_multiplicity, validate, BlockGraph, DotSource};
use crate::llm::{complete, ChatBackend, ChatMessage, ChatRequest, ChatResponse, ModelConfig, Role};
use crate::prompts::PromptCatalog;

use super::questions::{parse_questions, question_items};
use super::{
    Artifact, Caller, ClientPort, EventSink, FeedbackVerdict, FlowError, QueuedBlock, RunOrigin, SessionEvent,
    SessionState, SessionStatus, Stage, EMPTY_REPLY,
};

/// Consecutive unusable replies tolerated for one artifact.
pub const MAX_ATTEMPTS: u32 = 3;

/// What happens when a block cannot be detailed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockFailurePolicy {
    /// Record the failure and detail the next block.
    Continue,
    /// Fail the session.
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineOptions {
    pub block_failure: BlockFailurePolicy,
}

impl EngineOptions {
    pub fn batch() -> Self {
        Self {
            block_failure: BlockFailurePolicy::Continue,
        }
    }

    pub fn interactive() -> Self {
        Self {
            block_failure: BlockFailurePolicy::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub id: String,
    pub description: String,
    pub designer: ModelConfig,
    pub emulator: Option<ModelConfig>,
    pub origin: Option<RunOrigin>,
}

/// Drives one session. Every state change is an event, applied locally and
/// forwarded to the sink.
pub struct Engine<'c, B, P, S> {
    catalog: &'c PromptCatalog,
    backend: B,
    port: P,
    sink: S,
    state: SessionState,
    options: EngineOptions,
}

enum Failure {
    /// Ends the session with a reason; `run` still returns normally.
    Session(String),
    Fatal(FlowError),
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Sink(_) | FlowError::Apply(_) => Failure::Fatal(e),
            other => Failure::Session(other.to_string()),
        }
    }
}

macro_rules! impl_failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::from(FlowError::from(e))
            }
        }
    )*};
}

impl_failure_from!(
    crate::llm::LlmError,
    crate::prompts::PromptError,
    super::SinkError,
    super::ApplyError,
    crate::conversation::ConversationError
);

impl From<super::PortError> for Failure {
    fn from(e: super::PortError) -> Self {
        Failure::Fatal(FlowError::Port(e))
    }
}

type Step<T = ()> = Result<T, Failure>;

fn display_text(reply: &str) -> String {
    if reply.trim().is_empty() {
        String::from(EMPTY_REPLY)
    } else {
        String::from(reply)
    }
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start_matches(['-', '*', '•', ' ', '\t']);
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && matches!(line.as_bytes().get(digits), Some(b'.' | b')')) {
        line[digits + 1..].trim_start()
    } else {
        line
    }
}

fn name_key(name: &str) -> String {
    let (bare, _) = split_multiplicity(name.trim());
    bare.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Reads `name: category` lines. Later lines for the same name win.
pub(crate) fn parse_categorisation(reply: &str) -> Vec<(String, Option<CategoryId>)> {
    reply
        .lines()
        .filter_map(|raw| {
            let line = raw.replace(['`', '*'], "");
            let line = strip_list_marker(line.trim());
            let (name, category) = line.rsplit_once(':')?;
            let category = category.trim().trim_end_matches('.');
            let category = CategoryId::parse_lenient(category).or_else(|| {
                category
                    .split_once('(')
                    .and_then(|(head, _)| CategoryId::parse_lenient(head))
            });
            let name = name.trim();
            (!name.is_empty()).then(|| (String::from(name), category))
        })
        .collect()
}

impl<'c, B, P, S> Engine<'c, B, P, S>
where
    B: ChatBackend,
    P: ClientPort,
    S: EventSink,
{
    /// Opens a session: records its start and seeds the conversation with
    /// the persona and the architecture prompt.
    pub fn start(
        catalog: &'c PromptCatalog,
        spec: SessionSpec,
        backend: B,
        port: P,
        sink: S,
        options: EngineOptions,
    ) -> Result<Self, FlowError> {
        if spec.description.trim().is_empty() {
            return Err(FlowError::EmptyDescription);
        }
        spec.designer.validate()?;
        let seed = catalog.architecture_prompt(&spec.description)?;
        let started = SessionEvent::SessionStarted {
            id: spec.id,
            description: spec.description,
            designer: spec.designer,
            emulator: spec.emulator,
            origin: spec.origin,
        };
        let state = SessionState::start(&started)?;
        let mut engine = Self {
            catalog,
            backend,
            port,
            sink,
            state,
            options,
        };
        engine.sink.record(&started)?;
        for message in seed {
            engine.emit(SessionEvent::MessageAppended { message })?;
        }
        Ok(engine)
    }

    /// Continues a session rebuilt from its event log. Work inside a
    /// detailing fork is not persisted, so an interrupted block restarts.
    pub fn resume(
        catalog: &'c PromptCatalog,
        state: SessionState,
        backend: B,
        port: P,
        sink: S,
        options: EngineOptions,
    ) -> Result<Self, FlowError> {
        if state.status != SessionStatus::Running {
            return Err(FlowError::NotRunning);
        }
        Ok(Self {
            catalog,
            backend,
            port,
            sink,
            state,
            options,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn into_parts(self) -> (SessionState, B, P, S) {
        (self.state, self.backend, self.port, self.sink)
    }

    /// Runs to completion or failure. Session-level failures (bad model
    /// output, model errors) end in `Ok(SessionStatus::Failed)`; port and
    /// sink errors are returned after the failure is recorded where possible.
    /// `PortError::Closed` records nothing and leaves the session running.
    pub fn run(&mut self) -> Result<SessionStatus, FlowError> {
        while self.state.status == SessionStatus::Running {
            let step = match self.state.stage {
                Stage::Architectural => self.architectural(),
                Stage::Categorisation => self.categorisation(),
                Stage::Detailing => self.detailing(),
                Stage::Revision => self.revision(),
                Stage::Done => self.emit(SessionEvent::SessionCompleted).map_err(Failure::from),
            };
            match step {
                Ok(()) => {}
                Err(Failure::Session(reason)) => self.emit(SessionEvent::SessionFailed { reason })?,
                Err(Failure::Fatal(e)) => {
                    // A closed client leaves the session running so it can
                    // be resumed from its log.
                    if let FlowError::Port(port) = &e {
                        if matches!(port, super::PortError::Closed) {
                            return Err(e);
                        }
                        self.emit(SessionEvent::SessionFailed {
                            reason: format!("client port failed: {port}"),
                        })?;
                    }
                    return Err(e);
                }
            }
        }
        Ok(self.state.status)
    }

    fn emit(&mut self, event: SessionEvent) -> Result<(), FlowError> {
        self.state.apply(&event)?;
        self.sink.record(&event)?;
        Ok(())
    }

    fn forward_port_log(&mut self) -> Step {
        for event in self.port.drain_log() {
            self.emit(event)?;
        }
        Ok(())
    }

    fn append(&mut self, message: ChatMessage) -> Step {
        self.emit(SessionEvent::MessageAppended { message })?;
        Ok(())
    }

    fn call_designer(&mut self, messages: &[ChatMessage], block: Option<&str>) -> Result<ChatResponse, FlowError> {
        let designer = self.state.designer.clone();
        let result = complete(&designer, messages, &mut self.backend);
        self.emit(SessionEvent::ModelExchange {
            caller: Caller::Designer,
            stage: self.state.stage,
            block: block.map(String::from),
            request: ChatRequest::new(&designer, messages),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        })?;
        Ok(result?)
    }

    /// Asks the designer over the main conversation and appends the reply.
    fn main_reply(&mut self) -> Step<String> {
        let messages = self.state.conversation.messages().to_vec();
        let reply = self.call_designer(&messages, None)?.content;
        self.append(ChatMessage::assistant(display_text(&reply)))?;
        Ok(reply)
    }

    /// Sends questions to the port and returns `(questions, answers)` with
    /// equal lengths. Nothing is sent when there are no questions.
    fn question_round(&mut self, block: Option<&str>, reply: &str) -> Step<(Vec<String>, Vec<String>)> {
        let questions = parse_questions(reply);
        if questions.is_empty() {
            return Ok((questions, Vec::new()));
        }
        let stage = self.state.stage;
        self.emit(SessionEvent::QuestionsAsked {
            stage,
            block: block.map(String::from),
            questions: questions.clone(),
            discarded: question_items(reply).len() - questions.len(),
        })?;
        let answered = self.port.answer_questions(stage, block, &questions);
        self.forward_port_log()?;
        let mut answers = answered?;
        if answers.len() != questions.len() {
            self.emit(SessionEvent::AnswerCountMismatch {
                stage,
                block: block.map(String::from),
                expected: questions.len(),
                received: answers.len(),
            })?;
            answers.resize(questions.len(), String::new());
        }
        self.emit(SessionEvent::AnswersGiven {
            stage,
            block: block.map(String::from),
            answers: answers.clone(),
        })?;
        Ok((questions, answers))
    }

    fn verdict(&mut self, artifact: &Artifact) -> Step<FeedbackVerdict> {
        let verdict = self.port.give_verdict(artifact);
        self.forward_port_log()?;
        let verdict = verdict?;
        self.emit(SessionEvent::VerdictGiven {
            artifact: artifact.kind(),
            block: artifact.block().map(String::from),
            verdict: verdict.clone(),
        })?;
        Ok(verdict)
    }

    fn architectural(&mut self) -> Step {
        // A log cut inside the seed leaves it partial.
        let seed = self.catalog.architecture_prompt(&self.state.description)?;
        for message in seed.into_iter().skip(self.state.conversation.len()) {
            self.append(message)?;
        }
        let conv = &self.state.conversation;
        let resumed = conv.len() > 2 && conv.messages().last().is_some_and(|m| m.role == Role::Assistant);
        let mut reply = if resumed {
            conv.messages().last().map(|m| m.content.clone()).unwrap_or_default()
        } else {
            self.main_reply()?
        };

        let conv = &self.state.conversation;
        if conv.marker(ARCHITECTURE_LOOP_START).is_none() && conv.len() == 3 && !mentions_digraph(&reply) {
            let (questions, answers) = self.question_round(None, &reply)?;
            let prompt = self.catalog.architecture_answers(&questions, &answers)?;
            self.append(ChatMessage::user(prompt))?;
            reply = self.main_reply()?;
        }
        if self.state.conversation.marker(ARCHITECTURE_LOOP_START).is_none() {
            let index = self.state.conversation.len() - 1;
            self.emit(SessionEvent::MarkerSet {
                label: String::from(ARCHITECTURE_LOOP_START),
                index,
            })?;
        }

        let mut failures = 0;
        loop {
            let attempt = extract_dot(&reply)
                .map_err(|e| e.to_string())
                .and_then(|dot| parse(&dot).map(|g| (dot, g)).map_err(|e| e.to_string()));
            let (dot, graph) = match attempt {
                Ok(parsed) => parsed,
                Err(error) => {
                    failures += 1;
                    self.emit(SessionEvent::DiagramRejected {
                        attempt: failures,
                        error: error.clone(),
                    })?;
                    if failures >= MAX_ATTEMPTS {
                        return Err(Failure::Session(format!(
                            "{MAX_ATTEMPTS} consecutive unusable diagrams; last error: {error}"
                        )));
                    }
                    let prompt = self.catalog.diagram_retry(&error)?;
                    self.append(ChatMessage::user(prompt))?;
                    reply = self.main_reply()?;
                    continue;
                }
            };
            failures = 0;
            let findings = validate(&graph);
            self.emit(SessionEvent::DiagramProposed {
                dot: dot.clone(),
                findings: findings.clone(),
            })?;
            let artifact = Artifact::Diagram {
                dot: dot.clone(),
                graph: graph.clone(),
                findings,
            };
            match self.verdict(&artifact)? {
                FeedbackVerdict::Accept => return self.accept_architecture(dot, graph),
                FeedbackVerdict::Revise { feedback } => {
                    let prompt = self.catalog.diagram_revision(&feedback)?;
                    self.append(ChatMessage::user(prompt))?;
                    reply = self.main_reply()?;
                }
            }
        }
    }

    fn accept_architecture(&mut self, dot: DotSource, graph: BlockGraph) -> Step {
        if graph.is_empty() {
            return Err(Failure::Session(String::from("accepted architecture has no blocks")));
        }
        let removed = self.state.conversation.clone().prune_architecture_loop(&dot)?;
        self.emit(SessionEvent::ArchitecturePruned {
            accepted: dot.clone(),
            removed,
        })?;
        self.emit(SessionEvent::ArchitectureAccepted { dot, graph })?;
        self.emit(SessionEvent::StageAdvanced {
            stage: Stage::Categorisation,
        })?;
        Ok(())
    }

    /// One call over the architectural conversation; the client is not
    /// involved.
    fn categorisation(&mut self) -> Step {
        let graph = self
            .state
            .architecture
            .clone()
            .ok_or_else(|| Failure::Session(String::from("no accepted architecture")))?;
        let order: Vec<_> = graph.topological_order().into_iter().cloned().collect();
        let names: Vec<String> = order.iter().map(|n| format_label(&n.label, n.multiplicity)).collect();

        let mut messages = self.state.conversation.fork_for_detailing()?.messages().to_vec();
        messages.push(ChatMessage::user(self.catalog.categorisation_prompt(&names)?));
        let reply = self.call_designer(&messages, None)?.content;
        let parsed = parse_categorisation(&reply);

        let mut queue = Vec::with_capacity(order.len());
        let mut defaulted = Vec::new();
        for node in &order {
            let keys = [name_key(&node.label), name_key(&node.id)];
            let found = parsed.iter().rev().find(|(name, _)| keys.contains(&name_key(name)));
            let category = match found {
                Some((_, category)) => category.unwrap_or(CategoryId::Others),
                None => {
                    defaulted.push(node.id.clone());
                    CategoryId::Others
                }
            };
            queue.push(QueuedBlock {
                block: node.id.clone(),
                label: node.label.clone(),
                multiplicity: node.multiplicity,
                category,
            });
        }
        self.emit(SessionEvent::BlocksCategorised { queue, defaulted })?;
        self.emit(SessionEvent::StageAdvanced {
            stage: Stage::Detailing,
        })?;
        Ok(())
    }

    fn detailing(&mut self) -> Step {
        loop {
            let next = self.state.pending_blocks().next().cloned();
            let Some(block) = next else { break };
            match self.detail_block(&block) {
                Ok(text) => self.emit(SessionEvent::DetailAccepted {
                    block: block.block.clone(),
                    text,
                })?,
                Err(Failure::Session(reason)) => {
                    self.emit(SessionEvent::BlockFailed {
                        block: block.block.clone(),
                        reason: reason.clone(),
                    })?;
                    if self.options.block_failure == BlockFailurePolicy::Abort {
                        return Err(Failure::Session(format!("block {} failed: {reason}", block.block)));
                    }
                }
                Err(fatal) => return Err(fatal),
            }
        }
        self.emit(SessionEvent::StageAdvanced {
            stage: Stage::Revision,
        })?;
        Ok(())
    }

    /// Asks on `fork` until a nonblank reply arrives, at most
    /// [`MAX_ATTEMPTS`] times. The reply is appended to the fork.
    fn fork_reply(&mut self, fork: &mut Conversation, block: &str) -> Step<String> {
        for attempt in 1..=MAX_ATTEMPTS {
            let reply = self.call_designer(fork.messages(), Some(block))?.content;
            fork.append(ChatMessage::assistant(display_text(&reply)));
            if !reply.trim().is_empty() {
                return Ok(reply);
            }
            if attempt < MAX_ATTEMPTS {
                fork.append(ChatMessage::user(self.catalog.detail_retry()?));
            }
        }
        Err(Failure::Session(format!("{MAX_ATTEMPTS} empty replies")))
    }

    /// Details one block on a private copy of the architectural
    /// conversation. Nothing from the copy reaches the session history.
    fn detail_block(&mut self, queued: &QueuedBlock) -> Step<String> {
        let block = queued.block.as_str();
        let mut fork = self.state.conversation.fork_for_detailing()?;
        let name = format_label(&queued.label, queued.multiplicity);
        fork.append(ChatMessage::user(self.catalog.category_prompt(queued.category, &name)?));

        let mut text = self.fork_reply(&mut fork, block)?;
        let (questions, answers) = self.question_round(Some(block), &text)?;
        if !questions.is_empty() {
            fork.append(ChatMessage::user(self.catalog.detail_answers(&questions, &answers)?));
            text = self.fork_reply(&mut fork, block)?;
        }
        loop {
            let artifact = Artifact::Detail {
                block: String::from(block),
                label: queued.label.clone(),
                category: queued.category,
                text: text.clone(),
            };
            match self.verdict(&artifact)? {
                FeedbackVerdict::Accept => return Ok(text),
                FeedbackVerdict::Revise { feedback } => {
                    fork.append(ChatMessage::user(self.catalog.detail_revision(&feedback)?));
                    text = self.fork_reply(&mut fork, block)?;
                }
            }
        }
    }

    fn revision(&mut self) -> Step {
        let conv = &self.state.conversation;
        let accepted = conv.marker(ARCHITECTURE_ACCEPTED);
        let last = conv.messages().last().cloned();
        let fresh = accepted == Some(conv.len() - 1);
        let mut summary = match last {
            _ if fresh => {
                let details: Vec<String> = self
                    .state
                    .block_queue
                    .iter()
                    .filter_map(|q| {
                        self.state.details.get(&q.block).map(|text| {
                            format!("{} ({})\n{text}", format_label(&q.label, q.multiplicity), q.category)
                        })
                    })
                    .collect();
                if details.is_empty() {
                    return Err(Failure::Session(String::from("no block could be detailed")));
                }
                let prompt = self.catalog.revision_prompt(&details)?;
                self.append(ChatMessage::user(prompt))?;
                self.produce_summary()?
            }
            Some(m) if m.role == Role::User => self.produce_summary()?,
            Some(m) => match self.state.summary.clone() {
                Some(text) => text,
                None => {
                    let text = m.content;
                    self.emit(SessionEvent::SummaryProduced { text: text.clone() })?;
                    text
                }
            },
            None => return Err(Failure::Session(String::from("empty conversation"))),
        };
        loop {
            match self.verdict(&Artifact::Summary { text: summary.clone() })? {
                FeedbackVerdict::Accept => {
                    self.emit(SessionEvent::SummaryAccepted)?;
                    self.emit(SessionEvent::StageAdvanced { stage: Stage::Done })?;
                    return Ok(());
                }
                FeedbackVerdict::Revise { feedback } => {
                    let prompt = self.catalog.summary_revision(&feedback)?;
                    self.append(ChatMessage::user(prompt))?;
                    summary = self.produce_summary()?;
                }
            }
        }
    }

    fn produce_summary(&mut self) -> Step<String> {
        let text = self.main_reply()?;
        self.emit(SessionEvent::SummaryProduced { text: text.clone() })?;
        Ok(text)
    }
}
