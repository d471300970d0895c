//! Automated stand-ins for the user. Direct mode puts every requirement in
//! the project description and answers nothing. Open mode keeps the
//! requirements back and lets a second model answer questions from them.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagram::Severity;
use crate::flow::{
    split_answers, Artifact, Caller, ClientPort, FeedbackVerdict, PortError, SessionEvent, Stage,
};
use crate::llm::{complete, ChatBackend, ChatMessage, ChatRequest, ModelConfig};
use crate::prompts::PromptCatalog;
use crate::testbench::Testbench;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmulationMode {
    Direct,
    Open,
}

impl EmulationMode {
    pub const ALL: [EmulationMode; 2] = [EmulationMode::Direct, EmulationMode::Open];

    pub fn as_str(self) -> &'static str {
        match self {
            EmulationMode::Direct => "direct",
            EmulationMode::Open => "open",
        }
    }
}

impl fmt::Display for EmulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown value {0:?}")]
pub struct UnknownValue(pub String);

impl FromStr for EmulationMode {
    type Err = UnknownValue;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmulationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownValue(String::from(s)))
    }
}

/// Requirement lines as written, numbering included. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RequirementList(Vec<String>);

impl RequirementList {
    /// `None` when no nonblank item remains.
    pub fn new<I, S>(items: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let items: Vec<String> = items
            .into_iter()
            .map(Into::into)
            .filter(|s| !s.trim().is_empty())
            .collect();
        (!items.is_empty()).then_some(Self(items))
    }

    pub fn items(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<String>> for RequirementList {
    type Error = &'static str;

    fn try_from(items: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(items).ok_or("requirement list is empty")
    }
}

impl From<RequirementList> for Vec<String> {
    fn from(list: RequirementList) -> Self {
        list.0
    }
}

/// The project description as sent in direct mode: description, then the
/// requirement lines.
pub fn compose_direct_description(tb: &Testbench) -> String {
    let mut text = tb.description.clone();
    for item in tb.requirements.items() {
        text.push('\n');
        text.push_str(item);
    }
    text
}

/// The opening description for a testbench in the given mode.
pub fn entry_description(tb: &Testbench, mode: EmulationMode) -> String {
    match mode {
        EmulationMode::Direct => compose_direct_description(tb),
        EmulationMode::Open => tb.description.clone(),
    }
}

/// How an automated user judges artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictPolicy {
    AcceptFirst,
    /// Ask for one revision of a diagram with ERROR findings or a blank
    /// text, then accept whatever comes back.
    StructuralOnce,
}

impl VerdictPolicy {
    pub const ALL: [VerdictPolicy; 2] = [VerdictPolicy::AcceptFirst, VerdictPolicy::StructuralOnce];

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictPolicy::AcceptFirst => "accept_first",
            VerdictPolicy::StructuralOnce => "structural_once",
        }
    }
}

impl fmt::Display for VerdictPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictPolicy {
    type Err = UnknownValue;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VerdictPolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s || p.as_str().replace('_', "-") == s)
            .ok_or_else(|| UnknownValue(String::from(s)))
    }
}

/// Applies a [`VerdictPolicy`]; remembers whether the current artifact has
/// already been sent back once.
#[derive(Debug, Clone)]
pub struct VerdictJudge {
    policy: VerdictPolicy,
    revised: bool,
}

impl VerdictJudge {
    pub fn new(policy: VerdictPolicy) -> Self {
        Self {
            policy,
            revised: false,
        }
    }

    pub fn policy(&self) -> VerdictPolicy {
        self.policy
    }

    pub fn judge(&mut self, artifact: &Artifact) -> FeedbackVerdict {
        if self.policy == VerdictPolicy::AcceptFirst || self.revised {
            self.revised = false;
            return FeedbackVerdict::Accept;
        }
        let problem = match artifact {
            Artifact::Diagram { findings, .. } => {
                let errors: Vec<String> = findings
                    .iter()
                    .filter(|f| f.severity == Severity::Error)
                    .map(ToString::to_string)
                    .collect();
                (!errors.is_empty()).then(|| {
                    alloc::format!("The diagram has these problems:\n{}", errors.join("\n"))
                })
            }
            Artifact::Detail { text, .. } | Artifact::Summary { text } => text
                .trim()
                .is_empty()
                .then(|| String::from("The answer is empty. Please write it out in full.")),
        };
        match problem {
            Some(feedback) => {
                self.revised = true;
                FeedbackVerdict::Revise { feedback }
            }
            None => FeedbackVerdict::Accept,
        }
    }
}

/// Direct context: questions get empty answers.
#[derive(Debug, Clone)]
pub struct DirectPort {
    judge: VerdictJudge,
}

impl DirectPort {
    pub fn new(policy: VerdictPolicy) -> Self {
        Self {
            judge: VerdictJudge::new(policy),
        }
    }
}

impl ClientPort for DirectPort {
    fn answer_questions(
        &mut self,
        _stage: Stage,
        _block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError> {
        Ok(alloc::vec![String::new(); questions.len()])
    }

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError> {
        Ok(self.judge.judge(artifact))
    }
}

/// Open context: a second model answers strictly from the requirement
/// list. Its conversation is separate from the designer's and carries
/// over between question rounds.
pub struct OpenPort<'c, B> {
    catalog: &'c PromptCatalog,
    config: ModelConfig,
    backend: B,
    conversation: Vec<ChatMessage>,
    judge: VerdictJudge,
    log: Vec<SessionEvent>,
}

impl<'c, B: ChatBackend> OpenPort<'c, B> {
    pub fn new(
        catalog: &'c PromptCatalog,
        requirements: &RequirementList,
        config: ModelConfig,
        backend: B,
        policy: VerdictPolicy,
    ) -> Result<Self, PortError> {
        config.validate()?;
        let system = catalog.emulator_system(requirements.items())?;
        Ok(Self {
            catalog,
            config,
            backend,
            conversation: alloc::vec![ChatMessage::system(system)],
            judge: VerdictJudge::new(policy),
            log: Vec::new(),
        })
    }

    pub fn conversation(&self) -> &[ChatMessage] {
        &self.conversation
    }
}

impl<B: ChatBackend> ClientPort for OpenPort<'_, B> {
    fn answer_questions(
        &mut self,
        stage: Stage,
        block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError> {
        if questions.is_empty() {
            return Ok(Vec::new());
        }
        self.conversation
            .push(ChatMessage::user(self.catalog.emulator_questions(questions)?));
        let result = complete(&self.config, &self.conversation, &mut self.backend);
        self.log.push(SessionEvent::ModelExchange {
            caller: Caller::Emulator,
            stage,
            block: block.map(String::from),
            request: ChatRequest::new(&self.config, &self.conversation),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        let reply = match result {
            Ok(response) => response.content,
            Err(e) => {
                self.conversation.pop();
                return Err(e.into());
            }
        };
        let shown = if reply.trim().is_empty() {
            String::from(crate::flow::EMPTY_REPLY)
        } else {
            reply.clone()
        };
        self.conversation.push(ChatMessage::assistant(shown));
        let (answers, mismatch) = split_answers(&reply, questions.len());
        if mismatch {
            self.log.push(SessionEvent::AnswerCountMismatch {
                stage,
                block: block.map(String::from),
                expected: questions.len(),
                received: crate::flow::list_items(&reply).iter().filter(|i| i.marked).count(),
            });
        }
        Ok(answers)
    }

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError> {
        Ok(self.judge.judge(artifact))
    }

    fn drain_log(&mut self) -> Vec<SessionEvent> {
        core::mem::take(&mut self.log)
    }
}

/// A port that replays fixed answers and verdicts, for tests and demos.
/// Answers are given as-is; verdicts are consumed in order and default to
/// accept once exhausted.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPort {
    answers: alloc::collections::VecDeque<Vec<String>>,
    verdicts: alloc::collections::VecDeque<FeedbackVerdict>,
    /// Every question list received, in order.
    pub asked: Vec<Vec<String>>,
    /// Every artifact judged, in order.
    pub judged: Vec<Artifact>,
}

impl ScriptedPort {
    pub fn new(
        answers: impl IntoIterator<Item = Vec<String>>,
        verdicts: impl IntoIterator<Item = FeedbackVerdict>,
    ) -> Self {
        Self {
            answers: answers.into_iter().collect(),
            verdicts: verdicts.into_iter().collect(),
            asked: Vec::new(),
            judged: Vec::new(),
        }
    }
}

impl ClientPort for ScriptedPort {
    fn answer_questions(
        &mut self,
        _stage: Stage,
        _block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError> {
        self.asked.push(questions.to_vec());
        Ok(self
            .answers
            .pop_front()
            .unwrap_or_else(|| alloc::vec![String::new(); questions.len()]))
    }

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError> {
        self.judged.push(artifact.clone());
        Ok(self.verdicts.pop_front().unwrap_or(FeedbackVerdict::Accept))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{parse, validate, DotSource};
    use crate::llm::{Role, ScriptedBackend, EMULATOR_TEMPERATURE};
    use crate::testbench::{testbench, TestbenchId};

    fn qs(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn direct_port_answers_blank() {
        let mut port = DirectPort::new(VerdictPolicy::AcceptFirst);
        let answers = port
            .answer_questions(Stage::Architectural, None, &qs(&["a?", "b?", "c?"]))
            .unwrap();
        assert_eq!(answers, ["", "", ""]);
        assert!(port.answer_questions(Stage::Architectural, None, &[]).unwrap().is_empty());
        let summary = Artifact::Summary { text: String::new() };
        assert!(port.give_verdict(&summary).unwrap().is_accept());
    }

    #[test]
    fn direct_description_embeds_requirements() {
        let tb = testbench(TestbenchId::AngularPosition).unwrap();
        let text = compose_direct_description(&tb);
        assert!(text.contains("calculates the angle of a pendulum"));
        assert!(text.contains("maximum accepted input voltage for the DAQ is +/- 7 V"));
        assert!(text.starts_with(&tb.description));
        assert_eq!(text.lines().filter(|l| tb.requirements.items().contains(&String::from(*l))).count(), 9);
        assert_eq!(entry_description(&tb, EmulationMode::Open), tb.description);
    }

    #[test]
    fn structural_once_revises_errors_once() {
        let graph = parse(&DotSource::new("digraph G { A -> B; C }").unwrap()).unwrap();
        let artifact = Artifact::Diagram {
            dot: DotSource::new("digraph G { A -> B; C }").unwrap(),
            findings: validate(&graph),
            graph,
        };
        let mut judge = VerdictJudge::new(VerdictPolicy::StructuralOnce);
        assert!(matches!(judge.judge(&artifact), FeedbackVerdict::Revise { ref feedback } if feedback.contains("disconnected")));
        assert!(judge.judge(&artifact).is_accept());
        assert!(!judge.judge(&artifact).is_accept());
        let fine = Artifact::Summary { text: String::from("ok") };
        let mut judge = VerdictJudge::new(VerdictPolicy::StructuralOnce);
        assert!(judge.judge(&fine).is_accept());
    }

    #[test]
    fn open_port_answers_from_emulator() {
        let catalog = PromptCatalog::builtin();
        let tb = testbench(TestbenchId::AngularPosition).unwrap();
        let backend = ScriptedBackend::from_responses([
            "1. The value of the potentiometer is 10 kOhms.\n2. I don't know",
        ]);
        let mut port = OpenPort::new(
            &catalog,
            &tb.requirements,
            ModelConfig::emulator(),
            backend,
            VerdictPolicy::AcceptFirst,
        )
        .unwrap();
        let questions = qs(&["What is the potentiometer value?", "What colour is the pendulum?"]);
        let answers = port.answer_questions(Stage::Architectural, None, &questions).unwrap();
        assert!(answers[0].contains("10 kOhms"));
        assert_eq!(answers[1], "I don't know");

        let log = port.drain_log();
        assert_eq!(log.len(), 1);
        let SessionEvent::ModelExchange { caller, request, .. } = &log[0] else {
            panic!("expected a model exchange");
        };
        assert_eq!(*caller, Caller::Emulator);
        assert_eq!(request.temperature, EMULATOR_TEMPERATURE);
        assert_eq!(request.messages[0].role, Role::System);
        assert!(request.messages[0].content.contains("10 kOhms"));
        assert!(request.messages[1].content.contains("1. What is the potentiometer value?"));
        assert!(port.drain_log().is_empty());
    }

    #[test]
    fn open_port_pads_short_replies() {
        let catalog = PromptCatalog::builtin();
        let reqs = RequirementList::new(["1. The supply is 5 V."]).unwrap();
        let backend = ScriptedBackend::from_responses(["1. 5 V"]);
        let mut port =
            OpenPort::new(&catalog, &reqs, ModelConfig::emulator(), backend, VerdictPolicy::AcceptFirst).unwrap();
        let answers = port
            .answer_questions(Stage::Detailing, Some("amp"), &qs(&["Supply?", "Gain?"]))
            .unwrap();
        assert_eq!(answers, ["5 V", ""]);
        let log = port.drain_log();
        assert!(matches!(
            log[1],
            SessionEvent::AnswerCountMismatch { expected: 2, received: 1, .. }
        ));
    }

    #[test]
    fn open_port_backend_failure_is_port_error() {
        let catalog = PromptCatalog::builtin();
        let reqs = RequirementList::new(["1. x"]).unwrap();
        let mut port = OpenPort::new(
            &catalog,
            &reqs,
            ModelConfig::emulator(),
            ScriptedBackend::default(),
            VerdictPolicy::AcceptFirst,
        )
        .unwrap();
        let err = port.answer_questions(Stage::Architectural, None, &qs(&["a?"])).unwrap_err();
        assert!(matches!(err, PortError::Backend(_)));
        assert_eq!(port.conversation().len(), 1);
    }

    #[test]
    fn requirement_list_rejects_empty() {
        assert!(RequirementList::new(Vec::<String>::new()).is_none());
        assert!(RequirementList::new(["  "]).is_none());
        assert!(serde_json::from_str::<RequirementList>("[]").is_err());
        let list: RequirementList = serde_json::from_str(r#"["1. a"]"#).unwrap();
        assert_eq!(list.len(), 1);
    }

    #[test]
    fn modes_and_policies_parse() {
        assert_eq!("open".parse::<EmulationMode>().unwrap(), EmulationMode::Open);
        assert_eq!("accept-first".parse::<VerdictPolicy>().unwrap(), VerdictPolicy::AcceptFirst);
        assert!("closed".parse::<EmulationMode>().is_err());
    }
}
