//! Structural metrics computed from a session's event log.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::category::CategoryId;
use crate::diagram::validate;
use crate::flow::{Caller, FeedbackVerdict, SessionEvent, SessionStatus, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub session_id: String,
    pub status: SessionStatus,
    pub failure: Option<String>,
    pub block_count: usize,
    /// All nine categories, zero counts included.
    pub category_histogram: BTreeMap<CategoryId, usize>,
    pub architectural_questions: usize,
    pub detail_questions: usize,
    pub questions: usize,
    /// Questions dropped by the cap.
    pub discarded_questions: usize,
    pub diagram_retries: usize,
    /// Revise verdicts on any artifact.
    pub feedback_rounds: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Responses that reported no token usage; counted as zero above.
    pub usage_missing: usize,
    /// Findings on the accepted architecture.
    pub lint_findings: usize,
    pub categorisation_defaults: usize,
    pub answer_mismatches: usize,
    pub failed_blocks: usize,
    pub designer_calls: usize,
    pub emulator_calls: usize,
    /// Filled in by the runner; zero when unknown.
    pub wall_ms: u64,
}

pub fn empty_histogram() -> BTreeMap<CategoryId, usize> {
    CategoryId::ALL.into_iter().map(|c| (c, 0)).collect()
}

/// Pure function of the log; a failed or truncated log still yields
/// metrics.
pub fn collect_metrics(events: &[SessionEvent]) -> Metrics {
    let mut m = Metrics {
        session_id: String::new(),
        status: SessionStatus::Running,
        failure: None,
        block_count: 0,
        category_histogram: empty_histogram(),
        architectural_questions: 0,
        detail_questions: 0,
        questions: 0,
        discarded_questions: 0,
        diagram_retries: 0,
        feedback_rounds: 0,
        prompt_tokens: 0,
        completion_tokens: 0,
        usage_missing: 0,
        lint_findings: 0,
        categorisation_defaults: 0,
        answer_mismatches: 0,
        failed_blocks: 0,
        designer_calls: 0,
        emulator_calls: 0,
        wall_ms: 0,
    };
    for event in events {
        match event {
            SessionEvent::SessionStarted { id, .. } => m.session_id = id.clone(),
            SessionEvent::ModelExchange { caller, response, .. } => {
                match caller {
                    Caller::Designer => m.designer_calls += 1,
                    Caller::Emulator => m.emulator_calls += 1,
                }
                if let Some(response) = response {
                    match response.usage {
                        Some(usage) => {
                            m.prompt_tokens += usage.prompt_tokens;
                            m.completion_tokens += usage.completion_tokens;
                        }
                        None => m.usage_missing += 1,
                    }
                }
            }
            SessionEvent::QuestionsAsked {
                stage,
                questions,
                discarded,
                ..
            } => {
                if *stage == Stage::Architectural {
                    m.architectural_questions += questions.len();
                } else {
                    m.detail_questions += questions.len();
                }
                m.discarded_questions += discarded;
            }
            SessionEvent::AnswerCountMismatch { .. } => m.answer_mismatches += 1,
            SessionEvent::DiagramRejected { .. } => m.diagram_retries += 1,
            SessionEvent::VerdictGiven {
                verdict: FeedbackVerdict::Revise { .. },
                ..
            } => m.feedback_rounds += 1,
            SessionEvent::ArchitectureAccepted { graph, .. } => m.lint_findings = validate(graph).len(),
            SessionEvent::BlocksCategorised { queue, defaulted } => {
                m.block_count = queue.len();
                m.categorisation_defaults = defaulted.len();
                m.category_histogram = empty_histogram();
                for q in queue {
                    *m.category_histogram.entry(q.category).or_default() += 1;
                }
            }
            SessionEvent::BlockFailed { .. } => m.failed_blocks += 1,
            SessionEvent::SessionFailed { reason } => {
                m.status = SessionStatus::Failed;
                m.failure = Some(reason.clone());
            }
            SessionEvent::SessionCompleted => m.status = SessionStatus::Done,
            _ => {}
        }
    }
    m.questions = m.architectural_questions + m.detail_questions;
    m
}
