//! Canned designer/emulator scripts that drive a session end to end with
//! the scripted backend. Used by tests, demos and batch runs without a
//! live model.
//!
//! A script is positional, so it has to match the call sequence exactly:
//! the architecture reply, malformed and rejected diagrams, the accepted
//! diagram, the categorisation reply, each block's question and detail
//! replies, then the summaries. In open mode an emulator reply follows
//! every question round.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::category::CategoryId;
use crate::diagram::{format_label, to_dot, BlockGraph, Edge, Node};
use crate::emulation::EmulationMode;
use crate::flow::FeedbackVerdict;
use crate::llm::{ScriptEntry, Usage};
use crate::testbench::TestbenchId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionRound {
    pub questions: Vec<String>,
    /// Emulator answers, used in open mode only.
    pub answers: Vec<String>,
}

impl QuestionRound {
    pub fn new(pairs: &[(&str, &str)]) -> Self {
        Self {
            questions: pairs.iter().map(|(q, _)| String::from(*q)).collect(),
            answers: pairs.iter().map(|(_, a)| String::from(*a)).collect(),
        }
    }

    pub fn none() -> Self {
        Self {
            questions: Vec::new(),
            answers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPlan {
    pub id: String,
    pub label: String,
    pub multiplicity: u32,
    pub category: CategoryId,
    pub questions: QuestionRound,
    pub detail: String,
    /// Extra detail replies consumed by revise verdicts.
    pub revisions: usize,
}

impl BlockPlan {
    pub fn new(id: &str, label: &str, multiplicity: u32, category: CategoryId, detail: &str) -> Self {
        Self {
            id: String::from(id),
            label: String::from(label),
            multiplicity,
            category,
            questions: QuestionRound::none(),
            detail: String::from(detail),
            revisions: 0,
        }
    }

    pub fn with_questions(mut self, pairs: &[(&str, &str)]) -> Self {
        self.questions = QuestionRound::new(pairs);
        self
    }
}

/// Counts that determine a [`SessionPlan::synthetic`] session.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanShape {
    pub architecture_questions: usize,
    pub malformed_diagrams: usize,
    pub diagram_revisions: usize,
    pub blocks: Vec<BlockShape>,
    pub summary_revisions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockShape {
    pub multiplicity: u32,
    pub category: CategoryId,
    pub questions: usize,
    pub revisions: usize,
}

/// Everything a scripted session will say. `blocks` must be listed in the
/// order the engine details them (topological, ties by label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionPlan {
    pub architecture_questions: QuestionRound,
    pub malformed_diagrams: usize,
    /// Extra diagram replies consumed by revise verdicts.
    pub diagram_revisions: usize,
    pub blocks: Vec<BlockPlan>,
    pub edges: Vec<(String, String)>,
    pub summary: String,
    pub summary_revisions: usize,
}

fn numbered(items: &[String]) -> String {
    crate::prompts::numbered_list(items)
}

impl SessionPlan {
    pub fn graph(&self) -> BlockGraph {
        let nodes = self
            .blocks
            .iter()
            .map(|b| Node::new(b.id.clone(), b.label.clone(), b.multiplicity))
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|(a, b)| Edge::new(a.clone(), b.clone(), false))
            .collect();
        BlockGraph::new(nodes, edges).expect("fixture graphs are well formed")
    }

    pub fn diagram_reply(&self, note: &str) -> String {
        format!(
            "{note}\n\n```dot\n{}```\n\nEach block is explained in the following stages.",
            to_dot(&self.graph()).as_str()
        )
    }

    fn malformed_reply(k: usize) -> String {
        if k.is_multiple_of(2) {
            String::from("Here is the architecture:\n```dot\ndigraph architecture {\n  \"Sensor\" -> \"Amplifier\";\n```")
        } else {
            String::from(
                "Here is the architecture:\n```dot\ndigraph architecture {\n  subgraph cluster_0 { \"Sensor\" -> \"Amplifier\" }\n}\n```",
            )
        }
    }

    /// The categorisation reply naming every block.
    pub fn categorisation_reply(&self) -> String {
        let lines: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("{}: {}", format_label(&b.label, b.multiplicity), b.category.name()))
            .collect();
        lines.join("\n")
    }

    /// Verdicts for a scripted port that consume the revision replies.
    pub fn verdicts(&self) -> Vec<FeedbackVerdict> {
        let revise = |what: &str| FeedbackVerdict::Revise {
            feedback: format!("Please improve the {what}."),
        };
        let mut verdicts = Vec::new();
        for _ in 0..self.diagram_revisions {
            verdicts.push(revise("diagram"));
        }
        verdicts.push(FeedbackVerdict::Accept);
        for block in &self.blocks {
            for _ in 0..block.revisions {
                verdicts.push(revise("detail"));
            }
            verdicts.push(FeedbackVerdict::Accept);
        }
        for _ in 0..self.summary_revisions {
            verdicts.push(revise("summary"));
        }
        verdicts.push(FeedbackVerdict::Accept);
        verdicts
    }

    /// Response texts in call order.
    pub fn responses(&self, mode: EmulationMode) -> Vec<String> {
        let mut out = Vec::new();
        let arch = &self.architecture_questions;
        if !arch.questions.is_empty() {
            out.push(format!(
                "Before proposing an architecture I need a few details:\n{}",
                numbered(&arch.questions)
            ));
            if mode == EmulationMode::Open {
                out.push(numbered(&arch.answers));
            }
        }
        for k in 0..self.malformed_diagrams {
            out.push(Self::malformed_reply(k));
        }
        for k in 0..self.diagram_revisions {
            out.push(self.diagram_reply(&format!("Draft {} of the architecture:", k + 1)));
        }
        out.push(self.diagram_reply("Here is the proposed architecture:"));
        out.push(self.categorisation_reply());
        for block in &self.blocks {
            let name = format_label(&block.label, block.multiplicity);
            if !block.questions.questions.is_empty() {
                out.push(format!(
                    "To detail the {name} I need to know:\n{}",
                    numbered(&block.questions.questions)
                ));
                if mode == EmulationMode::Open {
                    out.push(numbered(&block.questions.answers));
                }
            }
            for k in 0..block.revisions {
                out.push(format!("{} (draft {})", block.detail, k + 1));
            }
            out.push(block.detail.clone());
        }
        for k in 0..self.summary_revisions {
            out.push(format!("{} (draft {})", self.summary, k + 1));
        }
        out.push(self.summary.clone());
        out
    }

    /// Script entries with deterministic token counts.
    pub fn script(&self, mode: EmulationMode) -> Vec<ScriptEntry> {
        self.responses(mode)
            .into_iter()
            .enumerate()
            .map(|(i, response)| {
                let completion = response.split_whitespace().count() as u64;
                ScriptEntry {
                    usage: Some(Usage {
                        prompt_tokens: 100 * (i as u64 + 1),
                        completion_tokens: completion,
                    }),
                    ..ScriptEntry::new(response)
                }
            })
            .collect()
    }

    pub fn script_jsonl(&self, mode: EmulationMode) -> String {
        let mut text = String::new();
        for entry in self.script(mode) {
            text.push_str(&entry.to_line());
            text.push('\n');
        }
        text
    }

    /// A linear session built from counts, for generated tests.
    pub fn synthetic(shape: &PlanShape) -> Self {
        let question_pairs = |prefix: &str, n: usize| -> QuestionRound {
            QuestionRound {
                questions: (1..=n).map(|i| format!("{prefix} question {i}?")).collect(),
                answers: (1..=n).map(|i| format!("{prefix} answer {i}")).collect(),
            }
        };
        let blocks: Vec<BlockPlan> = shape
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| BlockPlan {
                id: format!("b{i}"),
                label: format!("Block {i}"),
                multiplicity: b.multiplicity.max(1),
                category: b.category,
                questions: question_pairs(&format!("Block {i}"), b.questions),
                detail: format!("Detail of block {i}: gain {}.", i + 1),
                revisions: b.revisions,
            })
            .collect();
        Self {
            architecture_questions: question_pairs("Architecture", shape.architecture_questions),
            malformed_diagrams: shape.malformed_diagrams,
            diagram_revisions: shape.diagram_revisions,
            edges: Self::chain(blocks.clone()),
            blocks,
            summary: String::from("Summary of all blocks."),
            summary_revisions: shape.summary_revisions,
        }
    }

    fn chain(blocks: Vec<BlockPlan>) -> Vec<(String, String)> {
        blocks
            .windows(2)
            .map(|w| (w[0].id.clone(), w[1].id.clone()))
            .collect()
    }

    /// A plausible session for one of the reference testbenches.
    pub fn for_testbench(id: TestbenchId) -> Self {
        use CategoryId::*;
        match id {
            TestbenchId::AngularPosition => {
                let blocks = alloc::vec![
                    BlockPlan::new("pot", "Potentiometer", 1, Sensor,
                        "Linear 10 kOhm potentiometer supplied from +/-10 V; output range -10 V to 10 V over the full turn, about 5 V span over 45 to 135 degrees."),
                    BlockPlan::new("buffer", "Buffer", 1, SignalConditioning,
                        "Unity-gain voltage follower (TL072) so the potentiometer is not loaded."),
                    BlockPlan::new("gain", "Amplifier", 1, Amplification,
                        "Inverting amplifier with gain 0.7 (R1 = 10 kOhm, R2 = 7 kOhm) to keep the signal within +/-7 V."),
                    BlockPlan::new("notch", "Notch Filter", 1, Filtering,
                        "Twin-T notch filters at 50 Hz and 60 Hz, second order, Q = 5."),
                    BlockPlan::new("daq", "DAQ", 1, AnalogueDigitalConverter,
                        "Sampling rate 1000 samples per second, 16-bit resolution, successive-approximation topology, input range +/-7 V.")
                        .with_questions(&[("What sampling rate does the DAQ use?", "The sampling rate of the DAQ is 1000 samples per second.")]),
                ];
                Self {
                    architecture_questions: QuestionRound::new(&[
                        ("What is the resistance of the potentiometer?", "The value of the potentiometer is 10 kOhms."),
                        ("Which voltage supplies the potentiometer?", "Between -10 and 10 Volts."),
                        ("What is the maximum input voltage of the DAQ?", "The maximum accepted input voltage for the DAQ is +/- 7 V."),
                    ]),
                    malformed_diagrams: 0,
                    diagram_revisions: 0,
                    edges: Self::chain(blocks.clone()),
                    blocks,
                    summary: String::from(
                        "Summary: potentiometer (10 kOhm, +/-10 V) into a TL072 buffer, gain 0.7, 50/60 Hz notch filters, DAQ at 1000 samples per second.",
                    ),
                    summary_revisions: 0,
                }
            }
            TestbenchId::Thermometry => {
                let blocks = alloc::vec![
                    BlockPlan::new("ntc", "NTC Thermistor", 1, Sensor,
                        "NTC Vishay NTCLE100E3 thermistor, 10 kOhm at 25 C; output range 1.7 kOhm to 32 kOhm over 0 to 70 C."),
                    BlockPlan::new("bridge", "Wheatstone Bridge", 1, SignalConditioning,
                        "Wheatstone bridge with a parallel linearizing resistor on the NTC, excited at 2.5 V.")
                        .with_questions(&[("What excitation voltage is available?", "I don't know")]),
                    BlockPlan::new("inamp", "Instrumentation Amplifier", 1, Amplification,
                        "INA128 instrumentation amplifier, gain 20 set by RG = 2.6 kOhm."),
                    BlockPlan::new("lpf", "Low-pass Filter", 1, Filtering,
                        "Second-order Sallen-Key Butterworth low-pass, cutoff frequency 10 Hz."),
                    BlockPlan::new("adc", "ADC", 1, AnalogueDigitalConverter,
                        "Sampling rate 100 samples per second, 12-bit resolution, sigma-delta topology."),
                ];
                Self {
                    architecture_questions: QuestionRound::new(&[
                        ("Which thermistor should be used?", "The NTC Vishay NTCLE100E3 thermistor."),
                        ("What temperature range must be measured?", "I don't know"),
                    ]),
                    malformed_diagrams: 1,
                    diagram_revisions: 0,
                    edges: Self::chain(blocks.clone()),
                    blocks,
                    summary: String::from(
                        "Summary: NTCLE100E3 in a linearized Wheatstone bridge, INA128 gain 20, 10 Hz Butterworth low-pass, 12-bit ADC at 100 samples per second.",
                    ),
                    summary_revisions: 0,
                }
            }
            TestbenchId::Accelerometry => {
                let blocks = alloc::vec![
                    BlockPlan::new("accel", "Piezoelectric Accelerometer", 1, Sensor,
                        "Piezoelectric accelerometer with sensitivity 100 pC/g; output range +/-5 nC for +/-50 g."),
                    BlockPlan::new("charge", "Charge Amplifier", 1, Amplification,
                        "Charge amplifier with 1 nF feedback capacitor, gain 1 mV/pC, topology inverting integrator.")
                        .with_questions(&[("What acceleration range is expected?", "I don't know")]),
                    BlockPlan::new("aaf", "Anti-aliasing Filter", 1, Filtering,
                        "Fourth-order Butterworth low-pass, cutoff frequency 2 kHz."),
                    BlockPlan::new("adc", "ADC", 1, AnalogueDigitalConverter,
                        "Sampling rate 10000 samples per second, 16-bit resolution, SAR topology."),
                ];
                Self {
                    architecture_questions: QuestionRound::new(&[
                        ("What is the sensitivity of the accelerometer?", "The sensitivity is 100 pC/g."),
                    ]),
                    malformed_diagrams: 0,
                    diagram_revisions: 0,
                    edges: Self::chain(blocks.clone()),
                    blocks,
                    summary: String::from(
                        "Summary: 100 pC/g accelerometer, charge amplifier 1 mV/pC, 2 kHz anti-aliasing filter, 16-bit ADC at 10000 samples per second.",
                    ),
                    summary_revisions: 0,
                }
            }
            TestbenchId::PressureTemperature => {
                let blocks = alloc::vec![
                    BlockPlan::new("sg", "Strain Gauge", 8, Sensor,
                        "Eight 350 Ohm foil strain gauges, gauge factor 2; output range +/-1 mV/V."),
                    BlockPlan::new("tc", "Thermocouple", 8, Sensor,
                        "Eight type K thermocouples; output range 0 to 20 mV."),
                    BlockPlan::new("cjc", "Cold Junction Compensation", 8, OtherConditioning,
                        "Cold junction compensation with an LM35 reference per channel."),
                    BlockPlan::new("tamp", "Thermocouple Amplifier", 8, Amplification,
                        "AD8495 thermocouple amplifiers, gain 122."),
                    BlockPlan::new("bridge", "Wheatstone Bridge", 8, SignalConditioning,
                        "Quarter-bridge Wheatstone configuration per gauge, 5 V excitation."),
                    BlockPlan::new("samp", "Bridge Amplifier", 8, Amplification,
                        "INA333 instrumentation amplifiers, gain 500."),
                    BlockPlan::new("mux", "Multiplexer", 1, OtherConditioning,
                        "16-channel analogue multiplexer (ADG1206)."),
                    BlockPlan::new("daq", "DAQ", 1, AnalogueDigitalConverter,
                        "Sampling rate 1600 samples per second aggregate, 16-bit resolution, SAR topology."),
                ];
                Self {
                    architecture_questions: QuestionRound::new(&[
                        ("How many measurement points are there?", "Eight points of a machine."),
                        ("Which temperature sensor is preferred?", "I don't know"),
                    ]),
                    malformed_diagrams: 0,
                    diagram_revisions: 0,
                    edges: [
                        ("sg", "bridge"),
                        ("bridge", "samp"),
                        ("samp", "mux"),
                        ("tc", "cjc"),
                        ("cjc", "tamp"),
                        ("tamp", "mux"),
                        ("mux", "daq"),
                    ]
                    .iter()
                    .map(|(a, b)| (String::from(*a), String::from(*b)))
                    .collect(),
                    blocks,
                    summary: String::from(
                        "Summary: 8x strain gauge bridges with INA333 gain 500 and 8x type K thermocouples with AD8495, multiplexed into a 16-bit DAQ.",
                    ),
                    summary_revisions: 0,
                }
            }
        }
    }
}
