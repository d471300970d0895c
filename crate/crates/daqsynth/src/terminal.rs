//! Line-oriented client port for an interactive terminal session.
//!
//! Questions are answered one line each; an empty line is an empty answer.
//! Verdicts are `accept` (or `a`), or `revise <feedback>` (or `r ...`);
//! `revise` alone asks for the feedback on the next line. End of input
//! closes the session.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use daqsynth_core::flow::{Artifact, ClientPort, FeedbackVerdict, PortError, Stage};

use crate::render::Renderer;

pub struct TerminalPort<R, W> {
    input: R,
    output: W,
    diagram_dir: Option<PathBuf>,
    renderer: Option<Renderer>,
    proposals: usize,
}

impl<R: BufRead, W: Write> TerminalPort<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self {
            input,
            output,
            diagram_dir: None,
            renderer: None,
            proposals: 0,
        }
    }

    /// Proposed diagrams are written to `dir` as `proposal_<n>.dot` and
    /// their path printed, instead of printing the DOT text.
    pub fn with_diagram_dir(mut self, dir: impl Into<PathBuf>, renderer: Option<Renderer>) -> Self {
        self.diagram_dir = Some(dir.into());
        self.renderer = renderer;
        self
    }

    pub fn into_output(self) -> W {
        self.output
    }

    fn say(&mut self, text: &str) -> Result<(), PortError> {
        writeln!(self.output, "{text}")
            .and_then(|_| self.output.flush())
            .map_err(|e| PortError::Other(e.to_string()))
    }

    fn prompt(&mut self, text: &str) -> Result<String, PortError> {
        write!(self.output, "{text}")
            .and_then(|_| self.output.flush())
            .map_err(|e| PortError::Other(e.to_string()))?;
        let mut line = String::new();
        let n = self
            .input
            .read_line(&mut line)
            .map_err(|e| PortError::Other(e.to_string()))?;
        if n == 0 {
            return Err(PortError::Closed);
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_owned())
    }

    fn show(&mut self, artifact: &Artifact) -> Result<(), PortError> {
        match artifact {
            Artifact::Diagram { dot, findings, .. } => {
                self.proposals += 1;
                match self.diagram_dir.clone() {
                    Some(dir) => {
                        let path = dir.join(format!("proposal_{}.dot", self.proposals));
                        std::fs::create_dir_all(&dir)
                            .and_then(|_| std::fs::write(&path, dot.as_str()))
                            .map_err(|e| PortError::Other(format!("{}: {e}", path.display())))?;
                        self.say(&format!("Proposed architecture written to {}", path.display()))?;
                        let svg = self.renderer.as_ref().and_then(|r| r.svg(dot.as_str()).ok().flatten());
                        if let Some(svg) = svg {
                            let svg_path = path.with_extension("svg");
                            if std::fs::write(&svg_path, svg).is_ok() {
                                self.say(&format!("Rendered diagram: {}", svg_path.display()))?;
                            }
                        }
                    }
                    None => {
                        self.say("Proposed architecture:")?;
                        self.say(dot.as_str())?;
                    }
                }
                for f in findings {
                    self.say(&format!("  lint: {f}"))?;
                }
            }
            Artifact::Detail { label, category, text, .. } => {
                self.say(&format!("Detail for {label} ({}):", category.name()))?;
                self.say(text)?;
            }
            Artifact::Summary { text } => {
                self.say("Summary:")?;
                self.say(text)?;
            }
        }
        Ok(())
    }
}

impl<R: BufRead, W: Write> ClientPort for TerminalPort<R, W> {
    fn answer_questions(
        &mut self,
        stage: Stage,
        block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError> {
        match block {
            Some(b) => self.say(&format!("[{stage}] Questions about {b}:"))?,
            None => self.say(&format!("[{stage}] Questions:"))?,
        }
        let mut answers = Vec::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            self.say(&format!("{}. {q}", i + 1))?;
            answers.push(self.prompt("> ")?.trim().to_owned());
        }
        Ok(answers)
    }

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError> {
        self.show(artifact)?;
        loop {
            let line = self.prompt("accept / revise <feedback>: ")?;
            let line = line.trim();
            let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            match word.to_ascii_lowercase().as_str() {
                "accept" | "a" => return Ok(FeedbackVerdict::Accept),
                "revise" | "r" => {
                    let feedback = if rest.trim().is_empty() {
                        self.prompt("feedback: ")?
                    } else {
                        rest.to_owned()
                    };
                    match FeedbackVerdict::revise(feedback) {
                        Ok(v) => return Ok(v),
                        Err(_) => self.say("Feedback must not be empty.")?,
                    }
                }
                _ => self.say("Type accept, or revise followed by your feedback.")?,
            }
        }
    }
}
