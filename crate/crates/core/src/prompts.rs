//! Prompt templates: the designer persona, stage prompts and the nine
//! category-specific detailing prompts.
//!
//! Template bodies are plain text files with `{placeholder}` slots. The
//! built-in pack is compiled in from `templates/`; a pack with the same
//! layout can be loaded at runtime to tune wording without a rebuild.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::category::CategoryId;
use crate::llm::ChatMessage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template {template:?}: no binding for placeholder {placeholder:?}")]
    MissingBinding { template: String, placeholder: String },
    #[error("template {template:?}: required placeholder {placeholder:?} does not appear in the body")]
    PlaceholderNotInBody { template: String, placeholder: String },
    #[error("template pack has no template {0:?}")]
    MissingTemplate(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    body: String,
    required: BTreeSet<String>,
}

/// Iterates `(start, end, name)` for every `{identifier}` slot in `body`.
fn slots(body: &str) -> impl Iterator<Item = (usize, usize, &str)> + '_ {
    let mut from = 0;
    core::iter::from_fn(move || loop {
        let open = from + body[from..].find('{')?;
        let rest = &body[open + 1..];
        let name_len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if name_len > 0 && rest[name_len..].starts_with('}') {
            let end = open + 1 + name_len + 1;
            from = end;
            return Some((open, end, &rest[..name_len]));
        }
        from = open + 1;
    })
}

impl PromptTemplate {
    pub fn new<I, S>(id: impl Into<String>, body: impl Into<String>, required: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let id = id.into();
        let body = body.into();
        let required: BTreeSet<String> = required.into_iter().map(Into::into).collect();
        let present: BTreeSet<&str> = slots(&body).map(|(_, _, name)| name).collect();
        if let Some(missing) = required.iter().find(|r| !present.contains(r.as_str())) {
            return Err(PromptError::PlaceholderNotInBody {
                template: id,
                placeholder: missing.clone(),
            });
        }
        Ok(Self { id, body, required })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Single-pass substitution: bound values are inserted literally and
    /// never re-scanned for slots.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
        if let Some(missing) = self.required.iter().find(|r| !bindings.contains_key(r.as_str())) {
            return Err(self.missing(missing));
        }
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for (start, end, name) in slots(&self.body) {
            let value = bindings.get(name).ok_or_else(|| self.missing(name))?;
            out.push_str(&self.body[last..start]);
            out.push_str(value);
            last = end;
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }

    fn missing(&self, placeholder: &str) -> PromptError {
        PromptError::MissingBinding {
            template: self.id.clone(),
            placeholder: placeholder.to_string(),
        }
    }
}

/// Template ids every pack must provide.
pub const TEMPLATE_IDS: &[&str] = &[
    "persona",
    "architecture",
    "architecture_answers",
    "diagram_retry",
    "diagram_revision",
    "categorisation",
    "category_sensor",
    "category_signal_conditioning",
    "category_amplification",
    "category_filtering",
    "category_other_conditioning",
    "category_direct_measurement",
    "category_analogue_digital_converter",
    "category_digital_processing",
    "category_others",
    "detail_answers",
    "detail_retry",
    "detail_revision",
    "revision",
    "summary_revision",
    "emulator_system",
    "emulator_questions",
];

pub const BUILTIN_MANIFEST: &str = include_str!("../templates/manifest.txt");

fn builtin_body(id: &str) -> Option<&'static str> {
    Some(match id {
        "persona" => include_str!("../templates/persona.txt"),
        "architecture" => include_str!("../templates/architecture.txt"),
        "architecture_answers" => include_str!("../templates/architecture_answers.txt"),
        "diagram_retry" => include_str!("../templates/diagram_retry.txt"),
        "diagram_revision" => include_str!("../templates/diagram_revision.txt"),
        "categorisation" => include_str!("../templates/categorisation.txt"),
        "category_sensor" => include_str!("../templates/category_sensor.txt"),
        "category_signal_conditioning" => include_str!("../templates/category_signal_conditioning.txt"),
        "category_amplification" => include_str!("../templates/category_amplification.txt"),
        "category_filtering" => include_str!("../templates/category_filtering.txt"),
        "category_other_conditioning" => include_str!("../templates/category_other_conditioning.txt"),
        "category_direct_measurement" => include_str!("../templates/category_direct_measurement.txt"),
        "category_analogue_digital_converter" => {
            include_str!("../templates/category_analogue_digital_converter.txt")
        }
        "category_digital_processing" => include_str!("../templates/category_digital_processing.txt"),
        "category_others" => include_str!("../templates/category_others.txt"),
        "detail_answers" => include_str!("../templates/detail_answers.txt"),
        "detail_retry" => include_str!("../templates/detail_retry.txt"),
        "detail_revision" => include_str!("../templates/detail_revision.txt"),
        "revision" => include_str!("../templates/revision.txt"),
        "summary_revision" => include_str!("../templates/summary_revision.txt"),
        "emulator_system" => include_str!("../templates/emulator_system.txt"),
        "emulator_questions" => include_str!("../templates/emulator_questions.txt"),
        _ => return None,
    })
}

/// Parses `id = a, b` manifest lines. Blank lines, `#` comments and the
/// `version` key are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, Vec<String>)>, PromptError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| PromptError::Manifest {
            line: i + 1,
            message: format!("expected `id = placeholders`, got {line:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(PromptError::Manifest {
                line: i + 1,
                message: "empty template id".into(),
            });
        }
        if key == "version" {
            continue;
        }
        let placeholders = value
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(String::from)
            .collect();
        entries.push((String::from(key), placeholders));
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        Self::from_pack(BUILTIN_MANIFEST, |id| builtin_body(id).map(String::from))
            .expect("built-in template pack is valid")
    }

    /// Builds a catalog from a manifest and a body lookup. Every id in
    /// [`TEMPLATE_IDS`] must be present.
    pub fn from_pack(
        manifest: &str,
        mut body: impl FnMut(&str) -> Option<String>,
    ) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for (id, placeholders) in parse_manifest(manifest)? {
            let text = body(&id).ok_or_else(|| PromptError::MissingTemplate(id.clone()))?;
            let text = text.trim_end_matches(['\n', '\r']);
            let template = PromptTemplate::new(id.clone(), text, placeholders)?;
            templates.insert(id, template);
        }
        if let Some(missing) = TEMPLATE_IDS.iter().find(|id| !templates.contains_key(**id)) {
            return Err(PromptError::MissingTemplate(String::from(*missing)));
        }
        Ok(Self { templates })
    }

    pub fn template(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::MissingTemplate(String::from(id)))
    }

    fn render_one(&self, id: &str, key: &str, value: &str) -> Result<String, PromptError> {
        let mut bindings = BTreeMap::new();
        bindings.insert(key, value);
        self.template(id)?.render(&bindings)
    }

    pub fn persona(&self) -> Result<String, PromptError> {
        self.template("persona")?.render(&BTreeMap::new())
    }

    /// Persona plus the opening user message of a session.
    pub fn architecture_prompt(&self, description: &str) -> Result<Vec<ChatMessage>, PromptError> {
        if description.trim().is_empty() {
            return Err(PromptError::EmptyInput("project description"));
        }
        Ok(alloc::vec![
            ChatMessage::system(self.persona()?),
            ChatMessage::user(self.render_one("architecture", "description", description)?),
        ])
    }

    pub fn category_prompt(&self, category: CategoryId, block_name: &str) -> Result<String, PromptError> {
        if block_name.trim().is_empty() {
            return Err(PromptError::EmptyInput("block name"));
        }
        self.render_one(&format!("category_{}", category.slug()), "block", block_name)
    }

    pub fn categorisation_prompt(&self, block_names: &[String]) -> Result<String, PromptError> {
        if block_names.is_empty() {
            return Err(PromptError::EmptyInput("block list"));
        }
        let categories = bullet_list(CategoryId::ALL.iter().map(|c| c.name()));
        let blocks = bullet_list(block_names.iter().map(String::as_str));
        let mut bindings = BTreeMap::new();
        bindings.insert("categories", categories.as_str());
        bindings.insert("blocks", blocks.as_str());
        self.template("categorisation")?.render(&bindings)
    }

    pub fn revision_prompt(&self, details: &[String]) -> Result<String, PromptError> {
        if details.is_empty() {
            return Err(PromptError::EmptyInput("block details"));
        }
        self.render_one("revision", "details", &details.join("\n\n"))
    }

    pub fn architecture_answers(&self, questions: &[String], answers: &[String]) -> Result<String, PromptError> {
        self.render_one("architecture_answers", "answers", &answer_list(questions, answers))
    }

    pub fn detail_answers(&self, questions: &[String], answers: &[String]) -> Result<String, PromptError> {
        self.render_one("detail_answers", "answers", &answer_list(questions, answers))
    }

    pub fn diagram_retry(&self, error: &str) -> Result<String, PromptError> {
        self.render_one("diagram_retry", "error", error)
    }

    pub fn diagram_revision(&self, feedback: &str) -> Result<String, PromptError> {
        self.render_one("diagram_revision", "feedback", feedback)
    }

    pub fn detail_retry(&self) -> Result<String, PromptError> {
        self.template("detail_retry")?.render(&BTreeMap::new())
    }

    pub fn detail_revision(&self, feedback: &str) -> Result<String, PromptError> {
        self.render_one("detail_revision", "feedback", feedback)
    }

    pub fn summary_revision(&self, feedback: &str) -> Result<String, PromptError> {
        self.render_one("summary_revision", "feedback", feedback)
    }

    pub fn emulator_system(&self, requirements: &[String]) -> Result<String, PromptError> {
        self.render_one("emulator_system", "requirements", &requirements.join("\n"))
    }

    pub fn emulator_questions(&self, questions: &[String]) -> Result<String, PromptError> {
        self.render_one("emulator_questions", "questions", &numbered_list(questions))
    }
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

fn bullet_list<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
}

pub fn numbered_list(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn answer_list(questions: &[String], answers: &[String]) -> String {
    if questions.is_empty() {
        return String::from("(no questions were asked)");
    }
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let answer = answers.get(i).map(String::as_str).unwrap_or("");
            format!("{}. {q}\n   Answer: {answer}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}
