//! Normalized instance and answer data model shared by the loaders, the
//! engine and the evaluator.

use serde::{Deserialize, Serialize};

use crate::error::DataError;

const STATEMENT_PREFIX: &str = "Is it true that ";

/// One question (or rewritten statement) with its images and gold answers.
///
/// Construct through [`VqaInstance::new`] or deserialization; both enforce
/// non-empty `image_refs` and `gold_answers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct VqaInstance {
    id: String,
    text: String,
    is_statement: bool,
    image_refs: Vec<String>,
    gold_answers: Vec<String>,
    dataset: String,
    question_type: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawInstance {
    id: String,
    text: String,
    #[serde(default)]
    is_statement: bool,
    image_refs: Vec<String>,
    gold_answers: Vec<String>,
    dataset: String,
    #[serde(default)]
    question_type: Option<String>,
}

impl TryFrom<RawInstance> for VqaInstance {
    type Error = DataError;

    fn try_from(raw: RawInstance) -> Result<Self, Self::Error> {
        VqaInstance::new(
            raw.id,
            raw.text,
            raw.is_statement,
            raw.image_refs,
            raw.gold_answers,
            raw.dataset,
            raw.question_type,
        )
    }
}

impl From<VqaInstance> for RawInstance {
    fn from(v: VqaInstance) -> Self {
        RawInstance {
            id: v.id,
            text: v.text,
            is_statement: v.is_statement,
            image_refs: v.image_refs,
            gold_answers: v.gold_answers,
            dataset: v.dataset,
            question_type: v.question_type,
        }
    }
}

impl VqaInstance {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        is_statement: bool,
        image_refs: Vec<String>,
        gold_answers: Vec<String>,
        dataset: impl Into<String>,
        question_type: Option<String>,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if image_refs.is_empty() {
            return Err(DataError::Invalid(format!(
                "instance {id}: image_refs is empty"
            )));
        }
        if gold_answers.is_empty() {
            return Err(DataError::Invalid(format!(
                "instance {id}: gold_answers is empty"
            )));
        }
        Ok(VqaInstance {
            id,
            text: text.into(),
            is_statement,
            image_refs,
            gold_answers,
            dataset: dataset.into(),
            question_type,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn is_statement(&self) -> bool {
        self.is_statement
    }

    pub fn image_refs(&self) -> &[String] {
        &self.image_refs
    }

    pub fn gold_answers(&self) -> &[String] {
        &self.gold_answers
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn question_type(&self) -> Option<&str> {
        self.question_type.as_deref()
    }

    pub fn num_images(&self) -> usize {
        self.image_refs.len()
    }

    /// Serializes to one line of the normalized JSONL format.
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("instance serialization is infallible")
    }
}

/// The engine's answer for one instance, linked to its persisted trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub instance_id: String,
    pub predicted: String,
    pub used_fallback: bool,
    pub trace_ref: String,
}

/// Rewrites a true/false statement as a yes/no question.
///
/// Already-converted text is returned unchanged, so the function is idempotent.
pub fn statement_to_question(text: &str) -> String {
    if text.starts_with(STATEMENT_PREFIX) {
        return text.to_string();
    }
    let body = text.trim();
    let body = body.strip_suffix('.').unwrap_or(body).trim_end();
    let body = body.strip_suffix('?').unwrap_or(body);
    let mut chars = body.chars();
    let lowered: String = match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    };
    format!("{STATEMENT_PREFIX}{lowered}?")
}

/// Maps boolean gold labels to the yes/no answer vocabulary.
pub fn normalize_bool_answer(gold: &str) -> String {
    if gold.eq_ignore_ascii_case("true") {
        "yes".to_string()
    } else if gold.eq_ignore_ascii_case("false") {
        "no".to_string()
    } else {
        gold.to_string()
    }
}
