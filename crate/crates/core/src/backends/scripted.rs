//! Table-driven language model for offline runs.
//!
//! Code prompts are keyed by their final `# Image ..: <question>` line and
//! caption-QA prompts by their final `Question: <question>` line.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::*;
use crate::error::DataError;

/// Script file contents: question text to program, and question text to
/// direct answer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptTable {
    pub programs: BTreeMap<String, String>,
    pub answers: BTreeMap<String, String>,
}

impl ScriptTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Format {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedLm {
    table: ScriptTable,
    default_program: bool,
    default_answer: Option<String>,
}

impl Default for ScriptedLm {
    fn default() -> Self {
        ScriptedLm::new()
    }
}

/// Program that sends the whole question to `query` on the first image.
pub fn query_only_program(question: &str) -> String {
    let escaped = question.replace('\\', "\\\\").replace('"', "\\\"");
    format!("img = open_image(\"Image1.jpg\")\nanswer = query(img, \"{escaped}\")\n")
}

impl ScriptedLm {
    /// Empty table; unmapped code prompts get [`query_only_program`].
    pub fn new() -> Self {
        ScriptedLm::from_table(ScriptTable::default())
    }

    pub fn from_table(table: ScriptTable) -> Self {
        ScriptedLm {
            table,
            default_program: true,
            default_answer: None,
        }
    }

    pub fn with_program(mut self, question: &str, program: &str) -> Self {
        self.table.programs.insert(question.into(), program.into());
        self
    }

    pub fn with_answer(mut self, question: &str, answer: &str) -> Self {
        self.table.answers.insert(question.into(), answer.into());
        self
    }

    /// Whether unmapped code prompts get the query-only program (`true`)
    /// or a remote error.
    pub fn default_program(mut self, enabled: bool) -> Self {
        self.default_program = enabled;
        self
    }

    /// Reply for unmapped QA prompts; without one they are remote errors.
    pub fn default_answer(mut self, answer: Option<String>) -> Self {
        self.default_answer = answer;
        self
    }

    pub fn table(&self) -> &ScriptTable {
        &self.table
    }
}

/// The question of the last `# Image N:` / `# Image Set N:` comment.
pub fn final_code_question(prompt: &str) -> Option<&str> {
    let line = prompt.lines().rev().find(|l| l.starts_with("# Image"))?;
    line.split_once(": ").map(|(_, q)| q.trim())
}

/// The question of the last `Question:` line.
pub fn final_qa_question(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Question:"))
        .map(str::trim)
}

impl Backend for ScriptedLm {
    fn describe(&self) -> Result<DescribeResponse, BackendError> {
        Ok(DescribeResponse {
            grid_w: 1,
            grid_h: 1,
            embed_dim: 1,
            special_tokens: SpecialTokens::default(),
            captions_per_round: 1,
        })
    }

    fn complete(&self, req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
        if req.prompt.trim_end().ends_with("Answer:") {
            let question = final_qa_question(&req.prompt)
                .ok_or_else(|| BackendError::remote("complete", "prompt has no question line"))?;
            let answer = self
                .table
                .answers
                .get(question)
                .cloned()
                .or_else(|| self.default_answer.clone())
                .ok_or_else(|| {
                    BackendError::remote("complete", format!("no scripted answer for {question:?}"))
                })?;
            return Ok(CompleteResponse { text: answer });
        }
        let question = final_code_question(&req.prompt)
            .ok_or_else(|| BackendError::remote("complete", "prompt has no question comment"))?;
        match self.table.programs.get(question) {
            Some(program) => Ok(CompleteResponse {
                text: program.clone(),
            }),
            None if self.default_program => Ok(CompleteResponse {
                text: query_only_program(question),
            }),
            None => Err(BackendError::remote(
                "complete",
                format!("no scripted program for {question:?}"),
            )),
        }
    }

    fn name(&self) -> String {
        "scripted-lm".into()
    }
}
