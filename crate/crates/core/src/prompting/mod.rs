//! Code-generation and caption-QA prompt rendering.
//!
//! Rendering is a pure function of its inputs, so identical inputs give
//! byte-identical prompts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CoordinateFrame, Flavor};
use crate::primitives::CaptionSet;
use crate::proglang::{flavor_primitives, format_float};
use crate::retrieval::{Example, ExampleKind};

const PREAMBLE: &str = include_str!("templates/preamble.txt");
const API_SINGLE: &str = include_str!("templates/api_single.txt");
const API_MULTI: &str = include_str!("templates/api_multi.txt");
const API_EXTENDED: &str = include_str!("templates/api_extended.txt");

const BASE_IMPORTS: &str = "open_images, query, find_matching_image, get_pos";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no in-context examples supplied")]
    NoExamples,
    #[error("no captions supplied")]
    NoCaptions,
    #[error("example {0} is not a {1} example")]
    WrongKind(String, &'static str),
    #[error("completion contains no program")]
    EmptyProgram,
}

/// Instruction, constants, imports and API documentation for one flavor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preamble {
    flavor: Flavor,
    extended: bool,
    template: String,
}

impl Preamble {
    pub fn new(flavor: Flavor, extended: bool) -> Self {
        Preamble::with_template(flavor, extended, PREAMBLE)
    }

    /// A custom template using the `{LEFT}`, `{BOTTOM}`, `{RIGHT}`, `{TOP}`,
    /// `{IMPORTS}` and `{API}` placeholders.
    pub fn with_template(flavor: Flavor, extended: bool, template: impl Into<String>) -> Self {
        Preamble {
            flavor,
            extended,
            template: template.into(),
        }
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    /// One line per documented function.
    pub fn api_doc(&self) -> Vec<&'static str> {
        let base = match self.flavor {
            Flavor::SingleImage => API_SINGLE,
            Flavor::MultiImage => API_MULTI,
        };
        let mut lines: Vec<&str> = base.lines().collect();
        if self.extended {
            lines.extend(API_EXTENDED.lines());
        }
        lines
    }

    /// Names of the visual primitives the API doc describes.
    pub fn documented_primitives(&self) -> Vec<&'static str> {
        let all = flavor_primitives(Flavor::MultiImage, true);
        self.api_doc()
            .into_iter()
            .filter_map(|line| line.split('(').next())
            .filter_map(|name| all.iter().copied().find(|p| *p == name))
            .collect()
    }

    pub fn render(&self, frame: &CoordinateFrame) -> String {
        let mut imports = BASE_IMPORTS.to_string();
        if self.extended {
            imports.push_str(", find_object, knowledge_query");
        }
        self.template
            .replace("{LEFT}", &format_float(frame.left))
            .replace("{BOTTOM}", &format_float(frame.bottom))
            .replace("{RIGHT}", &format_float(frame.right))
            .replace("{TOP}", &format_float(frame.top))
            .replace("{IMPORTS}", &imports)
            .replace("{API}", &self.api_doc().join("\n"))
    }

    fn example_header(&self, n: usize, question: &str) -> String {
        match self.flavor {
            Flavor::SingleImage => format!("# Image {n}: {question}\n"),
            Flavor::MultiImage => format!("# Image Set {n}: {question}\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub example_ids: Vec<String>,
    pub token_estimate: usize,
}

impl RenderedPrompt {
    fn new(text: String, example_ids: Vec<String>) -> Self {
        let token_estimate = text.chars().count().div_ceil(4);
        RenderedPrompt {
            text,
            example_ids,
            token_estimate,
        }
    }
}

/// Preamble, then each example as a question comment followed by its
/// program, then the test question with no program.
pub fn build_code_prompt(
    preamble: &Preamble,
    examples: &[&Example],
    question: &str,
    frame: &CoordinateFrame,
) -> Result<RenderedPrompt, PromptError> {
    let question = single_line(question);
    if question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let mut text = preamble.render(frame);
    let mut ids = Vec::with_capacity(examples.len());
    for (i, e) in examples.iter().enumerate() {
        let ExampleKind::Code { program } = &e.kind else {
            return Err(PromptError::WrongKind(e.id.clone(), "code"));
        };
        text.push_str(&preamble.example_header(i + 1, &single_line(&e.question)));
        text.push_str(program.trim_end());
        text.push('\n');
        ids.push(e.id.clone());
    }
    text.push_str(&preamble.example_header(examples.len() + 1, &question));
    Ok(RenderedPrompt::new(text, ids))
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn caption_block(out: &mut String, captions: &[Vec<String>]) {
    let one = captions.len() == 1;
    for (k, set) in captions.iter().enumerate() {
        if one {
            out.push_str("Image captions:\n");
        } else {
            out.push_str(&format!("Image {} captions:\n", k + 1));
        }
        for c in set {
            out.push_str(&single_line(c));
            out.push('\n');
        }
    }
}

/// QA examples as caption/question/answer blocks, then the test captions
/// and question ending in an answer cue. Blocks are separated by a blank line.
pub fn build_qa_prompt(
    question: &str,
    captions: &[CaptionSet],
    qa_examples: &[&Example],
) -> Result<RenderedPrompt, PromptError> {
    let question = single_line(question);
    if question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    if captions.is_empty() {
        return Err(PromptError::NoCaptions);
    }
    let mut text = String::new();
    let mut ids = Vec::with_capacity(qa_examples.len());
    for e in qa_examples {
        let ExampleKind::Qa { captions, answer } = &e.kind else {
            return Err(PromptError::WrongKind(e.id.clone(), "qa"));
        };
        caption_block(&mut text, captions);
        text.push_str(&format!(
            "Question: {}\nAnswer: {}\n\n",
            single_line(&e.question),
            single_line(answer)
        ));
        ids.push(e.id.clone());
    }
    let sets: Vec<Vec<String>> = captions.iter().map(|c| c.captions.clone()).collect();
    caption_block(&mut text, &sets);
    text.push_str(&format!("Question: {question}\nAnswer:"));
    Ok(RenderedPrompt::new(text, ids))
}

/// Prompt for `knowledge_query`: the bare question with an answer cue.
pub fn build_knowledge_prompt(question: &str) -> Result<String, PromptError> {
    let question = single_line(question);
    if question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    Ok(format!("Question: {question}\nAnswer:"))
}

/// Cuts a completion down to the program it starts with: code fences are
/// removed and everything from the next `# Image` comment on is dropped.
pub fn extract_program(completion: &str) -> Result<String, PromptError> {
    let mut lines: Vec<&str> = completion.lines().collect();
    if lines
        .iter()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with("```"))
    {
        let open = lines
            .iter()
            .position(|l| l.trim_start().starts_with("```"))
            .expect("fence line exists");
        lines.drain(..=open);
        if let Some(close) = lines.iter().position(|l| l.trim_start().starts_with("```")) {
            lines.truncate(close);
        }
    }
    if let Some(cut) = lines.iter().skip(1).position(|l| l.starts_with("# Image")) {
        lines.truncate(cut + 1);
    }
    while lines.first().is_some_and(|l| l.trim().is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(PromptError::EmptyProgram);
    }
    let mut out = lines.join("\n");
    out.push('\n');
    Ok(out)
}
