//! Deterministic vision and QA backend answering from synthetic scene graphs.
//!
//! Captions start with `<image_ref> view <n>:` so the QA side can tell which
//! scenes a prompt's captions describe. Questions are answered by a fixed set
//! of rules over the scene graph; anything else is an unsupported template.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{hash_embedding, words};
use super::scripted::final_qa_question;
use super::*;
use crate::error::DataError;

pub const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "black", "white", "pink", "brown", "gray", "orange",
    "purple", "silver",
];

const ARTICLES: &[&str] = &["a", "an", "the", "any", "some"];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "any", "some", "is", "are", "there", "of", "in", "on", "with", "and", "or",
    "to", "image", "images", "that", "this", "what", "which", "how", "many", "does", "do",
];

const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    /// `[row, col]` on the backend's patch grid, row 0 at the top.
    pub grid_cell: [usize; 2],
    #[serde(default)]
    pub relations: Vec<(String, usize)>,
    /// Detection confidence reported by `detect`; defaults to 0.9.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl SceneObject {
    pub fn new(name: &str, attributes: &[&str], row: usize, col: usize) -> Self {
        SceneObject {
            name: name.into(),
            attributes: attributes.iter().map(|a| a.to_string()).collect(),
            grid_cell: [row, col],
            relations: Vec::new(),
            score: None,
        }
    }

    pub fn color(&self) -> Option<&str> {
        self.attributes
            .iter()
            .map(String::as_str)
            .find(|a| COLORS.contains(a))
    }

    fn matches(&self, phrase: &NounPhrase) -> bool {
        name_matches(&self.name, &phrase.name)
            && phrase
                .attributes
                .iter()
                .all(|a| self.attributes.contains(a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraph {
    pub image_ref: String,
    pub objects: Vec<SceneObject>,
}

impl SceneGraph {
    pub fn validate(&self, grid_w: usize, grid_h: usize) -> Result<(), String> {
        for (i, o) in self.objects.iter().enumerate() {
            let [row, col] = o.grid_cell;
            if row >= grid_h || col >= grid_w {
                return Err(format!(
                    "{}: object {i} cell ({row}, {col}) outside the {grid_h}x{grid_w} grid",
                    self.image_ref
                ));
            }
            if let Some((p, t)) = o.relations.iter().find(|(_, t)| *t >= self.objects.len()) {
                return Err(format!(
                    "{}: object {i} relation {p:?} targets missing object {t}",
                    self.image_ref
                ));
            }
            if o.score.is_some_and(|s| !(0.0..=1.0).contains(&s)) {
                return Err(format!(
                    "{}: object {i} score outside [0, 1]",
                    self.image_ref
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Format {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Every `*.json` file in `dir`, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Self>, DataError> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| DataError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(SceneGraph::load).collect()
    }

    fn matching<'a>(
        &'a self,
        phrase: &'a NounPhrase,
    ) -> impl Iterator<Item = &'a SceneObject> + 'a {
        self.objects.iter().filter(move |o| o.matches(phrase))
    }

    fn count(&self, phrase: &NounPhrase) -> usize {
        self.matching(phrase).count()
    }

    fn first(&self, phrase: &NounPhrase) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.matches(phrase))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("unsupported question template: {0:?}")]
    UnsupportedTemplate(String),
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
}

pub fn plural(name: &str) -> String {
    if ["s", "x", "ch", "sh"].iter().any(|s| name.ends_with(s)) {
        format!("{name}es")
    } else {
        format!("{name}s")
    }
}

fn name_matches(name: &str, word: &str) -> bool {
    word == name || word == plural(name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NounPhrase {
    attributes: Vec<String>,
    name: String,
}

fn phrase(words: &[&str]) -> Option<NounPhrase> {
    let content: Vec<&str> = words
        .iter()
        .copied()
        .filter(|w| !ARTICLES.contains(w))
        .collect();
    let (name, attributes) = content.split_last()?;
    Some(NounPhrase {
        attributes: attributes.iter().map(|a| a.to_string()).collect(),
        name: name.to_string(),
    })
}

fn number(word: &str) -> Option<usize> {
    word.parse()
        .ok()
        .or_else(|| NUMBER_WORDS.iter().position(|w| *w == word))
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

fn normalize(question: &str) -> Vec<String> {
    question
        .to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn split_on<'a>(words: &'a [&'a str], sep: &str) -> Option<(&'a [&'a str], &'a [&'a str])> {
    let i = words.iter().position(|w| *w == sep)?;
    Some((&words[..i], &words[i + 1..]))
}

/// Answers a question about one scene.
pub fn answer_scene(scene: &SceneGraph, question: &str) -> Result<String, OracleError> {
    let owned = normalize(question);
    let w: Vec<&str> = owned.iter().map(String::as_str).collect();
    let unsupported = || OracleError::UnsupportedTemplate(question.to_string());
    let np = |ws: &[&str]| phrase(ws).ok_or_else(unsupported);

    match w.as_slice() {
        ["is", "there", rest @ ..] | ["are", "there", rest @ ..] => {
            if rest.first() == Some(&"exactly") {
                let k = rest
                    .get(1)
                    .and_then(|x| number(x))
                    .ok_or_else(unsupported)?;
                return Ok(yes_no(scene.count(&np(&rest[2..])?) == k));
            }
            if let Some((a, b)) = split_on(rest, "and") {
                return Ok(yes_no(scene.count(&np(a)?) > 0 && scene.count(&np(b)?) > 0));
            }
            if let Some((a, b)) = split_on(rest, "or") {
                return Ok(yes_no(scene.count(&np(a)?) > 0 || scene.count(&np(b)?) > 0));
            }
            Ok(yes_no(scene.count(&np(rest)?) > 0))
        }
        ["what", "color", "is", rest @ ..] | ["what", "color", "are", rest @ ..] => scene
            .first(&np(rest)?)
            .and_then(SceneObject::color)
            .map(str::to_string)
            .ok_or_else(unsupported),
        ["how", "many", rest @ .., "are", "there"] => Ok(scene.count(&np(rest)?).to_string()),
        ["is", rest @ ..] | ["are", rest @ ..] if spatial_split(rest).is_some() => {
            let (a, rel, b) = spatial_split(rest).expect("checked by guard");
            let (Some(x), Some(y)) = (scene.first(&np(a)?), scene.first(&np(b)?)) else {
                return Ok(yes_no(false));
            };
            Ok(yes_no(rel.holds(x.grid_cell, y.grid_cell)))
        }
        ["is", "the", rest @ ..] | ["are", "the", rest @ ..] if rest.len() >= 2 => {
            let (attr, subject) = rest.split_last().expect("guarded length");
            Ok(yes_no(
                scene
                    .first(&np(subject)?)
                    .is_some_and(|o| o.attributes.iter().any(|a| a == attr)),
            ))
        }
        ["does", rest @ ..] | ["do", rest @ ..] => {
            let (subject, attrs) = split_on(rest, "look").ok_or_else(unsupported)?;
            let wanted: Vec<&str> = attrs.iter().copied().filter(|a| *a != "and").collect();
            if wanted.is_empty() {
                return Err(unsupported());
            }
            Ok(yes_no(scene.first(&np(subject)?).is_some_and(|o| {
                wanted.iter().all(|a| o.attributes.iter().any(|x| x == a))
            })))
        }
        _ => Err(unsupported()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spatial {
    Left,
    Right,
    Above,
    Below,
}

impl Spatial {
    /// Relation of a cell `a` to a cell `b`, both `[row, col]`.
    pub fn holds(self, a: [usize; 2], b: [usize; 2]) -> bool {
        match self {
            Spatial::Left => a[1] < b[1],
            Spatial::Right => a[1] > b[1],
            Spatial::Above => a[0] < b[0],
            Spatial::Below => a[0] > b[0],
        }
    }
}

fn spatial_split<'a>(w: &'a [&'a str]) -> Option<(&'a [&'a str], Spatial, &'a [&'a str])> {
    for i in 0..w.len() {
        let tail = &w[i..];
        let (rel, skip) = match tail {
            ["to", "the", "left", "of", ..] => (Spatial::Left, 4),
            ["to", "the", "right", "of", ..] => (Spatial::Right, 4),
            ["above", ..] => (Spatial::Above, 1),
            ["below", ..] => (Spatial::Below, 1),
            _ => continue,
        };
        return Some((&w[..i], rel, &w[i + skip..]));
    }
    None
}

/// Answers a question about a set of scenes, falling back to the
/// single-scene rules when the set has one member.
pub fn answer_set(scenes: &[&SceneGraph], question: &str) -> Result<String, OracleError> {
    let owned = normalize(question);
    let w: Vec<&str> = owned.iter().map(String::as_str).collect();
    let unsupported = || OracleError::UnsupportedTemplate(question.to_string());
    let np = |ws: &[&str]| phrase(ws).ok_or_else(unsupported);
    let contains = |s: &SceneGraph, ws: &[&str]| -> Result<bool, OracleError> {
        match ws {
            ["exactly", n, rest @ ..] => {
                let k = number(n).ok_or_else(unsupported)?;
                Ok(s.count(&np(rest)?) == k)
            }
            _ => Ok(s.count(&np(ws)?) > 0),
        }
    };

    match w.as_slice() {
        ["how", "many", "images", "contain", rest @ ..] => {
            let mut n = 0;
            for s in scenes {
                n += usize::from(contains(s, rest)?);
            }
            Ok(n.to_string())
        }
        ["does", "every", "image", "contain", rest @ ..]
        | ["do", "all", "images", "contain", rest @ ..] => {
            let mut all = true;
            for s in scenes {
                all &= contains(s, rest)?;
            }
            Ok(yes_no(all))
        }
        ["how", "many", rest @ .., "are", "there", "in", "total"] => {
            let p = np(rest)?;
            Ok(scenes
                .iter()
                .map(|s| s.count(&p))
                .sum::<usize>()
                .to_string())
        }
        ["in", "the", "image", "with", rest @ ..] => {
            let (anchor, tail) = split_on(rest, "what").ok_or_else(unsupported)?;
            let anchor = np(anchor)?;
            let scene = scenes
                .iter()
                .find(|s| s.count(&anchor) > 0)
                .ok_or_else(unsupported)?;
            let mut inner = vec!["what"];
            inner.extend_from_slice(tail);
            answer_scene(scene, &inner.join(" "))
        }
        _ if scenes.len() == 1 => answer_scene(scenes[0], question),
        _ => Err(unsupported()),
    }
}

/// Image references named by the caption lines of the final prompt block.
pub fn caption_refs(block: &str) -> Vec<String> {
    let mut refs: Vec<String> = Vec::new();
    for line in block.lines() {
        if let Some((r, _)) = line.split_once(" view ") {
            if !r.contains(' ') && !refs.iter().any(|x| x == r) {
                refs.push(r.to_string());
            }
        }
    }
    refs
}

pub struct OracleBackend {
    scenes: BTreeMap<String, SceneGraph>,
    info: DescribeResponse,
    default_score: f64,
}

impl OracleBackend {
    pub fn new(scenes: Vec<SceneGraph>) -> Result<Self, String> {
        OracleBackend::with_grid(scenes, 24, 24)
    }

    pub fn with_grid(
        scenes: Vec<SceneGraph>,
        grid_w: usize,
        grid_h: usize,
    ) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for s in scenes {
            s.validate(grid_w, grid_h)?;
            if map.insert(s.image_ref.clone(), s).is_some() {
                return Err("duplicate scene image_ref".into());
            }
        }
        Ok(OracleBackend {
            scenes: map,
            info: DescribeResponse {
                grid_w,
                grid_h,
                embed_dim: 64,
                special_tokens: SpecialTokens {
                    leading: 1,
                    trailing: 0,
                },
                captions_per_round: 1,
            },
            default_score: 0.9,
        })
    }

    pub fn scene(&self, image_ref: &str) -> Result<&SceneGraph, BackendError> {
        self.scenes.get(image_ref).ok_or_else(|| {
            BackendError::remote(
                "scene",
                OracleError::UnknownScene(image_ref.into()).to_string(),
            )
        })
    }

    /// Answers the final block of a caption-QA prompt.
    pub fn answer_prompt(&self, prompt: &str) -> Result<String, BackendError> {
        let block = prompt.rsplit("\n\n").next().unwrap_or(prompt);
        let question = final_qa_question(block)
            .ok_or_else(|| BackendError::remote("complete", "prompt has no question"))?;
        let refs = caption_refs(block);
        if refs.is_empty() {
            return Err(BackendError::remote(
                "complete",
                "prompt has no oracle captions",
            ));
        }
        let scenes = refs
            .iter()
            .map(|r| self.scene(r))
            .collect::<Result<Vec<_>, _>>()?;
        answer_set(&scenes, question).map_err(|e| BackendError::remote("complete", e.to_string()))
    }
}

impl Backend for OracleBackend {
    fn describe(&self) -> Result<DescribeResponse, BackendError> {
        Ok(self.info.clone())
    }

    fn complete(&self, req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
        if !req.prompt.trim_end().ends_with("Answer:") {
            return Err(BackendError::remote(
                "complete",
                "the oracle only answers caption-QA prompts",
            ));
        }
        Ok(CompleteResponse {
            text: self.answer_prompt(&req.prompt)?,
        })
    }

    fn attention_with_grad(
        &self,
        req: &AttentionRequest,
    ) -> Result<AttentionResponse, BackendError> {
        let scene = self.scene(&req.image_ref)?;
        let width = self.info.grid_w * self.info.grid_h;
        let uniform = 1.0 / width as f64;
        let mut tokens = vec!["[CLS]".to_string()];
        let mut attention = vec![vec![uniform; width]];
        let mut gradient = vec![vec![1.0; width]];
        for word in words(&req.text) {
            let mut c = vec![0.0; width];
            let mut g = vec![0.0; width];
            let mut hit = false;
            for o in scene
                .objects
                .iter()
                .filter(|o| name_matches(&o.name, &word))
            {
                let j = o.grid_cell[0] * self.info.grid_w + o.grid_cell[1];
                c[j] = if hit { f64::max(c[j], 0.5) } else { 1.0 };
                g[j] = 1.0;
                hit = true;
            }
            if !hit {
                c = vec![uniform; width];
                g = vec![-1.0; width];
            }
            tokens.push(word);
            attention.push(c);
            gradient.push(g);
        }
        Ok(AttentionResponse {
            tokens,
            attention,
            gradient,
        })
    }

    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        let scene = self.scene(&req.image_ref)?;
        let mut seen = Vec::new();
        for &p in &req.patches {
            let cell = [p / self.info.grid_w, p % self.info.grid_w];
            for (i, o) in scene.objects.iter().enumerate() {
                if o.grid_cell == cell && !seen.contains(&i) {
                    seen.push(i);
                }
            }
        }
        seen.sort_unstable();
        let desc = if seen.is_empty() {
            "an empty area".to_string()
        } else {
            seen.iter()
                .map(|&i| {
                    let o = &scene.objects[i];
                    let mut parts = vec!["a".to_string()];
                    parts.extend(o.attributes.iter().cloned());
                    parts.push(o.name.clone());
                    parts.join(" ")
                })
                .collect::<Vec<_>>()
                .join(" and ")
        };
        Ok(CaptionResponse {
            caption: format!("{} view {}: {desc}", req.image_ref, req.rng_token % 10_000),
        })
    }

    fn itc_score(&self, req: &ItcRequest) -> Result<ItcResponse, BackendError> {
        let scene = self.scene(&req.image_ref)?;
        let mut vocab: Vec<String> = Vec::new();
        for o in &scene.objects {
            vocab.push(o.name.clone());
            vocab.push(plural(&o.name));
            vocab.extend(o.attributes.iter().cloned());
            vocab.extend(o.relations.iter().flat_map(|(p, _)| words(p)));
        }
        let content: Vec<String> = words(&req.text)
            .into_iter()
            .filter(|w| !STOPWORDS.contains(&w.as_str()))
            .collect();
        let score = if content.is_empty() {
            0.0
        } else {
            content.iter().filter(|w| vocab.contains(w)).count() as f64 / content.len() as f64
        };
        Ok(ItcResponse { score })
    }

    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, BackendError> {
        let scene = self.scene(&req.image_ref)?;
        let ws = words(&req.text);
        let refs: Vec<&str> = ws.iter().map(String::as_str).collect();
        let Some(p) = phrase(&refs) else {
            return Ok(DetectResponse { detections: vec![] });
        };
        let (gw, gh) = (self.info.grid_w as f64, self.info.grid_h as f64);
        let detections = scene
            .matching(&p)
            .map(|o| {
                let [row, col] = o.grid_cell;
                WireDetection {
                    label: o.name.clone(),
                    bbox: [
                        col as f64 / gw,
                        row as f64 / gh,
                        (col + 1) as f64 / gw,
                        (row + 1) as f64 / gh,
                    ],
                    score: o.score.unwrap_or(self.default_score),
                }
            })
            .collect();
        Ok(DetectResponse { detections })
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        Ok(EmbedResponse {
            embedding: hash_embedding(&req.text, self.info.embed_dim),
        })
    }

    fn name(&self) -> String {
        "scene-oracle".into()
    }
}
