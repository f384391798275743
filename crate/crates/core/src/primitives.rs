//! Visual primitives callable from generated programs, implemented on top of
//! the model backends.
//!
//! `query` runs the caption-QA procedure: a question-conditioned relevance
//! map picks image patches, captions of those patches are collected until
//! enough distinct ones exist, and a language model answers from the
//! captions plus retrieved QA examples.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    AttentionRequest, Backend, BackendError, CaptionRequest, CompleteRequest, DescribeResponse,
    DetectRequest, EmbedRequest, ItcRequest,
};
use crate::config::{EngineConfig, ExampleOrder, RetrievalMode};
use crate::gradcam::{argmax_position, averaged_gradcam, sample_patches, CrossAttention};
use crate::proglang::{ImageHandle, Primitives};
use crate::prompting::{build_knowledge_prompt, build_qa_prompt};
use crate::retrieval::{random_k, top_k, Example, ExampleStore, KindFilter};

/// An object found by `find_object`, boxed in frame coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    /// `[x0, y0, x1, y1]` with `x0 < x1` and `y0 < y1`.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
}

impl Detection {
    pub fn new(label: impl Into<String>, bbox: [f64; 4], score: f64) -> Self {
        Detection {
            label: label.into(),
            bbox,
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct PrimitiveError {
    pub message: String,
    /// The failure was a transport error or timeout talking to a backend.
    pub unreachable: bool,
}

impl PrimitiveError {
    pub fn new(message: impl Into<String>) -> Self {
        PrimitiveError {
            message: message.into(),
            unreachable: false,
        }
    }

    fn backend(what: &str, e: BackendError) -> Self {
        PrimitiveError {
            message: format!("{what}: {e}"),
            unreachable: e.is_transient(),
        }
    }
}

/// Distinct captions of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub image_ref: String,
    pub captions: Vec<String>,
}

/// Question embeddings shared by every instance of a run.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: Mutex<HashMap<String, Vec<f64>>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        EmbeddingCache::default()
    }

    pub fn embed(&self, embedder: &dyn Backend, text: &str) -> Result<Vec<f64>, BackendError> {
        if let Some(v) = self.lock().get(text) {
            return Ok(v.clone());
        }
        let info = embedder.describe()?;
        let resp = embedder.embed(&EmbedRequest {
            text: text.to_string(),
        })?;
        resp.validate(&info)?;
        self.lock().insert(text.to_string(), resp.embedding.clone());
        Ok(resp.embedding)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Vec<f64>>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Retrieves `k` examples of `kind` for `question` and orders them for a
/// prompt. `k` is clamped to the number of examples available.
#[allow(clippy::too_many_arguments)]
pub fn select_examples<'s>(
    store: &'s ExampleStore,
    kind: KindFilter,
    k: usize,
    question: &str,
    config: &EngineConfig,
    embedder: &dyn Backend,
    embeddings: &EmbeddingCache,
    rng: &mut dyn RngCore,
) -> Result<Vec<&'s Example>, String> {
    let k = k.min(store.count(kind));
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut picked = match config.retrieval {
        RetrievalMode::Embedding => {
            let q = embeddings
                .embed(embedder, question)
                .map_err(|e| format!("embedding the question: {e}"))?;
            top_k(&q, store, k, kind).map_err(|e| e.to_string())?
        }
        RetrievalMode::Random => random_k(store, k, kind, rng).map_err(|e| e.to_string())?,
    };
    if config.example_order == ExampleOrder::MostSimilarLast {
        picked.reverse();
    }
    Ok(picked)
}

/// Per-instance engine context dispatching program calls to the backends.
pub struct PrimitiveContext<'a> {
    config: &'a EngineConfig,
    vision: &'a dyn Backend,
    vision_info: &'a DescribeResponse,
    qa_lm: &'a dyn Backend,
    embedder: &'a dyn Backend,
    qa_store: Option<&'a ExampleStore>,
    embeddings: &'a EmbeddingCache,
    captions: Mutex<BTreeMap<String, CaptionSet>>,
    caption_order: Mutex<Vec<String>>,
    qa_prompts: Mutex<Vec<String>>,
    unreachable: AtomicUsize,
}

impl<'a> PrimitiveContext<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: &'a EngineConfig,
        vision: &'a dyn Backend,
        vision_info: &'a DescribeResponse,
        qa_lm: &'a dyn Backend,
        embedder: &'a dyn Backend,
        qa_store: Option<&'a ExampleStore>,
        embeddings: &'a EmbeddingCache,
    ) -> Self {
        PrimitiveContext {
            config,
            vision,
            vision_info,
            qa_lm,
            embedder,
            qa_store,
            embeddings,
            captions: Mutex::new(BTreeMap::new()),
            caption_order: Mutex::new(Vec::new()),
            qa_prompts: Mutex::new(Vec::new()),
            unreachable: AtomicUsize::new(0),
        }
    }

    /// Caption sets computed so far, in the order they were first produced.
    pub fn caption_sets(&self) -> Vec<CaptionSet> {
        let cache = self.captions.lock().unwrap_or_else(|e| e.into_inner());
        let order = self.caption_order.lock().unwrap_or_else(|e| e.into_inner());
        order.iter().filter_map(|r| cache.get(r).cloned()).collect()
    }

    /// Every caption-QA prompt sent so far.
    pub fn qa_prompts(&self) -> Vec<String> {
        self.qa_prompts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Number of primitive failures caused by unreachable backends.
    pub fn unreachable_failures(&self) -> usize {
        self.unreachable.load(Ordering::SeqCst)
    }

    fn note(&self, e: PrimitiveError) -> PrimitiveError {
        if e.unreachable {
            self.unreachable.fetch_add(1, Ordering::SeqCst);
        }
        e
    }

    fn attention(
        &self,
        image: &ImageHandle,
        text: &str,
    ) -> Result<(CrossAttention, Vec<usize>), PrimitiveError> {
        let info = self.vision_info;
        let resp = self
            .vision
            .attention_with_grad(&AttentionRequest {
                image_ref: image.image_ref().to_string(),
                text: text.to_string(),
                layer: self.config.gradcam_layer,
            })
            .and_then(|r| r.validate(info).map(|_| r))
            .map_err(|e| PrimitiveError::backend("attention", e))?;
        let t = resp.tokens.len();
        let lead = info.special_tokens.leading.min(t);
        let trail = info.special_tokens.trailing.min(t - lead);
        let mut indices: Vec<usize> = (lead..t - trail).collect();
        if indices.is_empty() {
            indices = (0..t).collect();
        }
        let ca = CrossAttention::new(
            resp.tokens,
            resp.attention,
            resp.gradient,
            info.grid_w,
            info.grid_h,
            self.config.gradcam_layer,
        )
        .map_err(|e| PrimitiveError::new(format!("attention: {e}")))?;
        Ok((ca, indices))
    }

    /// Captions for one image, from the cache or by running the sampling
    /// rounds with the relevance map of `question`.
    pub fn captions_for(
        &self,
        image: &ImageHandle,
        question: &str,
        rng: &mut dyn RngCore,
    ) -> Result<CaptionSet, PrimitiveError> {
        let key = image.image_ref().to_string();
        if let Some(hit) = self
            .captions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
        {
            return Ok(hit.clone());
        }
        let (ca, tokens) = self.attention(image, question)?;
        let map = averaged_gradcam(&ca, &tokens).map_err(|e| PrimitiveError::new(e.to_string()))?;
        let want = self.config.captions_per_image;
        let mut captions: Vec<String> = Vec::with_capacity(want);
        'rounds: for _ in 0..self.config.max_caption_rounds {
            let patches = sample_patches(&map, self.config.num_patch_samples, rng);
            for _ in 0..self.vision_info.captions_per_round {
                let resp = self
                    .vision
                    .caption(&CaptionRequest {
                        image_ref: key.clone(),
                        patches: patches.clone(),
                        rng_token: rng.next_u64(),
                    })
                    .map_err(|e| PrimitiveError::backend("caption", e))?;
                let c = resp.caption.trim().to_string();
                if !c.is_empty() && !captions.contains(&c) {
                    captions.push(c);
                    if captions.len() == want {
                        break 'rounds;
                    }
                }
            }
        }
        if captions.len() < want {
            return Err(PrimitiveError::new(format!(
                "caption rounds exhausted for {key}: {} of {want} distinct captions after {} rounds",
                captions.len(),
                self.config.max_caption_rounds
            )));
        }
        let set = CaptionSet {
            image_ref: key.clone(),
            captions,
        };
        let mut cache = self.captions.lock().unwrap_or_else(|e| e.into_inner());
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), set.clone());
            self.caption_order
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(key);
        }
        Ok(cache[image.image_ref()].clone())
    }

    /// Answers `question` from the captions of all `images`. With one image
    /// this is exactly `query`.
    pub fn answer_with_captions(
        &self,
        images: &[ImageHandle],
        question: &str,
        rng: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError> {
        self.answer_inner(images, question, rng)
            .map_err(|e| self.note(e))
    }

    fn answer_inner(
        &self,
        images: &[ImageHandle],
        question: &str,
        rng: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError> {
        if question.trim().is_empty() {
            return Err(PrimitiveError::new("query: question is empty"));
        }
        if images.is_empty() {
            return Err(PrimitiveError::new("query: no images"));
        }
        let mut sets = Vec::with_capacity(images.len());
        for image in images {
            sets.push(self.captions_for(image, question, rng)?);
        }
        let examples = match self.qa_store {
            Some(store) => select_examples(
                store,
                KindFilter::Qa,
                self.config.num_qa_shots,
                question,
                self.config,
                self.embedder,
                self.embeddings,
                rng,
            )
            .map_err(|e| PrimitiveError::new(format!("qa example retrieval: {e}")))?,
            None => Vec::new(),
        };
        let prompt = build_qa_prompt(question, &sets, &examples)
            .map_err(|e| PrimitiveError::new(format!("qa prompt: {e}")))?;
        self.qa_prompts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(prompt.text.clone());
        let resp = self
            .qa_lm
            .complete(&CompleteRequest {
                model: self.config.qa_model.clone(),
                prompt: prompt.text,
                max_tokens: self.config.qa_max_tokens,
                temperature: self.config.temperature,
                stop: vec!["\n".to_string()],
                logit_bias: None,
            })
            .map_err(|e| PrimitiveError::backend("qa completion", e))?;
        Ok(first_line_answer(&resp.text))
    }
}

/// First line of a completion, trimmed and lowercased.
pub fn first_line_answer(text: &str) -> String {
    text.trim_start()
        .lines()
        .next()
        .unwrap_or("")
        .trim()
        .to_lowercase()
}

impl Primitives for PrimitiveContext<'_> {
    fn query(
        &self,
        image: &ImageHandle,
        question: &str,
        rng: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError> {
        self.answer_with_captions(std::slice::from_ref(image), question, rng)
    }

    fn get_pos(
        &self,
        image: &ImageHandle,
        text: &str,
        _rng: &mut dyn RngCore,
    ) -> Result<(f64, f64), PrimitiveError> {
        if text.trim().is_empty() {
            return Err(PrimitiveError::new("get_pos: text is empty"));
        }
        let (ca, tokens) = self.attention(image, text).map_err(|e| self.note(e))?;
        let map = averaged_gradcam(&ca, &tokens).map_err(|e| PrimitiveError::new(e.to_string()))?;
        let frame = self
            .config
            .coordinate_frame
            .with_grid(self.vision_info.grid_w, self.vision_info.grid_h);
        Ok(argmax_position(&map, &frame))
    }

    fn find_matching_image(
        &self,
        images: &[ImageHandle],
        text: &str,
        _rng: &mut dyn RngCore,
    ) -> Result<usize, PrimitiveError> {
        let mut best: Option<(usize, f64)> = None;
        for (i, image) in images.iter().enumerate() {
            let score = self
                .vision
                .itc_score(&ItcRequest {
                    image_ref: image.image_ref().to_string(),
                    text: text.to_string(),
                })
                .and_then(|r| r.validate().map(|_| r.score))
                .map_err(|e| self.note(PrimitiveError::backend("itc", e)))?;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        best.map(|(i, _)| i)
            .ok_or_else(|| PrimitiveError::new("find_matching_image: no images"))
    }

    fn find_object(
        &self,
        image: &ImageHandle,
        description: &str,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<Detection>, PrimitiveError> {
        if description.trim().is_empty() {
            return Err(PrimitiveError::new("find_object: description is empty"));
        }
        let resp = self
            .vision
            .detect(&DetectRequest {
                image_ref: image.image_ref().to_string(),
                text: description.to_string(),
            })
            .and_then(|r| r.validate().map(|_| r))
            .map_err(|e| self.note(PrimitiveError::backend("detect", e)))?;
        let f = &self.config.coordinate_frame;
        let (w, h) = (f.right - f.left, f.top - f.bottom);
        let mut found: Vec<Detection> = resp
            .detections
            .into_iter()
            .filter(|d| d.score >= self.config.detection_threshold)
            .map(|d| {
                let [bx0, by0, bx1, by1] = d.bbox;
                Detection::new(
                    d.label,
                    [
                        f.left + bx0 * w,
                        f.top - by1 * h,
                        f.left + bx1 * w,
                        f.top - by0 * h,
                    ],
                    d.score,
                )
            })
            .collect();
        found.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(found)
    }

    fn knowledge_query(
        &self,
        question: &str,
        _rng: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError> {
        let prompt = build_knowledge_prompt(question)
            .map_err(|e| PrimitiveError::new(format!("knowledge_query: {e}")))?;
        let bias = self.config.knowledge_logit_bias();
        let resp = self
            .qa_lm
            .complete(&CompleteRequest {
                model: self.config.qa_model.clone(),
                prompt,
                max_tokens: self.config.qa_max_tokens,
                temperature: self.config.temperature,
                stop: vec!["\n".to_string()],
                logit_bias: (!bias.is_empty()).then_some(bias),
            })
            .map_err(|e| self.note(PrimitiveError::backend("knowledge completion", e)))?;
        Ok(first_line_answer(&resp.text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::oracle::{OracleBackend, SceneGraph, SceneObject};
    use crate::backends::scripted::ScriptedLm;
    use crate::backends::{
        AttentionResponse, CaptionResponse, CompleteResponse, DetectResponse, ItcResponse,
        SpecialTokens, WireDetection,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn scene(image_ref: &str, objects: Vec<SceneObject>) -> SceneGraph {
        SceneGraph {
            image_ref: image_ref.into(),
            objects,
        }
    }

    struct Fixture {
        config: EngineConfig,
        vision: Arc<dyn Backend>,
        info: DescribeResponse,
        lm: Arc<dyn Backend>,
        embeddings: EmbeddingCache,
    }

    impl Fixture {
        fn new(vision: Arc<dyn Backend>, lm: Arc<dyn Backend>) -> Self {
            let info = vision.describe().unwrap();
            Fixture {
                config: EngineConfig::default(),
                vision,
                info,
                lm,
                embeddings: EmbeddingCache::new(),
            }
        }

        fn oracle(scenes: Vec<SceneGraph>) -> Self {
            let o: Arc<dyn Backend> = Arc::new(OracleBackend::new(scenes).unwrap());
            Fixture::new(o.clone(), o)
        }

        fn ctx(&self) -> PrimitiveContext<'_> {
            PrimitiveContext::new(
                &self.config,
                &*self.vision,
                &self.info,
                &*self.lm,
                &*self.vision,
                None,
                &self.embeddings,
            )
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn img(r: &str) -> ImageHandle {
        ImageHandle::new(r)
    }

    #[test]
    fn query_answers_from_the_scene() {
        let f = Fixture::oracle(vec![scene(
            "s",
            vec![SceneObject::new("chair", &["red"], 3, 4)],
        )]);
        let ctx = f.ctx();
        assert_eq!(
            ctx.query(&img("s"), "What color is the chair?", &mut rng())
                .unwrap(),
            "red"
        );
        let sets = ctx.caption_sets();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].captions.len(), 7);
        assert!(sets[0].captions.iter().all(|c| c.ends_with("a red chair")));
    }

    #[test]
    fn scripted_answer_passes_through() {
        let o: Arc<dyn Backend> = Arc::new(OracleBackend::new(vec![scene("s", vec![])]).unwrap());
        let lm: Arc<dyn Backend> =
            Arc::new(ScriptedLm::new().with_answer("Is it sunny?", " Yes\nmore"));
        let f = Fixture::new(o, lm);
        assert_eq!(
            f.ctx()
                .query(&img("s"), "Is it sunny?", &mut rng())
                .unwrap(),
            "yes"
        );
    }

    /// Vision backend with a configurable captioner and fixed ITC scores.
    struct Fake {
        repeat_p: f64,
        scores: Vec<f64>,
        detections: Vec<WireDetection>,
    }

    impl Backend for Fake {
        fn describe(&self) -> Result<DescribeResponse, BackendError> {
            Ok(DescribeResponse {
                grid_w: 2,
                grid_h: 2,
                embed_dim: 4,
                special_tokens: SpecialTokens {
                    leading: 1,
                    trailing: 0,
                },
                captions_per_round: 1,
            })
        }
        fn attention_with_grad(
            &self,
            req: &AttentionRequest,
        ) -> Result<AttentionResponse, BackendError> {
            let t = 1 + req.text.split_whitespace().count();
            Ok(AttentionResponse {
                tokens: vec!["tok".into(); t],
                attention: vec![vec![0.25; 4]; t],
                gradient: vec![vec![1.0; 4]; t],
            })
        }
        fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
            let mut r = ChaCha8Rng::seed_from_u64(req.rng_token);
            let caption = if r.random_bool(self.repeat_p) {
                "the same caption".to_string()
            } else {
                format!("caption {}", req.rng_token % 1000)
            };
            Ok(CaptionResponse { caption })
        }
        fn itc_score(&self, req: &ItcRequest) -> Result<ItcResponse, BackendError> {
            let i: usize = req.image_ref.parse().unwrap();
            Ok(ItcResponse {
                score: self.scores[i],
            })
        }
        fn detect(&self, _req: &DetectRequest) -> Result<DetectResponse, BackendError> {
            Ok(DetectResponse {
                detections: self.detections.clone(),
            })
        }
    }

    fn fake(repeat_p: f64, scores: Vec<f64>) -> Fixture {
        let v: Arc<dyn Backend> = Arc::new(Fake {
            repeat_p,
            scores,
            detections: vec![],
        });
        let lm: Arc<dyn Backend> = Arc::new(ScriptedLm::new().default_answer(Some("ok".into())));
        Fixture::new(v, lm)
    }

    #[test]
    fn repeated_captions_exhaust_the_rounds() {
        let f = fake(1.0, vec![0.0]);
        let err = f
            .ctx()
            .query(&img("0"), "Anything?", &mut rng())
            .unwrap_err();
        assert!(err.message.contains("caption rounds exhausted"), "{err}");
    }

    #[test]
    fn captions_are_cached_per_image() {
        let f = fake(0.0, vec![0.0]);
        let ctx = f.ctx();
        let mut r = rng();
        ctx.query(&img("0"), "First?", &mut r).unwrap();
        let before = ctx.caption_sets();
        ctx.query(&img("0"), "Second?", &mut r).unwrap();
        assert_eq!(ctx.caption_sets(), before);
        let prompts = ctx.qa_prompts();
        assert_eq!(prompts.len(), 2);
        assert_eq!(prompts[0].replace("First?", "Second?"), prompts[1]);
    }

    #[test]
    fn matching_image_is_the_argmax_with_early_ties() {
        let f = fake(0.0, vec![0.2, 0.9, 0.5, 0.9]);
        let ctx = f.ctx();
        let imgs: Vec<_> = (0..4).map(|i| img(&i.to_string())).collect();
        assert_eq!(
            ctx.find_matching_image(&imgs[..3], "x", &mut rng())
                .unwrap(),
            1
        );
        assert_eq!(ctx.find_matching_image(&imgs, "x", &mut rng()).unwrap(), 1);
        assert_eq!(
            ctx.find_matching_image(&imgs[..1], "x", &mut rng())
                .unwrap(),
            0
        );
    }

    #[test]
    fn oracle_matching_image_by_overlap() {
        let f = Fixture::oracle(vec![
            scene("a", vec![SceneObject::new("woman", &[], 0, 0)]),
            scene(
                "b",
                vec![
                    SceneObject::new("woman", &[], 0, 0),
                    SceneObject::new("umbrella", &[], 0, 1),
                ],
            ),
            scene("c", vec![SceneObject::new("dog", &[], 0, 0)]),
        ]);
        let imgs = [img("a"), img("b"), img("c")];
        assert_eq!(
            f.ctx()
                .find_matching_image(&imgs, "woman holding umbrella", &mut rng())
                .unwrap(),
            1
        );
    }

    #[test]
    fn get_pos_maps_the_planted_cell() {
        let f = Fixture::oracle(vec![scene("s", vec![SceneObject::new("dog", &[], 2, 20)])]);
        let ctx = f.ctx();
        let (x, y) = ctx.get_pos(&img("s"), "dog", &mut rng()).unwrap();
        assert!(
            (x - 20.5).abs() < 1e-12 && (y - 21.5).abs() < 1e-12,
            "({x}, {y})"
        );
        assert_eq!(
            ctx.get_pos(&img("s"), "dog dog", &mut rng()).unwrap(),
            (x, y)
        );
        assert_eq!(
            ctx.get_pos(&img("s"), "cat", &mut rng()).unwrap(),
            (0.5, 23.5)
        );
    }

    #[test]
    fn find_object_counts_and_thresholds() {
        let shoes = (0..3)
            .map(|i| SceneObject::new("shoe", &["pink"], 5, i))
            .collect();
        let f = Fixture::oracle(vec![scene("s", shoes)]);
        let ctx = f.ctx();
        let found = ctx.find_object(&img("s"), "pink shoe", &mut rng()).unwrap();
        assert_eq!(found.len(), 3);
        for d in &found {
            assert!(d.bbox[0] < d.bbox[2] && d.bbox[1] < d.bbox[3]);
        }
        assert_eq!(found[0].bbox, [0.0, 18.0, 1.0, 19.0]);
        assert!(ctx
            .find_object(&img("s"), "green shoe", &mut rng())
            .unwrap()
            .is_empty());

        let mut a = SceneObject::new("cup", &[], 0, 0);
        a.score = Some(0.9);
        let mut b = SceneObject::new("cup", &[], 0, 1);
        b.score = Some(0.4);
        let f = Fixture::oracle(vec![scene("s", vec![b, a])]);
        let found = f.ctx().find_object(&img("s"), "cup", &mut rng()).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].score, 0.9);
    }

    /// Language model that records the last request it received.
    #[derive(Default)]
    struct Recording(Mutex<Option<CompleteRequest>>);

    impl Backend for Recording {
        fn describe(&self) -> Result<DescribeResponse, BackendError> {
            ScriptedLm::new().describe()
        }
        fn complete(&self, req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
            *self.0.lock().unwrap() = Some(req.clone());
            ScriptedLm::new()
                .with_answer(
                    "Which football team has won the most Super Bowls?",
                    "New England Patriots",
                )
                .complete(req)
        }
    }

    #[test]
    fn knowledge_query_sends_the_bias() {
        let rec = Arc::new(Recording::default());
        let lm: Arc<dyn Backend> = rec.clone();
        let mut f = Fixture::new(Arc::new(OracleBackend::new(vec![]).unwrap()), lm);
        let q = "Which football team has won the most Super Bowls?";
        assert_eq!(
            f.ctx().knowledge_query(q, &mut rng()).unwrap(),
            "new england patriots"
        );
        let sent = rec.0.lock().unwrap().clone().unwrap();
        let json = serde_json::to_value(&sent).unwrap();
        assert_eq!(
            json["logit_bias"],
            serde_json::json!({"-": -100, "to": -100, "°": -100})
        );

        f.config.knowledge_bias_tokens.clear();
        f.ctx().knowledge_query(q, &mut rng()).unwrap();
        let sent = rec.0.lock().unwrap().clone().unwrap();
        assert!(serde_json::to_value(&sent)
            .unwrap()
            .get("logit_bias")
            .is_none());
    }

    #[test]
    fn multi_image_prompt_has_every_caption_block() {
        let f = Fixture::oracle(vec![
            scene("a", vec![SceneObject::new("shoe", &["pink"], 0, 0)]),
            scene("b", vec![SceneObject::new("dog", &[], 1, 1)]),
        ]);
        let ctx = f.ctx();
        let ans = ctx
            .answer_with_captions(
                &[img("a"), img("b")],
                "How many images contain a dog?",
                &mut rng(),
            )
            .unwrap();
        assert_eq!(ans, "1");
        let prompt = &ctx.qa_prompts()[0];
        assert!(prompt.contains("Image 1 captions:\na view"));
        assert!(prompt.contains("Image 2 captions:\nb view"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn caption_sets_are_distinct(seed in any::<u64>()) {
            let f = fake(0.5, vec![0.0]);
            let ctx = f.ctx();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            if ctx.query(&img("0"), "What is it?", &mut r).is_ok() {
                let set = &ctx.caption_sets()[0];
                prop_assert_eq!(set.captions.len(), f.config.captions_per_image);
                for (i, a) in set.captions.iter().enumerate() {
                    for b in &set.captions[i + 1..] {
                        prop_assert_ne!(a.trim(), b.trim());
                    }
                }
            }
        }

        #[test]
        fn query_is_deterministic(seed in any::<u64>()) {
            let f = Fixture::oracle(vec![scene("s", vec![SceneObject::new("chair", &["red"], 3, 4)])]);
            let run = || {
                let ctx = f.ctx();
                let a = ctx.query(&img("s"), "Is there a chair?", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                (a, ctx.caption_sets())
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn matching_image_ignores_worse_appended_images(
            scores in prop::collection::vec(0.0f64..1.0, 1..6),
            extra in prop::collection::vec(0.0f64..1.0, 0..4),
        ) {
            let best = scores.iter().cloned().fold(f64::MIN, f64::max);
            let lower: Vec<f64> = extra.iter().map(|e| e * best * 0.99).filter(|e| *e < best).collect();
            let mut all = scores.clone();
            all.extend(&lower);
            let f = fake(0.0, all.clone());
            let ctx = f.ctx();
            let imgs: Vec<_> = (0..all.len()).map(|i| img(&i.to_string())).collect();
            let base = ctx.find_matching_image(&imgs[..scores.len()], "x", &mut rng()).unwrap();
            prop_assert!(base < scores.len());
            prop_assert_eq!(ctx.find_matching_image(&imgs, "x", &mut rng()).unwrap(), base);
        }

        #[test]
        fn raising_the_threshold_never_adds_detections(
            scores in prop::collection::vec(0.0f64..=1.0, 0..10),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let detections = scores
                .iter()
                .map(|s| WireDetection { label: "x".into(), bbox: [0.1, 0.1, 0.2, 0.2], score: *s })
                .collect();
            let v: Arc<dyn Backend> = Arc::new(Fake { repeat_p: 0.0, scores: vec![], detections });
            let mut f = Fixture::new(v, Arc::new(ScriptedLm::new()));
            f.config.detection_threshold = lo;
            let n_lo = f.ctx().find_object(&img("0"), "x", &mut rng()).unwrap();
            f.config.detection_threshold = hi;
            let n_hi = f.ctx().find_object(&img("0"), "x", &mut rng()).unwrap();
            prop_assert!(n_hi.len() <= n_lo.len());
            prop_assert!(n_lo.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
}
