//! Per-instance pipeline: retrieve examples, generate a program, run it,
//! and fall back to caption QA when any stage fails.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, CompleteRequest, DescribeResponse};
use crate::config::{EngineConfig, RetrievalMode, RunMode};
use crate::error::ConfigError;
use crate::instance::{AnswerRecord, VqaInstance};
use crate::primitives::{select_examples, CaptionSet, EmbeddingCache, PrimitiveContext};
use crate::proglang::{
    execute, flavor_whitelist, parse_source_with, CallWhitelist, ImageHandle, Outcome,
    PrimitiveCall, RuntimeErrorKind,
};
use crate::prompting::{build_code_prompt, extract_program, Preamble};
use crate::retrieval::{ExampleStore, KindFilter};

/// Generator streams derived from one instance seed.
const STREAM_EXECUTION: u64 = 0;
const STREAM_FALLBACK: u64 = 1;
const STREAM_RETRIEVAL: u64 = 2;

/// The model hosts an engine talks to, one per role.
#[derive(Clone)]
pub struct Backends {
    pub code_lm: Arc<dyn Backend>,
    pub qa_lm: Arc<dyn Backend>,
    pub vision: Arc<dyn Backend>,
    pub embedder: Arc<dyn Backend>,
}

impl Backends {
    /// One backend serving every role.
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        Backends {
            code_lm: backend.clone(),
            qa_lm: backend.clone(),
            vision: backend.clone(),
            embedder: backend,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend unreachable: {0}")]
    Unreachable(BackendError),
    #[error("backend {role} rejected describe: {source}")]
    Describe {
        role: &'static str,
        source: BackendError,
    },
    #[error("example store: {0}")]
    Store(String),
}

impl EngineError {
    fn from_describe(role: &'static str, e: BackendError) -> Self {
        if e.is_transient() {
            EngineError::Unreachable(e)
        } else {
            EngineError::Describe { role, source: e }
        }
    }
}

/// Pipeline stage at which a program attempt was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackStage {
    Retrieval,
    Prompt,
    Generation,
    Extraction,
    Syntax,
    Runtime,
    /// Baseline mode skips program generation altogether.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackReason {
    pub stage: FallbackStage,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_kind: Option<RuntimeErrorKind>,
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieval_ms: Option<f64>,
    pub generation_ms: Option<f64>,
    pub parse_ms: Option<f64>,
    pub execution_ms: Option<f64>,
    pub fallback_ms: Option<f64>,
}

/// Everything that happened while answering one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub instance_id: String,
    pub question: String,
    pub image_refs: Vec<String>,
    pub mode: String,
    pub code_examples: Vec<String>,
    pub code_prompt: Option<String>,
    pub completion: Option<String>,
    pub program: Option<String>,
    pub parse_error: Option<String>,
    pub calls: Vec<PrimitiveCall>,
    pub captions: Vec<CaptionSet>,
    pub fallback_captions: Vec<CaptionSet>,
    pub qa_prompts: Vec<String>,
    pub fallback_used: bool,
    pub fallback_reason: Option<FallbackReason>,
    /// Set when the fallback itself failed and the answer is empty.
    pub fallback_error: Option<String>,
    pub answer: String,
    /// Some failure came from a backend that could not be reached.
    pub backend_unreachable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl Trace {
    fn new(instance: &VqaInstance, mode: RunMode) -> Self {
        Trace {
            instance_id: instance.id().to_string(),
            question: instance.text().to_string(),
            image_refs: instance.image_refs().to_vec(),
            mode: mode.as_str().to_string(),
            code_examples: Vec::new(),
            code_prompt: None,
            completion: None,
            program: None,
            parse_error: None,
            calls: Vec::new(),
            captions: Vec::new(),
            fallback_captions: Vec::new(),
            qa_prompts: Vec::new(),
            fallback_used: false,
            fallback_reason: None,
            fallback_error: None,
            answer: String::new(),
            backend_unreachable: false,
            timings: None,
        }
    }
}

/// File name used for an instance's trace: the id with every character
/// outside `[A-Za-z0-9._-]` replaced by `_`.
pub fn trace_file_name(instance_id: &str) -> String {
    let safe: String = instance_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

fn instance_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Timer(Option<Instant>);

impl Timer {
    fn start(on: bool) -> Self {
        Timer(on.then(Instant::now))
    }

    fn ms(&self) -> Option<f64> {
        self.0.map(|t| t.elapsed().as_secs_f64() * 1000.0)
    }
}

/// A configured pipeline. Shareable across worker threads.
pub struct Engine {
    config: EngineConfig,
    backends: Backends,
    store: ExampleStore,
    vision_info: DescribeResponse,
    embeddings: EmbeddingCache,
    preamble: Preamble,
    whitelist: CallWhitelist,
}

impl Engine {
    /// Validates the configuration and asks the vision and embedding
    /// backends to describe themselves.
    pub fn new(
        config: EngineConfig,
        backends: Backends,
        store: ExampleStore,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let vision_info = backends
            .vision
            .describe()
            .map_err(|e| EngineError::from_describe("vision", e))?;
        if config.mode == RunMode::Codevqa && store.count(KindFilter::Code) == 0 {
            return Err(EngineError::Store(
                "no code examples for program generation".into(),
            ));
        }
        if config.retrieval == RetrievalMode::Embedding && !store.is_empty() {
            let dim = backends
                .embedder
                .describe()
                .map_err(|e| EngineError::from_describe("embedder", e))?
                .embed_dim;
            if dim != store.dimension() {
                return Err(EngineError::Store(format!(
                    "store embeddings have dimension {} but the embedder produces {dim}",
                    store.dimension()
                )));
            }
        }
        Ok(Engine {
            preamble: Preamble::new(config.flavor, config.extended_primitives),
            whitelist: flavor_whitelist(config.flavor, config.extended_primitives),
            config,
            backends,
            store,
            vision_info,
            embeddings: EmbeddingCache::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &ExampleStore {
        &self.store
    }

    fn context(&self) -> PrimitiveContext<'_> {
        PrimitiveContext::new(
            &self.config,
            self.backends.vision.as_ref(),
            &self.vision_info,
            self.backends.qa_lm.as_ref(),
            self.backends.embedder.as_ref(),
            Some(&self.store),
            &self.embeddings,
        )
    }

    /// Answers one instance. `index` is the instance's position in the run
    /// and, mixed with the run seed, seeds every random choice. Never fails:
    /// problems are recorded in the trace.
    pub fn answer_instance(&self, instance: &VqaInstance, index: usize) -> (AnswerRecord, Trace) {
        let seed = self.config.rng_seed ^ index as u64;
        let timed = self.config.record_timings;
        let mut timings = StageTimings::default();
        let mut trace = Trace::new(instance, self.config.mode);
        let images: Vec<ImageHandle> = instance.image_refs().iter().map(ImageHandle::new).collect();

        let failure = match self.config.mode {
            RunMode::BaselineAlwaysFallback => Some(FallbackReason {
                stage: FallbackStage::Baseline,
                message: "baseline mode answers every question from captions".into(),
                runtime_kind: None,
            }),
            RunMode::Codevqa => self.run_program(instance, &images, seed, &mut trace, &mut timings),
        };

        if let Some(reason) = failure {
            log::debug!(
                "{}: fallback after {:?}: {}",
                instance.id(),
                reason.stage,
                reason.message
            );
            let timer = Timer::start(timed);
            let ctx = self.context();
            let mut rng = instance_rng(seed, STREAM_FALLBACK);
            match ctx.answer_with_captions(&images, instance.text(), &mut rng) {
                Ok(answer) => trace.answer = answer,
                Err(e) => {
                    log::warn!("{}: fallback failed: {}", instance.id(), e.message);
                    trace.answer = String::new();
                    trace.fallback_error = Some(e.message);
                }
            }
            trace.fallback_captions = ctx.caption_sets();
            trace.qa_prompts.extend(ctx.qa_prompts());
            trace.backend_unreachable |= ctx.unreachable_failures() > 0;
            trace.fallback_used = true;
            trace.fallback_reason = Some(reason);
            timings.fallback_ms = timer.ms();
        }
        if timed {
            trace.timings = Some(timings);
        }
        let record = AnswerRecord {
            instance_id: instance.id().to_string(),
            predicted: trace.answer.clone(),
            used_fallback: trace.fallback_used,
            trace_ref: format!("traces/{}", trace_file_name(instance.id())),
        };
        (record, trace)
    }

    /// Generates and runs a program; `None` when it produced an answer.
    fn run_program(
        &self,
        instance: &VqaInstance,
        images: &[ImageHandle],
        seed: u64,
        trace: &mut Trace,
        timings: &mut StageTimings,
    ) -> Option<FallbackReason> {
        let fail = |stage, message: String| {
            Some(FallbackReason {
                stage,
                message,
                runtime_kind: None,
            })
        };
        let timed = self.config.record_timings;
        let question = instance.text();

        let timer = Timer::start(timed);
        let mut rng = instance_rng(seed, STREAM_RETRIEVAL);
        let examples = match select_examples(
            &self.store,
            KindFilter::Code,
            self.config.num_code_shots,
            question,
            &self.config,
            self.backends.embedder.as_ref(),
            &self.embeddings,
            &mut rng,
        ) {
            Ok(e) => e,
            Err(message) => return fail(FallbackStage::Retrieval, message),
        };
        trace.code_examples = examples.iter().map(|e| e.id.clone()).collect();
        let prompt = match build_code_prompt(
            &self.preamble,
            &examples,
            question,
            &self.config.coordinate_frame,
        ) {
            Ok(p) => p,
            Err(e) => return fail(FallbackStage::Prompt, e.to_string()),
        };
        timings.retrieval_ms = timer.ms();
        if prompt.token_estimate > self.config.max_prompt_tokens {
            log::warn!(
                "{}: code prompt is about {} tokens, above the configured {}",
                instance.id(),
                prompt.token_estimate,
                self.config.max_prompt_tokens
            );
        }
        trace.code_prompt = Some(prompt.text.clone());

        let timer = Timer::start(timed);
        let completion = self.backends.code_lm.complete(&CompleteRequest {
            model: self.config.code_model.clone(),
            prompt: prompt.text,
            max_tokens: self.config.code_max_tokens,
            temperature: self.config.temperature,
            stop: vec!["# Image".to_string()],
            logit_bias: None,
        });
        timings.generation_ms = timer.ms();
        let completion = match completion {
            Ok(c) => c.text,
            Err(e) => {
                trace.backend_unreachable |= e.is_transient();
                return fail(FallbackStage::Generation, e.to_string());
            }
        };
        trace.completion = Some(completion.clone());

        let timer = Timer::start(timed);
        let source = match extract_program(&completion) {
            Ok(s) => s,
            Err(e) => return fail(FallbackStage::Extraction, e.to_string()),
        };
        trace.program = Some(source.clone());
        let program = parse_source_with(&source, &self.whitelist);
        timings.parse_ms = timer.ms();
        let program = match program {
            Ok(p) => p,
            Err(e) => {
                trace.parse_error = Some(e.to_string());
                return fail(FallbackStage::Syntax, e.to_string());
            }
        };

        let timer = Timer::start(timed);
        let ctx = self.context();
        let mut rng = instance_rng(seed, STREAM_EXECUTION);
        let result = execute(&program, &ctx, images, &self.config.limits, &mut rng);
        timings.execution_ms = timer.ms();
        trace.calls = result.trace;
        trace.captions = ctx.caption_sets();
        trace.qa_prompts = ctx.qa_prompts();
        trace.backend_unreachable |= ctx.unreachable_failures() > 0;
        match result.outcome {
            Outcome::Answer(answer) => {
                trace.answer = answer;
                None
            }
            Outcome::RuntimeError(e) => Some(FallbackReason {
                stage: FallbackStage::Runtime,
                message: e.to_string(),
                runtime_kind: Some(e.kind),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::oracle::{OracleBackend, SceneGraph, SceneObject};
    use crate::backends::scripted::ScriptedLm;
    use crate::backends::{AttentionRequest, AttentionResponse, CaptionRequest, CaptionResponse};
    use crate::fixtures::example_store;

    const PINK: &str = include_str!("../../tests/programs/pink_shoes.py");

    fn shoes_scene(r: &str, pink: usize, other: usize) -> SceneGraph {
        let mut objects = Vec::new();
        for i in 0..pink {
            objects.push(SceneObject::new("shoe", &["pink"], 2, 2 + i));
        }
        for i in 0..other {
            objects.push(SceneObject::new("shoe", &["black"], 8, 2 + i));
        }
        objects.push(SceneObject::new("bed", &["white"], 15, 15));
        SceneGraph {
            image_ref: r.into(),
            objects,
        }
    }

    fn engine(config: EngineConfig, lm: ScriptedLm, scenes: Vec<SceneGraph>) -> Engine {
        let oracle: Arc<dyn Backend> = Arc::new(OracleBackend::new(scenes).unwrap());
        let backends = Backends {
            code_lm: Arc::new(lm),
            ..Backends::uniform(oracle)
        };
        Engine::new(config, backends, example_store()).unwrap()
    }

    fn pink_instance() -> (VqaInstance, Vec<SceneGraph>) {
        let scenes = vec![
            shoes_scene("a", 2, 0),
            shoes_scene("b", 1, 1),
            shoes_scene("c", 2, 3),
        ];
        let refs = scenes.iter().map(|s| s.image_ref.clone()).collect();
        let q = "How many images contain exactly 2 pink shoes?";
        (
            VqaInstance::new("pink", q, false, refs, vec!["2".into()], "t", None).unwrap(),
            scenes,
        )
    }

    #[test]
    fn pink_shoes_program_counts_matching_images() {
        let (inst, scenes) = pink_instance();
        let expected = scenes
            .iter()
            .filter(|s| {
                s.objects
                    .iter()
                    .filter(|o| o.name == "shoe" && o.attributes[0] == "pink")
                    .count()
                    == 2
            })
            .count();
        let lm = ScriptedLm::new().with_program(inst.text(), PINK);
        let e = engine(EngineConfig::multi_image(), lm, scenes);
        let (record, trace) = e.answer_instance(&inst, 0);
        assert_eq!(record.predicted, expected.to_string());
        assert!(!record.used_fallback);
        assert_eq!(trace.calls.len(), 3);
        assert_eq!(trace.code_examples.len(), 6);
        assert!(trace.fallback_reason.is_none());
        assert_eq!(record.trace_ref, "traces/pink.json");
    }

    #[test]
    fn runtime_error_falls_back_to_direct_query() {
        let (inst, scenes) = pink_instance();
        let lm = ScriptedLm::new().with_program(inst.text(), "answer = int(\"two\")\n");
        let e = engine(EngineConfig::multi_image(), lm, scenes.clone());
        let (record, trace) = e.answer_instance(&inst, 3);
        assert!(record.used_fallback);
        let reason = trace.fallback_reason.as_ref().unwrap();
        assert_eq!(reason.stage, FallbackStage::Runtime);
        assert_eq!(
            reason.runtime_kind,
            Some(RuntimeErrorKind::ConversionFailure)
        );
        assert_eq!(trace.fallback_captions.len(), 3);
        assert_eq!(record.predicted, "2");

        let baseline = EngineConfig {
            mode: RunMode::BaselineAlwaysFallback,
            ..EngineConfig::multi_image()
        };
        let b = engine(baseline, ScriptedLm::new(), scenes);
        let (brecord, btrace) = b.answer_instance(&inst, 3);
        assert_eq!(brecord.predicted, record.predicted);
        assert_eq!(btrace.qa_prompts, trace.qa_prompts);
        assert_eq!(
            btrace.fallback_reason.unwrap().stage,
            FallbackStage::Baseline
        );
        assert!(btrace.code_prompt.is_none());
    }

    #[test]
    fn each_failing_stage_is_recorded() {
        let scene = shoes_scene("a", 1, 0);
        let inst = VqaInstance::new(
            "x",
            "Is there a bed?",
            false,
            vec!["a".into()],
            vec!["yes".into()],
            "t",
            None,
        )
        .unwrap();
        let cases = [
            ("while True: pass", FallbackStage::Syntax),
            ("```\n```", FallbackStage::Extraction),
            ("x = 1\n", FallbackStage::Runtime),
            ("answer = open_image(\"a\")\n", FallbackStage::Runtime),
        ];
        for (program, stage) in cases {
            let lm = ScriptedLm::new().with_program(inst.text(), program);
            let e = engine(EngineConfig::single_image(), lm, vec![scene.clone()]);
            let (record, trace) = e.answer_instance(&inst, 0);
            assert_eq!(
                trace.fallback_reason.as_ref().unwrap().stage,
                stage,
                "{program}"
            );
            assert_eq!(record.predicted, "yes");
        }
        let strict = ScriptedLm::new().default_program(false);
        let e = engine(EngineConfig::single_image(), strict, vec![scene]);
        let (_, trace) = e.answer_instance(&inst, 0);
        assert_eq!(
            trace.fallback_reason.unwrap().stage,
            FallbackStage::Generation
        );
        assert!(!trace.backend_unreachable);
    }

    /// Vision host that describes itself but drops every other call.
    struct Flaky(OracleBackend);

    impl Backend for Flaky {
        fn describe(&self) -> Result<DescribeResponse, BackendError> {
            self.0.describe()
        }
        fn attention_with_grad(
            &self,
            _: &AttentionRequest,
        ) -> Result<AttentionResponse, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
        fn caption(&self, _: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
    }

    #[test]
    fn total_failure_answers_empty_and_flags_unreachable() {
        let scene = shoes_scene("a", 1, 0);
        let oracle = Arc::new(OracleBackend::new(vec![scene]).unwrap());
        let backends = Backends {
            code_lm: Arc::new(ScriptedLm::new()),
            vision: Arc::new(Flaky(OracleBackend::new(vec![]).unwrap())),
            ..Backends::uniform(oracle)
        };
        let e = Engine::new(EngineConfig::single_image(), backends, example_store()).unwrap();
        let inst = VqaInstance::new(
            "x",
            "Is there a bed?",
            false,
            vec!["a".into()],
            vec!["yes".into()],
            "t",
            None,
        )
        .unwrap();
        let (record, trace) = e.answer_instance(&inst, 0);
        assert_eq!(record.predicted, "");
        assert!(trace.fallback_used && trace.backend_unreachable);
        assert!(trace.fallback_error.is_some());
    }

    #[test]
    fn engine_rejects_mismatched_store_and_missing_code_examples() {
        let oracle: Arc<dyn Backend> = Arc::new(OracleBackend::new(vec![]).unwrap());
        let mut config = EngineConfig::single_image();
        let qa_only: Vec<_> = example_store()
            .examples()
            .iter()
            .filter(|e| e.kind.filter() == KindFilter::Qa)
            .cloned()
            .collect();
        let qa_only = ExampleStore::new(qa_only).unwrap();
        assert!(matches!(
            Engine::new(config.clone(), Backends::uniform(oracle.clone()), qa_only),
            Err(EngineError::Store(_))
        ));
        config.num_code_shots = 0;
        assert!(matches!(
            Engine::new(config, Backends::uniform(oracle), example_store()),
            Err(EngineError::Config(_))
        ));
    }

    #[test]
    fn timings_only_when_requested() {
        let (inst, scenes) = pink_instance();
        let lm = ScriptedLm::new().with_program(inst.text(), PINK);
        let e = engine(EngineConfig::multi_image(), lm.clone(), scenes.clone());
        assert!(e.answer_instance(&inst, 0).1.timings.is_none());
        let timed = EngineConfig {
            record_timings: true,
            ..EngineConfig::multi_image()
        };
        let t = engine(timed, lm, scenes)
            .answer_instance(&inst, 0)
            .1
            .timings
            .unwrap();
        assert!(t.execution_ms.is_some() && t.fallback_ms.is_none());
    }

    #[test]
    fn trace_names_are_filesystem_safe() {
        assert_eq!(trace_file_name("gqa/123 a"), "gqa_123_a.json");
        assert_eq!(trace_file_name("fx-001.b"), "fx-001.b.json");
    }
}
