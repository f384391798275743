//! Engine configuration: counts, coordinate frame and sandbox limits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::proglang::InterpreterLimits;

/// Coordinate system exposed to generated programs.
///
/// `left`/`bottom`/`right`/`top` are the constants rendered into the code
/// prompt; the grid is the vision encoder's patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateFrame {
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
    pub top: f64,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl CoordinateFrame {
    pub fn new(
        left: f64,
        bottom: f64,
        right: f64,
        top: f64,
        grid_w: usize,
        grid_h: usize,
    ) -> Result<Self, ConfigError> {
        let frame = CoordinateFrame {
            left,
            bottom,
            right,
            top,
            grid_w,
            grid_h,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite = [self.left, self.bottom, self.right, self.top]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ConfigError::new(
                "coordinate_frame",
                "bounds must be finite",
            ));
        }
        if self.left >= self.right {
            return Err(ConfigError::new("coordinate_frame", "left must be < right"));
        }
        if self.bottom >= self.top {
            return Err(ConfigError::new("coordinate_frame", "bottom must be < top"));
        }
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(ConfigError::new(
                "coordinate_frame",
                "grid dimensions must be >= 1",
            ));
        }
        Ok(())
    }

    /// Same bounds on a different patch grid.
    pub fn with_grid(self, grid_w: usize, grid_h: usize) -> Self {
        CoordinateFrame {
            grid_w,
            grid_h,
            ..self
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.left && x <= self.right && y >= self.bottom && y <= self.top
    }
}

impl Default for CoordinateFrame {
    fn default() -> Self {
        CoordinateFrame {
            left: 0.0,
            bottom: 0.0,
            right: 24.0,
            top: 24.0,
            grid_w: 24,
            grid_h: 24,
        }
    }
}

/// Order of retrieved in-context examples inside a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleOrder {
    MostSimilarFirst,
    /// Most similar example sits right before the test question.
    #[default]
    MostSimilarLast,
}

/// How in-context examples are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    #[default]
    Embedding,
    Random,
}

/// Whether generated programs are used at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Codevqa,
    /// Skip program generation and answer every question with the
    /// caption-QA procedure.
    BaselineAlwaysFallback,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Codevqa => "codevqa",
            RunMode::BaselineAlwaysFallback => "baseline-always-fallback",
        }
    }
}

/// Dataset layout the prompts are written for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    #[default]
    SingleImage,
    MultiImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub flavor: Flavor,
    pub num_code_shots: usize,
    pub num_qa_shots: usize,
    pub captions_per_image: usize,
    pub num_patch_samples: usize,
    pub gradcam_layer: usize,
    pub max_caption_rounds: usize,
    pub detection_threshold: f64,
    pub coordinate_frame: CoordinateFrame,
    pub rng_seed: u64,
    pub limits: InterpreterLimits,
    pub mode: RunMode,
    pub retrieval: RetrievalMode,
    pub example_order: ExampleOrder,
    /// Extra primitives from the extended API (`find_object`, `knowledge_query`)
    /// documented in the code prompt.
    pub extended_primitives: bool,
    pub code_model: String,
    pub qa_model: String,
    pub code_max_tokens: u32,
    pub qa_max_tokens: u32,
    pub temperature: f64,
    /// Token strings suppressed in `knowledge_query` completions.
    pub knowledge_bias_tokens: Vec<String>,
    pub knowledge_bias_value: i32,
    /// Prompt size (estimated tokens) above which a warning is logged.
    pub max_prompt_tokens: usize,
    /// Record wall-clock stage timings in traces. Off by default because it
    /// makes traces differ between otherwise identical runs.
    pub record_timings: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::single_image()
    }
}

impl EngineConfig {
    /// GQA-style single-image defaults: 12 shots, 7 captions.
    pub fn single_image() -> Self {
        EngineConfig {
            flavor: Flavor::SingleImage,
            num_code_shots: 12,
            num_qa_shots: 12,
            captions_per_image: 7,
            num_patch_samples: 20,
            gradcam_layer: 6,
            max_caption_rounds: 10,
            detection_threshold: 0.5,
            coordinate_frame: CoordinateFrame::default(),
            rng_seed: 0,
            limits: InterpreterLimits::default(),
            mode: RunMode::Codevqa,
            retrieval: RetrievalMode::Embedding,
            example_order: ExampleOrder::default(),
            extended_primitives: false,
            code_model: "code-davinci-002".to_string(),
            qa_model: "code-davinci-002".to_string(),
            code_max_tokens: 256,
            qa_max_tokens: 10,
            temperature: 0.0,
            knowledge_bias_tokens: vec!["-".to_string(), "to".to_string(), "°".to_string()],
            knowledge_bias_value: -100,
            max_prompt_tokens: 8000,
            record_timings: false,
        }
    }

    /// COVR-style multi-image defaults: 6 shots, 3 captions per image.
    pub fn multi_image() -> Self {
        EngineConfig {
            flavor: Flavor::MultiImage,
            num_code_shots: 6,
            num_qa_shots: 6,
            captions_per_image: 3,
            ..EngineConfig::single_image()
        }
    }

    /// NLVR2-style image pairs: multi-image prompts with 7 captions per image.
    pub fn image_pair() -> Self {
        EngineConfig {
            captions_per_image: 7,
            ..EngineConfig::multi_image()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("num_code_shots", self.num_code_shots),
            ("num_qa_shots", self.num_qa_shots),
            ("captions_per_image", self.captions_per_image),
            ("num_patch_samples", self.num_patch_samples),
            ("gradcam_layer", self.gradcam_layer),
            ("max_caption_rounds", self.max_caption_rounds),
            ("max_prompt_tokens", self.max_prompt_tokens),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(ConfigError::new(field, "must be strictly positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(ConfigError::new(
                "detection_threshold",
                "must lie in [0, 1]",
            ));
        }
        self.coordinate_frame.validate()?;
        self.limits.validate()?;
        Ok(())
    }

    /// The logit-bias map sent with `knowledge_query` completions.
    pub fn knowledge_logit_bias(&self) -> BTreeMap<String, i32> {
        self.knowledge_bias_tokens
            .iter()
            .map(|t| (t.clone(), self.knowledge_bias_value))
            .collect()
    }
}
