//! File-backed run configuration and backend construction.
//!
//! Relative paths are resolved against the directory of the config file.
//! The only secret, the API bearer token, is read from the environment
//! variable named by `token_env` and never appears in the file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use codevqa_core::backends::cache::Cached;
use codevqa_core::backends::embed::HashEmbedder;
use codevqa_core::backends::http::{HttpBackend, HttpConfig};
use codevqa_core::backends::limit::{InFlightLimit, Limited};
use codevqa_core::backends::oracle::{OracleBackend, SceneGraph};
use codevqa_core::backends::scripted::{ScriptTable, ScriptedLm};
use codevqa_core::backends::Backend;
use codevqa_core::config::EngineConfig;
use codevqa_core::error::ConfigError;
use codevqa_core::harness::{Backends, DatasetFormat, Scoring};
use serde::{Deserialize, Serialize};

/// One model host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    Http(HttpConfig),
    /// Table-driven language model.
    Scripted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default_answer: Option<String>,
    },
    /// Scene-graph oracle over a directory of scene JSON files.
    Oracle {
        scenes: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<usize>,
    },
    /// Hashed bag-of-words embedder.
    Hash {
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub code_lm: BackendSpec,
    pub qa_lm: BackendSpec,
    pub vision: BackendSpec,
    pub embedder: BackendSpec,
}

fn default_output() -> PathBuf {
    PathBuf::from("codevqa-out")
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub dataset_format: DatasetFormat,
    pub example_store: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Response cache for HTTP backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Cap on concurrent requests across all HTTP backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub scoring: Scoring,
    pub backends: BackendsConfig,
    #[serde(default)]
    pub engine: EngineConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        let mut config = RunConfig::parse(&text)?;
        config.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations serialize")
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.dataset {
            fix(d);
        }
        fix(&mut self.example_store);
        fix(&mut self.output_dir);
        if let Some(c) = &mut self.cache_dir {
            fix(c);
        }
        for spec in [
            &mut self.backends.code_lm,
            &mut self.backends.qa_lm,
            &mut self.backends.vision,
            &mut self.backends.embedder,
        ] {
            match spec {
                BackendSpec::Scripted {
                    script: Some(p), ..
                } => fix(p),
                BackendSpec::Oracle { scenes, .. } => fix(scenes),
                _ => {}
            }
        }
    }

    /// Checks field values and that referenced paths exist.
    pub fn validate(&self, need_dataset: bool) -> Result<(), ConfigError> {
        self.engine.validate()?;
        let exists = |field: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::new(
                    field,
                    format!("{} does not exist", p.display()),
                ))
            }
        };
        match &self.dataset {
            Some(d) => exists("dataset", d)?,
            None if need_dataset => {
                return Err(ConfigError::new("dataset", "is required for eval"))
            }
            None => {}
        }
        exists("example_store", &self.example_store)?;
        if self.workers == 0 {
            return Err(ConfigError::new("workers", "must be strictly positive"));
        }
        if self.max_in_flight == Some(0) {
            return Err(ConfigError::new(
                "max_in_flight",
                "must be strictly positive",
            ));
        }
        for (role, spec) in self.roles() {
            match spec {
                BackendSpec::Scripted {
                    script: Some(p), ..
                } => exists(&format!("backends.{role}.script"), p)?,
                BackendSpec::Oracle { scenes, .. } => {
                    exists(&format!("backends.{role}.scenes"), scenes)?
                }
                BackendSpec::Hash { dim: 0 } => {
                    return Err(ConfigError::new(
                        format!("backends.{role}.dim"),
                        "must be strictly positive",
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn roles(&self) -> [(&'static str, &BackendSpec); 4] {
        [
            ("code_lm", &self.backends.code_lm),
            ("qa_lm", &self.backends.qa_lm),
            ("vision", &self.backends.vision),
            ("embedder", &self.backends.embedder),
        ]
    }

    /// Instantiates the backends. Roles with identical specs share one
    /// instance.
    pub fn build_backends(&self) -> Result<Backends, ConfigError> {
        let limit = self.max_in_flight.map(InFlightLimit::new);
        let mut built: HashMap<String, Arc<dyn Backend>> = HashMap::new();
        let mut out = Vec::with_capacity(4);
        for (role, spec) in self.roles() {
            let key = serde_json::to_string(spec).expect("backend specs serialize");
            let backend = match built.get(&key) {
                Some(b) => b.clone(),
                None => {
                    let b = self.build_one(role, spec, limit.clone())?;
                    built.insert(key, b.clone());
                    b
                }
            };
            out.push(backend);
        }
        let mut it = out.into_iter();
        let mut next = || it.next().expect("four roles");
        Ok(Backends {
            code_lm: next(),
            qa_lm: next(),
            vision: next(),
            embedder: next(),
        })
    }

    fn build_one(
        &self,
        role: &str,
        spec: &BackendSpec,
        limit: Option<Arc<InFlightLimit>>,
    ) -> Result<Arc<dyn Backend>, ConfigError> {
        let field = |name: &str| format!("backends.{role}.{name}");
        Ok(match spec {
            BackendSpec::Http(http) => {
                let client = HttpBackend::new(http.clone())
                    .map_err(|e| ConfigError::new(field("base_url"), e.to_string()))?;
                match limit {
                    Some(l) => with_cache(Limited::new(client, l), self.cache_dir.as_deref())?,
                    None => with_cache(client, self.cache_dir.as_deref())?,
                }
            }
            BackendSpec::Scripted {
                script,
                default_answer,
            } => {
                let table = match script {
                    Some(p) => ScriptTable::load(p)
                        .map_err(|e| ConfigError::new(field("script"), e.to_string()))?,
                    None => ScriptTable::default(),
                };
                Arc::new(ScriptedLm::from_table(table).default_answer(default_answer.clone()))
            }
            BackendSpec::Oracle { scenes, grid } => {
                let graphs = SceneGraph::load_dir(scenes)
                    .map_err(|e| ConfigError::new(field("scenes"), e.to_string()))?;
                let oracle = match grid {
                    Some(g) => OracleBackend::with_grid(graphs, *g, *g),
                    None => OracleBackend::new(graphs),
                }
                .map_err(|e| ConfigError::new(field("scenes"), e))?;
                Arc::new(oracle)
            }
            BackendSpec::Hash { dim } => Arc::new(HashEmbedder::new(*dim)),
        })
    }
}

fn with_cache<B: Backend + 'static>(
    backend: B,
    dir: Option<&Path>,
) -> Result<Arc<dyn Backend>, ConfigError> {
    Ok(match dir {
        Some(dir) => Arc::new(
            Cached::new(backend, dir).map_err(|e| ConfigError::new("cache_dir", e.to_string()))?,
        ),
        None => Arc::new(backend),
    })
}
