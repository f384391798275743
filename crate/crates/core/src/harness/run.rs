//! Concurrent evaluation runs and their on-disk outputs.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::engine::{trace_file_name, Engine, Trace};
use super::eval::{evaluate, EvalError, EvalReport, Scoring};
use crate::config::EngineConfig;
use crate::instance::{AnswerRecord, VqaInstance};
use crate::ENGINE_VERSION;

#[derive(Debug, Default)]
pub struct RunOptions {
    /// Worker threads; 0 is treated as 1.
    pub workers: usize,
    pub scoring: Scoring,
    /// When set, workers stop taking new instances and the run is
    /// reported as partial.
    pub stop: Option<&'static AtomicBool>,
}

/// Run metadata written next to the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine_version: String,
    pub mode: String,
    pub retrieval: String,
    pub seed: u64,
    pub config_hash: String,
    pub instances_total: usize,
    pub instances_answered: usize,
    pub partial: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// In instance order; instances skipped by a stop request are absent.
    pub records: Vec<AnswerRecord>,
    pub traces: Vec<Trace>,
    pub report: EvalReport,
    pub manifest: Manifest,
}

/// SHA-256 of the configuration's JSON form, hex encoded.
pub fn config_hash(config: &EngineConfig) -> String {
    let json = serde_json::to_string(config).expect("configurations serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Answers every instance with a pool of workers and scores the result.
/// Instance `i` always uses seed `rng_seed ^ i`, so results do not depend
/// on scheduling.
pub fn run_eval(
    engine: &Engine,
    instances: &[VqaInstance],
    opts: &RunOptions,
) -> Result<RunOutput, EvalError> {
    let slots: Vec<Mutex<Option<(AnswerRecord, Trace)>>> =
        instances.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let workers = opts.workers.max(1).min(instances.len().max(1));
    let stopped = || opts.stop.is_some_and(|s| s.load(Ordering::SeqCst));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stopped() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(instance) = instances.get(i) else {
                    break;
                };
                let result = engine.answer_instance(instance, i);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(result);
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                if n.is_multiple_of(50) || n == instances.len() {
                    log::info!("answered {n}/{}", instances.len());
                }
            });
        }
    });

    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut answered = Vec::new();
    for (slot, inst) in slots.into_iter().zip(instances) {
        if let Some((r, t)) = slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
            records.push(r);
            traces.push(t);
            answered.push(inst.clone());
        }
    }
    let partial = answered.len() < instances.len();
    let mut report = evaluate(&records, &answered, opts.scoring)?;
    report.partial = partial;
    let config = engine.config();
    let manifest = Manifest {
        engine_version: ENGINE_VERSION.to_string(),
        mode: config.mode.as_str().to_string(),
        retrieval: match config.retrieval {
            crate::config::RetrievalMode::Embedding => "embedding",
            crate::config::RetrievalMode::Random => "random",
        }
        .to_string(),
        seed: config.rng_seed,
        config_hash: config_hash(config),
        instances_total: instances.len(),
        instances_answered: answered.len(),
        partial,
    };
    Ok(RunOutput {
        records,
        traces,
        report,
        manifest,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// Writes `report.json`, `manifest.json` and `traces/<id>.json` under `dir`.
pub fn write_outputs(dir: &Path, output: &RunOutput) -> std::io::Result<()> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces)?;
    for t in &output.traces {
        write_json(&traces.join(trace_file_name(&t.instance_id)), t)?;
    }
    write_json(&dir.join("report.json"), &output.report)?;
    write_json(&dir.join("manifest.json"), &output.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::oracle::OracleBackend;
    use crate::backends::scripted::ScriptedLm;
    use crate::fixtures::generate;
    use crate::harness::engine::Backends;
    use std::sync::Arc;

    fn engine(set: &crate::fixtures::FixtureSet) -> Engine {
        let oracle = Arc::new(OracleBackend::new(set.scenes()).unwrap());
        let backends = Backends {
            code_lm: Arc::new(ScriptedLm::from_table(set.script())),
            ..Backends::uniform(oracle)
        };
        Engine::new(EngineConfig::multi_image(), backends, set.store.clone()).unwrap()
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let set = generate(11, 15);
        let e = engine(&set);
        let inst = set.instances();
        let one = run_eval(
            &e,
            &inst,
            &RunOptions {
                workers: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let four = run_eval(
            &e,
            &inst,
            &RunOptions {
                workers: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(one.traces, four.traces);
        assert_eq!(one.report, four.report);
        assert_eq!(one.report.accuracy, 1.0);
        assert!(!one.manifest.partial);
    }

    #[test]
    fn stop_request_yields_partial_report() {
        static STOP: AtomicBool = AtomicBool::new(true);
        let set = generate(2, 5);
        let e = engine(&set);
        let out = run_eval(
            &e,
            &set.instances(),
            &RunOptions {
                workers: 2,
                stop: Some(&STOP),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.report.partial && out.manifest.partial);
        assert_eq!(out.report.total, 0);
        assert_eq!(out.manifest.instances_answered, 0);
    }

    #[test]
    fn outputs_land_on_disk() {
        let set = generate(4, 5);
        let e = engine(&set);
        let out = run_eval(&e, &set.instances(), &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &out).unwrap();
        assert!(dir.path().join("report.json").exists());
        let manifest: Manifest = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest, out.manifest);
        assert_eq!(
            std::fs::read_dir(dir.path().join("traces"))
                .unwrap()
                .count(),
            5
        );
        assert_eq!(manifest.config_hash.len(), 64);
    }
}
