//! Annotated in-context examples and nearest-neighbour retrieval.

use std::io::BufRead;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::DataError;
use crate::proglang::parse_source;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("requested {requested} examples but only {available} are available")]
    InsufficientExamples { requested: usize, available: usize },
    #[error("example store is empty")]
    EmptyStore,
    #[error("example {id}: {message}")]
    InvalidExample { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindFilter {
    Code,
    Qa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExampleKind {
    Code {
        program: String,
    },
    /// Captions are grouped per image, one inner list per image.
    Qa {
        captions: Vec<Vec<String>>,
        answer: String,
    },
}

impl ExampleKind {
    pub fn filter(&self) -> KindFilter {
        match self {
            ExampleKind::Code { .. } => KindFilter::Code,
            ExampleKind::Qa { .. } => KindFilter::Qa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExample", into = "RawExample")]
pub struct Example {
    pub id: String,
    pub question: String,
    pub kind: ExampleKind,
    pub embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    id: String,
    question: String,
    kind: KindFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captions: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    embedding: Vec<f64>,
}

impl TryFrom<RawExample> for Example {
    type Error = String;

    fn try_from(raw: RawExample) -> Result<Self, String> {
        let kind = match (raw.kind, raw.program, raw.captions, raw.answer) {
            (KindFilter::Code, Some(program), None, None) => ExampleKind::Code { program },
            (KindFilter::Qa, None, Some(captions), Some(answer)) => {
                ExampleKind::Qa { captions, answer }
            }
            (KindFilter::Code, ..) => return Err("code examples need exactly a `program`".into()),
            (KindFilter::Qa, ..) => {
                return Err("qa examples need `captions` and `answer` and no `program`".into())
            }
        };
        Ok(Example {
            id: raw.id,
            question: raw.question,
            kind,
            embedding: raw.embedding,
        })
    }
}

impl From<Example> for RawExample {
    fn from(e: Example) -> Self {
        let (kind, program, captions, answer) = match e.kind {
            ExampleKind::Code { program } => (KindFilter::Code, Some(program), None, None),
            ExampleKind::Qa { captions, answer } => {
                (KindFilter::Qa, None, Some(captions), Some(answer))
            }
        };
        RawExample {
            id: e.id,
            question: e.question,
            kind,
            program,
            captions,
            answer,
            embedding: e.embedding,
        }
    }
}

/// Immutable collection of examples sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleStore {
    examples: Vec<Example>,
    dimension: usize,
}

impl ExampleStore {
    /// Validates dimensions and that every code example parses.
    pub fn new(examples: Vec<Example>) -> Result<Self, RetrievalError> {
        let first = examples.first().ok_or(RetrievalError::EmptyStore)?;
        let dimension = first.embedding.len();
        for e in &examples {
            if e.embedding.len() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dimension,
                    found: e.embedding.len(),
                });
            }
            if e.embedding.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::InvalidExample {
                    id: e.id.clone(),
                    message: "embedding has non-finite entries".into(),
                });
            }
            if let ExampleKind::Code { program } = &e.kind {
                parse_source(program).map_err(|err| RetrievalError::InvalidExample {
                    id: e.id.clone(),
                    message: err.to_string(),
                })?;
            }
        }
        Ok(ExampleStore {
            examples,
            dimension,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        let mut examples = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DataError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let example: Example = serde_json::from_str(&line).map_err(|e| DataError::Format {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            examples.push(example);
        }
        ExampleStore::new(examples)
            .map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e).expect("examples serialize"));
            out.push('\n');
        }
        out
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, kind: KindFilter) -> usize {
        self.examples
            .iter()
            .filter(|e| e.kind.filter() == kind)
            .count()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }
}

/// Cosine similarity; a zero vector on either side scores 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// The `k` most similar examples of `kind`, most similar first. Equal
/// similarities keep store order.
pub fn top_k<'s>(
    query: &[f64],
    store: &'s ExampleStore,
    k: usize,
    kind: KindFilter,
) -> Result<Vec<&'s Example>, RetrievalError> {
    if query.len() != store.dimension {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dimension,
            found: query.len(),
        });
    }
    let mut scored = Vec::new();
    for e in store.examples.iter().filter(|e| e.kind.filter() == kind) {
        scored.push((cosine(query, &e.embedding)?, e));
    }
    check_k(k, scored.len())?;
    // `sort_by` is stable, so ties stay in store order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().take(k).map(|(_, e)| e).collect())
}

/// `k` distinct examples of `kind` drawn uniformly without replacement.
pub fn random_k<'s>(
    store: &'s ExampleStore,
    k: usize,
    kind: KindFilter,
    rng: &mut dyn RngCore,
) -> Result<Vec<&'s Example>, RetrievalError> {
    let pool: Vec<&Example> = store
        .examples
        .iter()
        .filter(|e| e.kind.filter() == kind)
        .collect();
    check_k(k, pool.len())?;
    Ok(rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

fn check_k(k: usize, available: usize) -> Result<(), RetrievalError> {
    if k == 0 || k > available {
        return Err(RetrievalError::InsufficientExamples {
            requested: k,
            available,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(id: &str, embedding: Vec<f64>) -> Example {
        Example {
            id: id.into(),
            question: format!("question {id}"),
            kind: ExampleKind::Code {
                program: "answer = 1".into(),
            },
            embedding,
        }
    }

    fn ids(v: &[&Example]) -> Vec<String> {
        v.iter().map(|e| e.id.clone()).collect()
    }

    /// Selection by repeated scans for the maximum, with similarity
    /// computed from scratch.
    fn brute_force(query: &[f64], store: &[Example], k: usize) -> Vec<String> {
        let sim = |e: &[f64]| {
            let mut dot = 0.0;
            let mut qq = 0.0;
            let mut ee = 0.0;
            for i in 0..e.len() {
                dot += query[i] * e[i];
                qq += query[i] * query[i];
                ee += e[i] * e[i];
            }
            if qq == 0.0 || ee == 0.0 {
                0.0
            } else {
                dot / (qq.sqrt() * ee.sqrt())
            }
        };
        let sims: Vec<f64> = store.iter().map(|e| sim(&e.embedding)).collect();
        let mut taken = vec![false; store.len()];
        let mut out = Vec::new();
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for i in 0..store.len() {
                if !taken[i] && best.is_none_or(|b| sims[i] > sims[b]) {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            out.push(store[b].id.clone());
        }
        out
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn top_k_examples() {
        let store = ExampleStore::new(vec![code("e1", vec![1.0, 0.0]), code("e2", vec![0.0, 1.0])])
            .unwrap();
        assert_eq!(
            ids(&top_k(&[1.0, 0.0], &store, 1, KindFilter::Code).unwrap()),
            ["e1"]
        );
        assert_eq!(
            ids(&top_k(&[0.2, 1.0], &store, 2, KindFilter::Code).unwrap()),
            ["e2", "e1"]
        );
        assert!(matches!(
            top_k(&[1.0, 0.0], &store, 3, KindFilter::Code),
            Err(RetrievalError::InsufficientExamples {
                requested: 3,
                available: 2
            })
        ));
        assert!(top_k(&[1.0, 0.0], &store, 1, KindFilter::Qa).is_err());
    }

    #[test]
    fn ties_keep_store_order() {
        let store = ExampleStore::new(vec![
            code("a", vec![1.0, 1.0]),
            code("b", vec![2.0, 2.0]),
            code("c", vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(
            ids(&top_k(&[1.0, 1.0], &store, 3, KindFilter::Code).unwrap()),
            ["a", "b", "c"]
        );
    }

    #[test]
    fn store_validation() {
        assert_eq!(ExampleStore::new(vec![]), Err(RetrievalError::EmptyStore));
        assert!(matches!(
            ExampleStore::new(vec![code("a", vec![1.0]), code("b", vec![1.0, 2.0])]),
            Err(RetrievalError::DimensionMismatch {
                expected: 1,
                found: 2
            })
        ));
        let mut bad = code("bad", vec![1.0]);
        bad.kind = ExampleKind::Code {
            program: "import os".into(),
        };
        assert!(matches!(
            ExampleStore::new(vec![bad]),
            Err(RetrievalError::InvalidExample { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let qa = Example {
            id: "q1".into(),
            question: "What color is the chair?".into(),
            kind: ExampleKind::Qa {
                captions: vec![vec!["a red chair".into()]],
                answer: "red".into(),
            },
            embedding: vec![0.5, 0.25],
        };
        let store = ExampleStore::new(vec![code("c1", vec![1.0, 0.0]), qa]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        std::fs::write(&path, store.to_jsonl()).unwrap();
        assert_eq!(ExampleStore::load(&path).unwrap(), store);
        assert!(store.to_jsonl().contains("\"kind\":\"qa\""));
        std::fs::write(&path, "{\"id\":\"x\"}\n").unwrap();
        assert!(matches!(
            ExampleStore::load(&path),
            Err(DataError::Format { line: 1, .. })
        ));
    }

    #[test]
    fn random_k_is_a_seeded_sample() {
        let store = ExampleStore::new(
            (0..50)
                .map(|i| code(&i.to_string(), vec![i as f64]))
                .collect(),
        )
        .unwrap();
        let draw = |seed| {
            ids(&random_k(
                &store,
                12,
                KindFilter::Code,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap())
        };
        assert_eq!(draw(3), draw(3));
        let all = random_k(
            &store,
            50,
            KindFilter::Code,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let mut sorted = ids(&all);
        sorted.sort_by_key(|s| s.parse::<usize>().unwrap());
        assert_eq!(sorted, (0..50).map(|i| i.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn random_k_inclusion_frequency() {
        let store =
            ExampleStore::new((0..50).map(|i| code(&i.to_string(), vec![1.0])).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut hits = [0usize; 50];
        for _ in 0..10_000 {
            for e in random_k(&store, 12, KindFilter::Code, &mut rng).unwrap() {
                hits[e.id.parse::<usize>().unwrap()] += 1;
            }
        }
        for h in hits {
            let freq = h as f64 / 10_000.0;
            assert!((freq - 0.24).abs() <= 0.02, "{freq}");
        }
    }

    #[test]
    fn top_k_matches_brute_force_on_random_stores() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..200 {
            let store: Vec<Example> = (0..50)
                .map(|i| {
                    code(
                        &i.to_string(),
                        (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    )
                })
                .collect();
            let query: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = if trial % 2 == 0 { 6 } else { 12 };
            let expected = brute_force(&query, &store, k);
            let store = ExampleStore::new(store).unwrap();
            assert_eq!(
                ids(&top_k(&query, &store, k, KindFilter::Code).unwrap()),
                expected
            );
        }
    }

    proptest! {
        #[test]
        fn top_k_is_permutation_invariant(
            embeddings in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..20),
            query in prop::collection::vec(-1.0f64..1.0, 4),
            seed in any::<u64>(),
        ) {
            let n = embeddings.len();
            let examples: Vec<Example> = embeddings
                .into_iter()
                .enumerate()
                .map(|(i, e)| code(&i.to_string(), e))
                .collect();
            let mut shuffled = examples.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = ExampleStore::new(examples).unwrap();
            let b = ExampleStore::new(shuffled).unwrap();
            let k = n.min(5);
            let ra = top_k(&query, &a, k, KindFilter::Code).unwrap();
            let rb = top_k(&query, &b, k, KindFilter::Code).unwrap();
            let sims = |v: &[&Example]| v.iter().map(|e| cosine(&query, &e.embedding).unwrap()).collect::<Vec<_>>();
            // Similarity profiles always agree; identities agree when no two
            // examples share a similarity.
            prop_assert_eq!(sims(&ra), sims(&rb));
            let all = sims(&a.examples().iter().collect::<Vec<_>>());
            let mut sorted = all.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).all(|w| w[0] != w[1]) {
                prop_assert_eq!(ids(&ra), ids(&rb));
            }
        }
    }
}
