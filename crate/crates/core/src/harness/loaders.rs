//! Dataset loaders adapting raw layouts into normalized instances.
//!
//! Layouts accepted:
//! - `normalized`: JSONL of [`VqaInstance`] objects.
//! - `gqa`: one JSON object keyed by question id, each value holding
//!   `question`, `answer`, `imageId` and optional `types`.
//! - `covr`: JSONL with `qid`, `question`, `answer`, `scenes` and optional
//!   `pattern_name`.
//! - `nlvr2`: JSONL with `identifier`, `sentence` and `label`; the image
//!   pair is `<prefix>-img0.png` and `<prefix>-img1.png` where the prefix
//!   is the identifier without its last `-` component.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::instance::{normalize_bool_answer, statement_to_question, VqaInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Normalized,
    Gqa,
    Covr,
    Nlvr2,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normalized" => Ok(DatasetFormat::Normalized),
            "gqa" => Ok(DatasetFormat::Gqa),
            "covr" => Ok(DatasetFormat::Covr),
            "nlvr2" => Ok(DatasetFormat::Nlvr2),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

#[derive(Deserialize)]
struct GqaTypes {
    #[serde(default)]
    structural: Option<String>,
    #[serde(default)]
    detailed: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct GqaRecord {
    question: String,
    answer: String,
    image_id: String,
    #[serde(default)]
    types: Option<GqaTypes>,
}

#[derive(Deserialize)]
struct CovrRecord {
    qid: String,
    question: String,
    answer: String,
    scenes: Vec<String>,
    #[serde(default)]
    pattern_name: Option<String>,
}

#[derive(Deserialize)]
struct Nlvr2Record {
    identifier: String,
    sentence: String,
    label: String,
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
) -> Result<Vec<VqaInstance>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let label = path.display().to_string();
    match format {
        DatasetFormat::Normalized => jsonl(&text, &label, |inst: VqaInstance| Ok(inst)),
        DatasetFormat::Gqa => gqa(&text, &label),
        DatasetFormat::Covr => jsonl(&text, &label, |r: CovrRecord| {
            VqaInstance::new(
                r.qid,
                r.question,
                false,
                r.scenes,
                vec![normalize_bool_answer(&r.answer)],
                "covr",
                r.pattern_name,
            )
        }),
        DatasetFormat::Nlvr2 => jsonl(&text, &label, |r: Nlvr2Record| {
            let prefix = r
                .identifier
                .rsplit_once('-')
                .map_or(r.identifier.as_str(), |(p, _)| p);
            let images = vec![format!("{prefix}-img0.png"), format!("{prefix}-img1.png")];
            VqaInstance::new(
                r.identifier.clone(),
                statement_to_question(&r.sentence),
                true,
                images,
                vec![normalize_bool_answer(&r.label)],
                "nlvr2",
                None,
            )
        }),
    }
}

/// Parses each non-blank line as `T` and converts it; errors carry the
/// 1-based line number.
fn jsonl<T: DeserializeOwned>(
    text: &str,
    path: &str,
    convert: impl Fn(T) -> Result<VqaInstance, DataError>,
) -> Result<Vec<VqaInstance>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError::Format {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let raw: T = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        out.push(convert(raw).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

fn gqa(text: &str, path: &str) -> Result<Vec<VqaInstance>, DataError> {
    let records: BTreeMap<String, GqaRecord> =
        serde_json::from_str(text).map_err(|e| DataError::Format {
            path: path.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
    records
        .into_iter()
        .map(|(qid, r)| {
            let qt = r.types.and_then(|t| t.detailed.or(t.structural));
            VqaInstance::new(
                qid,
                r.question,
                false,
                vec![r.image_id],
                vec![r.answer],
                "gqa",
                qt,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn nlvr2_statements_become_questions() {
        let f = file(
            "{\"identifier\":\"dev-850-0-0\",\"sentence\":\"There are two dogs.\",\"label\":\"True\"}\n\
             {\"identifier\":\"dev-850-0-1\",\"sentence\":\"One image shows a panda\",\"label\":\"false\"}\n",
        );
        let got = load_dataset(f.path(), DatasetFormat::Nlvr2).unwrap();
        assert_eq!(got[0].text(), "Is it true that there are two dogs?");
        assert_eq!(got[0].gold_answers(), ["yes"]);
        assert!(got[0].is_statement());
        assert_eq!(
            got[0].image_refs(),
            ["dev-850-0-img0.png", "dev-850-0-img1.png"]
        );
        assert_eq!(got[1].gold_answers(), ["no"]);
    }

    #[test]
    fn normalized_round_trip() {
        let a = VqaInstance::new(
            "a",
            "Is there a cat?",
            false,
            vec!["i1".into()],
            vec!["yes".into()],
            "gqa",
            None,
        )
        .unwrap();
        let b = VqaInstance::new(
            "b",
            "How many?",
            false,
            vec!["i1".into(), "i2".into()],
            vec!["2".into(), "two".into()],
            "covr",
            Some("count".into()),
        )
        .unwrap();
        let f = file(&format!("{}\n\n{}\n", a.to_jsonl(), b.to_jsonl()));
        assert_eq!(
            load_dataset(f.path(), DatasetFormat::Normalized).unwrap(),
            vec![a, b]
        );
    }

    #[test]
    fn malformed_line_is_named() {
        let good = "{\"id\":\"a\",\"text\":\"q\",\"image_refs\":[\"x\"],\"gold_answers\":[\"y\"],\"dataset\":\"d\"}\n";
        let mut text = good.repeat(6);
        text.push_str("{\"id\": \n");
        let f = file(&text);
        match load_dataset(f.path(), DatasetFormat::Normalized) {
            Err(DataError::Format { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        let empty_refs = "{\"id\":\"a\",\"text\":\"q\",\"image_refs\":[],\"gold_answers\":[\"y\"],\"dataset\":\"d\"}\n";
        let f = file(&format!("{good}{empty_refs}"));
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Normalized),
            Err(DataError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn gqa_and_covr_layouts() {
        let f = file(
            r#"{"q2":{"question":"Is the cup left of the plate?","answer":"yes","imageId":"n1","types":{"structural":"verify","detailed":"relVerify"}},
                "q1":{"question":"What color?","answer":"red","imageId":"n2"}}"#,
        );
        let got = load_dataset(f.path(), DatasetFormat::Gqa).unwrap();
        assert_eq!(got[0].id(), "q1");
        assert_eq!(got[1].question_type(), Some("relVerify"));
        let f = file("{\"qid\":\"c1\",\"question\":\"How many?\",\"answer\":\"True\",\"scenes\":[\"s1\",\"s2\"],\"pattern_name\":\"count\"}\n");
        let got = load_dataset(f.path(), DatasetFormat::Covr).unwrap();
        assert_eq!(got[0].num_images(), 2);
        assert_eq!(got[0].gold_answers(), ["yes"]);
        assert_eq!(got[0].question_type(), Some("count"));
        assert!(matches!(
            load_dataset("/nonexistent/x.jsonl", DatasetFormat::Covr),
            Err(DataError::Io { .. })
        ));
        assert_eq!("nlvr2".parse::<DatasetFormat>(), Ok(DatasetFormat::Nlvr2));
        assert!("csv".parse::<DatasetFormat>().is_err());
    }
}
