//! Exact-match scoring and per-group accuracy tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{AnswerRecord, VqaInstance};

/// Group used for instances without a question type.
pub const UNTAGGED: &str = "untagged";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no answer record for instance {0}")]
    MissingRecord(String),
    #[error("unknown breakdown key {0:?}; expected question_type or num_images")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// 1 when the lowercased prediction equals any lowercased gold answer.
    #[default]
    ExactMatch,
    /// `min(matching gold answers / 3, 1)`, for multi-annotator golds.
    Soft,
}

/// Score of one prediction against its gold answers.
pub fn score(predicted: &str, golds: &[String], scoring: Scoring) -> f64 {
    let p = predicted.to_lowercase();
    let matches = golds.iter().filter(|g| g.to_lowercase() == p).count();
    match scoring {
        Scoring::ExactMatch => {
            if matches > 0 {
                1.0
            } else {
                0.0
            }
        }
        Scoring::Soft => (matches as f64 / 3.0).min(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    /// Sum of scores; the number of correct answers under exact match.
    pub correct: f64,
    pub accuracy: f64,
    pub fallback_count: usize,
}

impl GroupStats {
    fn add(&mut self, s: f64, fallback: bool) {
        self.count += 1;
        self.correct += s;
        self.fallback_count += usize::from(fallback);
        self.accuracy = self.correct / self.count as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scoring: Scoring,
    pub total: usize,
    pub correct: f64,
    pub accuracy: f64,
    pub fallback_count: usize,
    pub fallback_rate: f64,
    pub by_question_type: BTreeMap<String, GroupStats>,
    pub by_num_images: BTreeMap<usize, GroupStats>,
    /// The run stopped before every instance was answered.
    pub partial: bool,
}

/// Scores one record per instance. Records for instances not in
/// `instances` are ignored.
pub fn evaluate(
    records: &[AnswerRecord],
    instances: &[VqaInstance],
    scoring: Scoring,
) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &AnswerRecord> = records
        .iter()
        .map(|r| (r.instance_id.as_str(), r))
        .collect();
    let mut overall = GroupStats::default();
    let mut by_question_type: BTreeMap<String, GroupStats> = BTreeMap::new();
    let mut by_num_images: BTreeMap<usize, GroupStats> = BTreeMap::new();
    for inst in instances {
        let record = by_id
            .get(inst.id())
            .ok_or_else(|| EvalError::MissingRecord(inst.id().to_string()))?;
        let s = score(&record.predicted, inst.gold_answers(), scoring);
        overall.add(s, record.used_fallback);
        let qt = inst.question_type().unwrap_or(UNTAGGED).to_string();
        by_question_type
            .entry(qt)
            .or_default()
            .add(s, record.used_fallback);
        by_num_images
            .entry(inst.num_images())
            .or_default()
            .add(s, record.used_fallback);
    }
    let total = overall.count;
    let ratio = |n: f64| if total == 0 { 0.0 } else { n / total as f64 };
    Ok(EvalReport {
        scoring,
        total,
        correct: overall.correct,
        accuracy: ratio(overall.correct),
        fallback_count: overall.fallback_count,
        fallback_rate: ratio(overall.fallback_count as f64),
        by_question_type,
        by_num_images,
        partial: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub group: String,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownTable {
    pub key: String,
    pub rows: Vec<BreakdownRow>,
}

/// Per-group accuracy for `key`, one of `question_type` or `num_images`.
/// Rows are sorted by group; empty groups never appear.
pub fn breakdown(report: &EvalReport, key: &str) -> Result<BreakdownTable, EvalError> {
    let row = |group: String, g: &GroupStats| BreakdownRow {
        group,
        count: g.count,
        accuracy: g.accuracy,
    };
    let rows = match key {
        "question_type" => report
            .by_question_type
            .iter()
            .map(|(k, g)| row(k.clone(), g))
            .collect(),
        "num_images" => report
            .by_num_images
            .iter()
            .map(|(k, g)| row(k.to_string(), g))
            .collect(),
        other => return Err(EvalError::UnknownKey(other.to_string())),
    };
    Ok(BreakdownTable {
        key: key.to_string(),
        rows,
    })
}

impl BreakdownTable {
    /// Plain-text table with accuracy as a percentage.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.group.len())
            .chain([self.key.len()])
            .max()
            .unwrap_or(0);
        let mut out = format!("{:<width$}  {:>5}  {:>8}\n", self.key, "count", "accuracy");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>7.1}%",
                r.group,
                r.count,
                r.accuracy * 100.0
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(id: &str, golds: &[&str], images: usize, qt: Option<&str>) -> VqaInstance {
        VqaInstance::new(
            id,
            "q?",
            false,
            (0..images).map(|i| format!("{id}-{i}")).collect(),
            golds.iter().map(|g| g.to_string()).collect(),
            "t",
            qt.map(String::from),
        )
        .unwrap()
    }

    fn rec(id: &str, predicted: &str, fallback: bool) -> AnswerRecord {
        AnswerRecord {
            instance_id: id.into(),
            predicted: predicted.into(),
            used_fallback: fallback,
            trace_ref: String::new(),
        }
    }

    #[test]
    fn lowercasing_and_string_level_matching() {
        assert_eq!(score("Yes", &["yes".into()], Scoring::ExactMatch), 1.0);
        assert_eq!(score("two", &["2".into()], Scoring::ExactMatch), 0.0);
        let golds: Vec<String> = [
            "red", "red", "red", "blue", "dark red", "maroon", "red ", "crimson", "pink", "orange",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(score("red", &golds, Scoring::Soft), 1.0);
    }

    #[test]
    fn groups_and_missing_records() {
        let instances = vec![
            inst("a", &["yes"], 2, Some("and")),
            inst("b", &["2"], 3, None),
            inst("c", &["no"], 4, Some("and")),
            inst("d", &["no"], 2, None),
        ];
        let records = vec![
            rec("a", "YES", false),
            rec("b", "3", true),
            rec("c", "no", false),
            rec("d", "no", true),
        ];
        let r = evaluate(&records, &instances, Scoring::ExactMatch).unwrap();
        assert_eq!((r.total, r.correct, r.accuracy), (4, 3.0, 0.75));
        assert_eq!(r.fallback_rate, 0.5);
        assert_eq!(r.by_question_type[UNTAGGED].count, 2);
        let t = breakdown(&r, "num_images").unwrap();
        let groups: Vec<(&str, usize)> =
            t.rows.iter().map(|r| (r.group.as_str(), r.count)).collect();
        assert_eq!(groups, [("2", 2), ("3", 1), ("4", 1)]);
        assert!(t.render().contains("num_images"));
        assert_eq!(
            breakdown(&r, "dataset"),
            Err(EvalError::UnknownKey("dataset".into()))
        );
        assert_eq!(
            evaluate(&records[..2], &instances, Scoring::ExactMatch),
            Err(EvalError::MissingRecord("c".into()))
        );
    }

    #[test]
    fn single_group_equals_overall() {
        let instances = vec![inst("a", &["x"], 1, None), inst("b", &["y"], 1, None)];
        let records = vec![rec("a", "x", false), rec("b", "z", false)];
        let r = evaluate(&records, &instances, Scoring::ExactMatch).unwrap();
        let t = breakdown(&r, "question_type").unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].group, UNTAGGED);
        assert_eq!(t.rows[0].accuracy, r.accuracy);
    }

    proptest! {
        #[test]
        fn accuracy_is_exact_ratio_and_groups_sum(
            rows in prop::collection::vec((1usize..6, any::<bool>(), 0usize..3), 1..40),
        ) {
            let tags = ["spatial", "and", "or"];
            let instances: Vec<VqaInstance> = rows
                .iter()
                .enumerate()
                .map(|(i, (n, _, t))| inst(&format!("i{i}"), &["yes"], *n, Some(tags[*t])))
                .collect();
            let records: Vec<AnswerRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, (_, ok, _))| rec(&format!("i{i}"), if *ok { "yes" } else { "no" }, false))
                .collect();
            let r = evaluate(&records, &instances, Scoring::ExactMatch).unwrap();
            let correct = rows.iter().filter(|(_, ok, _)| *ok).count();
            prop_assert_eq!(r.accuracy, correct as f64 / rows.len() as f64);
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
            prop_assert_eq!(r.by_num_images.values().map(|g| g.count).sum::<usize>(), r.total);
            prop_assert_eq!(r.by_question_type.values().map(|g| g.count).sum::<usize>(), r.total);

            let mut more_inst = instances.clone();
            more_inst.push(inst("extra", &["yes"], 1, None));
            let mut more_rec = records.clone();
            more_rec.push(rec("extra", "yes", false));
            let r2 = evaluate(&more_rec, &more_inst, Scoring::ExactMatch).unwrap();
            prop_assert!(r2.accuracy >= r.accuracy);
        }
    }
}
