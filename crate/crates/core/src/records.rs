//! Prediction records: the per-example inputs every metric in this crate consumes.
//!
//! A record file is newline-delimited JSON, one object per line. Field names are
//! the snake_case names of [`PredictionRecord`]. Fields this crate does not know
//! about are kept in [`PredictionRecord::extra`] and written back unchanged.
//!
//! The three simulator correctness indicators may be given directly (`0`/`1`) or
//! derived from per-choice probability vectors (`sim_full_probs`,
//! `sim_input_only_probs`, `sim_expl_only_probs`). When both are present the
//! indicator wins.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Tolerance on `sum(probs) == 1` accepted by [`derive_correctness`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("empty probability vector")]
    EmptyVector,
    #[error("probability vector sums to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
}

/// One problem found while reading a record file.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {field}: {message}")]
pub struct LineError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} invalid line(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<LineError>),
    #[error("no records in input")]
    Empty,
}

mod indicator {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_u8(u8::from(*b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Bool(bool),
        }
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Bool(b)) => Ok(Some(b)),
            Some(Raw::Int(0)) => Ok(Some(false)),
            Some(Raw::Int(1)) => Ok(Some(true)),
            Some(Raw::Int(other)) => Err(de::Error::custom(format!(
                "indicator must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// One evaluated example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub explanation_source: String,
    pub dataset_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_tag: Option<String>,
    pub choices: Vec<String>,
    pub model_output_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation_text: Option<String>,
    #[serde(default, with = "indicator", skip_serializing_if = "Option::is_none")]
    pub sim_full_correct: Option<bool>,
    #[serde(default, with = "indicator", skip_serializing_if = "Option::is_none")]
    pub sim_input_only_correct: Option<bool>,
    #[serde(default, with = "indicator", skip_serializing_if = "Option::is_none")]
    pub sim_expl_only_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_expl_only_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_expl_only_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_rating: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_full_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_input_only_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_expl_only_probs: Option<Vec<f64>>,
    /// Unknown fields, preserved in input order.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PredictionRecord {
    /// A record with the required fields set and every optional field empty.
    pub fn new(
        example_id: impl Into<String>,
        explanation_source: impl Into<String>,
        dataset_tag: impl Into<String>,
        choices: Vec<String>,
        model_output_index: usize,
    ) -> Self {
        Self {
            example_id: example_id.into(),
            explanation_source: explanation_source.into(),
            dataset_tag: dataset_tag.into(),
            seed_tag: None,
            choices,
            model_output_index,
            gold_label_index: None,
            explanation_text: None,
            sim_full_correct: None,
            sim_input_only_correct: None,
            sim_expl_only_correct: None,
            sim_expl_only_prob: None,
            sim_expl_only_score: None,
            human_rating: None,
            sim_full_probs: None,
            sim_input_only_probs: None,
            sim_expl_only_probs: None,
            extra: Map::new(),
        }
    }

    /// Sets the three correctness indicators (x+ê, x only, ê only).
    pub fn with_indicators(mut self, full: bool, input_only: bool, expl_only: bool) -> Self {
        self.sim_full_correct = Some(full);
        self.sim_input_only_correct = Some(input_only);
        self.sim_expl_only_correct = Some(expl_only);
        self
    }

    fn indicator(
        &self,
        given: Option<bool>,
        probs: &Option<Vec<f64>>,
        name: &'static str,
    ) -> Result<bool, RecordError> {
        match (given, probs) {
            (Some(v), _) => Ok(v),
            (None, Some(p)) => derive_correctness(p, self.model_output_index),
            (None, None) => Err(RecordError::MissingField(name)),
        }
    }

    /// 𝟙[ŷ|x,ê]
    pub fn full_correct(&self) -> Result<bool, RecordError> {
        self.indicator(self.sim_full_correct, &self.sim_full_probs, "sim_full_correct")
    }

    /// 𝟙[ŷ|x]
    pub fn input_only_correct(&self) -> Result<bool, RecordError> {
        self.indicator(
            self.sim_input_only_correct,
            &self.sim_input_only_probs,
            "sim_input_only_correct",
        )
    }

    /// 𝟙[ŷ|ê]
    pub fn expl_only_correct(&self) -> Result<bool, RecordError> {
        self.indicator(
            self.sim_expl_only_correct,
            &self.sim_expl_only_probs,
            "sim_expl_only_correct",
        )
    }

    /// p(ŷ|ê), falling back to the probability vector entry for ŷ.
    pub fn expl_only_prob(&self) -> Option<f64> {
        self.sim_expl_only_prob.or_else(|| {
            self.sim_expl_only_probs
                .as_ref()
                .and_then(|p| p.get(self.model_output_index).copied())
        })
    }

    /// Checks every record invariant, reporting `(field, message)` pairs.
    pub fn check(&self) -> Vec<(String, String)> {
        let mut problems = Vec::new();
        let n = self.choices.len();
        if n < 2 {
            problems.push(("choices".into(), format!("need at least 2 choices, got {n}")));
        }
        if self.model_output_index >= n {
            problems.push((
                "model_output_index".into(),
                format!("index out of range: {} >= {n}", self.model_output_index),
            ));
        }
        if let Some(g) = self.gold_label_index {
            if g >= n {
                problems.push((
                    "gold_label_index".into(),
                    format!("index out of range: {g} >= {n}"),
                ));
            }
        }
        if self.model_output_index < n {
            for (name, res, probs) in [
                ("sim_full_correct", self.full_correct(), &self.sim_full_probs),
                (
                    "sim_input_only_correct",
                    self.input_only_correct(),
                    &self.sim_input_only_probs,
                ),
                (
                    "sim_expl_only_correct",
                    self.expl_only_correct(),
                    &self.sim_expl_only_probs,
                ),
            ] {
                if let Err(e) = res {
                    problems.push((name.into(), e.to_string()));
                } else if let Some(p) = probs {
                    if p.len() != n {
                        problems.push((
                            name.into(),
                            format!("probability vector has {} entries for {n} choices", p.len()),
                        ));
                    }
                }
            }
        }
        if let Some(p) = self.sim_expl_only_prob {
            if !(0.0..=1.0).contains(&p) {
                problems.push(("sim_expl_only_prob".into(), format!("{p} not in [0,1]")));
            }
        }
        if let Some(s) = self.sim_expl_only_score {
            if !s.is_finite() {
                problems.push(("sim_expl_only_score".into(), "not finite".into()));
            }
        }
        if let Some(r) = self.human_rating {
            if !(1.0..=5.0).contains(&r) {
                problems.push(("human_rating".into(), format!("{r} not in [1,5]")));
            }
        }
        problems
    }
}

/// Returns whether `target_index` is the argmax of `probs`; ties go to the lowest index.
pub fn derive_correctness(probs: &[f64], target_index: usize) -> Result<bool, RecordError> {
    if probs.is_empty() {
        return Err(RecordError::EmptyVector);
    }
    if target_index >= probs.len() {
        return Err(RecordError::IndexOutOfRange {
            index: target_index,
            len: probs.len(),
        });
    }
    let sum: f64 = probs.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(RecordError::NotNormalized { sum });
    }
    Ok(argmax(probs) == target_index)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// An immutable set of records read from one source.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordBatch {
    pub records: Vec<PredictionRecord>,
    pub provenance: String,
}

impl RecordBatch {
    pub fn new(records: Vec<PredictionRecord>, provenance: impl Into<String>) -> Self {
        Self {
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Whether all records share one `dataset_tag`.
    pub fn is_uniform_dataset(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].dataset_tag == w[1].dataset_tag)
    }

    /// Splits into sub-batches keyed by `(dataset_tag, explanation_source)`, in order of
    /// first appearance.
    pub fn group_by_source(&self) -> Vec<((String, String), RecordBatch)> {
        let mut groups: Vec<((String, String), RecordBatch)> = Vec::new();
        for r in &self.records {
            let key = (r.dataset_tag.clone(), r.explanation_source.clone());
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, b)) => b.records.push(r.clone()),
                None => groups.push((key, RecordBatch::new(vec![r.clone()], &self.provenance))),
            }
        }
        groups
    }
}

/// Result of a lenient parse: whatever records were valid, plus the line errors.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub batch: RecordBatch,
    pub errors: Vec<LineError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

fn field_from_serde_message(msg: &str) -> String {
    // serde_json messages look like "missing field `choices`" or
    // "invalid type: ... for field `x`"; pick out the backticked name when present.
    msg.split('`').nth(1).unwrap_or("record").to_string()
}

fn parse_line(line: &str, lineno: usize) -> Result<PredictionRecord, Vec<LineError>> {
    let err = |field: String, message: String| LineError {
        line: lineno,
        field,
        message,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| vec![err("record".into(), e.to_string())])?;
    if !value.is_object() {
        return Err(vec![err("record".into(), "expected a JSON object".into())]);
    }
    let record: PredictionRecord = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        vec![err(field_from_serde_message(&msg), msg)]
    })?;
    let problems = record.check();
    if problems.is_empty() {
        Ok(record)
    } else {
        Err(problems.into_iter().map(|(f, m)| err(f, m)).collect())
    }
}

/// Reads newline-delimited records. Blank lines are skipped.
///
/// In strict mode any invalid line fails the whole read. In lenient mode valid
/// records are kept and the line errors are returned alongside them.
pub fn parse_records<R: BufRead>(
    reader: R,
    provenance: &str,
    strictness: Strictness,
) -> Result<ParseOutcome, ParseError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, lineno) {
            Ok(rec) => {
                if !seen.insert(rec.example_id.clone()) {
                    errors.push(LineError {
                        line: lineno,
                        field: "example_id".into(),
                        message: format!("duplicate example_id `{}`", rec.example_id),
                    });
                } else {
                    records.push(rec);
                }
            }
            Err(mut e) => errors.append(&mut e),
        }
    }
    if strictness == Strictness::Strict && !errors.is_empty() {
        return Err(ParseError::Invalid(errors));
    }
    Ok(ParseOutcome {
        batch: RecordBatch::new(records, provenance),
        errors,
    })
}

/// Strict parse of an in-memory string.
pub fn parse_str(text: &str, provenance: &str) -> Result<RecordBatch, ParseError> {
    parse_records(text.as_bytes(), provenance, Strictness::Strict).map(|o| o.batch)
}

/// Writes one JSON object per line.
pub fn serialize_records<W: Write>(records: &[PredictionRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[PredictionRecord]) -> String {
    let mut buf = Vec::new();
    serialize_records(records, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
