use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ProviderError;
use crate::corpus::{CorpusError, RelationId, RelationOntology};

/// First line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreManifest {
    pub relation_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub id: String,
    pub scores: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoreLine {
    Manifest(ScoreManifest),
    Row(ScoreRecord),
}

/// Per-item confidence vectors `f(item, r)` in ontology order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    relation_order: Vec<String>,
    rows: HashMap<String, Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(
        relation_order: Vec<String>,
        rows: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, ProviderError> {
        let mut m = Self {
            relation_order,
            rows: HashMap::new(),
        };
        for (id, v) in rows {
            m.insert(id, v)?;
        }
        Ok(m)
    }

    pub fn insert(&mut self, id: String, scores: Vec<f64>) -> Result<(), ProviderError> {
        if scores.len() != self.relation_order.len() {
            return Err(ProviderError::Invalid(format!(
                "score row {id:?} has {} entries, expected {}",
                scores.len(),
                self.relation_order.len()
            )));
        }
        if let Some(x) = scores.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(ProviderError::Invalid(format!(
                "score row {id:?} has out-of-range value {x}"
            )));
        }
        if self.rows.insert(id.clone(), scores).is_some() {
            return Err(ProviderError::Invalid(format!("duplicate score row {id:?}")));
        }
        Ok(())
    }

    pub fn relation_order(&self) -> &[String] {
        &self.relation_order
    }

    pub fn row(&self, id: &str) -> Result<&[f64], ProviderError> {
        self.rows
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| ProviderError::MissingScores(id.to_owned()))
    }

    pub fn score(&self, id: &str, r: RelationId) -> Result<f64, ProviderError> {
        Ok(self.row(id)?[r.0])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fails unless the manifest order equals the ontology order.
    pub fn check_order(&self, ontology: &RelationOntology) -> Result<(), ProviderError> {
        let expected = ontology.names();
        if self.relation_order != expected {
            let at = self
                .relation_order
                .iter()
                .zip(&expected)
                .position(|(a, b)| a != b)
                .unwrap_or(self.relation_order.len().min(expected.len()));
            return Err(ProviderError::Invalid(format!(
                "score relation_order differs from the ontology at position {at}"
            )));
        }
        Ok(())
    }

    pub fn to_records(&self) -> (ScoreManifest, Vec<ScoreRecord>) {
        let mut ids: Vec<_> = self.rows.keys().cloned().collect();
        ids.sort();
        let rows = ids
            .into_iter()
            .map(|id| {
                let scores = self.rows[&id].clone();
                ScoreRecord { id, scores }
            })
            .collect();
        (
            ScoreManifest {
                relation_order: self.relation_order.clone(),
            },
            rows,
        )
    }
}

/// Loads a score file and checks it against the ontology order.
pub fn load_scores(path: &Path, ontology: &RelationOntology) -> Result<ScoreMatrix, ProviderError> {
    let mut matrix: Option<ScoreMatrix> = None;
    let ctx = |line: usize, e: ProviderError| {
        ProviderError::Invalid(format!("{}:{line}: {e}", path.display()))
    };
    crate::corpus::read_jsonl(path, |line, rec: ScoreLine| {
        let wrap = |e: ProviderError| CorpusError::Invalid {
            context: format!("{}:{line}", path.display()),
            message: e.to_string(),
        };
        match (rec, matrix.as_mut()) {
            (ScoreLine::Manifest(m), None) => {
                matrix = Some(ScoreMatrix::new(m.relation_order, []).map_err(wrap)?);
            }
            (ScoreLine::Manifest(_), Some(_)) => {
                return Err(wrap(ProviderError::Invalid("second manifest".into())));
            }
            (ScoreLine::Row(_), None) => {
                return Err(wrap(ProviderError::Invalid(
                    "score rows before the relation_order manifest".into(),
                )));
            }
            (ScoreLine::Row(r), Some(m)) => m.insert(r.id, r.scores).map_err(wrap)?,
        }
        Ok(())
    })?;
    let matrix = matrix.ok_or_else(|| ctx(0, ProviderError::Invalid("missing manifest".into())))?;
    matrix.check_order(ontology).map_err(|e| ctx(1, e))?;
    Ok(matrix)
}

pub fn save_scores(path: &Path, matrix: &ScoreMatrix) -> Result<(), ProviderError> {
    let (manifest, rows) = matrix.to_records();
    let mut lines = vec![serde_json::to_value(manifest).expect("manifest serializes")];
    lines.extend(rows.into_iter().map(|r| serde_json::to_value(r).expect("row serializes")));
    crate::corpus::write_jsonl(path, &lines)?;
    Ok(())
}
