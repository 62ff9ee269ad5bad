//! Segment-level quality scorers.
//!
//! Scores live in [0, 1]. Two deterministic mocks ship here; real neural QE
//! models are reached through [`RemoteScorer`], which speaks
//! `POST /score {src, mt, ref?} -> {score}` and
//! `POST /score_batch [{src, mt, ref?}, ...] -> [{score}, ...]`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::chrf_pp;

pub const CHRF_ORACLE: &str = "chrf-oracle";
pub const SEEDED_HASH: &str = "seeded-hash";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("source and candidate must be non-empty")]
    EmptyText,
    #[error("scorer {0} needs a reference translation")]
    MissingReference(String),
    #[error("item {index}: {source}")]
    Item {
        index: usize,
        #[source]
        source: Box<ScoreError>,
    },
}

impl ScoreError {
    /// The underlying error, unwrapping any item index.
    pub fn root(&self) -> &ScoreError {
        match self {
            ScoreError::Item { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub src: String,
    pub mt: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl ScoreItem {
    pub fn new(src: impl Into<String>, mt: impl Into<String>, reference: Option<String>) -> Self {
        Self {
            src: src.into(),
            mt: mt.into(),
            reference,
        }
    }
}

pub trait QeScorer: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, source: &str, candidate: &str, reference: Option<&str>) -> Result<f64, ScoreError>;

    /// Scores in input order. Errors carry the failing item's index.
    fn score_batch(&self, items: &[ScoreItem]) -> Result<Vec<f64>, ScoreError> {
        if items.is_empty() {
            return Err(ScoreError::EmptyBatch);
        }
        items
            .iter()
            .enumerate()
            .map(|(index, it)| {
                self.score(&it.src, &it.mt, it.reference.as_deref())
                    .map_err(|e| ScoreError::Item {
                        index,
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}

fn check_texts(source: &str, candidate: &str) -> Result<(), ScoreError> {
    if source.is_empty() || candidate.is_empty() {
        Err(ScoreError::EmptyText)
    } else {
        Ok(())
    }
}

/// chrF++ against the reference, divided by 100.
#[derive(Debug, Clone, Default)]
pub struct ChrfOracleScorer;

impl QeScorer for ChrfOracleScorer {
    fn name(&self) -> &str {
        CHRF_ORACLE
    }

    fn score(&self, source: &str, candidate: &str, reference: Option<&str>) -> Result<f64, ScoreError> {
        check_texts(source, candidate)?;
        let reference = reference
            .filter(|r| !r.trim().is_empty())
            .ok_or_else(|| ScoreError::MissingReference(CHRF_ORACLE.into()))?;
        let value = chrf_pp(candidate, reference).map_err(|e| ScoreError::ScorerUnavailable(e.to_string()))?;
        Ok(value / 100.0)
    }
}

/// Uniform pseudo-random score derived from (seed, source, candidate).
/// Carries no information about quality.
#[derive(Debug, Clone)]
pub struct SeededHashScorer {
    seed: u64,
}

impl SeededHashScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl QeScorer for SeededHashScorer {
    fn name(&self) -> &str {
        SEEDED_HASH
    }

    fn score(&self, source: &str, candidate: &str, _reference: Option<&str>) -> Result<f64, ScoreError> {
        check_texts(source, candidate)?;
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((source.len() as u64).to_le_bytes());
        h.update(source.as_bytes());
        h.update(candidate.as_bytes());
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        Ok((u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Deserialize)]
struct ScoreReply {
    score: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BatchReply {
    Items(Vec<ScoreReply>),
    Scores { scores: Vec<f64> },
}

/// Client for a scoring service.
pub struct RemoteScorer {
    name: String,
    base_url: String,
    strict: bool,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>, timeout: Duration, strict: bool) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            strict,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn post<T: Serialize + ?Sized>(&self, path: &str, body: &T) -> Result<ureq::Response, ScoreError> {
        self.agent
            .post(&format!("{}{path}", self.base_url))
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Status(code, resp) => ScoreError::ScorerUnavailable(format!(
                    "HTTP {code}: {}",
                    resp.into_string().unwrap_or_default()
                )),
                ureq::Error::Transport(t) => ScoreError::ScorerUnavailable(t.to_string()),
            })
    }

    fn check_range(&self, value: f64) -> Result<f64, ScoreError> {
        if value.is_nan() {
            return Err(ScoreError::ScoreOutOfRange(value));
        }
        if (0.0..=1.0).contains(&value) {
            Ok(value)
        } else if self.strict {
            Err(ScoreError::ScoreOutOfRange(value))
        } else {
            tracing::warn!(scorer = %self.name, value, "clamping out-of-range score");
            Ok(value.clamp(0.0, 1.0))
        }
    }
}

impl QeScorer for RemoteScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, source: &str, candidate: &str, reference: Option<&str>) -> Result<f64, ScoreError> {
        check_texts(source, candidate)?;
        let item = ScoreItem::new(source, candidate, reference.map(str::to_string));
        let reply: ScoreReply = self
            .post("/score", &item)?
            .into_json()
            .map_err(|e| ScoreError::ScorerUnavailable(format!("bad /score reply: {e}")))?;
        self.check_range(reply.score)
    }

    fn score_batch(&self, items: &[ScoreItem]) -> Result<Vec<f64>, ScoreError> {
        if items.is_empty() {
            return Err(ScoreError::EmptyBatch);
        }
        for (index, it) in items.iter().enumerate() {
            check_texts(&it.src, &it.mt).map_err(|e| ScoreError::Item {
                index,
                source: Box::new(e),
            })?;
        }
        let reply: BatchReply = self
            .post("/score_batch", items)?
            .into_json()
            .map_err(|e| ScoreError::ScorerUnavailable(format!("bad /score_batch reply: {e}")))?;
        let scores: Vec<f64> = match reply {
            BatchReply::Items(v) => v.into_iter().map(|r| r.score).collect(),
            BatchReply::Scores { scores } => scores,
        };
        if scores.len() != items.len() {
            return Err(ScoreError::ScorerUnavailable(format!(
                "sent {} items, got {} scores",
                items.len(),
                scores.len()
            )));
        }
        scores
            .into_iter()
            .enumerate()
            .map(|(index, s)| {
                self.check_range(s).map_err(|e| ScoreError::Item {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// A `[[scorers]]` entry naming a remote scoring service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub name: String,
    pub url: String,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_scorer_timeout")]
    pub timeout_ms: u64,
}

fn default_scorer_timeout() -> u64 {
    60_000
}

/// Resolves a scorer by name: the built-in mocks or a configured remote.
pub fn build_scorer(name: &str, remotes: &[ScorerConfig], seed: u64) -> Result<Box<dyn QeScorer>, String> {
    match name {
        CHRF_ORACLE => Ok(Box::new(ChrfOracleScorer)),
        SEEDED_HASH => Ok(Box::new(SeededHashScorer::new(seed))),
        other => remotes
            .iter()
            .find(|r| r.name == other)
            .map(|r| {
                Box::new(RemoteScorer::new(
                    &r.name,
                    &r.url,
                    Duration::from_millis(r.timeout_ms),
                    r.strict,
                )) as Box<dyn QeScorer>
            })
            .ok_or_else(|| format!("unknown scorer {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chrf_oracle_edges() {
        let s = ChrfOracleScorer;
        assert_eq!(s.score("src", "Ahoj světe", Some("Ahoj světe")).unwrap(), 1.0);
        assert_eq!(s.score("src", "abc", Some("xyz")).unwrap(), 0.0);
        assert_eq!(
            s.score("src", "abc", None),
            Err(ScoreError::MissingReference(CHRF_ORACLE.into()))
        );
        assert_eq!(s.score("", "abc", Some("abc")), Err(ScoreError::EmptyText));
    }

    #[test]
    fn chrf_oracle_matches_metric() {
        let s = ChrfOracleScorer;
        let (h, r) = ("the cat sat", "the cat sat down");
        assert_eq!(s.score("x", h, Some(r)).unwrap(), chrf_pp(h, r).unwrap() / 100.0);
    }

    #[test]
    fn seeded_hash_is_stable_and_bounded() {
        let a = SeededHashScorer::new(13);
        let v = a.score("source", "candidate", None).unwrap();
        assert_eq!(v, SeededHashScorer::new(13).score("source", "candidate", Some("r")).unwrap());
        assert!((0.0..1.0).contains(&v));
        assert_ne!(v, SeededHashScorer::new(14).score("source", "candidate", None).unwrap());
    }

    #[test]
    fn batch_matches_pointwise() {
        let s = SeededHashScorer::new(1);
        let item = ScoreItem::new("a", "b", None);
        let one = s.score_batch(std::slice::from_ref(&item)).unwrap();
        assert_eq!(one, vec![s.score("a", "b", None).unwrap()]);
        let three = s.score_batch(&[item.clone(), item.clone(), item]).unwrap();
        assert!(three.iter().all(|&v| v == one[0]));
        assert_eq!(s.score_batch(&[]), Err(ScoreError::EmptyBatch));
    }

    #[test]
    fn batch_error_carries_index() {
        let s = ChrfOracleScorer;
        let items = [
            ScoreItem::new("a", "b", Some("b".into())),
            ScoreItem::new("a", "b", None),
        ];
        let err = s.score_batch(&items).unwrap_err();
        assert!(matches!(err, ScoreError::Item { index: 1, .. }));
        assert!(matches!(err.root(), ScoreError::MissingReference(_)));
    }

    #[test]
    fn build_by_name() {
        assert_eq!(build_scorer(CHRF_ORACLE, &[], 0).unwrap().name(), CHRF_ORACLE);
        assert_eq!(build_scorer(SEEDED_HASH, &[], 0).unwrap().name(), SEEDED_HASH);
        let remote = ScorerConfig {
            name: "kiwi".into(),
            url: "http://127.0.0.1:1".into(),
            strict: false,
            timeout_ms: 10,
        };
        assert_eq!(build_scorer("kiwi", &[remote], 0).unwrap().name(), "kiwi");
        assert!(build_scorer("nope", &[], 0).is_err());
    }

    #[test]
    fn item_serializes_ref_field() {
        let json = serde_json::to_string(&ScoreItem::new("s", "m", Some("r".into()))).unwrap();
        assert_eq!(json, r#"{"src":"s","mt":"m","ref":"r"}"#);
        let json = serde_json::to_string(&ScoreItem::new("s", "m", None)).unwrap();
        assert_eq!(json, r#"{"src":"s","mt":"m"}"#);
    }
}
