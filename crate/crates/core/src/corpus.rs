//! Segment records with QE error spans, loaded from line-delimited JSON.
//!
//! Span offsets count Unicode scalar values (Rust `char`s), end-exclusive.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Target languages of the shared-task corpora. Strict loading rejects anything else.
pub const SHARED_TASK_TARGETS: [&str; 6] = ["zh", "cs", "ja", "is", "ru", "uk"];

/// Version tag recorded in [`Provenance`] for the JSONL record layout.
pub const FORMAT_VERSION: &str = "qefix-jsonl/1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("error span out of bounds in segment {id}")]
    SpanOutOfBounds { id: String },
    #[error("duplicate segment id {id} on line {line}")]
    DuplicateId { id: String, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Major,
    Critical,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Minor => "minor",
            Severity::Major => "major",
            Severity::Critical => "critical",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "minor" => Ok(Severity::Minor),
            "major" => Ok(Severity::Major),
            "critical" => Ok(Severity::Critical),
            other => Err(format!("unknown severity {other:?}")),
        }
    }
}

/// Half-open character interval `[start, end)` into a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ErrorSpan {
    pub start: usize,
    pub end: usize,
    pub severity: Severity,
}

impl ErrorSpan {
    pub fn new(start: usize, end: usize, severity: Severity) -> Self {
        Self {
            start,
            end,
            severity,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks `start < end <= text_chars`.
    pub fn is_valid_for(&self, text_chars: usize) -> bool {
        self.start < self.end && self.end <= text_chars
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LanguagePair {
    pub source: String,
    pub target: String,
}

impl LanguagePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }

    /// True for `en` into one of [`SHARED_TASK_TARGETS`].
    pub fn is_shared_task_pair(&self) -> bool {
        self.source == "en" && SHARED_TASK_TARGETS.contains(&self.target.as_str())
    }
}

impl fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

impl FromStr for LanguagePair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (src, tgt) = s
            .split_once('-')
            .ok_or_else(|| format!("language pair {s:?} is not of the form xx-yy"))?;
        let src = src.trim().to_ascii_lowercase();
        let tgt = tgt.trim().to_ascii_lowercase();
        if src.is_empty() || tgt.is_empty() {
            return Err(format!("language pair {s:?} has an empty side"));
        }
        Ok(LanguagePair::new(src, tgt))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub lp: LanguagePair,
    pub domain: String,
    pub system: String,
    pub source: String,
    pub hypothesis: String,
    /// Reference translation, when the corpus carries one.
    pub reference: Option<String>,
    pub qe_score: f64,
    pub spans: Vec<ErrorSpan>,
}

impl Segment {
    pub fn target_lang(&self) -> &str {
        &self.lp.target
    }

    pub fn hypothesis_chars(&self) -> usize {
        self.hypothesis.chars().count()
    }

    /// Exact hypothesis substring for every span, in span order.
    pub fn span_substrings(&self) -> Result<Vec<(ErrorSpan, &str)>, CorpusError> {
        span_substrings(self)
    }

    pub fn to_record(&self) -> SegmentRecord {
        SegmentRecord {
            id: self.id.clone(),
            lp: self.lp.to_string(),
            domain: self.domain.clone(),
            system: self.system.clone(),
            src: self.source.clone(),
            mt: self.hypothesis.clone(),
            reference: self.reference.clone(),
            qe_score: self.qe_score,
            error_spans: self
                .spans
                .iter()
                .map(|s| SpanRecord {
                    start_i: s.start as i64,
                    end_i: s.end as i64,
                    severity: s.severity.as_str().to_string(),
                })
                .collect(),
        }
    }
}

/// Byte range of the character interval `[start, end)` in `text`.
pub fn char_range_to_bytes(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    if start > end {
        return None;
    }
    let mut begin = None;
    for (ci, (bi, _)) in text.char_indices().enumerate() {
        if ci == start {
            begin = Some(bi);
        }
        if ci == end {
            return begin.map(|b| (b, bi));
        }
    }
    // `end` may equal the character count.
    let total = text.chars().count();
    match (begin, end == total, start == total) {
        (Some(b), true, _) => Some((b, text.len())),
        (None, true, true) => Some((text.len(), text.len())),
        _ => None,
    }
}

pub fn span_substrings(segment: &Segment) -> Result<Vec<(ErrorSpan, &str)>, CorpusError> {
    let n = segment.hypothesis_chars();
    segment
        .spans
        .iter()
        .map(|span| {
            if !span.is_valid_for(n) {
                return Err(CorpusError::SpanOutOfBounds {
                    id: segment.id.clone(),
                });
            }
            let (b, e) = char_range_to_bytes(&segment.hypothesis, span.start, span.end)
                .ok_or_else(|| CorpusError::SpanOutOfBounds {
                    id: segment.id.clone(),
                })?;
            Ok((*span, &segment.hypothesis[b..e]))
        })
        .collect()
}

/// On-disk record layout, shared by corpus files and pipeline outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub lp: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub system: String,
    pub src: String,
    pub mt: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub qe_score: f64,
    #[serde(default)]
    pub error_spans: Vec<SpanRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start_i: i64,
    pub end_i: i64,
    pub severity: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadMode {
    #[default]
    Strict,
    Permissive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadWarning {
    pub line: usize,
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub path: PathBuf,
    pub format_version: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub segments: Vec<Segment>,
    pub provenance: Provenance,
    pub warnings: Vec<LoadWarning>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.segments.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Serializes back to the JSONL corpus layout.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(&serde_json::to_string(&seg.to_record()).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Segment;
    type IntoIter = std::slice::Iter<'a, Segment>;

    fn into_iter(self) -> Self::IntoIter {
        self.segments.iter()
    }
}

pub fn load_corpus(path: impl AsRef<Path>, mode: LoadMode) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, path, mode)
}

/// Parses JSONL corpus text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus(text: &str, path: &Path, mode: LoadMode) -> Result<Corpus, CorpusError> {
    let mut segments = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SegmentRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let segment = segment_from_record(record, line_no, mode, &mut warnings)?;
        if !seen.insert(segment.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: segment.id,
                line: line_no,
            });
        }
        segments.push(segment);
    }

    Ok(Corpus {
        segments,
        provenance: Provenance {
            path: path.to_path_buf(),
            format_version: FORMAT_VERSION.to_string(),
        },
        warnings,
    })
}

pub fn segment_from_record(
    record: SegmentRecord,
    line: usize,
    mode: LoadMode,
    warnings: &mut Vec<LoadWarning>,
) -> Result<Segment, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRecord { line, reason };
    let mut warn = |id: &str, message: String| {
        tracing::warn!(line, id, %message, "corpus record adjusted");
        warnings.push(LoadWarning {
            line,
            id: id.to_string(),
            message,
        });
    };

    if record.id.is_empty() {
        return Err(malformed("empty id".into()));
    }
    let lp: LanguagePair = record.lp.parse().map_err(malformed)?;
    if mode == LoadMode::Strict && !lp.is_shared_task_pair() {
        return Err(malformed(format!("unsupported language pair {lp}")));
    }
    if record.src.is_empty() {
        return Err(malformed("empty source text".into()));
    }
    if record.mt.is_empty() {
        return Err(malformed("empty hypothesis text".into()));
    }

    let mut qe_score = record.qe_score;
    if !qe_score.is_finite() {
        return Err(malformed(format!("qe_score {qe_score} is not finite")));
    }
    if !(0.0..=1.0).contains(&qe_score) {
        match mode {
            LoadMode::Strict => {
                return Err(malformed(format!("qe_score {qe_score} outside [0,1]")))
            }
            LoadMode::Permissive => {
                let clamped = qe_score.clamp(0.0, 1.0);
                warn(&record.id, format!("qe_score {qe_score} clamped to {clamped}"));
                qe_score = clamped;
            }
        }
    }

    let n_chars = record.mt.chars().count();
    let mut spans = Vec::with_capacity(record.error_spans.len());
    for raw in &record.error_spans {
        let severity = match raw.severity.parse::<Severity>() {
            Ok(s) => s,
            Err(e) => match mode {
                LoadMode::Strict => return Err(malformed(e)),
                LoadMode::Permissive => {
                    warn(&record.id, format!("{e}; treated as critical"));
                    Severity::Critical
                }
            },
        };
        let in_bounds = raw.start_i >= 0
            && raw.end_i >= 0
            && raw.start_i < raw.end_i
            && (raw.end_i as usize) <= n_chars;
        if !in_bounds {
            match mode {
                LoadMode::Strict => {
                    return Err(CorpusError::SpanOutOfBounds {
                        id: record.id.clone(),
                    })
                }
                LoadMode::Permissive => {
                    warn(
                        &record.id,
                        format!(
                            "dropped span ({}, {}) for hypothesis of {n_chars} chars",
                            raw.start_i, raw.end_i
                        ),
                    );
                    continue;
                }
            }
        }
        spans.push(ErrorSpan::new(
            raw.start_i as usize,
            raw.end_i as usize,
            severity,
        ));
    }

    Ok(Segment {
        id: record.id,
        lp,
        domain: record.domain,
        system: record.system,
        source: record.src,
        hypothesis: record.mt,
        reference: record.reference,
        qe_score,
        spans,
    })
}
