//! Severity/score-conditional masking of QE error spans.
//!
//! The decision ladder, for an original QE score `x`:
//!
//! ```text
//! x >= no_mask_threshold          -> no masking
//! x >  full_mask_threshold        -> all spans minor ? mask them all : mask the non-minor ones
//! otherwise                       -> mask every span
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_range_to_bytes, ErrorSpan, Severity};

pub const DEFAULT_BLANK: &str = "__BLANK__";

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("invalid mask policy: {0}")]
    InvalidPolicy(String),
    #[error("span ({start}, {end}) out of bounds for a hypothesis of {len} chars")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("mask plan spans are not sorted and disjoint")]
    UnnormalizedPlan,
    #[error("hypothesis already contains the blank token {0:?}")]
    BlankCollision(String),
    #[error("expected {expected} fills, got {got}")]
    FillCountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskPolicy {
    pub no_mask_threshold: f64,
    pub full_mask_threshold: f64,
    pub blank_token: String,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            no_mask_threshold: 0.90,
            full_mask_threshold: 0.50,
            blank_token: DEFAULT_BLANK.to_string(),
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<(), MaskError> {
        let (lo, hi) = (self.full_mask_threshold, self.no_mask_threshold);
        if !(lo.is_finite() && hi.is_finite()) || !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(MaskError::InvalidPolicy(format!(
                "need 0 <= full_mask_threshold < no_mask_threshold <= 1, got {lo} and {hi}"
            )));
        }
        if self.blank_token.is_empty() {
            return Err(MaskError::InvalidPolicy("blank token is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskDecision {
    NoMask,
    MaskMinorOnly,
    MaskNonMinor,
    MaskAll,
}

impl MaskDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskDecision::NoMask => "NoMask",
            MaskDecision::MaskMinorOnly => "MaskMinorOnly",
            MaskDecision::MaskNonMinor => "MaskNonMinor",
            MaskDecision::MaskAll => "MaskAll",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub decision: MaskDecision,
    /// Sorted, pairwise disjoint.
    pub selected_spans: Vec<ErrorSpan>,
}

impl MaskPlan {
    pub fn no_mask() -> Self {
        Self {
            decision: MaskDecision::NoMask,
            selected_spans: Vec::new(),
        }
    }

    /// Builds a plan from arbitrary spans, merging them first.
    pub fn with_spans(decision: MaskDecision, spans: &[ErrorSpan]) -> Self {
        Self {
            decision,
            selected_spans: merge_spans(spans),
        }
    }
}

/// Picks the spans to blank out for a segment with QE score `qe_score`.
///
/// A segment without spans always gets [`MaskDecision::NoMask`]: every branch
/// would select nothing.
pub fn decide_masking(
    qe_score: f64,
    spans: &[ErrorSpan],
    policy: &MaskPolicy,
) -> Result<MaskPlan, MaskError> {
    policy.validate()?;
    if spans.is_empty() || qe_score >= policy.no_mask_threshold {
        return Ok(MaskPlan::no_mask());
    }
    let (decision, chosen): (_, Vec<ErrorSpan>) = if qe_score > policy.full_mask_threshold {
        if spans.iter().all(|s| s.severity == Severity::Minor) {
            (MaskDecision::MaskMinorOnly, spans.to_vec())
        } else {
            let non_minor = spans
                .iter()
                .filter(|s| s.severity != Severity::Minor)
                .copied()
                .collect();
            (MaskDecision::MaskNonMinor, non_minor)
        }
    } else {
        (MaskDecision::MaskAll, spans.to_vec())
    };
    Ok(MaskPlan::with_spans(decision, &chosen))
}

/// Union of the input intervals as sorted, disjoint spans. Touching spans
/// (`a.end == b.start`) are merged too; a merged span takes the highest
/// contributing severity.
pub fn merge_spans(spans: &[ErrorSpan]) -> Vec<ErrorSpan> {
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut out: Vec<ErrorSpan> = Vec::with_capacity(sorted.len());
    for span in sorted {
        match out.last_mut() {
            Some(last) if span.start <= last.end => {
                last.end = last.end.max(span.end);
                last.severity = last.severity.max(span.severity);
            }
            _ => out.push(span),
        }
    }
    out
}

pub fn is_normalized(spans: &[ErrorSpan]) -> bool {
    spans.iter().all(|s| s.start < s.end) && spans.windows(2).all(|w| w[0].end < w[1].start)
}

/// A hypothesis with the selected spans replaced by blank tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedHypothesis {
    pub masked_text: String,
    /// Masked regions, left to right, with the text each one held.
    pub removed: Vec<(ErrorSpan, String)>,
    pub original: String,
    pub blank_token: String,
    /// Byte offset of each blank in `masked_text`.
    blank_offsets: Vec<usize>,
}

impl MaskedHypothesis {
    pub fn blank_count(&self) -> usize {
        self.removed.len()
    }

    pub fn has_blanks(&self) -> bool {
        !self.removed.is_empty()
    }

    pub fn removed_texts(&self) -> Vec<&str> {
        self.removed.iter().map(|(_, t)| t.as_str()).collect()
    }

    /// The unmasked context around the blanks: always `blank_count() + 1` pieces.
    pub fn context_pieces(&self) -> Vec<&str> {
        let mut pieces = Vec::with_capacity(self.blank_offsets.len() + 1);
        let mut cursor = 0;
        for &off in &self.blank_offsets {
            pieces.push(&self.masked_text[cursor..off]);
            cursor = off + self.blank_token.len();
        }
        pieces.push(&self.masked_text[cursor..]);
        pieces
    }

    /// Substitutes `fills[i]` for the i-th blank.
    pub fn fill<S: AsRef<str>>(&self, fills: &[S]) -> Result<String, MaskError> {
        if fills.len() != self.blank_count() {
            return Err(MaskError::FillCountMismatch {
                expected: self.blank_count(),
                got: fills.len(),
            });
        }
        let pieces = self.context_pieces();
        let mut out = String::with_capacity(self.original.len());
        for (i, piece) in pieces.iter().enumerate() {
            out.push_str(piece);
            if let Some(f) = fills.get(i) {
                out.push_str(f.as_ref());
            }
        }
        Ok(out)
    }

    /// Puts the removed substrings back.
    pub fn unmask(&self) -> String {
        self.fill(&self.removed_texts())
            .expect("removed list matches blank count")
    }

    /// True if `output` keeps every unmasked context piece verbatim and in
    /// order, with only the blanked regions changed.
    pub fn preserves_context(&self, output: &str) -> bool {
        let pieces = self.context_pieces();
        let (first, rest) = pieces.split_first().expect("at least one piece");
        let Some(mut tail) = output.strip_prefix(first) else {
            return false;
        };
        let Some((last, middle)) = rest.split_last() else {
            return tail.is_empty();
        };
        for piece in middle {
            if piece.is_empty() {
                continue;
            }
            match tail.find(piece) {
                Some(pos) => tail = &tail[pos + piece.len()..],
                None => return false,
            }
        }
        tail.ends_with(last)
    }
}

/// Replaces each selected span with one blank token.
pub fn apply_mask(
    hypothesis: &str,
    plan: &MaskPlan,
    policy: &MaskPolicy,
) -> Result<MaskedHypothesis, MaskError> {
    policy.validate()?;
    let blank = policy.blank_token.as_str();
    let spans = &plan.selected_spans;
    if spans.is_empty() {
        return Ok(MaskedHypothesis {
            masked_text: hypothesis.to_string(),
            removed: Vec::new(),
            original: hypothesis.to_string(),
            blank_token: blank.to_string(),
            blank_offsets: Vec::new(),
        });
    }
    if !is_normalized(spans) {
        return Err(MaskError::UnnormalizedPlan);
    }
    if hypothesis.contains(blank) {
        return Err(MaskError::BlankCollision(blank.to_string()));
    }

    let len = hypothesis.chars().count();
    let mut masked = String::with_capacity(hypothesis.len() + spans.len() * blank.len());
    let mut removed = Vec::with_capacity(spans.len());
    let mut offsets = Vec::with_capacity(spans.len());
    let mut cursor = 0;
    for span in spans {
        let (b, e) = char_range_to_bytes(hypothesis, span.start, span.end)
            .filter(|_| span.end <= len)
            .ok_or(MaskError::SpanOutOfBounds {
                start: span.start,
                end: span.end,
                len,
            })?;
        masked.push_str(&hypothesis[cursor..b]);
        offsets.push(masked.len());
        masked.push_str(blank);
        removed.push((*span, hypothesis[b..e].to_string()));
        cursor = e;
    }
    masked.push_str(&hypothesis[cursor..]);

    // Text adjacent to a blank can combine into a spurious token occurrence.
    let found: Vec<usize> = masked.match_indices(blank).map(|(i, _)| i).collect();
    if found != offsets {
        return Err(MaskError::BlankCollision(blank.to_string()));
    }

    Ok(MaskedHypothesis {
        masked_text: masked,
        removed,
        original: hypothesis.to_string(),
        blank_token: blank.to_string(),
        blank_offsets: offsets,
    })
}
