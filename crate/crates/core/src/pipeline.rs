//! The two end-to-end flows: best-candidate selection and blank-filling
//! correction.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, TranslationBackend, TranslationRequest};
use crate::corpus::{Corpus, Segment, SegmentRecord};
use crate::masking::{apply_mask, decide_masking, MaskDecision, MaskError, MaskPlan, MaskPolicy};
use crate::prompting::{PromptBook, PromptError};
use crate::scoring::{QeScorer, ScoreError, ScoreItem};

pub const ORIGINAL: &str = "Original";
pub const LEAKAGE_MARKER: &str = "Corrected words:";
pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scoring failed for segment {segment}: {source}")]
    Scoring {
        segment: String,
        #[source]
        source: ScoreError,
    },
    #[error("backend {backend} failed on segment {segment}: {source}")]
    Backend {
        backend: String,
        segment: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("backend {backend} does not support {lang}")]
    UnsupportedLanguage { backend: String, lang: String },
    #[error("nothing to process")]
    EmptyInput,
    #[error("cannot start worker pool: {0}")]
    WorkerPool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CandidateSource {
    Original,
    Backend(String),
}

impl CandidateSource {
    pub fn label(&self) -> &str {
        match self {
            CandidateSource::Original => ORIGINAL,
            CandidateSource::Backend(name) => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub source: CandidateSource,
    pub text: String,
    pub score: f64,
}

/// All candidates for one segment; the original hypothesis is always first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub segment_id: String,
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub segment_id: String,
    pub winner: ScoredCandidate,
    pub winner_source: String,
    pub all_scores: CandidateSet,
}

impl Selection {
    pub fn original_score(&self) -> f64 {
        self.all_scores.candidates[0].score
    }
}

fn request<'a>(
    segment: &'a Segment,
    prompt: &'a crate::prompting::RenderedPrompt,
    masked: Option<&'a crate::masking::MaskedHypothesis>,
) -> TranslationRequest<'a> {
    TranslationRequest {
        segment_id: &segment.id,
        target_lang: segment.target_lang(),
        source: &segment.source,
        hypothesis: &segment.hypothesis,
        reference: segment.reference.as_deref(),
        masked,
        prompt,
    }
}

/// Collects the original plus one candidate per backend that supports the
/// segment's language and answers; then scores them all with `scorer`.
/// Backend failures only drop that candidate.
pub fn generate_candidates(
    segment: &Segment,
    backends: &[Box<dyn TranslationBackend>],
    prompts: &PromptBook,
    scorer: &dyn QeScorer,
) -> Result<CandidateSet, PipelineError> {
    let lang = segment.target_lang();
    let mut texts = vec![(CandidateSource::Original, segment.hypothesis.clone())];
    for backend in backends {
        if !backend.supports(lang) {
            continue;
        }
        let prompt = prompts.render_translation_prompt(backend.profile(), lang, &segment.source)?;
        match backend.translate(&request(segment, &prompt, None)) {
            Ok(c) => texts.push((CandidateSource::Backend(c.backend_name), c.text)),
            Err(e) => tracing::warn!(
                segment = %segment.id,
                backend = backend.name(),
                error = %e,
                "candidate dropped"
            ),
        }
    }
    let items: Vec<ScoreItem> = texts
        .iter()
        .map(|(_, t)| ScoreItem::new(segment.source.clone(), t.clone(), segment.reference.clone()))
        .collect();
    let scores = scorer.score_batch(&items).map_err(|source| PipelineError::Scoring {
        segment: segment.id.clone(),
        source,
    })?;
    Ok(CandidateSet {
        segment_id: segment.id.clone(),
        candidates: texts
            .into_iter()
            .zip(scores)
            .map(|((source, text), score)| ScoredCandidate { source, text, score })
            .collect(),
    })
}

/// Highest score wins; ties go to the earliest candidate, i.e. the original.
pub fn select_best(cs: CandidateSet) -> Selection {
    let mut best = 0;
    for (i, c) in cs.candidates.iter().enumerate().skip(1) {
        if c.score > cs.candidates[best].score {
            best = i;
        }
    }
    let winner = cs.candidates[best].clone();
    Selection {
        segment_id: cs.segment_id.clone(),
        winner_source: winner.source.label().to_string(),
        winner,
        all_scores: cs,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostProcessed {
    pub cleaned: String,
    pub recoverable: bool,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"__[\p{Lu}_]*\p{Lu}[\p{Lu}_]*__").expect("valid regex"))
}

fn echo_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*Corrected [\p{L} ]+ sentence:\s*").expect("valid regex"))
}

/// Cuts a leaked "Corrected words:" trailer and an echoed answer label, then
/// flags leftover placeholder tokens.
pub fn postprocess_output(raw: &str, policy: &MaskPolicy) -> PostProcessed {
    let mut text = match raw.find(LEAKAGE_MARKER) {
        Some(pos) => &raw[..pos],
        None => raw,
    };
    if let Some(m) = echo_label_re().find(text) {
        text = &text[m.end()..];
    }
    let cleaned = text.trim().to_string();
    let residual = placeholder_re().is_match(&cleaned) || cleaned.contains(&policy.blank_token);
    PostProcessed {
        recoverable: !residual && !cleaned.is_empty(),
        cleaned,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedSegment {
    pub segment_id: String,
    pub output_text: String,
    pub plan: MaskPlan,
    pub fell_back: bool,
    pub raw_model_output: String,
    /// Whether the text outside the masked spans survived unchanged. `None`
    /// when no model output was used.
    pub context_preserved: Option<bool>,
}

impl CorrectedSegment {
    fn unchanged(segment: &Segment, plan: MaskPlan, fell_back: bool, raw: String) -> Self {
        Self {
            segment_id: segment.id.clone(),
            output_text: segment.hypothesis.clone(),
            plan,
            fell_back,
            raw_model_output: raw,
            context_preserved: None,
        }
    }
}

/// Masks, prompts, and post-processes one segment. With `faithful` set the
/// cleaned model output is kept even when it still carries placeholder
/// tokens; otherwise such outputs fall back to the original hypothesis.
pub fn correct_segment(
    segment: &Segment,
    policy: &MaskPolicy,
    backend: &dyn TranslationBackend,
    prompts: &PromptBook,
    faithful: bool,
) -> Result<CorrectedSegment, PipelineError> {
    let plan = decide_masking(segment.qe_score, &segment.spans, policy)?;
    if plan.decision == MaskDecision::NoMask {
        return Ok(CorrectedSegment::unchanged(segment, plan, false, String::new()));
    }
    let lang = segment.target_lang();
    if !backend.supports(lang) {
        return Err(PipelineError::UnsupportedLanguage {
            backend: backend.name().to_string(),
            lang: lang.to_string(),
        });
    }
    let masked = match apply_mask(&segment.hypothesis, &plan, policy) {
        Ok(m) => m,
        Err(MaskError::BlankCollision(token)) => {
            tracing::warn!(segment = %segment.id, %token, "hypothesis contains the blank token; kept as is");
            return Ok(CorrectedSegment::unchanged(segment, plan, true, String::new()));
        }
        Err(e) => return Err(e.into()),
    };
    let exemplar = prompts.exemplar(lang)?;
    let prompt = prompts.render_fill_prompt(lang, &segment.domain, &masked, &segment.source, exemplar)?;
    let raw = backend
        .translate(&request(segment, &prompt, Some(&masked)))
        .map_err(|source| PipelineError::Backend {
            backend: backend.name().to_string(),
            segment: segment.id.clone(),
            source,
        })?
        .text;
    let post = postprocess_output(&raw, policy);
    if !post.recoverable && !faithful {
        tracing::info!(segment = %segment.id, "unrecoverable model output; falling back");
        return Ok(CorrectedSegment::unchanged(segment, plan, true, raw));
    }
    let preserved = masked.preserves_context(&post.cleaned);
    if !preserved {
        tracing::warn!(segment = %segment.id, "model output changed unmasked context");
    }
    Ok(CorrectedSegment {
        segment_id: segment.id.clone(),
        output_text: post.cleaned,
        plan,
        fell_back: false,
        raw_model_output: raw,
        context_preserved: Some(preserved),
    })
}

/// Winner counts per system, largest first. Systems listed in `systems` but
/// never chosen appear with 0.
pub fn contribution_table(
    selections: &[Selection],
    systems: &[&str],
) -> Result<Vec<(String, usize)>, PipelineError> {
    if selections.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut counts: BTreeMap<String, usize> = systems.iter().map(|s| (s.to_string(), 0)).collect();
    for s in selections {
        *counts.entry(s.winner_source.clone()).or_insert(0) += 1;
    }
    let mut rows: Vec<(String, usize)> = counts.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(rows)
}

pub fn contributions_csv(rows: &[(String, usize)]) -> String {
    let mut out = String::from("system,contribution\n");
    for (name, n) in rows {
        out.push_str(&format!("{name},{n}\n"));
    }
    out
}

fn with_pool<T: Send>(concurrency: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| PipelineError::WorkerPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs selection over the corpus with at most `concurrency` segments in
/// flight. Results follow corpus order.
pub fn run_select(
    corpus: &Corpus,
    backends: &[Box<dyn TranslationBackend>],
    prompts: &PromptBook,
    scorer: &dyn QeScorer,
    concurrency: usize,
) -> Result<Vec<Selection>, PipelineError> {
    with_pool(concurrency, || {
        corpus
            .segments
            .par_iter()
            .map(|seg| generate_candidates(seg, backends, prompts, scorer).map(select_best))
            .collect()
    })?
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionRun {
    pub segments: Vec<CorrectedSegment>,
    /// Non-fallback corrections that altered text outside the masked spans.
    pub locality_violations: usize,
    pub fallbacks: usize,
}

pub fn run_correct(
    corpus: &Corpus,
    backend: &dyn TranslationBackend,
    prompts: &PromptBook,
    policy: &MaskPolicy,
    faithful: bool,
    concurrency: usize,
) -> Result<CorrectionRun, PipelineError> {
    policy.validate()?;
    let segments: Vec<CorrectedSegment> = with_pool(concurrency, || {
        corpus
            .segments
            .par_iter()
            .map(|seg| correct_segment(seg, policy, backend, prompts, faithful))
            .collect::<Result<_, _>>()
    })??;
    let locality_violations = segments
        .iter()
        .filter(|c| c.context_preserved == Some(false))
        .count();
    let fallbacks = segments.iter().filter(|c| c.fell_back).count();
    Ok(CorrectionRun {
        segments,
        locality_violations,
        fallbacks,
    })
}

/// One line of a results file: the corpus record plus what the pipeline added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    #[serde(flatten)]
    pub segment: SegmentRecord,
    pub output_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_decision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fell_back: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_model_output: Option<String>,
}

impl OutputRecord {
    pub fn from_selection(segment: &Segment, sel: &Selection) -> Self {
        Self {
            segment: segment.to_record(),
            output_text: sel.winner.text.clone(),
            winner_source: Some(sel.winner_source.clone()),
            selection_scores: Some(
                sel.all_scores
                    .candidates
                    .iter()
                    .map(|c| (c.source.label().to_string(), c.score))
                    .collect(),
            ),
            plan_decision: None,
            fell_back: None,
            raw_model_output: None,
        }
    }

    pub fn from_correction(segment: &Segment, c: &CorrectedSegment) -> Self {
        Self {
            segment: segment.to_record(),
            output_text: c.output_text.clone(),
            winner_source: None,
            selection_scores: None,
            plan_decision: Some(c.plan.decision.as_str().to_string()),
            fell_back: Some(c.fell_back),
            raw_model_output: (!c.raw_model_output.is_empty()).then(|| c.raw_model_output.clone()),
        }
    }
}
