//! C ABI over the qefix core: masking, post-processing, metrics and corpus
//! loading.
//!
//! Every fallible call returns a [`QefixStatus`]; on failure
//! [`qefix_last_error_message`] describes the cause. Strings handed out by
//! this library must be released with [`qefix_string_free`]; handles with
//! their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qefix::corpus::{load_corpus, CorpusError};
use qefix::masking::{apply_mask, decide_masking, MaskError};
use qefix::metrics::{self, MetricError};
use qefix::pipeline::postprocess_output;
use qefix::{Corpus, ErrorSpan, LoadMode, MaskDecision, MaskPlan, MaskPolicy, MaskedHypothesis, Severity};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QefixStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    OutOfBounds = 4,
    BlankCollision = 5,
    MetricError = 6,
    IoError = 7,
    ParseError = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QefixSeverity {
    Minor = 0,
    Major = 1,
    Critical = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QefixDecision {
    NoMask = 0,
    MaskMinorOnly = 1,
    MaskNonMinor = 2,
    MaskAll = 3,
}

/// Character offsets into the hypothesis, end exclusive.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QefixSpan {
    pub start: usize,
    pub end: usize,
    pub severity: QefixSeverity,
}

/// Masking thresholds and blank token.
pub struct QefixPolicy(MaskPolicy);

/// A masked hypothesis together with the decision that produced it.
pub struct QefixMasked {
    plan: MaskPlan,
    masked: MaskedHypothesis,
}

/// A loaded segment corpus.
pub struct QefixCorpus(Corpus);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(QefixStatus, String);

impl From<MaskError> for Failure {
    fn from(e: MaskError) -> Self {
        let status = match e {
            MaskError::SpanOutOfBounds { .. } => QefixStatus::OutOfBounds,
            MaskError::BlankCollision(_) => QefixStatus::BlankCollision,
            _ => QefixStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        Failure(QefixStatus::MetricError, e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = match e {
            CorpusError::UnreadableFile { .. } => QefixStatus::IoError,
            _ => QefixStatus::ParseError,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QefixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QefixStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QefixStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(QefixStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QefixStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(QefixStatus::InvalidArgument, "string contains NUL".into()))
}

fn severity(s: QefixSeverity) -> Severity {
    match s {
        QefixSeverity::Minor => Severity::Minor,
        QefixSeverity::Major => Severity::Major,
        QefixSeverity::Critical => Severity::Critical,
    }
}

fn decision(d: MaskDecision) -> QefixDecision {
    match d {
        MaskDecision::NoMask => QefixDecision::NoMask,
        MaskDecision::MaskMinorOnly => QefixDecision::MaskMinorOnly,
        MaskDecision::MaskNonMinor => QefixDecision::MaskNonMinor,
        MaskDecision::MaskAll => QefixDecision::MaskAll,
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qefix_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn qefix_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a policy. A null `blank_token` selects the default `__BLANK__`.
///
/// # Safety
/// `blank_token` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_policy_new(
    no_mask_threshold: f64,
    full_mask_threshold: f64,
    blank_token: *const c_char,
    out: *mut *mut QefixPolicy,
) -> QefixStatus {
    guard(|| {
        let mut policy = MaskPolicy {
            no_mask_threshold,
            full_mask_threshold,
            ..MaskPolicy::default()
        };
        if !blank_token.is_null() {
            policy.blank_token = read_str(blank_token, "blank_token")?.to_string();
        }
        policy.validate()?;
        write_out(out, Box::into_raw(Box::new(QefixPolicy(policy))))
    })
}

/// # Safety
/// `policy` must come from [`qefix_policy_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn qefix_policy_free(policy: *mut QefixPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Decides which spans to mask for `qe_score` and blanks them out.
///
/// # Safety
/// `spans` must point to `n_spans` elements (or be null when `n_spans` is 0).
#[no_mangle]
pub unsafe extern "C" fn qefix_mask(
    policy: *const QefixPolicy,
    hypothesis: *const c_char,
    qe_score: f64,
    spans: *const QefixSpan,
    n_spans: usize,
    out: *mut *mut QefixMasked,
) -> QefixStatus {
    guard(|| {
        let policy = &handle(policy, "policy")?.0;
        let hypothesis = read_str(hypothesis, "hypothesis")?;
        let spans: Vec<ErrorSpan> = if n_spans == 0 {
            Vec::new()
        } else {
            if spans.is_null() {
                return Err(null("spans"));
            }
            std::slice::from_raw_parts(spans, n_spans)
                .iter()
                .map(|s| ErrorSpan::new(s.start, s.end, severity(s.severity)))
                .collect()
        };
        let len = hypothesis.chars().count();
        if let Some(bad) = spans.iter().find(|s| !s.is_valid_for(len)) {
            return Err(MaskError::SpanOutOfBounds {
                start: bad.start,
                end: bad.end,
                len,
            }
            .into());
        }
        if !(0.0..=1.0).contains(&qe_score) {
            return Err(Failure(
                QefixStatus::InvalidArgument,
                format!("qe_score {qe_score} is outside [0, 1]"),
            ));
        }
        let plan = decide_masking(qe_score, &spans, policy)?;
        let masked = apply_mask(hypothesis, &plan, policy)?;
        write_out(out, Box::into_raw(Box::new(QefixMasked { plan, masked })))
    })
}

/// # Safety
/// `masked` must come from [`qefix_mask`] or be null.
#[no_mangle]
pub unsafe extern "C" fn qefix_masked_free(masked: *mut QefixMasked) {
    if !masked.is_null() {
        drop(Box::from_raw(masked));
    }
}

/// # Safety
/// `masked` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_masked_decision(masked: *const QefixMasked, out: *mut QefixDecision) -> QefixStatus {
    guard(|| {
        let m = handle(masked, "masked")?;
        write_out(out, decision(m.plan.decision))
    })
}

/// # Safety
/// `masked` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_masked_blank_count(masked: *const QefixMasked, out: *mut usize) -> QefixStatus {
    guard(|| {
        let m = handle(masked, "masked")?;
        write_out(out, m.masked.blank_count())
    })
}

/// Masked text; free with [`qefix_string_free`].
///
/// # Safety
/// `masked` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_masked_text(masked: *const QefixMasked, out: *mut *mut c_char) -> QefixStatus {
    guard(|| {
        let m = handle(masked, "masked")?;
        write_out(out, to_c_string(m.masked.masked_text.clone())?)
    })
}

/// Restores the original hypothesis; free with [`qefix_string_free`].
///
/// # Safety
/// `masked` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_masked_unmask(masked: *const QefixMasked, out: *mut *mut c_char) -> QefixStatus {
    guard(|| {
        let m = handle(masked, "masked")?;
        write_out(out, to_c_string(m.masked.unmask())?)
    })
}

/// Substitutes `n_fills` strings for the blanks, left to right.
///
/// # Safety
/// `fills` must point to `n_fills` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn qefix_masked_fill(
    masked: *const QefixMasked,
    fills: *const *const c_char,
    n_fills: usize,
    out: *mut *mut c_char,
) -> QefixStatus {
    guard(|| {
        let m = handle(masked, "masked")?;
        let fills: Vec<&str> = if n_fills == 0 {
            Vec::new()
        } else {
            if fills.is_null() {
                return Err(null("fills"));
            }
            std::slice::from_raw_parts(fills, n_fills)
                .iter()
                .map(|&p| read_str(p, "fill"))
                .collect::<Result<_, _>>()?
        };
        let text = m.masked.fill(&fills)?;
        write_out(out, to_c_string(text)?)
    })
}

/// Cleans raw model output. `recoverable` is false when placeholder tokens remain.
///
/// # Safety
/// All pointers must be valid; `out_text` receives a string to free with
/// [`qefix_string_free`].
#[no_mangle]
pub unsafe extern "C" fn qefix_postprocess(
    policy: *const QefixPolicy,
    raw: *const c_char,
    out_text: *mut *mut c_char,
    out_recoverable: *mut bool,
) -> QefixStatus {
    guard(|| {
        let policy = &handle(policy, "policy")?.0;
        let raw = read_str(raw, "raw")?;
        if out_recoverable.is_null() {
            return Err(null("out_recoverable"));
        }
        let pp = postprocess_output(raw, policy);
        write_out(out_text, to_c_string(pp.cleaned)?)?;
        write_out(out_recoverable, pp.recoverable)
    })
}

/// Sentence-level chrF++ on a 0 to 100 scale.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_chrf_pp(hypothesis: *const c_char, reference: *const c_char, out: *mut f64) -> QefixStatus {
    guard(|| {
        let h = read_str(hypothesis, "hypothesis")?;
        let r = read_str(reference, "reference")?;
        write_out(out, metrics::chrf_pp(h, r)?)
    })
}

/// BLEU-4 of a single sentence pair on a 0 to 100 scale. `lang` selects the
/// tokenizer (`zh` and `ja` split into characters).
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_bleu(
    hypothesis: *const c_char,
    reference: *const c_char,
    lang: *const c_char,
    out: *mut f64,
) -> QefixStatus {
    guard(|| {
        let h = read_str(hypothesis, "hypothesis")?;
        let r = read_str(reference, "reference")?;
        let lang = read_str(lang, "lang")?;
        write_out(out, metrics::bleu(&[h], &[r], lang)?)
    })
}

/// Token-level edit distance divided by the original's token count.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_edit_rate(
    original: *const c_char,
    edited: *const c_char,
    lang: *const c_char,
    out: *mut f64,
) -> QefixStatus {
    guard(|| {
        let o = read_str(original, "original")?;
        let e = read_str(edited, "edited")?;
        let lang = read_str(lang, "lang")?;
        write_out(out, metrics::edit_rate(o, e, lang)?)
    })
}

/// Gain-to-edit ratio.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_g2e(delta: f64, edit_rate: f64, out: *mut f64) -> QefixStatus {
    guard(|| write_out(out, metrics::g2e(delta, edit_rate)?))
}

/// Loads a JSONL corpus. `permissive` drops bad spans and clamps scores
/// instead of failing.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_corpus_load(path: *const c_char, permissive: bool, out: *mut *mut QefixCorpus) -> QefixStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let mode = if permissive { LoadMode::Permissive } else { LoadMode::Strict };
        let corpus = load_corpus(path, mode)?;
        write_out(out, Box::into_raw(Box::new(QefixCorpus(corpus))))
    })
}

/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_corpus_len(corpus: *const QefixCorpus, out: *mut usize) -> QefixStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        write_out(out, c.0.len())
    })
}

/// Segment `index` as one JSON record; free with [`qefix_string_free`].
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qefix_corpus_segment_json(
    corpus: *const QefixCorpus,
    index: usize,
    out: *mut *mut c_char,
) -> QefixStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let seg = c.0.segments.get(index).ok_or_else(|| {
            Failure(
                QefixStatus::OutOfBounds,
                format!("index {index} out of range for {} segments", c.0.len()),
            )
        })?;
        let json = serde_json::to_string(&seg.to_record()).expect("record serializes");
        write_out(out, to_c_string(json)?)
    })
}

/// # Safety
/// `corpus` must come from [`qefix_corpus_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn qefix_corpus_free(corpus: *mut QefixCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}
