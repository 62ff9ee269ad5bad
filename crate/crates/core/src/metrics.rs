//! Translation metrics and per-language report tables.
//!
//! chrF++ follows the sacreBLEU default (6 character orders, 2 word orders,
//! beta 2, precision and recall averaged over effective orders). BLEU is
//! corpus-level BLEU-4 with add-one smoothing on the 2..4-gram precisions.
//! Chinese and Japanese are tokenized per character, everything else on
//! whitespace.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::language_name;

pub const CHAR_ORDER: usize = 6;
pub const WORD_ORDER: usize = 2;
pub const CHRF_BETA: f64 = 2.0;
pub const BLEU_ORDER: usize = 4;

const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("original text has no tokens")]
    EmptyOriginal,
    #[error("reference text is empty")]
    EmptyReference,
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("quality changed by {delta} with zero edits")]
    ZeroEditNonzeroGain { delta: f64 },
    #[error("negative edit rate {0}")]
    NegativeEditRate(f64),
}

/// Languages written without spaces between words.
pub fn is_char_tokenized(lang: &str) -> bool {
    matches!(lang, "zh" | "ja")
}

pub fn tokenize<'a>(text: &'a str, lang: &str) -> Vec<&'a str> {
    if is_char_tokenized(lang) {
        text.char_indices()
            .filter(|(_, c)| !c.is_whitespace())
            .map(|(i, c)| &text[i..i + c.len_utf8()])
            .collect()
    } else {
        text.split_whitespace().collect()
    }
}

/// Unit-cost edit distance (insert, delete, substitute).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token-level edit distance from `original` to `edited`, over the number of
/// original tokens.
pub fn edit_rate(original: &str, edited: &str, lang: &str) -> Result<f64, MetricError> {
    let a = tokenize(original, lang);
    if a.is_empty() {
        return Err(MetricError::EmptyOriginal);
    }
    let b = tokenize(edited, lang);
    Ok(levenshtein(&a, &b) as f64 / a.len() as f64)
}

/// Gain per unit of edit. Zero gain with zero edits is 0 by convention.
pub fn g2e(delta: f64, mean_edit_rate: f64) -> Result<f64, MetricError> {
    if mean_edit_rate < 0.0 {
        return Err(MetricError::NegativeEditRate(mean_edit_rate));
    }
    if mean_edit_rate == 0.0 {
        return if delta == 0.0 {
            Ok(0.0)
        } else {
            Err(MetricError::ZeroEditNonzeroGain { delta })
        };
    }
    Ok(delta / mean_edit_rate)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentScorePair {
    pub segment_id: String,
    pub original_score: f64,
    pub new_score: f64,
}

/// Mean of `new_score - original_score`.
pub fn delta_qe(pairs: &[SegmentScorePair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let sum: f64 = pairs.iter().map(|p| p.new_score - p.original_score).sum();
    Ok(sum / pairs.len() as f64)
}

fn ngram_counts<T: Eq + Hash>(items: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if n == 0 || items.len() < n {
        return counts;
    }
    for w in items.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// (hypothesis total, reference total, clipped matches) for one n-gram order.
fn order_stats<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> [u64; 3] {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    [h.values().sum(), r.values().sum(), matches]
}

fn chrf_words(text: &str) -> Vec<&str> {
    let is_punct = |c: char| PUNCTUATION.contains(c);
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        let mut chars = w.chars();
        let first = chars.next().expect("split_whitespace yields non-empty words");
        let last = w.chars().next_back().expect("non-empty");
        if w.chars().count() == 1 {
            out.push(w);
        } else if is_punct(last) {
            let cut = w.len() - last.len_utf8();
            out.push(&w[..cut]);
            out.push(&w[cut..]);
        } else if is_punct(first) {
            let cut = first.len_utf8();
            out.push(&w[cut..]);
            out.push(&w[..cut]);
        } else {
            out.push(w);
        }
    }
    out
}

/// Sufficient statistics for chrF++; add them up for a corpus score.
#[derive(Debug, Clone, PartialEq)]
pub struct ChrfStats(pub [[u64; 3]; CHAR_ORDER + WORD_ORDER]);

impl Default for ChrfStats {
    fn default() -> Self {
        ChrfStats([[0; 3]; CHAR_ORDER + WORD_ORDER])
    }
}

impl ChrfStats {
    pub fn of(hypothesis: &str, reference: &str) -> Self {
        let hc: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        let hw = chrf_words(hypothesis);
        let rw = chrf_words(reference);
        let mut stats = ChrfStats::default();
        for n in 1..=CHAR_ORDER {
            stats.0[n - 1] = order_stats(&hc, &rc, n);
        }
        for n in 1..=WORD_ORDER {
            stats.0[CHAR_ORDER + n - 1] = order_stats(&hw, &rw, n);
        }
        stats
    }

    pub fn add(&mut self, other: &ChrfStats) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }

    /// Score in [0, 100].
    pub fn score(&self) -> f64 {
        let factor = CHRF_BETA * CHRF_BETA;
        let mut avg_prec = 0.0;
        let mut avg_rec = 0.0;
        let mut effective = 0usize;
        for &[n_hyp, n_ref, n_match] in &self.0 {
            if n_hyp > 0 && n_ref > 0 {
                avg_prec += n_match as f64 / n_hyp as f64;
                avg_rec += n_match as f64 / n_ref as f64;
                effective += 1;
            }
        }
        if effective == 0 {
            return 0.0;
        }
        avg_prec /= effective as f64;
        avg_rec /= effective as f64;
        if avg_prec + avg_rec == 0.0 {
            return 0.0;
        }
        100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)
    }
}

pub fn chrf_pp(hypothesis: &str, reference: &str) -> Result<f64, MetricError> {
    if reference.trim().is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(ChrfStats::of(hypothesis, reference).score())
}

/// Corpus chrF++ from summed statistics.
pub fn chrf_pp_corpus<S: AsRef<str>>(hypotheses: &[S], references: &[S]) -> Result<f64, MetricError> {
    check_parallel(hypotheses.len(), references.len())?;
    let mut total = ChrfStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        if r.as_ref().trim().is_empty() {
            return Err(MetricError::EmptyReference);
        }
        total.add(&ChrfStats::of(h.as_ref(), r.as_ref()));
    }
    Ok(total.score())
}

fn check_parallel(hyps: usize, refs: usize) -> Result<(), MetricError> {
    if hyps != refs {
        return Err(MetricError::LengthMismatch { hyps, refs });
    }
    if hyps == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Corpus BLEU-4 in [0, 100].
pub fn bleu<S: AsRef<str>>(hypotheses: &[S], references: &[S], lang: &str) -> Result<f64, MetricError> {
    check_parallel(hypotheses.len(), references.len())?;
    let mut matches = [0u64; BLEU_ORDER];
    let mut totals = [0u64; BLEU_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (h, r) in hypotheses.iter().zip(references) {
        let ht = tokenize(h.as_ref(), lang);
        let rt = tokenize(r.as_ref(), lang);
        hyp_len += ht.len() as u64;
        ref_len += rt.len() as u64;
        for n in 1..=BLEU_ORDER {
            let [c, _, m] = order_stats(&ht, &rt, n);
            totals[n - 1] += c;
            matches[n - 1] += m;
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_ORDER {
        let p = if n == 0 {
            matches[0] as f64 / totals[0] as f64
        } else {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / BLEU_ORDER as f64).exp())
}

/// How the gain-to-edit ratio aggregates over a language's segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum G2eMode {
    /// Mean gain over mean edit rate.
    #[default]
    Corpus,
    /// Mean of per-segment ratios.
    SegmentMean,
}

/// One segment after evaluation: both texts scored by the same scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSegment {
    pub id: String,
    pub language: String,
    pub original_text: String,
    pub output_text: String,
    pub original_score: f64,
    pub new_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageReportRow {
    pub language: String,
    pub delta_qe: f64,
    pub g2e: f64,
    pub bleu: f64,
    pub chrf_pp: f64,
    pub edit_rate: f64,
    pub n_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    /// Sorted by `delta_qe`, highest first.
    pub rows: Vec<LanguageReportRow>,
    /// Unweighted mean of the rows; `n_segments` is the total.
    pub average: LanguageReportRow,
}

pub const AVERAGE_LABEL: &str = "Average";

fn language_row(
    language: &str,
    segs: &[&EvaluatedSegment],
    mode: G2eMode,
) -> Result<LanguageReportRow, MetricError> {
    let pairs: Vec<SegmentScorePair> = segs
        .iter()
        .map(|s| SegmentScorePair {
            segment_id: s.id.clone(),
            original_score: s.original_score,
            new_score: s.new_score,
        })
        .collect();
    let delta = delta_qe(&pairs)?;
    let rates = segs
        .iter()
        .map(|s| edit_rate(&s.original_text, &s.output_text, language))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
    let ratio = match mode {
        G2eMode::Corpus => g2e(delta, mean_rate)?,
        G2eMode::SegmentMean => {
            let mut sum = 0.0;
            for (p, r) in pairs.iter().zip(&rates) {
                sum += g2e(p.new_score - p.original_score, *r)?;
            }
            sum / pairs.len() as f64
        }
    };
    let outputs: Vec<&str> = segs.iter().map(|s| s.output_text.as_str()).collect();
    let originals: Vec<&str> = segs.iter().map(|s| s.original_text.as_str()).collect();
    Ok(LanguageReportRow {
        language: language.to_string(),
        delta_qe: delta,
        g2e: ratio,
        bleu: bleu(&outputs, &originals, language)?,
        chrf_pp: chrf_pp_corpus(&outputs, &originals)?,
        edit_rate: mean_rate,
        n_segments: segs.len(),
    })
}

/// Unweighted mean across rows.
pub fn average_row(rows: &[LanguageReportRow]) -> Result<LanguageReportRow, MetricError> {
    if rows.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&LanguageReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(LanguageReportRow {
        language: AVERAGE_LABEL.to_string(),
        delta_qe: mean(|r| r.delta_qe),
        g2e: mean(|r| r.g2e),
        bleu: mean(|r| r.bleu),
        chrf_pp: mean(|r| r.chrf_pp),
        edit_rate: mean(|r| r.edit_rate),
        n_segments: rows.iter().map(|r| r.n_segments).sum(),
    })
}

/// Groups by language and computes one row per language plus the average.
/// BLEU and chrF++ compare each output with its original hypothesis.
pub fn build_report(results: &[EvaluatedSegment], mode: G2eMode) -> Result<Report, MetricError> {
    if results.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut by_lang: BTreeMap<&str, Vec<&EvaluatedSegment>> = BTreeMap::new();
    for r in results {
        by_lang.entry(r.language.as_str()).or_default().push(r);
    }
    let mut rows = by_lang
        .iter()
        .map(|(lang, segs)| language_row(lang, segs, mode))
        .collect::<Result<Vec<_>, _>>()?;
    // Stable sort keeps the alphabetical order for equal deltas.
    rows.sort_by(|a, b| b.delta_qe.total_cmp(&a.delta_qe));
    let average = average_row(&rows)?;
    Ok(Report { rows, average })
}

impl Report {
    pub const CSV_HEADER: &'static str = "language,delta_qe,g2e,bleu,chrf_pp,edit_rate,n_segments";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in self.rows.iter().chain(std::iter::once(&self.average)) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.language, r.delta_qe, r.g2e, r.bleu, r.chrf_pp, r.edit_rate, r.n_segments
            );
        }
        out
    }

    /// Aligned text table: language, ΔQE, G2E ratio, BLEU, chrF++.
    pub fn to_text_table(&self) -> String {
        let header = ["Language", "ΔQE", "G2E Ratio", "BLEU", "chrF++"];
        let mut lines: Vec<[String; 5]> = Vec::new();
        let fmt_row = |r: &LanguageReportRow| {
            let name = if r.language == AVERAGE_LABEL {
                AVERAGE_LABEL.to_string()
            } else {
                language_name(&r.language)
                    .map(str::to_string)
                    .unwrap_or_else(|_| r.language.clone())
            };
            [
                name,
                format!("{:.2e}", r.delta_qe),
                format!("{:.2e}", r.g2e),
                format!("{:.2}", r.bleu),
                format!("{:.2}", r.chrf_pp),
            ]
        };
        lines.push(header.map(str::to_string));
        for r in &self.rows {
            lines.push(fmt_row(r));
        }
        let avg = fmt_row(&self.average);
        let mut widths = [0usize; 5];
        for l in lines.iter().chain(std::iter::once(&avg)) {
            for (w, cell) in widths.iter_mut().zip(l) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let render = |cells: &[String; 5]| {
            let mut s = String::new();
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = w - cell.chars().count();
                if i == 0 {
                    s.push_str(cell);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str(&" ".repeat(pad));
                    s.push_str(cell);
                }
            }
            s.trim_end().to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = String::new();
        out.push_str(&render(&lines[0]));
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for l in &lines[1..] {
            out.push_str(&render(l));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        out.push_str(&render(&avg));
        out.push('\n');
        out
    }
}
