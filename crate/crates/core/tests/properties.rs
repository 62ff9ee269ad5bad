mod common;

use proptest::prelude::*;
use qefix::corpus::{parse_corpus, LoadMode};
use qefix::masking::{apply_mask, decide_masking, merge_spans, MaskDecision, MaskError, MaskPlan, MaskPolicy};
use qefix::metrics;
use qefix::pipeline::select_best;
use qefix::pipeline::{CandidateSet, CandidateSource, ScoredCandidate};
use qefix::{ErrorSpan, Severity};

fn severity() -> impl Strategy<Value = Severity> {
    prop_oneof![Just(Severity::Minor), Just(Severity::Major), Just(Severity::Critical)]
}

/// Mixed-script text: Latin with diacritics, combining marks, Cyrillic, CJK,
/// kana, emoji, and the characters a blank token is built from.
fn text() -> impl Strategy<Value = String> {
    let alphabet: Vec<char> = "aé ÿ\u{301}\u{308}кі猫が戦カ😀_BLANK.,\n".chars().collect();
    prop::collection::vec(prop::sample::select(alphabet), 1..40).prop_map(|v| v.into_iter().collect())
}

fn spans_for(len: usize) -> impl Strategy<Value = Vec<ErrorSpan>> {
    prop::collection::vec((0..len, 1..=len, severity()), 0..5).prop_map(move |raw| {
        raw.into_iter()
            .filter_map(|(a, b, s)| {
                let (start, end) = (a.min(b), a.max(b));
                (start < end && end <= len).then(|| ErrorSpan::new(start, end, s))
            })
            .collect()
    })
}

fn text_and_spans() -> impl Strategy<Value = (String, Vec<ErrorSpan>)> {
    text().prop_flat_map(|t| {
        let len = t.chars().count();
        (Just(t), spans_for(len))
    })
}

/// Masked text built by slicing, with no collision check, plus the byte
/// offsets where blanks were inserted.
fn naive_mask(text: &str, spans: &[ErrorSpan], blank: &str) -> (String, Vec<usize>) {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::new();
    let mut offsets = Vec::new();
    let mut pos = 0;
    for s in spans {
        out.extend(&chars[pos..s.start]);
        offsets.push(out.len());
        out.push_str(blank);
        pos = s.end;
    }
    out.extend(&chars[pos..]);
    (out, offsets)
}

fn coverage(spans: &[ErrorSpan], len: usize) -> Vec<Option<Severity>> {
    let mut cells = vec![None; len];
    for s in spans {
        for cell in &mut cells[s.start..s.end] {
            *cell = Some(cell.map_or(s.severity, |c: Severity| c.max(s.severity)));
        }
    }
    cells
}

proptest! {
    #[test]
    fn mask_round_trip((t, spans) in text_and_spans(), score in 0.0f64..=1.0) {
        let policy = MaskPolicy::default();
        let plan = decide_masking(score, &spans, &policy).unwrap();
        match apply_mask(&t, &plan, &policy) {
            Ok(m) => {
                prop_assert_eq!(m.unmask(), t.clone());
                prop_assert_eq!(m.fill(&m.removed_texts()).unwrap(), t.clone());
                prop_assert_eq!(m.blank_count(), plan.selected_spans.len());
                prop_assert!(m.preserves_context(&t));
            }
            Err(MaskError::BlankCollision(_)) => {
                let (naive, offsets) = naive_mask(&t, &plan.selected_spans, &policy.blank_token);
                let found: Vec<usize> = naive.match_indices(policy.blank_token.as_str()).map(|(i, _)| i).collect();
                prop_assert!(t.contains(&policy.blank_token) || found != offsets);
            }
            Err(e) => prop_assert!(false, "unexpected {e:?}"),
        }
    }

    #[test]
    fn merge_matches_coverage_oracle(spans in spans_for(30)) {
        let merged = merge_spans(&spans);
        prop_assert!(merged.windows(2).all(|w| w[0].end < w[1].start));
        prop_assert!(merged.iter().all(|s| s.start < s.end));
        // Same covered cells.
        let want: Vec<bool> = coverage(&spans, 30).iter().map(Option::is_some).collect();
        let got: Vec<bool> = coverage(&merged, 30).iter().map(Option::is_some).collect();
        prop_assert_eq!(got, want);
        // Each merged span carries the highest severity it absorbed.
        for m in &merged {
            let top = spans
                .iter()
                .filter(|s| s.start >= m.start && s.end <= m.end)
                .map(|s| s.severity)
                .max();
            prop_assert_eq!(Some(m.severity), top);
        }
        prop_assert_eq!(merge_spans(&merged), merged.clone());
    }

    #[test]
    fn lower_scores_never_mask_less(spans in spans_for(30), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        let policy = MaskPolicy::default();
        let lo_plan = decide_masking(lo, &spans, &policy).unwrap();
        let hi_plan = decide_masking(hi, &spans, &policy).unwrap();
        let lo_cov = coverage(&lo_plan.selected_spans, 30);
        let hi_cov = coverage(&hi_plan.selected_spans, 30);
        for (l, h) in lo_cov.iter().zip(&hi_cov) {
            prop_assert!(h.is_none() || l.is_some());
        }
        if spans.is_empty() {
            prop_assert_eq!(lo_plan.decision, MaskDecision::NoMask);
        }
    }

    #[test]
    fn chrf_and_bleu_are_bounded(h in text(), r in text()) {
        prop_assume!(!r.trim().is_empty());
        let c = metrics::chrf_pp(&h, &r).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&c));
        for lang in ["cs", "ja"] {
            let b = metrics::bleu(&[&h], &[&r], lang).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
        }
        prop_assert!((metrics::chrf_pp(&r, &r).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn g2e_is_scale_invariant(delta in -1.0f64..1.0, rate in 0.001f64..2.0, k in 0.01f64..100.0) {
        let base = metrics::g2e(delta, rate).unwrap();
        let scaled = metrics::g2e(delta * k, rate * k).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn levenshtein_triangle(a in text(), b in text(), c in text()) {
        let (a, b, c): (Vec<char>, Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect(), c.chars().collect());
        let ab = metrics::levenshtein(&a, &b);
        let bc = metrics::levenshtein(&b, &c);
        let ac = metrics::levenshtein(&a, &c);
        prop_assert!(ac <= ab + bc);
        prop_assert_eq!(ab, metrics::levenshtein(&b, &a));
        prop_assert_eq!(ab, common::oracles::levenshtein(&a, &b));
    }

    #[test]
    fn selection_takes_the_maximum(scores in prop::collection::vec(0.0f64..=1.0, 1..6)) {
        let cs = CandidateSet {
            segment_id: "s".into(),
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, &score)| ScoredCandidate {
                    source: if i == 0 { CandidateSource::Original } else { CandidateSource::Backend(format!("b{i}")) },
                    text: format!("t{i}"),
                    score,
                })
                .collect(),
        };
        let sel = select_best(cs);
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(sel.winner.score, max);
        prop_assert!(sel.winner.score >= sel.original_score());
        let first_max = scores.iter().position(|&s| s == max).unwrap();
        prop_assert_eq!(sel.winner.text, format!("t{first_max}"));
    }

    #[test]
    fn corpus_jsonl_round_trip(seed in 0u64..1000, n in 1usize..20) {
        let corpus = common::synthetic_corpus(n, seed);
        let text = corpus.to_jsonl();
        let again = parse_corpus(&text, std::path::Path::new("again.jsonl"), LoadMode::Strict).unwrap();
        prop_assert_eq!(&again.segments, &corpus.segments);
        prop_assert_eq!(again.to_jsonl(), text);
    }
}

#[test]
fn unnormalized_plans_are_rejected() {
    let plan = MaskPlan {
        decision: MaskDecision::MaskAll,
        selected_spans: vec![ErrorSpan::new(0, 3, Severity::Major), ErrorSpan::new(2, 4, Severity::Minor)],
    };
    assert_eq!(
        apply_mask("abcdef", &plan, &MaskPolicy::default()),
        Err(MaskError::UnnormalizedPlan)
    );
}
