//! Slow, literal reference implementations used to check the library.

use qefix::corpus::{ErrorSpan, Severity};
use qefix::masking::MaskDecision;

/// Every contiguous run of `n` items, in order.
fn all_ngrams<T: Clone>(items: &[T], n: usize) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut i = 0;
    while i + n <= items.len() {
        out.push(items[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn occurrences<T: PartialEq>(list: &[Vec<T>], g: &[T]) -> u64 {
    list.iter().filter(|x| x.as_slice() == g).count() as u64
}

/// (hyp count, ref count, clipped matches), by exhaustive comparison.
pub fn ngram_stats<T: Clone + PartialEq>(hyp: &[T], reference: &[T], n: usize) -> (u64, u64, u64) {
    let h = all_ngrams(hyp, n);
    let r = all_ngrams(reference, n);
    let mut seen: Vec<Vec<T>> = Vec::new();
    let mut matches = 0;
    for g in &h {
        if seen.contains(g) {
            continue;
        }
        seen.push(g.clone());
        matches += occurrences(&h, g).min(occurrences(&r, g));
    }
    (h.len() as u64, r.len() as u64, matches)
}

fn is_ascii_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// Whitespace split, then peel one trailing (else leading) ASCII punctuation
/// mark off any word longer than one character.
pub fn chrf_word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > 1 && is_ascii_punct(chars[chars.len() - 1]) {
            out.push(chars[..chars.len() - 1].iter().collect());
            out.push(chars[chars.len() - 1].to_string());
        } else if chars.len() > 1 && is_ascii_punct(chars[0]) {
            out.push(chars[1..].iter().collect());
            out.push(chars[0].to_string());
        } else {
            out.push(word.to_string());
        }
    }
    out
}

/// chrF++ (char orders 1..=6 without whitespace, word orders 1..=2, beta 2).
pub fn chrf_pp(hyp: &str, reference: &str) -> f64 {
    chrf_pp_corpus(&[hyp], &[reference])
}

pub fn chrf_pp_corpus(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut totals = [(0u64, 0u64, 0u64); 8];
    for (h, r) in hyps.iter().zip(refs) {
        let hc: Vec<char> = h.chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = r.chars().filter(|c| !c.is_whitespace()).collect();
        let hw = chrf_word_tokens(h);
        let rw = chrf_word_tokens(r);
        for n in 1..=6 {
            let s = ngram_stats(&hc, &rc, n);
            totals[n - 1].0 += s.0;
            totals[n - 1].1 += s.1;
            totals[n - 1].2 += s.2;
        }
        for n in 1..=2 {
            let s = ngram_stats(&hw, &rw, n);
            totals[5 + n].0 += s.0;
            totals[5 + n].1 += s.1;
            totals[5 + n].2 += s.2;
        }
    }
    let usable: Vec<&(u64, u64, u64)> = totals.iter().filter(|t| t.0 > 0 && t.1 > 0).collect();
    if usable.is_empty() {
        return 0.0;
    }
    let k = usable.len() as f64;
    let p = usable.iter().map(|t| t.2 as f64 / t.0 as f64).sum::<f64>() / k;
    let r = usable.iter().map(|t| t.2 as f64 / t.1 as f64).sum::<f64>() / k;
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    100.0 * 5.0 * p * r / (4.0 * p + r)
}

pub fn tokens(text: &str, lang: &str) -> Vec<String> {
    if lang == "zh" || lang == "ja" {
        text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    } else {
        text.split_whitespace().map(String::from).collect()
    }
}

/// Corpus BLEU-4; add-one smoothing on orders 2..=4; 0 when nothing matches.
pub fn bleu(hyps: &[&str], refs: &[&str], lang: &str) -> f64 {
    let mut m = [0u64; 4];
    let mut t = [0u64; 4];
    let (mut hl, mut rl) = (0u64, 0u64);
    for (h, r) in hyps.iter().zip(refs) {
        let ht = tokens(h, lang);
        let rt = tokens(r, lang);
        hl += ht.len() as u64;
        rl += rt.len() as u64;
        for n in 1..=4 {
            let s = ngram_stats(&ht, &rt, n);
            t[n - 1] += s.0;
            m[n - 1] += s.2;
        }
    }
    if hl == 0 || m[0] == 0 {
        return 0.0;
    }
    let p1 = m[0] as f64 / t[0] as f64;
    let p2 = (m[1] + 1) as f64 / (t[1] + 1) as f64;
    let p3 = (m[2] + 1) as f64 / (t[2] + 1) as f64;
    let p4 = (m[3] + 1) as f64 / (t[3] + 1) as f64;
    let geo = (p1 * p2 * p3 * p4).powf(0.25);
    let bp = if hl > rl { 1.0 } else { (1.0 - rl as f64 / hl as f64).exp() };
    100.0 * bp * geo
}

/// Full-matrix Levenshtein.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub fn edit_rate(original: &str, edited: &str, lang: &str) -> f64 {
    let a = tokens(original, lang);
    let b = tokens(edited, lang);
    levenshtein(&a, &b) as f64 / a.len() as f64
}

/// The conditional masking rule, written as a literal if/else chain over the
/// severity multiset. Returns the decision and which input spans are chosen.
pub fn masking_rule(score: f64, severities: &[Severity]) -> (MaskDecision, Vec<usize>) {
    if severities.is_empty() {
        return (MaskDecision::NoMask, vec![]);
    }
    if score >= 0.9 {
        (MaskDecision::NoMask, vec![])
    } else if score > 0.5 {
        let mut all_minor = true;
        for s in severities {
            if *s != Severity::Minor {
                all_minor = false;
            }
        }
        if all_minor {
            (MaskDecision::MaskMinorOnly, (0..severities.len()).collect())
        } else {
            let mut keep = vec![];
            for (i, s) in severities.iter().enumerate() {
                if *s == Severity::Major || *s == Severity::Critical {
                    keep.push(i);
                }
            }
            (MaskDecision::MaskNonMinor, keep)
        }
    } else {
        (MaskDecision::MaskAll, (0..severities.len()).collect())
    }
}

/// All severity multisets of size 0..=max_len (as sorted vectors).
pub fn severity_multisets(max_len: usize) -> Vec<Vec<Severity>> {
    let all = [Severity::Minor, Severity::Major, Severity::Critical];
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<Severity>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for m in &frontier {
            for s in all {
                if m.last().is_none_or(|l| *l <= s) {
                    let mut v = m.clone();
                    v.push(s);
                    next.push(v);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Disjoint, non-touching two-char spans, one per severity.
pub fn spaced_spans(severities: &[Severity]) -> Vec<ErrorSpan> {
    severities
        .iter()
        .enumerate()
        .map(|(i, s)| ErrorSpan::new(3 * i, 3 * i + 2, *s))
        .collect()
}
