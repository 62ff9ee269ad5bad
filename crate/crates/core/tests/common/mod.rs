#![allow(dead_code)]

pub mod http;
pub mod oracles;

use qefix::backends::{MockBackend, MockKind, TranslationBackend};
use qefix::corpus::{parse_corpus, Corpus, LoadMode, SegmentRecord, SpanRecord, SHARED_TASK_TARGETS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[(&str, &[&str])] = &[
    ("cs", &["kočka", "pes", "dům", "řeka", "sedí", "běží", "velký", "malý", "na", "v", "není", "čtení"]),
    ("uk", &["кіт", "собака", "будинок", "річка", "сидить", "біжить", "великий", "малий", "на", "в"]),
    ("ru", &["кошка", "собака", "дом", "река", "сидит", "бежит", "большой", "маленький", "на", "в"]),
    ("is", &["köttur", "hundur", "hús", "á", "situr", "hleypur", "stór", "lítill", "þessi", "ég"]),
    ("zh", &["猫", "狗", "房子", "河", "坐", "跑", "大", "小", "在", "上"]),
    ("ja", &["猫", "犬", "家", "川", "座る", "走る", "大きい", "小さい", "の", "に", "カップ戦"]),
];
const EN: &[&str] = &["the", "cat", "dog", "house", "river", "sits", "runs", "big", "small", "on", "in"];

fn words(lang: &str) -> &'static [&'static str] {
    WORDS.iter().find(|(l, _)| *l == lang).map(|(_, w)| *w).unwrap()
}

fn sentence(rng: &mut ChaCha8Rng, pool: &[&str], len: usize) -> Vec<String> {
    (0..len).map(|_| pool.choose(rng).unwrap().to_string()).collect()
}

fn join(lang: &str, tokens: &[String]) -> String {
    if matches!(lang, "zh" | "ja") {
        tokens.concat() + "。"
    } else {
        tokens.join(" ") + "."
    }
}

/// Random records across the six target languages. The hypothesis is the
/// reference with some words swapped; spans cover the swapped words.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<SegmentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lang = SHARED_TASK_TARGETS[i % SHARED_TASK_TARGETS.len()];
            let pool = words(lang);
            let len = rng.gen_range(3..10);
            let reference = sentence(&mut rng, pool, len);
            let mut hyp = reference.clone();
            let mut swapped = Vec::new();
            for (k, tok) in hyp.iter_mut().enumerate() {
                if rng.gen_bool(0.25) {
                    *tok = pool.choose(&mut rng).unwrap().to_string();
                    swapped.push(k);
                }
            }
            let sep = if matches!(lang, "zh" | "ja") { 0 } else { 1 };
            let mut spans = Vec::new();
            let mut offset = 0;
            for (k, tok) in hyp.iter().enumerate() {
                let len = tok.chars().count();
                if swapped.contains(&k) {
                    let severity = ["minor", "major", "critical"].choose(&mut rng).unwrap();
                    spans.push(SpanRecord {
                        start_i: offset as i64,
                        end_i: (offset + len) as i64,
                        severity: severity.to_string(),
                    });
                }
                offset += len + sep;
            }
            let src = sentence(&mut rng, EN, len).join(" ") + ".";
            SegmentRecord {
                id: format!("seg-{i:05}"),
                lp: format!("en-{lang}"),
                domain: ["news", "social", "speech", "literary"].choose(&mut rng).unwrap().to_string(),
                system: "synthetic".into(),
                src,
                mt: join(lang, &hyp),
                reference: Some(join(lang, &reference)),
                qe_score: (rng.gen_range(0..=100) as f64) / 100.0,
                error_spans: spans,
            }
        })
        .collect()
}

pub fn records_to_jsonl(records: &[SegmentRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect()
}

pub fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    let text = records_to_jsonl(&synthetic_records(n, seed));
    parse_corpus(&text, std::path::Path::new("synthetic.jsonl"), LoadMode::Strict).unwrap()
}

/// Identity, reference and noisy mocks covering all six languages.
pub fn mock_backends(seed: u64) -> Vec<Box<dyn TranslationBackend>> {
    vec![
        Box::new(MockBackend::new("identity", MockKind::Identity, &SHARED_TASK_TARGETS, seed)),
        Box::new(MockBackend::new("reference", MockKind::Reference, &SHARED_TASK_TARGETS, seed)),
        Box::new(MockBackend::new("noisy", MockKind::Noisy { rate: 0.15 }, &SHARED_TASK_TARGETS, seed)),
    ]
}

/// Run config selecting with the three mocks.
pub fn select_config_toml(corpus: &str, out: &str, seed: u64) -> String {
    format!(
        r#"
mode = "select"
corpus = "{corpus}"
out = "{out}"
seed = {seed}
selection_scorer = "chrf-oracle"

[[backends]]
name = "identity"
kind = "mock-identity"
supported_langs = ["cs", "uk", "ru", "is", "zh", "ja"]

[[backends]]
name = "reference"
kind = "mock-reference"
supported_langs = ["cs", "uk", "ru", "is", "zh", "ja"]

[[backends]]
name = "noisy"
kind = "mock-noisy"
noise_rate = 0.15
supported_langs = ["cs", "uk", "ru", "is", "zh", "ja"]
"#
    )
}

const LATIN: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "mat.", "a", "b", "kočka,", "(sedí", "na", "rohožce!", "x", "it's", "--", "\"hi\"",
];
const CYRILLIC: &[&str] = &["кіт", "сидить", "на", "килимку.", "кошка", "сидит", "коврике,", "и"];
const CJK: &[&str] = &["猫", "が", "マット", "の", "上", "に", "座った", "。", "我", "们", "喜欢", "，", "カップ戦"];

/// A random pair in the given language, from shared vocabulary so n-grams overlap.
fn random_pair(rng: &mut ChaCha8Rng, lang: &str) -> (String, String) {
    let (pool, sep) = match lang {
        "zh" | "ja" => (CJK, ""),
        "ru" | "uk" => (CYRILLIC, " "),
        _ => (LATIN, " "),
    };
    let make = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..12);
        (0..n)
            .map(|_| *pool.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(sep)
    };
    let a = make(rng);
    let b = if rng.gen_bool(0.5) {
        // Derived from `a` so that long n-grams match too.
        let mut words: Vec<&str> = if sep.is_empty() {
            vec![a.as_str()]
        } else {
            a.split(' ').collect()
        };
        if words.len() > 1 {
            let i = rng.gen_range(0..words.len());
            words.remove(i);
        }
        let extra = *pool.choose(rng).unwrap();
        words.push(extra);
        words.join(sep)
    } else {
        make(rng)
    };
    (a, b)
}

pub fn random_pairs(seed: u64, n: usize) -> Vec<(String, String, &'static str)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let langs = ["cs", "ru", "zh", "ja", "is", "uk"];
    (0..n)
        .map(|i| {
            let lang = langs[i % langs.len()];
            let (a, b) = random_pair(&mut rng, lang);
            (a, b, lang)
        })
        .collect()
}
