//! Command-line entry point: one declarative TOML config plus flag overrides.
//!
//! Exit codes: 0 success, 1 configuration error, 2 fatal pipeline error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{BackendConfig, HealthStatus, TranslationBackend};
use crate::corpus::{load_corpus, LoadMode};
use crate::io::write_atomic;
use crate::masking::MaskPolicy;
use crate::metrics::{build_report, EvaluatedSegment, G2eMode};
use crate::pipeline::{
    contribution_table, contributions_csv, run_correct, run_select, OutputRecord, DEFAULT_CONCURRENCY, ORIGINAL,
};
use crate::prompting::PromptBook;
use crate::scoring::{build_scorer, QeScorer, ScoreItem, ScorerConfig};

pub const SELECTIONS_FILE: &str = "selections.jsonl";
pub const CONTRIBUTIONS_FILE: &str = "contributions.csv";
pub const CORRECTIONS_FILE: &str = "corrections.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const HEALTH_FILE: &str = "health.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Pipeline(_) => 2,
        }
    }

    /// Machine-readable form for standard error.
    pub fn to_json(&self) -> String {
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::Pipeline(_) => "pipeline",
        };
        serde_json::json!({ "error": kind, "message": self.to_string() }).to_string()
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn pipeline_err(e: impl std::fmt::Display) -> CliError {
    CliError::Pipeline(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Select,
    Correct,
    Evaluate,
    Report,
    Health,
}

#[derive(Debug, Parser)]
#[command(name = "qefix", version, about = "QE-guided retranslation and error-span correction")]
pub struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Keep model output even when it still contains placeholder tokens.
    #[arg(long)]
    pub faithful: bool,
    /// Input results file for `evaluate` and `report`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Accept non-shared-task languages and drop invalid spans instead of failing.
    #[arg(long)]
    pub permissive: bool,
}

/// Everything a run needs. Relative paths in a config file resolve against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub load_mode: LoadMode,
    pub backends: Vec<BackendConfig>,
    pub scorers: Vec<ScorerConfig>,
    pub selection_scorer: Option<String>,
    pub evaluation_scorer: Option<String>,
    /// Backend used by `correct`; defaults to the only backend when there is one.
    pub correction_backend: Option<String>,
    pub mask_policy: MaskPolicy,
    pub concurrency: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub faithful: bool,
    pub results: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub g2e_mode: G2eMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            mode: None,
            load_mode: LoadMode::Strict,
            backends: Vec::new(),
            scorers: Vec::new(),
            selection_scorer: None,
            evaluation_scorer: None,
            correction_backend: None,
            mask_policy: MaskPolicy::default(),
            concurrency: DEFAULT_CONCURRENCY,
            seed: 0,
            out: PathBuf::from("out"),
            faithful: false,
            results: None,
            templates_dir: None,
            exemplars: None,
            g2e_mode: G2eMode::Corpus,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(config_err)?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        };
        resolve(&mut cfg.corpus);
        resolve(&mut cfg.results);
        resolve(&mut cfg.templates_dir);
        resolve(&mut cfg.exemplars);
        if cfg.out.is_relative() {
            cfg.out = base_dir.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn from_args(args: &Args) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("."));
                Self::from_toml(&text, base)?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = args.mode {
            cfg.mode = Some(m);
        }
        if let Some(c) = &args.corpus {
            cfg.corpus = Some(c.clone());
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(o) = &args.out {
            cfg.out = o.clone();
        }
        if let Some(c) = args.concurrency {
            cfg.concurrency = c;
        }
        if let Some(r) = &args.results {
            cfg.results = Some(r.clone());
        }
        cfg.faithful |= args.faithful;
        if args.permissive {
            cfg.load_mode = LoadMode::Permissive;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<Mode, CliError> {
        let mode = self.mode.ok_or_else(|| config_err("no mode given"))?;
        if self.concurrency == 0 {
            return Err(config_err("concurrency must be at least 1"));
        }
        self.mask_policy.validate().map_err(config_err)?;
        let mut names = std::collections::BTreeSet::new();
        for b in &self.backends {
            if b.name == ORIGINAL {
                return Err(config_err(format!("backend name {ORIGINAL:?} is reserved")));
            }
            if !names.insert(b.name.as_str()) {
                return Err(config_err(format!("duplicate backend name {:?}", b.name)));
            }
        }
        let need = |field: &Option<PathBuf>, what: &str| {
            field
                .as_ref()
                .map(|_| ())
                .ok_or_else(|| config_err(format!("mode {mode:?} needs {what}")))
        };
        match mode {
            Mode::Select => {
                need(&self.corpus, "a corpus")?;
                if self.selection_scorer.is_none() {
                    return Err(config_err("select needs selection_scorer"));
                }
            }
            Mode::Correct => {
                need(&self.corpus, "a corpus")?;
                self.correction_backend_config()?;
            }
            Mode::Evaluate => {
                need(&self.corpus, "a corpus")?;
                need(&self.results, "a results file")?;
                if self.evaluation_scorer.is_none() {
                    return Err(config_err("evaluate needs evaluation_scorer"));
                }
            }
            Mode::Report => need(&self.results, "a results file")?,
            Mode::Health => {}
        }
        Ok(mode)
    }

    fn correction_backend_config(&self) -> Result<&BackendConfig, CliError> {
        match &self.correction_backend {
            Some(name) => self
                .backends
                .iter()
                .find(|b| &b.name == name)
                .ok_or_else(|| config_err(format!("correction_backend {name:?} is not configured"))),
            None if self.backends.len() == 1 => Ok(&self.backends[0]),
            None => Err(config_err("correct needs correction_backend (or exactly one backend)")),
        }
    }

    /// Hash of the effective configuration, output directory excluded.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex_digest(&json)
    }

    fn prompt_book(&self) -> Result<PromptBook, CliError> {
        let mut book = PromptBook::builtin();
        if let Some(dir) = &self.templates_dir {
            book = book.with_template_dir(dir).map_err(config_err)?;
        }
        if let Some(path) = &self.exemplars {
            book = book.with_exemplar_file(path).map_err(config_err)?;
        }
        Ok(book)
    }

    fn scorer(&self, name: &str) -> Result<Box<dyn QeScorer>, CliError> {
        let remotes: Vec<ScorerConfig> = self
            .scorers
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if let Ok(url) = std::env::var(scorer_url_env_var(&s.name)) {
                    s.url = url;
                }
                s
            })
            .collect();
        build_scorer(name, &remotes, self.seed).map_err(config_err)
    }
}

/// Environment variable overriding a remote scorer's URL.
pub fn scorer_url_env_var(name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("QEFIX_SCORER_{slug}_URL")
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub mode: Mode,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_sha256: Option<String>,
    pub segments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_scorer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation_scorer: Option<String>,
    pub backends: Vec<String>,
    pub faithful: bool,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub counters: BTreeMap<String, usize>,
}

/// What a run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: Mode,
    pub outputs: Vec<PathBuf>,
    pub health: Vec<HealthStatus>,
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn write(path: PathBuf, contents: &str, outputs: &mut Vec<PathBuf>) -> Result<(), CliError> {
    write_atomic(&path, contents.as_bytes())
        .map_err(|e| pipeline_err(format!("cannot write {}: {e}", path.display())))?;
    outputs.push(path);
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| pipeline_err(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn build_backends(cfg: &RunConfig) -> Result<Vec<Box<dyn TranslationBackend>>, CliError> {
    cfg.backends
        .iter()
        .map(|b| b.build(cfg.seed).map_err(config_err))
        .collect()
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mode = cfg.validate()?;
    let mut outputs = Vec::new();
    let mut health = Vec::new();
    let manifest = |segments: usize, counters: BTreeMap<String, usize>, corpus_sha: Option<String>| Manifest {
        mode,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        corpus_sha256: corpus_sha,
        segments,
        selection_scorer: cfg.selection_scorer.clone(),
        evaluation_scorer: cfg.evaluation_scorer.clone(),
        backends: cfg.backends.iter().map(|b| b.name.clone()).collect(),
        faithful: cfg.faithful,
        counters,
    };
    let load = || -> Result<(crate::corpus::Corpus, String), CliError> {
        let path = cfg.corpus.as_ref().expect("validated");
        let corpus = load_corpus(path, cfg.load_mode).map_err(config_err)?;
        let bytes = std::fs::read(path).map_err(config_err)?;
        Ok((corpus, hex_digest(&bytes)))
    };

    match mode {
        Mode::Select => {
            let (corpus, sha) = load()?;
            let backends = build_backends(cfg)?;
            let scorer = cfg.scorer(cfg.selection_scorer.as_deref().expect("validated"))?;
            let prompts = cfg.prompt_book()?;
            let selections =
                run_select(&corpus, &backends, &prompts, scorer.as_ref(), cfg.concurrency).map_err(pipeline_err)?;
            let records = corpus
                .iter()
                .zip(&selections)
                .map(|(seg, sel)| OutputRecord::from_selection(seg, sel));
            write(cfg.out.join(SELECTIONS_FILE), &jsonl(records), &mut outputs)?;
            let mut systems = vec![ORIGINAL];
            systems.extend(cfg.backends.iter().map(|b| b.name.as_str()));
            let rows = if selections.is_empty() {
                systems.iter().map(|s| (s.to_string(), 0)).collect()
            } else {
                contribution_table(&selections, &systems).map_err(pipeline_err)?
            };
            write(cfg.out.join(CONTRIBUTIONS_FILE), &contributions_csv(&rows), &mut outputs)?;
            let counters = rows.into_iter().collect();
            let m = manifest(corpus.len(), counters, Some(sha));
            write(cfg.out.join(MANIFEST_FILE), &pretty(&m), &mut outputs)?;
        }
        Mode::Correct => {
            let (corpus, sha) = load()?;
            let backend = cfg.correction_backend_config()?.build(cfg.seed).map_err(config_err)?;
            let prompts = cfg.prompt_book()?;
            let run = run_correct(
                &corpus,
                backend.as_ref(),
                &prompts,
                &cfg.mask_policy,
                cfg.faithful,
                cfg.concurrency,
            )
            .map_err(pipeline_err)?;
            let records = corpus
                .iter()
                .zip(&run.segments)
                .map(|(seg, c)| OutputRecord::from_correction(seg, c));
            write(cfg.out.join(CORRECTIONS_FILE), &jsonl(records), &mut outputs)?;
            let mut counters = BTreeMap::new();
            counters.insert("fallbacks".to_string(), run.fallbacks);
            counters.insert("locality_violations".to_string(), run.locality_violations);
            for c in &run.segments {
                *counters.entry(format!("decision.{}", c.plan.decision.as_str())).or_insert(0) += 1;
            }
            let m = manifest(corpus.len(), counters, Some(sha));
            write(cfg.out.join(MANIFEST_FILE), &pretty(&m), &mut outputs)?;
        }
        Mode::Evaluate => {
            let (corpus, sha) = load()?;
            let scorer = cfg.scorer(cfg.evaluation_scorer.as_deref().expect("validated"))?;
            let results: Vec<OutputRecord> = read_jsonl(cfg.results.as_ref().expect("validated"))?;
            let evaluated = evaluate(&corpus, &results, scorer.as_ref())?;
            write(cfg.out.join(SCORES_FILE), &jsonl(&evaluated), &mut outputs)?;
            let m = manifest(evaluated.len(), BTreeMap::new(), Some(sha));
            write(cfg.out.join(MANIFEST_FILE), &pretty(&m), &mut outputs)?;
        }
        Mode::Report => {
            let scores: Vec<EvaluatedSegment> = read_jsonl(cfg.results.as_ref().expect("validated"))?;
            let report = build_report(&scores, cfg.g2e_mode).map_err(pipeline_err)?;
            write(cfg.out.join(REPORT_CSV), &report.to_csv(), &mut outputs)?;
            let table = report.to_text_table();
            write(cfg.out.join(REPORT_TXT), &table, &mut outputs)?;
            print!("{table}");
        }
        Mode::Health => {
            for b in build_backends(cfg)? {
                health.push(b.health_check());
            }
            for s in &cfg.scorers {
                let url = std::env::var(scorer_url_env_var(&s.name)).unwrap_or_else(|_| s.url.clone());
                health.push(scorer_health(&s.name, &url, Duration::from_millis(s.timeout_ms)));
            }
            for h in &health {
                println!("{}", serde_json::to_string(h).expect("status serializes"));
            }
            write(cfg.out.join(HEALTH_FILE), &pretty(&health), &mut outputs)?;
        }
    }
    Ok(RunSummary { mode, outputs, health })
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    s
}

/// `GET {url}/healthz`; any HTTP answer counts as reachable.
pub fn scorer_health(name: &str, url: &str, timeout: Duration) -> HealthStatus {
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let start = Instant::now();
    let result = agent.get(&format!("{}/healthz", url.trim_end_matches('/'))).call();
    let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
    let (reachable, detail) = match result {
        Ok(r) => (true, r.into_string().ok()),
        Err(ureq::Error::Status(code, _)) => (true, Some(format!("HTTP {code}"))),
        Err(e) => (false, Some(crate::backends::classify_ureq_error(e).to_string())),
    };
    HealthStatus {
        backend: format!("scorer:{name}"),
        reachable,
        latency_ms,
        detail,
    }
}

/// Scores original and output with the same scorer. Unchanged outputs reuse
/// the original score so zero edits always mean zero gain.
pub fn evaluate(
    corpus: &crate::corpus::Corpus,
    results: &[OutputRecord],
    scorer: &dyn QeScorer,
) -> Result<Vec<EvaluatedSegment>, CliError> {
    results
        .iter()
        .map(|r| {
            let seg = corpus
                .get(&r.segment.id)
                .ok_or_else(|| pipeline_err(format!("result {} is not in the corpus", r.segment.id)))?;
            let mut items = vec![ScoreItem::new(&seg.source, &seg.hypothesis, seg.reference.clone())];
            let changed = r.output_text != seg.hypothesis;
            if changed {
                items.push(ScoreItem::new(&seg.source, &r.output_text, seg.reference.clone()));
            }
            let scores = scorer
                .score_batch(&items)
                .map_err(|e| pipeline_err(format!("segment {}: {e}", seg.id)))?;
            Ok(EvaluatedSegment {
                id: seg.id.clone(),
                language: seg.target_lang().to_string(),
                original_text: seg.hypothesis.clone(),
                output_text: r.output_text.clone(),
                original_score: scores[0],
                new_score: if changed { scores[1] } else { scores[0] },
            })
        })
        .collect()
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main_with_args(args: Args) -> i32 {
    let result = RunConfig::from_args(&args).and_then(|cfg| run(&cfg));
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
