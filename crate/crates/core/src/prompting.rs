//! Prompt templates for retranslation and blank filling.
//!
//! Templates are plain text with `{name}` placeholders (`{{` and `}}` for
//! literal braces). The built-in set is compiled in from `templates/` and any
//! file `<template_id>.txt` in an override directory replaces its built-in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::MaskedHypothesis;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("profile {profile} does not support language {lang}")]
    UnsupportedLanguage { profile: String, lang: String },
    #[error("no template with id {0}")]
    MissingTemplate(String),
    #[error("template {template} needs a value for {{{name}}}")]
    MissingBinding { template: String, name: String },
    #[error("exemplar is for {got}, prompt is for {expected}")]
    ExemplarMismatch { expected: String, got: String },
    #[error("no exemplar for language {0}")]
    NoExemplar(String),
    #[error("masked hypothesis has no blanks")]
    NoBlanks,
    #[error("no display name for language code {0}")]
    UnknownLanguage(String),
    #[error("invalid exemplar: {0}")]
    InvalidExemplar(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("cs", "Czech"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("et", "Estonian"),
    ("fr", "French"),
    ("hi", "Hindi"),
    ("is", "Icelandic"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("pl", "Polish"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("ta", "Tamil"),
    ("uk", "Ukrainian"),
    ("zh", "Chinese"),
];

pub fn language_name(code: &str) -> Result<&'static str, PromptError> {
    LANGUAGE_NAMES
        .binary_search_by_key(&code, |(c, _)| c)
        .map(|i| LANGUAGE_NAMES[i].1)
        .map_err(|_| PromptError::UnknownLanguage(code.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    SimpleTranslate,
    VerboseSystem,
    Sw3Dialogue,
    GlmStrict,
}

impl PromptStyle {
    pub fn template_id(self) -> &'static str {
        match self {
            PromptStyle::SimpleTranslate => "simple_translate",
            PromptStyle::VerboseSystem => "verbose_system",
            PromptStyle::Sw3Dialogue => "sw3_dialogue",
            PromptStyle::GlmStrict => "glm_strict",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub prompt_style: PromptStyle,
    pub supported_langs: BTreeSet<String>,
    /// Name of the backend serving this profile.
    pub endpoint: String,
}

impl ModelProfile {
    pub fn supports(&self, lang: &str) -> bool {
        self.supported_langs.contains(lang)
    }
}

/// A prompt ready to send: either a system/user pair or one raw text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RenderedPrompt {
    Chat { system: String, user: String },
    Raw(String),
}

impl RenderedPrompt {
    /// The whole prompt as one string, system before user.
    pub fn full_text(&self) -> String {
        match self {
            RenderedPrompt::Chat { system, user } => format!("{system}\n\n{user}"),
            RenderedPrompt::Raw(text) => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Part {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
    parts: Vec<Part>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PromptTemplate {
    pub fn parse(template_id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let mut parts = Vec::new();
        let mut text = String::new();
        let mut rest = body.as_str();
        while let Some(pos) = rest.find(['{', '}']) {
            text.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                text.push_str(&tail[..1]);
                rest = &tail[2..];
                continue;
            }
            if tail.starts_with('{') {
                if let Some(close) = tail.find('}') {
                    let name = &tail[1..close];
                    if is_ident(name) {
                        if !text.is_empty() {
                            parts.push(Part::Text(std::mem::take(&mut text)));
                        }
                        parts.push(Part::Slot(name.to_string()));
                        rest = &tail[close + 1..];
                        continue;
                    }
                }
            }
            text.push_str(&tail[..1]);
            rest = &tail[1..];
        }
        text.push_str(rest);
        if !text.is_empty() {
            parts.push(Part::Text(text));
        }
        let required_placeholders = parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(n) => Some(n.clone()),
                Part::Text(_) => None,
            })
            .collect();
        Self {
            template_id: template_id.into(),
            body,
            required_placeholders,
            parts,
        }
    }

    /// Substitutes every placeholder in a single pass; bound values are never
    /// rescanned for placeholders.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len());
        for part in &self.parts {
            match part {
                Part::Text(t) => out.push_str(t),
                Part::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::MissingBinding {
                            template: self.template_id.clone(),
                            name: name.clone(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

pub const FILL_SYSTEM: &str = "fill_system";
pub const FILL_EXEMPLAR: &str = "fill_exemplar";
pub const FILL_USER: &str = "fill_user";

const BUILTIN_TEMPLATES: &[(&str, &str)] = &[
    ("simple_translate", include_str!("../templates/simple_translate.txt")),
    ("verbose_system", include_str!("../templates/verbose_system.txt")),
    ("sw3_dialogue", include_str!("../templates/sw3_dialogue.txt")),
    ("glm_strict", include_str!("../templates/glm_strict.txt")),
    (FILL_SYSTEM, include_str!("../templates/fill_system.txt")),
    (FILL_EXEMPLAR, include_str!("../templates/fill_exemplar.txt")),
    (FILL_USER, include_str!("../templates/fill_user.txt")),
];

const BUILTIN_EXEMPLARS: &str = include_str!("../templates/exemplars.jsonl");

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub language: String,
    pub domain: String,
    pub masked_example: String,
    pub english: String,
    pub wrong_translation: String,
    pub wrong_words: Vec<String>,
    pub corrected: String,
    /// "published" for the one exemplar taken from the literature,
    /// "repo-authored" for the rest.
    #[serde(default)]
    pub origin: String,
}

impl Exemplar {
    pub fn validate(&self, blank_token: &str) -> Result<(), PromptError> {
        if !self.masked_example.contains(blank_token) {
            return Err(PromptError::InvalidExemplar(format!(
                "{} exemplar has no {blank_token}",
                self.language
            )));
        }
        if self.corrected.contains(blank_token) {
            return Err(PromptError::InvalidExemplar(format!(
                "{} exemplar correction still contains {blank_token}",
                self.language
            )));
        }
        Ok(())
    }
}

/// Python `repr` of a list of strings, the format the fill prompt shows.
pub fn format_word_list<S: AsRef<str>>(words: &[S]) -> String {
    let items: Vec<String> = words
        .iter()
        .map(|w| {
            let w = w.as_ref();
            let quote = if w.contains('\'') && !w.contains('"') { '"' } else { '\'' };
            let mut s = String::with_capacity(w.len() + 2);
            s.push(quote);
            for c in w.chars() {
                match c {
                    '\\' => s.push_str("\\\\"),
                    '\n' => s.push_str("\\n"),
                    '\t' => s.push_str("\\t"),
                    c if c == quote => {
                        s.push('\\');
                        s.push(c);
                    }
                    c => s.push(c),
                }
            }
            s.push(quote);
            s
        })
        .collect();
    format!("[{}]", items.join(", "))
}

/// Templates plus per-language exemplars.
#[derive(Debug, Clone)]
pub struct PromptBook {
    templates: BTreeMap<String, PromptTemplate>,
    exemplars: BTreeMap<String, Exemplar>,
}

impl Default for PromptBook {
    fn default() -> Self {
        Self::builtin()
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.body)
    }
}

impl PromptBook {
    pub fn builtin() -> Self {
        let templates = BUILTIN_TEMPLATES
            .iter()
            .map(|(id, body)| (id.to_string(), PromptTemplate::parse(*id, strip_final_newline(body))))
            .collect();
        let exemplars = parse_exemplars(BUILTIN_EXEMPLARS).expect("built-in exemplars parse");
        Self {
            templates,
            exemplars,
        }
    }

    /// Replaces built-ins with every `<id>.txt` found in `dir`.
    pub fn with_template_dir(mut self, dir: &Path) -> Result<Self, PromptError> {
        let io_err = |source| PromptError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .collect::<Result<_, _>>()
            .map_err(io_err)?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            self.insert_template(PromptTemplate::parse(id, strip_final_newline(&body)));
        }
        Ok(self)
    }

    /// Replaces exemplars with those in a JSONL file (one object per language).
    pub fn with_exemplar_file(mut self, path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.exemplars.extend(parse_exemplars(&text)?);
        Ok(self)
    }

    pub fn insert_template(&mut self, template: PromptTemplate) {
        self.templates.insert(template.template_id.clone(), template);
    }

    pub fn insert_exemplar(&mut self, exemplar: Exemplar) {
        self.exemplars.insert(exemplar.language.clone(), exemplar);
    }

    pub fn template(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::MissingTemplate(id.to_string()))
    }

    pub fn exemplar(&self, lang: &str) -> Result<&Exemplar, PromptError> {
        self.exemplars
            .get(lang)
            .ok_or_else(|| PromptError::NoExemplar(lang.to_string()))
    }

    pub fn render_translation_prompt(
        &self,
        profile: &ModelProfile,
        target_lang: &str,
        source: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        if !profile.supports(target_lang) {
            return Err(PromptError::UnsupportedLanguage {
                profile: profile.name.clone(),
                lang: target_lang.to_string(),
            });
        }
        let template = self.template(profile.prompt_style.template_id())?;
        let language = language_name(target_lang)?;
        let text = template.render(&[("Language", language), ("source", source)])?;
        Ok(match profile.prompt_style {
            PromptStyle::Sw3Dialogue => RenderedPrompt::Raw(text),
            _ => RenderedPrompt::Chat {
                system: text,
                user: source.to_string(),
            },
        })
    }

    /// System text carries the instruction and the one-shot example; user text
    /// carries the query.
    pub fn render_fill_prompt(
        &self,
        lang: &str,
        domain: &str,
        masked: &MaskedHypothesis,
        source: &str,
        exemplar: &Exemplar,
    ) -> Result<RenderedPrompt, PromptError> {
        if exemplar.language != lang {
            return Err(PromptError::ExemplarMismatch {
                expected: lang.to_string(),
                got: exemplar.language.clone(),
            });
        }
        if !masked.has_blanks() {
            return Err(PromptError::NoBlanks);
        }
        let language = language_name(lang)?;
        let blank = masked.blank_token.as_str();

        let exemplar_words = format_word_list(&exemplar.wrong_words);
        let example = self.template(FILL_EXEMPLAR)?.render(&[
            ("Language", language),
            ("blank", blank),
            ("domain", &exemplar.domain),
            ("masked", &exemplar.masked_example),
            ("source", &exemplar.english),
            ("mt", &exemplar.wrong_translation),
            ("wrong_words", &exemplar_words),
            ("corrected", &exemplar.corrected),
        ])?;
        let system = self.template(FILL_SYSTEM)?.render(&[
            ("Language", language),
            ("blank", blank),
            ("domain", domain),
            ("exemplar", &example),
        ])?;
        let wrong_words = format_word_list(&masked.removed_texts());
        let user = self.template(FILL_USER)?.render(&[
            ("Language", language),
            ("blank", blank),
            ("masked", &masked.masked_text),
            ("source", source),
            ("mt", &masked.original),
            ("wrong_words", &wrong_words),
        ])?;
        Ok(RenderedPrompt::Chat { system, user })
    }
}

pub fn parse_exemplars(text: &str) -> Result<BTreeMap<String, Exemplar>, PromptError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: Exemplar = serde_json::from_str(line)
            .map_err(|e| PromptError::InvalidExemplar(format!("line {}: {e}", i + 1)))?;
        out.insert(ex.language.clone(), ex);
    }
    Ok(out)
}
