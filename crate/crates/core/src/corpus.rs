//! Multilingual tweet corpus: loading, mention normalization, validation.
//!
//! The corpus file is line-delimited JSON, one record per line:
//!
//! ```text
//! {"tweet_id": "t001", "text_en": "...", "text_pl": "...", "text_ru": "...", "included": true}
//! ```
//!
//! `included` defaults to `true`. Blank lines are skipped. Records are
//! reordered by `tweet_id` after loading.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Placeholder substituted for every user mention.
pub const USER_PLACEHOLDER: &str = "<user>";

/// Prompt / tweet language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "PL")]
    Pl,
    #[serde(rename = "RU")]
    Ru,
}

impl Language {
    /// Canonical order used for matrix columns.
    pub const ALL: [Language; 3] = [Language::En, Language::Pl, Language::Ru];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Pl => "PL",
            Language::Ru => "RU",
        }
    }

    /// Nationality paired with prompts in this language.
    pub fn nationality(self) -> &'static str {
        match self {
            Language::En => "American",
            Language::Pl => "Polish",
            Language::Ru => "Russian",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Language::En => 0,
            Language::Pl => 1,
            Language::Ru => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Language> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EN" => Some(Language::En),
            "PL" => Some(Language::Pl),
            "RU" => Some(Language::Ru),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record ({field}): {message}")]
    MalformedRecord {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate tweet_id {tweet_id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        tweet_id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: included tweet {tweet_id:?} has no {language} text")]
    MissingLanguageText {
        line: usize,
        tweet_id: String,
        language: Language,
    },
}

/// One tweet with its three translations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub texts: BTreeMap<Language, String>,
    pub included: bool,
}

impl TweetRecord {
    pub fn text(&self, language: Language) -> Option<&str> {
        self.texts.get(&language).map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    records: Vec<TweetRecord>,
}

impl Corpus {
    /// Builds a corpus from in-memory records, applying the same
    /// normalization and validation as [`load_corpus`]. Line numbers in
    /// errors are 1-based positions in `records`.
    pub fn from_records(records: Vec<TweetRecord>) -> Result<Corpus, CorpusError> {
        let numbered = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i + 1, r))
            .collect();
        finish(numbered)
    }

    pub fn records(&self) -> &[TweetRecord] {
        &self.records
    }

    pub fn included(&self) -> impl Iterator<Item = &TweetRecord> {
        self.records.iter().filter(|r| r.included)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn included_count(&self) -> usize {
        self.included().count()
    }

    pub fn excluded_count(&self) -> usize {
        self.len() - self.included_count()
    }

    pub fn get(&self, tweet_id: &str) -> Option<&TweetRecord> {
        self.records
            .binary_search_by(|r| r.tweet_id.as_str().cmp(tweet_id))
            .ok()
            .map(|i| &self.records[i])
    }
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // A mention starts at the beginning of the text or after a character that
    // cannot be part of a word or an e-mail local part.
    RE.get_or_init(|| Regex::new(r"(^|[^\w@.])@\w+").expect("static regex"))
}

/// Replaces every `@handle` token with `<user>`.
pub fn normalize_mentions(text: &str) -> String {
    let re = mention_regex();
    if !text.contains('@') {
        return text.to_owned();
    }
    // Adjacent mentions ("@a@b") share a boundary character, so iterate until
    // no further replacement is possible.
    let mut current = text.to_owned();
    loop {
        let next = re
            .replace_all(&current, |caps: &regex::Captures<'_>| {
                format!("{}{}", &caps[1], USER_PLACEHOLDER)
            })
            .into_owned();
        if next == current {
            return next;
        }
        current = next;
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    tweet_id: String,
    #[serde(default)]
    text_en: Option<String>,
    #[serde(default)]
    text_pl: Option<String>,
    #[serde(default)]
    text_ru: Option<String>,
    #[serde(default = "default_included")]
    included: bool,
}

fn default_included() -> bool {
    true
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&bytes)
}

/// Parses corpus bytes in the line-delimited record format.
pub fn parse_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        CorpusError::MalformedRecord {
            line,
            field: "<encoding>".into(),
            message: "invalid UTF-8".into(),
        }
    })?;

    let mut numbered = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| malformed(line_no, e))?;
        if raw.tweet_id.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                field: "tweet_id".into(),
                message: "empty identifier".into(),
            });
        }
        let mut texts = BTreeMap::new();
        for (lang, value) in [
            (Language::En, raw.text_en),
            (Language::Pl, raw.text_pl),
            (Language::Ru, raw.text_ru),
        ] {
            if let Some(v) = value {
                texts.insert(lang, v);
            }
        }
        numbered.push((
            line_no,
            TweetRecord {
                tweet_id: raw.tweet_id,
                texts,
                included: raw.included,
            },
        ));
    }
    finish(numbered)
}

fn malformed(line: usize, err: serde_json::Error) -> CorpusError {
    let message = err.to_string();
    let field = ["tweet_id", "text_en", "text_pl", "text_ru", "included"]
        .iter()
        .find(|f| message.contains(&format!("`{f}`")))
        .map(|f| (*f).to_owned())
        .unwrap_or_else(|| "<record>".to_owned());
    CorpusError::MalformedRecord {
        line,
        field,
        message,
    }
}

fn finish(numbered: Vec<(usize, TweetRecord)>) -> Result<Corpus, CorpusError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::with_capacity(numbered.len());
    for (line, mut record) in numbered {
        if let Some(&first_line) = seen.get(&record.tweet_id) {
            return Err(CorpusError::DuplicateId {
                tweet_id: record.tweet_id,
                first_line,
                second_line: line,
            });
        }
        for text in record.texts.values_mut() {
            *text = normalize_mentions(text);
        }
        if record.included {
            for lang in Language::ALL {
                if record.text(lang).is_none_or(|t| t.trim().is_empty()) {
                    return Err(CorpusError::MissingLanguageText {
                        line,
                        tweet_id: record.tweet_id,
                        language: lang,
                    });
                }
            }
        }
        seen.insert(record.tweet_id.clone(), line);
        records.push(record);
    }
    records.sort_by(|a, b| a.tweet_id.cmp(&b.tweet_id));
    Ok(Corpus { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(id: &str, en: &str, included: bool) -> String {
        serde_json::json!({
            "tweet_id": id, "text_en": en, "text_pl": format!("pl {en}"),
            "text_ru": format!("ru {en}"), "included": included
        })
        .to_string()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_mentions("<user> <user> Deez Nuts"),
            "<user> <user> Deez Nuts"
        );
        assert_eq!(normalize_mentions(""), "");
        assert_eq!(
            normalize_mentions("@bob said @carol_1 no"),
            "<user> said <user> no"
        );
        assert_eq!(normalize_mentions("@alice hello"), "<user> hello");
    }

    #[test]
    fn normalize_leaves_emails_and_bare_at() {
        assert_eq!(normalize_mentions("mail me@example.com"), "mail me@example.com");
        assert_eq!(normalize_mentions("meet @ noon"), "meet @ noon");
        assert_eq!(normalize_mentions("(@dan)"), "(<user>)");
        assert_eq!(normalize_mentions("@a @b"), "<user> <user>");
    }

    #[test]
    fn loads_and_sorts() {
        let body = [line("b", "second", true), line("a", "@x first", true)].join("\n");
        let corpus = parse_corpus(body.as_bytes()).unwrap();
        assert_eq!(corpus.records()[0].tweet_id, "a");
        assert_eq!(corpus.records()[0].text(Language::En), Some("<user> first"));
        assert_eq!(corpus.records()[0].text(Language::Pl), Some("pl <user> first"));
    }

    #[test]
    fn counts_excluded() {
        let mut lines: Vec<String> = (0..300)
            .map(|i| line(&format!("t{i:03}"), "text", i % 100 != 7))
            .collect();
        lines.push(String::new());
        let corpus = parse_corpus(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(corpus.len(), 300);
        assert_eq!(corpus.included_count(), 297);
        assert_eq!(corpus.excluded_count(), 3);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let corpus = parse_corpus(b"").unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn duplicate_id_reports_both_lines() {
        let body = [line("a", "x", true), line("b", "y", true), line("a", "z", true)].join("\n");
        match parse_corpus(body.as_bytes()) {
            Err(CorpusError::DuplicateId {
                first_line,
                second_line,
                ..
            }) => assert_eq!((first_line, second_line), (1, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_reports_line_and_field() {
        let body = format!("{}\n{{\"tweet_id\": \"b\", \"text_xx\": \"q\"}}", line("a", "x", true));
        match parse_corpus(body.as_bytes()) {
            Err(CorpusError::MalformedRecord { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("text_xx"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let body = r#"{"tweet_id": "a", "text_en": "x", "text_pl": "y", "text_ru": "z", "included": "yes"}"#;
        match parse_corpus(body.as_bytes()) {
            Err(CorpusError::MalformedRecord { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_language_only_matters_when_included() {
        let included = r#"{"tweet_id": "a", "text_en": "x", "text_pl": "y", "text_ru": ""}"#;
        assert!(matches!(
            parse_corpus(included.as_bytes()),
            Err(CorpusError::MissingLanguageText {
                language: Language::Ru,
                ..
            })
        ));
        let excluded = r#"{"tweet_id": "a", "text_en": "x", "included": false}"#;
        let corpus = parse_corpus(excluded.as_bytes()).unwrap();
        assert_eq!(corpus.included_count(), 0);
        assert_eq!(corpus.len(), 1);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_corpus("/nonexistent/corpus.jsonl"),
            Err(CorpusError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[ a-z@_.<>()0-9ąó]{0,40}") {
            let once = normalize_mentions(&s);
            prop_assert_eq!(normalize_mentions(&once), once.clone());
            prop_assert!(!mention_regex().is_match(&once));
        }

        #[test]
        fn load_is_order_independent(mut ids in proptest::collection::hash_set("[a-z]{1,6}", 0..20)) {
            let ids: Vec<String> = ids.drain().collect();
            let forward: Vec<String> = ids.iter().map(|id| line(id, "t", true)).collect();
            let mut backward = forward.clone();
            backward.reverse();
            let a = parse_corpus(forward.join("\n").as_bytes()).unwrap();
            let b = parse_corpus(backward.join("\n").as_bytes()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
