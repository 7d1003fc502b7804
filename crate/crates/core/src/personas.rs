//! Persona profiles, the 12 evaluation conditions, and prompt rendering.
//!
//! Persona configuration is TOML. Templates are declared per language and
//! may be overridden per persona:
//!
//! ```toml
//! [templates.EN]
//! system = "You are {name}, a {age}-year-old {sex} {nationality} ({group}). {outlook}"
//! user = "Tweet: {tweet}\nAnswer with exactly 1 (offensive) or 0 (not offensive)."
//!
//! [[persona]]
//! group = "moderate_conservative"
//! language = "EN"
//! name = "Linda Carter"
//! age = 38
//! sex = "Female"
//! nationality = "American"
//! group_label = "Moderate conservative"   # optional, defaults to the English name
//! outlook = "Values civility and tradition."
//! ```
//!
//! Recognised placeholders: `{name}`, `{age}`, `{sex}`, `{nationality}`,
//! `{group}`, `{outlook}`, `{tweet}`. `{{` and `}}` produce literal braces.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Language, TweetRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoliticalGroup {
    FarRight,
    ModerateConservative,
    ProgressiveLeft,
    Centrist,
}

impl PoliticalGroup {
    pub const ALL: [PoliticalGroup; 4] = [
        PoliticalGroup::FarRight,
        PoliticalGroup::ModerateConservative,
        PoliticalGroup::ProgressiveLeft,
        PoliticalGroup::Centrist,
    ];

    pub fn index(self) -> usize {
        match self {
            PoliticalGroup::FarRight => 0,
            PoliticalGroup::ModerateConservative => 1,
            PoliticalGroup::ProgressiveLeft => 2,
            PoliticalGroup::Centrist => 3,
        }
    }

    /// Identifier used in files (`far_right`, ...).
    pub fn key(self) -> &'static str {
        match self {
            PoliticalGroup::FarRight => "far_right",
            PoliticalGroup::ModerateConservative => "moderate_conservative",
            PoliticalGroup::ProgressiveLeft => "progressive_left",
            PoliticalGroup::Centrist => "centrist",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PoliticalGroup::FarRight => "Far-right",
            PoliticalGroup::ModerateConservative => "Moderate conservative",
            PoliticalGroup::ProgressiveLeft => "Progressive left",
            PoliticalGroup::Centrist => "Centrist",
        }
    }

    pub fn parse(s: &str) -> Option<PoliticalGroup> {
        PoliticalGroup::ALL.into_iter().find(|g| g.key() == s.trim())
    }
}

impl fmt::Display for PoliticalGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// One (political group, language) cell.
///
/// Ordering is the canonical column order: groups outer, languages inner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub group: PoliticalGroup,
    pub language: Language,
}

impl Condition {
    pub const COUNT: usize = 12;

    pub fn new(group: PoliticalGroup, language: Language) -> Self {
        Condition { group, language }
    }

    pub fn all() -> [Condition; Condition::COUNT] {
        std::array::from_fn(Condition::from_index)
    }

    pub fn index(self) -> usize {
        self.group.index() * 3 + self.language.index()
    }

    pub fn from_index(i: usize) -> Condition {
        Condition {
            group: PoliticalGroup::ALL[i / 3],
            language: Language::ALL[i % 3],
        }
    }

    pub fn nationality(self) -> &'static str {
        self.language.nationality()
    }

    /// Short label such as `far_right/EN`.
    pub fn label(self) -> String {
        format!("{}/{}", self.group.key(), self.language.code())
    }

    /// Human readable label such as `Far-right EN`.
    pub fn display_label(self) -> String {
        format!("{} {}", self.group.display_name(), self.language.code())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.group.key(), self.language.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub name: String,
    pub age: u32,
    pub sex: String,
    pub nationality: String,
    pub political_group: PoliticalGroup,
    /// How the group is named inside the prompt, in the prompt's language.
    pub group_label: String,
    pub outlook: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: Template,
    pub user: Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Placeholder {
    Name,
    Age,
    Sex,
    Nationality,
    Group,
    Outlook,
    Tweet,
}

impl Placeholder {
    fn parse(s: &str) -> Option<Placeholder> {
        Some(match s {
            "name" => Placeholder::Name,
            "age" => Placeholder::Age,
            "sex" => Placeholder::Sex,
            "nationality" => Placeholder::Nationality,
            "group" => Placeholder::Group,
            "outlook" => Placeholder::Outlook,
            "tweet" => Placeholder::Tweet,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(Placeholder),
}

/// A parsed prompt skeleton. Substitution is single-pass, so text inserted
/// for `{tweet}` is never re-expanded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Template, String> {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut chars = source.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let rest = &source[pos + 1..];
                    let end = rest
                        .find('}')
                        .ok_or_else(|| format!("unclosed '{{' at byte {pos}"))?;
                    let name = &rest[..end];
                    let slot = Placeholder::parse(name)
                        .ok_or_else(|| format!("unknown placeholder {{{name}}}"))?;
                    if !literal.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Slot(slot));
                    for _ in 0..=end {
                        chars.next();
                    }
                }
                '}' => return Err(format!("unmatched '}}' at byte {pos}")),
                other => literal.push(other),
            }
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }
        Ok(Template { pieces })
    }

    fn uses(&self, slot: Placeholder) -> bool {
        self.pieces.contains(&Piece::Slot(slot))
    }

    fn render(&self, persona: &PersonaProfile, tweet: &str) -> String {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(Placeholder::Name) => out.push_str(&persona.name),
                Piece::Slot(Placeholder::Age) => out.push_str(&persona.age.to_string()),
                Piece::Slot(Placeholder::Sex) => out.push_str(&persona.sex),
                Piece::Slot(Placeholder::Nationality) => out.push_str(&persona.nationality),
                Piece::Slot(Placeholder::Group) => out.push_str(&persona.group_label),
                Piece::Slot(Placeholder::Outlook) => out.push_str(&persona.outlook),
                Piece::Slot(Placeholder::Tweet) => out.push_str(tweet),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PersonaIssue {
    MissingCondition(Condition),
    DuplicateCondition(Condition),
    Malformed { location: String, message: String },
}

impl fmt::Display for PersonaIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PersonaIssue::MissingCondition(c) => write!(f, "missing persona for condition {c}"),
            PersonaIssue::DuplicateCondition(c) => {
                write!(f, "duplicate persona for condition {c}")
            }
            PersonaIssue::Malformed { location, message } => write!(f, "{location}: {message}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PersonaError {
    #[error("persona file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("persona file is not valid TOML: {0}")]
    Parse(String),
    #[error("invalid persona configuration: {}", join_issues(.0))]
    Invalid(Vec<PersonaIssue>),
    #[error("tweet {0:?} is excluded from evaluation")]
    TweetNotIncluded(String),
    #[error("tweet {tweet_id:?} has no {language} text")]
    MissingText { tweet_id: String, language: Language },
    #[error("no persona registered for condition {0}")]
    UnknownCondition(Condition),
}

fn join_issues(issues: &[PersonaIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl PersonaError {
    pub fn issues(&self) -> &[PersonaIssue] {
        match self {
            PersonaError::Invalid(issues) => issues,
            _ => &[],
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    templates: BTreeMap<String, RawTemplates>,
    #[serde(default)]
    persona: Vec<RawPersona>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplates {
    system: String,
    user: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPersona {
    group: String,
    language: String,
    name: String,
    age: i64,
    sex: String,
    nationality: String,
    #[serde(default)]
    group_label: Option<String>,
    outlook: String,
    #[serde(default)]
    system_template: Option<String>,
    #[serde(default)]
    user_template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    profile: PersonaProfile,
    templates: PromptTemplates,
}

/// All 12 persona variants, keyed by condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonaRegistry {
    entries: BTreeMap<Condition, Entry>,
}

impl PersonaRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn profile(&self, condition: Condition) -> Option<&PersonaProfile> {
        self.entries.get(&condition).map(|e| &e.profile)
    }

    pub fn conditions(&self) -> impl Iterator<Item = Condition> + '_ {
        self.entries.keys().copied()
    }
}

pub fn load_personas(path: impl AsRef<Path>) -> Result<PersonaRegistry, PersonaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PersonaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_personas(&text)
}

pub fn parse_personas(text: &str) -> Result<PersonaRegistry, PersonaError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| PersonaError::Parse(e.to_string()))?;
    let mut issues = Vec::new();

    let mut language_templates: HashMap<Language, PromptTemplates> = HashMap::new();
    for (code, t) in &raw.templates {
        let location = format!("templates.{code}");
        let Some(lang) = Language::parse(code) else {
            issues.push(PersonaIssue::Malformed {
                location,
                message: format!("unknown language {code:?}"),
            });
            continue;
        };
        match parse_templates(&t.system, &t.user) {
            Ok(pt) => {
                language_templates.insert(lang, pt);
            }
            Err(message) => issues.push(PersonaIssue::Malformed { location, message }),
        }
    }

    let mut entries: BTreeMap<Condition, Entry> = BTreeMap::new();
    let mut nationalities: HashMap<Language, (String, usize)> = HashMap::new();
    for (i, p) in raw.persona.into_iter().enumerate() {
        let location = format!("persona[{i}]");
        let group = PoliticalGroup::parse(&p.group);
        let language = Language::parse(&p.language);
        let (Some(group), Some(language)) = (group, language) else {
            issues.push(PersonaIssue::Malformed {
                location,
                message: format!("unknown condition ({}, {})", p.group, p.language),
            });
            continue;
        };
        let condition = Condition::new(group, language);
        let mut bad = |message: String| {
            issues.push(PersonaIssue::Malformed {
                location: format!("{location} {condition}"),
                message,
            })
        };
        if p.age <= 0 || p.age > u32::MAX as i64 {
            bad(format!("age must be a positive integer, got {}", p.age));
            continue;
        }
        if p.outlook.trim().is_empty() {
            bad("outlook is empty".into());
            continue;
        }
        if p.name.trim().is_empty() || p.nationality.trim().is_empty() {
            bad("name and nationality must be non-empty".into());
            continue;
        }
        match nationalities.get(&language) {
            Some((n, first)) if *n != p.nationality => {
                bad(format!(
                    "nationality {:?} differs from {:?} used by persona[{first}] for {language}",
                    p.nationality, n
                ));
                continue;
            }
            Some(_) => {}
            None => {
                nationalities.insert(language, (p.nationality.clone(), i));
            }
        }

        let base = language_templates.get(&language);
        let system = match (&p.system_template, base) {
            (Some(src), _) => Template::parse(src).map_err(|e| format!("system_template: {e}")),
            (None, Some(b)) => Ok(b.system.clone()),
            (None, None) => Err(format!("no system template for language {language}")),
        };
        let user = match (&p.user_template, base) {
            (Some(src), _) => Template::parse(src)
                .map_err(|e| format!("user_template: {e}"))
                .and_then(require_tweet_slot),
            (None, Some(b)) => Ok(b.user.clone()),
            (None, None) => Err(format!("no user template for language {language}")),
        };
        let templates = match (system, user) {
            (Ok(system), Ok(user)) => PromptTemplates { system, user },
            (Err(m), _) | (_, Err(m)) => {
                bad(m);
                continue;
            }
        };

        let entry = Entry {
            profile: PersonaProfile {
                name: p.name,
                age: p.age as u32,
                sex: p.sex,
                nationality: p.nationality,
                political_group: group,
                group_label: p
                    .group_label
                    .unwrap_or_else(|| group.display_name().to_owned()),
                outlook: p.outlook,
            },
            templates,
        };
        if entries.insert(condition, entry).is_some() {
            issues.push(PersonaIssue::DuplicateCondition(condition));
        }
    }

    for condition in Condition::all() {
        if !entries.contains_key(&condition) {
            issues.push(PersonaIssue::MissingCondition(condition));
        }
    }

    if issues.is_empty() {
        Ok(PersonaRegistry { entries })
    } else {
        Err(PersonaError::Invalid(issues))
    }
}

fn parse_templates(system: &str, user: &str) -> Result<PromptTemplates, String> {
    let system = Template::parse(system).map_err(|e| format!("system template: {e}"))?;
    let user = Template::parse(user).map_err(|e| format!("user template: {e}"))?;
    Ok(PromptTemplates {
        system,
        user: require_tweet_slot(user)?,
    })
}

fn require_tweet_slot(t: Template) -> Result<Template, String> {
    if t.uses(Placeholder::Tweet) {
        Ok(t)
    } else {
        Err("user template lacks {tweet}".into())
    }
}

/// Stable identifier of a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptKey(String);

impl PromptKey {
    /// SHA-256 over `system || 0x00 || user`, hex encoded.
    pub fn of(system_text: &str, user_text: &str) -> PromptKey {
        let mut h = Sha256::new();
        h.update(system_text.as_bytes());
        h.update([0u8]);
        h.update(user_text.as_bytes());
        PromptKey(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Accepts only 64 lowercase hex digits.
    pub fn parse(s: &str) -> Option<PromptKey> {
        let ok = s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        ok.then(|| PromptKey(s.to_owned()))
    }
}

impl fmt::Display for PromptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub tweet_id: String,
    pub condition: Condition,
    pub system_text: String,
    pub user_text: String,
    pub prompt_key: PromptKey,
}

pub fn render_prompt(
    tweet: &TweetRecord,
    condition: Condition,
    registry: &PersonaRegistry,
) -> Result<PromptInstance, PersonaError> {
    if !tweet.included {
        return Err(PersonaError::TweetNotIncluded(tweet.tweet_id.clone()));
    }
    let entry = registry
        .entries
        .get(&condition)
        .ok_or(PersonaError::UnknownCondition(condition))?;
    let text = tweet
        .text(condition.language)
        .ok_or_else(|| PersonaError::MissingText {
            tweet_id: tweet.tweet_id.clone(),
            language: condition.language,
        })?;
    let system_text = entry.templates.system.render(&entry.profile, text);
    let user_text = entry.templates.user.render(&entry.profile, text);
    let prompt_key = PromptKey::of(&system_text, &user_text);
    Ok(PromptInstance {
        tweet_id: tweet.tweet_id.clone(),
        condition,
        system_text,
        user_text,
        prompt_key,
    })
}

/// Every (included tweet, condition) prompt, ordered by tweet then condition.
pub fn enumerate_instances(
    corpus: &Corpus,
    registry: &PersonaRegistry,
) -> Result<Vec<PromptInstance>, PersonaError> {
    let mut out = Vec::with_capacity(corpus.included_count() * Condition::COUNT);
    for tweet in corpus.included() {
        for condition in Condition::all() {
            out.push(render_prompt(tweet, condition, registry)?);
        }
    }
    Ok(out)
}
