//! Review normalization: fourteen ordered cleaning passes ending in a token
//! list, with slang-lexicon substitution.
//!
//! | id | pass |
//! |----|------|
//! | 1  | Unicode NFKC |
//! | 2  | lowercase |
//! | 3  | URL removal |
//! | 4  | HTML tag / entity removal |
//! | 5  | emoji to token |
//! | 6  | price strings (`Rp75.000`, `50k`) to the price sentinel |
//! | 7  | bare numbers to the number sentinel |
//! | 8  | elongation collapse (`bagussss` to `bagus`) |
//! | 9  | punctuation stripping, word-internal apostrophes kept |
//! | 10 | whitespace tokenization |
//! | 11 | slang substitution |
//! | 12 | negation markers kept as written |
//! | 13 | single-character token removal (negation markers exempt) |
//! | 14 | empty-token pruning |

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate key '{key}' at line {line}")]
    DuplicateKey { key: String, line: usize },
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("entry '{key}' maps to '{target}', which is itself a key")]
    ChainedEntry { key: String, target: String },
    #[error("invalid cleaning config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, TextprepError>;

pub const STEP_COUNT: u8 = 14;
pub const NEGATION_MARKERS: [&str; 5] = ["tidak", "ga", "gak", "tak", "bukan"];

const SEED_LEXICON: &str = include_str!("../data/slang_seed.tsv");
const SEED_EMOJI: &str = include_str!("../data/emoji_map.tsv");

pub fn is_negation_marker(token: &str) -> bool {
    NEGATION_MARKERS.contains(&token)
}

/// Surface form to canonical form substitution table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlangLexicon {
    entries: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    sources: BTreeMap<String, String>,
}

impl SlangLexicon {
    /// The lexicon shipped with the crate.
    pub fn seed() -> Self {
        Self::parse(SEED_LEXICON).expect("shipped lexicon is valid")
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let text: String = pairs
            .into_iter()
            .map(|(k, v)| format!("{}\t{}\n", k.into(), v.into()))
            .collect();
        Self::parse(&text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TextprepError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = SlangLexicon::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = raw.split('\t');
            let (Some(key), Some(target)) = (fields.next(), fields.next()) else {
                return Err(malformed(line, "expected surface<TAB>canonical"));
            };
            let source = fields.next().map(str::trim).filter(|s| !s.is_empty());
            if fields.next().is_some() {
                return Err(malformed(line, "too many fields"));
            }
            let key = key.trim();
            let target = target.split_whitespace().collect::<Vec<_>>().join(" ");
            if key.is_empty() || target.is_empty() {
                return Err(malformed(line, "empty surface or canonical form"));
            }
            if key.chars().any(char::is_whitespace) {
                return Err(malformed(line, "surface form contains whitespace"));
            }
            if key != key.to_lowercase() || target != target.to_lowercase() {
                return Err(malformed(line, "entries must be lowercase"));
            }
            if key == target {
                return Err(malformed(line, "entry maps to itself"));
            }
            for word in target.split(' ') {
                if word.chars().count() < 2 && !is_negation_marker(word) {
                    return Err(malformed(line, "canonical word shorter than two characters"));
                }
                if !word.chars().all(char::is_alphabetic) {
                    return Err(malformed(line, "canonical words must be alphabetic"));
                }
                if normalize_elongation(word, 3) != word {
                    return Err(malformed(line, "canonical word contains an elongated run"));
                }
            }
            if lex.entries.contains_key(key) {
                return Err(TextprepError::DuplicateKey {
                    key: key.to_string(),
                    line,
                });
            }
            if let Some(src) = source {
                lex.sources.insert(key.to_string(), src.to_string());
            }
            lex.entries.insert(key.to_string(), target);
        }
        for (key, target) in &lex.entries {
            if let Some(word) = target.split(' ').find(|w| lex.entries.contains_key(*w)) {
                return Err(TextprepError::ChainedEntry {
                    key: key.clone(),
                    target: word.to_string(),
                });
            }
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<&str> {
        self.entries.get(surface).map(String::as_str)
    }

    pub fn contains_key(&self, surface: &str) -> bool {
        self.entries.contains_key(surface)
    }

    pub fn source(&self, surface: &str) -> Option<&str> {
        self.sources.get(surface).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn malformed(line: usize, reason: &str) -> TextprepError {
    TextprepError::MalformedLine {
        line,
        reason: reason.to_string(),
    }
}

/// Parses an emoji map file (`emoji<TAB>token` per line).
pub fn parse_emoji_map(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let Some((emoji, token)) = raw.split_once('\t') else {
            return Err(malformed(line, "expected emoji<TAB>token"));
        };
        let emoji: String = emoji.trim().chars().filter(|c| !is_emoji_joiner(*c)).collect();
        let token = token.trim();
        if emoji.is_empty()
            || token.chars().count() < 2
            || !token.chars().all(|c| c.is_ascii_lowercase())
        {
            return Err(malformed(line, "emoji tokens must be lowercase ascii words"));
        }
        if !seen.insert(emoji.clone()) {
            return Err(TextprepError::DuplicateKey { key: emoji, line });
        }
        out.push((emoji, token.to_string()));
    }
    Ok(out)
}

fn is_emoji_joiner(c: char) -> bool {
    matches!(c, '\u{fe0e}' | '\u{fe0f}' | '\u{200d}')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningConfig {
    /// Enabled pass ids (1..=14). Execution order is always ascending.
    pub steps: Vec<u8>,
    pub elongation_threshold: usize,
    pub price_token: String,
    pub number_token: String,
    pub emoji_map: Vec<(String, String)>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            steps: (1..=STEP_COUNT).collect(),
            elongation_threshold: 3,
            price_token: "hargatok".into(),
            number_token: "numtok".into(),
            emoji_map: parse_emoji_map(SEED_EMOJI).expect("shipped emoji map is valid"),
        }
    }
}

impl CleaningConfig {
    pub fn without_step(mut self, step: u8) -> Self {
        self.steps.retain(|&s| s != step);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.steps.iter().find(|s| !(1..=STEP_COUNT).contains(*s)) {
            return Err(TextprepError::InvalidConfig(format!("unknown step id {bad}")));
        }
        if self.elongation_threshold < 2 {
            return Err(TextprepError::InvalidConfig(
                "elongation threshold must be at least 2".into(),
            ));
        }
        for sentinel in [&self.price_token, &self.number_token] {
            if sentinel.chars().count() < 2 || !sentinel.chars().all(|c| c.is_ascii_lowercase()) {
                return Err(TextprepError::InvalidConfig(format!(
                    "sentinel '{sentinel}' must be a lowercase ascii word"
                )));
            }
        }
        Ok(())
    }

    fn enabled(&self, step: u8) -> bool {
        self.steps.contains(&step)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedDoc {
    pub tokens: Vec<String>,
    pub original: String,
}

impl CleanedDoc {
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let original = tokens.join(" ");
        Self { tokens, original }
    }

    pub fn detokenize(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Collapses every maximal run of at least `threshold` identical letters to
/// a single letter.
pub fn normalize_elongation(token: &str, threshold: usize) -> String {
    let mut out = String::with_capacity(token.len());
    let chars: Vec<char> = token.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut j = i + 1;
        while j < chars.len() && chars[j] == c {
            j += 1;
        }
        let run = j - i;
        if c.is_alphabetic() && run >= threshold {
            out.push(c);
        } else {
            out.extend(std::iter::repeat(c).take(run));
        }
        i = j;
    }
    out
}

struct Patterns {
    url: Regex,
    html_tag: Regex,
    html_entity: Regex,
    price_prefixed: Regex,
    price_suffixed: Regex,
    number: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        url: Regex::new(r"(?:https?://|www\.)\S+").unwrap(),
        html_tag: Regex::new(r"<[^<>]*>").unwrap(),
        html_entity: Regex::new(r"&(?:[a-z]+|#[0-9]+|#x[0-9a-f]+);").unwrap(),
        price_prefixed: Regex::new(r"rp\.?\s?[0-9][0-9.,]*(?:k|rb|ribu|jt|juta)?").unwrap(),
        price_suffixed: Regex::new(r"[0-9]+(?:[.,][0-9]+)*\s?(?:k|rb|ribu|jt|juta)").unwrap(),
        number: Regex::new(r"[0-9]+(?:[.,][0-9]+)*").unwrap(),
    })
}

/// Replaces matches of `re` that are not glued to a letter or digit on
/// either side.
fn replace_standalone(text: &str, re: &Regex, replacement: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in re.find_iter(text) {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let glued = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
        if glued(before) || glued(after) {
            continue;
        }
        out.push_str(&text[last..m.start()]);
        out.push(' ');
        out.push_str(replacement);
        out.push(' ');
        last = m.end();
    }
    out.push_str(&text[last..]);
    out
}

fn strip_punctuation(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else if c == '\''
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
            {
                c
            } else {
                ' '
            }
        })
        .collect()
}

fn map_emoji(text: &str, map: &[(String, String)]) -> String {
    let mut text: String = text.chars().filter(|c| !is_emoji_joiner(*c)).collect();
    let mut ordered: Vec<&(String, String)> = map.iter().collect();
    ordered.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    for (emoji, token) in ordered {
        if text.contains(emoji.as_str()) {
            text = text.replace(emoji.as_str(), &format!(" {token} "));
        }
    }
    text
}

/// Runs the enabled passes over `text`.
pub fn clean(text: &str, config: &CleaningConfig, lexicon: &SlangLexicon) -> Result<CleanedDoc> {
    config.validate()?;
    let p = patterns();
    let mut s = text.to_string();
    if config.enabled(1) {
        s = s.nfkc().collect();
    }
    if config.enabled(2) {
        s = s.to_lowercase();
    }
    if config.enabled(3) {
        s = p.url.replace_all(&s, " ").into_owned();
    }
    if config.enabled(4) {
        s = p.html_tag.replace_all(&s, " ").into_owned();
        s = p.html_entity.replace_all(&s, " ").into_owned();
    }
    if config.enabled(5) {
        s = map_emoji(&s, &config.emoji_map);
    }
    if config.enabled(6) {
        s = replace_standalone(&s, &p.price_prefixed, &config.price_token);
        s = replace_standalone(&s, &p.price_suffixed, &config.price_token);
    }
    if config.enabled(7) {
        s = replace_standalone(&s, &p.number, &config.number_token);
    }
    if config.enabled(8) {
        s = normalize_elongation(&s, config.elongation_threshold);
    }
    if config.enabled(9) {
        s = strip_punctuation(&s);
    }
    // Pass 10 is the only way to get from a string to tokens; when disabled
    // the whole text stays one token.
    let mut tokens: Vec<(String, bool)> = if config.enabled(10) {
        s.split_whitespace().map(|t| (t.to_string(), false)).collect()
    } else {
        vec![(s.trim().to_string(), false)]
    };
    if config.enabled(11) {
        let keep_markers = config.enabled(12);
        tokens = tokens
            .into_iter()
            .flat_map(|(tok, _)| {
                if keep_markers && is_negation_marker(&tok) {
                    return vec![(tok, true)];
                }
                match lexicon.get(&tok) {
                    Some(target) => target.split(' ').map(|w| (w.to_string(), false)).collect(),
                    None => vec![(tok, false)],
                }
            })
            .collect();
    }
    if config.enabled(12) {
        for (tok, protected) in tokens.iter_mut() {
            *protected |= is_negation_marker(tok);
        }
    }
    if config.enabled(13) {
        tokens.retain(|(t, protected)| *protected || t.chars().count() != 1);
    }
    if config.enabled(14) {
        tokens.retain(|(t, _)| !t.trim().is_empty());
    }
    Ok(CleanedDoc {
        tokens: tokens.into_iter().map(|(t, _)| t).collect(),
        original: text.to_string(),
    })
}

/// Cleaning config and lexicon bundled together, stored inside model
/// containers so prediction repeats the training-time normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub config: CleaningConfig,
    pub lexicon: SlangLexicon,
}

impl Preprocessor {
    pub fn new(config: CleaningConfig, lexicon: SlangLexicon) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, lexicon })
    }

    pub fn standard() -> Self {
        Self {
            config: CleaningConfig::default(),
            lexicon: SlangLexicon::seed(),
        }
    }

    pub fn clean(&self, text: &str) -> CleanedDoc {
        clean(text, &self.config, &self.lexicon).expect("config validated at construction")
    }

    pub fn clean_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<CleanedDoc> {
        use rayon::prelude::*;
        texts.par_iter().map(|t| self.clean(t.as_ref())).collect()
    }
}
