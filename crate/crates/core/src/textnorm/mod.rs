//! Tweet normalization: an ordered, configurable sequence of deterministic
//! rewrite rules.
//!
//! Steps always run in this order, whichever subset is enabled:
//! lowercase, url, mention, hashtag, email, phone, emoticon, strip special
//! symbols, squash letter repeats, lemmatize + drop stop words.

mod emoticon;
mod patterns;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use emoticon::{EmoticonMap, Mood};
pub use patterns::{EMAIL, HASHTAG, MENTION, PHONE, URL};

use crate::error::{read_to_string, Error, Result};
use crate::text::tidy_whitespace;

/// Marker tokens inserted by the pipeline. They survive lemmatization and
/// stop-word removal untouched.
pub const REPLACEMENT_TOKENS: [&str; 8] =
    ["url", "user", "hashtag", "email", "phone", "sad", "happy", "neutral"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStep {
    Lowercase,
    Url,
    Mention,
    Hashtag,
    Email,
    Phone,
    Emoticon,
    StripSpecial,
    SquashRepeats,
    LemmaStop,
}

impl NormStep {
    pub const ALL: [NormStep; 10] = [
        NormStep::Lowercase,
        NormStep::Url,
        NormStep::Mention,
        NormStep::Hashtag,
        NormStep::Email,
        NormStep::Phone,
        NormStep::Emoticon,
        NormStep::StripSpecial,
        NormStep::SquashRepeats,
        NormStep::LemmaStop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormStep::Lowercase => "lowercase",
            NormStep::Url => "url",
            NormStep::Mention => "mention",
            NormStep::Hashtag => "hashtag",
            NormStep::Email => "email",
            NormStep::Phone => "phone",
            NormStep::Emoticon => "emoticon",
            NormStep::StripSpecial => "strip_special",
            NormStep::SquashRepeats => "squash_repeats",
            NormStep::LemmaStop => "lemma_stop",
        }
    }
}

impl fmt::Display for NormStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormStep::ALL
            .into_iter()
            .find(|step| step.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown normalization step `{s}`")))
    }
}

/// Maps a surface form to its lemma.
pub trait Lemmatizer: Send + Sync {
    fn lemma<'a>(&'a self, token: &'a str) -> &'a str;
}

/// Default lemmatizer: every token is its own lemma.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityLemmatizer;

impl Lemmatizer for IdentityLemmatizer {
    fn lemma<'a>(&'a self, token: &'a str) -> &'a str {
        token
    }
}

/// Lookup-table lemmatizer loaded from `surface<TAB>lemma` lines.
#[derive(Debug, Default, Clone)]
pub struct DictionaryLemmatizer {
    table: HashMap<String, String>,
}

impl DictionaryLemmatizer {
    pub fn new(table: HashMap<String, String>) -> Self {
        DictionaryLemmatizer { table }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut table = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (surface, lemma) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `surface<TAB>lemma`"))?;
            table.insert(surface.to_string(), lemma.trim().to_string());
        }
        Ok(DictionaryLemmatizer { table })
    }
}

impl Lemmatizer for DictionaryLemmatizer {
    fn lemma<'a>(&'a self, token: &'a str) -> &'a str {
        self.table.get(token).map_or(token, String::as_str)
    }
}

/// One token per line; blank lines ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    Ok(read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[derive(Clone)]
struct LemmaStopSetup {
    stopwords: HashSet<String>,
    lemmatizer: Arc<dyn Lemmatizer>,
}

#[derive(Clone)]
pub struct NormConfig {
    steps: Vec<NormStep>,
    emoticons: EmoticonMap,
    lemma_stop: Option<LemmaStopSetup>,
}

impl fmt::Debug for NormConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NormConfig")
            .field("steps", &self.steps)
            .field("emoticons", &self.emoticons.entries().len())
            .field("stopwords", &self.lemma_stop.as_ref().map(|l| l.stopwords.len()))
            .finish()
    }
}

impl NormConfig {
    /// Enable `steps` (order and duplicates are irrelevant). Fails when
    /// `LemmaStop` is requested, because it needs [`NormConfig::with_lemma_stop`].
    pub fn new(steps: impl IntoIterator<Item = NormStep>) -> Result<Self> {
        let mut steps: Vec<NormStep> = steps.into_iter().collect();
        steps.sort();
        steps.dedup();
        if steps.contains(&NormStep::LemmaStop) {
            return Err(Error::Config(
                "lemma_stop needs a stop-word list; use with_lemma_stop".into(),
            ));
        }
        Ok(NormConfig {
            steps,
            emoticons: EmoticonMap::default(),
            lemma_stop: None,
        })
    }

    /// Every step except lemmatization/stop words (the transformer setting).
    pub fn standard() -> Self {
        Self::new(NormStep::ALL.into_iter().filter(|&s| s != NormStep::LemmaStop))
            .expect("standard steps are valid")
    }

    /// No rewriting at all beyond whitespace tidying.
    pub fn none() -> Self {
        Self::new([]).expect("empty step list is valid")
    }

    pub fn with_emoticons(mut self, emoticons: EmoticonMap) -> Self {
        self.emoticons = emoticons;
        self
    }

    /// Enable the final lemmatization + stop-word step.
    pub fn with_lemma_stop(
        mut self,
        stopwords: HashSet<String>,
        lemmatizer: Arc<dyn Lemmatizer>,
    ) -> Self {
        if !self.steps.contains(&NormStep::LemmaStop) {
            self.steps.push(NormStep::LemmaStop);
        }
        self.lemma_stop = Some(LemmaStopSetup {
            stopwords,
            lemmatizer,
        });
        self
    }

    pub fn steps(&self) -> &[NormStep] {
        &self.steps
    }

    pub fn is_enabled(&self, step: NormStep) -> bool {
        self.steps.contains(&step)
    }
}

impl Default for NormConfig {
    fn default() -> Self {
        Self::standard()
    }
}

/// Apply every enabled step once, in pipeline order, then collapse
/// whitespace. Total: any string is accepted.
pub fn normalize(text: &str, config: &NormConfig) -> String {
    let mut text = text.to_string();
    for &step in &config.steps {
        text = match step {
            NormStep::Lowercase => text.to_lowercase(),
            NormStep::Url => patterns::replace_all(&URL, &text, "url"),
            NormStep::Mention => patterns::replace_outside_emails(&MENTION, &text, "user"),
            NormStep::Hashtag => patterns::replace_outside_emails(&HASHTAG, &text, "hashtag"),
            NormStep::Email => patterns::replace_all(&EMAIL, &text, "email"),
            NormStep::Phone => patterns::replace_all(&PHONE, &text, "phone"),
            NormStep::Emoticon => config.emoticons.replace(&text),
            NormStep::StripSpecial => patterns::strip_special(&text),
            NormStep::SquashRepeats => patterns::squash_repeats(&text),
            NormStep::LemmaStop => {
                let setup = config
                    .lemma_stop
                    .as_ref()
                    .expect("LemmaStop is only enabled together with its setup");
                let tokens: Vec<&str> = text.split_whitespace().collect();
                lemma_stop_with(&tokens, &setup.stopwords, setup.lemmatizer.as_ref()).join(" ")
            }
        };
    }
    tidy_whitespace(&text)
}

/// Lemmatize with the identity lemmatizer, then drop stop words.
pub fn lemma_stop<S: AsRef<str>>(tokens: &[S], stopwords: &HashSet<String>) -> Vec<String> {
    lemma_stop_with(tokens, stopwords, &IdentityLemmatizer)
}

pub fn lemma_stop_with<S: AsRef<str>>(
    tokens: &[S],
    stopwords: &HashSet<String>,
    lemmatizer: &dyn Lemmatizer,
) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter_map(|token| {
            if REPLACEMENT_TOKENS.contains(&token) {
                return Some(token.to_string());
            }
            let lemma = lemmatizer.lemma(token);
            (!stopwords.contains(lemma)).then(|| lemma.to_string())
        })
        .collect()
}
