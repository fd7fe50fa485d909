//! Model inputs for the three input schemes.
//!
//! Targeted samples have every mention of their entity replaced by the mask
//! token. General samples get the mask token assigned to the whole sentence
//! (`MASK = <text>`). The two sentence-pair schemes append an auxiliary
//! sentence built around the mask token.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sample, TaskKind};
use crate::error::{read_to_string, Error, Result};
use crate::text::find_all_ci;

pub const DEFAULT_MASK: &str = "MASK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Single,
    PairQa,
    PairNli,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Single, Scheme::PairQa, Scheme::PairNli];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Single => "single",
            Scheme::PairQa => "pair_qa",
            Scheme::PairNli => "pair_nli",
        }
    }

    pub fn is_pair(self) -> bool {
        self != Scheme::Single
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// Auxiliary sentences per pair scheme. Each template contains the
/// placeholder `MASK`, substituted with the configured mask token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTable {
    prompts: BTreeMap<Scheme, String>,
}

impl Default for PromptTable {
    fn default() -> Self {
        PromptTable {
            prompts: BTreeMap::from([
                (Scheme::PairQa, "What do you think about MASK?".to_string()),
                (Scheme::PairNli, "The sentiment polarity of MASK is".to_string()),
            ]),
        }
    }
}

impl PromptTable {
    /// Defaults overridden by `scheme<TAB>auxiliary sentence` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut table = PromptTable::default();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (scheme, sentence) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `scheme<TAB>sentence`"))?;
            let scheme: Scheme = scheme
                .parse()
                .map_err(|e: Error| Error::parse(path, idx + 1, e.to_string()))?;
            if !scheme.is_pair() {
                return Err(Error::parse(path, idx + 1, "single scheme takes no auxiliary sentence"));
            }
            if !sentence.contains(DEFAULT_MASK) {
                return Err(Error::parse(path, idx + 1, "auxiliary sentence must contain MASK"));
            }
            table.prompts.insert(scheme, sentence.to_string());
        }
        Ok(table)
    }

    pub fn template(&self, scheme: Scheme) -> Option<&str> {
        self.prompts.get(&scheme).map(String::as_str)
    }

    fn render(&self, scheme: Scheme, mask: &str) -> Option<String> {
        self.template(scheme).map(|t| t.replace(DEFAULT_MASK, mask))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulatedInput {
    pub sentence_a: String,
    pub sentence_b: Option<String>,
    pub mask_token: String,
}

impl ReformulatedInput {
    pub fn mask_count(&self) -> usize {
        self.sentence_a.matches(self.mask_token.as_str()).count()
    }

    /// Put `entity` back in place of every mask token of sentence A.
    pub fn unmask(&self, entity: &str) -> String {
        self.sentence_a.replace(self.mask_token.as_str(), entity)
    }
}

/// Reformulation settings shared by a whole run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reformulator {
    pub scheme: Scheme,
    pub mask_token: String,
    pub prompts: PromptTable,
}

impl Reformulator {
    pub fn new(scheme: Scheme) -> Self {
        Reformulator {
            scheme,
            mask_token: DEFAULT_MASK.to_string(),
            prompts: PromptTable::default(),
        }
    }

    pub fn with_mask_token(mut self, mask: impl Into<String>) -> Self {
        self.mask_token = mask.into();
        self
    }

    pub fn with_prompts(mut self, prompts: PromptTable) -> Self {
        self.prompts = prompts;
        self
    }

    fn auxiliary(&self) -> Result<Option<String>> {
        if !self.scheme.is_pair() {
            return Ok(None);
        }
        self.prompts
            .render(self.scheme, &self.mask_token)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("no auxiliary sentence for scheme {}", self.scheme)))
    }

    /// Mask every case-insensitive occurrence of the sample's entity.
    pub fn targeted(&self, sample: &Sample) -> Result<ReformulatedInput> {
        let entity = sample
            .target_entity
            .as_deref()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| Error::Invalid(format!("sample `{}` has no target entity", sample.id)))?;
        if !find_all_ci(&self.mask_token, entity).is_empty() {
            return Err(Error::Invalid(format!(
                "sample `{}`: entity `{entity}` occurs inside the mask token",
                sample.id
            )));
        }
        let hits = find_all_ci(&sample.text, entity);
        if hits.is_empty() {
            return Err(Error::Invalid(format!(
                "sample `{}`: entity `{entity}` not found in text",
                sample.id
            )));
        }
        let mut sentence_a = String::with_capacity(sample.text.len());
        let mut last = 0;
        for hit in hits {
            sentence_a.push_str(&sample.text[last..hit.start]);
            sentence_a.push_str(&self.mask_token);
            last = hit.end;
        }
        sentence_a.push_str(&sample.text[last..]);
        Ok(ReformulatedInput {
            sentence_a,
            sentence_b: self.auxiliary()?,
            mask_token: self.mask_token.clone(),
        })
    }

    /// Assign the mask token to the whole sentence: `MASK = <text>`.
    pub fn general(&self, sample: &Sample) -> Result<ReformulatedInput> {
        Ok(ReformulatedInput {
            sentence_a: format!("{} = {}", self.mask_token, sample.text),
            sentence_b: self.auxiliary()?,
            mask_token: self.mask_token.clone(),
        })
    }

    pub fn apply(&self, sample: &Sample, kind: TaskKind) -> Result<ReformulatedInput> {
        match kind {
            TaskKind::General => self.general(sample),
            TaskKind::Targeted => self.targeted(sample),
        }
    }
}

pub fn reformulate_targeted(sample: &Sample, scheme: Scheme) -> Result<ReformulatedInput> {
    Reformulator::new(scheme).targeted(sample)
}

pub fn reformulate_general(sample: &Sample, scheme: Scheme) -> Result<ReformulatedInput> {
    Reformulator::new(scheme).general(sample)
}
