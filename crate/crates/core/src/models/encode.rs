//! Turning reformulated text into model inputs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MiniBertConfig;
use crate::embed::{EmbeddingTable, CLS, PAD, SEP, UNK};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::reformulate::{ReformulatedInput, DEFAULT_MASK};
use crate::text::tokenize;

/// Fixed height `s` and width `d` of a token matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub s: usize,
    pub d: usize,
}

impl SequenceSpec {
    pub fn new(s: usize, d: usize) -> Result<Self> {
        if s == 0 || d == 0 {
            return Err(Error::Invalid(format!("sequence spec needs s, d > 0, got s={s} d={d}")));
        }
        Ok(SequenceSpec { s, d })
    }
}

/// `s × d` matrix whose first `min(len, s)` rows are embedding lookups and
/// whose remaining rows are zero.
pub fn encode_tokens<S: AsRef<str>>(spec: SequenceSpec, table: &EmbeddingTable, tokens: &[S]) -> Result<Tensor> {
    if table.dim() != spec.d {
        return Err(Error::Shape(format!(
            "embedding dimension {} does not match sequence width {}",
            table.dim(),
            spec.d
        )));
    }
    let mut out = Tensor::zeros(spec.s, spec.d);
    for (r, tok) in tokens.iter().take(spec.s).enumerate() {
        out.data_mut()[r * spec.d..(r + 1) * spec.d].copy_from_slice(table.lookup(tok.as_ref()));
    }
    Ok(out)
}

/// Tokens a non-transformer model sees: sentence A followed by sentence B.
pub fn flat_tokens(input: &ReformulatedInput) -> Vec<String> {
    let mut tokens = tokenize(&input.sentence_a);
    if let Some(b) = &input.sentence_b {
        tokens.extend(tokenize(b));
    }
    tokens
}

/// Reserved ids, in this order, at the start of every vocabulary.
pub const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

/// Word-level vocabulary for the transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved tokens, then the mask token, then every token seen at least
    /// `min_count` times, most frequent first and ties in lexical order.
    pub fn build<I, T>(sentences: I, mask_token: &str, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[String]>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for sentence in sentences {
            for tok in sentence.as_ref() {
                *counts.entry(tok.clone()).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        if !tokens.iter().any(|t| t == mask_token) {
            tokens.push(mask_token.to_string());
        }
        let mut rest: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !tokens.contains(t))
            .collect();
        rest.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        tokens.extend(rest.into_iter().map(|(t, _)| t));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, reserved) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*reserved) {
                return Err(Error::Invalid(format!("vocabulary entry {i} must be {reserved}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Vocabulary of just the reserved tokens and the default mask.
    pub fn minimal() -> Self {
        Self::build(std::iter::empty::<Vec<String>>(), DEFAULT_MASK, 1).expect("reserved tokens are valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the `[UNK]` id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Token ids, segment ids and attention mask of one padded input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEncoding {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PairEncoding {
    /// Number of non-padding positions.
    pub fn used(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, padded to the configured
/// length. Overlong inputs lose the tail of sentence A; sentence B is never
/// cut.
pub fn encode_pair(config: &MiniBertConfig, input: &ReformulatedInput, vocab: &Vocab) -> Result<PairEncoding> {
    let len = config.max_len;
    let a = tokenize(&input.sentence_a);
    let b = input.sentence_b.as_deref().map(tokenize);
    let b_cost = b.as_ref().map_or(0, |b| b.len() + 1);
    let fixed = 2 + b_cost;
    if fixed > len {
        return Err(Error::Invalid(format!(
            "second sentence needs {fixed} positions but the input length is {len}"
        )));
    }
    let keep_a = a.len().min(len - fixed);

    let mut ids = Vec::with_capacity(len);
    let mut segments = Vec::with_capacity(len);
    ids.push(CLS_ID);
    ids.extend(a[..keep_a].iter().map(|t| vocab.id(t)));
    ids.push(SEP_ID);
    segments.resize(ids.len(), 0);
    if let Some(b) = &b {
        ids.extend(b.iter().map(|t| vocab.id(t)));
        ids.push(SEP_ID);
        segments.resize(ids.len(), 1);
    }
    let mut mask = vec![true; ids.len()];
    ids.resize(len, PAD_ID);
    segments.resize(len, 0);
    mask.resize(len, false);
    Ok(PairEncoding { ids, segments, mask })
}
