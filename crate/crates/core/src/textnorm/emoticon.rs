use std::collections::BTreeMap;
use std::path::Path;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};

use super::patterns::WORD_CHAR;
use crate::error::{read_to_string, Error, Result};

/// Token an emoticon is rewritten to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mood {
    Happy,
    Sad,
    Neutral,
}

impl Mood {
    pub fn token(self) -> &'static str {
        match self {
            Mood::Happy => "happy",
            Mood::Sad => "sad",
            Mood::Neutral => "neutral",
        }
    }

    fn parse(s: &str) -> Option<Mood> {
        match s {
            "happy" => Some(Mood::Happy),
            "sad" => Some(Mood::Sad),
            "neutral" => Some(Mood::Neutral),
            _ => None,
        }
    }
}

const DEFAULT_EMOTICONS: &[(&str, Mood)] = &[
    (":)", Mood::Happy),
    (":-)", Mood::Happy),
    (":]", Mood::Happy),
    ("=)", Mood::Happy),
    (";)", Mood::Happy),
    (";-)", Mood::Happy),
    (":d", Mood::Happy),
    (":-d", Mood::Happy),
    ("))", Mood::Happy),
    ("^_^", Mood::Happy),
    ("<3", Mood::Happy),
    (":(", Mood::Sad),
    (":-(", Mood::Sad),
    (":[", Mood::Sad),
    ("=(", Mood::Sad),
    (":'(", Mood::Sad),
    (";(", Mood::Sad),
    ("((", Mood::Sad),
    (":|", Mood::Neutral),
    (":-|", Mood::Neutral),
    ("-_-", Mood::Neutral),
];

/// Literal emoticon table matched leftmost-longest, ASCII case-insensitively.
///
/// A match ending in `)` or `(` absorbs the rest of that bracket run, so
/// `:)))` and `))))` each become one token. A match ending in a letter or
/// digit only counts when the next character is not a letter or digit.
#[derive(Debug, Clone)]
pub struct EmoticonMap {
    entries: Vec<(String, Mood)>,
    matcher: AhoCorasick,
}

impl EmoticonMap {
    pub fn new(entries: impl IntoIterator<Item = (String, Mood)>) -> Result<Self> {
        let mut unique: BTreeMap<String, Mood> = BTreeMap::new();
        for (pattern, mood) in entries {
            if pattern.is_empty() || pattern.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("bad emoticon pattern `{pattern}`")));
            }
            unique.insert(pattern, mood);
        }
        let entries: Vec<(String, Mood)> = unique.into_iter().collect();
        let matcher = AhoCorasickBuilder::new()
            .match_kind(MatchKind::LeftmostLongest)
            .ascii_case_insensitive(true)
            .build(entries.iter().map(|(p, _)| p.as_str()))
            .map_err(|e| Error::Invalid(format!("emoticon table: {e}")))?;
        Ok(EmoticonMap { entries, matcher })
    }

    /// Load `pattern<TAB>token` lines, token one of happy/sad/neutral.
    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut entries = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (pattern, token) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `pattern<TAB>token`"))?;
            let mood = Mood::parse(token.trim())
                .ok_or_else(|| Error::parse(path, idx + 1, format!("unknown emoticon token `{token}`")))?;
            entries.push((pattern.to_string(), mood));
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(String, Mood)] {
        &self.entries
    }

    pub fn replace(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        let mut pos = 0;
        while pos < text.len() {
            let Some(m) = self.matcher.find(&text[pos..]) else {
                break;
            };
            let (start, mut end) = (pos + m.start(), pos + m.end());
            let last_char = text[..end].chars().next_back().expect("non-empty match");
            if last_char.is_alphanumeric() && WORD_CHAR.is_match(&text[end..]) {
                // Not a standalone emoticon; retry one character further on.
                pos = start + text[start..].chars().next().map_or(1, char::len_utf8);
                continue;
            }
            if last_char == ')' || last_char == '(' {
                end += text[end..].chars().take_while(|&c| c == last_char).count();
            }
            out.push_str(&text[last..start]);
            out.push(' ');
            out.push_str(self.entries[m.pattern().as_usize()].1.token());
            out.push(' ');
            last = end;
            pos = end;
        }
        out.push_str(&text[last..]);
        out
    }
}

impl Default for EmoticonMap {
    fn default() -> Self {
        Self::new(DEFAULT_EMOTICONS.iter().map(|&(p, m)| (p.to_string(), m)))
            .expect("default emoticon table is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_collapse_to_one_token() {
        let map = EmoticonMap::default();
        assert_eq!(map.replace("ура))))"), "ура happy ");
        assert_eq!(map.replace("ну :((("), "ну  sad ");
        assert_eq!(map.replace(":-) :|"), " happy   neutral ");
    }

    #[test]
    fn letter_emoticons_need_a_boundary() {
        let map = EmoticonMap::default();
        assert_eq!(map.replace("ok :D"), "ok  happy ");
        assert_eq!(map.replace("c:drive"), "c:drive");
    }

    #[test]
    fn single_bracket_is_not_an_emoticon() {
        let map = EmoticonMap::default();
        assert_eq!(map.replace("(см. выше)"), "(см. выше)");
    }
}
