//! Small string helpers shared by the corpus and reformulation code.

use std::ops::Range;

fn chars_equal_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Byte ranges of all non-overlapping, leftmost occurrences of `needle` in
/// `haystack`, compared case-insensitively one character at a time.
pub fn find_all_ci(haystack: &str, needle: &str) -> Vec<Range<usize>> {
    let needle: Vec<char> = needle.chars().collect();
    if needle.is_empty() {
        return Vec::new();
    }
    let hay: Vec<(usize, char)> = haystack.char_indices().collect();
    let mut found = Vec::new();
    let mut i = 0;
    while i + needle.len() <= hay.len() {
        let hit = needle
            .iter()
            .zip(&hay[i..])
            .all(|(&n, &(_, h))| chars_equal_ci(h, n));
        if hit {
            let start = hay[i].0;
            let end = hay
                .get(i + needle.len())
                .map_or(haystack.len(), |&(pos, _)| pos);
            found.push(start..end);
            i += needle.len();
        } else {
            i += 1;
        }
    }
    found
}

pub fn contains_ci(haystack: &str, needle: &str) -> bool {
    !find_all_ci(haystack, needle).is_empty()
}

/// Collapse every whitespace run to one ASCII space and trim both ends.
pub fn tidy_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Split text into word tokens and single punctuation/symbol tokens.
///
/// A word is a maximal run of alphanumeric characters, combining marks and
/// underscores; every other non-space character is a token of its own.
/// Bracketed special tokens such as `[CLS]` are kept whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() || c == '_' || is_mark(c) {
            word.push(c);
            i += 1;
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if c == '[' {
            if let Some(len) = special_token_len(&chars[i..]) {
                tokens.push(chars[i..i + len].iter().collect());
                i += len;
                continue;
            }
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
        i += 1;
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn is_mark(c: char) -> bool {
    // Combining diacritical marks blocks; enough to keep NFD Cyrillic/Latin whole.
    matches!(c as u32, 0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

/// Length of a `[UPPERCASE]` special token at the start of `chars`, if any.
fn special_token_len(chars: &[char]) -> Option<usize> {
    let close = chars.iter().take(12).position(|&c| c == ']')?;
    let inner = &chars[1..close];
    (!inner.is_empty() && inner.iter().all(|c| c.is_ascii_uppercase())).then_some(close + 1)
}
