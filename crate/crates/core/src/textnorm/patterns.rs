//! Regular patterns for the replacement steps.
//!
//! | step     | pattern                                                   | token   |
//! |----------|-----------------------------------------------------------|---------|
//! | Url      | `(?:[a-z][a-z0-9+.\-]*://\|www\.)\S+`                     | url     |
//! | Mention  | `@\w+` (skipped where it overlaps an email)               | user    |
//! | Hashtag  | `#\w+` (skipped where it overlaps an email)               | hashtag |
//! | Email    | `[\w.+\-]+@[\w\-]+(?:\.[\w\-]+)+`                         | email   |
//! | Phone    | `\+\d(?:[\- ()]?\d){9,14}\|\d(?:[\-()]?\d){9,14}`          | phone   |
//!
//! All patterns are case-insensitive. Replacement tokens are written with a
//! space on each side so that a replacement never glues its neighbours into
//! a new match; whitespace is tidied once at the end of the pipeline.
//!
//! Emails are protected from the mention and hashtag rules because those
//! steps run first and would otherwise consume the `@domain` part.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

fn compile(pattern: &str) -> Regex {
    Regex::new(pattern).expect("built-in pattern compiles")
}

pub static URL: LazyLock<Regex> =
    LazyLock::new(|| compile(r"(?i)(?:[a-z][a-z0-9+.\-]*://|www\.)\S+"));
pub static MENTION: LazyLock<Regex> = LazyLock::new(|| compile(r"@\w+"));
pub static HASHTAG: LazyLock<Regex> = LazyLock::new(|| compile(r"#\w+"));
pub static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| compile(r"(?i)[\w.+\-]+@[\w\-]+(?:\.[\w\-]+)+"));
pub static PHONE: LazyLock<Regex> =
    LazyLock::new(|| compile(r"\+\d(?:[\- ()]?\d){9,14}|\d(?:[\-()]?\d){9,14}"));
/// Anything that is not a letter, combining mark, digit, punctuation mark or
/// whitespace. `—` is in `\p{P}` (dash punctuation).
pub static SPECIAL: LazyLock<Regex> = LazyLock::new(|| compile(r"[^\p{L}\p{M}\p{N}\p{P}\s]"));
pub static WORD_CHAR: LazyLock<Regex> = LazyLock::new(|| compile(r"^[\p{L}\p{M}\p{N}]"));

fn padded(token: &str) -> String {
    format!(" {token} ")
}

pub fn replace_all(re: &Regex, text: &str, token: &str) -> String {
    re.replace_all(text, padded(token).as_str()).into_owned()
}

/// Replace matches of `re` that do not overlap any email address.
pub fn replace_outside_emails(re: &Regex, text: &str, token: &str) -> String {
    let emails: Vec<Range<usize>> = EMAIL.find_iter(text).map(|m| m.range()).collect();
    let overlaps = |r: &Range<usize>| emails.iter().any(|e| r.start < e.end && e.start < r.end);
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in re.find_iter(text) {
        if overlaps(&m.range()) {
            continue;
        }
        out.push_str(&text[last..m.start()]);
        out.push_str(&padded(token));
        last = m.end();
    }
    out.push_str(&text[last..]);
    out
}

pub fn strip_special(text: &str) -> String {
    SPECIAL.replace_all(text, " ").into_owned()
}

/// Shorten every run of the same letter longer than two to exactly two.
pub fn squash_repeats(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    let mut run = 0;
    for c in text.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= 2 || !c.is_alphabetic() {
            out.push(c);
        }
    }
    out
}
