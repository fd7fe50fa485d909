//! Frozen word embeddings loaded from the word-vector text format:
//! a `<count> <dim>` header line, then `token v1 ... vd` per line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{read_to_string, Error, Result};

pub const UNK: &str = "[UNK]";
pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Tokens that must always resolve to a dedicated vector.
pub const SPECIAL_TOKENS: [&str; 13] = [
    "url", "user", "hashtag", "email", "phone", "sad", "happy", "neutral", "MASK", CLS, SEP, PAD, UNK,
];

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    vectors: Vec<f64>,
    zero: Vec<f64>,
    warnings: Vec<String>,
}

impl EmbeddingTable {
    /// Build a table from `(token, vector)` pairs; later duplicates win.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        let mut table = EmbeddingTable {
            dim,
            index: HashMap::new(),
            tokens: Vec::new(),
            vectors: Vec::new(),
            zero: vec![0.0; dim],
            warnings: Vec::new(),
        };
        for (token, vector) in entries {
            let token = token.into();
            if vector.len() != dim {
                return Err(Error::Invalid(format!(
                    "vector for `{token}` has {} values, expected {dim}",
                    vector.len()
                )));
            }
            table.insert(token, &vector);
        }
        table.add_missing_specials();
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty embedding file"))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| s.parse::<usize>().ok();
        let (declared, dim) = match head.as_slice() {
            [count, dim] => match (parse_usize(count), parse_usize(dim)) {
                (Some(c), Some(d)) if d > 0 => (c, d),
                _ => return Err(Error::parse(path, 1, "header must be `<count> <dim>`")),
            },
            _ => return Err(Error::parse(path, 1, "header must be `<count> <dim>`")),
        };
        let mut table = EmbeddingTable {
            dim,
            index: HashMap::new(),
            tokens: Vec::new(),
            vectors: Vec::new(),
            zero: vec![0.0; dim],
            warnings: Vec::new(),
        };
        let mut rows = 0;
        let mut vector = Vec::with_capacity(dim);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields.next().expect("non-blank line has a field");
            vector.clear();
            for field in fields {
                let value: f64 = field.trim_end_matches('\r').parse().map_err(|_| {
                    Error::parse(path, line_no, format!("non-numeric value `{field}`"))
                })?;
                vector.push(value);
            }
            if vector.len() != dim {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("`{token}` has {} values, expected {dim}", vector.len()),
                ));
            }
            if table.index.contains_key(token) {
                table
                    .warnings
                    .push(format!("line {line_no}: duplicate token `{token}`, keeping the later vector"));
            }
            table.insert(token.to_string(), &vector);
            rows += 1;
        }
        if rows != declared {
            table
                .warnings
                .push(format!("header declares {declared} rows, file has {rows}"));
        }
        table.add_missing_specials();
        Ok(table)
    }

    fn insert(&mut self, token: String, vector: &[f64]) {
        match self.index.get(&token) {
            Some(&row) => self.vectors[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(token.clone(), self.tokens.len());
                self.tokens.push(token);
                self.vectors.extend_from_slice(vector);
            }
        }
    }

    fn add_missing_specials(&mut self) {
        for token in SPECIAL_TOKENS {
            if self.index.contains_key(token) {
                continue;
            }
            let vector = if token == UNK || token == PAD {
                vec![0.0; self.dim]
            } else {
                seeded_unit_vector(token, self.dim)
            };
            self.insert(token.to_string(), &vector);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored tokens, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Non-fatal problems seen while loading.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Stored vector, or the all-zero OOV vector.
    pub fn lookup(&self, token: &str) -> &[f64] {
        match self.index.get(token) {
            Some(&row) => &self.vectors[row * self.dim..(row + 1) * self.dim],
            None => &self.zero,
        }
    }

    /// Mean of the token vectors; zero vector for no tokens.
    pub fn average_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for token in tokens {
            for (acc, v) in sum.iter_mut().zip(self.lookup(token.as_ref())) {
                *acc += v;
            }
        }
        if !tokens.is_empty() {
            let n = tokens.len() as f64;
            sum.iter_mut().for_each(|x| *x /= n);
        }
        sum
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (row, token) in self.tokens.iter().enumerate() {
            out.push_str(token);
            for v in &self.vectors[row * self.dim..(row + 1) * self.dim] {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A reproducible unit vector derived from the token string.
pub fn seeded_unit_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(token));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
