//! Sentiment datasets: loading, validation, splitting and class statistics.
//!
//! The on-disk format is a UTF-8 TSV with the header
//! `id<TAB>text<TAB>entity<TAB>label`. The entity column is empty for general
//! datasets. Tabs, newlines and backslashes inside text are written as `\t`,
//! `\n` and `\\`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::label::Label;
use crate::text::contains_ci;

pub const TSV_HEADER: &str = "id\ttext\tentity\tlabel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// One label per text.
    General,
    /// One label per (text, entity mention) pair.
    Targeted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub target_entity: Option<String>,
    pub label: Label,
}

impl Sample {
    pub fn general(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            target_entity: None,
            label,
        }
    }

    pub fn targeted(
        id: impl Into<String>,
        text: impl Into<String>,
        entity: impl Into<String>,
        label: Label,
    ) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            target_entity: Some(entity.into()),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub task_kind: TaskKind,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Build a dataset, checking every invariant that `load_dataset` checks.
    pub fn new(name: impl Into<String>, task_kind: TaskKind, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("dataset is empty".into()));
        }
        let mut seen = HashSet::new();
        for sample in &samples {
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate id `{}`", sample.id)));
            }
            check_sample(sample, task_kind).map_err(Error::Invalid)?;
        }
        Ok(Dataset {
            name: name.into(),
            task_kind,
            samples,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; Label::COUNT] {
        let mut counts = [0; Label::COUNT];
        for sample in &self.samples {
            counts[sample.label.index()] += 1;
        }
        counts
    }
}

fn check_sample(sample: &Sample, kind: TaskKind) -> std::result::Result<(), String> {
    if kind == TaskKind::Targeted {
        match sample.target_entity.as_deref() {
            None | Some("") => {
                return Err(format!("sample `{}` has no target entity", sample.id));
            }
            Some(entity) if !contains_ci(&sample.text, entity) => {
                return Err(format!(
                    "sample `{}`: entity `{entity}` does not occur in text",
                    sample.id
                ));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Percentage of each class, in [`Label`] index order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub percent: [f64; Label::COUNT],
}

impl ClassDistribution {
    pub fn get(&self, label: Label) -> f64 {
        self.percent[label.index()]
    }

    /// Whole-percent values, as printed in the class distribution tables.
    pub fn rounded(&self) -> [u32; Label::COUNT] {
        self.percent.map(|p| p.round() as u32)
    }
}

pub fn class_distribution(dataset: &Dataset) -> ClassDistribution {
    let total = dataset.len() as f64;
    let counts = dataset.class_counts();
    ClassDistribution {
        percent: counts.map(|c| 100.0 * c as f64 / total),
    }
}

fn unescape(field: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            // Unknown escapes are kept verbatim.
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    Ok(out)
}

pub fn escape_field(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

/// Parse dataset TSV content. `origin` is only used in error messages.
pub fn parse_dataset(
    content: &str,
    origin: &Path,
    name: &str,
    task_kind: TaskKind,
) -> Result<Dataset> {
    let mut lines = content.split('\n').enumerate();
    let header = lines.next().map(|(_, l)| l.trim_end_matches('\r')).unwrap_or("");
    if header != TSV_HEADER {
        return Err(Error::parse(origin, 1, format!("expected header `{}`", TSV_HEADER.escape_default())));
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 4 tab-separated columns, found {}", fields.len()),
            ));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(origin, line_no, "empty id"));
        }
        let text = unescape(fields[1]).map_err(|m| Error::parse(origin, line_no, m))?;
        let entity = unescape(fields[2]).map_err(|m| Error::parse(origin, line_no, m))?;
        let label: Label = fields[3]
            .parse()
            .map_err(|e: Error| Error::parse(origin, line_no, e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::parse(origin, line_no, format!("duplicate id `{id}`")));
        }
        let sample = Sample {
            id,
            text,
            target_entity: (!entity.is_empty()).then_some(entity),
            label,
        };
        check_sample(&sample, task_kind).map_err(|m| Error::parse(origin, line_no, m))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::parse(origin, 1, "dataset has no rows"));
    }
    Ok(Dataset {
        name: name.to_string(),
        task_kind,
        samples,
    })
}

/// Load a dataset TSV. The dataset is named after the file stem.
pub fn load_dataset(path: &Path, task_kind: TaskKind) -> Result<Dataset> {
    let content = read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&content, path, &name, task_kind)
}

pub fn dataset_to_tsv(dataset: &Dataset) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for s in dataset.samples() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            s.id,
            escape_field(&s.text),
            escape_field(s.target_entity.as_deref().unwrap_or("")),
            s.label
        );
    }
    out
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_tsv(dataset)).map_err(|e| Error::io(path, e))
}

/// Deterministic shuffled partition. The first part receives
/// `round(fraction * len)` samples; both parts keep the original file order.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n = dataset.len();
    let first = (fraction * n as f64).round() as usize;
    if first == 0 || first == n {
        return Err(Error::Invalid(format!(
            "split fraction {fraction} of {n} samples leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_first = vec![false; n];
    for &i in &order[..first] {
        in_first[i] = true;
    }
    let (a, b): (Vec<_>, Vec<_>) = dataset
        .samples
        .iter()
        .cloned()
        .zip(in_first)
        .partition(|(_, first)| *first);
    let strip = |v: Vec<(Sample, bool)>| v.into_iter().map(|(s, _)| s).collect::<Vec<_>>();
    Ok((
        Dataset {
            name: format!("{}-a", dataset.name),
            task_kind: dataset.task_kind,
            samples: strip(a),
        },
        Dataset {
            name: format!("{}-b", dataset.name),
            task_kind: dataset.task_kind,
            samples: strip(b),
        },
    ))
}
