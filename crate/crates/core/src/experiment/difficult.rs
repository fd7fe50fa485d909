//! Per-example comparison of several models on a small hand-picked set.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{load_dataset, Dataset, TaskKind};
use crate::error::{read_to_string, Error, Result};
use crate::label::Label;

use super::config::ModelPredictions;

/// Parse an `id<TAB>label` file. A first line `id<TAB>label` is a header;
/// blank lines are skipped.
pub fn parse_predictions(content: &str, origin: &Path) -> Result<Vec<(String, Label)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || (i == 0 && line == "id\tlabel") {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, i + 1, "expected `id<TAB>label`"))?;
        let label: Label = label
            .parse()
            .map_err(|e: Error| Error::parse(origin, i + 1, e.to_string()))?;
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(origin, i + 1, format!("duplicate id `{id}`")));
        }
        out.push((id.to_string(), label));
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<(String, Label)>> {
    parse_predictions(&read_to_string(path)?, path)
}

pub fn predictions_to_tsv<S: AsRef<str>>(ids: &[S], labels: &[Label]) -> String {
    let mut out = String::from("id\tlabel\n");
    for (id, label) in ids.iter().zip(labels) {
        writeln!(out, "{}\t{}", id.as_ref(), label).unwrap();
    }
    out
}

/// Order `predictions` like `ids`. Every id needs exactly one prediction
/// and unknown ids are rejected.
pub fn align_predictions<S: AsRef<str>>(
    ids: &[S],
    predictions: &[(String, Label)],
    source: &str,
) -> Result<Vec<Label>> {
    let map: HashMap<&str, Label> = predictions.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let known: HashSet<&str> = ids.iter().map(AsRef::as_ref).collect();
    if let Some((id, _)) = predictions.iter().find(|(id, _)| !known.contains(id.as_str())) {
        return Err(Error::Invalid(format!("{source}: prediction for unknown id `{id}`")));
    }
    ids.iter()
        .map(|id| {
            map.get(id.as_ref())
                .copied()
                .ok_or_else(|| Error::Invalid(format!("{source}: no prediction for id `{}`", id.as_ref())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultReport {
    pub ids: Vec<String>,
    pub gold: Vec<Label>,
    pub models: Vec<String>,
    /// `predictions[m][i]`: model `m` on example `i`.
    pub predictions: Vec<Vec<Label>>,
}

impl DifficultReport {
    pub fn is_correct(&self, model: usize, example: usize) -> bool {
        self.predictions[model][example] == self.gold[example]
    }

    pub fn correct_count(&self, model: usize) -> usize {
        (0..self.ids.len()).filter(|&i| self.is_correct(model, i)).count()
    }

    /// Correct answers over all examples.
    pub fn share(&self, model: usize) -> f64 {
        self.correct_count(model) as f64 / self.ids.len() as f64
    }

    /// Entries as -1/0/1; correct ones carry a trailing `*`. The last row
    /// holds each model's share of correct answers.
    pub fn to_text(&self) -> String {
        let id_w = self.ids.iter().map(|s| s.chars().count()).max().unwrap_or(0).max(7);
        let col_w: Vec<usize> = self.models.iter().map(|m| m.chars().count().max(5) + 1).collect();
        let mut out = format!("{:<id_w$}  {:>4}", "example", "true");
        for (m, w) in self.models.iter().zip(&col_w) {
            write!(out, "{m:>w$}").unwrap();
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            write!(out, "{:<id_w$}  {:>4}", id, self.gold[i].polarity()).unwrap();
            for (m, w) in col_w.iter().enumerate() {
                let mark = if self.is_correct(m, i) { "*" } else { " " };
                let cell = format!("{}{mark}", self.predictions[m][i].polarity());
                write!(out, "{cell:>w$}").unwrap();
            }
            out.push('\n');
        }
        write!(out, "{:<id_w$}  {:>4}", "share", "").unwrap();
        for (m, w) in col_w.iter().enumerate() {
            let cell = format!("{:.2} ", self.share(m));
            write!(out, "{cell:>w$}").unwrap();
        }
        out.push('\n');
        out
    }

    /// `id gold <model>...` with -1/0/1 entries, then a `share` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tgold");
        for m in &self.models {
            write!(out, "\t{m}").unwrap();
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            write!(out, "{id}\t{}", self.gold[i].polarity()).unwrap();
            for m in 0..self.models.len() {
                write!(out, "\t{}", self.predictions[m][i].polarity()).unwrap();
            }
            out.push('\n');
        }
        out.push_str("share\t");
        for m in 0..self.models.len() {
            write!(out, "\t{}", self.share(m)).unwrap();
        }
        out.push('\n');
        out
    }
}

pub fn difficult_report(set: &Dataset, models: &[(String, Vec<(String, Label)>)]) -> Result<DifficultReport> {
    let ids: Vec<String> = set.samples().iter().map(|s| s.id.clone()).collect();
    let mut names = HashSet::new();
    let mut predictions = Vec::with_capacity(models.len());
    for (name, preds) in models {
        if !names.insert(name.as_str()) {
            return Err(Error::Invalid(format!("model `{name}` listed twice")));
        }
        predictions.push(align_predictions(&ids, preds, name)?);
    }
    Ok(DifficultReport {
        ids,
        gold: set.labels(),
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        predictions,
    })
}

/// Load the set (entity column optional) and every model's prediction file.
pub fn load_difficult_report(set: &Path, models: &[ModelPredictions]) -> Result<DifficultReport> {
    if models.is_empty() {
        return Err(Error::Config("difficult.models is empty".into()));
    }
    let set = load_dataset(set, TaskKind::General)?;
    let loaded = models
        .iter()
        .map(|m| Ok((m.name.clone(), load_predictions(&m.predictions)?)))
        .collect::<Result<Vec<_>>>()?;
    difficult_report(&set, &loaded)
}
