//! Accuracy, three-class macro F1 and the two-class sentiment F1 measures
//! (macro and pooled micro over positive and negative only).

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::label::Label;

const K: usize = Label::COUNT;
const POLAR: [Label; 2] = [Label::Positive, Label::Negative];

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn get(&self, gold: Label, pred: Label) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, class: Label) -> u64 {
        self.get(class, class)
    }

    /// Predicted as `class` but gold is something else.
    pub fn false_positives(&self, class: Label) -> u64 {
        let c = class.index();
        (0..K).filter(|&g| g != c).map(|g| self.counts[g][c]).sum()
    }

    /// Gold `class` predicted as something else.
    pub fn false_negatives(&self, class: Label) -> u64 {
        let c = class.index();
        (0..K).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }
}

pub fn confusion(gold: &[Label], pred: &[Label]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::Invalid(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty label list".into()));
    }
    let mut m = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(pred) {
        m.counts[g.index()][p.index()] += 1;
    }
    Ok(m)
}

/// `2TP / (2TP + FP + FN)`, with 0/0 taken as 0.
fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// The scalar measures of an [`EvalReport`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1Macro,
    #[default]
    F1pmMacro,
    F1pmMicro,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Accuracy, Metric::F1Macro, Metric::F1pmMacro, Metric::F1pmMicro];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1Macro => "f1_macro",
            Metric::F1pmMacro => "f1pm_macro",
            Metric::F1pmMicro => "f1pm_micro",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1pm_macro: f64,
    pub f1pm_micro: f64,
    /// Indexed by [`Label::index`].
    pub per_class: [ClassScores; K],
}

impl EvalReport {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::F1Macro => self.f1_macro,
            Metric::F1pmMacro => self.f1pm_macro,
            Metric::F1pmMicro => self.f1pm_micro,
        }
    }

    pub fn class(&self, label: Label) -> ClassScores {
        self.per_class[label.index()]
    }

    /// `metric<TAB>value` lines with raw values in shortest round-trip form.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for m in Metric::ALL {
            writeln!(out, "{}\t{}", m, self.metric(m)).unwrap();
        }
        for label in Label::ALL {
            let c = self.class(label);
            for (name, v) in [("precision", c.precision), ("recall", c.recall), ("f1", c.f1)] {
                writeln!(out, "{}_{}\t{}", name, label, v).unwrap();
            }
        }
        out
    }

    /// Human-readable table in percent with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in Metric::ALL {
            writeln!(out, "{:<12}{:>8.2}", m.name(), 100.0 * self.metric(m)).unwrap();
        }
        writeln!(out, "{:<12}{:>8}{:>8}{:>8}", "class", "P", "R", "F1").unwrap();
        for label in Label::ALL {
            let c = self.class(label);
            writeln!(
                out,
                "{:<12}{:>8.2}{:>8.2}{:>8.2}",
                label.as_str(),
                100.0 * c.precision,
                100.0 * c.recall,
                100.0 * c.f1
            )
            .unwrap();
        }
        out
    }
}

/// Read back a report written by [`EvalReport::to_tsv`]. Every row must be
/// present exactly once.
pub fn parse_report_tsv(content: &str, origin: &Path) -> Result<EvalReport> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, "metric\tvalue")) => {}
        _ => return Err(Error::parse(origin, 1, "expected header `metric\\tvalue`")),
    }
    let mut values = std::collections::BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, i + 1, "expected `metric<TAB>value`"))?;
        let value: f64 = value
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(origin, i + 1, format!("bad value {value:?}")))?;
        if values.insert(name.to_string(), value).is_some() {
            return Err(Error::parse(origin, i + 1, format!("duplicate row {name}")));
        }
    }
    let mut take = |name: String| {
        values
            .remove(&name)
            .ok_or_else(|| Error::parse(origin, 1, format!("missing row {name}")))
    };
    let mut per_class = [ClassScores::default(); K];
    for label in Label::ALL {
        per_class[label.index()] = ClassScores {
            precision: take(format!("precision_{label}"))?,
            recall: take(format!("recall_{label}"))?,
            f1: take(format!("f1_{label}"))?,
        };
    }
    let report = EvalReport {
        accuracy: take("accuracy".into())?,
        f1_macro: take("f1_macro".into())?,
        f1pm_macro: take("f1pm_macro".into())?,
        f1pm_micro: take("f1pm_micro".into())?,
        per_class,
    };
    if let Some(extra) = values.keys().next() {
        return Err(Error::parse(origin, 1, format!("unknown row {extra}")));
    }
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    parse_report_tsv(&read_to_string(path)?, path)
}

/// F1 pooled over the positive and negative classes: their TP, FP and FN
/// are summed before one F1 is taken. Neutral gold or predictions only ever
/// add to FN or FP.
pub fn pooled_polar_f1(m: &ConfusionMatrix) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in POLAR {
        tp += m.true_positives(c);
        fp += m.false_positives(c);
        fn_ += m.false_negatives(c);
    }
    f1(tp, fp, fn_)
}

pub fn evaluate_confusion(m: &ConfusionMatrix) -> EvalReport {
    let mut per_class = [ClassScores::default(); K];
    for label in Label::ALL {
        let (tp, fp, fn_) = (m.true_positives(label), m.false_positives(label), m.false_negatives(label));
        per_class[label.index()] = ClassScores {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: f1(tp, fp, fn_),
        };
    }
    let correct: u64 = Label::ALL.iter().map(|&l| m.true_positives(l)).sum();
    EvalReport {
        accuracy: ratio(correct, m.total()),
        f1_macro: per_class.iter().map(|c| c.f1).sum::<f64>() / K as f64,
        f1pm_macro: POLAR.iter().map(|l| per_class[l.index()].f1).sum::<f64>() / 2.0,
        f1pm_micro: pooled_polar_f1(m),
        per_class,
    }
}

pub fn evaluate(gold: &[Label], pred: &[Label]) -> Result<EvalReport> {
    Ok(evaluate_confusion(&confusion(gold, pred)?))
}

/// Arithmetic mean of every field over `reports`.
pub fn mean_report(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::Invalid("mean of zero reports".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut per_class = [ClassScores::default(); K];
    for (k, slot) in per_class.iter_mut().enumerate() {
        *slot = ClassScores {
            precision: mean(&|r| r.per_class[k].precision),
            recall: mean(&|r| r.per_class[k].recall),
            f1: mean(&|r| r.per_class[k].f1),
        };
    }
    Ok(EvalReport {
        accuracy: mean(&|r| r.accuracy),
        f1_macro: mean(&|r| r.f1_macro),
        f1pm_macro: mean(&|r| r.f1pm_macro),
        f1pm_micro: mean(&|r| r.f1pm_micro),
        per_class,
    })
}

/// One published score, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScore {
    pub dataset: String,
    pub metric: Metric,
    pub value: f64,
}

/// Parse `dataset<TAB>metric<TAB>value` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_reference(content: &str, origin: &Path) -> Result<Vec<ReferenceScore>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [dataset, metric, value] = fields[..] else {
            return Err(Error::parse(origin, line_no, format!("expected 3 fields, found {}", fields.len())));
        };
        let metric = metric
            .trim()
            .parse::<Metric>()
            .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        let value: f64 = value
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(origin, line_no, format!("bad score {value:?}")))?;
        out.push(ReferenceScore {
            dataset: dataset.trim().to_string(),
            metric,
            value,
        });
    }
    Ok(out)
}

pub fn load_reference(path: &Path) -> Result<Vec<ReferenceScore>> {
    parse_reference(&read_to_string(path)?, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: Metric,
    /// Computed score in percent.
    pub computed: f64,
    pub published: Option<f64>,
    /// `computed − published`, in points.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub dataset: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// Columns `metric computed published delta`, two decimals; published
    /// and delta are `-` when no reference exists.
    pub fn to_text(&self) -> String {
        let mut out = format!("dataset: {}\n", self.dataset);
        writeln!(out, "{:<12}{:>10}{:>11}{:>8}", "metric", "computed", "published", "delta").unwrap();
        for r in &self.rows {
            let published = r.published.map_or("-".to_string(), |v| format!("{v:.2}"));
            let delta = r.delta.map_or("-".to_string(), |v| format!("{v:+.2}"));
            writeln!(out, "{:<12}{:>10.2}{:>11}{:>8}", r.metric.name(), r.computed, published, delta).unwrap();
        }
        out
    }
}

/// Side-by-side computed and published scores for `dataset`. Only rows of
/// `reference` whose dataset matches exactly are used; a later row for the
/// same metric overrides an earlier one.
pub fn compare_reference(report: &EvalReport, dataset: &str, reference: &[ReferenceScore]) -> Comparison {
    let rows = Metric::ALL
        .into_iter()
        .map(|metric| {
            let computed = 100.0 * report.metric(metric);
            let published = reference
                .iter()
                .filter(|r| r.dataset == dataset && r.metric == metric)
                .map(|r| r.value)
                .next_back();
            ComparisonRow {
                metric,
                computed,
                published,
                delta: published.map(|p| computed - p),
            }
        })
        .collect();
    Comparison {
        dataset: dataset.to_string(),
        rows,
    }
}
