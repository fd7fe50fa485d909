//! Mini-batch training, repeated runs and grid search.
//!
//! A training run is single-threaded and fully determined by its seed: the
//! seed fixes the per-epoch shuffles and every dropout mask. Independent
//! runs and grid cells are spread over the rayon pool and collected in
//! order, so parallelism never changes a result.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::metrics::{evaluate, mean_report, EvalReport, Metric};
use crate::models::{Classifier, Encoded, Mode};
use crate::numerics::{Graph, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub runs: usize,
    /// Weight of the squared-norm penalty on penalized parameters.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            runs: 5,
            l2: 1e-4,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning values used for the transformer: 5 epochs, learning rate
    /// 2e-5, batch size 12.
    pub fn transformer() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 12,
            epochs: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 weight {} must be >= 0", self.l2)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.runs == 0 {
            return Err(Error::Config("batch_size, epochs and runs must be positive".into()));
        }
        Ok(())
    }
}

/// One encoded sample with its gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: Encoded,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss (with penalty) after the epoch, without dropout.
    pub loss: f64,
    pub valid_metric: Option<f64>,
}

/// `epoch<TAB>loss<TAB>valid_metric`; the last field is empty without a
/// validation set.
pub fn history_to_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\tloss\tvalid_metric\n");
    for r in history {
        let valid = r.valid_metric.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{}", r.epoch, r.loss, valid).unwrap();
    }
    out
}

enum OptState {
    Sgd,
    Adam { m: Vec<Tensor>, v: Vec<Tensor>, t: i32 },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptState {
    fn new(kind: Optimizer, params: &ParamSet) -> Self {
        match kind {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => {
                let zeros: Vec<Tensor> = params
                    .iter()
                    .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                    .collect();
                OptState::Adam {
                    m: zeros.clone(),
                    v: zeros,
                    t: 0,
                }
            }
        }
    }

    fn step(&mut self, params: &mut ParamSet, lr: f64) {
        match self {
            OptState::Sgd => {
                for p in params.iter_mut() {
                    let grad = p.grad.data().to_vec();
                    for (w, g) in p.value.data_mut().iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
            }
            OptState::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                for ((p, m), v) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    let grad = p.grad.data();
                    let (md, vd) = (m.data_mut(), v.data_mut());
                    let mut updates = Vec::with_capacity(grad.len());
                    for i in 0..grad.len() {
                        md[i] = BETA1 * md[i] + (1.0 - BETA1) * grad[i];
                        vd[i] = BETA2 * vd[i] + (1.0 - BETA2) * grad[i] * grad[i];
                        updates.push(lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + ADAM_EPS));
                    }
                    for (w, u) in p.value.data_mut().iter_mut().zip(updates) {
                        *w -= u;
                    }
                }
            }
        }
    }
}

fn penalty(clf: &Classifier, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    clf.penalized()
        .into_iter()
        .map(|id| clf.params().get(id).value.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        * l2
}

/// Mean per-sample loss over `data` in index order, without dropout, plus
/// the penalty term.
pub fn dataset_loss(clf: &Classifier, data: &[Example], l2: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("loss over an empty dataset".into()));
    }
    let mut total = 0.0;
    for ex in data {
        let mut g = Graph::new();
        let loss = clf.loss_with(&mut g, clf.params(), &ex.input, ex.label.index())?;
        total += g.value(loss).item();
    }
    Ok(total / data.len() as f64 + penalty(clf, l2))
}

pub fn predict_all(clf: &Classifier, data: &[Example]) -> Result<Vec<Label>> {
    data.iter().map(|ex| clf.predict_label(&ex.input)).collect()
}

pub fn evaluate_on(clf: &Classifier, data: &[Example]) -> Result<EvalReport> {
    let pred = predict_all(clf, data)?;
    let gold: Vec<Label> = data.iter().map(|e| e.label).collect();
    evaluate(&gold, &pred)
}

/// Train `clf` in place and return one record per epoch. With `valid`, each
/// record also carries `metric` on the validation examples.
pub fn train(
    clf: &mut Classifier,
    data: &[Example],
    valid: Option<&[Example]>,
    config: &TrainConfig,
    metric: Metric,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    clf.set_mode(Mode::Training);
    let result = train_inner(clf, data, valid, config, metric);
    clf.set_mode(Mode::Evaluation);
    result
}

fn train_inner(
    clf: &mut Classifier,
    data: &[Example],
    valid: Option<&[Example]>,
    config: &TrainConfig,
    metric: Metric,
) -> Result<Vec<EpochRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptState::new(config.optimizer, clf.params());
    let penalized = clf.penalized();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut params = std::mem::take(clf.params_mut());
            params.zero_grad();
            let outcome = (|| -> Result<()> {
                for &i in batch {
                    let ex = &data[i];
                    let mut g = Graph::training(rng.next_u64());
                    let loss = clf.loss_with(&mut g, &params, &ex.input, ex.label.index())?;
                    let value = g.value(loss).item();
                    if !value.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "loss {value} on sample {} (epoch {epoch}, batch {b})",
                            ex.id
                        )));
                    }
                    let loss = g.scale(loss, scale);
                    g.backward(loss)?;
                    g.accumulate_grads(&mut params);
                }
                if config.l2 > 0.0 {
                    for &id in &penalized {
                        let p = params.get_mut(id);
                        let grad = p.value.map(|w| 2.0 * config.l2 * w);
                        p.grad.add_assign(&grad);
                    }
                }
                if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} (epoch {epoch}, batch {b})",
                        p.name
                    )));
                }
                opt.step(&mut params, config.learning_rate);
                Ok(())
            })();
            *clf.params_mut() = params;
            outcome?;
        }

        let loss = dataset_loss(clf, data, config.l2)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss} after epoch {epoch}")));
        }
        let valid_metric = match valid {
            Some(v) if !v.is_empty() => Some(evaluate_on(clf, v)?.metric(metric)),
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            loss,
            valid_metric,
        });
    }
    Ok(history)
}

/// Outcome of one seeded run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub predictions: Vec<Label>,
    pub report: EvalReport,
    pub classifier: Classifier,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub runs: Vec<RunRecord>,
    /// Field-wise mean over `runs`.
    pub mean: EvalReport,
}

/// Train `config.runs` independent classifiers, run `i` using seed
/// `config.seed + i` for both initialization and training, and evaluate each
/// on `test`.
pub fn run_n<F>(factory: F, data: &[Example], test: &[Example], config: &TrainConfig, metric: Metric) -> Result<RunResult>
where
    F: Fn(u64) -> Result<Classifier> + Sync,
{
    config.validate()?;
    if test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let runs = (0..config.runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i);
            let mut clf = factory(seed)?;
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            let history = train(&mut clf, data, None, &cfg, metric)?;
            let predictions = predict_all(&clf, test)?;
            let gold: Vec<Label> = test.iter().map(|e| e.label).collect();
            let report = evaluate(&gold, &predictions)?;
            Ok(RunRecord {
                seed,
                history,
                predictions,
                report,
                classifier: clf,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    let mean = mean_report(&reports)?;
    Ok(RunResult { runs, mean })
}

/// A grid value: a number or a word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    Text(String),
}

impl GridValue {
    fn cmp_total(&self, other: &Self) -> Ordering {
        match (self, other) {
            (GridValue::Number(a), GridValue::Number(b)) => a.total_cmp(b),
            (GridValue::Number(_), GridValue::Text(_)) => Ordering::Less,
            (GridValue::Text(_), GridValue::Number(_)) => Ordering::Greater,
            (GridValue::Text(a), GridValue::Text(b)) => a.cmp(b),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            GridValue::Number(v) => Some(*v),
            GridValue::Text(_) => None,
        }
    }

    /// Non-negative integer value, if this is one.
    pub fn as_usize(&self) -> Option<usize> {
        self.as_f64()
            .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v <= usize::MAX as f64)
            .map(|v| v as usize)
    }
}

impl fmt::Display for GridValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridValue::Number(v) => write!(f, "{v}"),
            GridValue::Text(s) => f.write_str(s),
        }
    }
}

/// One point of a grid, keyed by parameter name in sorted order.
pub type GridCell = BTreeMap<String, GridValue>;

pub fn cell_label(cell: &GridCell) -> String {
    cell.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub params: BTreeMap<String, Vec<GridValue>>,
    #[serde(default)]
    pub metric: Metric,
}

impl GridSpec {
    /// Cartesian product of all candidate lists, last key varying fastest.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        if self.params.is_empty() {
            return Err(Error::Config("grid has no parameters".into()));
        }
        let mut cells = vec![GridCell::new()];
        for (name, values) in &self.params {
            if values.is_empty() {
                return Err(Error::Config(format!("grid parameter {name} has no values")));
            }
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.insert(name.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellScore {
    pub cell: GridCell,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub cells: Vec<CellScore>,
    pub best: usize,
}

impl GridResult {
    pub fn best(&self) -> &CellScore {
        &self.cells[self.best]
    }

    /// `cell<TAB>score` per cell, then the chosen cell.
    pub fn to_tsv(&self, metric: Metric) -> String {
        let mut out = format!("cell\t{metric}\n");
        for c in &self.cells {
            writeln!(out, "{}\t{}", cell_label(&c.cell), c.score).unwrap();
        }
        writeln!(out, "# best\t{}", cell_label(&self.best().cell)).unwrap();
        out
    }
}

/// Score every cell with `score` and pick the highest. Equal scores go to
/// the cell whose values, compared key by key, are smallest.
pub fn grid_search<F>(grid: &GridSpec, score: F) -> Result<GridResult>
where
    F: Fn(&GridCell) -> Result<f64> + Sync,
{
    let cells = grid.cells()?;
    let scores = cells.par_iter().map(&score).collect::<Result<Vec<f64>>>()?;
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("grid score {bad}")));
    }
    let cells: Vec<CellScore> = cells
        .into_iter()
        .zip(scores)
        .map(|(cell, score)| CellScore { cell, score })
        .collect();
    let lex = |a: &GridCell, b: &GridCell| {
        a.values()
            .zip(b.values())
            .map(|(x, y)| x.cmp_total(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    };
    let best = (0..cells.len())
        .min_by(|&i, &j| {
            cells[j]
                .score
                .total_cmp(&cells[i].score)
                .then_with(|| lex(&cells[i].cell, &cells[j].cell))
        })
        .expect("grid has at least one cell");
    Ok(GridResult { cells, best })
}

/// Apply the training-related keys of `cell` (`learning_rate`, `batch_size`,
/// `epochs`, `l2`, `optimizer`) and return the keys it did not recognise.
pub fn apply_train_cell(config: &mut TrainConfig, cell: &GridCell) -> Result<Vec<String>> {
    let mut rest = Vec::new();
    for (k, v) in cell {
        let number = || v.as_f64().ok_or_else(|| Error::Config(format!("grid {k}: expected a number, got {v}")));
        let count = || {
            v.as_usize()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("grid {k}: expected a positive integer, got {v}")))
        };
        match k.as_str() {
            "learning_rate" => config.learning_rate = number()?,
            "l2" => config.l2 = number()?,
            "batch_size" => config.batch_size = count()?,
            "epochs" => config.epochs = count()?,
            "optimizer" => config.optimizer = v.to_string().parse()?,
            _ => rest.push(k.clone()),
        }
    }
    config.validate()?;
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(params: &[(&str, Vec<GridValue>)]) -> GridSpec {
        GridSpec {
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            metric: Metric::Accuracy,
        }
    }

    #[test]
    fn single_cell_grid() {
        let g = spec(&[("learning_rate", vec![GridValue::Number(0.1)])]);
        let r = grid_search(&g, |_| Ok(0.5)).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.best().cell["learning_rate"], GridValue::Number(0.1));
    }

    #[test]
    fn two_by_two_evaluates_four() {
        let g = spec(&[
            ("a", vec![GridValue::Number(1.0), GridValue::Number(2.0)]),
            ("b", vec![GridValue::Text("x".into()), GridValue::Text("y".into())]),
        ]);
        let r = grid_search(&g, |c| Ok(c["a"].as_f64().unwrap())).unwrap();
        assert_eq!(r.cells.len(), 4);
        // a=2 wins; both b values tie, so the lexically first is chosen
        assert_eq!(cell_label(&r.best().cell), "a=2,b=x");
    }

    #[test]
    fn ties_pick_smallest_values() {
        let g = spec(&[("l2", vec![GridValue::Number(0.1), GridValue::Number(0.01)])]);
        let r = grid_search(&g, |_| Ok(1.0)).unwrap();
        assert_eq!(r.best().cell["l2"], GridValue::Number(0.01));
    }

    #[test]
    fn empty_grids_are_rejected() {
        assert!(spec(&[]).cells().is_err());
        assert!(spec(&[("a", vec![])]).cells().is_err());
    }

    #[test]
    fn train_keys_apply() {
        let mut cfg = TrainConfig::default();
        let mut cell = GridCell::new();
        cell.insert("learning_rate".into(), GridValue::Number(0.5));
        cell.insert("optimizer".into(), GridValue::Text("sgd".into()));
        cell.insert("filters".into(), GridValue::Number(10.0));
        let rest = apply_train_cell(&mut cfg, &cell).unwrap();
        assert_eq!(rest, ["filters"]);
        assert_eq!(cfg.learning_rate, 0.5);
        assert_eq!(cfg.optimizer, Optimizer::Sgd);
        cell.insert("epochs".into(), GridValue::Number(1.5));
        assert!(apply_train_cell(&mut cfg, &cell).is_err());
    }

    #[test]
    fn history_tsv_layout() {
        let h = [
            EpochRecord {
                epoch: 1,
                loss: 0.5,
                valid_metric: None,
            },
            EpochRecord {
                epoch: 2,
                loss: 0.25,
                valid_metric: Some(1.0),
            },
        ];
        assert_eq!(history_to_tsv(&h), "epoch\tloss\tvalid_metric\n1\t0.5\t\n2\t0.25\t1\n");
    }
}
