use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{dataset_to_tsv, escape_field, load_dataset, split, Dataset};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{compare_reference, evaluate, load_report, load_reference, EvalReport, Metric};
use crate::models::{flat_tokens, load_checkpoint, Classifier, ModelConfig, ModelKind, Vocab};
use crate::train::{
    apply_train_cell, cell_label, evaluate_on, grid_search, history_to_tsv, predict_all, run_n, train, Example,
    GridCell, GridResult, TrainConfig,
};

use super::config::{apply_model_cell, check_file, require_file, ExperimentConfig};
use super::difficult::{align_predictions, load_difficult_report, load_predictions, predictions_to_tsv};
use super::pipeline::{Pipeline, Prepared};
use super::stats::{dataset_stats, stats_table};

pub const SNAPSHOT: &str = "config.resolved.toml";

/// Timestamped, line-oriented log kept in memory and written with the
/// other outputs.
#[derive(Debug, Default)]
pub struct RunLog {
    lines: Vec<String>,
    echo: bool,
}

impl RunLog {
    pub fn new(echo: bool) -> Self {
        RunLog {
            lines: Vec::new(),
            echo,
        }
    }

    pub fn info(&mut self, message: impl AsRef<str>) {
        let ts = chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ");
        let line = format!("{ts} {}", message.as_ref());
        if self.echo {
            eprintln!("{line}");
        }
        self.lines.push(line);
    }

    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

/// Output directory filled in a hidden sibling and moved into place only on
/// success, so a failed run leaves nothing behind.
#[derive(Debug)]
pub struct OutputDir {
    target: PathBuf,
    staging: tempfile::TempDir,
}

impl OutputDir {
    /// Refuses to replace an existing directory unless it is empty or holds
    /// a previous run (recognised by its config snapshot).
    pub fn create(target: &Path) -> Result<Self> {
        check_replaceable(target)?;
        let parent = target
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let staging = tempfile::Builder::new()
            .prefix(".sentipipe-staging-")
            .tempdir_in(parent)
            .map_err(|e| Error::io(parent, e))?;
        Ok(OutputDir {
            target: target.to_path_buf(),
            staging,
        })
    }

    pub fn write(&self, relative: &str, content: &str) -> Result<()> {
        let path = self.staging.path().join(relative);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, content).map_err(|e| Error::io(&path, e))
    }

    pub fn commit(self) -> Result<PathBuf> {
        check_replaceable(&self.target)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        let staged = self.staging.keep();
        if let Err(e) = fs::rename(&staged, &self.target) {
            let _ = fs::remove_dir_all(&staged);
            return Err(Error::io(&self.target, e));
        }
        Ok(self.target)
    }
}

fn check_replaceable(target: &Path) -> Result<()> {
    if !target.exists() {
        return Ok(());
    }
    let entries = fs::read_dir(target).map_err(|_| {
        Error::Invalid(format!("output path {} exists and is not a directory", target.display()))
    })?;
    if entries.count() == 0 || target.join(SNAPSHOT).is_file() {
        return Ok(());
    }
    Err(Error::Invalid(format!(
        "output directory {} exists and does not hold a previous run",
        target.display()
    )))
}

/// Where a subcommand put its results and what to show the user.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub out_dir: Option<PathBuf>,
    pub summary: String,
}

/// Everything a training or grid run needs, loaded and checked before any
/// output is written.
struct Setup {
    pipeline: Pipeline,
    train: Dataset,
    test: Dataset,
    table: Option<EmbeddingTable>,
    model: ModelConfig,
    train_cfg: TrainConfig,
    metric: Metric,
}

fn load_embeddings(cfg: &ExperimentConfig, family: ModelKind) -> Result<Option<EmbeddingTable>> {
    if family == ModelKind::MiniBert {
        return Ok(None);
    }
    let path = require_file(&cfg.data.embeddings, "data.embeddings")?;
    Ok(Some(EmbeddingTable::load(path)?))
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let train_path = require_file(&cfg.data.train, "data.train")?;
    let test_path = require_file(&cfg.data.test, "data.test")?;
    if cfg.model.family != ModelKind::MiniBert {
        require_file(&cfg.data.embeddings, "data.embeddings")?;
    }
    if let Some(c) = &cfg.compare {
        check_file(&c.reference, "compare.reference")?;
    }
    let pipeline = cfg.pipeline()?;
    let train_cfg = cfg.train_config()?;
    let train = load_dataset(train_path, cfg.data.task)?;
    let test = load_dataset(test_path, cfg.data.task)?;
    let table = load_embeddings(cfg, cfg.model.family)?;
    let model = cfg.model_config(table.as_ref().map_or(0, EmbeddingTable::dim))?;
    cfg.check_grid(&model)?;
    Ok(Setup {
        pipeline,
        train,
        test,
        table,
        model,
        train_cfg,
        metric: cfg.evaluate.metric,
    })
}

fn build_vocab(model: &ModelConfig, data: &[Prepared], mask: &str) -> Result<Option<Vocab>> {
    match model {
        ModelConfig::MiniBert(_) => Ok(Some(Vocab::build(data.iter().map(|p| flat_tokens(&p.input)), mask, 1)?)),
        _ => Ok(None),
    }
}

fn encode_all(clf: &Classifier, data: &[Prepared], table: Option<&EmbeddingTable>) -> Result<Vec<Example>> {
    data.iter()
        .map(|p| {
            Ok(Example {
                id: p.id.clone(),
                input: clf.encode(&p.input, table)?,
                label: p.label,
            })
        })
        .collect()
}

/// Settings chosen by a grid cell.
fn cell_settings(setup: &Setup, cell: &GridCell) -> Result<(ModelConfig, TrainConfig)> {
    let mut train_cfg = setup.train_cfg.clone();
    let rest = apply_train_cell(&mut train_cfg, cell)?;
    let model = apply_model_cell(&setup.model, cell, &rest)?;
    Ok((model, train_cfg))
}

fn run_grid_search(cfg: &ExperimentConfig, setup: &Setup, log: &mut RunLog) -> Result<Option<GridResult>> {
    let Some(grid) = &cfg.grid else { return Ok(None) };
    let (valid, fit) = split(&setup.train, cfg.data.valid_fraction, setup.train_cfg.seed)?;
    log.info(format!(
        "grid: {} cells, {} fit / {} validation samples, metric {}",
        grid.cells()?.len(),
        fit.len(),
        valid.len(),
        grid.metric
    ));
    let fit = setup.pipeline.prepare_dataset(&fit)?;
    let valid = setup.pipeline.prepare_dataset(&valid)?;
    let mask = &setup.pipeline.reformulator.mask_token;
    let table = setup.table.as_ref();
    let result = grid_search(grid, |cell| {
        let (model, train_cfg) = cell_settings(setup, cell)?;
        let vocab = build_vocab(&model, &fit, mask)?;
        let mut clf = Classifier::new(model, vocab, train_cfg.seed)?;
        let fit_ex = encode_all(&clf, &fit, table)?;
        let valid_ex = encode_all(&clf, &valid, table)?;
        train(&mut clf, &fit_ex, None, &train_cfg, grid.metric)?;
        Ok(evaluate_on(&clf, &valid_ex)?.metric(grid.metric))
    })?;
    for c in &result.cells {
        log.info(format!("grid cell {} {}={}", cell_label(&c.cell), grid.metric, c.score));
    }
    log.info(format!("grid best {}", cell_label(&result.best().cell)));
    Ok(Some(result))
}

fn header(cfg: &ExperimentConfig, log: &mut RunLog, command: &str) {
    log.info(format!("sentipipe {} {command}", env!("CARGO_PKG_VERSION")));
    log.info(format!("output {}", cfg.output.dir.display()));
}

/// Train `runs` models on the training file and evaluate each on the test
/// file, after an optional grid search on a held-out part of the training
/// file.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Outcome> {
    let setup = setup(cfg)?;
    let out = OutputDir::create(&cfg.output.dir)?;
    let mut log = RunLog::new(false);
    header(cfg, &mut log, "train");
    log.info(format!(
        "data {} train / {} test samples, task {:?}",
        setup.train.len(),
        setup.test.len(),
        cfg.data.task
    ));
    if let Some(t) = &setup.table {
        log.info(format!("embeddings {} tokens, dim {}", t.len(), t.dim()));
        for w in t.warnings() {
            log.info(format!("embeddings warning: {w}"));
        }
    }

    let mut model = setup.model.clone();
    let mut train_cfg = setup.train_cfg.clone();
    if let Some(grid) = run_grid_search(cfg, &setup, &mut log)? {
        out.write("grid.tsv", &grid.to_tsv(cfg.grid.as_ref().map(|g| g.metric).unwrap_or_default()))?;
        (model, train_cfg) = cell_settings(&setup, &grid.best().cell)?;
    }

    let train_data = setup.pipeline.prepare_dataset(&setup.train)?;
    let test_data = setup.pipeline.prepare_dataset(&setup.test)?;
    let vocab = build_vocab(&model, &train_data, &setup.pipeline.reformulator.mask_token)?;
    if let Some(v) = &vocab {
        log.info(format!("vocabulary {} tokens", v.len()));
    }
    let template = Classifier::new(model.clone(), vocab.clone(), train_cfg.seed)?;
    let table = setup.table.as_ref();
    let train_ex = encode_all(&template, &train_data, table)?;
    let test_ex = encode_all(&template, &test_data, table)?;
    log.info(format!(
        "model {} with {} parameters; {:?} lr {} batch {} epochs {} l2 {}",
        model.kind(),
        template.params().size(),
        train_cfg.optimizer,
        train_cfg.learning_rate,
        train_cfg.batch_size,
        train_cfg.epochs,
        train_cfg.l2
    ));
    drop(template);

    let result = run_n(
        |seed| Classifier::new(model.clone(), vocab.clone(), seed),
        &train_ex,
        &test_ex,
        &train_cfg,
        setup.metric,
    )?;

    let ids: Vec<&str> = test_ex.iter().map(|e| e.id.as_str()).collect();
    for (i, run) in result.runs.iter().enumerate() {
        let dir = format!("run_{}", i + 1);
        let last = run.history.last().map_or(f64::NAN, |h| h.loss);
        log.info(format!(
            "run {} seed {} final loss {} {}={}",
            i + 1,
            run.seed,
            last,
            setup.metric,
            run.report.metric(setup.metric)
        ));
        out.write(&format!("{dir}/metrics.tsv"), &run.report.to_tsv())?;
        out.write(&format!("{dir}/predictions.tsv"), &predictions_to_tsv(&ids, &run.predictions))?;
        out.write(&format!("{dir}/loss_history.tsv"), &history_to_tsv(&run.history))?;
    }
    out.write("mean_metrics.tsv", &result.mean.to_tsv())?;
    out.write("checkpoint.json", &result.runs[0].classifier.to_checkpoint_json()?)?;

    let mut summary = format!(
        "{} on {}: mean of {} runs (seeds {}..={})\n",
        model.kind(),
        cfg.dataset_name(),
        result.runs.len(),
        result.runs[0].seed,
        result.runs.last().unwrap().seed
    );
    summary.push_str(&result.mean.to_text());
    for (i, run) in result.runs.iter().enumerate() {
        writeln!(
            summary,
            "run {} (seed {}): {} {:.2}",
            i + 1,
            run.seed,
            setup.metric,
            100.0 * run.report.metric(setup.metric)
        )
        .unwrap();
    }
    if let Some(text) = comparison_text(cfg, &result.mean)? {
        out.write("comparison.txt", &text)?;
        summary.push('\n');
        summary.push_str(&text);
    }
    out.write("report.txt", &summary)?;
    out.write(SNAPSHOT, &cfg.resolved(Some(&model))?.to_toml()?)?;
    log.info(format!("mean {}={}", setup.metric, result.mean.metric(setup.metric)));
    log.info("done");
    out.write("run.log", &log.text())?;
    Ok(Outcome {
        out_dir: Some(out.commit()?),
        summary,
    })
}

/// Load, then [`run_train`].
pub fn run_experiment(config: &Path) -> Result<Outcome> {
    run_train(&ExperimentConfig::load(config)?)
}

fn comparison_text(cfg: &ExperimentConfig, report: &EvalReport) -> Result<Option<String>> {
    let Some(c) = &cfg.compare else { return Ok(None) };
    let reference = load_reference(&c.reference)?;
    Ok(Some(compare_reference(report, &cfg.dataset_name(), &reference).to_text()))
}

/// Grid search only; writes the scores and a config with the best cell
/// applied.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.grid.is_none() {
        return Err(Error::Config("no [grid] section".into()));
    }
    let setup = setup(cfg)?;
    let out = OutputDir::create(&cfg.output.dir)?;
    let mut log = RunLog::new(false);
    header(cfg, &mut log, "grid");
    let grid = run_grid_search(cfg, &setup, &mut log)?.expect("grid present");
    let metric = cfg.grid.as_ref().unwrap().metric;
    let tsv = grid.to_tsv(metric);
    out.write("grid.tsv", &tsv)?;
    let (model, train_cfg) = cell_settings(&setup, &grid.best().cell)?;
    let mut best = cfg.clone();
    best.grid = None;
    best.train.learning_rate = Some(train_cfg.learning_rate);
    best.train.l2 = Some(train_cfg.l2);
    best.train.batch_size = Some(train_cfg.batch_size);
    best.train.epochs = Some(train_cfg.epochs);
    best.train.optimizer = Some(train_cfg.optimizer);
    out.write("best_config.toml", &best.resolved(Some(&model))?.to_toml()?)?;
    out.write(SNAPSHOT, &cfg.resolved(Some(&setup.model))?.to_toml()?)?;
    log.info("done");
    out.write("run.log", &log.text())?;
    Ok(Outcome {
        out_dir: Some(out.commit()?),
        summary: tsv,
    })
}

/// Score a prediction file, or a checkpoint's predictions, on the test file.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let test_path = require_file(&cfg.data.test, "data.test")?;
    if let Some(c) = &cfg.compare {
        check_file(&c.reference, "compare.reference")?;
    }
    let test = load_dataset(test_path, cfg.data.task)?;
    let ids: Vec<&str> = test.samples().iter().map(|s| s.id.as_str()).collect();
    let mut log = RunLog::new(false);
    header(cfg, &mut log, "evaluate");
    let (predictions, model) = match (&cfg.evaluate.predictions, &cfg.evaluate.checkpoint) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("set only one of evaluate.predictions and evaluate.checkpoint".into()))
        }
        (Some(path), None) => {
            check_file(path, "evaluate.predictions")?;
            let preds = load_predictions(path)?;
            log.info(format!("predictions {}", path.display()));
            (align_predictions(&ids, &preds, &path.display().to_string())?, None)
        }
        (None, Some(path)) => {
            check_file(path, "evaluate.checkpoint")?;
            let clf = load_checkpoint(path)?;
            let table = load_embeddings(cfg, clf.kind())?;
            if let (Some(t), Some(spec_dim)) = (&table, checkpoint_dim(clf.config())) {
                if t.dim() != spec_dim {
                    return Err(Error::Config(format!(
                        "checkpoint expects {spec_dim}-dimensional embeddings, file has {}",
                        t.dim()
                    )));
                }
            }
            let pipeline = cfg.pipeline()?;
            let data = pipeline.prepare_dataset(&test)?;
            let examples = encode_all(&clf, &data, table.as_ref())?;
            log.info(format!("checkpoint {} ({})", path.display(), clf.kind()));
            (predict_all(&clf, &examples)?, Some(clf.config().clone()))
        }
        (None, None) => {
            return Err(Error::Config("evaluate needs evaluate.predictions or evaluate.checkpoint".into()))
        }
    };
    let out = OutputDir::create(&cfg.output.dir)?;
    let report = evaluate(&test.labels(), &predictions)?;
    out.write("metrics.tsv", &report.to_tsv())?;
    out.write("predictions.tsv", &predictions_to_tsv(&ids, &predictions))?;
    let mut summary = format!("{} samples of {}\n", test.len(), cfg.dataset_name());
    summary.push_str(&report.to_text());
    if let Some(text) = comparison_text(cfg, &report)? {
        out.write("comparison.txt", &text)?;
        summary.push('\n');
        summary.push_str(&text);
    }
    out.write("report.txt", &summary)?;
    out.write(SNAPSHOT, &cfg.resolved(model.as_ref())?.to_toml()?)?;
    log.info("done");
    out.write("run.log", &log.text())?;
    Ok(Outcome {
        out_dir: Some(out.commit()?),
        summary,
    })
}

fn checkpoint_dim(cfg: &ModelConfig) -> Option<usize> {
    match cfg {
        ModelConfig::Linear(c) => Some(c.dim),
        ModelConfig::Cnn(c) => Some(c.dim),
        ModelConfig::Lstm(c) | ModelConfig::BiLstm(c) => Some(c.dim),
        ModelConfig::MiniBert(_) => None,
    }
}

fn data_files(cfg: &ExperimentConfig) -> Result<Vec<&Path>> {
    let files: Vec<&Path> = [&cfg.data.train, &cfg.data.test]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    if files.is_empty() {
        return Err(Error::Config("set data.train and/or data.test".into()));
    }
    for f in &files {
        check_file(f, "data")?;
    }
    Ok(files)
}

fn output_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data.tsv".into())
}

fn distinct_names(files: &[&Path]) -> Result<()> {
    if files.len() == 2 && output_name(files[0]) == output_name(files[1]) {
        return Err(Error::Config("data.train and data.test share a file name".into()));
    }
    Ok(())
}

/// Write normalized copies of the data files. Entity mentions of targeted
/// samples are left as they are.
pub fn run_normalize(cfg: &ExperimentConfig) -> Result<Outcome> {
    let files = data_files(cfg)?;
    distinct_names(&files)?;
    let pipeline = cfg.pipeline()?;
    let mut outputs = Vec::new();
    for f in &files {
        let ds = load_dataset(f, cfg.data.task)?;
        outputs.push((output_name(f), pipeline.normalize_dataset(&ds)?));
    }
    let out = OutputDir::create(&cfg.output.dir)?;
    let mut log = RunLog::new(false);
    header(cfg, &mut log, "normalize");
    let mut summary = String::new();
    for (name, ds) in &outputs {
        out.write(name, &dataset_to_tsv(ds))?;
        writeln!(summary, "{name}: {} samples normalized", ds.len()).unwrap();
        log.info(format!("{name}: {} samples", ds.len()));
    }
    out.write(SNAPSHOT, &cfg.resolved(None)?.to_toml()?)?;
    out.write("run.log", &log.text())?;
    Ok(Outcome {
        out_dir: Some(out.commit()?),
        summary,
    })
}

pub const REFORMULATED_HEADER: &str = "id\tsentence_a\tsentence_b\tlabel";

pub fn reformulated_to_tsv(data: &[Prepared]) -> String {
    let mut out = format!("{REFORMULATED_HEADER}\n");
    for p in data {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.id,
            escape_field(&p.input.sentence_a),
            escape_field(p.input.sentence_b.as_deref().unwrap_or("")),
            p.label
        )
        .unwrap();
    }
    out
}

/// Write the model inputs (normalized and reformulated) of the data files.
pub fn run_reformulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let files = data_files(cfg)?;
    distinct_names(&files)?;
    let pipeline = cfg.pipeline()?;
    let mut outputs = Vec::new();
    for f in &files {
        let ds = load_dataset(f, cfg.data.task)?;
        outputs.push((output_name(f), pipeline.prepare_dataset(&ds)?));
    }
    let out = OutputDir::create(&cfg.output.dir)?;
    let mut log = RunLog::new(false);
    header(cfg, &mut log, "reformulate");
    let mut summary = String::new();
    for (name, data) in &outputs {
        out.write(name, &reformulated_to_tsv(data))?;
        writeln!(summary, "{name}: {} inputs ({} scheme)", data.len(), cfg.reformulate.scheme).unwrap();
        log.info(format!("{name}: {} inputs", data.len()));
    }
    out.write(SNAPSHOT, &cfg.resolved(None)?.to_toml()?)?;
    out.write("run.log", &log.text())?;
    Ok(Outcome {
        out_dir: Some(out.commit()?),
        summary,
    })
}

/// Sizes and class shares of the data files; nothing is written.
pub fn run_stats(cfg: &ExperimentConfig) -> Result<Outcome> {
    data_files(cfg)?;
    let load = |p: &Option<PathBuf>| p.as_deref().map(|p| dataset_stats(p, cfg.data.task)).transpose();
    let train = load(&cfg.data.train)?;
    let test = load(&cfg.data.test)?;
    Ok(Outcome {
        out_dir: None,
        summary: stats_table(&cfg.dataset_name(), train.as_ref(), test.as_ref()),
    })
}

pub fn run_difficult(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg
        .difficult
        .as_ref()
        .ok_or_else(|| Error::Config("no [difficult] section".into()))?;
    check_file(&d.set, "difficult.set")?;
    for m in &d.models {
        check_file(&m.predictions, &format!("difficult.models {}", m.name))?;
    }
    let report = load_difficult_report(&d.set, &d.models)?;
    let out = OutputDir::create(&cfg.output.dir)?;
    let text = report.to_text();
    out.write("difficult.txt", &text)?;
    out.write("difficult.tsv", &report.to_tsv())?;
    out.write(SNAPSHOT, &cfg.resolved(None)?.to_toml()?)?;
    Ok(Outcome {
        out_dir: Some(out.commit()?),
        summary: text,
    })
}

/// Put a machine report next to published scores.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = cfg
        .compare
        .as_ref()
        .ok_or_else(|| Error::Config("no [compare] section".into()))?;
    let report_path = require_file(&c.report, "compare.report")?;
    check_file(&c.reference, "compare.reference")?;
    let report = load_report(report_path)?;
    let text = comparison_text(cfg, &report)?.expect("compare section present");
    let out = OutputDir::create(&cfg.output.dir)?;
    out.write("comparison.txt", &text)?;
    out.write(SNAPSHOT, &cfg.resolved(None)?.to_toml()?)?;
    Ok(Outcome {
        out_dir: Some(out.commit()?),
        summary: text,
    })
}

