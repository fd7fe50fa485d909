//! Experiment configuration, read from TOML.
//!
//! Every section is optional in the file. Relative paths are resolved
//! against the directory of the config file. [`ExperimentConfig::resolved`]
//! fills in every default so that the snapshot written next to the outputs
//! reproduces the run on its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{read_to_string, Error, Result};
use crate::metrics::Metric;
use crate::models::{ModelConfig, ModelKind};
use crate::reformulate::{PromptTable, Reformulator, Scheme, DEFAULT_MASK};
use crate::textnorm::{
    load_stopwords, DictionaryLemmatizer, EmoticonMap, IdentityLemmatizer, Lemmatizer, NormConfig, NormStep,
};
use crate::train::{GridSpec, GridValue, Optimizer, TrainConfig};

use super::pipeline::Pipeline;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub norm: NormSection,
    #[serde(default)]
    pub reformulate: ReformulateSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficult: Option<DifficultSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default = "default_task")]
    pub task: TaskKind,
    /// Word vectors in text format; needed by every family but the transformer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Share of the training file held out for grid search.
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    /// Dataset key used against reference scores. Defaults to the test file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            test: None,
            task: default_task(),
            embeddings: None,
            valid_fraction: default_valid_fraction(),
            name: None,
        }
    }
}

fn default_task() -> TaskKind {
    TaskKind::General
}

fn default_valid_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSection {
    /// Enabled steps; they always run in the fixed pipeline order.
    #[serde(default = "default_steps")]
    pub steps: Vec<NormStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emoticons: Option<PathBuf>,
    /// Required when `lemma_stop` is among the steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    /// `word<TAB>lemma` table; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemmas: Option<PathBuf>,
}

impl Default for NormSection {
    fn default() -> Self {
        NormSection {
            steps: default_steps(),
            emoticons: None,
            stopwords: None,
            lemmas: None,
        }
    }
}

fn default_steps() -> Vec<NormStep> {
    NormConfig::standard().steps().to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReformulateSection {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_mask")]
    pub mask_token: String,
    /// `scheme<TAB>auxiliary sentence` overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
}

impl Default for ReformulateSection {
    fn default() -> Self {
        ReformulateSection {
            scheme: default_scheme(),
            mask_token: default_mask(),
            prompts: None,
        }
    }
}

fn default_scheme() -> Scheme {
    Scheme::Single
}

fn default_mask() -> String {
    DEFAULT_MASK.to_string()
}

/// Model family plus any keys of that family's configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_family")]
    pub family: ModelKind,
    #[serde(flatten)]
    pub settings: toml::Table,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: default_family(),
            settings: toml::Table::new(),
        }
    }
}

fn default_family() -> ModelKind {
    ModelKind::Linear
}

/// Training overrides. Unset keys take the family default: the fine-tuning
/// values for the transformer, the classic values otherwise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Optimizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Metric tracked on validation data and maximized by grid search.
    #[serde(default)]
    pub metric: Metric,
    /// Checkpoint to score on the test file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// `id<TAB>label` predictions to score on the test file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultSection {
    pub set: PathBuf,
    #[serde(default)]
    pub models: Vec<ModelPredictions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPredictions {
    pub name: String,
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// `dataset<TAB>metric<TAB>value` published scores.
    pub reference: PathBuf,
    /// Dataset key in the reference file; defaults to the data name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Machine report to compare (for the `compare` subcommand).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

/// Join onto `base` and drop `.` and `..` components without touching the
/// file system.
fn absolutize(base: &Path, path: &mut PathBuf) {
    use std::path::Component;
    let joined = base.join(&*path);
    let mut out = PathBuf::new();
    for part in joined.components() {
        match part {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push(part);
                }
            }
            other => out.push(other),
        }
    }
    *path = out;
}

fn absolutize_opt(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path {
        absolutize(base, p);
    }
}

/// Fail with an input error unless `path` is set and names a file.
pub fn require_file<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let path = path
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is not set")))?;
    check_file(path, key)?;
    Ok(path)
}

pub fn check_file(path: &Path, key: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{key}: no such file {}", path.display())))
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl ExperimentConfig {
    /// Parse TOML; relative paths are taken relative to `base`.
    pub fn from_toml_str(content: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(content).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.absolutize(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let base = std::path::absolute(&base).map_err(|e| Error::io(&base, e))?;
        Self::from_toml_str(&content, &base, path)
    }

    fn absolutize(&mut self, base: &Path) {
        absolutize_opt(base, &mut self.data.train);
        absolutize_opt(base, &mut self.data.test);
        absolutize_opt(base, &mut self.data.embeddings);
        absolutize_opt(base, &mut self.norm.emoticons);
        absolutize_opt(base, &mut self.norm.stopwords);
        absolutize_opt(base, &mut self.norm.lemmas);
        absolutize_opt(base, &mut self.reformulate.prompts);
        absolutize_opt(base, &mut self.evaluate.checkpoint);
        absolutize_opt(base, &mut self.evaluate.predictions);
        absolutize(base, &mut self.output.dir);
        if let Some(d) = &mut self.difficult {
            absolutize(base, &mut d.set);
            for m in &mut d.models {
                absolutize(base, &mut m.predictions);
            }
        }
        if let Some(c) = &mut self.compare {
            absolutize(base, &mut c.reference);
            absolutize_opt(base, &mut c.report);
        }
    }

    /// Override the output directory (taken as given, not config-relative).
    pub fn set_output_dir(&mut self, dir: &Path) -> Result<()> {
        let cwd = std::env::current_dir().map_err(|e| Error::io(dir, e))?;
        let mut dir = dir.to_path_buf();
        absolutize(&cwd, &mut dir);
        self.output.dir = dir;
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = Some(seed);
    }

    /// Key under which reference scores are looked up.
    pub fn dataset_name(&self) -> String {
        if let Some(name) = self.compare.as_ref().and_then(|c| c.dataset.clone()) {
            return name;
        }
        if let Some(name) = &self.data.name {
            return name.clone();
        }
        self.data
            .test
            .as_deref()
            .or(self.data.train.as_deref())
            .map(file_stem)
            .unwrap_or_default()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let base = if self.model.family == ModelKind::MiniBert {
            TrainConfig::transformer()
        } else {
            TrainConfig::default()
        };
        let t = &self.train;
        let cfg = TrainConfig {
            optimizer: t.optimizer.unwrap_or(base.optimizer),
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            epochs: t.epochs.unwrap_or(base.epochs),
            seed: t.seed.unwrap_or(base.seed),
            runs: t.runs.unwrap_or(base.runs),
            l2: t.l2.unwrap_or(base.l2),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Family defaults for `dim`-wide embeddings, overridden by the
    /// `[model]` keys.
    pub fn model_config(&self, dim: usize) -> Result<ModelConfig> {
        let base = ModelConfig::default_for(self.model.family, dim);
        let cfg = override_model(&base, self.model.settings.iter().map(|(k, v)| (k.as_str(), v.clone())))?;
        if let Some(want) = model_dim(&cfg) {
            if want != dim {
                return Err(Error::Config(format!(
                    "model.dim = {want} but the embeddings have dimension {dim}"
                )));
            }
        }
        Ok(cfg)
    }

    pub fn norm_config(&self) -> Result<NormConfig> {
        let n = &self.norm;
        let lemma_stop = n.steps.contains(&NormStep::LemmaStop);
        let mut cfg = NormConfig::new(n.steps.iter().copied().filter(|&s| s != NormStep::LemmaStop))?;
        if let Some(path) = &n.emoticons {
            cfg = cfg.with_emoticons(EmoticonMap::load(path)?);
        }
        if lemma_stop {
            let stopwords = n
                .stopwords
                .as_deref()
                .ok_or_else(|| Error::Config("norm step lemma_stop needs norm.stopwords".into()))?;
            let lemmatizer: Arc<dyn Lemmatizer> = match &n.lemmas {
                Some(path) => Arc::new(DictionaryLemmatizer::load(path)?),
                None => Arc::new(IdentityLemmatizer),
            };
            cfg = cfg.with_lemma_stop(load_stopwords(stopwords)?, lemmatizer);
        } else if n.stopwords.is_some() || n.lemmas.is_some() {
            return Err(Error::Config(
                "norm.stopwords and norm.lemmas need the lemma_stop step".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn reformulator(&self) -> Result<Reformulator> {
        let r = &self.reformulate;
        if r.mask_token.trim().is_empty() || r.mask_token.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!("mask token {:?} must be one non-empty word", r.mask_token)));
        }
        let mut out = Reformulator::new(r.scheme).with_mask_token(r.mask_token.clone());
        if let Some(path) = &r.prompts {
            out = out.with_prompts(PromptTable::load(path)?);
        }
        Ok(out)
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline::new(self.data.task, self.norm_config()?, self.reformulator()?))
    }

    /// Check that every grid key is a training key or a key of the model
    /// configuration, and that each candidate applies cleanly.
    pub fn check_grid(&self, model: &ModelConfig) -> Result<()> {
        let Some(grid) = &self.grid else { return Ok(()) };
        if !(self.data.valid_fraction > 0.0 && self.data.valid_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.valid_fraction {} not in (0, 1)",
                self.data.valid_fraction
            )));
        }
        let mut train = self.train_config()?;
        for cell in grid.cells()? {
            let rest = crate::train::apply_train_cell(&mut train, &cell)?;
            apply_model_cell(model, &cell, &rest)?;
        }
        Ok(())
    }

    /// A copy with every default written out. `model` is the configuration
    /// actually used (absent when no model is involved).
    pub fn resolved(&self, model: Option<&ModelConfig>) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        if out.data.name.is_none() {
            let name = self.dataset_name();
            if !name.is_empty() {
                out.data.name = Some(name);
            }
        }
        let t = self.train_config()?;
        out.train = TrainSection {
            optimizer: Some(t.optimizer),
            learning_rate: Some(t.learning_rate),
            batch_size: Some(t.batch_size),
            epochs: Some(t.epochs),
            seed: Some(t.seed),
            runs: Some(t.runs),
            l2: Some(t.l2),
        };
        if let Some(model) = model {
            let mut table = model_table(model)?;
            table.remove("family");
            out.model = ModelSection {
                family: model.kind(),
                settings: table,
            };
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

fn model_dim(cfg: &ModelConfig) -> Option<usize> {
    match cfg {
        ModelConfig::Linear(c) => Some(c.dim),
        ModelConfig::Cnn(c) => Some(c.dim),
        ModelConfig::Lstm(c) | ModelConfig::BiLstm(c) => Some(c.dim),
        ModelConfig::MiniBert(_) => None,
    }
}

fn model_table(cfg: &ModelConfig) -> Result<toml::Table> {
    toml::Table::try_from(cfg).map_err(|e| Error::Config(format!("model config: {e}")))
}

/// Replace keys of `base`. Unknown keys are an error; integers are accepted
/// where a real is expected and integral reals where an integer is.
pub fn override_model<'a>(
    base: &ModelConfig,
    overrides: impl IntoIterator<Item = (&'a str, toml::Value)>,
) -> Result<ModelConfig> {
    let mut table = model_table(base)?;
    let family = base.kind();
    for (key, value) in overrides {
        if key == "family" {
            return Err(Error::Config("model family cannot be overridden here".into()));
        }
        let slot = table.get_mut(key).ok_or_else(|| {
            let known: Vec<&str> = model_keys(base);
            Error::Config(format!("unknown {family} setting `{key}` (known: {})", known.join(", ")))
        })?;
        *slot = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::Integer(_), toml::Value::Float(f)) if f.fract() == 0.0 && f.abs() < 9e15 => {
                toml::Value::Integer(f as i64)
            }
            (_, v) => v,
        };
    }
    let cfg: ModelConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("{family} settings: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn model_keys(cfg: &ModelConfig) -> Vec<&'static str> {
    match cfg {
        ModelConfig::Linear(_) => vec!["dim"],
        ModelConfig::Cnn(_) => vec!["seq_len", "dim", "windows", "filters", "dropout", "hidden"],
        ModelConfig::Lstm(_) | ModelConfig::BiLstm(_) => {
            vec!["seq_len", "dim", "units", "fc", "dropout", "readout"]
        }
        ModelConfig::MiniBert(_) => vec!["layers", "hidden", "heads", "ffn_mult", "max_len", "dropout"],
    }
}

/// Apply the `keys` of a grid cell to a model configuration.
pub fn apply_model_cell(
    model: &ModelConfig,
    cell: &BTreeMap<String, GridValue>,
    keys: &[String],
) -> Result<ModelConfig> {
    let overrides = keys.iter().map(|k| {
        let value = match &cell[k] {
            GridValue::Number(v) => toml::Value::Float(*v),
            GridValue::Text(s) => toml::Value::String(s.clone()),
        };
        (k.as_str(), value)
    });
    override_model(model, overrides).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("grid: {m}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(s, Path::new("/base"), Path::new("x.toml")).unwrap()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("");
        assert_eq!(c.data.task, TaskKind::General);
        assert_eq!(c.model.family, ModelKind::Linear);
        assert_eq!(c.output.dir, PathBuf::from("/base/out"));
        let c = parse("[data]\ntrain = \"../d/./t.tsv\"\n");
        assert_eq!(c.data.train, Some(PathBuf::from("/d/t.tsv")));
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
    }

    #[test]
    fn transformer_takes_fine_tuning_defaults() {
        let c = parse("[model]\nfamily = \"minibert\"\n[train]\nepochs = 2\n");
        let t = c.train_config().unwrap();
        assert_eq!(t.learning_rate, 2e-5);
        assert_eq!(t.batch_size, 12);
        assert_eq!(t.epochs, 2);
    }

    #[test]
    fn model_overrides_are_checked() {
        let c = parse("[model]\nfamily = \"cnn\"\nfilters = 7\ndropout = 0\nwindows = [2, 3]\n");
        let ModelConfig::Cnn(m) = c.model_config(4).unwrap() else { panic!() };
        assert_eq!((m.filters, m.dropout, m.windows), (7, 0.0, vec![2, 3]));
        let c = parse("[model]\nfamily = \"cnn\"\nfilterz = 7\n");
        assert!(matches!(c.model_config(4), Err(Error::Config(_))));
        let c = parse("[model]\nfamily = \"lstm\"\ndim = 5\n");
        assert!(c.model_config(4).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let r = ExperimentConfig::from_toml_str("[train]\nepoch = 3\n", Path::new("/"), Path::new("x"));
        assert!(matches!(r, Err(Error::Config(_))));
        let r = ExperimentConfig::from_toml_str("[bogus]\n", Path::new("/"), Path::new("x"));
        assert!(r.is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let c = parse(
            "[data]\ntrain = \"a/train.tsv\"\ntest = \"b/test.tsv\"\n[model]\nfamily = \"lstm\"\n\
             [grid.params]\nlearning_rate = [0.1, 0.01]\nunits = [4, 8]\n",
        );
        let model = c.model_config(4).unwrap();
        c.check_grid(&model).unwrap();
        let full = c.resolved(Some(&model)).unwrap();
        assert_eq!(full.data.name.as_deref(), Some("test"));
        assert_eq!(full.train.runs, Some(5));
        let text = full.to_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, Path::new("/elsewhere"), Path::new("x")).unwrap();
        assert_eq!(back, full);
        assert_eq!(back.model_config(4).unwrap(), model);
        assert_eq!(back.resolved(Some(&model)).unwrap(), full);
    }

    #[test]
    fn grid_keys_must_exist() {
        let c = parse("[grid.params]\nmomentum = [0.9]\n");
        let model = c.model_config(4).unwrap();
        assert!(c.check_grid(&model).is_err());
        let c = parse("[grid.params]\nl2 = [0.1, 0.01]\n");
        assert!(c.check_grid(&model).is_ok());
    }

    #[test]
    fn lemma_stop_needs_stopwords() {
        let c = parse("[norm]\nsteps = [\"lowercase\", \"lemma_stop\"]\n");
        assert!(matches!(c.norm_config(), Err(Error::Config(_))));
    }
}
