//! The five classifier families and their shared interface.
//!
//! A [`Classifier`] owns a configuration, a [`ParamSet`] and (for the
//! transformer) a [`Vocab`]. Every family is written as a forward pass over a
//! [`Graph`], so the same code serves inference, training and gradient
//! checking.

mod checkpoint;
mod cnn;
pub mod encode;
mod linear;
mod lstm;
mod minibert;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encode::{encode_pair, encode_tokens, flat_tokens, PairEncoding, SequenceSpec, Vocab};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::numerics::{argmax, softmax, Graph, NodeId, ParamId, ParamSet, Tensor};
use crate::reformulate::ReformulatedInput;

/// Number of output classes.
pub const CLASSES: usize = Label::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Cnn,
    Lstm,
    #[serde(rename = "bilstm")]
    BiLstm,
    #[serde(rename = "minibert")]
    MiniBert,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Linear,
        ModelKind::Cnn,
        ModelKind::Lstm,
        ModelKind::BiLstm,
        ModelKind::MiniBert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
            ModelKind::BiLstm => "bilstm",
            ModelKind::MiniBert => "minibert",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub seq_len: usize,
    pub dim: usize,
    pub windows: Vec<usize>,
    pub filters: usize,
    pub dropout: f64,
    /// Width of an optional dense layer before the output; 0 disables it.
    pub hidden: usize,
}

impl CnnConfig {
    pub fn new(dim: usize) -> Self {
        CnnConfig {
            seq_len: 50,
            dim,
            windows: vec![2, 3, 4, 5],
            filters: 100,
            dropout: 0.5,
            hidden: 0,
        }
    }
}

/// Which recurrent state feeds the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Cell,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub seq_len: usize,
    pub dim: usize,
    /// State size per direction; 0 means "same as `dim`".
    pub units: usize,
    pub fc: usize,
    pub dropout: f64,
    pub readout: Readout,
}

impl LstmConfig {
    pub fn new(dim: usize) -> Self {
        LstmConfig {
            seq_len: 50,
            dim,
            units: dim,
            fc: 40,
            dropout: 0.5,
            readout: Readout::Cell,
        }
    }

    pub fn units(&self) -> usize {
        if self.units == 0 {
            self.dim
        } else {
            self.units
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniBertConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for MiniBertConfig {
    fn default() -> Self {
        MiniBertConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn_mult: 4,
            max_len: 64,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Linear(LinearConfig),
    Cnn(CnnConfig),
    Lstm(LstmConfig),
    #[serde(rename = "bilstm")]
    BiLstm(LstmConfig),
    #[serde(rename = "minibert")]
    MiniBert(MiniBertConfig),
}

impl ModelConfig {
    /// Default configuration of `kind` for `dim`-wide embeddings.
    pub fn default_for(kind: ModelKind, dim: usize) -> Self {
        match kind {
            ModelKind::Linear => ModelConfig::Linear(LinearConfig { dim }),
            ModelKind::Cnn => ModelConfig::Cnn(CnnConfig::new(dim)),
            ModelKind::Lstm => ModelConfig::Lstm(LstmConfig::new(dim)),
            ModelKind::BiLstm => ModelConfig::BiLstm(LstmConfig::new(dim)),
            ModelKind::MiniBert => ModelConfig::MiniBert(MiniBertConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Linear(_) => ModelKind::Linear,
            ModelConfig::Cnn(_) => ModelKind::Cnn,
            ModelConfig::Lstm(_) => ModelKind::Lstm,
            ModelConfig::BiLstm(_) => ModelKind::BiLstm,
            ModelConfig::MiniBert(_) => ModelKind::MiniBert,
        }
    }

    /// Token matrix shape for the CNN and recurrent families.
    pub fn sequence_spec(&self) -> Option<SequenceSpec> {
        match self {
            ModelConfig::Cnn(c) => Some(SequenceSpec { s: c.seq_len, d: c.dim }),
            ModelConfig::Lstm(c) | ModelConfig::BiLstm(c) => Some(SequenceSpec { s: c.seq_len, d: c.dim }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let check_p = |p: f64| (0.0..1.0).contains(&p);
        match self {
            ModelConfig::Linear(c) => {
                if c.dim == 0 {
                    return bad("linear: dim must be positive".into());
                }
            }
            ModelConfig::Cnn(c) => {
                if c.dim == 0 || c.seq_len == 0 || c.filters == 0 || c.windows.is_empty() {
                    return bad("cnn: dim, seq_len, filters and windows must be non-empty".into());
                }
                let mut sorted = c.windows.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != c.windows.len() || sorted[0] == 0 || *sorted.last().unwrap() > c.seq_len {
                    return bad(format!(
                        "cnn: windows must be distinct and within 1..={}, got {:?}",
                        c.seq_len, c.windows
                    ));
                }
                if !check_p(c.dropout) {
                    return bad(format!("cnn: dropout {} outside [0, 1)", c.dropout));
                }
            }
            ModelConfig::Lstm(c) | ModelConfig::BiLstm(c) => {
                if c.dim == 0 || c.seq_len == 0 || c.fc == 0 {
                    return bad("lstm: dim, seq_len and fc must be positive".into());
                }
                if !check_p(c.dropout) {
                    return bad(format!("lstm: dropout {} outside [0, 1)", c.dropout));
                }
            }
            ModelConfig::MiniBert(c) => {
                if c.layers == 0 || c.hidden == 0 || c.heads == 0 || c.ffn_mult == 0 || c.max_len < 3 {
                    return bad("minibert: layers, hidden, heads, ffn_mult must be positive and max_len >= 3".into());
                }
                if c.hidden % c.heads != 0 {
                    return bad(format!("minibert: hidden {} not divisible by {} heads", c.hidden, c.heads));
                }
                if !check_p(c.dropout) {
                    return bad(format!("minibert: dropout {} outside [0, 1)", c.dropout));
                }
            }
        }
        Ok(())
    }
}

/// A model input after encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    /// `1 × d` mean of token vectors (linear baseline).
    Averaged(Tensor),
    /// `s × d` token matrix whose first `len` rows are real tokens.
    Sequence { matrix: Tensor, len: usize },
    /// Token, segment and mask vectors (transformer).
    Pair(PairEncoding),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Training,
    Evaluation,
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Pass {
    /// Representation fed to the classification head (before dropout).
    pub features: NodeId,
    /// `1 × K` unnormalized scores.
    pub logits: NodeId,
    /// Attention weights per layer and head (transformer only).
    pub attention: Vec<Vec<NodeId>>,
}

impl Pass {
    fn new(features: NodeId, logits: NodeId) -> Self {
        Pass {
            features,
            logits,
            attention: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
enum Net {
    Linear(linear::Linear),
    Cnn(cnn::Cnn),
    Lstm(lstm::Lstm),
    MiniBert(minibert::MiniBert),
}

#[derive(Debug, Clone)]
pub struct Classifier {
    config: ModelConfig,
    params: ParamSet,
    vocab: Option<Vocab>,
    net: Net,
    mode: Mode,
}

impl Classifier {
    /// Fresh classifier with parameters drawn from `seed`. The transformer
    /// needs a vocabulary; the other families ignore it.
    pub fn new(config: ModelConfig, vocab: Option<Vocab>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (net, vocab) = match &config {
            ModelConfig::Linear(c) => (Net::Linear(linear::Linear::init(c, &mut params, &mut rng)), None),
            ModelConfig::Cnn(c) => (Net::Cnn(cnn::Cnn::init(c, &mut params, &mut rng)), None),
            ModelConfig::Lstm(c) => (Net::Lstm(lstm::Lstm::init(c, false, &mut params, &mut rng)), None),
            ModelConfig::BiLstm(c) => (Net::Lstm(lstm::Lstm::init(c, true, &mut params, &mut rng)), None),
            ModelConfig::MiniBert(c) => {
                let vocab = vocab.ok_or_else(|| Error::Config("minibert needs a vocabulary".into()))?;
                let net = minibert::MiniBert::init(c, vocab.len(), &mut params, &mut rng);
                (Net::MiniBert(net), Some(vocab))
            }
        };
        Ok(Classifier {
            config,
            params,
            vocab,
            net,
            mode: Mode::Evaluation,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        self.vocab.as_ref()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Parameters that carry the L2 penalty during training.
    pub fn penalized(&self) -> Vec<ParamId> {
        match &self.net {
            Net::Linear(l) => vec![l.w],
            _ => Vec::new(),
        }
    }

    /// Overwrite parameter values by name. Every parameter must be supplied
    /// exactly once with its current shape.
    pub fn load_values<'a>(&mut self, values: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut by_name: std::collections::HashMap<&str, &Tensor> = values.into_iter().collect();
        for p in self.params.iter_mut() {
            let v = by_name
                .remove(p.name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    /// Encode one reformulated input for this classifier. The non-transformer
    /// families need the embedding table.
    pub fn encode(&self, input: &ReformulatedInput, table: Option<&EmbeddingTable>) -> Result<Encoded> {
        if let Net::MiniBert(_) = self.net {
            let ModelConfig::MiniBert(cfg) = &self.config else { unreachable!() };
            let vocab = self.vocab.as_ref().expect("transformer always has a vocabulary");
            return Ok(Encoded::Pair(encode_pair(cfg, input, vocab)?));
        }
        let table = table.ok_or_else(|| Error::Config(format!("{} needs word embeddings", self.kind())))?;
        let tokens = flat_tokens(input);
        match self.config.sequence_spec() {
            Some(spec) => Ok(Encoded::Sequence {
                matrix: encode_tokens(spec, table, &tokens)?,
                len: tokens.len().min(spec.s),
            }),
            None => {
                let ModelConfig::Linear(cfg) = &self.config else { unreachable!() };
                if table.dim() != cfg.dim {
                    return Err(Error::Shape(format!(
                        "embedding dimension {} does not match model dimension {}",
                        table.dim(),
                        cfg.dim
                    )));
                }
                Ok(Encoded::Averaged(Tensor::row(table.average_sentence(&tokens))))
            }
        }
    }

    /// Record a forward pass on `g` using the parameter values in `params`
    /// (normally `self.params()`; gradient checks pass perturbed copies).
    pub fn forward_with(&self, g: &mut Graph, params: &ParamSet, input: &Encoded) -> Result<Pass> {
        let mismatch = || Error::Shape(format!("{} cannot take this encoded input", self.kind()));
        match (&self.net, input) {
            (Net::Linear(net), Encoded::Averaged(x)) => {
                let x = g.input(x.clone());
                net.forward(g, params, x)
            }
            (Net::Cnn(net), Encoded::Sequence { matrix, .. }) => {
                let spec = self.config.sequence_spec().expect("cnn has a sequence spec");
                check_matrix(matrix, spec)?;
                let x = g.input(matrix.clone());
                net.forward(g, params, x)
            }
            (Net::Lstm(net), Encoded::Sequence { matrix, len }) => {
                let spec = self.config.sequence_spec().expect("lstm has a sequence spec");
                check_matrix(matrix, spec)?;
                let x = g.input(matrix.clone());
                net.forward(g, params, x, *len)
            }
            (Net::MiniBert(net), Encoded::Pair(p)) => net.forward(g, params, p),
            _ => Err(mismatch()),
        }
    }

    /// Per-sample training loss: multiclass hinge for the linear baseline,
    /// softmax cross-entropy otherwise.
    pub fn loss_with(&self, g: &mut Graph, params: &ParamSet, input: &Encoded, gold: usize) -> Result<NodeId> {
        let pass = self.forward_with(g, params, input)?;
        match self.net {
            Net::Linear(_) => g.multiclass_hinge(pass.logits, gold),
            _ => g.softmax_cross_entropy(pass.logits, gold),
        }
    }

    /// Class probabilities with dropout disabled.
    pub fn forward(&self, input: &Encoded) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let pass = self.forward_with(&mut g, &self.params, input)?;
        softmax(g.value(pass.logits).data())
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, input: &Encoded) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }

    pub fn predict_label(&self, input: &Encoded) -> Result<Label> {
        Ok(Label::from_index(self.predict(input)?).expect("class index below CLASSES"))
    }

    /// Representation fed to the classification head, without dropout.
    pub fn features(&self, input: &Encoded) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let pass = self.forward_with(&mut g, &self.params, input)?;
        Ok(g.value(pass.features).data().to_vec())
    }

    /// Attention weights `[layer][head]`, each `len × len`, without dropout.
    pub fn attention(&self, input: &Encoded) -> Result<Vec<Vec<Tensor>>> {
        let mut g = Graph::new();
        let pass = self.forward_with(&mut g, &self.params, input)?;
        Ok(pass
            .attention
            .iter()
            .map(|heads| heads.iter().map(|&n| g.value(n).clone()).collect())
            .collect())
    }
}

fn check_matrix(m: &Tensor, spec: SequenceSpec) -> Result<()> {
    if m.shape() != [spec.s, spec.d] {
        return Err(Error::Shape(format!(
            "token matrix {:?}, expected [{}, {}]",
            m.shape(),
            spec.s,
            spec.d
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = CnnConfig::new(4);
        c.windows = vec![2, 2];
        assert!(ModelConfig::Cnn(c).validate().is_err());
        let m = MiniBertConfig {
            hidden: 10,
            heads: 4,
            ..Default::default()
        };
        assert!(ModelConfig::MiniBert(m).validate().is_err());
        assert!(Classifier::new(ModelConfig::MiniBert(MiniBertConfig::default()), None, 0).is_err());
    }

    #[test]
    fn config_serde_is_tagged() {
        let c = ModelConfig::default_for(ModelKind::BiLstm, 8);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"family\":\"bilstm\""), "{json}");
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), c);
    }
}
