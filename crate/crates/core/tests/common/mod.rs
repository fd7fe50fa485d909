//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use sentipipe::Label;

/// Scores recomputed from raw label lists by counting, going through
/// precision and recall rather than the confusion matrix.
#[derive(Debug, Clone, Copy)]
pub struct OracleScores {
    pub accuracy: f64,
    pub f1: [f64; 3],
    pub f1_macro: f64,
    pub f1pm_macro: f64,
    pub f1pm_micro: f64,
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = safe_div(tp as f64, (tp + fp) as f64);
    let r = safe_div(tp as f64, (tp + fn_) as f64);
    safe_div(2.0 * p * r, p + r)
}

pub fn oracle(gold: &[Label], pred: &[Label]) -> OracleScores {
    let n = gold.len();
    let mut correct = 0;
    for i in 0..n {
        if gold[i] == pred[i] {
            correct += 1;
        }
    }
    let mut f1 = [0.0; 3];
    for (k, &class) in Label::ALL.iter().enumerate() {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..n {
            if pred[i] == class && gold[i] == class {
                tp += 1;
            }
            if pred[i] == class && gold[i] != class {
                fp += 1;
            }
            if gold[i] == class && pred[i] != class {
                fn_ += 1;
            }
        }
        f1[k] = f1_from_counts(tp, fp, fn_);
    }
    let polar = |l: Label| l == Label::Positive || l == Label::Negative;
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for i in 0..n {
        if polar(pred[i]) && pred[i] == gold[i] {
            tp += 1;
        }
        if polar(pred[i]) && pred[i] != gold[i] {
            fp += 1;
        }
        if polar(gold[i]) && pred[i] != gold[i] {
            fn_ += 1;
        }
    }
    OracleScores {
        accuracy: correct as f64 / n as f64,
        f1,
        f1_macro: (f1[0] + f1[1] + f1[2]) / 3.0,
        f1pm_macro: (f1[0] + f1[1]) / 2.0,
        f1pm_micro: f1_from_counts(tp, fp, fn_),
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentipipe::embed::EmbeddingTable;
use sentipipe::models::{
    Classifier, CnnConfig, LinearConfig, LstmConfig, MiniBertConfig, ModelConfig, ModelKind, Vocab,
};
use sentipipe::reformulate::ReformulatedInput;
use sentipipe::text::tokenize;
use sentipipe::train::{Example, Optimizer, TrainConfig};

pub const SEP_DIM: usize = 8;
const MARKERS: [[&str; 2]; 3] = [["p1", "p2"], ["n1", "n2"], ["o1", "o2"]];

/// 64 six-token texts. Each holds exactly one class marker at a random
/// position among five fillers, so the label is a function of one token.
pub fn separable_texts(seed: u64) -> Vec<(String, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..64)
        .map(|i| {
            let label = Label::ALL[i % 3];
            let marker = MARKERS[label.index()][rng.random_range(0..2)];
            let mut words: Vec<String> = (0..5).map(|_| format!("f{}", rng.random_range(0..20))).collect();
            words.insert(rng.random_range(0..=5), marker.to_string());
            (words.join(" "), label)
        })
        .collect()
}

/// Markers live on the first three axes (one per class) and fillers on the
/// remaining ones, so averaged sentences are linearly separable.
pub fn separable_embeddings(seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe3b);
    let mut entries = Vec::new();
    for (k, pair) in MARKERS.iter().enumerate() {
        for (j, m) in pair.iter().enumerate() {
            let mut v = vec![0.0; SEP_DIM];
            v[k] = 1.0 - 0.25 * j as f64;
            entries.push((m.to_string(), v));
        }
    }
    for f in 0..20 {
        let mut v = vec![0.0; SEP_DIM];
        for x in &mut v[3..] {
            *x = rng.random_range(-1.0..1.0);
        }
        entries.push((format!("f{f}"), v));
    }
    EmbeddingTable::from_entries(SEP_DIM, entries).unwrap()
}

/// Small configurations of every family sized for the separable corpus.
pub fn overfit_setup(kind: ModelKind) -> (ModelConfig, TrainConfig) {
    let base = TrainConfig {
        optimizer: Optimizer::Adam,
        batch_size: 16,
        epochs: 200,
        runs: 1,
        ..TrainConfig::default()
    };
    match kind {
        ModelKind::Linear => (
            ModelConfig::Linear(LinearConfig { dim: SEP_DIM }),
            TrainConfig {
                learning_rate: 0.05,
                l2: 1e-5,
                ..base
            },
        ),
        ModelKind::Cnn => {
            let mut c = CnnConfig::new(SEP_DIM);
            c.seq_len = 8;
            c.filters = 8;
            (ModelConfig::Cnn(c), TrainConfig { learning_rate: 0.01, ..base })
        }
        ModelKind::Lstm | ModelKind::BiLstm => {
            let mut c = LstmConfig::new(SEP_DIM);
            c.seq_len = 8;
            let cfg = if kind == ModelKind::Lstm {
                ModelConfig::Lstm(c)
            } else {
                ModelConfig::BiLstm(c)
            };
            (cfg, TrainConfig { learning_rate: 0.01, ..base })
        }
        ModelKind::MiniBert => (
            ModelConfig::MiniBert(MiniBertConfig {
                layers: 1,
                hidden: 16,
                heads: 2,
                ffn_mult: 4,
                max_len: 10,
                dropout: 0.1,
            }),
            TrainConfig {
                learning_rate: 1e-3,
                ..base
            },
        ),
    }
}

pub fn single(text: &str) -> ReformulatedInput {
    ReformulatedInput {
        sentence_a: text.to_string(),
        sentence_b: None,
        mask_token: "MASK".into(),
    }
}

/// Classifier of `kind` seeded with `seed` and the encoded separable corpus.
pub fn separable_problem(kind: ModelKind, seed: u64) -> (Classifier, Vec<Example>, TrainConfig) {
    let texts = separable_texts(seed);
    let table = separable_embeddings(seed);
    let (config, train) = overfit_setup(kind);
    let vocab = Vocab::build(texts.iter().map(|(t, _)| tokenize(t)), "MASK", 1).unwrap();
    let clf = Classifier::new(config, Some(vocab), seed).unwrap();
    let examples = texts
        .iter()
        .enumerate()
        .map(|(i, (t, label))| Example {
            id: format!("s{i}"),
            input: clf.encode(&single(t), Some(&table)).unwrap(),
            label: *label,
        })
        .collect();
    (clf, examples, train)
}
