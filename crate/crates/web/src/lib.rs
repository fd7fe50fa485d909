//! Browser bindings: normalize a tweet, build the model input for a
//! sentence (with its transformer encoding), and score label lists.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! logic can be tested natively.

use serde::Serialize;
use sentipipe::corpus::{Sample, TaskKind};
use sentipipe::experiment::Pipeline;
use sentipipe::label::Label;
use sentipipe::metrics::evaluate;
use sentipipe::models::{encode_pair, flat_tokens, MiniBertConfig, Vocab};
use sentipipe::reformulate::{Reformulator, Scheme};
use sentipipe::textnorm::{normalize, NormConfig, NormStep};
use wasm_bindgen::prelude::*;

fn norm_config(steps: &str) -> Result<NormConfig, String> {
    if steps.trim().is_empty() {
        return Ok(NormConfig::standard());
    }
    let parsed = steps
        .split(',')
        .map(|s| s.trim().parse::<NormStep>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    NormConfig::new(parsed).map_err(|e| e.to_string())
}

/// Normalize `text` with the comma-separated `steps` (all standard steps
/// when empty).
pub fn normalize_with(text: &str, steps: &str) -> Result<String, String> {
    Ok(normalize(text, &norm_config(steps)?))
}

#[derive(Debug, Serialize, PartialEq)]
pub struct EncodedView {
    pub sentence_a: String,
    pub sentence_b: Option<String>,
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub segments: Vec<u8>,
    pub mask: Vec<bool>,
}

/// Normalize and reformulate `text` (targeted when `entity` is non-empty),
/// then encode it as a `[CLS] a [SEP] b [SEP]` pair over a vocabulary
/// built from this one input.
pub fn reformulate_with(text: &str, entity: &str, scheme: &str, max_len: usize) -> Result<EncodedView, String> {
    let scheme: Scheme = scheme.parse().map_err(|e: sentipipe::Error| e.to_string())?;
    let (task, sample) = if entity.trim().is_empty() {
        (TaskKind::General, Sample::general("demo", text, Label::Neutral))
    } else {
        (TaskKind::Targeted, Sample::targeted("demo", text, entity.trim(), Label::Neutral))
    };
    let pipeline = Pipeline::new(task, NormConfig::standard(), Reformulator::new(scheme));
    let input = pipeline.prepare(&sample).map_err(|e| e.to_string())?;
    let vocab = Vocab::build([flat_tokens(&input)], &input.mask_token, 1).map_err(|e| e.to_string())?;
    let config = MiniBertConfig {
        max_len,
        ..MiniBertConfig::default()
    };
    let enc = encode_pair(&config, &input, &vocab).map_err(|e| e.to_string())?;
    let used = enc.used();
    Ok(EncodedView {
        tokens: enc.ids[..used]
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("?").to_string())
            .collect(),
        ids: enc.ids[..used].to_vec(),
        segments: enc.segments[..used].iter().map(|&s| s as u8).collect(),
        mask: enc.mask[..used].to_vec(),
        sentence_a: input.sentence_a,
        sentence_b: input.sentence_b,
    })
}

fn parse_labels(text: &str) -> Result<Vec<Label>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Label>().map_err(|e| e.to_string()))
        .collect()
}

/// Score whitespace- or comma-separated labels (`1`/`-1`/`0` or words).
pub fn evaluate_with(gold: &str, pred: &str) -> Result<String, String> {
    let report = evaluate(&parse_labels(gold)?, &parse_labels(pred)?).map_err(|e| e.to_string())?;
    Ok(report.to_text())
}

#[wasm_bindgen]
pub fn normalize_text(text: &str, steps: &str) -> Result<String, JsError> {
    normalize_with(text, steps).map_err(|e| JsError::new(&e))
}

/// JSON of [`EncodedView`].
#[wasm_bindgen]
pub fn reformulate_text(text: &str, entity: &str, scheme: &str, max_len: usize) -> Result<String, JsError> {
    let view = reformulate_with(text, entity, scheme, max_len).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn evaluate_labels(gold: &str, pred: &str) -> Result<String, JsError> {
    evaluate_with(gold, pred).map_err(|e| JsError::new(&e))
}
