//! Minimal dense-matrix kernel with reverse-mode differentiation.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Graph, NodeId, PROB_FLOOR};
pub use params::{ParamId, ParamSet, Parameter};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Softmax with the maximum subtracted before exponentiation.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Invalid("softmax of an empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input {bad}")));
    }
    Ok(graph::softmax_slice(logits))
}

/// `-ln(max(probs[gold], 1e-12))`.
pub fn cross_entropy(probs: &[f64], gold: usize) -> Result<f64> {
    let p = probs
        .get(gold)
        .ok_or_else(|| Error::Invalid(format!("gold class {gold} out of range for {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
