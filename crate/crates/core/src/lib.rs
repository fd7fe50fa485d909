//! Three-class sentiment classification toolkit: corpus handling, tweet
//! normalization, sentence-pair reformulation, from-scratch neural
//! classifiers, training, and shared-task evaluation.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod label;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod reformulate;
pub mod text;
pub mod textnorm;
pub mod train;

pub use error::{Error, Result};
pub use label::Label;
