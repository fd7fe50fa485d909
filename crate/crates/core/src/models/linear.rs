//! Linear scores over an averaged sentence embedding.

use rand::Rng;

use super::{LinearConfig, Pass, CLASSES};
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamId, ParamSet};

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub(crate) w: ParamId,
    b: ParamId,
}

impl Linear {
    pub(crate) fn init(cfg: &LinearConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        Linear {
            w: params.add_glorot("linear.w", cfg.dim, CLASSES, rng),
            b: params.add_zeros("linear.b", 1, CLASSES),
        }
    }

    pub(crate) fn forward(&self, g: &mut Graph, p: &ParamSet, x: NodeId) -> Result<Pass> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let xw = g.matmul(x, w)?;
        let logits = g.add_row(xw, b)?;
        Ok(Pass::new(x, logits))
    }
}
