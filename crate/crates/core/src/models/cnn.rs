//! Convolution branches over the token matrix with max-over-time pooling.

use rand::Rng;

use super::{CnnConfig, Pass, CLASSES};
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamId, ParamSet};

#[derive(Debug, Clone)]
struct Branch {
    window: usize,
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Cnn {
    branches: Vec<Branch>,
    hidden: Option<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
    dropout: f64,
}

impl Cnn {
    pub(crate) fn init(cfg: &CnnConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let branches = cfg
            .windows
            .iter()
            .map(|&h| Branch {
                window: h,
                w: params.add_glorot(format!("cnn.conv{h}.w"), h * cfg.dim, cfg.filters, rng),
                b: params.add_zeros(format!("cnn.conv{h}.b"), 1, cfg.filters),
            })
            .collect();
        let mut width = cfg.windows.len() * cfg.filters;
        let hidden = (cfg.hidden > 0).then(|| {
            let ids = (
                params.add_glorot("cnn.hidden.w", width, cfg.hidden, rng),
                params.add_zeros("cnn.hidden.b", 1, cfg.hidden),
            );
            width = cfg.hidden;
            ids
        });
        Cnn {
            branches,
            hidden,
            out_w: params.add_glorot("cnn.out.w", width, CLASSES, rng),
            out_b: params.add_zeros("cnn.out.b", 1, CLASSES),
            dropout: cfg.dropout,
        }
    }

    /// `x` is the `s × d` token matrix.
    pub(crate) fn forward(&self, g: &mut Graph, p: &ParamSet, x: NodeId) -> Result<Pass> {
        let mut pooled = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let windows = g.unfold(x, br.window)?;
            let w = g.param(p, br.w);
            let b = g.param(p, br.b);
            let conv = g.matmul(windows, w)?;
            let conv = g.add_row(conv, b)?;
            let act = g.relu(conv);
            pooled.push(g.max_rows(act));
        }
        let features = g.concat_cols(&pooled)?;
        let mut h = g.dropout(features, self.dropout);
        if let Some((w, b)) = self.hidden {
            let w = g.param(p, w);
            let b = g.param(p, b);
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            let z = g.relu(z);
            h = g.dropout(z, self.dropout);
        }
        let w = g.param(p, self.out_w);
        let b = g.param(p, self.out_b);
        let z = g.matmul(h, w)?;
        let logits = g.add_row(z, b)?;
        Ok(Pass::new(features, logits))
    }
}
