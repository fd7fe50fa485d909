//! A small transformer encoder over `[CLS] a [SEP] (b [SEP])` inputs.

use rand::Rng;

use super::encode::PairEncoding;
use super::{MiniBertConfig, Pass, CLASSES};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, ParamSet};

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn init(name: &str, rows: usize, cols: usize, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        Dense {
            w: params.add_glorot(format!("{name}.w"), rows, cols, rng),
            b: params.add_zeros(format!("{name}.b"), 1, cols),
        }
    }

    fn apply(&self, g: &mut Graph, p: &ParamSet, x: NodeId) -> Result<NodeId> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let z = g.matmul(x, w)?;
        g.add_row(z, b)
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn init(name: &str, width: usize, params: &mut ParamSet) -> Self {
        Norm {
            gamma: params.add_filled(format!("{name}.gamma"), 1, width, 1.0),
            beta: params.add_zeros(format!("{name}.beta"), 1, width),
        }
    }

    fn apply(&self, g: &mut Graph, p: &ParamSet, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln1: Norm,
    up: Dense,
    down: Dense,
    ln2: Norm,
}

#[derive(Debug, Clone)]
pub(crate) struct MiniBert {
    tokens: ParamId,
    segments: ParamId,
    positions: ParamId,
    ln: Norm,
    layers: Vec<Layer>,
    cls_w: ParamId,
    cls_b: ParamId,
    heads: usize,
    hidden: usize,
    max_len: usize,
    dropout: f64,
}

impl MiniBert {
    pub(crate) fn init(cfg: &MiniBertConfig, vocab_size: usize, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let tokens = params.add_glorot("bert.emb.token", vocab_size, h, rng);
        let segments = params.add_glorot("bert.emb.segment", 2, h, rng);
        let positions = params.add_glorot("bert.emb.position", cfg.max_len, h, rng);
        let ln = Norm::init("bert.emb.ln", h, params);
        let layers = (0..cfg.layers)
            .map(|l| {
                let name = |part: &str| format!("bert.layer{l}.{part}");
                Layer {
                    q: Dense::init(&name("q"), h, h, params, rng),
                    k: Dense::init(&name("k"), h, h, params, rng),
                    v: Dense::init(&name("v"), h, h, params, rng),
                    o: Dense::init(&name("o"), h, h, params, rng),
                    ln1: Norm::init(&name("ln1"), h, params),
                    up: Dense::init(&name("ffn_up"), h, cfg.ffn_mult * h, params, rng),
                    down: Dense::init(&name("ffn_down"), cfg.ffn_mult * h, h, params, rng),
                    ln2: Norm::init(&name("ln2"), h, params),
                }
            })
            .collect();
        MiniBert {
            tokens,
            segments,
            positions,
            ln,
            layers,
            cls_w: params.add_glorot("bert.cls.w", CLASSES, h, rng),
            cls_b: params.add_zeros("bert.cls.b", 1, CLASSES),
            heads: cfg.heads,
            hidden: h,
            max_len: cfg.max_len,
            dropout: cfg.dropout,
        }
    }

    pub(crate) fn forward(&self, g: &mut Graph, p: &ParamSet, input: &PairEncoding) -> Result<Pass> {
        let n = input.ids.len();
        if n != self.max_len || input.segments.len() != n || input.mask.len() != n {
            return Err(Error::Shape(format!(
                "encoded input of length {n} for a model of length {}",
                self.max_len
            )));
        }
        let vocab_size = p.get(self.tokens).value.rows();
        if let Some(&bad) = input.ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::Shape(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
        if input.segments.iter().any(|&s| s > 1) {
            return Err(Error::Shape("segment ids must be 0 or 1".into()));
        }

        let tok = g.param(p, self.tokens);
        let tok = g.gather(tok, &input.ids)?;
        let seg = g.param(p, self.segments);
        let seg = g.gather(seg, &input.segments)?;
        let pos = g.param(p, self.positions);
        let x = g.sum(&[tok, seg, pos])?;
        let x = self.ln.apply(g, p, x)?;
        let mut x = g.dropout(x, self.dropout);

        let dh = self.hidden / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = layer.q.apply(g, p, x)?;
            let k = layer.k.apply(g, p, x)?;
            let v = layer.v.apply(g, p, x)?;
            let mut contexts = Vec::with_capacity(self.heads);
            let mut maps = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let qh = g.slice_cols(q, head * dh, dh)?;
                let kh = g.slice_cols(k, head * dh, dh)?;
                let vh = g.slice_cols(v, head * dh, dh)?;
                let scores = g.matmul_bt(qh, kh)?;
                let scores = g.scale(scores, scale);
                let weights = g.masked_softmax_rows(scores, &input.mask)?;
                maps.push(weights);
                contexts.push(g.matmul(weights, vh)?);
            }
            attention.push(maps);
            let ctx = g.concat_cols(&contexts)?;
            let attended = layer.o.apply(g, p, ctx)?;
            let attended = g.dropout(attended, self.dropout);
            let res = g.add(x, attended)?;
            x = layer.ln1.apply(g, p, res)?;

            let up = layer.up.apply(g, p, x)?;
            let up = g.gelu(up);
            let down = layer.down.apply(g, p, up)?;
            let down = g.dropout(down, self.dropout);
            let res = g.add(x, down)?;
            x = layer.ln2.apply(g, p, res)?;
        }

        let first = g.slice_rows(x, 0, 1)?;
        let pooled = g.dropout(first, self.dropout);
        let w = g.param(p, self.cls_w);
        let b = g.param(p, self.cls_b);
        let z = g.matmul_bt(pooled, w)?;
        let logits = g.add_row(z, b)?;
        let mut pass = Pass::new(first, logits);
        pass.attention = attention;
        Ok(pass)
    }
}
