//! Unidirectional and bidirectional LSTM encoders with a small dense head.

use rand::Rng;

use super::{LstmConfig, Pass, Readout, CLASSES};
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamId, ParamSet, Tensor};

#[derive(Debug, Clone)]
struct Cell {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    units: usize,
}

impl Cell {
    fn init(prefix: &str, input: usize, units: usize, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        // gate blocks are laid out as [input | forget | output | candidate]
        let mut bias = Tensor::zeros(1, 4 * units);
        bias.data_mut()[units..2 * units].fill(1.0);
        Cell {
            wx: params.add_glorot(format!("{prefix}.wx"), input, 4 * units, rng),
            wh: params.add_glorot(format!("{prefix}.wh"), units, 4 * units, rng),
            b: params.add(format!("{prefix}.b"), bias),
            units,
        }
    }

    /// Final `(hidden, cell)` state after visiting the rows of `x` in `order`.
    fn run(&self, g: &mut Graph, p: &ParamSet, x: NodeId, order: &[usize]) -> Result<(NodeId, NodeId)> {
        let u = self.units;
        if order.is_empty() {
            let zero = g.input(Tensor::zeros(1, u));
            return Ok((zero, zero));
        }
        let wx = g.param(p, self.wx);
        let wh = g.param(p, self.wh);
        let b = g.param(p, self.b);
        let projected = g.matmul(x, wx)?;
        let mut state: Option<(NodeId, NodeId)> = None;
        for &t in order {
            let xt = g.slice_rows(projected, t, 1)?;
            let mut z = g.add_row(xt, b)?;
            if let Some((h, _)) = state {
                let hw = g.matmul(h, wh)?;
                z = g.add(z, hw)?;
            }
            let i = g.slice_cols(z, 0, u)?;
            let i = g.sigmoid(i);
            let f = g.slice_cols(z, u, u)?;
            let f = g.sigmoid(f);
            let o = g.slice_cols(z, 2 * u, u)?;
            let o = g.sigmoid(o);
            let cand = g.slice_cols(z, 3 * u, u)?;
            let cand = g.tanh(cand);
            let mut c = g.mul(i, cand)?;
            if let Some((_, c_prev)) = state {
                let kept = g.mul(f, c_prev)?;
                c = g.add(kept, c)?;
            }
            let squashed = g.tanh(c);
            let h = g.mul(o, squashed)?;
            state = Some((h, c));
        }
        Ok(state.expect("order is non-empty"))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    fwd: Cell,
    bwd: Option<Cell>,
    fc_w: ParamId,
    fc_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    readout: Readout,
    dropout: f64,
    seq_len: usize,
}

impl Lstm {
    pub(crate) fn init(cfg: &LstmConfig, bidirectional: bool, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let units = cfg.units();
        let fwd = Cell::init("lstm.fwd", cfg.dim, units, params, rng);
        let bwd = bidirectional.then(|| Cell::init("lstm.bwd", cfg.dim, units, params, rng));
        let state = if bidirectional { 2 * units } else { units };
        Lstm {
            fwd,
            bwd,
            fc_w: params.add_glorot("lstm.fc.w", state, cfg.fc, rng),
            fc_b: params.add_zeros("lstm.fc.b", 1, cfg.fc),
            out_w: params.add_glorot("lstm.out.w", cfg.fc, CLASSES, rng),
            out_b: params.add_zeros("lstm.out.b", 1, CLASSES),
            readout: cfg.readout,
            dropout: cfg.dropout,
            seq_len: cfg.seq_len,
        }
    }

    /// `x` is the `s × d` token matrix of which the first `len` rows are real.
    pub(crate) fn forward(&self, g: &mut Graph, p: &ParamSet, x: NodeId, len: usize) -> Result<Pass> {
        let n = len.min(self.seq_len);
        let order: Vec<usize> = (0..n).collect();
        let pick = |(h, c): (NodeId, NodeId)| match self.readout {
            Readout::Cell => c,
            Readout::Hidden => h,
        };
        let fwd = pick(self.fwd.run(g, p, x, &order)?);
        let features = match &self.bwd {
            Some(cell) => {
                let rev: Vec<usize> = order.iter().rev().copied().collect();
                let bwd = pick(cell.run(g, p, x, &rev)?);
                g.concat_cols(&[fwd, bwd])?
            }
            None => fwd,
        };
        let h = g.dropout(features, self.dropout);
        let w = g.param(p, self.fc_w);
        let b = g.param(p, self.fc_b);
        let z = g.matmul(h, w)?;
        let z = g.add_row(z, b)?;
        let z = g.tanh(z);
        let h = g.dropout(z, self.dropout);
        let w = g.param(p, self.out_w);
        let b = g.param(p, self.out_b);
        let z = g.matmul(h, w)?;
        let logits = g.add_row(z, b)?;
        Ok(Pass::new(features, logits))
    }
}
