//! Central finite-difference check of the tape's analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub threshold: f64,
    /// Smallest denominator of the relative error. Below this gradient
    /// magnitude the check is effectively absolute (`threshold · floor`),
    /// since finite differences carry about `ulp(loss) / epsilon` of
    /// rounding noise.
    pub floor: f64,
    /// Parameters with more coordinates than this are checked on a random
    /// sample of exactly this many.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            threshold: 1e-4,
            floor: 1e-6,
            max_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_loss<F>(forward: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = forward(&mut graph, params)?;
    let value = graph.value(loss);
    if value.shape() != [1, 1] {
        return Err(Error::Shape(format!("loss has shape {:?}", value.shape())));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss {v}")));
    }
    Ok(v)
}

/// Compare back-propagated gradients of `forward` (evaluated without
/// dropout) against central differences for every parameter.
pub fn grad_check<F>(params: &mut ParamSet, forward: F, options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = forward(&mut graph, params)?;
    eval_loss(&forward, params)?;
    graph.backward(loss)?;
    let analytic: Vec<Option<Vec<f64>>> = params
        .ids()
        .map(|id| graph.param_grad(id).map(|g| g.data().to_vec()))
        .collect();
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut checks = Vec::with_capacity(params.len());
    for (pid, grads) in params.ids().collect::<Vec<ParamId>>().into_iter().zip(analytic) {
        let size = params.get(pid).value.len();
        let coords: Vec<usize> = if size <= options.max_coords {
            (0..size).collect()
        } else {
            let mut picked = sample(&mut rng, size, options.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let original = params.get(pid).value.data()[i];
            params.get_mut(pid).value.data_mut()[i] = original + options.epsilon;
            let plus = eval_loss(&forward, params);
            params.get_mut(pid).value.data_mut()[i] = original - options.epsilon;
            let minus = eval_loss(&forward, params);
            params.get_mut(pid).value.data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * options.epsilon);
            let analytic = grads.as_ref().map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(analytic, numeric, options.floor));
        }
        checks.push(ParamCheck {
            name: params.get(pid).name.clone(),
            coords_checked: coords.len(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_rel_error,
        threshold: options.threshold,
        pass: max_rel_error < options.threshold,
    })
}
