//! Central finite-difference checks of tape gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Analytic and numeric derivative pairs from one check.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub pairs: Vec<(f64, f64)>,
}

impl GradCheckReport {
    /// Largest `|a − n| / max(rel·max(|a|,|n|), abs)`; at most 1 means pass.
    pub fn worst_ratio(&self, rel: f64, abs: f64) -> f64 {
        self.pairs
            .iter()
            .map(|&(a, n)| (a - n).abs() / (rel * a.abs().max(n.abs())).max(abs))
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, rel: f64, abs: f64) -> bool {
        self.worst_ratio(rel, abs) <= 1.0
    }
}

/// Compares gradients of `f` with respect to every entry of `inputs`.
pub fn check_inputs<F>(params: &ParamStore, inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(params);
        let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            report.pairs.push((a, (up - down) / (2.0 * step)));
        }
    }
    Ok(report)
}

/// Compares parameter gradients of `f` at the listed `(parameter, entry)` probes.
pub fn check_params<F>(params: &ParamStore, probes: &[(ParamId, usize)], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new(params);
    let out = f(&mut g)?;
    let grads = g.backward(out)?;

    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for &(id, i) in probes {
        let analytic = grads.param(id).map_or(0.0, |g| g[i]);
        let orig = params.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = orig + step;
        let up = eval(&work)?;
        work.get_mut(id).data_mut()[i] = orig - step;
        let down = eval(&work)?;
        work.get_mut(id).data_mut()[i] = orig;
        report.pairs.push((analytic, (up - down) / (2.0 * step)));
    }
    Ok(report)
}
