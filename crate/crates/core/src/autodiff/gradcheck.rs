//! Central finite-difference checks of analytical gradients.

use super::{Graph, Var};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Perturbation used for central differences.
pub const STEP: f64 = 1e-5;
/// Maximum accepted relative error.
pub const REL_TOL: f64 = 1e-4;
/// Lower bound on the relative-error denominator. Gradients this small are
/// dominated by the O(ε/h) round-off of the difference quotient itself.
pub const DENOM_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < REL_TOL
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares the gradient of `f` at `inputs` against central differences on
/// `probes` randomly chosen input elements.
///
/// `f` receives a fresh graph and one leaf per input and must return a
/// scalar. Elements for which `skip(input, index, value)` is true are never
/// sampled; use it to steer clear of non-differentiable points.
pub fn check<F, S>(inputs: &[Tensor], probes: usize, rng: &mut Rng, f: F, skip: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    S: Fn(usize, usize, f64) -> bool,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &leaves)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    drop(g);

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = f(&mut g, &leaves)?;
        Ok(g.value(loss).data()[0])
    };

    let total: usize = inputs.iter().map(Tensor::len).sum();
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    let mut attempts = 0;
    while report.probes.len() < probes && attempts < probes * 50 && total > 0 {
        attempts += 1;
        let mut flat = rng.below(total);
        let mut input = 0;
        while flat >= inputs[input].len() {
            flat -= inputs[input].len();
            input += 1;
        }
        let index = flat;
        let x0 = inputs[input].data()[index];
        if skip(input, index, x0) {
            continue;
        }
        work[input].data_mut()[index] = x0 + STEP;
        let up = eval(&work)?;
        work[input].data_mut()[index] = x0 - STEP;
        let down = eval(&work)?;
        work[input].data_mut()[index] = x0;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[input][index];
        report.probes.push(Probe { input, index, analytic: a, numeric, rel_error: relative_error(a, numeric) });
    }
    Ok(report)
}
