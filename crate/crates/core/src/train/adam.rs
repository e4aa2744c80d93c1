use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};
use crate::model::{ParamStore, Parameter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        validate((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), || {
            format!("Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2)
        })?;
        validate(self.eps > 0.0, || format!("Adam eps must be positive, got {}", self.eps))
    }
}

/// First and second moments plus a step count for every parameter. The
/// count is per parameter because alternating phases step different
/// parameters different numbers of times.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: Vec<u64>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self { m: zeros(), v: zeros(), t: vec![0; store.params.len()] }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        let same = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
        };
        self.t == other.t && same(&self.m, &other.m) && same(&self.v, &other.v)
    }
}

/// One bias-corrected Adam step on every parameter for which
/// `select(index, parameter)` holds. Selected parameters must have a gradient.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Option<Vec<f64>>],
    select: impl Fn(usize, &Parameter) -> bool,
    state: &mut AdamState,
    learning_rate: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.params.len() || state.t.len() != store.params.len() {
        return Err(Error::Contract("gradient or optimizer state does not match the parameter list".into()));
    }
    for (i, p) in store.params.iter_mut().enumerate() {
        if !select(i, p) {
            continue;
        }
        let g = grads[i]
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("parameter {} was selected but has no gradient", p.name)))?;
        state.t[i] += 1;
        let t = state.t[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
