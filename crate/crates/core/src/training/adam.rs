use std::collections::BTreeMap;

use crate::ctensor::CTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments per parameter, real and imaginary planes
/// tracked as separate coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, CTensor>,
    pub v: BTreeMap<String, CTensor>,
    pub t: u64,
}

fn update_plane(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, c1: f64, c2: f64) {
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    params: &mut BTreeMap<String, CTensor>,
    grads: &BTreeMap<String, CTensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient for {name}: {:?} vs {:?}", g.shape(), p.shape())));
        }
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| CTensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| CTensor::zeros(p.shape()));
        let (pr, pi) = p.planes_mut();
        let (mr, mi) = m.planes_mut();
        let (vr, vi) = v.planes_mut();
        update_plane(pr, g.re(), mr, vr, cfg, c1, c2);
        update_plane(pi, g.im(), mi, vi, cfg, c1, c2);
    }
    Ok(())
}
