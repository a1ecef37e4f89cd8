//! Finite-difference check of the whole network.

use std::collections::BTreeMap;

use super::{Binder, Fc2mfn, Inputs, ModelConfig};
use crate::autodiff::{grad_check, GradCheckReport, Graph, Var};
use crate::ctensor::{CTensor, RTensor};
use crate::error::{Error, Result};
use crate::layers::blocks::Ctx;
use crate::rng::{split_mix, CounterRng};
use crate::training::{complex_one_hot, loss_graph, LabelMap};

/// Standard-normal complex inputs and uniform phases.
pub fn random_inputs(c: &ModelConfig, n: usize, seed: u64) -> Inputs {
    let (h, w) = c.image_size;
    let mut rng = CounterRng::new(seed);
    let len = n * h * w;
    let mut cplx = || {
        let re = (0..len).map(|_| rng.normal()).collect();
        let im = (0..len).map(|_| rng.normal()).collect();
        CTensor::from_parts(vec![n, 1, h, w], re, im)
    };
    let master = cplx();
    let slave = cplx();
    let phase = RTensor::from_parts(vec![n, 1, h, w], (0..len).map(|_| rng.phase()).collect());
    Inputs { master, slave, phase }
}

pub fn random_labels(c: &ModelConfig, n: usize, seed: u64) -> Vec<LabelMap> {
    let (h, w) = c.image_size;
    let mut rng = CounterRng::new(seed);
    (0..n)
        .map(|_| {
            let data = (0..h * w).map(|_| rng.int_inclusive(0, c.num_classes - 1) as u8).collect();
            LabelMap { height: h, width: w, data }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub report: GradCheckReport,
    /// Parameter path of each checked tensor, indexed like `CoordError::tensor`.
    pub paths: Vec<String>,
    /// Distance of the accepted sample from the nearest kink.
    pub margin: f64,
    /// Samples drawn, including the accepted one.
    pub attempts: usize,
}

impl ModelGradCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.report.max_rel_error < tolerance
    }
}

/// Training-mode loss gradient of every parameter against central
/// differences. Samples (weights, inputs, labels) are redrawn until every
/// activation and pooling decision is at least `min_margin` from a switch.
pub fn model_grad_check(
    cfg: &ModelConfig,
    batch: usize,
    seed: u64,
    step: f64,
    min_margin: f64,
    max_attempts: usize,
) -> Result<ModelGradCheck> {
    for attempt in 0..max_attempts {
        let s = split_mix(seed, attempt as u64);
        let mut model = Fc2mfn::build(cfg.clone(), split_mix(s, 0))?;
        randomize_offsets(&mut model, split_mix(s, 3));
        let x = random_inputs(cfg, batch, split_mix(s, 1));
        let labels = random_labels(cfg, batch, split_mix(s, 2));
        let target = complex_one_hot(&labels.iter().collect::<Vec<_>>(), cfg.num_classes)?;

        let mut g = Graph::no_grad();
        loss_of(&model, &mut g, &x, &target, None)?;
        let margin = g.kink_margin();
        if margin < min_margin {
            continue;
        }

        let paths: Vec<String> = model.params.params.keys().cloned().collect();
        let values: Vec<CTensor> = model.params.params.values().cloned().collect();
        let report = grad_check(|g, v| loss_of(&model, g, &x, &target, Some((&paths, v))), &values, step)?;
        return Ok(ModelGradCheck { report, paths, margin, attempts: attempt + 1 });
    }
    Err(Error::Config(format!("no sample at least {min_margin} from a kink in {max_attempts} attempts")))
}

/// Zero biases make a convolution over an all-zero input land exactly on
/// the next CReLU kink, so offsets are drawn at random for the check.
fn randomize_offsets(model: &mut Fc2mfn, seed: u64) {
    let mut rng = CounterRng::new(seed);
    for (path, p) in model.params.params.iter_mut() {
        if path.ends_with(".bias") || path.ends_with(".beta") {
            for v in p.re_mut().iter_mut() {
                *v = 0.5 * rng.normal();
            }
            for v in p.im_mut().iter_mut() {
                *v = 0.5 * rng.normal();
            }
        }
    }
}

fn loss_of(
    model: &Fc2mfn,
    g: &mut Graph,
    x: &Inputs,
    target: &CTensor,
    bound: Option<(&[String], &[Var])>,
) -> Result<Var> {
    let (m, s, p) = (g.constant(x.master.clone()), g.constant(x.slave.clone()), g.constant(CTensor::from_real(&x.phase)));
    let t = g.constant(target.clone());
    let map: BTreeMap<String, Var> = match bound {
        Some((paths, vars)) => paths.iter().cloned().zip(vars.iter().copied()).collect(),
        None => BTreeMap::new(),
    };
    let mut b = Binder::with_bound(&model.params, map);
    let mut ctx = Ctx::new(g, true);
    let out = model.forward_graph(&mut ctx, &mut b, m, s, p)?;
    loss_graph(g, t, out)
}
