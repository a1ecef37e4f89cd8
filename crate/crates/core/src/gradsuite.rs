//! Finite-difference suite over every layer operation and the full network.
//!
//! Each case draws random inputs and parameters, rejects draws that lie
//! within [`MIN_MARGIN`] of a CReLU or pooling switch, and compares the
//! reverse-mode gradient of a random linear probe against central
//! differences.

use std::fmt::Write as _;

use crate::autodiff::{cmul, grad_check, herm_dot, real_part, scale, sum_all, GradCheckReport, Graph, Var};
use crate::ctensor::CTensor;
use crate::error::{Error, Result};
use crate::layers::activation::crelu;
use crate::layers::batchnorm::{batch_norm, RunningStats, DEFAULT_EPS};
use crate::layers::blocks::{self, BnVars, CbrVars, ConvVars, Ctx, Residual1Vars, Residual2Vars, SeparableVars};
use crate::layers::conv::{conv2d, ConvSpec, Padding};
use crate::layers::pool::{complex_max_pool2d, max_pool, max_unpool, DEFAULT_DELTA};
use crate::model::{model_grad_check, random_labels, ModelConfig};
use crate::rng::{fnv1a, split_mix, CounterRng};
use crate::training::{complex_one_hot, loss_graph};

pub const STEP: f64 = 1e-6;
pub const MIN_MARGIN: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
    /// Name of each checked tensor.
    pub tensors: Vec<String>,
    pub attempts: usize,
}

impl CaseResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.report.max_rel_error < tolerance
    }

    /// One line per coordinate at or above `tolerance`.
    pub fn failure_lines(&self, tolerance: f64) -> Vec<String> {
        self.report
            .failures(tolerance)
            .map(|c| {
                let mut s = String::new();
                let _ = write!(
                    s,
                    "{}: {}[{}].{:?} analytic={:.9e} numeric={:.9e} rel_error={:.3e}",
                    self.name, self.tensors[c.tensor], c.index, c.part, c.analytic, c.numeric, c.rel_error
                );
                s
            })
            .collect()
    }
}

type BuildFn = dyn Fn(&mut Ctx, &[Var]) -> Result<Var>;

struct Case {
    name: &'static str,
    tensors: Vec<(&'static str, Vec<usize>)>,
    training: bool,
    build: Box<BuildFn>,
}

fn rand_tensor(shape: &[usize], rng: &mut CounterRng) -> CTensor {
    let n: usize = shape.iter().product();
    let re = (0..n).map(|_| rng.normal()).collect();
    let im = (0..n).map(|_| rng.normal()).collect();
    CTensor::from_parts(shape.to_vec(), re, im)
}

/// |Σ y·p|² / numel(y).
fn probe_loss(g: &mut Graph, y: Var, probe: Var) -> Result<Var> {
    let n = g.value(y).numel() as f64;
    let m = cmul(g, y, probe)?;
    let s = sum_all(g, m);
    let d = herm_dot(g, s, s)?;
    let r = real_part(g, d);
    Ok(scale(g, r, 1.0 / n))
}

fn run_case(case: &Case, seed: u64) -> Result<CaseResult> {
    let base = split_mix(seed, fnv1a(case.name));
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = CounterRng::new(split_mix(base, attempt as u64));
        let values: Vec<CTensor> = case.tensors.iter().map(|(_, s)| rand_tensor(s, &mut rng)).collect();

        let mut g = Graph::no_grad();
        let vs: Vec<Var> = values.iter().map(|v| g.leaf(v.clone(), false)).collect();
        let mut ctx = Ctx::new(&mut g, case.training);
        let y = (case.build)(&mut ctx, &vs)?;
        if g.kink_margin() < MIN_MARGIN {
            continue;
        }
        let probe = rand_tensor(g.value(y).shape(), &mut rng);

        let report = grad_check(
            |g, v| {
                let p = g.constant(probe.clone());
                let mut ctx = Ctx::new(g, case.training);
                let y = (case.build)(&mut ctx, v)?;
                probe_loss(ctx.graph, y, p)
            },
            &values,
            STEP,
        )?;
        return Ok(CaseResult {
            name: case.name.to_string(),
            report,
            tensors: case.tensors.iter().map(|(n, _)| n.to_string()).collect(),
            attempts: attempt + 1,
        });
    }
    Err(Error::Config(format!("{}: no draw at least {MIN_MARGIN} from a kink", case.name)))
}

fn conv_case(name: &'static str, x: Vec<usize>, w: Vec<usize>, spec: ConvSpec) -> Case {
    let out = w[0];
    Case {
        name,
        tensors: vec![("x", x), ("weight", w), ("bias", vec![out])],
        training: false,
        build: Box::new(move |ctx, v| conv2d(ctx.graph, v[0], v[1], Some(v[2]), spec)),
    }
}

fn conv_vars(v: &[Var], spec: ConvSpec) -> ConvVars {
    ConvVars { weight: v[0], bias: Some(v[1]), spec }
}

fn bn_vars(v: &[Var], c: usize, path: &str) -> BnVars {
    BnVars { path: path.into(), gamma: v[0], beta: v[1], running: RunningStats::new(c), eps: DEFAULT_EPS }
}

fn cbr_vars(v: &[Var], c: usize, path: &str) -> CbrVars {
    CbrVars { conv: conv_vars(&v[0..2], ConvSpec::default()), bn: bn_vars(&v[2..4], c, path) }
}

fn cbr_tensors(out: usize, inp: usize, k: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![("conv.weight", vec![out, inp, k, k]), ("conv.bias", vec![out]), ("bn.gamma", vec![out]), ("bn.beta", vec![out])]
}

fn with_input(x: Vec<usize>, rest: Vec<(&'static str, Vec<usize>)>) -> Vec<(&'static str, Vec<usize>)> {
    let mut v = vec![("x", x)];
    v.extend(rest);
    v
}

fn layer_cases(seed: u64) -> Vec<Case> {
    let mut cases = vec![
        conv_case("conv_same", vec![2, 2, 5, 5], vec![3, 2, 3, 3], ConvSpec::default()),
        conv_case("conv_stride2", vec![1, 2, 7, 7], vec![2, 2, 3, 3], ConvSpec { stride: 2, ..ConvSpec::default() }),
        conv_case("conv_dilated", vec![1, 2, 7, 7], vec![2, 2, 3, 3], ConvSpec::dilated(2)),
        conv_case("conv_depthwise", vec![1, 2, 6, 6], vec![2, 1, 3, 3], ConvSpec::depthwise(2, 2)),
        conv_case(
            "conv_valid",
            vec![1, 1, 6, 6],
            vec![2, 1, 3, 3],
            ConvSpec { padding: Padding::Explicit(0), ..ConvSpec::default() },
        ),
        conv_case("conv_pointwise", vec![2, 3, 4, 4], vec![2, 3, 1, 1], ConvSpec::default()),
        Case {
            name: "crelu",
            tensors: vec![("x", vec![2, 3, 4, 4])],
            training: false,
            build: Box::new(|ctx, v| Ok(crelu(ctx.graph, v[0]))),
        },
    ];
    for (name, training) in [("batch_norm_train", true), ("batch_norm_eval", false)] {
        cases.push(Case {
            name,
            tensors: vec![("x", vec![3, 2, 3, 3]), ("gamma", vec![2]), ("beta", vec![2])],
            training,
            build: Box::new(move |ctx, v| {
                let running = RunningStats::new(2);
                Ok(batch_norm(ctx.graph, v[0], v[1], v[2], &running, DEFAULT_EPS, training)?.0)
            }),
        });
    }
    cases.push(Case {
        name: "max_pool",
        tensors: vec![("x", vec![2, 2, 6, 6])],
        training: false,
        build: Box::new(|ctx, v| Ok(max_pool(ctx.graph, v[0], 2, 2, DEFAULT_DELTA)?.0)),
    });
    let mut rng = CounterRng::new(split_mix(seed, fnv1a("max_unpool.record")));
    let (_, rec) = complex_max_pool2d(&rand_tensor(&[2, 2, 6, 6], &mut rng), 2, 2, DEFAULT_DELTA).expect("valid pool");
    cases.push(Case {
        name: "max_unpool",
        tensors: vec![("x", vec![2, 2, 3, 3])],
        training: false,
        build: Box::new(move |ctx, v| max_unpool(ctx.graph, v[0], &rec)),
    });
    cases.push(Case {
        name: "cbr",
        tensors: with_input(vec![2, 2, 5, 5], cbr_tensors(3, 2, 3)),
        training: true,
        build: Box::new(|ctx, v| blocks::cbr(ctx, v[0], &cbr_vars(&v[1..5], 3, "bn"))),
    });
    let mut r1 = cbr_tensors(2, 2, 3);
    r1.extend(cbr_tensors(2, 2, 3));
    cases.push(Case {
        name: "residual_block1",
        tensors: with_input(vec![2, 2, 4, 4], r1),
        training: true,
        build: Box::new(|ctx, v| {
            let p = Residual1Vars { first: cbr_vars(&v[1..5], 2, "a"), second: cbr_vars(&v[5..9], 2, "b") };
            blocks::residual1(ctx, v[0], &p)
        }),
    });
    let mut r2 = cbr_tensors(3, 2, 3);
    r2.extend(cbr_tensors(3, 3, 3));
    r2.extend([("proj.weight", vec![3, 2, 1, 1]), ("proj.bias", vec![3]), ("proj_bn.gamma", vec![3]), ("proj_bn.beta", vec![3])]);
    cases.push(Case {
        name: "residual_block2",
        tensors: with_input(vec![2, 2, 4, 4], r2),
        training: true,
        build: Box::new(|ctx, v| {
            let p = Residual2Vars {
                first: cbr_vars(&v[1..5], 3, "a"),
                second: cbr_vars(&v[5..9], 3, "b"),
                proj: conv_vars(&v[9..11], ConvSpec::default()),
                proj_bn: bn_vars(&v[11..13], 3, "c"),
            };
            blocks::residual2(ctx, v[0], &p)
        }),
    });
    cases.push(Case {
        name: "separable_atrous",
        tensors: with_input(
            vec![2, 3, 6, 6],
            vec![("depthwise.weight", vec![3, 1, 3, 3]), ("depthwise.bias", vec![3]), ("pointwise.weight", vec![2, 3, 1, 1]), ("pointwise.bias", vec![2])],
        ),
        training: false,
        build: Box::new(|ctx, v| {
            let p = SeparableVars {
                depthwise: conv_vars(&v[1..3], ConvSpec::depthwise(3, 2)),
                pointwise: conv_vars(&v[3..5], ConvSpec::default()),
            };
            blocks::separable_atrous(ctx, v[0], &p)
        }),
    });
    cases
}

fn loss_case(seed: u64) -> Result<CaseResult> {
    let mut cfg = ModelConfig::with_base_width(1, 1, (4, 4));
    cfg.num_classes = 3;
    let labels = random_labels(&cfg, 2, split_mix(seed, fnv1a("loss.labels")));
    let target = complex_one_hot(&labels.iter().collect::<Vec<_>>(), 3)?;
    let mut rng = CounterRng::new(split_mix(seed, fnv1a("loss.prediction")));
    let pred = rand_tensor(&[2, 3, 4, 4], &mut rng);
    let report = grad_check(
        |g, v| {
            let t = g.constant(target.clone());
            loss_graph(g, t, v[0])
        },
        &[pred],
        STEP,
    )?;
    Ok(CaseResult { name: "loss".into(), report, tensors: vec!["prediction".into()], attempts: 1 })
}

/// Every layer case plus the loss, for one seed.
pub fn layer_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = layer_cases(seed).iter().map(|c| run_case(c, seed)).collect::<Result<Vec<_>>>()?;
    out.push(loss_case(seed)?);
    Ok(out)
}

/// Training-mode loss through the whole network on a batch of two.
pub fn model_case(cfg: &ModelConfig, seed: u64) -> Result<CaseResult> {
    let r = model_grad_check(cfg, 2, seed, STEP, MIN_MARGIN, MAX_ATTEMPTS)?;
    Ok(CaseResult { name: "model".into(), report: r.report, tensors: r.paths, attempts: r.attempts })
}

/// Layer suite followed by the whole-model case.
pub fn full_suite(cfg: &ModelConfig, seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = layer_suite(seed)?;
    out.push(model_case(cfg, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_suite_passes() {
        for seed in 0..2 {
            for r in layer_suite(seed).unwrap() {
                assert!(r.passed(DEFAULT_TOLERANCE), "{} seed {seed}: {:?}", r.name, r.failure_lines(DEFAULT_TOLERANCE));
                assert!(!r.report.coords.is_empty());
            }
        }
    }

    #[test]
    fn failure_lines_name_coordinates() {
        let r = loss_case(0).unwrap();
        assert!(r.failure_lines(1e-300).iter().all(|l| l.starts_with("loss: prediction[")));
        assert!(r.failure_lines(DEFAULT_TOLERANCE).is_empty());
    }
}
