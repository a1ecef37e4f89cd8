//! Composite blocks: CBR, residual blocks 1 and 2, separable atrous conv.
//!
//! Graph-level forms take bound variables and a [`Ctx`] that collects
//! batch-norm batch statistics. The `*_block` functions are pure tensor
//! counterparts built on the same code path.

use crate::autodiff::{add, Graph, Var};
use crate::ctensor::CTensor;
use crate::error::Result;

use super::activation::crelu;
use super::batchnorm::{batch_norm, BatchNormParams, RunningStats};
use super::conv::{conv2d, ConvParams, ConvSpec};

/// Forward-pass context.
pub struct Ctx<'g> {
    pub graph: &'g mut Graph,
    pub training: bool,
    /// Batch statistics of every batch norm run in training mode, by path.
    pub bn_stats: Vec<(String, RunningStats)>,
}

impl<'g> Ctx<'g> {
    pub fn new(graph: &'g mut Graph, training: bool) -> Self {
        Self { graph, training, bn_stats: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Option<Var>,
    pub spec: ConvSpec,
}

#[derive(Clone, Debug)]
pub struct BnVars {
    pub path: String,
    pub gamma: Var,
    pub beta: Var,
    pub running: RunningStats,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct CbrVars {
    pub conv: ConvVars,
    pub bn: BnVars,
}

#[derive(Clone, Debug)]
pub struct Residual1Vars {
    pub first: CbrVars,
    pub second: CbrVars,
}

#[derive(Clone, Debug)]
pub struct Residual2Vars {
    pub first: CbrVars,
    pub second: CbrVars,
    pub proj: ConvVars,
    pub proj_bn: BnVars,
}

#[derive(Clone, Debug)]
pub struct SeparableVars {
    pub depthwise: ConvVars,
    pub pointwise: ConvVars,
}

pub fn conv(ctx: &mut Ctx, x: Var, p: &ConvVars) -> Result<Var> {
    conv2d(ctx.graph, x, p.weight, p.bias, p.spec)
}

pub fn bn(ctx: &mut Ctx, x: Var, p: &BnVars) -> Result<Var> {
    let (y, stats) = batch_norm(ctx.graph, x, p.gamma, p.beta, &p.running, p.eps, ctx.training)?;
    if let Some(s) = stats {
        ctx.bn_stats.push((p.path.clone(), s));
    }
    Ok(y)
}

pub fn cbr(ctx: &mut Ctx, x: Var, p: &CbrVars) -> Result<Var> {
    let y = conv(ctx, x, &p.conv)?;
    let y = bn(ctx, y, &p.bn)?;
    Ok(crelu(ctx.graph, y))
}

/// `crelu(x + cbr(cbr(x)))`.
pub fn residual1(ctx: &mut Ctx, x: Var, p: &Residual1Vars) -> Result<Var> {
    let t = cbr(ctx, x, &p.first)?;
    let t = cbr(ctx, t, &p.second)?;
    let s = add(ctx.graph, x, t)?;
    Ok(crelu(ctx.graph, s))
}

/// `crelu(bn(conv1x1(x)) + cbr(cbr(x)))`.
pub fn residual2(ctx: &mut Ctx, x: Var, p: &Residual2Vars) -> Result<Var> {
    let t = cbr(ctx, x, &p.first)?;
    let t = cbr(ctx, t, &p.second)?;
    let skip = conv(ctx, x, &p.proj)?;
    let skip = bn(ctx, skip, &p.proj_bn)?;
    let s = add(ctx.graph, skip, t)?;
    Ok(crelu(ctx.graph, s))
}

pub fn separable_atrous(ctx: &mut Ctx, x: Var, p: &SeparableVars) -> Result<Var> {
    let y = conv(ctx, x, &p.depthwise)?;
    conv(ctx, y, &p.pointwise)
}

/// Conv and batch-norm parameters of one CBR unit.
#[derive(Clone, Debug, PartialEq)]
pub struct CbrParams {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residual1Params {
    pub first: CbrParams,
    pub second: CbrParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residual2Params {
    pub first: CbrParams,
    pub second: CbrParams,
    pub proj: ConvParams,
    pub proj_bn: BatchNormParams,
}

impl ConvParams {
    /// Binds weight and bias as leaves of `g`.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> ConvVars {
        ConvVars {
            weight: g.leaf(self.weight.clone(), requires_grad),
            bias: self.bias.as_ref().map(|b| g.leaf(b.clone(), requires_grad)),
            spec: self.spec,
        }
    }
}

impl BatchNormParams {
    pub fn bind(&self, g: &mut Graph, path: &str, requires_grad: bool) -> BnVars {
        BnVars {
            path: path.to_string(),
            gamma: g.leaf(self.gamma.clone(), requires_grad),
            beta: g.leaf(self.beta.clone(), requires_grad),
            running: self.running.clone(),
            eps: self.eps,
        }
    }
}

impl CbrParams {
    pub fn bind(&self, g: &mut Graph, path: &str, requires_grad: bool) -> CbrVars {
        CbrVars { conv: self.conv.bind(g, requires_grad), bn: self.bn.bind(g, path, requires_grad) }
    }
}

fn run_pure<F>(z: &CTensor, training: bool, bns: &mut [&mut BatchNormParams], f: F) -> Result<CTensor>
where
    F: FnOnce(&mut Ctx, Var) -> Result<Var>,
{
    let mut g = Graph::no_grad();
    let x = g.constant(z.clone());
    let mut ctx = Ctx::new(&mut g, training);
    let y = f(&mut ctx, x)?;
    let stats = std::mem::take(&mut ctx.bn_stats);
    for (path, s) in stats {
        let i: usize = path.parse().expect("index path");
        bns[i].running.update(&s, bns[i].momentum);
    }
    Ok(g.value(y).clone())
}

/// conv → batch norm → CReLU.
pub fn cbr_block(z: &CTensor, conv_p: &ConvParams, bn_p: &mut BatchNormParams, training: bool) -> Result<CTensor> {
    let cp = CbrParams { conv: conv_p.clone(), bn: bn_p.clone() };
    run_pure(z, training, &mut [bn_p], |ctx, x| {
        let v = cp.bind(ctx.graph, "0", false);
        cbr(ctx, x, &v)
    })
}

pub fn residual_block1(z: &CTensor, p: &mut Residual1Params, training: bool) -> Result<CTensor> {
    let snapshot = p.clone();
    run_pure(z, training, &mut [&mut p.first.bn, &mut p.second.bn], |ctx, x| {
        let v = Residual1Vars {
            first: snapshot.first.bind(ctx.graph, "0", false),
            second: snapshot.second.bind(ctx.graph, "1", false),
        };
        residual1(ctx, x, &v)
    })
}

pub fn residual_block2(z: &CTensor, p: &mut Residual2Params, training: bool) -> Result<CTensor> {
    let snapshot = p.clone();
    run_pure(z, training, &mut [&mut p.first.bn, &mut p.second.bn, &mut p.proj_bn], |ctx, x| {
        let v = Residual2Vars {
            first: snapshot.first.bind(ctx.graph, "0", false),
            second: snapshot.second.bind(ctx.graph, "1", false),
            proj: snapshot.proj.bind(ctx.graph, false),
            proj_bn: snapshot.proj_bn.bind(ctx.graph, "2", false),
        };
        residual2(ctx, x, &v)
    })
}

/// Depthwise dilated conv followed by a 1×1 conv.
pub fn separable_atrous_conv(z: &CTensor, depthwise: &ConvParams, pointwise: &ConvParams) -> Result<CTensor> {
    run_pure(z, false, &mut [], |ctx, x| {
        let v = SeparableVars { depthwise: depthwise.bind(ctx.graph, false), pointwise: pointwise.bind(ctx.graph, false) };
        separable_atrous(ctx, x, &v)
    })
}
