//! Network assembly: master, slave and phase encoders, ASPP, the
//! index-driven decoder and the 1×1 head.
//!
//! Dataflow for `S` stages with widths `w_0 … w_{S−1}`:
//!
//! ```text
//! master ─ stage_0 ─(+)─ stage_1 ─(+)─ … ─ ASPP ─ unpool/CBR × S ─┐
//! slave  ─ stage_0 ──┘   stage_1 ──┘                              concat ─ head
//! phase  ─ stem CBR ─ residual 1 ─ residual 2 ────────────────────┘
//! ```
//!
//! An encoder stage is CBR 3×3 → 1×1 conv → CReLU → complex max pool. The
//! master stage's pool indices drive the mirrored decoder stage.

mod checkpoint;
mod complexity;
mod config;
mod gradcheck;

pub use checkpoint::Checkpoint;
pub use complexity::{
    complexity_rows, conv_params, count_flops, count_params, model_size_bytes, report_text, ComplexityRow, FlopConstants, PaperReference, FLOPS,
    PAPER_REFERENCE,
};
pub use config::ModelConfig;
pub use gradcheck::{model_grad_check, random_inputs, random_labels, ModelGradCheck};

use std::collections::BTreeMap;

use crate::autodiff::{add, concat_channels, Graph, Var};
use crate::ctensor::{CTensor, RTensor};
use crate::error::{Error, Result};
use crate::layers::batchnorm::{BatchNormParams, RunningStats, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::layers::blocks::{self, BnVars, CbrVars, ConvVars, Ctx, Residual1Vars, Residual2Vars, SeparableVars};
use crate::layers::conv::ConvSpec;
use crate::layers::pool::{max_pool, max_unpool, PoolRecord};
use crate::layers::activation::crelu;
use crate::rng::{fnv1a, split_mix, CounterRng};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub path: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub spec: ConvSpec,
}

impl ConvLayer {
    fn new(path: impl Into<String>, in_ch: usize, out_ch: usize, k: usize, spec: ConvSpec) -> Self {
        Self { path: path.into(), in_ch, out_ch, k, spec }
    }

    pub fn weight_path(&self) -> String {
        format!("{}.weight", self.path)
    }

    pub fn bias_path(&self) -> String {
        format!("{}.bias", self.path)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch / self.spec.groups, self.k, self.k]
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch / self.spec.groups * self.k * self.k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnLayer {
    pub path: String,
    pub ch: usize,
}

impl BnLayer {
    fn new(path: impl Into<String>, ch: usize) -> Self {
        Self { path: path.into(), ch }
    }

    pub fn gamma_path(&self) -> String {
        format!("{}.gamma", self.path)
    }

    pub fn beta_path(&self) -> String {
        format!("{}.beta", self.path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbrLayer {
    pub conv: ConvLayer,
    pub bn: BnLayer,
}

impl CbrLayer {
    fn new(path: &str, in_ch: usize, out_ch: usize, k: usize) -> Self {
        Self {
            conv: ConvLayer::new(format!("{path}.conv"), in_ch, out_ch, k, ConvSpec::default()),
            bn: BnLayer::new(format!("{path}.bn"), out_ch),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage {
    pub cbr: CbrLayer,
    pub pointwise: ConvLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseEncoder {
    pub stem: CbrLayer,
    pub block1: [CbrLayer; 2],
    pub block2: [CbrLayer; 2],
    pub proj: ConvLayer,
    pub proj_bn: BnLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsppBranch {
    pub dilation: usize,
    pub depthwise: ConvLayer,
    pub pointwise: ConvLayer,
    pub bn: BnLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aspp {
    pub atrous: Vec<AsppBranch>,
    pub pointwise: CbrLayer,
    pub merge: CbrLayer,
}

impl Aspp {
    pub fn branch_count(&self) -> usize {
        self.atrous.len() + 1
    }
}

/// Every parameterized layer of the network, derived from a config.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub master: Vec<EncoderStage>,
    pub slave: Option<Vec<EncoderStage>>,
    pub phase: PhaseEncoder,
    pub aspp: Aspp,
    pub decoder: Vec<CbrLayer>,
    pub head: ConvLayer,
}

fn encoder(name: &str, widths: &[usize]) -> Vec<EncoderStage> {
    let mut in_ch = 1;
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let p = format!("{name}.stage{i}");
            let stage = EncoderStage {
                cbr: CbrLayer::new(&format!("{p}.cbr"), in_ch, w, 3),
                pointwise: ConvLayer::new(format!("{p}.pointwise"), w, w, 1, ConvSpec::default()),
            };
            in_ch = w;
            stage
        })
        .collect()
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let widths = &c.stage_widths;
        let b = c.base_width();
        let top = *widths.last().expect("validated widths");
        let phase = PhaseEncoder {
            stem: CbrLayer::new("phase.stem", 1, b, 3),
            block1: [CbrLayer::new("phase.block1.first", b, b, 3), CbrLayer::new("phase.block1.second", b, b, 3)],
            block2: [CbrLayer::new("phase.block2.first", b, b, 3), CbrLayer::new("phase.block2.second", b, b, 3)],
            proj: ConvLayer::new("phase.block2.proj", b, b, 1, ConvSpec::default()),
            proj_bn: BnLayer::new("phase.block2.proj_bn", b),
        };
        let atrous = c
            .aspp_dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| AsppBranch {
                dilation: d,
                depthwise: ConvLayer::new(format!("aspp.branch{i}.depthwise"), top, top, 3, ConvSpec::depthwise(top, d)),
                pointwise: ConvLayer::new(format!("aspp.branch{i}.pointwise"), top, top, 1, ConvSpec::default()),
                bn: BnLayer::new(format!("aspp.branch{i}.bn"), top),
            })
            .collect::<Vec<_>>();
        let branches = atrous.len() + 1;
        let aspp = Aspp {
            atrous,
            pointwise: CbrLayer::new("aspp.pointwise", top, top, 1),
            merge: CbrLayer::new("aspp.merge", branches * top, top, 1),
        };
        let s = widths.len();
        let decoder = (0..s)
            .map(|k| {
                let level = s - 1 - k;
                let out = widths[level.saturating_sub(1)];
                CbrLayer::new(&format!("decoder.stage{k}"), widths[level], out, 3)
            })
            .collect();
        Self {
            master: encoder("master", widths),
            slave: c.fuse_slave.then(|| encoder("slave", widths)),
            phase,
            aspp,
            decoder,
            head: ConvLayer::new("head", 2 * b, c.num_classes, 1, ConvSpec::default()),
        }
    }

    pub fn conv_layers(&self) -> Vec<&ConvLayer> {
        let mut v = Vec::new();
        for st in self.master.iter().chain(self.slave.iter().flatten()) {
            v.push(&st.cbr.conv);
            v.push(&st.pointwise);
        }
        let ph = &self.phase;
        v.push(&ph.stem.conv);
        v.extend(ph.block1.iter().chain(&ph.block2).map(|c| &c.conv));
        v.push(&ph.proj);
        for br in &self.aspp.atrous {
            v.push(&br.depthwise);
            v.push(&br.pointwise);
        }
        v.push(&self.aspp.pointwise.conv);
        v.push(&self.aspp.merge.conv);
        v.extend(self.decoder.iter().map(|c| &c.conv));
        v.push(&self.head);
        v
    }

    pub fn bn_layers(&self) -> Vec<&BnLayer> {
        let mut v = Vec::new();
        for st in self.master.iter().chain(self.slave.iter().flatten()) {
            v.push(&st.cbr.bn);
        }
        let ph = &self.phase;
        v.push(&ph.stem.bn);
        v.extend(ph.block1.iter().chain(&ph.block2).map(|c| &c.bn));
        v.push(&ph.proj_bn);
        v.extend(self.aspp.atrous.iter().map(|b| &b.bn));
        v.push(&self.aspp.pointwise.bn);
        v.push(&self.aspp.merge.bn);
        v.extend(self.decoder.iter().map(|c| &c.bn));
        v
    }
}

/// Named parameters and batch-norm running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub params: BTreeMap<String, CTensor>,
    pub buffers: BTreeMap<String, RunningStats>,
}

impl ParamSet {
    pub fn get(&self, path: &str) -> Result<&CTensor> {
        self.params.get(path).ok_or_else(|| Error::Config(format!("missing parameter {path}")))
    }

    /// Real scalars across all trainable parameters.
    pub fn real_scalar_count(&self) -> usize {
        self.params.values().map(|p| 2 * p.numel()).sum()
    }

    /// Real scalars held in batch-norm running statistics.
    pub fn buffer_scalar_count(&self) -> usize {
        self.buffers.values().map(|b| 2 * (b.mean.numel() + b.var.numel())).sum()
    }
}

/// Binds [`ParamSet`] entries as graph leaves, remembering each variable.
pub struct Binder<'a> {
    set: &'a ParamSet,
    requires_grad: bool,
    bound: BTreeMap<String, Var>,
    pub vars: Vec<(String, Var)>,
}

impl<'a> Binder<'a> {
    pub fn new(set: &'a ParamSet, requires_grad: bool) -> Self {
        Self { set, requires_grad, bound: BTreeMap::new(), vars: Vec::new() }
    }

    /// Uses the given graph variables in place of the stored values for
    /// the listed paths.
    pub fn with_bound(set: &'a ParamSet, bound: BTreeMap<String, Var>) -> Self {
        Self { set, requires_grad: false, bound, vars: Vec::new() }
    }

    fn param(&mut self, g: &mut Graph, path: String) -> Result<Var> {
        let v = match self.bound.get(&path) {
            Some(&v) => v,
            None => g.leaf(self.set.get(&path)?.clone(), self.requires_grad),
        };
        self.vars.push((path, v));
        Ok(v)
    }

    fn conv(&mut self, g: &mut Graph, l: &ConvLayer) -> Result<ConvVars> {
        Ok(ConvVars { weight: self.param(g, l.weight_path())?, bias: Some(self.param(g, l.bias_path())?), spec: l.spec })
    }

    fn bn(&mut self, g: &mut Graph, l: &BnLayer) -> Result<BnVars> {
        let running = self
            .set
            .buffers
            .get(&l.path)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no running statistics for {}", l.path)))?;
        Ok(BnVars {
            path: l.path.clone(),
            gamma: self.param(g, l.gamma_path())?,
            beta: self.param(g, l.beta_path())?,
            running,
            eps: DEFAULT_EPS,
        })
    }

    fn cbr(&mut self, g: &mut Graph, l: &CbrLayer) -> Result<CbrVars> {
        Ok(CbrVars { conv: self.conv(g, &l.conv)?, bn: self.bn(g, &l.bn)? })
    }
}

/// Model inputs for a batch of `N` samples, each `N×1×H×W`.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub master: CTensor,
    pub slave: CTensor,
    pub phase: RTensor,
}

#[derive(Clone, Debug)]
pub struct Fc2mfn {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamSet,
}

fn init_weight(seed: u64, l: &ConvLayer) -> CTensor {
    let mut rng = CounterRng::new(split_mix(seed, fnv1a(&l.weight_path())));
    let shape = l.weight_shape();
    let n: usize = shape.iter().product();
    let s = (1.0 / l.fan_in() as f64).sqrt();
    let re: Vec<f64> = (0..n).map(|_| rng.range(-s, s)).collect();
    let im: Vec<f64> = (0..n).map(|_| rng.range(-s, s)).collect();
    CTensor::from_parts(shape.to_vec(), re, im)
}

impl Fc2mfn {
    /// Initializes every weight from its own stream keyed by the seed and
    /// the parameter path, so adding or removing a sub-network does not
    /// perturb the others.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = ParamSet::default();
        for l in layout.conv_layers() {
            params.params.insert(l.weight_path(), init_weight(seed, l));
            params.params.insert(l.bias_path(), CTensor::zeros(&[l.out_ch]));
        }
        for l in layout.bn_layers() {
            let bn = BatchNormParams::new(l.ch);
            params.params.insert(l.gamma_path(), bn.gamma);
            params.params.insert(l.beta_path(), bn.beta);
            params.buffers.insert(l.path.clone(), bn.running);
        }
        Ok(Self { config, layout, params })
    }

    pub fn num_real_params(&self) -> usize {
        self.params.real_scalar_count()
    }

    fn check_inputs(&self, x: &Inputs) -> Result<usize> {
        let (h, w) = self.config.image_size;
        let n = x.master.shape().first().copied().unwrap_or(0);
        let want = [n, 1, h, w];
        for (name, shape) in [("master", x.master.shape()), ("slave", x.slave.shape()), ("phase", x.phase.shape())] {
            if shape != want || n == 0 {
                return Err(Error::Shape(format!("{name} input {shape:?}, expected {want:?}")));
            }
        }
        Ok(n)
    }

    fn stage(ctx: &mut Ctx, b: &mut Binder, st: &EncoderStage, x: Var, cfg: &ModelConfig) -> Result<(Var, PoolRecord)> {
        let cbr = b.cbr(ctx.graph, &st.cbr)?;
        let pw = b.conv(ctx.graph, &st.pointwise)?;
        let y = blocks::cbr(ctx, x, &cbr)?;
        let y = blocks::conv(ctx, y, &pw)?;
        let y = crelu(ctx.graph, y);
        max_pool(ctx.graph, y, cfg.pool_window, cfg.pool_stride, cfg.delta)
    }

    /// Outputs of the atrous branches and the 1×1 branch, before the merge.
    pub fn aspp_branches(&self, ctx: &mut Ctx, b: &mut Binder, x: Var) -> Result<Vec<Var>> {
        let a = &self.layout.aspp;
        let mut outs = Vec::with_capacity(a.branch_count());
        for br in &a.atrous {
            let v = SeparableVars { depthwise: b.conv(ctx.graph, &br.depthwise)?, pointwise: b.conv(ctx.graph, &br.pointwise)? };
            let bn = b.bn(ctx.graph, &br.bn)?;
            let y = blocks::separable_atrous(ctx, x, &v)?;
            let y = blocks::bn(ctx, y, &bn)?;
            outs.push(crelu(ctx.graph, y));
        }
        let pw = b.cbr(ctx.graph, &a.pointwise)?;
        outs.push(blocks::cbr(ctx, x, &pw)?);
        Ok(outs)
    }

    /// Atrous pyramid over the bottleneck features.
    pub fn aspp(&self, ctx: &mut Ctx, b: &mut Binder, x: Var) -> Result<Var> {
        let outs = self.aspp_branches(ctx, b, x)?;
        let cat = concat_channels(ctx.graph, &outs)?;
        let merge = b.cbr(ctx.graph, &self.layout.aspp.merge)?;
        blocks::cbr(ctx, cat, &merge)
    }

    fn phase_encoder(&self, ctx: &mut Ctx, b: &mut Binder, x: Var) -> Result<Var> {
        let ph = &self.layout.phase;
        let stem = b.cbr(ctx.graph, &ph.stem)?;
        let r1 = Residual1Vars { first: b.cbr(ctx.graph, &ph.block1[0])?, second: b.cbr(ctx.graph, &ph.block1[1])? };
        let r2 = Residual2Vars {
            first: b.cbr(ctx.graph, &ph.block2[0])?,
            second: b.cbr(ctx.graph, &ph.block2[1])?,
            proj: b.conv(ctx.graph, &ph.proj)?,
            proj_bn: b.bn(ctx.graph, &ph.proj_bn)?,
        };
        let y = blocks::cbr(ctx, x, &stem)?;
        let y = blocks::residual1(ctx, y, &r1)?;
        blocks::residual2(ctx, y, &r2)
    }

    /// Builds the forward graph. `master`, `slave` and `phase` must already
    /// be nodes of `ctx.graph`.
    pub fn forward_graph(&self, ctx: &mut Ctx, b: &mut Binder, master: Var, slave: Var, phase: Var) -> Result<Var> {
        let cfg = &self.config;
        let mut m = master;
        let mut s = slave;
        let mut records = Vec::with_capacity(cfg.stages());
        for (i, st) in self.layout.master.iter().enumerate() {
            let (mv, rec) = Self::stage(ctx, b, st, m, cfg)?;
            records.push(rec);
            m = match &self.layout.slave {
                Some(slave_stages) => {
                    let (sv, _) = Self::stage(ctx, b, &slave_stages[i], s, cfg)?;
                    s = sv;
                    add(ctx.graph, mv, sv)?
                }
                None => mv,
            };
        }
        let mut d = self.aspp(ctx, b, m)?;
        for (k, l) in self.layout.decoder.iter().enumerate() {
            let rec = &records[records.len() - 1 - k];
            d = max_unpool(ctx.graph, d, rec)?;
            let v = b.cbr(ctx.graph, l)?;
            d = blocks::cbr(ctx, d, &v)?;
        }
        let p = self.phase_encoder(ctx, b, phase)?;
        let cat = concat_channels(ctx.graph, &[d, p])?;
        let head = b.conv(ctx.graph, &self.layout.head)?;
        blocks::conv(ctx, cat, &head)
    }

    /// Pure forward pass. In training mode batch statistics are used and
    /// returned alongside the output.
    pub fn forward_with_stats(&self, x: &Inputs, training: bool) -> Result<(CTensor, Vec<(String, RunningStats)>)> {
        self.check_inputs(x)?;
        let mut g = Graph::no_grad();
        let (m, s, p) = (g.constant(x.master.clone()), g.constant(x.slave.clone()), g.constant(CTensor::from_real(&x.phase)));
        let mut b = Binder::new(&self.params, false);
        let mut ctx = Ctx::new(&mut g, training);
        let out = self.forward_graph(&mut ctx, &mut b, m, s, p)?;
        let stats = std::mem::take(&mut ctx.bn_stats);
        Ok((g.value(out).clone(), stats))
    }

    pub fn forward(&self, x: &Inputs, training: bool) -> Result<CTensor> {
        Ok(self.forward_with_stats(x, training)?.0)
    }

    /// Differentiable forward pass for training and gradient checks.
    pub fn forward_train<'a>(&'a self, g: &mut Graph, x: &Inputs, training: bool) -> Result<(Var, Binder<'a>, Vec<(String, RunningStats)>)> {
        self.check_inputs(x)?;
        let (m, s, p) = (g.constant(x.master.clone()), g.constant(x.slave.clone()), g.constant(CTensor::from_real(&x.phase)));
        let mut b = Binder::new(&self.params, true);
        let mut ctx = Ctx::new(g, training);
        let out = self.forward_graph(&mut ctx, &mut b, m, s, p)?;
        let stats = std::mem::take(&mut ctx.bn_stats);
        Ok((out, b, stats))
    }

    /// Folds batch statistics into the running statistics.
    pub fn apply_bn_stats(&mut self, stats: &[(String, RunningStats)]) {
        for (path, s) in stats {
            if let Some(r) = self.params.buffers.get_mut(path) {
                r.update(s, DEFAULT_MOMENTUM);
            }
        }
    }
}
