//! Direct complex convolution built from four real cross-correlations.
//!
//! With `W = W_R + iW_I` and `I = I_R + iI_I`:
//!
//! ```text
//! out_R = W_R ⋆ I_R − W_I ⋆ I_I + b_R
//! out_I = W_R ⋆ I_I + W_I ⋆ I_R + b_I
//! ```

use crate::autodiff::{Backward, Graph, Var};
use crate::ctensor::CTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `dilation·(k−1)/2` on every side; preserves size at stride 1 for odd k.
    Same,
    Explicit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
    /// 1 for dense convolution, `channels` for depthwise.
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { stride: 1, dilation: 1, padding: Padding::Same, groups: 1 }
    }
}

impl ConvSpec {
    pub fn dilated(dilation: usize) -> Self {
        Self { dilation, ..Self::default() }
    }

    pub fn depthwise(channels: usize, dilation: usize) -> Self {
        Self { dilation, groups: channels, ..Self::default() }
    }

    pub fn pad_for(&self, k: usize) -> usize {
        match self.padding {
            Padding::Same => self.dilation * (k - 1) / 2,
            Padding::Explicit(p) => p,
        }
    }
}

/// Weights `(out_ch, in_ch / groups, k, k)` and optional bias `(out_ch)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: CTensor,
    pub bias: Option<CTensor>,
    pub spec: ConvSpec,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    dil: usize,
    pad: usize,
    groups: usize,
}

impl Geom {
    pub(crate) fn new(input: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<Self> {
        let [n, c, h, w] = match *input {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::Shape(format!("conv input must be NCHW, got {input:?}"))),
        };
        let [o, cpg, kh, kw] = match *weight {
            [o, cpg, kh, kw] => [o, cpg, kh, kw],
            _ => return Err(Error::Shape(format!("conv weight must be OCKK, got {weight:?}"))),
        };
        if kh != kw {
            return Err(Error::Shape(format!("square kernels only, got {kh}x{kw}")));
        }
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return Err(Error::Config("stride, dilation and groups must be ≥ 1".into()));
        }
        if c % spec.groups != 0 || o % spec.groups != 0 || cpg * spec.groups != c {
            return Err(Error::Shape(format!(
                "channel mismatch: input {c}, weight {o}x{cpg}, groups {}",
                spec.groups
            )));
        }
        let k = kh;
        let pad = spec.pad_for(k);
        let extent = spec.dilation * (k - 1) + 1;
        if h + 2 * pad < extent || w + 2 * pad < extent {
            return Err(Error::Shape(format!("input {h}x{w} smaller than kernel extent {extent}")));
        }
        let oh = (h + 2 * pad - extent) / spec.stride + 1;
        let ow = (w + 2 * pad - extent) / spec.stride + 1;
        Ok(Self { n, c, h, w, o, k, oh, ow, stride: spec.stride, dil: spec.dilation, pad, groups: spec.groups })
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.oh, self.ow]
    }

    /// Output positions `lo..hi` whose tap `t` lands inside `0..len`.
    fn valid(&self, t: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = if self.pad > t { (self.pad - t).div_ceil(self.stride) } else { 0 };
        let hi = if len + self.pad > t { ((len - 1 + self.pad - t) / self.stride + 1).min(out_len) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// `out += alpha · (w ⋆ x)`.
fn corr_forward(x: &[f64], w: &[f64], out: &mut [f64], g: &Geom, alpha: f64) {
    let (cpg, opg) = (g.c / g.groups, g.o / g.groups);
    let (k, s) = (g.k, g.stride);
    for b in 0..g.n {
        for oc in 0..g.o {
            let grp = oc / opg;
            let out_plane = &mut out[(b * g.o + oc) * g.oh * g.ow..][..g.oh * g.ow];
            for ci in 0..cpg {
                let ic = grp * cpg + ci;
                let x_plane = &x[(b * g.c + ic) * g.h * g.w..][..g.h * g.w];
                for kh in 0..k {
                    let (oy_lo, oy_hi) = g.valid(kh * g.dil, g.h, g.oh);
                    for kw in 0..k {
                        let wv = alpha * w[((oc * cpg + ci) * k + kh) * k + kw];
                        let (ox_lo, ox_hi) = g.valid(kw * g.dil, g.w, g.ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + kh * g.dil - g.pad;
                            let xrow = &x_plane[iy * g.w..(iy + 1) * g.w];
                            let orow = &mut out_plane[oy * g.ow..(oy + 1) * g.ow];
                            let ix0 = ox_lo * s + kw * g.dil - g.pad;
                            if s == 1 {
                                let len = ox_hi - ox_lo;
                                for (o, xv) in orow[ox_lo..ox_hi].iter_mut().zip(&xrow[ix0..ix0 + len]) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (j, o) in orow[ox_lo..ox_hi].iter_mut().enumerate() {
                                    *o += wv * xrow[ix0 + j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `dx += alpha · (wᵀ ⋆ grad)`, the adjoint of [`corr_forward`] in `x`.
fn corr_backward_input(grad: &[f64], w: &[f64], dx: &mut [f64], g: &Geom, alpha: f64) {
    let (cpg, opg) = (g.c / g.groups, g.o / g.groups);
    let (k, s) = (g.k, g.stride);
    for b in 0..g.n {
        for oc in 0..g.o {
            let grp = oc / opg;
            let g_plane = &grad[(b * g.o + oc) * g.oh * g.ow..][..g.oh * g.ow];
            for ci in 0..cpg {
                let ic = grp * cpg + ci;
                let dx_plane = &mut dx[(b * g.c + ic) * g.h * g.w..][..g.h * g.w];
                for kh in 0..k {
                    let (oy_lo, oy_hi) = g.valid(kh * g.dil, g.h, g.oh);
                    for kw in 0..k {
                        let wv = alpha * w[((oc * cpg + ci) * k + kh) * k + kw];
                        let (ox_lo, ox_hi) = g.valid(kw * g.dil, g.w, g.ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + kh * g.dil - g.pad;
                            let grow = &g_plane[oy * g.ow..(oy + 1) * g.ow];
                            let drow = &mut dx_plane[iy * g.w..(iy + 1) * g.w];
                            let ix0 = ox_lo * s + kw * g.dil - g.pad;
                            if s == 1 {
                                let len = ox_hi - ox_lo;
                                for (d, gv) in drow[ix0..ix0 + len].iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                    *d += wv * gv;
                                }
                            } else {
                                for (j, gv) in grow[ox_lo..ox_hi].iter().enumerate() {
                                    drow[ix0 + j * s] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `dw += alpha · Σ grad · x` over batch and output positions.
fn corr_backward_weight(grad: &[f64], x: &[f64], dw: &mut [f64], g: &Geom, alpha: f64) {
    let (cpg, opg) = (g.c / g.groups, g.o / g.groups);
    let (k, s) = (g.k, g.stride);
    for b in 0..g.n {
        for oc in 0..g.o {
            let grp = oc / opg;
            let g_plane = &grad[(b * g.o + oc) * g.oh * g.ow..][..g.oh * g.ow];
            for ci in 0..cpg {
                let ic = grp * cpg + ci;
                let x_plane = &x[(b * g.c + ic) * g.h * g.w..][..g.h * g.w];
                for kh in 0..k {
                    let (oy_lo, oy_hi) = g.valid(kh * g.dil, g.h, g.oh);
                    for kw in 0..k {
                        let (ox_lo, ox_hi) = g.valid(kw * g.dil, g.w, g.ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + kh * g.dil - g.pad;
                            let grow = &g_plane[oy * g.ow..(oy + 1) * g.ow];
                            let xrow = &x_plane[iy * g.w..(iy + 1) * g.w];
                            let ix0 = ox_lo * s + kw * g.dil - g.pad;
                            if s == 1 {
                                let len = ox_hi - ox_lo;
                                acc += grow[ox_lo..ox_hi].iter().zip(&xrow[ix0..ix0 + len]).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                acc += grow[ox_lo..ox_hi].iter().enumerate().map(|(j, gv)| gv * xrow[ix0 + j * s]).sum::<f64>();
                            }
                        }
                        dw[((oc * cpg + ci) * k + kh) * k + kw] += alpha * acc;
                    }
                }
            }
        }
    }
}

fn check_bias(bias: Option<&CTensor>, o: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [o] => Err(Error::Shape(format!("bias {:?} for {o} output channels", b.shape()))),
        _ => Ok(()),
    }
}

fn forward_raw(input: &CTensor, weight: &CTensor, bias: Option<&CTensor>, g: &Geom) -> CTensor {
    let mut out = CTensor::zeros(&g.out_shape());
    let (or, oi) = out.planes_mut();
    corr_forward(input.re(), weight.re(), or, g, 1.0);
    corr_forward(input.im(), weight.im(), or, g, -1.0);
    corr_forward(input.im(), weight.re(), oi, g, 1.0);
    corr_forward(input.re(), weight.im(), oi, g, 1.0);
    if let Some(b) = bias {
        let plane = g.oh * g.ow;
        for n in 0..g.n {
            for oc in 0..g.o {
                let range = (n * g.o + oc) * plane..(n * g.o + oc + 1) * plane;
                or[range.clone()].iter_mut().for_each(|v| *v += b.re()[oc]);
                oi[range].iter_mut().for_each(|v| *v += b.im()[oc]);
            }
        }
    }
    out
}

/// Complex 2-D convolution on an NCHW tensor.
pub fn complex_conv2d(input: &CTensor, p: &ConvParams) -> Result<CTensor> {
    let g = Geom::new(input.shape(), p.weight.shape(), &p.spec)?;
    check_bias(p.bias.as_ref(), g.o)?;
    Ok(forward_raw(input, &p.weight, p.bias.as_ref(), &g))
}

struct ConvOp {
    geom: Geom,
    has_bias: bool,
}

impl Backward for ConvOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let g = &self.geom;
        let (x, w) = (inputs[0], inputs[1]);
        let (gr, gi) = (grad.re(), grad.im());

        let mut dx = CTensor::zeros(x.shape());
        {
            let (dr, di) = dx.planes_mut();
            corr_backward_input(gr, w.re(), dr, g, 1.0);
            corr_backward_input(gi, w.im(), dr, g, 1.0);
            corr_backward_input(gr, w.im(), di, g, -1.0);
            corr_backward_input(gi, w.re(), di, g, 1.0);
        }
        let mut dw = CTensor::zeros(w.shape());
        {
            let (dr, di) = dw.planes_mut();
            corr_backward_weight(gr, x.re(), dr, g, 1.0);
            corr_backward_weight(gi, x.im(), dr, g, 1.0);
            corr_backward_weight(gr, x.im(), di, g, -1.0);
            corr_backward_weight(gi, x.re(), di, g, 1.0);
        }
        let mut out = vec![Some(dx), Some(dw)];
        if self.has_bias {
            let plane = g.oh * g.ow;
            let mut br = vec![0.0; g.o];
            let mut bi = vec![0.0; g.o];
            for n in 0..g.n {
                for oc in 0..g.o {
                    let range = (n * g.o + oc) * plane..(n * g.o + oc + 1) * plane;
                    br[oc] += gr[range.clone()].iter().sum::<f64>();
                    bi[oc] += gi[range].iter().sum::<f64>();
                }
            }
            out.push(Some(CTensor::from_parts(vec![g.o], br, bi)));
        }
        out
    }
}

/// Differentiable complex convolution.
pub fn conv2d(graph: &mut Graph, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
    let geom = Geom::new(graph.value(input).shape(), graph.value(weight).shape(), &spec)?;
    check_bias(bias.map(|b| graph.value(b)), geom.o)?;
    let out = forward_raw(graph.value(input), graph.value(weight), bias.map(|b| graph.value(b)), &geom);
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(graph.apply(&inputs, out, ConvOp { geom, has_bias: bias.is_some() }))
}
