//! Elementary differentiable operations on complex tensors.

use num_complex::Complex64;

use super::{Backward, Graph, Var};
use crate::ctensor::CTensor;
use crate::error::{Error, Result};

struct AddOp {
    sign: f64,
}

impl Backward for AddOp {
    fn backward(&self, grad: &CTensor, _: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        vec![Some(grad.clone()), Some(grad.scale(self.sign))]
    }
}

pub fn add(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let out = same_shape(g, a, b)?.0.add(g.value(b))?;
    Ok(g.apply(&[a, b], out, AddOp { sign: 1.0 }))
}

pub fn sub(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let out = same_shape(g, a, b)?.0.sub(g.value(b))?;
    Ok(g.apply(&[a, b], out, AddOp { sign: -1.0 }))
}

fn same_shape(g: &Graph, a: Var, b: Var) -> Result<(&CTensor, &CTensor)> {
    let (ta, tb) = (g.value(a), g.value(b));
    if ta.shape() != tb.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", ta.shape(), tb.shape())));
    }
    Ok((ta, tb))
}

struct ScaleOp(f64);

impl Backward for ScaleOp {
    fn backward(&self, grad: &CTensor, _: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        vec![Some(grad.scale(self.0))]
    }
}

/// Multiplies by a real constant.
pub fn scale(g: &mut Graph, a: Var, k: f64) -> Var {
    let out = g.value(a).scale(k);
    g.apply(&[a], out, ScaleOp(k))
}

struct CmulOp;

// c = a·b. For upstream (gR, gI):
// ∂/∂aR = gR·bR + gI·bI, ∂/∂aI = −gR·bI + gI·bR, symmetric in b.
fn cmul_adjoint(grad: &CTensor, other: &CTensor) -> CTensor {
    let n = grad.numel();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let scalar = other.numel() == 1 && n > 1;
    for i in 0..n {
        let j = if scalar { 0 } else { i };
        let (gr, gi, br, bi) = (grad.re()[i], grad.im()[i], other.re()[j], other.im()[j]);
        re[i] = gr * br + gi * bi;
        im[i] = -gr * bi + gi * br;
    }
    CTensor::from_parts(grad.shape().to_vec(), re, im)
}

fn reduce_to(t: CTensor, shape: &[usize]) -> CTensor {
    if t.shape() == shape {
        return t;
    }
    let re: f64 = t.re().iter().sum();
    let im: f64 = t.im().iter().sum();
    CTensor::from_parts(shape.to_vec(), vec![re], vec![im])
}

impl Backward for CmulOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let da = reduce_to(cmul_adjoint(grad, b), a.shape());
        let db = reduce_to(cmul_adjoint(grad, a), b.shape());
        vec![Some(da), Some(db)]
    }
}

/// Elementwise complex product; either side may be a rank-0 scalar.
pub fn cmul(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let out = g.value(a).cmul(g.value(b))?;
    Ok(g.apply(&[a, b], out, CmulOp))
}

struct HermDotOp;

impl Backward for HermDotOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        // f = Σ conj(a)·b; fR = Σ aR bR + aI bI, fI = Σ aR bI − aI bR.
        let (a, b) = (inputs[0], inputs[1]);
        let (gr, gi) = (grad.re()[0], grad.im()[0]);
        let n = a.numel();
        let (mut ar, mut ai, mut br, mut bi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..n {
            ar[k] = gr * b.re()[k] + gi * b.im()[k];
            ai[k] = gr * b.im()[k] - gi * b.re()[k];
            br[k] = gr * a.re()[k] - gi * a.im()[k];
            bi[k] = gr * a.im()[k] + gi * a.re()[k];
        }
        vec![
            Some(CTensor::from_parts(a.shape().to_vec(), ar, ai)),
            Some(CTensor::from_parts(b.shape().to_vec(), br, bi)),
        ]
    }
}

/// Σ conj(aᵢ)·bᵢ as a rank-0 complex node.
pub fn herm_dot(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let z = g.value(a).herm_dot(g.value(b))?;
    Ok(g.apply(&[a, b], CTensor::scalar(z), HermDotOp))
}

struct RealPartOp;

impl Backward for RealPartOp {
    fn backward(&self, grad: &CTensor, _: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let zeros = vec![0.0; grad.numel()];
        vec![Some(CTensor::from_parts(grad.shape().to_vec(), grad.re().to_vec(), zeros))]
    }
}

/// Keeps the real part and zeroes the imaginary part.
pub fn real_part(g: &mut Graph, a: Var) -> Var {
    let t = g.value(a);
    let out = CTensor::from_parts(t.shape().to_vec(), t.re().to_vec(), vec![0.0; t.numel()]);
    g.apply(&[a], out, RealPartOp)
}

struct SumOp;

impl Backward for SumOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        vec![Some(CTensor::full(inputs[0].shape(), Complex64::new(grad.re()[0], grad.im()[0])))]
    }
}

pub fn sum_all(g: &mut Graph, a: Var) -> Var {
    let t = g.value(a);
    let z = Complex64::new(t.re().iter().sum(), t.im().iter().sum());
    g.apply(&[a], CTensor::scalar(z), SumOp)
}

struct ConcatOp {
    channels: Vec<usize>,
}

impl Backward for ConcatOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let [n, c_total, h, w] = grad.dims4().expect("concat grad is NCHW");
        let plane = h * w;
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for &c in &self.channels {
            let mut re = Vec::with_capacity(n * c * plane);
            let mut im = Vec::with_capacity(n * c * plane);
            for b in 0..n {
                let start = (b * c_total + offset) * plane;
                let end = start + c * plane;
                re.extend_from_slice(&grad.re()[start..end]);
                im.extend_from_slice(&grad.im()[start..end]);
            }
            out.push(Some(CTensor::from_parts(vec![n, c, h, w], re, im)));
            offset += c;
        }
        out
    }
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    let first = g.value(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?).dims4()?;
    let mut channels = Vec::with_capacity(parts.len());
    for &p in parts {
        let [n, c, h, w] = g.value(p).dims4()?;
        if n != first[0] || h != first[2] || w != first[3] {
            return Err(Error::Shape(format!("concat {:?} with {:?}", g.value(p).shape(), first)));
        }
        channels.push(c);
    }
    let c_total: usize = channels.iter().sum();
    let [n, _, h, w] = first;
    let plane = h * w;
    let mut re = Vec::with_capacity(n * c_total * plane);
    let mut im = Vec::with_capacity(re.capacity());
    for b in 0..n {
        for (&p, &c) in parts.iter().zip(&channels) {
            let t = g.value(p);
            let start = b * c * plane;
            re.extend_from_slice(&t.re()[start..start + c * plane]);
            im.extend_from_slice(&t.im()[start..start + c * plane]);
        }
    }
    let out = CTensor::from_parts(vec![n, c_total, h, w], re, im);
    Ok(g.apply(parts, out, ConcatOp { channels }))
}
