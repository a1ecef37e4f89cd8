//! Magnitude-and-phase max pooling and index-driven unpooling.
//!
//! Each element `z = r·e^{iθ}` is ranked by
//!
//! ```text
//! score(z) = r² + 1/r² + 2·cos 2θ   if r > δ
//!            r²        + 2·cos 2θ   otherwise
//! ```
//!
//! which is `|z + 1/z|²` above the threshold. The window maximum of the
//! score picks which original complex element is emitted; the emitted
//! value itself is never modified. Scores carry no gradient.

use num_complex::Complex64;

use crate::autodiff::{Backward, Graph, Var};
use crate::ctensor::{angle, CTensor};
use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1.0;

/// FLOPs charged per scored element in the complexity report.
pub const SCORE_FLOPS: u64 = 8;

pub fn pool_score(z: Complex64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    let r2 = z.re * z.re + z.im * z.im;
    let phase_term = 2.0 * (2.0 * angle(z.re, z.im)).cos();
    if r2.sqrt() > delta {
        r2 + 1.0 / r2 + phase_term
    } else {
        r2 + phase_term
    }
}

/// Argmax positions recorded by [`complex_max_pool2d`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolRecord {
    pub window: usize,
    pub stride: usize,
    pub input_shape: [usize; 4],
    pub output_shape: [usize; 4],
    /// Flat index into the pooled input for every output element.
    pub indices: Vec<usize>,
}

impl PoolRecord {
    /// True when every index lies inside its own window.
    pub fn is_consistent(&self) -> bool {
        let [n, c, oh, ow] = self.output_shape;
        let [_, _, h, w] = self.input_shape;
        if self.indices.len() != n * c * oh * ow {
            return false;
        }
        self.indices.iter().enumerate().all(|(o, &idx)| {
            let (plane_o, pos) = (o / (oh * ow), o % (oh * ow));
            let (oy, ox) = (pos / ow, pos % ow);
            let (plane_i, ipos) = (idx / (h * w), idx % (h * w));
            let (iy, ix) = (ipos / w, ipos % w);
            plane_i == plane_o
                && (oy * self.stride..oy * self.stride + self.window).contains(&iy)
                && (ox * self.stride..ox * self.stride + self.window).contains(&ix)
        })
    }
}

struct PoolResult {
    out: CTensor,
    record: PoolRecord,
    margin: f64,
}

fn pool_forward(z: &CTensor, window: usize, stride: usize, delta: f64) -> Result<PoolResult> {
    let [n, c, h, w] = z.dims4()?;
    if window == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be ≥ 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Config(format!("pool delta must be positive, got {delta}")));
    }
    if h < window || w < window {
        return Err(Error::Shape(format!("input {h}x{w} smaller than pool window {window}")));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = CTensor::zeros(&[n, c, oh, ow]);
    let mut indices = Vec::with_capacity(n * c * oh * ow);
    let mut margin = f64::INFINITY;
    let mut scores = Vec::with_capacity(window * window);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                scores.clear();
                let mut best: Option<(usize, f64)> = None;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        let zi = z.get(idx);
                        let s = pool_score(zi, delta);
                        margin = margin.min((zi.norm() - delta).abs());
                        scores.push((idx, s));
                        if best.is_none_or(|(_, b)| s > b) {
                            best = Some((idx, s));
                        }
                    }
                }
                let (bi, bs) = best.expect("non-empty window");
                let bz = z.get(bi);
                // Elements equal to the winner cannot change the emitted value.
                for &(idx, s) in &scores {
                    if z.get(idx) != bz {
                        margin = margin.min(bs - s);
                    }
                }
                out.set(indices.len(), bz);
                indices.push(bi);
            }
        }
    }
    let record = PoolRecord { window, stride, input_shape: [n, c, h, w], output_shape: [n, c, oh, ow], indices };
    Ok(PoolResult { out, record, margin })
}

/// Pools each window to its highest-scoring element. Ties go to the first
/// element in row-major window order.
pub fn complex_max_pool2d(z: &CTensor, window: usize, stride: usize, delta: f64) -> Result<(CTensor, PoolRecord)> {
    let r = pool_forward(z, window, stride, delta)?;
    Ok((r.out, r.record))
}

/// Scatters `z` into zeros at the recorded positions.
pub fn complex_max_unpool2d(z: &CTensor, rec: &PoolRecord, out_shape: &[usize]) -> Result<CTensor> {
    if z.shape() != rec.output_shape {
        return Err(Error::Shape(format!("unpool input {:?} vs record {:?}", z.shape(), rec.output_shape)));
    }
    let mut out = CTensor::zeros(out_shape);
    let limit = out.numel();
    for (o, &idx) in rec.indices.iter().enumerate() {
        if idx >= limit {
            return Err(Error::Shape(format!("pool index {idx} out of range for {out_shape:?}")));
        }
        let (or, oi) = out.planes_mut();
        or[idx] += z.re()[o];
        oi[idx] += z.im()[o];
    }
    Ok(out)
}

struct PoolOp {
    indices: Vec<usize>,
}

impl Backward for PoolOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let mut dz = CTensor::zeros(inputs[0].shape());
        let (dr, di) = dz.planes_mut();
        for (o, &idx) in self.indices.iter().enumerate() {
            dr[idx] += grad.re()[o];
            di[idx] += grad.im()[o];
        }
        vec![Some(dz)]
    }
}

/// Differentiable pooling; the gradient routes to the selected elements.
pub fn max_pool(g: &mut Graph, z: Var, window: usize, stride: usize, delta: f64) -> Result<(Var, PoolRecord)> {
    let r = pool_forward(g.value(z), window, stride, delta)?;
    g.note_kink_margin(r.margin);
    let v = g.apply(&[z], r.out, PoolOp { indices: r.record.indices.clone() });
    Ok((v, r.record))
}

struct UnpoolOp {
    indices: Vec<usize>,
}

impl Backward for UnpoolOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let shape = inputs[0].shape().to_vec();
        let re = self.indices.iter().map(|&i| grad.re()[i]).collect();
        let im = self.indices.iter().map(|&i| grad.im()[i]).collect();
        vec![Some(CTensor::from_parts(shape, re, im))]
    }
}

pub fn max_unpool(g: &mut Graph, z: Var, rec: &PoolRecord) -> Result<Var> {
    let out = complex_max_unpool2d(g.value(z), rec, &rec.input_shape)?;
    Ok(g.apply(&[z], out, UnpoolOp { indices: rec.indices.clone() }))
}
