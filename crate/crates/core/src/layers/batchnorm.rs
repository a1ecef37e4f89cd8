//! Complex batch normalization with the real and imaginary parts
//! normalized independently per channel.
//!
//! Running statistics reuse [`CTensor`] planes: the real plane of
//! `running_mean` is the mean of the real parts, the imaginary plane the
//! mean of the imaginary parts, and likewise for `running_var`.

use crate::autodiff::{Backward, Graph, Var};
use crate::ctensor::CTensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: CTensor,
    pub var: CTensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        let mut var = CTensor::zeros(&[channels]);
        let (vr, vi) = var.planes_mut();
        vr.fill(1.0);
        vi.fill(1.0);
        Self { mean: CTensor::zeros(&[channels]), var }
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update(&mut self, batch: &RunningStats, momentum: f64) {
        let blend = |dst: &mut CTensor, src: &CTensor| {
            let (dr, di) = dst.planes_mut();
            for (d, s) in dr.iter_mut().zip(src.re()).chain(di.iter_mut().zip(src.im())) {
                *d = (1.0 - momentum) * *d + momentum * s;
            }
        };
        blend(&mut self.mean, &batch.mean);
        blend(&mut self.var, &batch.var);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: CTensor,
    pub beta: CTensor,
    pub running: RunningStats,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    /// γ = 1 + 1i, β = 0, running mean 0 and variance 1 per part.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: CTensor::full(&[channels], num_complex::Complex64::new(1.0, 1.0)),
            beta: CTensor::zeros(&[channels]),
            running: RunningStats::new(channels),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

/// Population mean and (biased) variance per channel and part.
pub fn batch_stats(z: &CTensor) -> Result<RunningStats> {
    let [n, c, h, w] = z.dims4()?;
    let (mr, vr) = part_stats(z.re(), n, c, h * w);
    let (mi, vi) = part_stats(z.im(), n, c, h * w);
    Ok(RunningStats {
        mean: CTensor::from_parts(vec![c], mr, mi),
        var: CTensor::from_parts(vec![c], vr, vi),
    })
}

fn part_stats(src: &[f64], n: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * plane) as f64;
    let mut means = Vec::with_capacity(c);
    let mut vars = Vec::with_capacity(c);
    for ch in 0..c {
        let rows = || (0..n).flat_map(move |b| src[(b * c + ch) * plane..][..plane].iter());
        let mu = rows().sum::<f64>() / count;
        let var = rows().map(|x| (x - mu) * (x - mu)).sum::<f64>() / count;
        means.push(mu);
        vars.push(var);
    }
    (means, vars)
}

struct BnOp {
    /// Normalized input x̂, real and imaginary planes.
    xhat: CTensor,
    /// 1/sqrt(var + eps) per channel, per part.
    inv_std: CTensor,
    training: bool,
}

impl BnOp {
    /// Adjoint for one part: returns (dx, dγ, dβ).
    fn part(&self, g: &[f64], xh: &[f64], gamma: &[f64], inv: &[f64], dims: [usize; 4]) -> [Vec<f64>; 3] {
        let [n, c, h, w] = dims;
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut dx = vec![0.0; g.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let ranges = || (0..n).map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for r in ranges() {
                sum_g += g[r.clone()].iter().sum::<f64>();
                sum_gx += g[r.clone()].iter().zip(&xh[r]).map(|(a, b)| a * b).sum::<f64>();
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let k = gamma[ch] * inv[ch];
            let (mg, mgx) = (sum_g / count, sum_gx / count);
            for r in ranges() {
                for i in r {
                    dx[i] = if self.training { k * (g[i] - mg - xh[i] * mgx) } else { k * g[i] };
                }
            }
        }
        [dx, dgamma, dbeta]
    }
}

impl Backward for BnOp {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let gamma = inputs[1];
        let dims = grad.dims4().expect("bn grad is NCHW");
        let [dxr, dgr, dbr] = self.part(grad.re(), self.xhat.re(), gamma.re(), self.inv_std.re(), dims);
        let [dxi, dgi, dbi] = self.part(grad.im(), self.xhat.im(), gamma.im(), self.inv_std.im(), dims);
        let c = dims[1];
        vec![
            Some(CTensor::from_parts(grad.shape().to_vec(), dxr, dxi)),
            Some(CTensor::from_parts(vec![c], dgr, dgi)),
            Some(CTensor::from_parts(vec![c], dbr, dbi)),
        ]
    }
}

/// Differentiable batch norm. In training mode the batch statistics are
/// used and returned so the caller can fold them into the running stats.
pub fn batch_norm(
    g: &mut Graph,
    z: Var,
    gamma: Var,
    beta: Var,
    running: &RunningStats,
    eps: f64,
    training: bool,
) -> Result<(Var, Option<RunningStats>)> {
    let x = g.value(z);
    let [n, c, h, w] = x.dims4()?;
    if g.value(gamma).shape() != [c] || g.value(beta).shape() != [c] || running.mean.shape() != [c] {
        return Err(Error::Shape(format!("batch norm parameters do not match {c} channels")));
    }
    let batch = if training { Some(batch_stats(x)?) } else { None };
    let stats = batch.as_ref().unwrap_or(running);
    let plane = h * w;
    let mut inv_std = CTensor::zeros(&[c]);
    {
        let (ir, ii) = inv_std.planes_mut();
        for ch in 0..c {
            ir[ch] = 1.0 / (stats.var.re()[ch] + eps).sqrt();
            ii[ch] = 1.0 / (stats.var.im()[ch] + eps).sqrt();
        }
    }
    let mut xhat = CTensor::zeros(x.shape());
    let mut out = CTensor::zeros(x.shape());
    let (gm, bt) = (g.value(gamma), g.value(beta));
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            let (mr, mi) = (stats.mean.re()[ch], stats.mean.im()[ch]);
            let (sr, si) = (inv_std.re()[ch], inv_std.im()[ch]);
            for i in r {
                let xr = (x.re()[i] - mr) * sr;
                let xi = (x.im()[i] - mi) * si;
                xhat.re_mut()[i] = xr;
                xhat.im_mut()[i] = xi;
                out.re_mut()[i] = gm.re()[ch] * xr + bt.re()[ch];
                out.im_mut()[i] = gm.im()[ch] * xi + bt.im()[ch];
            }
        }
    }
    let v = g.apply(&[z, gamma, beta], out, BnOp { xhat, inv_std, training });
    Ok((v, batch))
}

/// Non-differentiable convenience form; updates running stats when training.
pub fn complex_batch_norm(z: &CTensor, p: &mut BatchNormParams, training: bool) -> Result<CTensor> {
    let mut g = Graph::no_grad();
    let (x, gm, bt) = (g.constant(z.clone()), g.constant(p.gamma.clone()), g.constant(p.beta.clone()));
    let (y, batch) = batch_norm(&mut g, x, gm, bt, &p.running, p.eps, training)?;
    if let Some(batch) = batch {
        p.running.update(&batch, p.momentum);
    }
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, herm_dot, cmul, sum_all, real_part};
    use crate::rng::CounterRng;
    use num_complex::Complex64;

    fn rand_tensor(shape: &[usize], seed: u64) -> CTensor {
        let mut rng = CounterRng::new(seed);
        let n: usize = shape.iter().product();
        let re = (0..n).map(|_| rng.range(-2.0, 2.0)).collect();
        let im = (0..n).map(|_| rng.range(-2.0, 2.0)).collect();
        CTensor::new(shape.to_vec(), re, im).unwrap()
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let z = rand_tensor(&[2, 3, 2, 2], 1);
        let mut p = BatchNormParams::new(3);
        p.gamma = CTensor::zeros(&[3]);
        p.beta = CTensor::from_complex(vec![3], &[Complex64::new(0.5, -1.0), Complex64::new(2.0, 0.0), Complex64::new(-3.0, 3.0)]).unwrap();
        let out = complex_batch_norm(&z, &mut p, true).unwrap();
        for (i, v) in out.iter().enumerate() {
            let ch = (i / 4) % 3;
            assert_eq!(v, p.beta.get(ch));
        }
    }

    #[test]
    fn hand_example() {
        let z = CTensor::from_complex(vec![2, 1, 1, 1], &[Complex64::new(1.0, 2.0), Complex64::new(3.0, 2.0)]).unwrap();
        let mut p = BatchNormParams::new(1);
        p.eps = 1e-12;
        let out = complex_batch_norm(&z, &mut p, true).unwrap();
        assert!((out.re()[0] + 1.0).abs() < 1e-9 && (out.re()[1] - 1.0).abs() < 1e-9);
        assert_eq!(out.im(), &[0.0, 0.0]);
    }

    #[test]
    fn inference_with_batch_stats_matches_training() {
        let z = rand_tensor(&[3, 2, 3, 3], 2);
        let mut p = BatchNormParams::new(2);
        p.gamma = rand_tensor(&[2], 3);
        p.beta = rand_tensor(&[2], 4);
        let train = complex_batch_norm(&z, &mut p.clone(), true).unwrap();
        p.running = batch_stats(&z).unwrap();
        let infer = complex_batch_norm(&z, &mut p, false).unwrap();
        assert!(train.max_abs_diff(&infer) <= 1e-14);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let z = rand_tensor(&[2, 1, 2, 2], 5);
        let mut p = BatchNormParams::new(1);
        complex_batch_norm(&z, &mut p, true).unwrap();
        let b = batch_stats(&z).unwrap();
        assert!((p.running.mean.re()[0] - 0.1 * b.mean.re()[0]).abs() < 1e-15);
        assert!((p.running.var.im()[0] - (0.9 + 0.1 * b.var.im()[0])).abs() < 1e-15);
        assert!(p.running.var.re()[0] >= 0.0);
        // Inference leaves them alone.
        let before = p.running.clone();
        complex_batch_norm(&z, &mut p, false).unwrap();
        assert_eq!(p.running, before);
    }

    #[test]
    fn gradients_both_modes() {
        let running = RunningStats { mean: rand_tensor(&[2], 6), var: CTensor::full(&[2], Complex64::new(0.7, 1.3)) };
        for training in [true, false] {
            let params = vec![rand_tensor(&[2, 2, 3, 2], 7), rand_tensor(&[2], 8), rand_tensor(&[2], 9), rand_tensor(&[2, 2, 3, 2], 10)];
            let running = running.clone();
            let report = grad_check(
                move |g, v| {
                    let (y, _) = batch_norm(g, v[0], v[1], v[2], &running, DEFAULT_EPS, training)?;
                    let p = cmul(g, y, v[3])?;
                    let s = sum_all(g, p);
                    let d = herm_dot(g, s, s)?;
                    Ok(real_part(g, d))
                },
                &params,
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "training={training}: {}", report.max_rel_error);
        }
    }
}
