//! Complex one-hot targets, the complex error, the real loss and decoding.

use num_complex::Complex64;

use crate::autodiff::{herm_dot, real_part, scale, sub, Graph, Var};
use crate::ctensor::CTensor;
use crate::error::{Error, Result};

/// Per-pixel class codes in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("{} labels for a {height}x{width} map", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self { height, width, data: vec![class; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        self.data[row * self.width + col] = class;
    }
}

const ON: Complex64 = Complex64::new(1.0, 1.0);
const OFF: Complex64 = Complex64::new(-1.0, -1.0);

/// `1 + 1i` on the labelled class channel, `−1 − 1i` elsewhere. Output is
/// `N×K×H×W` for `N` maps.
pub fn complex_one_hot(labels: &[&LabelMap], num_classes: usize) -> Result<CTensor> {
    let first = labels.first().ok_or_else(|| Error::Shape("no label maps".into()))?;
    let (h, w) = (first.height, first.width);
    let plane = h * w;
    let mut out = CTensor::full(&[labels.len(), num_classes, h, w], OFF);
    for (n, l) in labels.iter().enumerate() {
        if (l.height, l.width) != (h, w) {
            return Err(Error::Shape(format!("label map {}x{} vs {h}x{w}", l.height, l.width)));
        }
        for (p, &c) in l.data.iter().enumerate() {
            if c as usize >= num_classes {
                return Err(Error::Label { label: c as usize, num_classes });
            }
            out.set((n * num_classes + c as usize) * plane + p, ON);
        }
    }
    Ok(out)
}

/// `target − prediction`.
pub fn complex_error(target: &CTensor, prediction: &CTensor) -> Result<CTensor> {
    if target.shape() != prediction.shape() {
        return Err(Error::Shape(format!("target {:?} vs prediction {:?}", target.shape(), prediction.shape())));
    }
    target.sub(prediction)
}

/// `E = Re(eᴴe) / 2n` with `n` the number of complex elements.
pub fn real_loss(e: &CTensor) -> f64 {
    let n = e.numel().max(1) as f64;
    e.herm_dot(e).expect("same shape").re / (2.0 * n)
}

/// Differentiable `real_loss(target − prediction)`.
pub fn loss_graph(g: &mut Graph, target: Var, prediction: Var) -> Result<Var> {
    let n = g.value(prediction).numel().max(1) as f64;
    let e = sub(g, target, prediction)?;
    let d = herm_dot(g, e, e)?;
    let s = scale(g, d, 1.0 / (2.0 * n));
    Ok(real_part(g, s))
}

fn decode_with(output: &CTensor, plane_of: impl Fn(&CTensor) -> &[f64]) -> Result<Vec<LabelMap>> {
    let [n, k, h, w] = output.dims4()?;
    if k == 0 {
        return Err(Error::Shape("no class channels".into()));
    }
    let vals = plane_of(output);
    let plane = h * w;
    Ok((0..n)
        .map(|b| {
            let data = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..k {
                        if vals[(b * k + c) * plane + p] > vals[(b * k + best) * plane + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap { height: h, width: w, data }
        })
        .collect())
}

/// Argmax over class channels of the real parts; ties go to the lowest class.
pub fn decode_predictions(output: &CTensor) -> Result<Vec<LabelMap>> {
    decode_with(output, |t| t.re())
}

/// Same rule on the imaginary parts.
pub fn decode_predictions_imag(output: &CTensor) -> Result<Vec<LabelMap>> {
    decode_with(output, |t| t.im())
}
