//! Complex tensors stored as two row-major `f64` planes, plus the `CXT1`
//! binary container used for datasets, checkpoints and prediction dumps.

mod container;

pub use container::{read_container, write_container, ContainerError, Entry, TensorContainer};

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// N-dimensional complex array with separate real and imaginary planes.
///
/// A rank-0 tensor (empty shape) holds a single scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct CTensor {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// N-dimensional real array, used for phase maps, labels and magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct RTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("dimensions must be positive, got {shape:?}")));
    }
    Ok(())
}

/// Full-plane angle in (−π, π]; the origin maps to 0.
pub fn angle(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let a = im.atan2(re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

impl CTensor {
    pub fn new(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let n = numel_of(&shape);
        if re.len() != n || im.len() != n {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got real {} / imag {}",
                re.len(),
                im.len()
            )));
        }
        if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { shape, re, im })
    }

    /// Builds a tensor without validation. Callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Self {
        debug_assert_eq!(re.len(), numel_of(&shape));
        debug_assert_eq!(im.len(), re.len());
        Self { shape, re, im }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel_of(shape);
        Self::from_parts(shape.to_vec(), vec![0.0; n], vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: Complex64) -> Self {
        let n = numel_of(shape);
        Self::from_parts(shape.to_vec(), vec![value.re; n], vec![value.im; n])
    }

    pub fn scalar(value: Complex64) -> Self {
        Self::from_parts(Vec::new(), vec![value.re], vec![value.im])
    }

    /// Lifts a real tensor to complex with a zero imaginary plane.
    pub fn from_real(real: &RTensor) -> Self {
        Self::from_parts(real.shape.clone(), real.data.clone(), vec![0.0; real.data.len()])
    }

    pub fn from_complex(shape: Vec<usize>, values: &[Complex64]) -> Result<Self> {
        let re = values.iter().map(|z| z.re).collect();
        let im = values.iter().map(|z| z.im).collect();
        Self::new(shape, re, im)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        (self.shape, self.re, self.im)
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, i: usize, z: Complex64) {
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn iter(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.re.iter().zip(&self.im).map(|(&r, &i)| Complex64::new(r, i))
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel_of(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Interprets the tensor as NCHW.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::Shape(format!("expected NCHW tensor, got {:?}", self.shape))),
        }
    }

    pub fn real_part(&self) -> RTensor {
        RTensor::from_parts(self.shape.clone(), self.re.clone())
    }

    pub fn imag_part(&self) -> RTensor {
        RTensor::from_parts(self.shape.clone(), self.im.clone())
    }

    pub fn conj(&self) -> Self {
        Self::from_parts(self.shape.clone(), self.re.clone(), self.im.iter().map(|v| -v).collect())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.shape == other.shape {
            let (re, im) = self.iter().zip(other.iter()).map(|(a, b)| f(a, b)).map(|z| (z.re, z.im)).unzip();
            Ok(Self::from_parts(self.shape.clone(), re, im))
        } else if other.numel() == 1 && other.shape.is_empty() {
            let b = other.get(0);
            let (re, im) = self.iter().map(|a| f(a, b)).map(|z| (z.re, z.im)).unzip();
            Ok(Self::from_parts(self.shape.clone(), re, im))
        } else if self.numel() == 1 && self.shape.is_empty() {
            let a = self.get(0);
            let (re, im) = other.iter().map(|b| f(a, b)).map(|z| (z.re, z.im)).unzip();
            Ok(Self::from_parts(other.shape.clone(), re, im))
        } else {
            Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)))
        }
    }

    /// Elementwise complex product; either operand may be a rank-0 scalar.
    pub fn cmul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| {
            Complex64::new(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::from_parts(
            self.shape.clone(),
            self.re.iter().map(|v| v * k).collect(),
            self.im.iter().map(|v| v * k).collect(),
        )
    }

    /// Hermitian inner product Σ conj(aᵢ)·bᵢ.
    pub fn herm_dot(&self, other: &Self) -> Result<Complex64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..self.numel() {
            let (ar, ai, br, bi) = (self.re[i], self.im[i], other.re[i], other.im[i]);
            re += ar * br + ai * bi;
            im += ar * bi - ai * br;
        }
        Ok(Complex64::new(re, im))
    }

    /// Magnitudes and angles in (−π, π]; the angle of 0 is 0.
    pub fn to_polar(&self) -> (RTensor, RTensor) {
        let mags = self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect();
        let angles = self.re.iter().zip(&self.im).map(|(&r, &i)| angle(r, i)).collect();
        (
            RTensor::from_parts(self.shape.clone(), mags),
            RTensor::from_parts(self.shape.clone(), angles),
        )
    }

    pub fn from_polar(mags: &RTensor, angles: &RTensor) -> Result<Self> {
        if mags.shape != angles.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", mags.shape, angles.shape)));
        }
        let re = mags.data.iter().zip(&angles.data).map(|(r, t)| r * t.cos()).collect();
        let im = mags.data.iter().zip(&angles.data).map(|(r, t)| r * t.sin()).collect();
        Ok(Self::from_parts(mags.shape.clone(), re, im))
    }

    /// Stacks tensors of identical shape along a new leading axis.
    pub fn stack(items: &[&CTensor]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut re = Vec::with_capacity(first.numel() * items.len());
        let mut im = Vec::with_capacity(re.capacity());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::Shape(format!("{:?} vs {:?}", t.shape, first.shape)));
            }
            re.extend_from_slice(&t.re);
            im.extend_from_slice(&t.im);
        }
        Ok(Self::from_parts(shape, re, im))
    }

    /// Largest absolute per-part difference; used by tests and tolerance checks.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl RTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        if data.len() != numel_of(&shape) {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel_of(&shape),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), numel_of(&shape));
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; numel_of(shape)])
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel_of(shape) != self.numel() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn one(z: Complex64) -> CTensor {
        CTensor::from_complex(vec![1], &[z]).unwrap()
    }

    #[test]
    fn polar_examples() {
        let t = CTensor::from_complex(vec![3], &[c(1.0, 0.0), c(1.0, 1.0), c(0.0, 0.0)]).unwrap();
        let (m, a) = t.to_polar();
        assert_eq!(m.data()[0], 1.0);
        assert_eq!(a.data()[0], 0.0);
        assert!((m.data()[1] - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((a.data()[1] - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!((m.data()[2], a.data()[2]), (0.0, 0.0));
    }

    #[test]
    fn angle_stays_in_half_open_range() {
        assert_eq!(angle(-1.0, -0.0), PI);
        assert_eq!(angle(-1.0, 0.0), PI);
        assert_eq!(angle(-0.0, 0.0), 0.0);
    }

    #[test]
    fn cmul_examples() {
        let z = one(c(1.0, 2.0));
        assert_eq!(one(c(1.0, 0.0)).cmul(&z).unwrap(), z);
        assert_eq!(one(c(0.0, 1.0)).cmul(&z).unwrap().get(0), c(-2.0, 1.0));
        let w = one(c(3.0, 4.0));
        assert_eq!(w.conj().cmul(&w).unwrap().get(0), c(25.0, 0.0));
    }

    #[test]
    fn cmul_rejects_mismatched_shapes() {
        let a = CTensor::zeros(&[2]);
        let b = CTensor::zeros(&[3]);
        assert!(matches!(a.cmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn herm_dot_examples() {
        let a = one(c(1.0, 1.0));
        assert_eq!(a.herm_dot(&a).unwrap(), c(2.0, 0.0));
        let z = CTensor::zeros(&[4]);
        assert_eq!(z.herm_dot(&z).unwrap(), c(0.0, 0.0));
        let b = CTensor::from_complex(vec![2], &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert_eq!(b.herm_dot(&b).unwrap(), c(2.0, 0.0));
    }

    #[test]
    fn constructors_validate() {
        assert!(matches!(CTensor::new(vec![2], vec![0.0; 2], vec![0.0; 1]), Err(Error::Shape(_))));
        assert!(matches!(CTensor::new(vec![1], vec![f64::NAN], vec![0.0]), Err(Error::NonFinite)));
        assert!(matches!(CTensor::new(vec![0], vec![], vec![]), Err(Error::Shape(_))));
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e3..1e3f64
    }

    proptest! {
        #[test]
        fn polar_round_trip(x in finite(), y in finite()) {
            let t = one(c(x, y));
            let (m, a) = t.to_polar();
            let back = CTensor::from_polar(&m, &a).unwrap();
            prop_assert!((back.re()[0] - x).abs() < 1e-12 * (1.0 + x.abs().max(y.abs())));
            prop_assert!((back.im()[0] - y).abs() < 1e-12 * (1.0 + x.abs().max(y.abs())));
            prop_assert!(a.data()[0] > -PI && a.data()[0] <= PI);
        }

        #[test]
        fn cmul_commutes_and_associates(a in (finite(), finite()), b in (finite(), finite()), d in (finite(), finite())) {
            let (a, b, d) = (one(c(a.0, a.1)), one(c(b.0, b.1)), one(c(d.0, d.1)));
            prop_assert_eq!(a.cmul(&b).unwrap(), b.cmul(&a).unwrap());
            let lhs = a.cmul(&b).unwrap().cmul(&d).unwrap();
            let rhs = a.cmul(&b.cmul(&d).unwrap()).unwrap();
            let scale = 1.0 + lhs.get(0).norm();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * scale);
            prop_assert_eq!(one(c(1.0, 0.0)).cmul(&a).unwrap(), a);
        }

        #[test]
        fn herm_dot_self_is_real_nonnegative(v in proptest::collection::vec((finite(), finite()), 1..32)) {
            let zs: Vec<_> = v.iter().map(|&(r, i)| c(r, i)).collect();
            let t = CTensor::from_complex(vec![zs.len()], &zs).unwrap();
            let d = t.herm_dot(&t).unwrap();
            prop_assert!(d.im.abs() <= 1e-12);
            prop_assert!(d.re >= 0.0);
        }
    }
}
