//! Central finite-difference gradient checker.

use super::{Graph, Var};
use crate::ctensor::CTensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

/// One checked real coordinate.
#[derive(Clone, Debug)]
pub struct CoordError {
    pub tensor: usize,
    pub index: usize,
    pub part: Part,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn failures(&self, tolerance: f64) -> impl Iterator<Item = &CoordError> {
        self.coords.iter().filter(move |c| !(c.rel_error < tolerance))
    }
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(p+h) − f(p−h)) / 2h`, coordinate by coordinate over the real and
/// imaginary planes of every tensor in `params`.
///
/// The error per coordinate is `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[CTensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    let mut g = Graph::new();
    let leaves: Vec<Var> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = f(&mut g, &leaves)?;
    g.backward(loss)?;
    let analytic: Vec<CTensor> = leaves.iter().map(|&v| g.grad(v).expect("leaf grad").clone()).collect();
    drop(g);

    let eval = |values: &[CTensor]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let leaves: Vec<Var> = values.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let loss = f(&mut g, &leaves)?;
        g.scalar(loss)
    };

    let mut work: Vec<CTensor> = params.to_vec();
    let mut coords = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for t in 0..params.len() {
        for part in [Part::Re, Part::Im] {
            for i in 0..params[t].numel() {
                let orig = coord(&params[t], part, i);
                *coord_mut(&mut work[t], part, i) = orig + step;
                let plus = eval(&work)?;
                *coord_mut(&mut work[t], part, i) = orig - step;
                let minus = eval(&work)?;
                *coord_mut(&mut work[t], part, i) = orig;

                let numeric = (plus - minus) / (2.0 * step);
                let a = coord(&analytic[t], part, i);
                let rel_error = (a - numeric).abs() / numeric.abs().max(1.0);
                max_rel_error = if rel_error.is_nan() { f64::NAN } else { max_rel_error.max(rel_error) };
                coords.push(CoordError { tensor: t, index: i, part, analytic: a, numeric, rel_error });
            }
        }
    }
    Ok(GradCheckReport { max_rel_error, coords })
}

fn coord(t: &CTensor, part: Part, i: usize) -> f64 {
    match part {
        Part::Re => t.re()[i],
        Part::Im => t.im()[i],
    }
}

fn coord_mut(t: &mut CTensor, part: Part, i: usize) -> &mut f64 {
    match part {
        Part::Re => &mut t.re_mut()[i],
        Part::Im => &mut t.im_mut()[i],
    }
}
