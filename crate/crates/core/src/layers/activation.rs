use crate::autodiff::{Backward, Graph, Var};
use crate::ctensor::CTensor;

/// `max(x, 0) + i·max(y, 0)` per element.
pub fn crelu_tensor(z: &CTensor) -> CTensor {
    CTensor::from_parts(
        z.shape().to_vec(),
        z.re().iter().map(|&v| v.max(0.0)).collect(),
        z.im().iter().map(|&v| v.max(0.0)).collect(),
    )
}

struct CreluOp;

impl Backward for CreluOp {
    // Subgradient 0 at exactly 0.
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], _: &CTensor) -> Vec<Option<CTensor>> {
        let z = inputs[0];
        let re = grad.re().iter().zip(z.re()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
        let im = grad.im().iter().zip(z.im()).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect();
        vec![Some(CTensor::from_parts(z.shape().to_vec(), re, im))]
    }
}

/// Notes the smallest nonzero `|x|` or `|y|` as the kink margin. Exact
/// zeros are left out: they come from sums of already clamped parts and
/// stay at zero under small perturbations.
pub fn crelu(g: &mut Graph, z: Var) -> Var {
    let t = g.value(z);
    let margin = t.re().iter().chain(t.im()).filter(|v| **v != 0.0).map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let out = crelu_tensor(t);
    g.note_kink_margin(margin);
    g.apply(&[z], out, CreluOp)
}
