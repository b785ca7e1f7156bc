use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Activation {
    Swish,
    Linear,
    /// Softmax applied independently to consecutive blocks of `block` outputs.
    Softmax { block: usize },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x / (1 + exp(-x))`.
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl Activation {
    /// Applies the activation to one row of pre-activations in place.
    pub fn apply_row(&self, row: &mut [f64]) {
        match *self {
            Activation::Swish => row.iter_mut().for_each(|x| *x = swish(*x)),
            Activation::Linear => {}
            Activation::Softmax { block } => row.chunks_mut(block).for_each(softmax_in_place),
        }
    }
}
