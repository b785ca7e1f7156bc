//! Fully connected networks over a flat parameter buffer.
//!
//! Layer `l` owns `n_in * n_out` weights stored row-major (`W[j, k]` at
//! `j * n_out + k`) followed by `n_out` biases. Keeping every parameter in
//! one contiguous vector lets optimizers, serialization and the variational
//! model treat the network as a single point in parameter space.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{swish_derivative, Activation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Builds a chain of layers from widths `[n_in, h1, ..., n_out]`.
    pub fn chain(widths: &[usize], activations: &[Activation]) -> Result<Self> {
        if widths.len() != activations.len() + 1 || activations.is_empty() {
            return Err(Error::Structural(format!(
                "{} widths cannot carry {} activations",
                widths.len(),
                activations.len()
            )));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| LayerSpec { n_in: w[0], n_out: w[1], activation })
            .collect();
        let arch = Self { layers };
        arch.validate()?;
        Ok(arch)
    }

    /// `n_in -> 150 -> 200 -> 3` with swish, swish, linear.
    pub fn regression(n_in: usize) -> Self {
        Self::chain(&[n_in, 150, 200, 3], &[Activation::Swish, Activation::Swish, Activation::Linear])
            .expect("static architecture")
    }

    /// Shared `n_in -> 150 -> 200` trunk with two `bins`-way softmax heads.
    pub fn classification(n_in: usize, bins: usize) -> Self {
        Self::chain(
            &[n_in, 150, 200, 2 * bins],
            &[Activation::Swish, Activation::Swish, Activation::Softmax { block: bins }],
        )
        .expect("static architecture")
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Structural("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.n_in == 0 || l.n_out == 0 {
                return Err(Error::Structural(format!("layer {i} has a zero dimension")));
            }
            if let Activation::Softmax { block } = l.activation {
                if block == 0 || l.n_out % block != 0 {
                    return Err(Error::Structural(format!(
                        "layer {i}: softmax block {block} does not divide {} outputs",
                        l.n_out
                    )));
                }
                if i + 1 != self.layers.len() {
                    return Err(Error::Structural("softmax is only supported on the output layer".into()));
                }
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].n_out != w[1].n_in {
                return Err(Error::Structural(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    w[0].n_out,
                    i + 1,
                    w[1].n_in
                )));
            }
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(|l| l.n_out).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_in * l.n_out + l.n_out).sum()
    }

    /// Offset of each layer's weight block in the flat buffer.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.n_in * l.n_out + l.n_out;
                o
            })
            .collect()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("validated").activation
    }

    /// He-style uniform weights `U(-sqrt(6 / n_in), sqrt(6 / n_in))`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            let limit = (6.0 / l.n_in as f64).sqrt();
            params.extend((0..l.n_in * l.n_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, l.n_out));
        }
        params
    }
}

fn weight_view<'a>(l: &LayerSpec, params: &'a [f64], off: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let nw = l.n_in * l.n_out;
    let w = ArrayView2::from_shape((l.n_in, l.n_out), &params[off..off + nw]).expect("layout");
    let b = ArrayView1::from(&params[off + nw..off + nw + l.n_out]);
    (w, b)
}

/// Per-layer values retained by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Array2<f64>,
    /// Pre-activations of each layer.
    pub pre: Vec<Array2<f64>>,
    /// Activations of each layer; the last entry is the network output.
    pub post: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("at least one layer")
    }
}

/// Evaluates a batch (one row per example) and keeps the intermediate values.
pub fn forward_trace(arch: &Architecture, params: &[f64], x: ArrayView2<f64>) -> Result<Trace> {
    if params.len() != arch.n_params() {
        return Err(Error::Structural(format!(
            "expected {} parameters, got {}",
            arch.n_params(),
            params.len()
        )));
    }
    if x.ncols() != arch.n_inputs() {
        return Err(Error::Structural(format!(
            "expected {} input features, got {}",
            arch.n_inputs(),
            x.ncols()
        )));
    }
    let mut pre = Vec::with_capacity(arch.layers.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(arch.layers.len());
    for (l, off) in arch.layers.iter().zip(arch.offsets()) {
        let (w, b) = weight_view(l, params, off);
        let input = post.last().map(|a| a.view()).unwrap_or(x);
        let mut z = input.dot(&w);
        z += &b;
        let mut a = z.clone();
        for mut row in a.outer_iter_mut() {
            l.activation.apply_row(row.as_slice_mut().expect("standard layout"));
        }
        pre.push(z);
        post.push(a);
    }
    Ok(Trace { input: x.to_owned(), pre, post })
}

/// Gradient of the loss with respect to every parameter, given the loss
/// gradient with respect to the output layer's pre-activations.
pub fn backward(arch: &Architecture, params: &[f64], trace: &Trace, output_delta: Array2<f64>) -> Vec<f64> {
    let mut grads = vec![0.0; arch.n_params()];
    backward_into(arch, params, trace, output_delta, &mut grads);
    grads
}

pub fn backward_into(
    arch: &Architecture,
    params: &[f64],
    trace: &Trace,
    output_delta: Array2<f64>,
    grads: &mut [f64],
) {
    let offsets = arch.offsets();
    let mut delta = output_delta;
    for li in (0..arch.layers.len()).rev() {
        let l = &arch.layers[li];
        let off = offsets[li];
        let nw = l.n_in * l.n_out;
        let input = if li == 0 { trace.input.view() } else { trace.post[li - 1].view() };
        {
            let (gw, gb) = grads[off..off + nw + l.n_out].split_at_mut(nw);
            let mut gw = ArrayViewMut2::from_shape((l.n_in, l.n_out), gw).expect("layout");
            general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut gw);
            for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
                *g = s;
            }
        }
        if li > 0 {
            let (w, _) = weight_view(l, params, off);
            let mut prev = delta.dot(&w.t());
            match arch.layers[li - 1].activation {
                Activation::Swish => {
                    prev.zip_mut_with(&trace.pre[li - 1], |d, &z| *d *= swish_derivative(z));
                }
                Activation::Linear => {}
                Activation::Softmax { .. } => unreachable!("softmax only on the output layer"),
            }
            delta = prev;
        }
    }
}

/// A deterministic network: architecture plus one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::Structural(format!(
                "architecture needs {} parameters, got {}",
                arch.n_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Structural("non-finite parameter".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let params = arch.init_params(rng);
        Self { arch, params }
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut trace = forward_trace(&self.arch, &self.params, x)?;
        Ok(trace.post.pop().expect("at least one layer"))
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::Structural(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }
}
