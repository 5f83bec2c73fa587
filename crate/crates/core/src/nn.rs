//! Small dense networks with exact reverse-mode gradients.
//!
//! Weights are stored as `f32`; every forward and backward pass runs in
//! `f64`. Weight matrices are laid out `[input][output]` so the inner loops
//! are contiguous axpy updates.

use rand::Rng;

use crate::error::{check_dim, CvfError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x * sigmoid(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[inputs][outputs]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn fan_in_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (3.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| crate::rng::uniform(rng, -bound, bound) as f32)
            .collect();
        Dense {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().map(|&b| b as f64));
        for (xi, row) in x.iter().zip(self.weight.chunks_exact(self.outputs)) {
            if *xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w as f64;
            }
        }
    }
}

/// Layer inputs and pre-activations recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Gradient buffers, one per parameter tensor, in the order
/// `layer0.weight, layer0.bias, layer1.weight, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_for(shapes: &[usize]) -> Self {
        Gradients {
            tensors: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| t.iter()).all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flat_map(|t| t.iter()).all(|x| *x == 0.0)
    }
}

/// Anything whose trainable state is a list of `f32` tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f32]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f32]>;

    fn tensor_sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn size(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Dense network: SiLU between layers, identity after the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CvfError::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].outputs, pair[1].inputs)?;
        }
        for l in &layers {
            check_dim(l.inputs * l.outputs, l.weight.len())?;
            check_dim(l.outputs, l.bias.len())?;
        }
        Ok(Mlp { layers })
    }

    /// Hidden layers get fan-in uniform weights; the output layer starts at
    /// zero so the initial network maps everything to zero.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(CvfError::InvalidArgument("network needs input and output widths".into()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                if i + 1 == n {
                    Dense::zeros(widths[i], widths[i + 1])
                } else {
                    Dense::fan_in_uniform(widths[i], widths[i + 1], rng)
                }
            })
            .collect();
        Mlp::from_layers(layers)
    }

    /// Every layer fan-in initialised, including the last.
    pub fn new_dense_init(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(CvfError::InvalidArgument("network needs input and output widths".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense::fan_in_uniform(w[0], w[1], rng))
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Mlp::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            Activation::Silu
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            let act = self.activation(i);
            for v in next.iter_mut() {
                *v = act.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        check_dim(self.input_dim(), x.len())?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::new();
            layer.forward_into(&cur, &mut pre);
            let act = self.activation(i);
            let post: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
            tape.inputs.push(cur);
            tape.pre.push(pre);
            cur = post;
        }
        Ok((cur, tape))
    }

    /// Index of the first layer whose recorded values are non-finite.
    pub fn first_non_finite_layer(&self, tape: &Tape) -> Option<usize> {
        tape.pre
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` into
    /// `grads` and returns the gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let act = self.activation(i);
            if act != Activation::Identity {
                for (d, &p) in delta.iter_mut().zip(&tape.pre[i]) {
                    *d *= act.derivative(p);
                }
            }
            let input = &tape.inputs[i];
            let (gw, rest) = grads.tensors[2 * i..].split_at_mut(1);
            let gw = &mut gw[0];
            let gb = &mut rest[0];
            for (g, d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
            let mut d_in = vec![0.0; layer.inputs];
            for (r, (xi, row)) in input
                .iter()
                .zip(layer.weight.chunks_exact(layer.outputs))
                .enumerate()
            {
                let grow = &mut gw[r * layer.outputs..(r + 1) * layer.outputs];
                let mut acc = 0.0;
                for ((g, &w), d) in grow.iter_mut().zip(row).zip(&delta) {
                    *g += xi * d;
                    acc += w as f64 * d;
                }
                d_in[r] = acc;
            }
            delta = d_in;
        }
        delta
    }

    /// Upper bound on the Lipschitz constant: product of layer operator
    /// norms bounded by their Frobenius norms, times the SiLU slope bound.
    pub fn lipschitz_bound(&self) -> f64 {
        const SILU_SLOPE: f64 = 1.1;
        let mut l = 1.0;
        for (i, layer) in self.layers.iter().enumerate() {
            let fro = layer
                .weight
                .iter()
                .map(|&w| (w as f64) * (w as f64))
                .sum::<f64>()
                .sqrt();
            l *= fro;
            if self.activation(i) == Activation::Silu {
                l *= SILU_SLOPE;
            }
        }
        l
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f32]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
