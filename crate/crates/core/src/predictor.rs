//! The next-block predictor `z_theta(z_t, t)`.
//!
//! A dense network reads the flattened noisy block concatenated with a
//! sinusoidal embedding of `t` and predicts the clean shifted block.

use rand::Rng;

use crate::error::{check_dim, CvfError, Result};
use crate::nn::{Gradients, Mlp, Parameters};
use crate::process::{LatentBlock, ProcessTime};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeEmbedding {
    pub num_frequencies: usize,
    pub max_freq_log2: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        TimeEmbedding {
            num_frequencies: 16,
            max_freq_log2: 20.0,
        }
    }
}

impl TimeEmbedding {
    pub fn dim(&self) -> usize {
        2 * self.num_frequencies
    }

    /// Log-spaced frequencies from 1 to `2^max_freq_log2`.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.num_frequencies;
        (0..n)
            .map(|i| {
                let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                (self.max_freq_log2 * frac).exp2()
            })
            .collect()
    }

    /// `[sin(2 pi f_i t) ..., cos(2 pi f_i t) ...]`.
    pub fn embed(&self, t: ProcessTime) -> Vec<f64> {
        let freqs = self.frequencies();
        let tau = std::f64::consts::TAU * t.get();
        let mut out = Vec::with_capacity(self.dim());
        out.extend(freqs.iter().map(|f| (tau * f).sin()));
        out.extend(freqs.iter().map(|f| (tau * f).cos()));
        out
    }
}

pub fn time_embed(t: ProcessTime, cfg: &TimeEmbedding) -> Vec<f64> {
    cfg.embed(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    block_len: usize,
    latent_dim: usize,
    embedding: TimeEmbedding,
    net: Mlp,
}

impl PredictorParams {
    /// `depth` hidden layers of width `hidden`.
    pub fn new(
        block_len: usize,
        latent_dim: usize,
        hidden: usize,
        depth: usize,
        embedding: TimeEmbedding,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let widths = predictor_widths(block_len, latent_dim, hidden, depth, &embedding);
        let net = Mlp::new(&widths, rng)?;
        PredictorParams::from_net(block_len, latent_dim, embedding, net)
    }

    pub fn from_net(
        block_len: usize,
        latent_dim: usize,
        embedding: TimeEmbedding,
        net: Mlp,
    ) -> Result<Self> {
        if block_len == 0 || latent_dim == 0 {
            return Err(CvfError::InvalidArgument("block length and latent dim must be > 0".into()));
        }
        check_dim(block_len * latent_dim + embedding.dim(), net.input_dim())?;
        check_dim(block_len * latent_dim, net.output_dim())?;
        Ok(PredictorParams {
            block_len,
            latent_dim,
            embedding,
            net,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn input_vector(&self, z_t: &LatentBlock, t: ProcessTime) -> Result<Vec<f64>> {
        check_dim(self.block_len, z_t.len())?;
        check_dim(self.latent_dim, z_t.dim())?;
        let mut x = z_t.flatten();
        x.extend(self.embedding.embed(t));
        Ok(x)
    }

    /// Predicted clean shifted block.
    pub fn forward(&self, z_t: &LatentBlock, t: ProcessTime) -> Result<LatentBlock> {
        let x = self.input_vector(z_t, t)?;
        let y = self.net.forward(&x)?;
        LatentBlock::from_flat(&y, self.block_len, self.latent_dim)
    }

    /// Weighted squared error `weight * ||target - forward(z_t, t)||^2` and its
    /// exact parameter gradient.
    pub fn backward(
        &self,
        z_t: &LatentBlock,
        t: ProcessTime,
        target: &LatentBlock,
        weight: f64,
    ) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_for(&self.tensor_sizes());
        let loss = self.accumulate_backward(z_t, t, target, weight, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Like [`backward`](Self::backward) but adds `scale * grad` into an
    /// existing buffer; used for batch accumulation.
    pub fn accumulate_backward(
        &self,
        z_t: &LatentBlock,
        t: ProcessTime,
        target: &LatentBlock,
        weight: f64,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        if !(weight > 0.0) {
            return Err(CvfError::InvalidArgument(format!("loss weight {weight} must be > 0")));
        }
        check_dim(self.block_len, target.len())?;
        check_dim(self.latent_dim, target.dim())?;
        let x = self.input_vector(z_t, t)?;
        let (y, tape) = self.net.forward_tape(&x)?;
        let target = target.flatten();
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(y.len());
        for (p, q) in y.iter().zip(&target) {
            let r = p - q;
            loss += r * r;
            d_out.push(2.0 * weight * scale * r);
        }
        loss *= weight;
        if !loss.is_finite() {
            let layer = self.net.first_non_finite_layer(&tape);
            return Err(CvfError::NonFinite(match layer {
                Some(l) => format!("loss is {loss}; first non-finite activations in layer {l}"),
                None => format!("loss is {loss} with finite activations (target or weight overflow)"),
            }));
        }
        self.net.backward(&tape, &d_out, grads);
        Ok(loss)
    }
}

impl Parameters for PredictorParams {
    fn tensors(&self) -> Vec<&[f32]> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.net.tensors_mut()
    }
}

pub fn predictor_widths(
    block_len: usize,
    latent_dim: usize,
    hidden: usize,
    depth: usize,
    embedding: &TimeEmbedding,
) -> Vec<usize> {
    let mut w = vec![block_len * latent_dim + embedding.dim()];
    w.extend(std::iter::repeat_n(hidden, depth));
    w.push(block_len * latent_dim);
    w
}
