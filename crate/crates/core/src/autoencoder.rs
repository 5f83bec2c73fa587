//! Stage 1: frame autoencoder.
//!
//! Encoder and decoder are dense networks (a single linear layer each in the
//! linear variant). After training, a frozen per-coordinate affine map
//! standardises the latents so the process noise scale is meaningful.

use rand::seq::SliceRandom;

use crate::error::{check_dim, CvfError, Result};
use crate::nn::{Gradients, Mlp, Parameters};
use crate::optim::{adamw_step, AdamWConfig, LrSchedule, OptimState};
use crate::process::LatentFrame;
use crate::rng::{rng_for, stream};
use crate::video::FrameShape;

pub use crate::video::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AeArch {
    Linear,
    /// One SiLU hidden layer of the given width on each side.
    Mlp { hidden: usize },
}

/// Frozen affine map `z_std = (z_raw - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and scale so each coordinate ends up with std `target_std`.
    pub fn fit(latents: &[Vec<f64>], target_std: f64) -> Result<Self> {
        let n = latents.len();
        if n == 0 {
            return Err(CvfError::InvalidArgument("cannot standardise an empty set".into()));
        }
        let d = latents[0].len();
        let mut mean = vec![0.0; d];
        for z in latents {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for z in latents {
            for ((s, v), m) in var.iter_mut().zip(z).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| ((s / n as f64).sqrt() / target_std).max(1e-6))
            .collect();
        // Rounded to the persisted precision so a reloaded model is identical.
        let round = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect();
        Ok(Standardizer {
            mean: round(mean),
            std: round(std),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeParams {
    shape: FrameShape,
    arch: AeArch,
    encoder: Mlp,
    decoder: Mlp,
    standardizer: Standardizer,
}

impl AeParams {
    pub fn new(shape: FrameShape, latent_dim: usize, arch: AeArch, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, stream::INIT);
        let p = shape.len();
        let (enc, dec) = match arch {
            AeArch::Linear => (vec![p, latent_dim], vec![latent_dim, p]),
            AeArch::Mlp { hidden } => (vec![p, hidden, latent_dim], vec![latent_dim, hidden, p]),
        };
        let encoder = Mlp::new_dense_init(&enc, &mut rng)?;
        let decoder = Mlp::new_dense_init(&dec, &mut rng)?;
        AeParams::from_parts(shape, arch, encoder, decoder, Standardizer::identity(latent_dim))
    }

    pub fn from_parts(
        shape: FrameShape,
        arch: AeArch,
        encoder: Mlp,
        decoder: Mlp,
        standardizer: Standardizer,
    ) -> Result<Self> {
        check_dim(shape.len(), encoder.input_dim())?;
        check_dim(shape.len(), decoder.output_dim())?;
        check_dim(encoder.output_dim(), decoder.input_dim())?;
        check_dim(encoder.output_dim(), standardizer.mean.len())?;
        check_dim(encoder.output_dim(), standardizer.std.len())?;
        Ok(AeParams {
            shape,
            arch,
            encoder,
            decoder,
            standardizer,
        })
    }

    /// Linear AE whose latent is the flattened frame.
    pub fn identity(shape: FrameShape) -> Self {
        let n = shape.len();
        let mut enc = Mlp::zeros(&[n, n]).expect("valid widths");
        let mut dec = enc.clone();
        for net in [&mut enc, &mut dec] {
            let layer = &mut net.layers_mut()[0];
            for i in 0..n {
                layer.weight[i * n + i] = 1.0;
            }
        }
        AeParams {
            shape,
            arch: AeArch::Linear,
            encoder: enc,
            decoder: dec,
            standardizer: Standardizer::identity(n),
        }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn arch(&self) -> AeArch {
        self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn encode_raw(&self, frame: &[f32]) -> Result<Vec<f64>> {
        check_dim(self.shape.len(), frame.len())?;
        let x: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
        self.encoder.forward(&x)
    }

    pub fn encode(&self, frame: &[f32]) -> Result<LatentFrame> {
        let raw = self.encode_raw(frame)?;
        let s = &self.standardizer;
        LatentFrame::new(
            raw.iter()
                .zip(&s.mean)
                .zip(&s.std)
                .map(|((z, m), sd)| (z - m) / sd)
                .collect(),
        )
    }

    /// Decoded frame clamped to `[0, 1]`.
    pub fn decode(&self, z: &LatentFrame) -> Result<Vec<f32>> {
        check_dim(self.latent_dim(), z.dim())?;
        let s = &self.standardizer;
        let raw: Vec<f64> = z
            .as_slice()
            .iter()
            .zip(&s.mean)
            .zip(&s.std)
            .map(|((v, m), sd)| v * sd + m)
            .collect();
        Ok(self
            .decoder
            .forward(&raw)?
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0) as f32)
            .collect())
    }

    pub fn reconstruct(&self, frame: &[f32]) -> Result<Vec<f32>> {
        self.decode(&self.encode(frame)?)
    }

    pub fn encode_video(&self, video: &VideoTensor) -> Result<Vec<LatentFrame>> {
        video.frames().map(|f| self.encode(f)).collect()
    }

    fn fit_standardizer(&mut self, frames: &[&[f32]], target_std: f64) -> Result<()> {
        let raw = frames
            .iter()
            .map(|f| self.encode_raw(f))
            .collect::<Result<Vec<_>>>()?;
        self.standardizer = Standardizer::fit(&raw, target_std)?;
        Ok(())
    }
}

impl Parameters for AeParams {
    fn tensors(&self) -> Vec<&[f32]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AeTrainConfig {
    pub arch: AeArch,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub warmup_steps: u64,
    /// Per-coordinate std of the standardised latents.
    pub latent_std: f64,
    pub optim: AdamWConfig,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            arch: AeArch::Mlp { hidden: 128 },
            latent_dim: 16,
            epochs: 60,
            batch_size: 32,
            max_lr: 2e-3,
            warmup_steps: 100,
            latent_std: 1.0,
            optim: AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            seed: 0,
        }
    }
}

/// Per-epoch mean reconstruction MSE.
#[derive(Clone, Debug, PartialEq)]
pub struct AeTrainReport {
    pub epoch_mse: Vec<f64>,
}

/// Minimises mean squared reconstruction error over `frames`, then fits the
/// latent standardiser on the same frames.
pub fn train_autoencoder(
    frames: &[&[f32]],
    shape: FrameShape,
    cfg: &AeTrainConfig,
) -> Result<(AeParams, AeTrainReport)> {
    if frames.is_empty() {
        return Err(CvfError::InvalidArgument("autoencoder dataset is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(CvfError::config("ae.epochs", "epochs and batch size must be >= 1"));
    }
    for f in frames {
        check_dim(shape.len(), f.len())?;
    }
    let mut ae = AeParams::new(shape, cfg.latent_dim, cfg.arch, cfg.seed)?;
    let batches_per_epoch = frames.len().div_ceil(cfg.batch_size) as u64;
    let total = batches_per_epoch * cfg.epochs as u64;
    let warmup = cfg.warmup_steps.min(total / 2).max(1);
    let schedule = LrSchedule::new(cfg.max_lr, warmup, total.max(warmup + 1), 0.0)?;
    let mut state = OptimState::new(&ae, cfg.optim)?;
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut rng = rng_for(cfg.seed, stream::TRAIN);
    let mut report = AeTrainReport { epoch_mse: Vec::new() };
    let mut best = f64::INFINITY;
    let pixels = shape.len() as f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut enc_grads = Gradients::zeros_for(&ae.encoder.tensor_sizes());
            let mut dec_grads = Gradients::zeros_for(&ae.decoder.tensor_sizes());
            let scale = 1.0 / (chunk.len() as f64 * pixels);
            for &i in chunk {
                let x: Vec<f64> = frames[i].iter().map(|&v| v as f64).collect();
                let (z, enc_tape) = ae.encoder.forward_tape(&x)?;
                let (y, dec_tape) = ae.decoder.forward_tape(&z)?;
                let mut d_out = Vec::with_capacity(y.len());
                let mut se = 0.0;
                for (p, q) in y.iter().zip(&x) {
                    let r = p - q;
                    se += r * r;
                    d_out.push(2.0 * r * scale);
                }
                epoch_loss += se / pixels;
                let d_z = ae.decoder.backward(&dec_tape, &d_out, &mut dec_grads);
                ae.encoder.backward(&enc_tape, &d_z, &mut enc_grads);
            }
            enc_grads.tensors.extend(dec_grads.tensors);
            let grads = enc_grads;
            let lr = schedule.lr_at(state.step_count);
            adamw_step(&mut ae, &grads, &mut state, lr)?;
        }
        let mse = epoch_loss / frames.len() as f64;
        if !mse.is_finite() {
            return Err(CvfError::Diverged(format!("epoch {epoch} reconstruction loss is {mse}")));
        }
        best = best.min(mse);
        if mse > 10.0 * best {
            return Err(CvfError::Diverged(format!(
                "epoch {epoch} loss {mse} is over 10x the best {best}"
            )));
        }
        report.epoch_mse.push(mse);
    }
    ae.fit_standardizer(frames, cfg.latent_std)?;
    Ok((ae, report))
}
