//! Few-step sampling from the last context latent toward the next one, and
//! autoregressive rollout.
//!
//! With `N` steps of size `d = 1/N` the state moves by
//! `(predict(state, t_{k-1}) - z^j) * d + g(t_k) * eps_k`, `eps_k ~ N(0, d I)`,
//! with no noise on the first step. The drift terms telescope: a predictor
//! with constant output `c` lands exactly on `c`.

use std::time::Instant;

use crate::error::{check_dim, CvfError, Result};
use crate::predictor::PredictorParams;
use crate::process::{noise_schedule, LatentBlock, LatentFrame, ProcessTime};
use crate::rng::{normal, rng_for, stream, CvfRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub t_floor: f64,
    pub stochastic: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: 5,
            t_floor: 1e-3,
            stochastic: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(CvfError::config("sampler.num_steps", "must be >= 1"));
        }
        if !(self.t_floor > 0.0 && self.t_floor < 0.5) {
            return Err(CvfError::config("sampler.t_floor", "must lie in (0, 0.5)"));
        }
        Ok(())
    }

    /// Noise scale `g(min(k/N, 1 - t_floor)) * sqrt(d)` applied on step `k`
    /// (1-based); zero on the first step or when sampling deterministically.
    pub fn noise_scale(&self, k: usize) -> f64 {
        if !self.stochastic || k <= 1 {
            return 0.0;
        }
        let d = 1.0 / self.num_steps as f64;
        let t = (k as f64 * d).min(1.0 - self.t_floor);
        noise_schedule(ProcessTime::saturating(t)) * d.sqrt()
    }
}

/// Anything that maps a noisy block and a time to a predicted clean block.
pub trait BlockPredictor {
    fn predict(&self, z_t: &LatentBlock, t: ProcessTime) -> Result<LatentBlock>;
}

impl BlockPredictor for PredictorParams {
    fn predict(&self, z_t: &LatentBlock, t: ProcessTime) -> Result<LatentBlock> {
        self.forward(z_t, t)
    }
}

impl<F> BlockPredictor for F
where
    F: Fn(&LatentBlock, ProcessTime) -> Result<LatentBlock>,
{
    fn predict(&self, z_t: &LatentBlock, t: ProcessTime) -> Result<LatentBlock> {
        self(z_t, t)
    }
}

/// Predicts the latent following `context` (the block `z^{0:k}`).
pub fn sample_next(
    model: &impl BlockPredictor,
    context: &LatentBlock,
    cfg: &SamplerConfig,
    rng: &mut CvfRng,
) -> Result<LatentFrame> {
    cfg.validate()?;
    let n = cfg.num_steps;
    let d = 1.0 / n as f64;
    let start = context.flatten();
    let mut state = start.clone();
    let (len, dim) = (context.len(), context.dim());
    for k in 1..=n {
        let t_prev = ProcessTime::saturating((k - 1) as f64 * d);
        let current = LatentBlock::from_flat(&state, len, dim)
            .map_err(|e| CvfError::NonFinite(format!("sampler state before step {k}: {e}")))?;
        let pred = model.predict(&current, t_prev)?;
        check_dim(len, pred.len())?;
        check_dim(dim, pred.dim())?;
        let scale = cfg.noise_scale(k);
        for ((s, p), z) in state.iter_mut().zip(pred.flatten()).zip(&start) {
            *s += (p - z) * d;
            if scale != 0.0 {
                *s += scale * normal(rng);
            }
        }
        if let Some(i) = state.iter().position(|v| !v.is_finite()) {
            return Err(CvfError::NonFinite(format!(
                "sampler state entry {i} became {} at step {k}",
                state[i]
            )));
        }
    }
    LatentFrame::new(state[(len - 1) * dim..].to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub latents: Vec<LatentFrame>,
    pub steps: Vec<usize>,
    pub wall_ms: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// Autoregressive rollout of `horizon` frames, shifting each prediction
/// into the context window. Noise comes from `cfg.seed`.
pub fn rollout(
    model: &impl BlockPredictor,
    context: &LatentBlock,
    horizon: usize,
    cfg: &SamplerConfig,
) -> Result<Rollout> {
    let mut rng = rng_for(cfg.seed, stream::SAMPLE);
    rollout_with_rng(model, context, horizon, cfg, &mut rng)
}

pub fn rollout_with_rng(
    model: &impl BlockPredictor,
    context: &LatentBlock,
    horizon: usize,
    cfg: &SamplerConfig,
    rng: &mut CvfRng,
) -> Result<Rollout> {
    if horizon == 0 {
        return Err(CvfError::InvalidArgument("rollout horizon must be >= 1".into()));
    }
    let mut out = Rollout {
        latents: Vec::with_capacity(horizon),
        steps: Vec::with_capacity(horizon),
        wall_ms: Vec::with_capacity(horizon),
    };
    let mut window = context.clone();
    for _ in 0..horizon {
        let start = Instant::now();
        let next = sample_next(model, &window, cfg, rng)?;
        out.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        out.steps.push(cfg.num_steps);
        window = window.shifted(next.clone())?;
        out.latents.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_vec;

    fn block(len: usize, dim: usize, seed: u64) -> LatentBlock {
        let mut rng = rng_for(seed, 0);
        LatentBlock::from_flat(&normal_vec(&mut rng, len * dim), len, dim).unwrap()
    }

    fn det(n: usize) -> SamplerConfig {
        SamplerConfig {
            num_steps: n,
            stochastic: false,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn constant_predictor_telescopes() {
        let ctx = block(2, 3, 1);
        let target = block(2, 3, 2);
        let model = |_: &LatentBlock, _: ProcessTime| Ok(target.clone());
        for n in [1, 2, 3, 5, 7, 50, 100] {
            let out = sample_next(&model, &ctx, &det(n), &mut rng_for(0, 0)).unwrap();
            for (a, b) in out.as_slice().iter().zip(target.last().as_slice()) {
                assert!((a - b).abs() < 1e-12, "N={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_predictor_is_static() {
        let ctx = block(2, 3, 1);
        let model = |z: &LatentBlock, _: ProcessTime| Ok(z.clone());
        // Starting at the context, predicting the input keeps the state fixed.
        let out = sample_next(&model, &ctx, &det(5), &mut rng_for(0, 0)).unwrap();
        assert_eq!(&out, ctx.last());
    }

    #[test]
    fn first_step_is_noise_free() {
        let cfg = SamplerConfig::default();
        assert_eq!(cfg.noise_scale(1), 0.0);
        assert!(cfg.noise_scale(2) > 0.0);
        // Final step evaluated at 1 - t_floor, not exactly 1.
        let last = cfg.noise_scale(cfg.num_steps);
        let t = 1.0 - cfg.t_floor;
        assert!((last - (-t * t.ln()) * 0.2f64.sqrt()).abs() < 1e-15);
        let one = SamplerConfig {
            num_steps: 1,
            ..cfg
        };
        let ctx = block(1, 4, 3);
        let model = |z: &LatentBlock, _: ProcessTime| Ok(z.clone());
        let out = sample_next(&model, &ctx, &one, &mut rng_for(0, 0)).unwrap();
        assert_eq!(&out, ctx.last());
    }

    #[test]
    fn rollout_shapes_and_fixed_point() {
        let ctx = block(2, 3, 5);
        let last = ctx.last().clone();
        let model = |z: &LatentBlock, _: ProcessTime| {
            LatentBlock::new(vec![z.last().clone(); z.len()])
        };
        let r = rollout(&model, &LatentBlock::new(vec![last.clone(), last.clone()]).unwrap(), 7, &det(5)).unwrap();
        assert_eq!(r.len(), 7);
        assert!(r.latents.iter().all(|z| z == &last));
        assert!(r.steps.iter().all(|&s| s == 5));

        let one = rollout(&model, &ctx, 1, &SamplerConfig::default()).unwrap();
        let direct = sample_next(
            &model,
            &ctx,
            &SamplerConfig::default(),
            &mut rng_for(SamplerConfig::default().seed, stream::SAMPLE),
        )
        .unwrap();
        assert_eq!(one.latents[0], direct);
        assert!(rollout(&model, &ctx, 0, &det(5)).is_err());
    }

    #[test]
    fn seeded_stochastic_rollouts_repeat() {
        let ctx = block(2, 3, 5);
        let model = |z: &LatentBlock, _: ProcessTime| Ok(z.clone());
        let cfg = SamplerConfig {
            seed: 42,
            ..SamplerConfig::default()
        };
        let a = rollout(&model, &ctx, 4, &cfg).unwrap();
        let b = rollout(&model, &ctx, 4, &cfg).unwrap();
        assert_eq!(a.latents, b.latents);
        let c = rollout(&model, &ctx, 4, &SamplerConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.latents, c.latents);
    }

    #[test]
    fn non_finite_prediction_reports_step() {
        let ctx = block(1, 2, 1);
        let model = |z: &LatentBlock, t: ProcessTime| {
            if t.get() > 0.3 {
                Ok(LatentBlock::new(vec![LatentFrame::from_vec_unchecked(vec![f64::INFINITY, 0.0])]).unwrap())
            } else {
                Ok(z.clone())
            }
        };
        let err = sample_next(&model, &ctx, &det(5), &mut rng_for(0, 0)).unwrap_err();
        assert!(err.to_string().contains("step 3"), "{err}");
    }
}
