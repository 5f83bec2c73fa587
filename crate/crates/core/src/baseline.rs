//! Gaussian-start comparator: a conditional x-start DDPM that predicts the
//! next latent from pure noise, given the same context window as the flow
//! model.

use std::time::Instant;

use rand::Rng;

use crate::error::{check_dim, CvfError, Result};
use crate::nn::{Gradients, Mlp, Parameters};
use crate::optim::{adamw_step, LrSchedule, OptimState};
use crate::predictor::TimeEmbedding;
use crate::process::{LatentBlock, LatentFrame, ProcessTime};
use crate::rng::{normal, normal_vec, CvfRng};
use crate::trainer::{step_rng, PairDataset, TrainRecord};

/// Linear-beta variance schedule over `t_steps` steps (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(CvfError::config("baseline.t_steps", "must be >= 1"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(CvfError::config("baseline.beta_start", "must lie in (0, 1)"));
        }
        if !(beta_end >= beta_start && beta_end < 1.0) {
            return Err(CvfError::config("baseline.beta_end", "must lie in [beta_start, 1)"));
        }
        let betas: Vec<f64> = (0..t_steps)
            .map(|i| {
                if t_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(DiffusionSchedule { betas, alpha_bars })
    }

    pub fn t_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, step: usize) -> f64 {
        self.betas[step - 1]
    }

    /// Cumulative product up to `step`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, step: usize) -> f64 {
        if step == 0 {
            1.0
        } else {
            self.alpha_bars[step - 1]
        }
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step == 0 || step > self.t_steps() {
            return Err(CvfError::InvalidArgument(format!(
                "diffusion step {step} outside 1..={}",
                self.t_steps()
            )));
        }
        Ok(())
    }

    /// `sqrt(ab) * z0 + sqrt(1 - ab) * eps` at `step`.
    pub fn diffuse(&self, z0: &LatentFrame, step: usize, eps: &LatentFrame) -> Result<LatentFrame> {
        self.check_step(step)?;
        check_dim(z0.dim(), eps.dim())?;
        let ab = self.alpha_bar(step);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        LatentFrame::new(
            z0.as_slice()
                .iter()
                .zip(eps.as_slice())
                .map(|(z, e)| a * z + s * e)
                .collect(),
        )
    }

    /// Strided timesteps `round(i * T / S)` for `i = 1..=S`, ascending.
    pub fn strided_steps(&self, steps_used: usize) -> Result<Vec<usize>> {
        let t = self.t_steps();
        if steps_used == 0 || steps_used > t {
            return Err(CvfError::config(
                "sampler.num_steps",
                format!("baseline steps {steps_used} outside 1..={t}"),
            ));
        }
        Ok((1..=steps_used)
            .map(|i| ((i * t) as f64 / steps_used as f64).round() as usize)
            .collect())
    }
}

/// Conditional x-start predictor. Input is the flattened context block, the
/// noisy target frame and the time embedding of `step / T`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineParams {
    context_len: usize,
    latent_dim: usize,
    embedding: TimeEmbedding,
    net: Mlp,
}

impl BaselineParams {
    pub fn new(
        context_len: usize,
        latent_dim: usize,
        hidden: usize,
        depth: usize,
        embedding: TimeEmbedding,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let widths = baseline_widths(context_len, latent_dim, hidden, depth, &embedding);
        BaselineParams::from_net(context_len, latent_dim, embedding, Mlp::new(&widths, rng)?)
    }

    pub fn from_net(
        context_len: usize,
        latent_dim: usize,
        embedding: TimeEmbedding,
        net: Mlp,
    ) -> Result<Self> {
        if context_len == 0 || latent_dim == 0 {
            return Err(CvfError::InvalidArgument("context length and latent dim must be > 0".into()));
        }
        check_dim((context_len + 1) * latent_dim + embedding.dim(), net.input_dim())?;
        check_dim(latent_dim, net.output_dim())?;
        Ok(BaselineParams {
            context_len,
            latent_dim,
            embedding,
            net,
        })
    }

    pub fn context_len(&self) -> usize {
        self.context_len
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

    fn input_vector(
        &self,
        context: &LatentBlock,
        noisy: &[f64],
        step: usize,
        sched: &DiffusionSchedule,
    ) -> Result<Vec<f64>> {
        check_dim(self.context_len, context.len())?;
        check_dim(self.latent_dim, context.dim())?;
        check_dim(self.latent_dim, noisy.len())?;
        let t = ProcessTime::saturating(step as f64 / sched.t_steps() as f64);
        let mut x = context.flatten();
        x.extend_from_slice(noisy);
        x.extend(self.embedding.embed(t));
        Ok(x)
    }

    /// Predicted clean target frame.
    pub fn predict_start(
        &self,
        context: &LatentBlock,
        noisy: &[f64],
        step: usize,
        sched: &DiffusionSchedule,
    ) -> Result<Vec<f64>> {
        self.net.forward(&self.input_vector(context, noisy, step, sched)?)
    }
}

impl Parameters for BaselineParams {
    fn tensors(&self) -> Vec<&[f32]> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.net.tensors_mut()
    }
}

pub fn baseline_widths(
    context_len: usize,
    latent_dim: usize,
    hidden: usize,
    depth: usize,
    embedding: &TimeEmbedding,
) -> Vec<usize> {
    let mut w = vec![(context_len + 1) * latent_dim + embedding.dim()];
    w.extend(std::iter::repeat_n(hidden, depth));
    w.push(latent_dim);
    w
}

pub fn count_params(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Hidden width whose baseline parameter count is closest to `target`.
pub fn matched_hidden(
    context_len: usize,
    latent_dim: usize,
    depth: usize,
    embedding: &TimeEmbedding,
    target: usize,
) -> usize {
    let count = |h| count_params(&baseline_widths(context_len, latent_dim, h, depth, embedding));
    let mut best = 1;
    let mut h = 1;
    loop {
        let c = count(h);
        if c.abs_diff(target) < count(best).abs_diff(target) {
            best = h;
        }
        if c > target {
            return best;
        }
        h += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineTrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub eval_every: u64,
    /// Inclusive range of diffusion steps drawn during training.
    pub min_step: usize,
    pub max_step: Option<usize>,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        BaselineTrainConfig {
            batch_size: 32,
            total_steps: 20_000,
            seed: 0,
            eval_every: 100,
            min_step: 1,
            max_step: None,
        }
    }
}

/// One step of uniform-step x-start regression on `||z^{k+1} - pred||^2`.
pub fn baseline_train_step(
    params: &mut BaselineParams,
    state: &mut OptimState,
    sched: &DiffusionSchedule,
    batch: &[(LatentBlock, LatentBlock)],
    lr: f64,
    step_range: (usize, usize),
    rng: &mut CvfRng,
) -> Result<TrainRecord> {
    if batch.is_empty() {
        return Err(CvfError::InvalidArgument("empty batch".into()));
    }
    let start = Instant::now();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_for(&params.tensor_sizes());
    let mut total = 0.0;
    for (index, (ctx, next)) in batch.iter().enumerate() {
        let target = next.last();
        let step = rng.random_range(step_range.0..=step_range.1);
        let eps = LatentFrame::from_vec_unchecked(normal_vec(rng, params.latent_dim));
        let noisy = sched.diffuse(target, step, &eps)?;
        let x = params.input_vector(ctx, noisy.as_slice(), step, sched)?;
        let (y, tape) = params.net.forward_tape(&x)?;
        let mut d_out = Vec::with_capacity(y.len());
        let mut loss = 0.0;
        for (p, q) in y.iter().zip(target.as_slice()) {
            let r = p - q;
            loss += r * r;
            d_out.push(2.0 * scale * r);
        }
        if !loss.is_finite() {
            return Err(CvfError::NonFinite(format!("example {index} at step {step}: loss {loss}")));
        }
        params.net.backward(&tape, &d_out, &mut grads);
        total += loss;
    }
    adamw_step(params, &grads, state, lr)?;
    Ok(TrainRecord {
        step: state.step_count,
        loss: total * scale,
        lr,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn train_baseline(
    cfg: &BaselineTrainConfig,
    sched: &DiffusionSchedule,
    schedule: &LrSchedule,
    dataset: &mut dyn PairDataset,
    params: &mut BaselineParams,
    state: &mut OptimState,
    mut on_record: impl FnMut(&TrainRecord) -> Result<()>,
) -> Result<Vec<TrainRecord>> {
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(CvfError::config("train.batch_size", "batch size and eval interval must be >= 1"));
    }
    check_dim(params.context_len, dataset.block_len())?;
    let hi = cfg.max_step.unwrap_or(sched.t_steps());
    if cfg.min_step == 0 || cfg.min_step > hi || hi > sched.t_steps() {
        return Err(CvfError::InvalidArgument(format!(
            "training step range {}..={hi} outside 1..={}",
            cfg.min_step,
            sched.t_steps()
        )));
    }
    let mut records = Vec::new();
    let first = state.step_count;
    for step in first..cfg.total_steps {
        let batch = (0..cfg.batch_size as u64)
            .map(|i| dataset.pair(step * cfg.batch_size as u64 + i))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = step_rng(cfg.seed, step);
        let lr = schedule.lr_at(step);
        let record =
            baseline_train_step(params, state, sched, &batch, lr, (cfg.min_step, hi), &mut rng)?;
        if record.step % cfg.eval_every == 0 {
            on_record(&record)?;
            records.push(record);
        }
    }
    Ok(records)
}

/// Ancestral sampling from `N(0, I)` over the strided schedule, conditioned
/// on `context`. The final step returns the x-start prediction.
pub fn sample_baseline(
    params: &BaselineParams,
    sched: &DiffusionSchedule,
    context: &LatentBlock,
    steps_used: usize,
    rng: &mut CvfRng,
) -> Result<LatentFrame> {
    let steps = sched.strided_steps(steps_used)?;
    let mut x = normal_vec(rng, params.latent_dim);
    for i in (0..steps.len()).rev() {
        let t = steps[i];
        let prev = if i == 0 { 0 } else { steps[i - 1] };
        let x0 = params.predict_start(context, &x, t, sched)?;
        if prev == 0 {
            x = x0;
            break;
        }
        let ab_t = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(prev);
        let beta = 1.0 - ab_t / ab_prev;
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let sd = ((1.0 - ab_prev) / (1.0 - ab_t) * beta).sqrt();
        for (xi, p) in x.iter_mut().zip(&x0) {
            *xi = c0 * p + ct * *xi + sd * normal(rng);
        }
    }
    LatentFrame::new(x).map_err(|e| CvfError::NonFinite(format!("baseline sample: {e}")))
}

/// Autoregressive baseline rollout.
pub fn rollout_baseline(
    params: &BaselineParams,
    sched: &DiffusionSchedule,
    context: &LatentBlock,
    horizon: usize,
    steps_used: usize,
    rng: &mut CvfRng,
) -> Result<Vec<LatentFrame>> {
    let mut window = context.clone();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = sample_baseline(params, sched, &window, steps_used, rng)?;
        window = window.shifted(next.clone())?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::predictor_widths;
    use crate::rng::rng_for;

    fn sched() -> DiffusionSchedule {
        DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn schedule_invariants() {
        let s = sched();
        for i in 1..=100 {
            assert!(s.beta(i) > 0.0 && s.beta(i) < 1.0);
            assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
        }
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(100) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn diffuse_examples() {
        let s = sched();
        let z0 = LatentFrame::new(vec![1.0, -2.0, 0.5]).unwrap();
        let zero = LatentFrame::zeros(3);
        let early = s.diffuse(&z0, 1, &LatentFrame::filled(3, 1.0)).unwrap();
        assert!(early.squared_distance(&z0) < 1e-3);
        let clean = s.diffuse(&z0, 50, &zero).unwrap();
        let a = s.alpha_bar(50).sqrt();
        for (c, z) in clean.as_slice().iter().zip(z0.as_slice()) {
            assert_eq!(*c, a * z);
        }
        assert!(s.diffuse(&z0, 0, &zero).is_err());
        assert!(s.diffuse(&z0, 101, &zero).is_err());
    }

    #[test]
    fn diffuse_variance_matches_closed_form() {
        let s = sched();
        let mut rng = rng_for(3, 0);
        let n = 100_000;
        for step in [10, 60, 100] {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..n {
                let eps = LatentFrame::new(vec![normal(&mut rng)]).unwrap();
                let v = s.diffuse(&LatentFrame::zeros(1), step, &eps).unwrap().as_slice()[0];
                sum += v;
                sq += v * v;
            }
            let var = sq / n as f64 - (sum / n as f64).powi(2);
            let want = 1.0 - s.alpha_bar(step);
            // Standard error of a sample variance is about var * sqrt(2 / n).
            assert!((var - want).abs() < 4.0 * want * (2.0 / n as f64).sqrt(), "{var} vs {want}");
        }
    }

    #[test]
    fn strided_schedule() {
        let s = sched();
        assert_eq!(s.strided_steps(1).unwrap(), vec![100]);
        assert_eq!(s.strided_steps(100).unwrap(), (1..=100).collect::<Vec<_>>());
        assert_eq!(s.strided_steps(4).unwrap(), vec![25, 50, 75, 100]);
        assert!(s.strided_steps(0).is_err());
        assert!(s.strided_steps(101).is_err());
    }

    #[test]
    fn parameter_budget_matches() {
        let emb = TimeEmbedding::default();
        for (ctx, d, h, depth) in [(2, 4, 64, 2), (2, 16, 128, 3), (3, 8, 96, 2)] {
            let cvf = count_params(&predictor_widths(ctx, d, h, depth, &emb));
            let hb = matched_hidden(ctx, d, depth, &emb, cvf);
            let base = count_params(&baseline_widths(ctx, d, hb, depth, &emb));
            let rel = (base as f64 - cvf as f64).abs() / cvf as f64;
            assert!(rel <= 0.01, "ctx {ctx} d {d}: {base} vs {cvf}");
        }
    }

    #[test]
    fn single_step_sample_is_start_prediction() {
        let s = sched();
        let mut rng = rng_for(0, 0);
        let mut p = BaselineParams::new(1, 2, 8, 1, TimeEmbedding::default(), &mut rng).unwrap();
        // Output bias only: predicts a constant regardless of input.
        p.net.layers_mut().last_mut().unwrap().bias = vec![0.25, -0.5];
        let ctx = LatentBlock::new(vec![LatentFrame::zeros(2)]).unwrap();
        for n in [1, 5, 100] {
            let z = sample_baseline(&p, &s, &ctx, n, &mut rng).unwrap();
            assert_eq!(z.as_slice(), &[0.25, -0.5]);
        }
    }
}
