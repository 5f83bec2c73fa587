//! Stage-2 training: regress the clean shifted block from the noisy
//! interpolant, weighting each example by `1 / (2 g(t)^2)`.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::datagen::LatentCorpus;
use crate::error::{check_dim, CvfError, Result};
use crate::nn::{Gradients, Parameters};
use crate::optim::{adamw_step, LrSchedule, OptimState};
use crate::predictor::PredictorParams;
use crate::process::{interpolate, loss_weight, LatentBlock, LatentFrame, ProcessTime, ScheduleConstants};
use crate::rng::{normal_vec, rng_for, uniform, CvfRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    /// Grid size for the discrete-time ablation (`t = i / t_grid`).
    pub t_grid: usize,
    /// Sample `t` from the grid instead of `Uniform[t_floor, 1 - t_floor]`.
    pub discrete_t: bool,
    pub seed: u64,
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            total_steps: 20_000,
            t_grid: 100,
            discrete_t: false,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CvfError::config("train.batch_size", "must be >= 1"));
        }
        if self.t_grid < 2 {
            return Err(CvfError::config("train.t_grid", "must be >= 2"));
        }
        if self.eval_every == 0 {
            return Err(CvfError::config("train.eval_every", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub input: LatentBlock,
    pub target: LatentBlock,
    pub weight: f64,
}

/// Source of aligned `(z^{0:k}, z^{1:k+1})` block pairs addressed by a
/// global draw index, so any step of a run can be replayed in isolation.
pub trait PairDataset {
    fn block_len(&self) -> usize;
    fn pair(&mut self, index: u64) -> Result<(LatentBlock, LatentBlock)>;
}

/// Windows over a latent corpus, visited in a fresh random order each epoch.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    corpus: LatentCorpus,
    block_len: usize,
    positions: Vec<(usize, usize)>,
    seed: u64,
    repeat: bool,
    epoch: Option<u64>,
    order: Vec<usize>,
}

impl WindowDataset {
    pub fn new(corpus: LatentCorpus, block_len: usize, seed: u64, repeat: bool) -> Result<Self> {
        if block_len == 0 {
            return Err(CvfError::InvalidArgument("block length must be >= 1".into()));
        }
        let positions: Vec<(usize, usize)> = corpus
            .videos
            .iter()
            .enumerate()
            .flat_map(|(v, frames)| {
                let n = (frames.len() + 1).saturating_sub(block_len + 1);
                (0..n).map(move |s| (v, s))
            })
            .collect();
        if positions.is_empty() {
            return Err(CvfError::InvalidArgument(format!(
                "no video is long enough for windows of {} frames",
                block_len + 1
            )));
        }
        Ok(WindowDataset {
            corpus,
            block_len,
            positions,
            seed,
            repeat,
            epoch: None,
            order: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn corpus(&self) -> &LatentCorpus {
        &self.corpus
    }

    pub fn window(&self, video: usize, start: usize) -> Result<(LatentBlock, LatentBlock)> {
        let frames = &self.corpus.videos[video];
        let a = LatentBlock::new(frames[start..start + self.block_len].to_vec())?;
        let b = LatentBlock::new(frames[start + 1..start + 1 + self.block_len].to_vec())?;
        Ok((a, b))
    }
}

impl PairDataset for WindowDataset {
    fn block_len(&self) -> usize {
        self.block_len
    }

    fn pair(&mut self, index: u64) -> Result<(LatentBlock, LatentBlock)> {
        let n = self.positions.len() as u64;
        let epoch = index / n;
        if epoch > 0 && !self.repeat {
            return Err(CvfError::DatasetExhausted(format!(
                "draw {index} exceeds the {n} available windows"
            )));
        }
        if self.epoch != Some(epoch) {
            let mut order: Vec<usize> = (0..self.positions.len()).collect();
            let mut rng = rng_for(self.seed, 0x5eed_0000_0000 + epoch);
            order.shuffle(&mut rng);
            self.order = order;
            self.epoch = Some(epoch);
        }
        let (v, s) = self.positions[self.order[(index % n) as usize]];
        self.window(v, s)
    }
}

/// Builds one training example from aligned blocks; `eps` holds one noise
/// frame per block slot.
pub fn make_training_example(
    z_block_j: &LatentBlock,
    z_block_j1: &LatentBlock,
    t: ProcessTime,
    eps: &[LatentFrame],
    consts: &ScheduleConstants,
) -> Result<TrainingExample> {
    check_dim(z_block_j.len(), z_block_j1.len())?;
    check_dim(z_block_j.len(), eps.len())?;
    check_dim(z_block_j.dim(), z_block_j1.dim())?;
    let prev = z_block_j.frames();
    let next = z_block_j1.frames();
    for i in 0..prev.len() - 1 {
        if prev[i + 1] != next[i] {
            return Err(CvfError::InvalidArgument(format!(
                "blocks are not shifted by one frame (slot {i})"
            )));
        }
    }
    let input = prev
        .iter()
        .zip(next)
        .zip(eps)
        .map(|((a, b), e)| interpolate(a, b, t, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingExample {
        input: LatentBlock::new(input)?,
        target: z_block_j1.clone(),
        weight: loss_weight(t, consts),
    })
}

/// Draws a training time for one example.
pub fn draw_time(cfg: &TrainConfig, consts: &ScheduleConstants, rng: &mut CvfRng) -> ProcessTime {
    let lo = consts.t_floor;
    let hi = 1.0 - consts.t_floor;
    let t = if cfg.discrete_t {
        use rand::Rng;
        let i = rng.random_range(1..=cfg.t_grid);
        (i as f64 / cfg.t_grid as f64).clamp(lo, hi)
    } else {
        uniform(rng, lo, hi)
    };
    ProcessTime::saturating(t)
}

/// Noise for step `step` of a run; independent of every other step.
pub fn step_rng(seed: u64, step: u64) -> CvfRng {
    rng_for(seed, 0x7a1e_0000_0000 + step)
}

/// One optimizer step on the batch-mean loss. Returns the record and the
/// sampled times (for inspection).
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut PredictorParams,
    state: &mut OptimState,
    batch: &[(LatentBlock, LatentBlock)],
    lr: f64,
    cfg: &TrainConfig,
    consts: &ScheduleConstants,
    rng: &mut CvfRng,
) -> Result<(TrainRecord, Vec<f64>)> {
    if batch.is_empty() {
        return Err(CvfError::InvalidArgument("empty batch".into()));
    }
    let start = Instant::now();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_for(&params.tensor_sizes());
    let mut total = 0.0;
    let mut times = Vec::with_capacity(batch.len());
    for (index, (zj, zj1)) in batch.iter().enumerate() {
        let t = draw_time(cfg, consts, rng);
        let eps = (0..zj.len())
            .map(|_| LatentFrame::from_vec_unchecked(normal_vec(rng, zj.dim())))
            .collect::<Vec<_>>();
        let ex = make_training_example(zj, zj1, t, &eps, consts)?;
        let loss = params
            .accumulate_backward(&ex.input, t, &ex.target, ex.weight, scale, &mut grads)
            .map_err(|e| {
                CvfError::NonFinite(format!("example {index} at t = {}: {e}", t.get()))
            })?;
        total += loss;
        times.push(t.get());
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(CvfError::NonFinite(format!("batch loss is {loss}")));
    }
    adamw_step(params, &grads, state, lr)?;
    Ok((
        TrainRecord {
            step: state.step_count,
            loss,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
        times,
    ))
}

/// Trains from the optimizer's current step count up to `cfg.total_steps`.
/// Every `eval_every`-th record is passed to `on_record` and returned.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    cfg: &TrainConfig,
    consts: &ScheduleConstants,
    schedule: &LrSchedule,
    dataset: &mut dyn PairDataset,
    params: &mut PredictorParams,
    state: &mut OptimState,
    mut on_record: impl FnMut(&TrainRecord) -> Result<()>,
) -> Result<Vec<TrainRecord>> {
    cfg.validate()?;
    check_dim(params.block_len(), dataset.block_len())?;
    let mut records = Vec::new();
    let first = state.step_count;
    for step in first..cfg.total_steps {
        let batch = (0..cfg.batch_size as u64)
            .map(|i| dataset.pair(step * cfg.batch_size as u64 + i))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = step_rng(cfg.seed, step);
        let lr = schedule.lr_at(step);
        let (record, _) = train_step(params, state, &batch, lr, cfg, consts, &mut rng)?;
        if step == 0 {
            check_initial_loss(record.loss, &batch, consts)?;
        }
        if record.step % cfg.eval_every == 0 {
            on_record(&record)?;
            records.push(record);
        }
    }
    Ok(records)
}

/// At initialisation the loss must satisfy `loss <= weight_cap * E||z||^2`;
/// anything else means the data or initialisation is broken.
fn check_initial_loss(
    loss: f64,
    batch: &[(LatentBlock, LatentBlock)],
    consts: &ScheduleConstants,
) -> Result<()> {
    let energy = batch
        .iter()
        .map(|(_, z)| z.flatten().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / batch.len() as f64;
    let bound = consts.weight_cap * energy;
    if !loss.is_finite() || loss > bound * (1.0 + 1e-9) {
        return Err(CvfError::Diverged(format!(
            "initial loss {loss} exceeds sanity bound {bound}"
        )));
    }
    Ok(())
}
