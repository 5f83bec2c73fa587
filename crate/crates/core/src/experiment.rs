//! End-to-end pipelines shared by the command-line tool and the test suites:
//! corpus and checkpoint persistence, training wiring, and rollouts.

use std::path::Path;
use std::time::Instant;

use crate::autoencoder::{train_autoencoder, AeArch, AeParams, AeTrainReport, Standardizer};
use crate::baseline::{
    baseline_widths, count_params, matched_hidden, rollout_baseline, sample_baseline, train_baseline,
    BaselineParams, BaselineTrainConfig, DiffusionSchedule,
};
use crate::datagen::{
    gen_bimodal_bounce, gen_bouncing_ball, gen_latent_linear_gaussian, gen_latent_rotation, DatasetKind,
    LatentCorpus, Mode,
};
use crate::error::{check_dim, CvfError, Result};
use crate::io::config::ExperimentConfig;
use crate::io::container::{load_container, save_container, NamedTensors, Tensor, TensorLookup};
use crate::nn::{Dense, Mlp, Parameters};
use crate::optim::OptimState;
use crate::predictor::{predictor_widths, PredictorParams, TimeEmbedding};
use crate::process::{LatentBlock, LatentFrame};
use crate::rng::{rng_for, stream, CvfRng};
use crate::sampler::{rollout_with_rng, sample_next, SamplerConfig};
use crate::trainer::{train_loop, TrainRecord, WindowDataset};
use crate::video::{FrameShape, VideoTensor};

/// Labels and branch templates of a bimodal corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct BimodalInfo {
    pub modes: Vec<Mode>,
    pub trigger: usize,
    pub branches: Vec<(Vec<f32>, Vec<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Corpus {
    Pixel {
        videos: Vec<VideoTensor>,
        bimodal: Option<BimodalInfo>,
    },
    Latent(Vec<Vec<LatentFrame>>),
}

impl Corpus {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = &cfg.data;
        Ok(match spec.kind {
            DatasetKind::BouncingBall => Corpus::Pixel {
                videos: gen_bouncing_ball(spec)?,
                bimodal: None,
            },
            DatasetKind::BimodalBounce => {
                let c = gen_bimodal_bounce(spec)?;
                Corpus::Pixel {
                    videos: c.videos,
                    bimodal: Some(BimodalInfo {
                        modes: c.modes,
                        trigger: c.trigger,
                        branches: c.branches,
                    }),
                }
            }
            DatasetKind::LatentLinearGaussian => Corpus::Latent(gen_latent_linear_gaussian(spec)?.0.videos),
            DatasetKind::LatentRotation => Corpus::Latent(gen_latent_rotation(spec)?.0.videos),
        })
    }

    pub fn num_videos(&self) -> usize {
        match self {
            Corpus::Pixel { videos, .. } => videos.len(),
            Corpus::Latent(v) => v.len(),
        }
    }

    pub fn videos(&self) -> Option<&[VideoTensor]> {
        match self {
            Corpus::Pixel { videos, .. } => Some(videos),
            Corpus::Latent(_) => None,
        }
    }

    /// Latent trajectories, encoding pixel videos with `ae`.
    pub fn latents(&self, ae: Option<&AeParams>) -> Result<LatentCorpus> {
        let videos = match self {
            Corpus::Latent(v) => v.clone(),
            Corpus::Pixel { videos, .. } => {
                let ae = ae.ok_or_else(|| {
                    CvfError::InvalidArgument("a pixel corpus needs an autoencoder checkpoint".into())
                })?;
                videos.iter().map(|v| ae.encode_video(v)).collect::<Result<_>>()?
            }
        };
        if videos.is_empty() {
            return Err(CvfError::InvalidArgument("corpus is empty".into()));
        }
        Ok(LatentCorpus { videos })
    }

    pub fn to_tensors(&self) -> Result<NamedTensors> {
        let mut out = Vec::new();
        match self {
            Corpus::Pixel { videos, bimodal } => {
                let s = videos[0].shape();
                let f = videos[0].num_frames();
                let mut data = Vec::with_capacity(videos.len() * f * s.len());
                for v in videos {
                    check_dim(f, v.num_frames())?;
                    data.extend_from_slice(v.data());
                }
                out.push((
                    "videos".into(),
                    Tensor::new(vec![videos.len(), f, s.channels, s.height, s.width], data)?,
                ));
                if let Some(b) = bimodal {
                    let modes = b
                        .modes
                        .iter()
                        .map(|m| match m {
                            Mode::Left => 0.0,
                            Mode::Right => 1.0,
                            Mode::Neither => 2.0,
                        })
                        .collect();
                    out.push(("bimodal.modes".into(), Tensor::vector(modes)));
                    out.push(("bimodal.trigger".into(), Tensor::vector(vec![b.trigger as f32])));
                    let mut br = Vec::with_capacity(b.branches.len() * 2 * s.len());
                    for (l, r) in &b.branches {
                        br.extend_from_slice(l);
                        br.extend_from_slice(r);
                    }
                    out.push(("bimodal.branches".into(), Tensor::new(vec![b.branches.len(), 2, s.len()], br)?));
                }
            }
            Corpus::Latent(videos) => {
                let f = videos[0].len();
                let d = videos[0][0].dim();
                let mut data = Vec::with_capacity(videos.len() * f * d);
                for v in videos {
                    check_dim(f, v.len())?;
                    for z in v {
                        check_dim(d, z.dim())?;
                        data.extend(z.as_slice().iter().map(|&x| x as f32));
                    }
                }
                out.push(("latents".into(), Tensor::new(vec![videos.len(), f, d], data)?));
            }
        }
        Ok(out)
    }

    pub fn from_tensors(t: &NamedTensors, path: &Path) -> Result<Self> {
        let bad = |detail: String| CvfError::Malformed {
            path: path.to_path_buf(),
            detail,
        };
        if let Ok(v) = t.get_tensor("videos", path) {
            let [n, f, c, h, w] = v.dims[..] else {
                return Err(bad("videos must have rank 5".into()));
            };
            let shape = FrameShape {
                channels: c,
                height: h,
                width: w,
            };
            let per = f * shape.len();
            let videos = (0..n)
                .map(|i| VideoTensor::new(shape, f, v.data[i * per..(i + 1) * per].to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let bimodal = match t.get_tensor("bimodal.modes", path) {
                Ok(m) => {
                    let modes = m
                        .data
                        .iter()
                        .map(|&x| match x as u32 {
                            0 => Mode::Left,
                            1 => Mode::Right,
                            _ => Mode::Neither,
                        })
                        .collect();
                    let trigger = t.get_tensor("bimodal.trigger", path)?.data[0] as usize;
                    let b = t.get_tensor("bimodal.branches", path)?;
                    let p = shape.len();
                    let branches = b
                        .data
                        .chunks_exact(2 * p)
                        .map(|c| (c[..p].to_vec(), c[p..].to_vec()))
                        .collect();
                    Some(BimodalInfo {
                        modes,
                        trigger,
                        branches,
                    })
                }
                Err(_) => None,
            };
            return Ok(Corpus::Pixel { videos, bimodal });
        }
        let l = t.get_tensor("latents", path)?;
        let [n, f, d] = l.dims[..] else {
            return Err(bad("latents must have rank 3".into()));
        };
        let videos = (0..n)
            .map(|i| {
                (0..f)
                    .map(|j| {
                        let s = (i * f + j) * d;
                        LatentFrame::new(l.data[s..s + d].iter().map(|&x| x as f64).collect())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus::Latent(videos))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_container(path, &self.to_tensors()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Corpus::from_tensors(&load_container(path)?, path)
    }
}

fn mlp_tensors(prefix: &str, net: &Mlp, out: &mut NamedTensors) {
    for (i, l) in net.layers().iter().enumerate() {
        out.push((
            format!("{prefix}.{i}.weight"),
            Tensor {
                dims: vec![l.inputs, l.outputs],
                data: l.weight.clone(),
            },
        ));
        out.push((format!("{prefix}.{i}.bias"), Tensor::vector(l.bias.clone())));
    }
}

fn mlp_from_tensors(prefix: &str, t: &NamedTensors, path: &Path) -> Result<Mlp> {
    let mut layers = Vec::new();
    for i in 0.. {
        let Ok(w) = t.get_tensor(&format!("{prefix}.{i}.weight"), path) else {
            break;
        };
        let b = t.get_tensor(&format!("{prefix}.{i}.bias"), path)?;
        let [inputs, outputs] = w.dims[..] else {
            return Err(CvfError::Malformed {
                path: path.to_path_buf(),
                detail: format!("{prefix}.{i}.weight must have rank 2"),
            });
        };
        check_dim(outputs, b.data.len())?;
        layers.push(Dense {
            inputs,
            outputs,
            weight: w.data.clone(),
            bias: b.data.clone(),
        });
    }
    Mlp::from_layers(layers)
}

fn moments_tensors(state: &OptimState, out: &mut NamedTensors) {
    let step = state.step_count;
    out.push((
        "optim.step".into(),
        Tensor::vector(vec![(step >> 16) as f32, (step & 0xffff) as f32]),
    ));
    for (i, (m, v)) in state.first_moment.iter().zip(&state.second_moment).enumerate() {
        out.push((format!("optim.m.{i}"), Tensor::vector(m.iter().map(|&x| x as f32).collect())));
        out.push((format!("optim.v.{i}"), Tensor::vector(v.iter().map(|&x| x as f32).collect())));
    }
}

fn moments_from_tensors(t: &NamedTensors, path: &Path, state: &mut OptimState) -> Result<()> {
    let s = &t.get_tensor("optim.step", path)?.data;
    state.step_count = ((s[0] as u64) << 16) + s[1] as u64;
    for i in 0..state.first_moment.len() {
        let m = &t.get_tensor(&format!("optim.m.{i}"), path)?.data;
        let v = &t.get_tensor(&format!("optim.v.{i}"), path)?.data;
        check_dim(state.first_moment[i].len(), m.len())?;
        check_dim(state.second_moment[i].len(), v.len())?;
        state.first_moment[i] = m.iter().map(|&x| x as f64).collect();
        state.second_moment[i] = v.iter().map(|&x| x as f64).collect();
    }
    Ok(())
}

/// A trained next-latent model of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Cvf(PredictorParams),
    Baseline(BaselineParams, DiffusionSchedule),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Cvf(_) => "cvf",
            Model::Baseline(..) => "baseline",
        }
    }

    pub fn context_len(&self) -> usize {
        match self {
            Model::Cvf(p) => p.block_len(),
            Model::Baseline(p, _) => p.context_len(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Model::Cvf(p) => p.latent_dim(),
            Model::Baseline(p, _) => p.latent_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Model::Cvf(p) => p.size(),
            Model::Baseline(p, _) => p.size(),
        }
    }

    /// One next-latent sample with `steps` sampler steps.
    pub fn sample_next(
        &self,
        context: &LatentBlock,
        steps: usize,
        sampler: &SamplerConfig,
        rng: &mut CvfRng,
    ) -> Result<LatentFrame> {
        match self {
            Model::Cvf(p) => sample_next(p, context, &SamplerConfig { num_steps: steps, ..*sampler }, rng),
            Model::Baseline(p, s) => sample_baseline(p, s, context, steps, rng),
        }
    }

    pub fn rollout(
        &self,
        context: &LatentBlock,
        horizon: usize,
        steps: usize,
        sampler: &SamplerConfig,
        rng: &mut CvfRng,
    ) -> Result<Vec<LatentFrame>> {
        match self {
            Model::Cvf(p) => Ok(rollout_with_rng(
                p,
                context,
                horizon,
                &SamplerConfig { num_steps: steps, ..*sampler },
                rng,
            )?
            .latents),
            Model::Baseline(p, s) => rollout_baseline(p, s, context, horizon, steps, rng),
        }
    }

    pub fn to_tensors(&self, state: Option<&OptimState>) -> NamedTensors {
        let mut out = Vec::new();
        let (kind, ctx, dim, emb, net) = match self {
            Model::Cvf(p) => (0.0, p.block_len(), p.latent_dim(), *p.embedding(), p.net()),
            Model::Baseline(p, _) => (1.0, p.context_len(), p.latent_dim(), *p.embedding(), p.net()),
        };
        out.push((
            "meta.model".into(),
            Tensor::vector(vec![kind, ctx as f32, dim as f32, emb.num_frequencies as f32, emb.max_freq_log2 as f32]),
        ));
        if let Model::Baseline(_, s) = self {
            out.push((
                "meta.diffusion".into(),
                Tensor::vector(vec![s.t_steps() as f32, s.beta(1) as f32, s.beta(s.t_steps()) as f32]),
            ));
        }
        mlp_tensors("net", net, &mut out);
        if let Some(st) = state {
            moments_tensors(st, &mut out);
        }
        out
    }

    pub fn from_tensors(t: &NamedTensors, path: &Path) -> Result<Self> {
        let meta = &t.get_tensor("meta.model", path)?.data;
        if meta.len() != 5 {
            return Err(CvfError::Malformed {
                path: path.to_path_buf(),
                detail: "meta.model must hold 5 values".into(),
            });
        }
        let (ctx, dim) = (meta[1] as usize, meta[2] as usize);
        let emb = TimeEmbedding {
            num_frequencies: meta[3] as usize,
            max_freq_log2: meta[4] as f64,
        };
        let net = mlp_from_tensors("net", t, path)?;
        if meta[0] == 0.0 {
            Ok(Model::Cvf(PredictorParams::from_net(ctx, dim, emb, net)?))
        } else {
            let d = &t.get_tensor("meta.diffusion", path)?.data;
            let sched = DiffusionSchedule::linear(d[0] as usize, d[1] as f64, d[2] as f64)?;
            Ok(Model::Baseline(BaselineParams::from_net(ctx, dim, emb, net)?, sched))
        }
    }

    pub fn save(&self, path: &Path, state: Option<&OptimState>) -> Result<()> {
        save_container(path, &self.to_tensors(state))
    }

    /// Loads the model and, when present, the optimizer state saved with it.
    pub fn load(path: &Path, cfg: &ExperimentConfig) -> Result<(Self, Option<OptimState>)> {
        let t = load_container(path)?;
        let mut model = Model::from_tensors(&t, path)?;
        if let Model::Baseline(_, sched) = &mut model {
            // Betas are stored in single precision; prefer the exact values
            // from the configuration when they agree.
            let exact = cfg.diffusion_schedule()?;
            let same = exact.t_steps() == sched.t_steps()
                && exact.beta(1) as f32 == sched.beta(1) as f32
                && exact.beta(exact.t_steps()) as f32 == sched.beta(sched.t_steps()) as f32;
            if same {
                *sched = exact;
            }
        }
        let state = if t.get_tensor("optim.step", path).is_ok() {
            let mut st = match &model {
                Model::Cvf(p) => OptimState::new(p, cfg.adamw())?,
                Model::Baseline(p, _) => OptimState::new(p, cfg.adamw())?,
            };
            moments_from_tensors(&t, path, &mut st)?;
            Some(st)
        } else {
            None
        };
        Ok((model, state))
    }
}

pub fn save_autoencoder(ae: &AeParams, path: &Path) -> Result<()> {
    let s = ae.shape();
    let (arch, hidden) = match ae.arch() {
        AeArch::Linear => (0.0, 0.0),
        AeArch::Mlp { hidden } => (1.0, hidden as f32),
    };
    let mut out: NamedTensors = vec![(
        "meta.ae".into(),
        Tensor::vector(vec![s.channels as f32, s.height as f32, s.width as f32, arch, hidden]),
    )];
    mlp_tensors("encoder", ae.encoder(), &mut out);
    mlp_tensors("decoder", ae.decoder(), &mut out);
    let st = ae.standardizer();
    out.push(("standardizer.mean".into(), Tensor::from_f64(vec![st.mean.len()], &st.mean)?));
    out.push(("standardizer.std".into(), Tensor::from_f64(vec![st.std.len()], &st.std)?));
    save_container(path, &out)
}

pub fn load_autoencoder(path: &Path) -> Result<AeParams> {
    let t = load_container(path)?;
    let m = &t.get_tensor("meta.ae", path)?.data;
    let shape = FrameShape {
        channels: m[0] as usize,
        height: m[1] as usize,
        width: m[2] as usize,
    };
    let arch = if m[3] == 0.0 {
        AeArch::Linear
    } else {
        AeArch::Mlp { hidden: m[4] as usize }
    };
    let standardizer = Standardizer {
        mean: t.get_tensor("standardizer.mean", path)?.to_f64(),
        std: t.get_tensor("standardizer.std", path)?.to_f64(),
    };
    AeParams::from_parts(
        shape,
        arch,
        mlp_from_tensors("encoder", &t, path)?,
        mlp_from_tensors("decoder", &t, path)?,
        standardizer,
    )
}

/// All frames of all videos, in order.
pub fn all_frames(videos: &[VideoTensor]) -> Vec<&[f32]> {
    videos.iter().flat_map(|v| v.frames()).collect()
}

pub fn fit_autoencoder(cfg: &ExperimentConfig, videos: &[VideoTensor]) -> Result<(AeParams, AeTrainReport)> {
    if videos.is_empty() {
        return Err(CvfError::InvalidArgument("autoencoder corpus is empty".into()));
    }
    let frames = all_frames(videos);
    train_autoencoder(&frames, videos[0].shape(), &cfg.ae_config())
}

pub fn new_predictor(cfg: &ExperimentConfig, latent_dim: usize) -> Result<PredictorParams> {
    let mut rng = rng_for(cfg.train.seed, stream::INIT);
    PredictorParams::new(
        cfg.block_len(),
        latent_dim,
        cfg.model.hidden,
        cfg.model.depth,
        cfg.embedding(),
        &mut rng,
    )
}

/// Baseline with the predictor's depth and the hidden width that matches its
/// parameter count.
pub fn new_baseline(cfg: &ExperimentConfig, latent_dim: usize) -> Result<BaselineParams> {
    let emb = cfg.embedding();
    let target = count_params(&predictor_widths(cfg.block_len(), latent_dim, cfg.model.hidden, cfg.model.depth, &emb));
    let hidden = matched_hidden(cfg.block_len(), latent_dim, cfg.model.depth, &emb, target);
    debug_assert!(count_params(&baseline_widths(cfg.block_len(), latent_dim, hidden, cfg.model.depth, &emb)) > 0);
    let mut rng = rng_for(cfg.train.seed, stream::INIT);
    BaselineParams::new(cfg.block_len(), latent_dim, hidden, cfg.model.depth, emb, &mut rng)
}

/// Trains the model family selected by `train.model`, optionally resuming
/// from an earlier model and optimizer state.
pub fn train_model(
    cfg: &ExperimentConfig,
    latents: LatentCorpus,
    resume: Option<(Model, OptimState)>,
    on_record: impl FnMut(&TrainRecord) -> Result<()>,
) -> Result<(Model, OptimState, Vec<TrainRecord>)> {
    let dim = latents.dim();
    let mut dataset = WindowDataset::new(latents, cfg.block_len(), cfg.train.seed, true)?;
    let schedule = cfg.lr_schedule()?;
    match (cfg.train.model, resume) {
        (crate::io::config::ModelKind::Cvf, resume) => {
            let (mut params, mut state) = match resume {
                Some((Model::Cvf(p), s)) => (p, s),
                Some(_) => return Err(CvfError::config("train.model", "checkpoint is not a cvf model")),
                None => {
                    let p = new_predictor(cfg, dim)?;
                    let s = OptimState::new(&p, cfg.adamw())?;
                    (p, s)
                }
            };
            let records = train_loop(
                &cfg.train_config(),
                &cfg.schedule_constants(),
                &schedule,
                &mut dataset,
                &mut params,
                &mut state,
                on_record,
            )?;
            Ok((Model::Cvf(params), state, records))
        }
        (crate::io::config::ModelKind::Baseline, resume) => {
            let sched = cfg.diffusion_schedule()?;
            let (mut params, mut state) = match resume {
                Some((Model::Baseline(p, _), s)) => (p, s),
                Some(_) => return Err(CvfError::config("train.model", "checkpoint is not a baseline model")),
                None => {
                    let p = new_baseline(cfg, dim)?;
                    let s = OptimState::new(&p, cfg.adamw())?;
                    (p, s)
                }
            };
            let bcfg = BaselineTrainConfig {
                batch_size: cfg.train.batch_size,
                total_steps: cfg.train.total_steps,
                seed: cfg.train.seed,
                eval_every: cfg.train.eval_every,
                min_step: 1,
                max_step: (cfg.train.baseline_max_step > 0).then_some(cfg.train.baseline_max_step),
            };
            let records = train_baseline(&bcfg, &sched, &schedule, &mut dataset, &mut params, &mut state, on_record)?;
            Ok((Model::Baseline(params, sched), state, records))
        }
    }
}

/// Latent context window `frames[start .. start + len]` of one video.
pub fn context_block(latents: &LatentCorpus, video: usize, start: usize, len: usize) -> Result<LatentBlock> {
    let v = latents.videos.get(video).ok_or_else(|| {
        CvfError::InvalidArgument(format!("video {video} outside corpus of {}", latents.videos.len()))
    })?;
    if start + len > v.len() {
        return Err(CvfError::InvalidArgument(format!(
            "video {video} has {} frames; window {start}..{} does not fit",
            v.len(),
            start + len
        )));
    }
    LatentBlock::new(v[start..start + len].to_vec())
}

/// One autoregressive rollout per entry, started from the first frames of
/// video `index % num_videos` with noise seed `sampler.seed + index`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSet {
    pub videos: Vec<usize>,
    pub latents: Vec<Vec<LatentFrame>>,
    /// Mean wall time per predicted frame of each rollout.
    pub wall_ms: Vec<f64>,
    pub steps: usize,
    pub context_len: usize,
}

pub fn rollout_set(
    model: &Model,
    latents: &LatentCorpus,
    count: usize,
    horizon: usize,
    steps: usize,
    sampler: &SamplerConfig,
) -> Result<RolloutSet> {
    let n = latents.videos.len();
    let mut set = RolloutSet {
        videos: Vec::with_capacity(count),
        latents: Vec::with_capacity(count),
        wall_ms: Vec::with_capacity(count),
        steps,
        context_len: model.context_len(),
    };
    for r in 0..count {
        let video = r % n;
        let ctx = context_block(latents, video, 0, model.context_len())?;
        let mut rng = rng_for(sampler.seed.wrapping_add(r as u64), stream::SAMPLE);
        let start = Instant::now();
        let out = model.rollout(&ctx, horizon, steps, sampler, &mut rng)?;
        set.wall_ms.push(start.elapsed().as_secs_f64() * 1e3 / horizon as f64);
        set.videos.push(video);
        set.latents.push(out);
    }
    Ok(set)
}

impl RolloutSet {
    pub fn to_tensors(&self) -> Result<NamedTensors> {
        let r = self.latents.len();
        let m = self.latents.first().map_or(0, |l| l.len());
        let d = self.latents.first().and_then(|l| l.first()).map_or(0, |z| z.dim());
        let mut data = Vec::with_capacity(r * m * d);
        for l in &self.latents {
            for z in l {
                data.extend(z.as_slice().iter().map(|&x| x as f32));
            }
        }
        Ok(vec![
            ("rollout.latents".into(), Tensor::new(vec![r, m, d], data)?),
            ("rollout.videos".into(), Tensor::vector(self.videos.iter().map(|&v| v as f32).collect())),
            ("rollout.steps".into(), Tensor::vector(vec![self.steps as f32])),
            ("rollout.context".into(), Tensor::vector(vec![self.context_len as f32])),
        ])
    }

    pub fn from_tensors(t: &NamedTensors, path: &Path) -> Result<Self> {
        let l = t.get_tensor("rollout.latents", path)?;
        let [r, m, d] = l.dims[..] else {
            return Err(CvfError::Malformed {
                path: path.to_path_buf(),
                detail: "rollout.latents must have rank 3".into(),
            });
        };
        let latents = (0..r)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let s = (i * m + j) * d;
                        LatentFrame::new(l.data[s..s + d].iter().map(|&x| x as f64).collect())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RolloutSet {
            videos: t.get_tensor("rollout.videos", path)?.data.iter().map(|&v| v as usize).collect(),
            latents,
            wall_ms: vec![0.0; r],
            steps: t.get_tensor("rollout.steps", path)?.data[0] as usize,
            context_len: t.get_tensor("rollout.context", path)?.data[0] as usize,
        })
    }
}

pub fn decode_all(ae: &AeParams, latents: &[LatentFrame]) -> Result<Vec<Vec<f32>>> {
    latents.iter().map(|z| ae.decode(z)).collect()
}

/// Quality of one-step predictions for one model at one step count.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub model: &'static str,
    pub steps: usize,
    pub params: usize,
    pub fd_proxy: Option<f64>,
    pub mse: f64,
    pub wall_ms: f64,
}

impl CompareRow {
    pub const CSV_HEADER: [&'static str; 6] = ["model", "steps", "params", "fd_proxy", "mse", "wall_ms"];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.model.to_string(),
            self.steps.to_string(),
            self.params.to_string(),
            self.fd_proxy.map(|v| v.to_string()).unwrap_or_default(),
            self.mse.to_string(),
            self.wall_ms.to_string(),
        ]
    }
}

/// Every `(video, start)` window whose next frame exists, capped at `limit`
/// and spread evenly over the corpus.
pub fn eval_windows(latents: &LatentCorpus, context_len: usize, limit: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = latents
        .videos
        .iter()
        .enumerate()
        .flat_map(|(v, f)| (0..f.len().saturating_sub(context_len)).map(move |s| (v, s)))
        .collect();
    if all.len() <= limit {
        return all;
    }
    (0..limit).map(|i| all[i * all.len() / limit]).collect()
}

/// One-step prediction quality of `model` with `steps` sampler steps on the
/// given windows. Pixel metrics are used when `ae` is given, latent squared
/// error (summed over coordinates) otherwise.
#[allow(clippy::too_many_arguments)]
pub fn one_step_quality(
    model: &Model,
    latents: &LatentCorpus,
    truth_frames: Option<&[VideoTensor]>,
    ae: Option<&AeParams>,
    windows: &[(usize, usize)],
    steps: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<CompareRow> {
    use crate::metrics::{fd_proxy, mse, FeatureExtractor, FEATURE_DIM};
    let k = model.context_len();
    let mut preds = Vec::with_capacity(windows.len());
    let mut elapsed = 0.0;
    for (i, &(v, s)) in windows.iter().enumerate() {
        let ctx = context_block(latents, v, s, k)?;
        let mut rng = rng_for(seed.wrapping_add(i as u64), stream::EVAL);
        let start = Instant::now();
        preds.push(model.sample_next(&ctx, steps, sampler, &mut rng)?);
        elapsed += start.elapsed().as_secs_f64() * 1e3;
    }
    let n = windows.len().max(1) as f64;
    let (err, fd) = match (ae, truth_frames) {
        (Some(ae), Some(videos)) => {
            let decoded = decode_all(ae, &preds)?;
            let truth: Vec<&[f32]> = windows.iter().map(|&(v, s)| videos[v].frame(s + k)).collect();
            let mut total = 0.0;
            for (p, t) in decoded.iter().zip(&truth) {
                total += mse(p, t)?;
            }
            let fd = if windows.len() >= FEATURE_DIM {
                let refs: Vec<&[f32]> = decoded.iter().map(|f| f.as_slice()).collect();
                Some(fd_proxy(&truth, &refs, &FeatureExtractor::new(ae.shape().len()))?)
            } else {
                None
            };
            (total / n, fd)
        }
        _ => {
            let total: f64 = windows
                .iter()
                .zip(&preds)
                .map(|(&(v, s), p)| p.squared_distance(&latents.videos[v][s + k]))
                .sum();
            (total / n, None)
        }
    };
    Ok(CompareRow {
        model: model.name(),
        steps,
        params: model.num_params(),
        fd_proxy: fd,
        mse: err,
        wall_ms: elapsed / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn corpus_round_trips_through_container() {
        let dir = tempfile::tempdir().unwrap();
        for text in [
            "data.kind = bimodal_bounce\ndata.num_videos = 3\ndata.video_length = 6",
            "data.kind = latent_rotation\ndata.num_videos = 3",
        ] {
            let cfg = small_cfg(text);
            let c = Corpus::generate(&cfg).unwrap();
            let p = dir.path().join("c.cvf");
            c.save(&p).unwrap();
            let back = Corpus::load(&p).unwrap();
            match (&c, &back) {
                (Corpus::Latent(a), Corpus::Latent(b)) => {
                    for (va, vb) in a.iter().zip(b) {
                        for (za, zb) in va.iter().zip(vb) {
                            for (x, y) in za.as_slice().iter().zip(zb.as_slice()) {
                                assert_eq!(*x as f32, *y as f32);
                            }
                        }
                    }
                }
                _ => assert_eq!(c, back),
            }
        }
    }

    #[test]
    fn model_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg("model.hidden = 8\nmodel.depth = 2");
        let p = new_predictor(&cfg, 3).unwrap();
        let st = OptimState::new(&p, cfg.adamw()).unwrap();
        let m = Model::Cvf(p);
        let path = dir.path().join("m.cvf");
        m.save(&path, Some(&st)).unwrap();
        let (back, st2) = Model::load(&path, &cfg).unwrap();
        assert_eq!(back, m);
        assert_eq!(st2.unwrap().step_count, 0);

        let b = Model::Baseline(new_baseline(&cfg, 3).unwrap(), cfg.diffusion_schedule().unwrap());
        b.save(&path, None).unwrap();
        let (back, st) = Model::load(&path, &cfg).unwrap();
        assert_eq!(back, b);
        assert!(st.is_none());
    }

    #[test]
    fn baseline_budget_matches_predictor() {
        let cfg = ExperimentConfig::default();
        let a = new_predictor(&cfg, 16).unwrap().size() as f64;
        let b = new_baseline(&cfg, 16).unwrap().size() as f64;
        assert!((a - b).abs() / a <= 0.01, "{a} vs {b}");
    }

    #[test]
    fn autoencoder_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let shape = FrameShape {
            channels: 1,
            height: 4,
            width: 4,
        };
        let ae = AeParams::new(shape, 3, AeArch::Mlp { hidden: 5 }, 1).unwrap();
        let p = dir.path().join("ae.cvf");
        save_autoencoder(&ae, &p).unwrap();
        assert_eq!(load_autoencoder(&p).unwrap(), ae);
    }
}
