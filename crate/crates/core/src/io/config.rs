//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so
//! the empty document is valid. [`ExperimentConfig::to_text`] emits the fully
//! resolved document, which parses back to the same value.

use std::fmt::Display;
use std::str::FromStr;

use crate::autoencoder::{AeArch, AeTrainConfig};
use crate::baseline::DiffusionSchedule;
use crate::datagen::{DatasetKind, DatasetSpec};
use crate::error::{CvfError, Result};
use crate::optim::{AdamWConfig, LrSchedule};
use crate::predictor::TimeEmbedding;
use crate::process::ScheduleConstants;
use crate::sampler::SamplerConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Cvf,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cvf => "cvf",
            ModelKind::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AeKind {
    Linear,
    Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    /// Number of context frames `k`; blocks hold `k + 1` latents.
    pub context: usize,
    pub hidden: usize,
    pub depth: usize,
    pub num_frequencies: usize,
    pub max_freq_log2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimSection {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip; 0 disables it.
    pub grad_clip: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub total_steps: u64,
    pub t_grid: usize,
    pub discrete_t: bool,
    pub seed: u64,
    pub eval_every: u64,
    pub model: ModelKind,
    /// Highest diffusion step drawn when training the baseline; 0 means all.
    pub baseline_max_step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSection {
    pub num_steps: usize,
    pub stochastic: bool,
    pub seed: u64,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeSection {
    pub arch: AeKind,
    pub hidden: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub latent_std: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSection {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub num_rollouts: usize,
    pub compare_steps: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub process: ScheduleConstants,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub data: DatasetSpec,
    pub ae: AeSection,
    pub baseline: BaselineSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let emb = TimeEmbedding::default();
        let adam = AdamWConfig::default();
        let train = TrainConfig::default();
        let sampler = SamplerConfig::default();
        let ae = AeTrainConfig::default();
        ExperimentConfig {
            process: ScheduleConstants::default(),
            model: ModelSection {
                context: 1,
                hidden: 128,
                depth: 3,
                num_frequencies: emb.num_frequencies,
                max_freq_log2: emb.max_freq_log2,
            },
            optim: OptimSection {
                max_lr: 1e-3,
                min_lr: 0.0,
                warmup_steps: 500,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                weight_decay: adam.weight_decay,
                grad_clip: 0.0,
            },
            train: TrainSection {
                batch_size: train.batch_size,
                total_steps: train.total_steps,
                t_grid: train.t_grid,
                discrete_t: train.discrete_t,
                seed: train.seed,
                eval_every: train.eval_every,
                model: ModelKind::Cvf,
                baseline_max_step: 0,
            },
            sampler: SamplerSection {
                num_steps: sampler.num_steps,
                stochastic: sampler.stochastic,
                seed: sampler.seed,
                horizon: 30,
            },
            data: DatasetSpec::default(),
            ae: AeSection {
                arch: AeKind::Mlp,
                hidden: match ae.arch {
                    AeArch::Mlp { hidden } => hidden,
                    AeArch::Linear => 128,
                },
                latent_dim: ae.latent_dim,
                epochs: ae.epochs,
                batch_size: ae.batch_size,
                max_lr: ae.max_lr,
                warmup_steps: ae.warmup_steps,
                latent_std: ae.latent_std,
                seed: ae.seed,
            },
            baseline: BaselineSection {
                t_steps: 100,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            eval: EvalSection {
                num_rollouts: 500,
                compare_steps: vec![1, 2, 5, 10, 25, 50, 100],
                seed: 0,
            },
        }
    }
}

enum Field<'a> {
    F64(&'a mut f64),
    U64(&'a mut u64),
    Usize(&'a mut usize),
    Bool(&'a mut bool),
    Data(&'a mut DatasetKind),
    Ae(&'a mut AeKind),
    Model(&'a mut ModelKind),
    List(&'a mut Vec<usize>),
}

fn parse_num<T: FromStr>(key: &str, raw: &str, what: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| CvfError::config(key, format!("expected {what}, got {raw:?}")))
}

fn show_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Field<'_> {
    fn set(self, key: &str, raw: &str) -> Result<()> {
        match self {
            Field::F64(v) => {
                let x: f64 = parse_num(key, raw, "a real number")?;
                if !x.is_finite() {
                    return Err(CvfError::config(key, format!("{raw:?} is not finite")));
                }
                *v = x;
            }
            Field::U64(v) => *v = parse_num(key, raw, "a non-negative integer")?,
            Field::Usize(v) => *v = parse_num(key, raw, "a non-negative integer")?,
            Field::Bool(v) => {
                *v = match raw {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    _ => return Err(CvfError::config(key, format!("expected true/false, got {raw:?}"))),
                }
            }
            Field::Data(v) => {
                *v = DatasetKind::parse(raw).ok_or_else(|| {
                    CvfError::config(key, format!("unknown dataset kind {raw:?}"))
                })?
            }
            Field::Ae(v) => {
                *v = match raw {
                    "linear" => AeKind::Linear,
                    "mlp" => AeKind::Mlp,
                    _ => return Err(CvfError::config(key, format!("expected linear or mlp, got {raw:?}"))),
                }
            }
            Field::Model(v) => {
                *v = match raw {
                    "cvf" => ModelKind::Cvf,
                    "baseline" => ModelKind::Baseline,
                    _ => return Err(CvfError::config(key, format!("expected cvf or baseline, got {raw:?}"))),
                }
            }
            Field::List(v) => {
                *v = raw
                    .split(',')
                    .map(|s| parse_num(key, s.trim(), "a comma-separated list of integers"))
                    .collect::<Result<_>>()?
            }
        }
        Ok(())
    }

    fn show(&self) -> String {
        match self {
            Field::F64(v) => format!("{:?}", **v),
            Field::U64(v) => v.to_string(),
            Field::Usize(v) => v.to_string(),
            Field::Bool(v) => v.to_string(),
            Field::Data(v) => v.name().to_string(),
            Field::Ae(v) => match v {
                AeKind::Linear => "linear".into(),
                AeKind::Mlp => "mlp".into(),
            },
            Field::Model(v) => v.name().to_string(),
            Field::List(v) => show_list(v),
        }
    }
}

impl ExperimentConfig {
    fn fields(&mut self) -> Vec<(&'static str, Field<'_>)> {
        use Field::*;
        let ExperimentConfig {
            process,
            model,
            optim,
            train,
            sampler,
            data,
            ae,
            baseline,
            eval,
        } = self;
        vec![
            ("process.t_floor", F64(&mut process.t_floor)),
            ("process.weight_cap", F64(&mut process.weight_cap)),
            ("model.context", Usize(&mut model.context)),
            ("model.hidden", Usize(&mut model.hidden)),
            ("model.depth", Usize(&mut model.depth)),
            ("model.num_frequencies", Usize(&mut model.num_frequencies)),
            ("model.max_freq_log2", F64(&mut model.max_freq_log2)),
            ("optim.max_lr", F64(&mut optim.max_lr)),
            ("optim.min_lr", F64(&mut optim.min_lr)),
            ("optim.warmup_steps", U64(&mut optim.warmup_steps)),
            ("optim.beta1", F64(&mut optim.beta1)),
            ("optim.beta2", F64(&mut optim.beta2)),
            ("optim.eps", F64(&mut optim.eps)),
            ("optim.weight_decay", F64(&mut optim.weight_decay)),
            ("optim.grad_clip", F64(&mut optim.grad_clip)),
            ("train.batch_size", Usize(&mut train.batch_size)),
            ("train.total_steps", U64(&mut train.total_steps)),
            ("train.t_grid", Usize(&mut train.t_grid)),
            ("train.discrete_t", Bool(&mut train.discrete_t)),
            ("train.seed", U64(&mut train.seed)),
            ("train.eval_every", U64(&mut train.eval_every)),
            ("train.model", Model(&mut train.model)),
            ("train.baseline_max_step", Usize(&mut train.baseline_max_step)),
            ("sampler.num_steps", Usize(&mut sampler.num_steps)),
            ("sampler.stochastic", Bool(&mut sampler.stochastic)),
            ("sampler.seed", U64(&mut sampler.seed)),
            ("sampler.horizon", Usize(&mut sampler.horizon)),
            ("data.kind", Data(&mut data.kind)),
            ("data.num_videos", Usize(&mut data.num_videos)),
            ("data.video_length", Usize(&mut data.video_length)),
            ("data.frame_size", Usize(&mut data.frame_size)),
            ("data.latent_dim", Usize(&mut data.latent_dim)),
            ("data.radius", F64(&mut data.radius)),
            ("data.speed", F64(&mut data.speed)),
            ("data.trigger", Usize(&mut data.trigger)),
            ("data.decay", F64(&mut data.decay)),
            ("data.angle", F64(&mut data.angle)),
            ("data.offset", F64(&mut data.offset)),
            ("data.sigma", F64(&mut data.sigma)),
            ("data.init_scale", F64(&mut data.init_scale)),
            ("data.seed", U64(&mut data.seed)),
            ("ae.arch", Ae(&mut ae.arch)),
            ("ae.hidden", Usize(&mut ae.hidden)),
            ("ae.latent_dim", Usize(&mut ae.latent_dim)),
            ("ae.epochs", Usize(&mut ae.epochs)),
            ("ae.batch_size", Usize(&mut ae.batch_size)),
            ("ae.max_lr", F64(&mut ae.max_lr)),
            ("ae.warmup_steps", U64(&mut ae.warmup_steps)),
            ("ae.latent_std", F64(&mut ae.latent_std)),
            ("ae.seed", U64(&mut ae.seed)),
            ("baseline.t_steps", Usize(&mut baseline.t_steps)),
            ("baseline.beta_start", F64(&mut baseline.beta_start)),
            ("baseline.beta_end", F64(&mut baseline.beta_end)),
            ("eval.num_rollouts", Usize(&mut eval.num_rollouts)),
            ("eval.compare_steps", List(&mut eval.compare_steps)),
            ("eval.seed", U64(&mut eval.seed)),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        ExperimentConfig::default().fields().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key from its textual value (no validation across keys).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let field = self
            .fields()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, f)| f)
            .ok_or_else(|| CvfError::config(key, "unknown key"))?;
        field.set(key, raw.trim())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.clone()
            .fields()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, f)| f.show())
    }

    /// Parses a document on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CvfError::config(format!("line {}", n + 1), format!("expected key = value, got {line:?}"))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, f) in self.clone().fields() {
            out.push_str(&format!("{k} = {}\n", f.show()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        ScheduleConstants::new(self.process.t_floor, self.process.weight_cap).map_err(|e| {
            CvfError::config("process.t_floor", e.to_string())
        })?;
        let m = &self.model;
        if m.context == 0 {
            return Err(CvfError::config("model.context", "must be >= 1"));
        }
        if m.hidden == 0 {
            return Err(CvfError::config("model.hidden", "must be >= 1"));
        }
        if m.num_frequencies < 2 {
            return Err(CvfError::config("model.num_frequencies", "must be >= 2"));
        }
        if !(m.max_freq_log2 >= 0.0) {
            return Err(CvfError::config("model.max_freq_log2", "must be >= 0"));
        }
        self.adamw().validate()?;
        if !(self.optim.grad_clip >= 0.0) {
            return Err(CvfError::config("optim.grad_clip", "must be >= 0"));
        }
        if self.train.total_steps > 0 {
            self.lr_schedule()?;
        }
        self.train_config().validate()?;
        self.sampler_config().validate()?;
        if self.sampler.horizon == 0 {
            return Err(CvfError::config("sampler.horizon", "must be >= 1"));
        }
        self.data.validate()?;
        let ae = &self.ae;
        if ae.latent_dim == 0 {
            return Err(CvfError::config("ae.latent_dim", "must be >= 1"));
        }
        if ae.hidden == 0 {
            return Err(CvfError::config("ae.hidden", "must be >= 1"));
        }
        if ae.epochs == 0 || ae.batch_size == 0 {
            return Err(CvfError::config("ae.epochs", "epochs and batch size must be >= 1"));
        }
        if !(ae.max_lr > 0.0) {
            return Err(CvfError::config("ae.max_lr", "must be > 0"));
        }
        if !(0.5..=2.0).contains(&ae.latent_std) {
            return Err(CvfError::config("ae.latent_std", "must lie in [0.5, 2]"));
        }
        self.diffusion_schedule()?;
        if self.train.baseline_max_step > self.baseline.t_steps {
            return Err(CvfError::config("train.baseline_max_step", "must not exceed baseline.t_steps"));
        }
        if self.eval.compare_steps.is_empty()
            || self
                .eval
                .compare_steps
                .iter()
                .any(|&n| n == 0 || n > self.baseline.t_steps)
        {
            return Err(CvfError::config(
                "eval.compare_steps",
                format!("each entry must lie in 1..={}", self.baseline.t_steps),
            ));
        }
        Ok(())
    }

    pub fn block_len(&self) -> usize {
        self.model.context + 1
    }

    pub fn schedule_constants(&self) -> ScheduleConstants {
        self.process
    }

    pub fn embedding(&self) -> TimeEmbedding {
        TimeEmbedding {
            num_frequencies: self.model.num_frequencies,
            max_freq_log2: self.model.max_freq_log2,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            eps: self.optim.eps,
            weight_decay: self.optim.weight_decay,
            max_grad_norm: (self.optim.grad_clip > 0.0).then_some(self.optim.grad_clip),
        }
    }

    pub fn lr_schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(
            self.optim.max_lr,
            self.optim.warmup_steps,
            self.train.total_steps,
            self.optim.min_lr,
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            total_steps: self.train.total_steps,
            t_grid: self.train.t_grid,
            discrete_t: self.train.discrete_t,
            seed: self.train.seed,
            eval_every: self.train.eval_every,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            num_steps: self.sampler.num_steps,
            t_floor: self.process.t_floor,
            stochastic: self.sampler.stochastic,
            seed: self.sampler.seed,
        }
    }

    pub fn ae_config(&self) -> AeTrainConfig {
        AeTrainConfig {
            arch: match self.ae.arch {
                AeKind::Linear => AeArch::Linear,
                AeKind::Mlp => AeArch::Mlp { hidden: self.ae.hidden },
            },
            latent_dim: self.ae.latent_dim,
            epochs: self.ae.epochs,
            batch_size: self.ae.batch_size,
            max_lr: self.ae.max_lr,
            warmup_steps: self.ae.warmup_steps,
            latent_std: self.ae.latent_std,
            seed: self.ae.seed,
            ..AeTrainConfig::default()
        }
    }

    pub fn diffusion_schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.baseline.t_steps, self.baseline.beta_start, self.baseline.beta_end)
    }
}

impl Display for ExperimentConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::parse("# only a comment\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn documented_examples() {
        let c = ExperimentConfig::parse("sampler.num_steps = 5").unwrap();
        assert_eq!(c.sampler_config().num_steps, 5);
        let c = ExperimentConfig::parse("optim.max_lr = 5e-5").unwrap();
        assert_eq!(c.optim.max_lr, 5e-5);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("bogus.key = 1", "bogus.key"),
            ("train.batch_size = many", "train.batch_size"),
            ("train.batch_size = 0", "train.batch_size"),
            ("sampler.stochastic = maybe", "sampler.stochastic"),
            ("data.kind = bouncing_ball\ndata.radius = 9", "data.radius"),
            ("optim.beta1 = 1.5", "optim.beta1"),
            ("eval.compare_steps = 1,200", "eval.compare_steps"),
            ("ae.latent_std = 3", "ae.latent_std"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(CvfError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn echo_round_trips() {
        let mut c = ExperimentConfig::default();
        c.optim.max_lr = 0.1 + 0.2;
        c.data.kind = DatasetKind::LatentRotation;
        c.train.model = ModelKind::Baseline;
        c.eval.compare_steps = vec![3, 7];
        c.sampler.stochastic = false;
        let text = c.to_text();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        assert_eq!(text.lines().count(), ExperimentConfig::keys().len());
    }

    #[test]
    fn keys_are_unique() {
        let keys = ExperimentConfig::keys();
        let set: std::collections::HashSet<_> = keys.iter().collect();
        assert_eq!(set.len(), keys.len());
    }
}
