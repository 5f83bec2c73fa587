//! AdamW with a warmup + cosine learning-rate schedule.

use crate::error::{CvfError, Result};
use crate::nn::{Gradients, Parameters};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(max_lr: f64, warmup_steps: u64, total_steps: u64, min_lr: f64) -> Result<Self> {
        if !(warmup_steps > 0 && warmup_steps < total_steps) {
            return Err(CvfError::config(
                "optim.warmup_steps",
                format!("need 0 < warmup_steps ({warmup_steps}) < total_steps ({total_steps})"),
            ));
        }
        if !(min_lr >= 0.0 && max_lr > min_lr && max_lr.is_finite()) {
            return Err(CvfError::config(
                "optim.max_lr",
                format!("need max_lr ({max_lr}) > min_lr ({min_lr}) >= 0"),
            ));
        }
        Ok(LrSchedule {
            max_lr,
            warmup_steps,
            total_steps,
            min_lr,
        })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step <= self.warmup_steps {
            return self.max_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.min_lr + (self.max_lr - self.min_lr) * cosine
    }
}

pub fn lr_at(step: u64, s: &LrSchedule) -> f64 {
    s.lr_at(step)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm gradient cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: None,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(CvfError::config("optim.beta1", "must lie in (0, 1)"));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(CvfError::config("optim.beta2", "must lie in (0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(CvfError::config("optim.eps", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(CvfError::config("optim.weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl OptimState {
    pub fn new(params: &impl Parameters, config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        let sizes = params.tensor_sizes();
        Ok(OptimState {
            config,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        })
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
///
/// Parameters are left untouched when the gradients or the resulting
/// update are non-finite.
pub fn adamw_step(
    params: &mut impl Parameters,
    grads: &Gradients,
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    let sizes = params.tensor_sizes();
    if sizes.len() != grads.tensors.len()
        || sizes.iter().zip(&grads.tensors).any(|(n, g)| *n != g.len())
        || sizes.iter().zip(&state.first_moment).any(|(n, m)| *n != m.len())
    {
        return Err(CvfError::InvalidArgument(
            "gradient / optimizer state shapes do not match parameters".into(),
        ));
    }
    if !(lr >= 0.0) {
        return Err(CvfError::InvalidArgument(format!("learning rate {lr} must be >= 0")));
    }
    if !grads.is_finite() {
        return Err(CvfError::NonFinite("gradient contains non-finite entries".into()));
    }
    let cfg = state.config;
    let clip = match cfg.max_grad_norm {
        Some(cap) => {
            let norm = grads.global_norm();
            if norm > cap {
                cap / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    let t = state.step_count + 1;
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);

    let mut new_m = state.first_moment.clone();
    let mut new_v = state.second_moment.clone();
    let mut updated: Vec<Vec<f32>> = Vec::with_capacity(sizes.len());
    for (k, p) in params.tensors().into_iter().enumerate() {
        let g = &grads.tensors[k];
        let m = &mut new_m[k];
        let v = &mut new_v[k];
        let mut out = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            let gi = g[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let w = p[i] as f64;
            let next = w - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * w);
            if !next.is_finite() {
                return Err(CvfError::NonFinite(format!(
                    "update of tensor {k} entry {i} is {next}"
                )));
            }
            out.push(next as f32);
        }
        updated.push(out);
    }
    for (dst, src) in params.tensors_mut().into_iter().zip(updated) {
        dst.copy_from_slice(&src);
    }
    state.first_moment = new_m;
    state.second_moment = new_v;
    state.step_count = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug)]
    struct Vector(Vec<f32>);

    impl Parameters for Vector {
        fn tensors(&self) -> Vec<&[f32]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
            vec![&mut self.0]
        }
    }

    fn cfg(weight_decay: f64) -> AdamWConfig {
        AdamWConfig {
            weight_decay,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn lr_schedule_examples() {
        let s = LrSchedule::new(1e-3, 500, 20_000, 0.0).unwrap();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(500), 1e-3);
        let mid = s.lr_at((500 + 20_000) / 2);
        assert!((mid - 5e-4).abs() < 1e-15, "{mid}");
        assert_eq!(s.lr_at(20_000), 0.0);
        assert_eq!(s.lr_at(50_000), 0.0);
        let floor = LrSchedule::new(1e-3, 10, 100, 1e-4).unwrap();
        assert!((floor.lr_at(1000) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn lr_schedule_validation() {
        assert!(LrSchedule::new(1e-3, 0, 10, 0.0).is_err());
        assert!(LrSchedule::new(1e-3, 10, 10, 0.0).is_err());
        assert!(LrSchedule::new(1e-3, 5, 10, 1e-3).is_err());
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = Vector(vec![0.5, -1.25]);
        let mut st = OptimState::new(&p, cfg(0.0)).unwrap();
        let g = Gradients::zeros_for(&[2]);
        adamw_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p.0, vec![0.5, -1.25]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Vector(vec![0.0]);
        let mut st = OptimState::new(&p, cfg(0.0)).unwrap();
        let g = Gradients { tensors: vec![vec![1.0]] };
        adamw_step(&mut p, &g, &mut st, 0.01).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        assert!((p.0[0] as f64 + 0.01 / (1.0 + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay() {
        let mut p = Vector(vec![1.0]);
        let mut st = OptimState::new(&p, cfg(0.1)).unwrap();
        adamw_step(&mut p, &Gradients::zeros_for(&[1]), &mut st, 0.01).unwrap();
        assert!((p.0[0] - 0.999).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut p = Vector(vec![1.0]);
        let mut st = OptimState::new(&p, cfg(0.0)).unwrap();
        let g = Gradients { tensors: vec![vec![f64::NAN]] };
        assert!(adamw_step(&mut p, &g, &mut st, 0.01).is_err());
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn clipping_caps_effective_gradient() {
        let mut a = Vector(vec![0.0, 0.0]);
        let mut b = a.clone();
        let mut sa = OptimState::new(&a, cfg(0.0)).unwrap();
        let mut sb = OptimState::new(
            &b,
            AdamWConfig {
                max_grad_norm: Some(1.0),
                ..cfg(0.0)
            },
        )
        .unwrap();
        let g = Gradients { tensors: vec![vec![30.0, 40.0]] };
        adamw_step(&mut a, &g, &mut sa, 0.1).unwrap();
        adamw_step(&mut b, &g, &mut sb, 0.1).unwrap();
        // First Adam step is scale invariant, so clipping only shows up in the moments.
        assert!((sb.first_moment[0][0] - 0.1 * 0.6).abs() < 1e-12);
        assert!((sa.first_moment[0][0] - 0.1 * 30.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_converges() {
        use crate::rng::{normal_vec, rng_for};
        let mut rng = rng_for(11, 0);
        for _ in 0..5 {
            let target: Vec<f64> = normal_vec(&mut rng, 8);
            let mut p = Vector(normal_vec(&mut rng, 8).iter().map(|v| *v as f32 * 3.0).collect());
            let f = |p: &Vector| -> f64 {
                p.0.iter().zip(&target).map(|(w, t)| (*w as f64 - t).powi(2)).sum()
            };
            let f0 = f(&p);
            let mut st = OptimState::new(&p, cfg(0.0)).unwrap();
            for _ in 0..500 {
                let g = Gradients {
                    tensors: vec![p.0.iter().zip(&target).map(|(w, t)| 2.0 * (*w as f64 - t)).collect()],
                };
                adamw_step(&mut p, &g, &mut st, 0.05).unwrap();
            }
            assert!(f(&p) <= 0.01 * f0, "{} vs {}", f(&p), f0);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lr_is_continuous(
                total in 20u64..5000,
                frac in 0.01f64..0.5,
                max_lr in 1e-5f64..1.0,
            ) {
                let warmup = ((total as f64 * frac) as u64).max(1);
                let s = LrSchedule::new(max_lr, warmup, total, 0.0).unwrap();
                let bound = max_lr * (1.0 / warmup as f64 + std::f64::consts::PI / total as f64);
                for step in 0..total + 5 {
                    let d = (s.lr_at(step + 1) - s.lr_at(step)).abs();
                    prop_assert!(d <= bound * (1.0 + 1e-12), "step {step}: {d} > {bound}");
                }
            }
        }
    }
}
