//! Closed-form process math.
//!
//! The process moves a latent from `z_j` (t = 0) to `z_j1` (t = 1) along the
//! straight line between them, perturbed by noise whose scale
//! `g(t) = -t ln t` vanishes at both ends. Training uses the marginal
//! interpolant with noise `g(t)/sqrt(2)`; sampling takes incremental steps
//! with noise `g(t) * sqrt(dt)`.

use crate::error::{check_dim, CvfError, Result};

/// Continuous process time, always in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct ProcessTime(f64);

impl ProcessTime {
    pub const ZERO: ProcessTime = ProcessTime(0.0);
    pub const ONE: ProcessTime = ProcessTime(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&t) {
            Ok(ProcessTime(t))
        } else {
            Err(CvfError::TimeOutOfRange(t))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn saturating(t: f64) -> Self {
        if t.is_nan() {
            ProcessTime(0.0)
        } else {
            ProcessTime(t.clamp(0.0, 1.0))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Latent embedding of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFrame {
    values: Vec<f64>,
}

impl LatentFrame {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CvfError::InvalidArgument("latent dimension must be > 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CvfError::NonFinite(format!("latent entry {i} is {}", values[i])));
        }
        Ok(LatentFrame { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        LatentFrame { values }
    }

    pub fn zeros(dim: usize) -> Self {
        LatentFrame { values: vec![0.0; dim] }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        LatentFrame { values: vec![value; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &LatentFrame) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A window of `k + 1` consecutive latents sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBlock {
    frames: Vec<LatentFrame>,
}

impl LatentBlock {
    pub fn new(frames: Vec<LatentFrame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| CvfError::InvalidArgument("latent block must hold at least one frame".into()))?;
        let dim = first.dim();
        for f in &frames[1..] {
            check_dim(dim, f.dim())?;
        }
        Ok(LatentBlock { frames })
    }

    /// Rebuilds a block from `len` concatenated frames of dimension `dim`.
    pub fn from_flat(flat: &[f64], len: usize, dim: usize) -> Result<Self> {
        check_dim(len * dim, flat.len())?;
        let frames = flat
            .chunks(dim)
            .map(|c| LatentFrame::new(c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        LatentBlock::new(frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Context length `k`; the block holds `k + 1` frames.
    pub fn context_len(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn frames(&self) -> &[LatentFrame] {
        &self.frames
    }

    pub fn last(&self) -> &LatentFrame {
        self.frames.last().expect("blocks are never empty")
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim());
        for f in &self.frames {
            out.extend_from_slice(f.as_slice());
        }
        out
    }

    /// Drops the oldest frame and appends `next` (FIFO window shift).
    pub fn shifted(&self, next: LatentFrame) -> Result<Self> {
        check_dim(self.dim(), next.dim())?;
        let mut frames = self.frames[1..].to_vec();
        frames.push(next);
        Ok(LatentBlock { frames })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConstants {
    /// Training times are drawn from `[t_floor, 1 - t_floor]`.
    pub t_floor: f64,
    /// Upper bound on the `1 / (2 g^2)` loss weight.
    pub weight_cap: f64,
}

impl ScheduleConstants {
    pub fn new(t_floor: f64, weight_cap: f64) -> Result<Self> {
        if !(t_floor > 0.0 && t_floor < 0.5) {
            return Err(CvfError::config("process.t_floor", format!("{t_floor} not in (0, 0.5)")));
        }
        if !(weight_cap > 0.0 && weight_cap.is_finite()) {
            return Err(CvfError::config("process.weight_cap", format!("{weight_cap} must be > 0")));
        }
        Ok(ScheduleConstants { t_floor, weight_cap })
    }
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        ScheduleConstants {
            t_floor: 1e-3,
            weight_cap: 100.0,
        }
    }
}

/// `g(t) = -t ln t`, extended by continuity with `g(0) = 0`.
pub fn noise_schedule(t: ProcessTime) -> f64 {
    let t = t.get();
    if t <= 0.0 {
        0.0
    } else {
        // ln(1) is exactly 0, so g(1) = 0 without special casing.
        -t * t.ln()
    }
}

/// Noisy interpolant `(1 - t) z_j + t z_j1 + g(t)/sqrt(2) eps`.
pub fn interpolate(
    z_j: &LatentFrame,
    z_j1: &LatentFrame,
    t: ProcessTime,
    eps: &LatentFrame,
) -> Result<LatentFrame> {
    check_dim(z_j.dim(), z_j1.dim())?;
    check_dim(z_j.dim(), eps.dim())?;
    let tv = t.get();
    let noise = noise_schedule(t) / std::f64::consts::SQRT_2;
    let values = z_j
        .values
        .iter()
        .zip(&z_j1.values)
        .zip(&eps.values)
        .map(|((a, b), e)| (1.0 - tv) * a + tv * b + noise * e)
        .collect();
    Ok(LatentFrame::from_vec_unchecked(values))
}

/// One forward increment `z_t + (z_j1 - z_j) dt + g(t) eps`.
///
/// `eps` must already carry variance `dt` per entry.
pub fn forward_step(
    z_t: &LatentFrame,
    z_j: &LatentFrame,
    z_j1: &LatentFrame,
    dt: f64,
    t: ProcessTime,
    eps: &LatentFrame,
) -> Result<LatentFrame> {
    check_positive_dt(dt)?;
    check_dim(z_t.dim(), z_j.dim())?;
    check_dim(z_t.dim(), z_j1.dim())?;
    check_dim(z_t.dim(), eps.dim())?;
    let g = noise_schedule(t);
    let values = z_t
        .values
        .iter()
        .zip(z_j.values.iter().zip(&z_j1.values))
        .zip(&eps.values)
        .map(|((x, (a, b)), e)| x + (b - a) * dt + g * e)
        .collect();
    Ok(LatentFrame::from_vec_unchecked(values))
}

/// Mean and per-coordinate standard deviation of the forward transition
/// over a step of length `dt`.
pub fn posterior_params(
    z_t: &LatentFrame,
    z_j: &LatentFrame,
    z_j1: &LatentFrame,
    t: ProcessTime,
    dt: f64,
) -> Result<(LatentFrame, f64)> {
    let mean = forward_step(z_t, z_j, z_j1, dt, t, &LatentFrame::zeros(z_t.dim()))?;
    Ok((mean, noise_schedule(t) * dt.sqrt()))
}

/// `min(1 / (2 g(t)^2), weight_cap)`.
pub fn loss_weight(t: ProcessTime, c: &ScheduleConstants) -> f64 {
    let g = noise_schedule(t);
    let w = 1.0 / (2.0 * g * g);
    if w.is_finite() {
        w.min(c.weight_cap)
    } else {
        c.weight_cap
    }
}

fn check_positive_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(CvfError::InvalidArgument(format!("step size {dt} must be > 0")))
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn loss_weight_finite_positive(t in 0.0f64..=1.0) {
            let w = loss_weight(ProcessTime::new(t).unwrap(), &ScheduleConstants::default());
            prop_assert!(w.is_finite() && w > 0.0);
        }

        #[test]
        fn schedule_non_negative(t in 0.0f64..=1.0) {
            prop_assert!(noise_schedule(ProcessTime::new(t).unwrap()) >= 0.0);
        }

        #[test]
        fn interpolate_endpoints(
            a in prop::collection::vec(-1e3f64..1e3, 1..8),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = a.len();
            let za = LatentFrame::new(a).unwrap();
            let zb = LatentFrame::new(crate::rng::normal_vec(&mut rng, d)).unwrap();
            let eps = LatentFrame::new(crate::rng::normal_vec(&mut rng, d)).unwrap();
            prop_assert_eq!(interpolate(&za, &zb, ProcessTime::ZERO, &eps).unwrap(), za.clone());
            prop_assert_eq!(interpolate(&za, &zb, ProcessTime::ONE, &eps).unwrap(), zb);
        }
    }
}
