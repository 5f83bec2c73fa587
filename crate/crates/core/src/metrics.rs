//! Pixel metrics, a Fréchet distance on frozen random-projection features,
//! and mode statistics for the bimodal task.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::datagen::Mode;
use crate::error::{check_dim, CvfError, Result};
use crate::rng::{normal_vec, rng_for, stream};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
pub const FEATURE_DIM: usize = 64;
const FEATURE_SEED: u64 = 0xfea7_0001;

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(CvfError::InvalidArgument("mse of empty arrays".into()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &[f32], b: &[f32], max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(CvfError::InvalidArgument(format!("max_val {max_val} must be > 0")));
    }
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

/// Mean SSIM over 8x8 windows at stride 4 of two single-channel frames.
pub fn ssim(a: &[f32], b: &[f32], height: usize, width: usize) -> Result<f64> {
    check_dim(height * width, a.len())?;
    check_dim(height * width, b.len())?;
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(CvfError::InvalidArgument(format!(
            "frame {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in (0..=height - SSIM_WINDOW).step_by(SSIM_STRIDE) {
        for c0 in (0..=width - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sa += a[r * width + c] as f64;
                    sb += b[r * width + c] as f64;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let da = a[r * width + c] as f64 - ma;
                    let db = b[r * width + c] as f64 - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `||mu1 - mu2||^2 + tr(c1 + c2 - 2 (c1 c2)^{1/2})`.
pub fn frechet_gaussian(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    check_dim(d, mu2.len())?;
    for c in [cov1, cov2] {
        check_dim(d, c.nrows())?;
        check_dim(d, c.ncols())?;
    }
    let s1 = psd_sqrt(cov1);
    let inner = &s1 * cov2 * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let mean_term = (mu1 - mu2).norm_squared();
    Ok(mean_term + cov1.trace() + cov2.trace() - 2.0 * cross)
}

/// Frozen `64 x pixels` projection with unit-norm rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    projection: DMatrix<f64>,
}

impl FeatureExtractor {
    pub fn new(pixels: usize) -> Self {
        let mut rng = rng_for(FEATURE_SEED, stream::FEATURES);
        let mut projection = DMatrix::zeros(FEATURE_DIM, pixels);
        for r in 0..FEATURE_DIM {
            let row = normal_vec(&mut rng, pixels);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (c, v) in row.iter().enumerate() {
                projection[(r, c)] = v / norm;
            }
        }
        FeatureExtractor { projection }
    }

    pub fn pixels(&self) -> usize {
        self.projection.ncols()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn features(&self, frame: &[f32]) -> Result<DVector<f64>> {
        check_dim(self.pixels(), frame.len())?;
        let x = DVector::from_iterator(frame.len(), frame.iter().map(|&v| v as f64));
        Ok(&self.projection * x)
    }

    /// Sample mean and unbiased covariance of the features.
    pub fn gaussian_fit(&self, frames: &[&[f32]]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if frames.len() < FEATURE_DIM {
            return Err(CvfError::InvalidArgument(format!(
                "need at least {FEATURE_DIM} frames for a feature fit, got {}",
                frames.len()
            )));
        }
        let feats = frames
            .iter()
            .map(|f| self.features(f))
            .collect::<Result<Vec<_>>>()?;
        let n = feats.len() as f64;
        let mean = feats.iter().fold(DVector::zeros(FEATURE_DIM), |acc, f| acc + f) / n;
        let mut cov = DMatrix::zeros(FEATURE_DIM, FEATURE_DIM);
        for f in &feats {
            let d = f - &mean;
            cov += &d * d.transpose();
        }
        Ok((mean, cov / (n - 1.0)))
    }
}

/// Fréchet distance between feature fits of two frame sets.
pub fn fd_proxy(real: &[&[f32]], generated: &[&[f32]], extractor: &FeatureExtractor) -> Result<f64> {
    let (m1, c1) = extractor.gaussian_fit(real)?;
    let (m2, c2) = extractor.gaussian_fit(generated)?;
    if m1 == m2 && c1 == c2 {
        return Ok(0.0);
    }
    Ok(frechet_gaussian(&m1, &c1, &m2, &c2)?.max(0.0))
}

/// Nearest of three templates: the left branch, the right branch, and
/// their pixel average (a blurred superposition counts as neither).
pub fn classify_mode(frame: &[f32], left: &[f32], right: &[f32]) -> Result<Mode> {
    check_dim(left.len(), frame.len())?;
    check_dim(right.len(), frame.len())?;
    let mid: Vec<f32> = left.iter().zip(right).map(|(a, b)| 0.5 * (a + b)).collect();
    let dl = mse(frame, left)?;
    let dr = mse(frame, right)?;
    let dm = mse(frame, &mid)?;
    Ok(if dm <= dl && dm <= dr {
        Mode::Neither
    } else if dl <= dr {
        Mode::Left
    } else {
        Mode::Right
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModeFrequencies {
    pub left: f64,
    pub right: f64,
    pub neither: f64,
}

pub fn mode_coverage(modes: &[Mode]) -> ModeFrequencies {
    if modes.is_empty() {
        return ModeFrequencies::default();
    }
    let n = modes.len() as f64;
    let count = |m| modes.iter().filter(|&&x| x == m).count() as f64 / n;
    ModeFrequencies {
        left: count(Mode::Left),
        right: count(Mode::Right),
        neither: count(Mode::Neither),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub fd_proxy: Option<f64>,
    pub mode_frequencies: Option<ModeFrequencies>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 8] = [
        "mse", "psnr_db", "ssim", "fd_proxy", "mode_left", "mode_right", "mode_neither", "n_samples",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let modes = self.mode_frequencies;
        vec![
            format!("{}", self.mse),
            format!("{}", self.psnr_db),
            format!("{}", self.ssim),
            opt(self.fd_proxy),
            opt(modes.map(|m| m.left)),
            opt(modes.map(|m| m.right)),
            opt(modes.map(|m| m.neither)),
            self.n_samples.to_string(),
        ]
    }
}

/// Pairwise pixel metrics over aligned frame lists, plus the feature
/// distance when both sides have enough frames.
pub fn evaluate_frames(
    predicted: &[&[f32]],
    truth: &[&[f32]],
    height: usize,
    width: usize,
) -> Result<MetricsReport> {
    check_dim(truth.len(), predicted.len())?;
    if predicted.is_empty() {
        return Err(CvfError::InvalidArgument("no frames to evaluate".into()));
    }
    let mut total_mse = 0.0;
    let mut total_ssim = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        total_mse += mse(p, t)?;
        total_ssim += ssim(p, t, height, width)?;
    }
    let n = predicted.len();
    let mse = total_mse / n as f64;
    let fd = if n >= FEATURE_DIM {
        Some(fd_proxy(truth, predicted, &FeatureExtractor::new(height * width))?)
    } else {
        None
    };
    Ok(MetricsReport {
        mse,
        psnr_db: psnr_from_mse(mse, 1.0),
        ssim: total_ssim / n as f64,
        fd_proxy: fd,
        mode_frequencies: None,
        n_samples: n,
    })
}
