//! Synthetic corpora with known dynamics.
//!
//! Every corpus is a pure function of its [`DatasetSpec`]: generation walks
//! videos in index order drawing from one seeded stream.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{check_dim, CvfError, Result};
use crate::process::LatentFrame;
use crate::rng::{normal, rng_for, stream, uniform};
use crate::video::{FrameShape, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    BouncingBall,
    BimodalBounce,
    LatentLinearGaussian,
    LatentRotation,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::BouncingBall => "bouncing_ball",
            DatasetKind::BimodalBounce => "bimodal_bounce",
            DatasetKind::LatentLinearGaussian => "latent_linear_gaussian",
            DatasetKind::LatentRotation => "latent_rotation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "bouncing_ball" => DatasetKind::BouncingBall,
            "bimodal_bounce" => DatasetKind::BimodalBounce,
            "latent_linear_gaussian" => DatasetKind::LatentLinearGaussian,
            "latent_rotation" => DatasetKind::LatentRotation,
            _ => return None,
        })
    }

    pub fn is_pixel(self) -> bool {
        matches!(self, DatasetKind::BouncingBall | DatasetKind::BimodalBounce)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub num_videos: usize,
    pub video_length: usize,
    /// Square frame side in pixels (pixel kinds).
    pub frame_size: usize,
    /// Latent dimension (latent kinds).
    pub latent_dim: usize,
    pub radius: f64,
    /// Pixels per frame for the ball kinds.
    pub speed: f64,
    /// Index of the last straight frame in the bimodal kind.
    pub trigger: usize,
    /// Contraction factor of the linear-Gaussian transition matrix.
    pub decay: f64,
    /// Rotation angle per frame (radians) of each 2x2 block.
    pub angle: f64,
    /// Constant offset added to every coordinate in the linear-Gaussian kind.
    pub offset: f64,
    pub sigma: f64,
    /// Standard deviation of the initial latent.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::BouncingBall,
            num_videos: 256,
            video_length: 16,
            frame_size: 16,
            latent_dim: 4,
            radius: 2.5,
            speed: 1.5,
            trigger: 3,
            decay: 0.95,
            angle: 0.3,
            offset: 0.1,
            sigma: 0.1,
            init_scale: 3.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 {
            return Err(CvfError::config("data.num_videos", "must be >= 1"));
        }
        if self.video_length < 2 {
            return Err(CvfError::config("data.video_length", "must be >= 2"));
        }
        match self.kind {
            DatasetKind::BouncingBall | DatasetKind::BimodalBounce => {
                if self.frame_size < 16 {
                    return Err(CvfError::config("data.frame_size", "must be >= 16"));
                }
                if !(self.radius > 0.0 && self.radius < self.frame_size as f64 / 4.0) {
                    return Err(CvfError::config(
                        "data.radius",
                        format!("{} must lie in (0, frame_size / 4)", self.radius),
                    ));
                }
                if !(self.speed >= 0.0 && self.speed < self.frame_size as f64 - 2.0 * self.radius) {
                    return Err(CvfError::config("data.speed", "must be >= 0 and below the free span"));
                }
                if self.kind == DatasetKind::BimodalBounce {
                    if self.trigger + 1 >= self.video_length {
                        return Err(CvfError::config("data.trigger", "must be < video_length - 1"));
                    }
                    let bottom = self.radius + 0.5 + self.trigger as f64 * self.speed;
                    if bottom > self.frame_size as f64 - self.radius {
                        return Err(CvfError::config("data.trigger", "ball leaves the frame before turning"));
                    }
                }
            }
            DatasetKind::LatentLinearGaussian => {
                if self.latent_dim == 0 {
                    return Err(CvfError::config("data.latent_dim", "must be >= 1"));
                }
                if !(self.sigma >= 0.0) {
                    return Err(CvfError::config("data.sigma", "must be >= 0"));
                }
                if self.decay.abs() > 1.0 {
                    return Err(CvfError::config(
                        "data.decay",
                        format!("spectral radius {} > 1 is unstable", self.decay.abs()),
                    ));
                }
            }
            DatasetKind::LatentRotation => {
                if self.latent_dim == 0 || self.latent_dim % 2 != 0 {
                    return Err(CvfError::config("data.latent_dim", "must be even and > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn frame_shape(&self) -> FrameShape {
        FrameShape {
            channels: 1,
            height: self.frame_size,
            width: self.frame_size,
        }
    }
}

/// Anti-aliased disk: each pixel's intensity ramps linearly from 1 to 0 over
/// the one-pixel band around the rim.
pub fn render_ball(center: (f64, f64), radius: f64, shape: FrameShape) -> Vec<f32> {
    let mut out = vec![0.0f32; shape.len()];
    for y in 0..shape.height {
        for x in 0..shape.width {
            let dx = x as f64 + 0.5 - center.0;
            let dy = y as f64 + 0.5 - center.1;
            let d = (dx * dx + dy * dy).sqrt();
            let v = (radius + 0.5 - d).clamp(0.0, 1.0);
            out[y * shape.width + x] = v as f32;
        }
    }
    out
}

/// Intensity-weighted centroid `(x, y)` in pixel coordinates.
pub fn centroid(frame: &[f32], shape: FrameShape) -> Option<(f64, f64)> {
    let mut mass = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for y in 0..shape.height {
        for x in 0..shape.width {
            let v = frame[y * shape.width + x] as f64;
            mass += v;
            sx += v * (x as f64 + 0.5);
            sy += v * (y as f64 + 0.5);
        }
    }
    (mass > 0.0).then(|| (sx / mass, sy / mass))
}

/// Ball state with elastic reflection off the frame walls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub position: (f64, f64),
    pub velocity: (f64, f64),
    pub radius: f64,
}

impl Ball {
    pub fn step(&mut self, shape: FrameShape) {
        let (x, vx) = reflect(self.position.0 + self.velocity.0, self.velocity.0, self.radius, shape.width as f64);
        let (y, vy) = reflect(self.position.1 + self.velocity.1, self.velocity.1, self.radius, shape.height as f64);
        self.position = (x, y);
        self.velocity = (vx, vy);
    }

    pub fn render(&self, shape: FrameShape) -> Vec<f32> {
        render_ball(self.position, self.radius, shape)
    }

    pub fn simulate(mut self, frames: usize, shape: FrameShape) -> (Vec<Vec<f32>>, Vec<Ball>) {
        let mut imgs = Vec::with_capacity(frames);
        let mut states = Vec::with_capacity(frames);
        for i in 0..frames {
            if i > 0 {
                self.step(shape);
            }
            imgs.push(self.render(shape));
            states.push(self);
        }
        (imgs, states)
    }
}

fn reflect(mut p: f64, mut v: f64, r: f64, side: f64) -> (f64, f64) {
    let lo = r;
    let hi = side - r;
    loop {
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

pub fn gen_bouncing_ball(spec: &DatasetSpec) -> Result<Vec<VideoTensor>> {
    expect_kind(spec, DatasetKind::BouncingBall)?;
    spec.validate()?;
    let shape = spec.frame_shape();
    let mut rng = rng_for(spec.seed, stream::DATA);
    let side = spec.frame_size as f64;
    (0..spec.num_videos)
        .map(|_| {
            let x = uniform(&mut rng, spec.radius, side - spec.radius);
            let y = uniform(&mut rng, spec.radius, side - spec.radius);
            let theta = uniform(&mut rng, 0.0, std::f64::consts::TAU);
            let ball = Ball {
                position: (x, y),
                velocity: (spec.speed * theta.cos(), spec.speed * theta.sin()),
                radius: spec.radius,
            };
            let (frames, _) = ball.simulate(spec.video_length, shape);
            VideoTensor::from_frames(shape, &frames)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Left,
    Right,
    Neither,
}

#[derive(Clone, Debug)]
pub struct BimodalCorpus {
    pub videos: Vec<VideoTensor>,
    pub modes: Vec<Mode>,
    /// Index of the last straight frame; frame `trigger + 1` is the branch.
    pub trigger: usize,
    /// Per video, the two possible frames at `trigger + 1` (left, right).
    pub branches: Vec<(Vec<f32>, Vec<f32>)>,
}

/// Ball falls straight down until `trigger`, then turns left or right with
/// probability one half and keeps the same speed.
pub fn gen_bimodal_bounce(spec: &DatasetSpec) -> Result<BimodalCorpus> {
    expect_kind(spec, DatasetKind::BimodalBounce)?;
    spec.validate()?;
    let shape = spec.frame_shape();
    let mut rng = rng_for(spec.seed, stream::DATA);
    let side = spec.frame_size as f64;
    let mut corpus = BimodalCorpus {
        videos: Vec::with_capacity(spec.num_videos),
        modes: Vec::with_capacity(spec.num_videos),
        trigger: spec.trigger,
        branches: Vec::with_capacity(spec.num_videos),
    };
    for _ in 0..spec.num_videos {
        let x = uniform(&mut rng, side / 2.0 - 2.0, side / 2.0 + 2.0);
        let left = rng.random::<bool>();
        let mut ball = Ball {
            position: (x, spec.radius + 0.5),
            velocity: (0.0, spec.speed),
            radius: spec.radius,
        };
        let mut frames = Vec::with_capacity(spec.video_length);
        frames.push(ball.render(shape));
        for _ in 0..spec.trigger {
            ball.step(shape);
            frames.push(ball.render(shape));
        }
        let turned = |dir: f64| {
            let mut b = ball;
            b.velocity = (dir * spec.speed, 0.0);
            b
        };
        let mut l = turned(-1.0);
        let mut r = turned(1.0);
        l.step(shape);
        r.step(shape);
        corpus.branches.push((l.render(shape), r.render(shape)));
        let mut ball = if left { l } else { r };
        frames.push(ball.render(shape));
        while frames.len() < spec.video_length {
            ball.step(shape);
            frames.push(ball.render(shape));
        }
        corpus.videos.push(VideoTensor::from_frames(shape, &frames)?);
        corpus.modes.push(if left { Mode::Left } else { Mode::Right });
    }
    Ok(corpus)
}

/// Exact conditional mean and noise level of `z' = A z + b + sigma * eta`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianOracle {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub sigma: f64,
}

impl LinearGaussianOracle {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, sigma: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(CvfError::InvalidArgument("transition matrix must be square".into()));
        }
        check_dim(a.nrows(), b.len())?;
        let rho = spectral_radius(&a);
        if rho > 1.0 + 1e-12 {
            return Err(CvfError::InvalidArgument(format!(
                "transition matrix has spectral radius {rho} > 1"
            )));
        }
        Ok(LinearGaussianOracle { a, b, sigma })
    }

    /// `A = decay * blockdiag(R(angle))`, with a lone `decay` entry for odd D.
    pub fn from_spec(spec: &DatasetSpec) -> Result<Self> {
        let d = spec.latent_dim;
        let mut a = rotation_matrix(d, spec.angle);
        a *= spec.decay;
        LinearGaussianOracle::new(a, vec![spec.offset; d], spec.sigma)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn conditional_mean(&self, z: &LatentFrame) -> Result<LatentFrame> {
        check_dim(self.dim(), z.dim())?;
        let v = &self.a * nalgebra::DVector::from_column_slice(z.as_slice());
        Ok(LatentFrame::from_vec_unchecked(
            v.iter().zip(&self.b).map(|(x, b)| x + b).collect(),
        ))
    }

    /// `E ||z' - E[z' | z]||^2 = sigma^2 D`.
    pub fn irreducible_mse(&self) -> f64 {
        self.sigma * self.sigma * self.dim() as f64
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Block-diagonal 2x2 rotations by `angle`; odd trailing coordinate is 1.
pub fn rotation_matrix(dim: usize, angle: f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::identity(dim, dim);
    let (s, c) = angle.sin_cos();
    for k in 0..dim / 2 {
        let i = 2 * k;
        m[(i, i)] = c;
        m[(i, i + 1)] = -s;
        m[(i + 1, i)] = s;
        m[(i + 1, i + 1)] = c;
    }
    m
}

#[derive(Clone, Debug)]
pub struct LatentCorpus {
    pub videos: Vec<Vec<LatentFrame>>,
}

impl LatentCorpus {
    pub fn dim(&self) -> usize {
        self.videos[0][0].dim()
    }
}

pub fn gen_latent_linear_gaussian(spec: &DatasetSpec) -> Result<(LatentCorpus, LinearGaussianOracle)> {
    expect_kind(spec, DatasetKind::LatentLinearGaussian)?;
    spec.validate()?;
    let oracle = LinearGaussianOracle::from_spec(spec)?;
    let mut rng = rng_for(spec.seed, stream::DATA);
    let d = spec.latent_dim;
    let videos = (0..spec.num_videos)
        .map(|_| {
            let mut z = LatentFrame::from_vec_unchecked(
                (0..d).map(|_| spec.init_scale * normal(&mut rng)).collect(),
            );
            let mut traj = vec![z.clone()];
            for _ in 1..spec.video_length {
                let mean = oracle.conditional_mean(&z)?;
                z = LatentFrame::from_vec_unchecked(
                    mean.as_slice()
                        .iter()
                        .map(|m| m + spec.sigma * normal(&mut rng))
                        .collect(),
                );
                traj.push(z.clone());
            }
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((LatentCorpus { videos }, oracle))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationOracle {
    pub rotation: DMatrix<f64>,
}

impl RotationOracle {
    pub fn new(dim: usize, angle: f64) -> Self {
        RotationOracle {
            rotation: rotation_matrix(dim, angle),
        }
    }

    pub fn next(&self, z: &LatentFrame) -> Result<LatentFrame> {
        check_dim(self.rotation.nrows(), z.dim())?;
        let v = &self.rotation * nalgebra::DVector::from_column_slice(z.as_slice());
        Ok(LatentFrame::from_vec_unchecked(v.iter().copied().collect()))
    }
}

pub fn gen_latent_rotation(spec: &DatasetSpec) -> Result<(LatentCorpus, RotationOracle)> {
    expect_kind(spec, DatasetKind::LatentRotation)?;
    spec.validate()?;
    let oracle = RotationOracle::new(spec.latent_dim, spec.angle);
    let mut rng = rng_for(spec.seed, stream::DATA);
    let videos = (0..spec.num_videos)
        .map(|_| {
            let mut z = LatentFrame::from_vec_unchecked(
                (0..spec.latent_dim).map(|_| spec.init_scale * normal(&mut rng)).collect(),
            );
            let mut traj = vec![z.clone()];
            for _ in 1..spec.video_length {
                z = oracle.next(&z)?;
                traj.push(z.clone());
            }
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((LatentCorpus { videos }, oracle))
}

fn expect_kind(spec: &DatasetSpec, kind: DatasetKind) -> Result<()> {
    if spec.kind == kind {
        Ok(())
    } else {
        Err(CvfError::config(
            "data.kind",
            format!("expected {}, got {}", kind.name(), spec.kind.name()),
        ))
    }
}
