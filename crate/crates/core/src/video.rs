use crate::error::{check_dim, CvfError, Result};

/// Raw pixel video, `frames x channels x height x width`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Shape of a single frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl VideoTensor {
    pub fn new(shape: FrameShape, frames: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 {
            return Err(CvfError::InvalidArgument("video needs at least one frame".into()));
        }
        if shape.is_empty() {
            return Err(CvfError::InvalidArgument("frame shape must be non-empty".into()));
        }
        check_dim(frames * shape.len(), data.len())?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(CvfError::InvalidArgument(format!(
                "pixel {i} has value {} outside [0, 1]",
                data[i]
            )));
        }
        Ok(VideoTensor {
            frames,
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            data,
        })
    }

    pub fn from_frames(shape: FrameShape, frames: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(frames.len() * shape.len());
        for f in frames {
            check_dim(shape.len(), f.len())?;
            data.extend_from_slice(f);
        }
        VideoTensor::new(shape, frames.len(), data)
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> FrameShape {
        FrameShape {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.shape().len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.shape().len())
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}
