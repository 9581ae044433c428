//! Stacked-frame observations.

use crate::error::{Error, Result};

/// `T x 3 x H x W` 8-bit RGB frames, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::contract("clip dimensions must be positive"));
        }
        if data.len() != frames * 3 * height * width {
            return Err(Error::contract(format!(
                "clip buffer has {} bytes, expected {}",
                data.len(),
                frames * 3 * height * width
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    /// Builds a clip from individual `3 x H x W` frames.
    pub fn from_frames(frames: &[Vec<u8>], height: usize, width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(frames.len() * 3 * height * width);
        for f in frames {
            if f.len() != 3 * height * width {
                return Err(Error::contract("frame size does not match clip size"));
            }
            data.extend_from_slice(f);
        }
        Self::new(frames.len(), height, width, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = 3 * self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn to_float(&self) -> FloatClip {
        FloatClip {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }
}

/// A clip with intensities normalised to `[0, 1]`, same `T x 3 x H x W` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FloatClip {
    pub fn frame_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Reorders to the encoder's channels-first `[3, T, H, W]` layout.
    pub fn to_channels_first(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for t in 0..self.frames {
            for c in 0..3 {
                let src = &self.data[(t * 3 + c) * plane..(t * 3 + c + 1) * plane];
                out[(c * self.frames + t) * plane..(c * self.frames + t + 1) * plane]
                    .copy_from_slice(src);
            }
        }
        out
    }

    /// Inverse of [`FloatClip::to_channels_first`].
    pub fn from_channels_first(frames: usize, height: usize, width: usize, data: &[f64]) -> Self {
        let plane = height * width;
        let mut out = vec![0.0; data.len()];
        for t in 0..frames {
            for c in 0..3 {
                out[(t * 3 + c) * plane..(t * 3 + c + 1) * plane]
                    .copy_from_slice(&data[(c * frames + t) * plane..(c * frames + t + 1) * plane]);
            }
        }
        Self {
            frames,
            height,
            width,
            data: out,
        }
    }

    pub fn to_u8(&self) -> VideoClip {
        VideoClip {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_reordering_round_trips() {
        let data: Vec<u8> = (0..2 * 3 * 2 * 3).map(|i| i as u8).collect();
        let clip = VideoClip::new(2, 2, 3, data).unwrap().to_float();
        let cf = clip.to_channels_first();
        assert_eq!(cf[6], clip.data[3 * 2 * 3]); // channel 0 of frame 1
        let back = FloatClip::from_channels_first(2, 2, 3, &cf);
        assert_eq!(back, clip);
    }

    #[test]
    fn rejects_wrong_buffer_size() {
        assert!(VideoClip::new(2, 4, 4, vec![0; 10]).is_err());
    }
}
