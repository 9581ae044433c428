use rand::Rng;

use crate::clip::FloatClip;
use crate::error::{Error, Result};

use super::dataset::Video;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationParams {
    /// Area fraction of the square crop, `(min, max)` within `(0, 1]`.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Largest start-frame difference between the two clips of a pair.
    pub max_temporal_offset: usize,
    pub frame_stride: usize,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            crop_scale: (0.6, 1.0),
            flip_prob: 0.0,
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            max_temporal_offset: 8,
            frame_stride: 1,
        }
    }
}

impl AugmentationParams {
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            max_temporal_offset: 0,
            frame_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config("crop scale must satisfy 0 < min <= max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("flip probability must lie in [0, 1]"));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} jitter must lie in [0, 1)")));
            }
        }
        if self.frame_stride == 0 {
            return Err(Error::config("frame stride must be positive"));
        }
        Ok(())
    }
}

/// One random draw, shared by every frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub crop_top: usize,
    pub crop_left: usize,
    pub crop_side: usize,
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl AugmentDraw {
    pub fn sample(params: &AugmentationParams, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let (lo, hi) = params.crop_scale;
        let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let full = height.min(width);
        let side = ((scale.sqrt() * full as f64).round() as usize).clamp(1, full);
        let crop_top = rng.gen_range(0..=height - side);
        let crop_left = rng.gen_range(0..=width - side);
        let flip = params.flip_prob > 0.0 && rng.gen_bool(params.flip_prob);
        let mut factor = |d: f64| if d > 0.0 { rng.gen_range(1.0 - d..=1.0 + d) } else { 1.0 };
        Self {
            crop_top,
            crop_left,
            crop_side: side,
            flip,
            brightness: factor(params.brightness),
            contrast: factor(params.contrast),
            saturation: factor(params.saturation),
        }
    }
}

fn gray(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Mirrors every frame left to right.
pub fn flip_horizontal(clip: &FloatClip) -> FloatClip {
    let (h, w) = (clip.height, clip.width);
    let mut out = clip.clone();
    for plane in 0..clip.frames * 3 {
        for r in 0..h {
            let base = plane * h * w + r * w;
            for c in 0..w {
                out.data[base + c] = clip.data[base + w - 1 - c];
            }
        }
    }
    out
}

/// Square crop resized back to the clip size (bilinear, pixel centres).
fn crop_resize(clip: &FloatClip, top: usize, left: usize, side: usize) -> FloatClip {
    let (h, w) = (clip.height, clip.width);
    if side == h && side == w && top == 0 && left == 0 {
        return clip.clone();
    }
    let mut out = clip.clone();
    let sy = side as f64 / h as f64;
    let sx = side as f64 / w as f64;
    for plane in 0..clip.frames * 3 {
        let src = &clip.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data[plane * h * w..(plane + 1) * h * w];
        for r in 0..h {
            let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (side - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(side - 1);
            let ty = fy - y0 as f64;
            for c in 0..w {
                let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (side - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(side - 1);
                let tx = fx - x0 as f64;
                let at = |y: usize, x: usize| src[(top + y) * w + left + x];
                let a = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let b = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                dst[r * w + c] = a * (1.0 - ty) + b * ty;
            }
        }
    }
    out
}

/// Applies a fixed draw to every frame of `clip`.
pub fn apply_draw(clip: &FloatClip, d: &AugmentDraw) -> FloatClip {
    let mut out = crop_resize(clip, d.crop_top, d.crop_left, d.crop_side);
    if d.flip {
        out = flip_horizontal(&out);
    }
    let plane = clip.height * clip.width;
    let n = clip.frames * plane;
    if d.brightness != 1.0 {
        for v in &mut out.data {
            *v = (*v * d.brightness).clamp(0.0, 1.0);
        }
    }
    if d.contrast != 1.0 {
        let mut mean = 0.0;
        for t in 0..clip.frames {
            let f = &out.data[t * 3 * plane..(t + 1) * 3 * plane];
            for i in 0..plane {
                mean += gray(f[i], f[plane + i], f[2 * plane + i]);
            }
        }
        mean /= n as f64;
        for v in &mut out.data {
            *v = ((*v - mean) * d.contrast + mean).clamp(0.0, 1.0);
        }
    }
    if d.saturation != 1.0 {
        for t in 0..clip.frames {
            let f = &mut out.data[t * 3 * plane..(t + 1) * 3 * plane];
            for i in 0..plane {
                let g = gray(f[i], f[plane + i], f[2 * plane + i]);
                for c in 0..3 {
                    let v = &mut f[c * plane + i];
                    *v = (g + (*v - g) * d.saturation).clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

/// Draws once and augments the whole clip consistently.
pub fn augment(clip: &FloatClip, params: &AugmentationParams, rng: &mut impl Rng) -> FloatClip {
    let d = AugmentDraw::sample(params, clip.height, clip.width, rng);
    apply_draw(clip, &d)
}

/// Two independently augmented `len`-frame clips of one video whose start
/// frames differ by at most `max_temporal_offset`.
pub fn sample_clip_pair(
    video: &Video,
    len: usize,
    params: &AugmentationParams,
    rng: &mut impl Rng,
) -> Result<(FloatClip, FloatClip)> {
    let stride = params.frame_stride;
    let span = (len - 1) * stride + 1;
    if video.len() < span {
        return Err(Error::Dataset(format!(
            "video {} has {} frames, a clip spans {span}",
            video.id,
            video.len()
        )));
    }
    let last_start = video.len() - span;
    let a = rng.gen_range(0..=last_start);
    let lo = a.saturating_sub(params.max_temporal_offset);
    let hi = (a + params.max_temporal_offset).min(last_start);
    let b = rng.gen_range(lo..=hi);
    let ca = video.clip(a, len, stride)?.to_float();
    let cb = video.clip(b, len, stride)?.to_float();
    Ok((augment(&ca, params, rng), augment(&cb, params, rng)))
}

/// One augmented clip, used by the single-view schemes.
pub fn sample_clip(
    video: &Video,
    len: usize,
    params: &AugmentationParams,
    rng: &mut impl Rng,
) -> Result<FloatClip> {
    let stride = params.frame_stride;
    let span = (len - 1) * stride + 1;
    if video.len() < span {
        return Err(Error::Dataset(format!(
            "video {} has {} frames, a clip spans {span}",
            video.id,
            video.len()
        )));
    }
    let a = rng.gen_range(0..=video.len() - span);
    Ok(augment(&video.clip(a, len, stride)?.to_float(), params, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn video(n: usize, size: usize) -> Video {
        Video {
            id: "v".into(),
            height: size,
            width: size,
            fps: 10.0,
            frames: (0..n)
                .map(|t| (0..3 * size * size).map(|i| ((i * 7 + t * 13) % 256) as u8).collect())
                .collect(),
        }
    }

    #[test]
    fn identity_params_return_raw_frames() {
        let v = video(10, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = sample_clip_pair(&v, 4, &AugmentationParams::identity(), &mut rng).unwrap();
        // zero offset: both windows coincide and equal the raw frames
        assert_eq!(a, b);
        let raw: Vec<Vec<u8>> = (0..4).map(|t| a.to_u8().frame(t).to_vec()).collect();
        assert!((0..=6).any(|s| (0..4).all(|t| raw[t] == v.frames[s + t])));
    }

    #[test]
    fn flip_is_an_involution() {
        let c = video(4, 6).clip(0, 4, 1).unwrap().to_float();
        assert_eq!(flip_horizontal(&flip_horizontal(&c)), c);
        assert_ne!(flip_horizontal(&c), c);
    }

    #[test]
    fn crops_keep_the_configured_size() {
        let v = video(12, 16);
        let p = AugmentationParams {
            crop_scale: (0.2, 1.0),
            flip_prob: 0.5,
            ..AugmentationParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let (a, b) = sample_clip_pair(&v, 4, &p, &mut rng).unwrap();
            for c in [a, b] {
                assert_eq!((c.frames, c.height, c.width), (4, 16, 16));
                assert!(c.in_range());
            }
        }
    }

    #[test]
    fn one_draw_applies_to_every_frame() {
        let clip = video(4, 12).clip(0, 4, 1).unwrap().to_float();
        let p = AugmentationParams {
            crop_scale: (0.3, 0.6),
            flip_prob: 0.5,
            contrast: 0.0,
            ..AugmentationParams::default()
        };
        let d = AugmentDraw::sample(&p, 12, 12, &mut ChaCha8Rng::seed_from_u64(2));
        let whole = apply_draw(&clip, &d);
        let fl = clip.frame_len();
        for t in 0..4 {
            let single = FloatClip {
                frames: 1,
                height: 12,
                width: 12,
                data: clip.data[t * fl..(t + 1) * fl].to_vec(),
            };
            assert_eq!(apply_draw(&single, &d).data, whole.data[t * fl..(t + 1) * fl]);
        }
    }

    #[test]
    fn pairs_are_deterministic_under_seed() {
        let v = video(20, 8);
        let p = AugmentationParams::default();
        let a = sample_clip_pair(&v, 4, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_clip_pair(&v, 4, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(sample_clip_pair(&video(3, 8), 4, &p, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }
}
