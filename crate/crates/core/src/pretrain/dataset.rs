//! On-disk clip corpus.
//!
//! ```text
//! root/
//!   video_<id>/
//!     manifest.txt        frames = N, fps = F, width = W, height = H (key = value lines)
//!     frame_00000.png     RGB, W x H, oldest first
//!     frame_00001.png
//!     ...
//! ```
//!
//! Extra manifest keys are kept but ignored. Any directory whose name starts
//! with `video_` is a video; `<id>` is the rest of the name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::sim::{WorldConfig, WorldState};

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// Channels-first `3 x H x W` frames.
    pub frames: Vec<Vec<u8>>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `count` frames starting at `start`, every `stride`-th frame.
    pub fn clip(&self, start: usize, count: usize, stride: usize) -> Result<VideoClip> {
        let last = start + (count.max(1) - 1) * stride;
        if count == 0 || stride == 0 || last >= self.frames.len() {
            return Err(Error::Dataset(format!(
                "video {} has {} frames, clip needs frame {last}",
                self.id,
                self.frames.len()
            )));
        }
        let frames: Vec<Vec<u8>> = (0..count).map(|i| self.frames[start + i * stride].clone()).collect();
        VideoClip::from_frames(&frames, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipDataset {
    pub root: PathBuf,
    pub videos: Vec<Video>,
}

fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Dataset(format!("{}:{}: expected key = value", path.display(), n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn manifest_num<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    m.get(key)
        .ok_or_else(|| Error::Dataset(format!("{} lacks '{key}'", path.display())))?
        .parse()
        .map_err(|_| Error::Dataset(format!("{}: bad value for '{key}'", path.display())))
}

pub fn frame_path(video_dir: &Path, n: usize) -> PathBuf {
    video_dir.join(format!("frame_{n:05}.png"))
}

pub fn write_png(path: &Path, frame: &[u8], height: usize, width: usize) -> Result<()> {
    let plane = height * width;
    let mut rgb = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        rgb.extend_from_slice(&[frame[i], frame[plane + i], frame[2 * plane + i]]);
    }
    image::save_buffer(path, &rgb, width as u32, height as u32, image::ColorType::Rgb8).map_err(
        |source| Error::Image {
            path: path.to_path_buf(),
            source,
        },
    )
}

pub fn read_png(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut out = vec![0u8; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        out[i] = px[0];
        out[plane + i] = px[1];
        out[2 * plane + i] = px[2];
    }
    Ok((out, h, w))
}

impl ClipDataset {
    /// Loads and validates every video under `root`.
    pub fn load(root: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut dirs = Vec::new();
        for e in entries {
            let e = e.map_err(|e| Error::io(root, e))?;
            let name = e.file_name().to_string_lossy().to_string();
            if e.path().is_dir() && name.starts_with("video_") {
                dirs.push((name["video_".len()..].to_string(), e.path()));
            }
        }
        dirs.sort();
        if dirs.is_empty() {
            return Err(Error::Dataset(format!("no video_* directories in {}", root.display())));
        }
        let mut videos = Vec::with_capacity(dirs.len());
        for (id, dir) in dirs {
            let mpath = dir.join("manifest.txt");
            let m = parse_manifest(&mpath)?;
            let n: usize = manifest_num(&m, "frames", &mpath)?;
            let width: usize = manifest_num(&m, "width", &mpath)?;
            let height: usize = manifest_num(&m, "height", &mpath)?;
            let fps: f64 = manifest_num(&m, "fps", &mpath)?;
            let mut frames = Vec::with_capacity(n);
            for i in 0..n {
                let p = frame_path(&dir, i);
                let (f, h, w) = read_png(&p)?;
                if (h, w) != (height, width) {
                    return Err(Error::Dataset(format!(
                        "{} is {w}x{h}, manifest says {width}x{height}",
                        p.display()
                    )));
                }
                frames.push(f);
            }
            videos.push(Video {
                id,
                height,
                width,
                fps,
                frames,
            });
        }
        let ds = ClipDataset {
            root: root.to_path_buf(),
            videos,
        };
        ds.validate(1, 1)?;
        Ok(ds)
    }

    /// Every video holds at least `clip_len * stride` frames, ids are unique
    /// and all frames share one size.
    pub fn validate(&self, clip_len: usize, stride: usize) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        let first = self
            .videos
            .first()
            .ok_or_else(|| Error::Dataset("empty dataset".into()))?;
        for v in &self.videos {
            if !ids.insert(&v.id) {
                return Err(Error::Dataset(format!("duplicate video id {}", v.id)));
            }
            if (v.height, v.width) != (first.height, first.width) {
                return Err(Error::Dataset(format!("video {} differs in frame size", v.id)));
            }
            if v.len() < clip_len * stride {
                return Err(Error::Dataset(format!(
                    "video {} has {} frames, need at least {}",
                    v.id,
                    v.len(),
                    clip_len * stride
                )));
            }
            if v.frames.iter().any(|f| f.len() != 3 * v.height * v.width) {
                return Err(Error::Dataset(format!("video {} has a malformed frame", v.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.videos[0].height, self.videos[0].width)
    }
}

pub fn write_video(root: &Path, video: &Video, extra: &[(&str, String)]) -> Result<()> {
    let dir = root.join(format!("video_{}", video.id));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, f) in video.frames.iter().enumerate() {
        write_png(&frame_path(&dir, i), f, video.height, video.width)?;
    }
    let mut manifest = format!(
        "frames = {}\nfps = {}\nwidth = {}\nheight = {}\n",
        video.len(),
        video.fps,
        video.width,
        video.height
    );
    for (k, v) in extra {
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    let mpath = dir.join("manifest.txt");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

/// Scripted driver: proportional control toward a slowly wandering lateral
/// target, with smoothed steering noise. Obstacles ahead push the target to
/// the other side.
struct ScriptedDriver {
    phase: f64,
    period: f64,
    amplitude: f64,
    noise: f64,
}

impl ScriptedDriver {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            period: rng.gen_range(60.0..160.0),
            amplitude: rng.gen_range(0.3..2.1),
            noise: 0.0,
        }
    }

    fn steer(&mut self, state: &mut WorldState) -> f64 {
        let t = state.step_count() as f64;
        let mut target = self.amplitude * (self.phase + std::f64::consts::TAU * t / self.period).sin();
        let (x, y, h) = (state.x, state.y, state.heading);
        for o in state.obstacles() {
            let (dx, dy) = (o.x - x, o.y - y);
            let ahead = dx * h.cos() + dy * h.sin();
            if (0.0..25.0).contains(&ahead) {
                let p = state.route().project(o.x, o.y);
                target = if p.lateral > 0.0 { -1.6 } else { 1.6 };
            }
        }
        let eps: f64 = state.rng().gen_range(-1.0..1.0);
        self.noise = 0.8 * self.noise + 0.2 * eps;
        let cmd = 0.25 * (target - state.lateral_offset()) - 1.2 * state.heading_error() + 0.3 * self.noise;
        cmd.clamp(-1.0, 1.0)
    }
}

/// Renders `n_videos` episodes of `length` frames with the scripted driver,
/// cycling through the routes in `routes`, and writes them under `root`.
pub fn generate_synthetic_corpus(
    root: &Path,
    n_videos: usize,
    length: usize,
    seed: u64,
    world: &WorldConfig,
    routes: &[crate::sim::RouteId],
) -> Result<ClipDataset> {
    if n_videos == 0 || length == 0 {
        return Err(Error::config("corpus needs at least one video of one frame"));
    }
    if routes.is_empty() {
        return Err(Error::config("corpus needs at least one route"));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(n_videos);
    for i in 0..n_videos {
        let route = routes[i % routes.len()].clone();
        let cfg = WorldConfig {
            route: route.clone(),
            stack_length: 1,
            max_steps: length,
            ..world.clone()
        };
        let mut frames = Vec::new();
        let mut attempts = 0;
        while frames.len() < length {
            attempts += 1;
            if attempts > 20 {
                return Err(Error::Dataset(format!(
                    "scripted driver could not complete {length} frames on {route}"
                )));
            }
            let ep_seed: u64 = master.gen();
            let (mut state, obs) = WorldState::reset(ep_seed, &cfg)?;
            let mut driver = ScriptedDriver::new(&mut master);
            frames = vec![obs.frame(0).to_vec()];
            while frames.len() < length && !state.is_done() {
                let a = driver.steer(&mut state);
                let r = state.step(a)?;
                if r.info.collided {
                    break;
                }
                frames.push(r.observation.frame(0).to_vec());
            }
        }
        let video = Video {
            id: format!("{i:04}"),
            height: world.frame_size,
            width: world.frame_size,
            fps: (1.0 / world.dt).round(),
            frames,
        };
        write_video(root, &video, &[("route", route.to_string()), ("seed", seed.to_string())])?;
        videos.push(video);
    }
    Ok(ClipDataset {
        root: root.to_path_buf(),
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RouteId;

    fn world() -> WorldConfig {
        WorldConfig {
            frame_size: 16,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn corpus_round_trips_and_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let routes = [RouteId::Straight, RouteId::ObstacleCourse];
        let gen = generate_synthetic_corpus(a.path(), 4, 12, 9, &world(), &routes).unwrap();
        generate_synthetic_corpus(b.path(), 4, 12, 9, &world(), &routes).unwrap();
        let loaded = ClipDataset::load(a.path()).unwrap();
        assert_eq!(loaded.len(), 4);
        assert_eq!(loaded.videos, gen.videos);
        assert!(loaded.videos.iter().all(|v| v.len() >= 12));
        for v in &loaded.videos {
            let dir = format!("video_{}", v.id);
            for f in ["manifest.txt", "frame_00000.png", "frame_00011.png"] {
                let x = std::fs::read(a.path().join(&dir).join(f)).unwrap();
                let y = std::fs::read(b.path().join(&dir).join(f)).unwrap();
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn validation_rejects_short_videos_and_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_corpus(dir.path(), 2, 5, 1, &world(), &[RouteId::Straight]).unwrap();
        assert!(ds.validate(4, 1).is_ok());
        assert!(matches!(ds.validate(4, 2), Err(Error::Dataset(_))));
        std::fs::write(dir.path().join("video_0000/manifest.txt"), "frames = many\n").unwrap();
        assert!(ClipDataset::load(dir.path()).is_err());
    }

    #[test]
    fn clip_extraction_respects_stride() {
        let v = Video {
            id: "x".into(),
            height: 1,
            width: 1,
            fps: 10.0,
            frames: (0..6u8).map(|i| vec![i, i, i]).collect(),
        };
        let c = v.clip(1, 3, 2).unwrap();
        assert_eq!(c.data(), &[1, 1, 1, 3, 3, 3, 5, 5, 5]);
        assert!(v.clip(2, 3, 2).is_err());
    }
}
