//! Road layouts and their centerline geometry.
//!
//! A layout is plain text, one `key = value` per line, `#` starts a comment:
//!
//! ```text
//! name = s-curve
//! lane_half_width_m = 1.75      # lateral distance from centerline to lane edge
//! barrier_offset_m = 3.5        # guard rails on both sides; 0 disables them
//! spawn_range_m = 60            # spawn arc length is drawn from [0, spawn_range_m)
//! length_m = 0                  # 0 = long enough for a full episode
//! curvature = sine              # none | constant | sine
//! curvature_amplitude = 0.02    # 1/m
//! curvature_period_m = 120      # only for sine
//! obstacle = 95, 1.1, 0.6       # arc length s, lateral offset, radius (m)
//! obstacle = 140, -1.1, 0.6, 1.5  # optional 4th value: speed along the road (m/s)
//! ```

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Spacing of the sampled centerline polyline.
pub const POLYLINE_SPACING_M: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curvature {
    None,
    Constant(f64),
    Sine { amplitude: f64, period_m: f64 },
}

impl Curvature {
    pub fn at(&self, s: f64) -> f64 {
        match *self {
            Curvature::None => 0.0,
            Curvature::Constant(k) => k,
            Curvature::Sine {
                amplitude,
                period_m,
            } => amplitude * (std::f64::consts::TAU * s / period_m).sin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleSpec {
    pub s_m: f64,
    pub lateral_m: f64,
    pub radius_m: f64,
    pub speed_m_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteLayout {
    pub name: String,
    pub lane_half_width_m: f64,
    pub barrier_offset_m: f64,
    pub spawn_range_m: f64,
    pub length_m: f64,
    pub curvature: Curvature,
    pub obstacles: Vec<ObstacleSpec>,
}

const STRAIGHT: &str = "\
name = straight
lane_half_width_m = 1.75
barrier_offset_m = 3.5
spawn_range_m = 60
curvature = none
";

const GENTLE_CURVE: &str = "\
name = gentle-curve
lane_half_width_m = 1.75
barrier_offset_m = 3.5
spawn_range_m = 60
curvature = constant
curvature_amplitude = 0.008
";

const S_CURVE: &str = "\
name = s-curve
lane_half_width_m = 1.75
barrier_offset_m = 3.5
spawn_range_m = 60
curvature = sine
curvature_amplitude = 0.02
curvature_period_m = 120
";

const OPEN_S_CURVE: &str = "\
name = open-s-curve
lane_half_width_m = 1.75
barrier_offset_m = 0
spawn_range_m = 60
curvature = sine
curvature_amplitude = 0.02
curvature_period_m = 120
";

const OBSTACLE_COURSE: &str = "\
name = obstacle-course
lane_half_width_m = 1.75
barrier_offset_m = 3.5
spawn_range_m = 40
curvature = none
obstacle = 70, 1.45, 0.5
obstacle = 110, -1.45, 0.5
obstacle = 150, 1.45, 0.5
obstacle = 190, -1.45, 0.5
obstacle = 230, 1.45, 0.5, 1.0
";

/// Built-in road layouts, or a layout file on disk.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RouteId {
    Straight,
    GentleCurve,
    SCurve,
    /// The S-curve without guard rails, so leaving the lane costs reward but
    /// never ends the episode.
    OpenSCurve,
    ObstacleCourse,
    File(std::path::PathBuf),
}

impl RouteId {
    pub const BUILTIN: [RouteId; 5] = [
        RouteId::Straight,
        RouteId::GentleCurve,
        RouteId::SCurve,
        RouteId::OpenSCurve,
        RouteId::ObstacleCourse,
    ];

    pub fn layout(&self) -> Result<RouteLayout> {
        match self {
            RouteId::Straight => RouteLayout::parse(STRAIGHT),
            RouteId::GentleCurve => RouteLayout::parse(GENTLE_CURVE),
            RouteId::SCurve => RouteLayout::parse(S_CURVE),
            RouteId::OpenSCurve => RouteLayout::parse(OPEN_S_CURVE),
            RouteId::ObstacleCourse => RouteLayout::parse(OBSTACLE_COURSE),
            RouteId::File(path) => RouteLayout::load(path),
        }
    }
}

impl FromStr for RouteId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "straight" => Ok(RouteId::Straight),
            "gentle-curve" => Ok(RouteId::GentleCurve),
            "s-curve" => Ok(RouteId::SCurve),
            "open-s-curve" => Ok(RouteId::OpenSCurve),
            "obstacle-course" => Ok(RouteId::ObstacleCourse),
            other if other.ends_with(".route") => Ok(RouteId::File(other.into())),
            other => Err(Error::config(format!(
                "unknown route '{other}' (expected straight, gentle-curve, s-curve, open-s-curve, obstacle-course or a *.route file)"
            ))),
        }
    }
}

impl std::fmt::Display for RouteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RouteId::Straight => write!(f, "straight"),
            RouteId::GentleCurve => write!(f, "gentle-curve"),
            RouteId::SCurve => write!(f, "s-curve"),
            RouteId::OpenSCurve => write!(f, "open-s-curve"),
            RouteId::ObstacleCourse => write!(f, "obstacle-course"),
            RouteId::File(p) => write!(f, "{}", p.display()),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::config(format!("route key {key}: '{v}' is not a number")))
}

impl RouteLayout {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut layout = RouteLayout {
            name: "custom".into(),
            lane_half_width_m: 1.75,
            barrier_offset_m: 0.0,
            spawn_range_m: 60.0,
            length_m: 0.0,
            curvature: Curvature::None,
            obstacles: Vec::new(),
        };
        let mut kind = "none".to_string();
        let mut amplitude = 0.0;
        let mut period = 100.0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("route line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "name" => layout.name = v.to_string(),
                "lane_half_width_m" => layout.lane_half_width_m = parse_f64(k, v)?,
                "barrier_offset_m" => layout.barrier_offset_m = parse_f64(k, v)?,
                "spawn_range_m" => layout.spawn_range_m = parse_f64(k, v)?,
                "length_m" => layout.length_m = parse_f64(k, v)?,
                "curvature" => kind = v.to_string(),
                "curvature_amplitude" => amplitude = parse_f64(k, v)?,
                "curvature_period_m" => period = parse_f64(k, v)?,
                "obstacle" => {
                    let vals = v
                        .split(',')
                        .map(|p| parse_f64(k, p))
                        .collect::<Result<Vec<_>>>()?;
                    if !(3..=4).contains(&vals.len()) {
                        return Err(Error::config(
                            "obstacle expects s, lateral, radius[, speed]",
                        ));
                    }
                    layout.obstacles.push(ObstacleSpec {
                        s_m: vals[0],
                        lateral_m: vals[1],
                        radius_m: vals[2],
                        speed_m_s: vals.get(3).copied().unwrap_or(0.0),
                    });
                }
                other => return Err(Error::config(format!("unknown route key '{other}'"))),
            }
        }
        layout.curvature = match kind.as_str() {
            "none" => Curvature::None,
            "constant" => Curvature::Constant(amplitude),
            "sine" => {
                if period <= 0.0 {
                    return Err(Error::config("curvature_period_m must be positive"));
                }
                Curvature::Sine {
                    amplitude,
                    period_m: period,
                }
            }
            other => return Err(Error::config(format!("unknown curvature '{other}'"))),
        };
        if layout.lane_half_width_m <= 0.0 {
            return Err(Error::config("lane_half_width_m must be positive"));
        }
        if layout.barrier_offset_m < 0.0 || layout.spawn_range_m < 0.0 {
            return Err(Error::config("offsets and ranges must be non-negative"));
        }
        if layout.barrier_offset_m > 0.0 && layout.barrier_offset_m <= layout.lane_half_width_m {
            return Err(Error::config("barrier_offset_m must exceed lane_half_width_m"));
        }
        if layout.obstacles.iter().any(|o| o.radius_m <= 0.0) {
            return Err(Error::config("obstacle radius must be positive"));
        }
        Ok(layout)
    }
}

/// Result of projecting a point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed distance, positive to the left of the driving direction.
    pub lateral: f64,
    /// Centerline heading at the foot point.
    pub heading: f64,
    pub segment: usize,
}

/// Sampled centerline polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub layout: RouteLayout,
    points: Vec<(f64, f64)>,
    headings: Vec<f64>,
}

impl Route {
    /// Integrates the curvature profile from the origin, heading along +x.
    pub fn build(layout: RouteLayout, min_length_m: f64) -> Self {
        let length = if layout.length_m > 0.0 {
            layout.length_m.max(min_length_m)
        } else {
            min_length_m
        };
        let n = (length / POLYLINE_SPACING_M).ceil() as usize + 1;
        let mut points = Vec::with_capacity(n);
        let mut headings = Vec::with_capacity(n);
        let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            points.push((x, y));
            headings.push(th);
            let s = i as f64 * POLYLINE_SPACING_M;
            // midpoint rule for the heading over the next segment
            let th_mid = th + 0.5 * POLYLINE_SPACING_M * layout.curvature.at(s);
            x += POLYLINE_SPACING_M * th_mid.cos();
            y += POLYLINE_SPACING_M * th_mid.sin();
            th += POLYLINE_SPACING_M * layout.curvature.at(s + 0.5 * POLYLINE_SPACING_M);
        }
        Self {
            layout,
            points,
            headings,
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        let mut s = 0.0;
        for w in self.points.windows(2) {
            s += ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        }
        s
    }

    fn segment_len(&self, i: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[i + 1]);
        ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
    }

    /// Point and tangent heading at arc length `s` (clamped to the route).
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let mut remaining = s.max(0.0);
        for i in 0..self.points.len() - 1 {
            let len = self.segment_len(i);
            if remaining <= len || i == self.points.len() - 2 {
                let t = (remaining / len).min(1.0);
                let (a, b) = (self.points[i], self.points[i + 1]);
                let heading = (b.1 - a.1).atan2(b.0 - a.0);
                return (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), heading);
            }
            remaining -= len;
        }
        unreachable!("route has at least two points")
    }

    fn project_segment(&self, i: usize, px: f64, py: f64) -> (f64, f64, f64) {
        let (a, b) = (self.points[i], self.points[i + 1]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
        let (fx, fy) = (a.0 + t * dx, a.1 + t * dy);
        let d2 = (px - fx).powi(2) + (py - fy).powi(2);
        let cross = dx * (py - a.1) - dy * (px - a.0);
        let lateral = d2.sqrt().copysign(if cross == 0.0 { 1.0 } else { cross });
        (d2, lateral, t)
    }

    /// Nearest-point projection over the whole polyline.
    pub fn project(&self, px: f64, py: f64) -> Projection {
        self.project_within(px, py, 0..self.points.len() - 1)
    }

    /// Nearest-point projection restricted to a segment range.
    pub fn project_within(&self, px: f64, py: f64, segments: std::ops::Range<usize>) -> Projection {
        let mut best = (f64::INFINITY, 0.0, 0.0, 0usize);
        for i in segments {
            let (d2, lat, t) = self.project_segment(i, px, py);
            if d2 < best.0 {
                best = (d2, lat, t, i);
            }
        }
        let i = best.3;
        let s = i as f64 * POLYLINE_SPACING_M + best.2 * self.segment_len(i);
        let (a, b) = (self.points[i], self.points[i + 1]);
        Projection {
            s,
            lateral: best.1,
            heading: (b.1 - a.1).atan2(b.0 - a.0),
            segment: i,
        }
    }

    /// Segments whose endpoints lie within `radius` of `(x, y)`, as one
    /// contiguous range (empty if none).
    pub fn segments_near(&self, x: f64, y: f64, radius: f64) -> std::ops::Range<usize> {
        let r2 = radius * radius;
        let mut lo = usize::MAX;
        let mut hi = 0;
        for (i, p) in self.points.iter().enumerate() {
            if (p.0 - x).powi(2) + (p.1 - y).powi(2) <= r2 {
                lo = lo.min(i);
                hi = hi.max(i);
            }
        }
        if lo == usize::MAX {
            return 0..0;
        }
        let lo = lo.saturating_sub(1);
        let hi = (hi + 1).min(self.points.len() - 1);
        lo..hi
    }

    pub fn heading_at_index(&self, i: usize) -> f64 {
        self.headings[i.min(self.headings.len() - 1)]
    }
}
