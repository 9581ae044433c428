//! Ego-centred top-down rasteriser, forward direction up.

use super::world::WorldState;

pub const GRASS: [u8; 3] = [46, 110, 52];
pub const ROAD: [u8; 3] = [92, 92, 96];
pub const MARKING: [u8; 3] = [240, 240, 235];
pub const BARRIER: [u8; 3] = [205, 160, 40];
pub const OBSTACLE: [u8; 3] = [215, 35, 35];
pub const EGO: [u8; 3] = [40, 80, 225];

/// Metres per pixel for a configuration.
pub fn metres_per_pixel(view_m: f64, frame_size: usize) -> f64 {
    view_m / frame_size as f64
}

/// Half-width of the painted lane-edge bands, never thinner than half a pixel
/// so every row crossing a lane edge paints at least one pixel.
pub fn marking_half_width(mpp: f64) -> f64 {
    (0.5 * mpp).max(0.12)
}

/// Pixel centre `(row, col)` in ego coordinates `(forward, left)`.
pub fn pixel_to_ego(row: usize, col: usize, size: usize, mpp: f64, ego_row: f64) -> (f64, f64) {
    let fwd = (ego_row * size as f64 - (row as f64 + 0.5)) * mpp;
    let left = (size as f64 / 2.0 - (col as f64 + 0.5)) * mpp;
    (fwd, left)
}

pub(crate) fn render_frame(state: &WorldState) -> Vec<u8> {
    let c = state.config();
    let n = c.frame_size;
    let mpp = metres_per_pixel(c.view_m, n);
    let route = state.route();
    let layout = &route.layout;
    let hw = layout.lane_half_width_m;
    let barrier = layout.barrier_offset_m;
    let road_half = if barrier > 0.0 { barrier } else { hw + 1.5 };
    let band = marking_half_width(mpp);
    let barrier_band = mpp.max(0.3);
    let (cos, sin) = (state.heading.cos(), state.heading.sin());
    let (hl, hwv) = (c.vehicle_length / 2.0, c.vehicle_width / 2.0);

    let reach = c.view_m * 1.5 + 5.0;
    let near = route.segments_near(state.x, state.y, reach);
    let points = route.points();

    let mut out = vec![0u8; 3 * n * n];
    let plane = n * n;
    let mut hint = None;
    for row in 0..n {
        for col in 0..n {
            let (fwd, left) = pixel_to_ego(row, col, n, mpp, c.ego_row);
            let wx = state.x + fwd * cos - left * sin;
            let wy = state.y + fwd * sin + left * cos;

            let color = if fwd.abs() <= hl && left.abs() <= hwv {
                EGO
            } else if state
                .obstacles()
                .iter()
                .any(|o| (wx - o.x).powi(2) + (wy - o.y).powi(2) <= o.radius * o.radius)
            {
                OBSTACLE
            } else if near.is_empty() {
                GRASS
            } else {
                let lat = lateral_hill_climb(points, &near, &mut hint, wx, wy).abs();
                if (lat - hw).abs() <= band {
                    MARKING
                } else if barrier > 0.0 && lat >= barrier && lat <= barrier + barrier_band {
                    BARRIER
                } else if lat < road_half {
                    ROAD
                } else {
                    GRASS
                }
            };
            let idx = row * n + col;
            out[idx] = color[0];
            out[plane + idx] = color[1];
            out[2 * plane + idx] = color[2];
        }
        hint = None;
    }
    out
}

fn seg_dist2(points: &[(f64, f64)], i: usize, px: f64, py: f64) -> (f64, f64) {
    let (a, b) = (points[i], points[i + 1]);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (fx, fy) = (a.0 + t * dx, a.1 + t * dy);
    let d2 = (px - fx).powi(2) + (py - fy).powi(2);
    let cross = dx * (py - a.1) - dy * (px - a.0);
    (d2, d2.sqrt().copysign(if cross == 0.0 { 1.0 } else { cross }))
}

/// Signed lateral distance of `(px, py)` to the polyline. Starts from the
/// previous pixel's segment and walks downhill; the first pixel of a row
/// scans the whole nearby range.
fn lateral_hill_climb(
    points: &[(f64, f64)],
    near: &std::ops::Range<usize>,
    hint: &mut Option<usize>,
    px: f64,
    py: f64,
) -> f64 {
    let mut best = match *hint {
        Some(h) => h,
        None => {
            let mut best = (f64::INFINITY, near.start);
            for i in near.clone() {
                let (d2, _) = seg_dist2(points, i, px, py);
                if d2 < best.0 {
                    best = (d2, i);
                }
            }
            best.1
        }
    };
    let mut d_best = seg_dist2(points, best, px, py).0;
    loop {
        let mut moved = false;
        if best > near.start {
            let d = seg_dist2(points, best - 1, px, py).0;
            if d < d_best {
                best -= 1;
                d_best = d;
                moved = true;
            }
        }
        if !moved && best + 1 < near.end {
            let d = seg_dist2(points, best + 1, px, py).0;
            if d < d_best {
                best += 1;
                d_best = d;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    *hint = Some(best);
    seg_dist2(points, best, px, py).1
}
