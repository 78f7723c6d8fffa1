//! Color-coded flow maps and trajectory overlays.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::image::{FlowMap, Image};
use crate::trajectory::{expand, resample, ConstraintMode, TrajectoryField};

/// 99th-percentile flow magnitude (nearest rank), used when no explicit
/// scale is given. Falls back to 1 for an all-zero field.
pub fn auto_max_magnitude(flow: &FlowMap) -> f64 {
    let mut mags: Vec<f64> = flow.vectors().map(|(x, y)| x.hypot(y)).collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((0.99 * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    let m = mags[rank - 1];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h / TAU).rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u8 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Hue encodes direction (`atan2(dy, dx)`), saturation encodes magnitude
/// relative to `max_mag` (clamped to 1). Zero motion is white.
pub fn flow_to_color(flow: &FlowMap, max_mag: Option<f64>) -> Image {
    let scale = match max_mag {
        Some(m) if m > 0.0 => m,
        _ => auto_max_magnitude(flow),
    };
    let mut data = Vec::with_capacity(flow.height() * flow.width() * 3);
    for (dx, dy) in flow.vectors() {
        let sat = (dx.hypot(dy) / scale).min(1.0);
        let hue = dy.atan2(dx).rem_euclid(TAU);
        data.extend_from_slice(&hsv_to_rgb(hue, sat, 1.0));
    }
    Image::from_parts(flow.height(), flow.width(), 3, data)
}

/// Pixels sampled on a `stride` grid, starting half a stride in.
fn grid(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    ((stride / 2).min(len - 1)..len).step_by(stride)
}

/// Absolute sample positions of each drawn trajectory: one polyline per
/// grid pixel, `m_samples` points from `n = 0` to `n = M - 1`.
pub fn trajectory_polylines(
    traj: &TrajectoryField,
    stride: usize,
    m_samples: usize,
) -> Result<Vec<Vec<(f64, f64)>>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let field = if traj.mode() == ConstraintMode::ZeroConstraint {
        expand(traj, traj.n_steps())?
    } else {
        resample(traj, m_samples)?
    };
    let mut lines = Vec::new();
    for y in grid(traj.height(), stride) {
        for x in grid(traj.width(), stride) {
            let pts = (0..field.n_steps())
                .map(|n| {
                    let (dx, dy) = field.get(n, x, y);
                    (x as f64 + dx, y as f64 + dy)
                })
                .collect();
            lines.push(pts);
        }
    }
    Ok(lines)
}

struct Canvas {
    h: usize,
    w: usize,
    alpha: Vec<f64>,
}

impl Canvas {
    // bilinear splat of coverage, keeping the max per pixel
    fn splat(&mut self, x: f64, y: f64, strength: f64) {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (ix, iy, wgt) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1.0, y0, fx * (1.0 - fy)),
            (x0, y0 + 1.0, (1.0 - fx) * fy),
            (x0 + 1.0, y0 + 1.0, fx * fy),
        ] {
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < self.w && (iy as usize) < self.h {
                let a = &mut self.alpha[iy as usize * self.w + ix as usize];
                *a = a.max((wgt * strength * 2.0).min(1.0));
            }
        }
    }

    fn segment(&mut self, a: (f64, f64), b: (f64, f64)) {
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let steps = (len * 4.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.splat(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), 1.0);
        }
    }
}

const LINE_COLOR: [f64; 3] = [1.0, 0.15, 0.1];
const MARKER_COLOR: [f64; 3] = [1.0, 0.95, 0.1];

/// Draws sampled trajectories over a dimmed copy of `img`: anti-aliased
/// 1 px polylines with a marker at the `n = 0` end.
pub fn overlay_trajectories(
    img: &Image,
    traj: &TrajectoryField,
    stride: usize,
    m_samples: usize,
) -> Result<Image> {
    if img.height() != traj.height() || img.width() != traj.width() {
        return Err(Error::Dimension("trajectory and image sizes differ".into()));
    }
    let lines = trajectory_polylines(traj, stride, m_samples)?;
    let (h, w) = (img.height(), img.width());
    let mut strokes = Canvas {
        h,
        w,
        alpha: vec![0.0; h * w],
    };
    let mut markers = Canvas {
        h,
        w,
        alpha: vec![0.0; h * w],
    };
    for line in &lines {
        for pair in line.windows(2) {
            if pair[0] != pair[1] {
                strokes.segment(pair[0], pair[1]);
            }
        }
        if let Some(&(x, y)) = line.first() {
            markers.splat(x, y, 1.0);
        }
    }
    let base = img.to_rgb();
    let mut data = Vec::with_capacity(h * w * 3);
    for (p, px) in base.data().chunks_exact(3).enumerate() {
        let (la, ma) = (strokes.alpha[p], markers.alpha[p]);
        for c in 0..3 {
            let mut v = 0.5 * px[c];
            v += la * (LINE_COLOR[c] - v);
            v += ma * (MARKER_COLOR[c] - v);
            data.push(v);
        }
    }
    Ok(Image::from_parts(h, w, 3, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowMap::zeros(3, 4), None);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn opposite_flows_have_opposite_hues() {
        let f = FlowMap::uniform(2, 2, 3.0, 1.0).unwrap();
        let a = flow_to_color(&f, Some(4.0));
        let b = flow_to_color(&f.negated(), Some(4.0));
        let hue = |img: &Image| {
            let p = &img.data()[0..3];
            // recover hue angle from RGB via the standard chromaticity formula
            let (r, g, b) = (p[0], p[1], p[2]);
            (3f64.sqrt() * (g - b)).atan2(2.0 * r - g - b)
        };
        let d = (hue(&a) - hue(&b)).rem_euclid(TAU);
        assert!((d - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn full_saturation_at_max() {
        let f = FlowMap::uniform(2, 2, 0.0, 5.0).unwrap();
        let img = flow_to_color(&f, Some(5.0));
        let p = &img.data()[0..3];
        let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min.abs() < 1e-12);
    }

    #[test]
    fn compass_directions_distinct() {
        let mut seen: Vec<[u8; 3]> = Vec::new();
        for k in 0..8 {
            let a = k as f64 * TAU / 8.0;
            let f = FlowMap::uniform(2, 2, a.cos(), a.sin()).unwrap();
            let img = flow_to_color(&f, Some(1.0));
            let px = [0, 1, 2].map(|c| crate::image::quantize(img.data()[c]));
            assert!(!seen.contains(&px));
            seen.push(px);
        }
    }

    #[test]
    fn auto_scale_percentile() {
        let mut d = vec![0.0; 200];
        for (i, v) in d.chunks_mut(2).enumerate() {
            v[0] = i as f64;
        }
        let f = FlowMap::new(10, 10, d).unwrap();
        assert_eq!(auto_max_magnitude(&f), 98.0);
        assert_eq!(auto_max_magnitude(&FlowMap::zeros(2, 2)), 1.0);
    }

    #[test]
    fn zero_trajectory_draws_only_dots() {
        let t = TrajectoryField::zeros(ConstraintMode::Quadratic, 15, 16, 16).unwrap();
        let lines = trajectory_polylines(&t, 4, 9).unwrap();
        assert_eq!(lines.len(), 16);
        for l in &lines {
            assert!(l.windows(2).all(|p| p[0] == p[1]));
        }
        let img = Image::filled(16, 16, 1, 0.8).unwrap();
        let out = overlay_trajectories(&img, &t, 4, 9).unwrap();
        // only marker pixels differ from the dimmed base
        let changed = out
            .data()
            .chunks(3)
            .filter(|p| p.iter().any(|&v| (v - 0.4).abs() > 1e-12))
            .count();
        assert_eq!(changed, 16);
    }

    #[test]
    fn huge_stride_single_line() {
        let t = TrajectoryField::uniform(ConstraintMode::Linear, 15, 10, 12, &[2.0, 1.0]).unwrap();
        assert!(trajectory_polylines(&t, 50, 9).unwrap().len() <= 1);
        assert!(trajectory_polylines(&t, 0, 9).is_err());
    }

    #[test]
    fn linear_trajectory_is_collinear() {
        let t = TrajectoryField::new(
            ConstraintMode::Linear,
            15,
            2,
            2,
            vec![3.0, 1.5, -2.0, 4.0, 0.5, -0.7, 5.0, 5.0],
        )
        .unwrap();
        for line in trajectory_polylines(&t, 1, 11).unwrap() {
            let (a, b) = (line[0], line[line.len() - 1]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            for p in &line {
                let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
                assert!((cross / len).abs() < 0.5);
            }
        }
    }
}
