//! Uses of a recovered trajectory: video frame extraction by backward
//! warping, and a reference motion-aware 3x3 convolution whose taps follow
//! the trajectory.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{BoundaryMode, Image, OffsetField};
use crate::sampler::{warp_with, Cell, SamplePoint};
use crate::trajectory::{expand, resample, ConstraintMode, TrajectoryField};

/// Default scale applied to trajectory offsets for motion-aware sampling.
pub const DEFAULT_ALPHA: f64 = 0.1;
/// Taps of the motion-aware filter.
pub const MA_TAPS: usize = 9;

/// Warps `sharp` along `m_frames` equispaced points of the trajectory.
/// Frame `(M - 1) / 2` is the sharp image itself.
pub fn extract_frames(
    sharp: &Image,
    traj: &TrajectoryField,
    m_frames: usize,
    mode: BoundaryMode,
) -> Result<Vec<Image>> {
    if traj.height() != sharp.height() || traj.width() != sharp.width() {
        return Err(Error::Dimension(format!(
            "trajectory is {}x{}, image is {}x{}",
            traj.height(),
            traj.width(),
            sharp.height(),
            sharp.width()
        )));
    }
    let field = match traj.mode() {
        ConstraintMode::ZeroConstraint if m_frames == traj.n_steps() => expand(traj, m_frames)?,
        ConstraintMode::ZeroConstraint => return Err(Error::UnsupportedMode(traj.mode())),
        _ => resample(traj, m_frames)?,
    };
    Ok((0..m_frames)
        .map(|n| warp_with(sharp, field.step(n), mode))
        .collect())
}

/// Nine trajectory-shaped sampling offsets per pixel: the curve evaluated at
/// `u ∈ {-1, -0.75, ..., 1}` and scaled by `alpha`.
pub fn ma_sampling_offsets(traj: &TrajectoryField, alpha: f64) -> Result<OffsetField> {
    if traj.mode() == ConstraintMode::ZeroConstraint {
        return Err(Error::UnsupportedMode(traj.mode()));
    }
    let field = resample(traj, MA_TAPS)?;
    let (h, w) = (field.height(), field.width());
    let data = field.into_data().into_iter().map(|v| alpha * v).collect();
    OffsetField::new(MA_TAPS, h, w, data)
}

/// The regular 3x3 lattice `(-1, -1) .. (1, 1)` as a sampling field, taps
/// in row-major order.
pub fn square_grid_offsets(height: usize, width: usize) -> OffsetField {
    let mut data = Vec::with_capacity(MA_TAPS * height * width * 2);
    for ky in -1..=1 {
        for kx in -1..=1 {
            for _ in 0..height * width {
                data.extend_from_slice(&[kx as f64, ky as f64]);
            }
        }
    }
    OffsetField::from_parts(MA_TAPS, height, width, data)
}

/// Filter weights laid out `[tap][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    c_in: usize,
    c_out: usize,
    data: Vec<f64>,
}

impl ConvWeights {
    pub fn new(c_in: usize, c_out: usize, data: Vec<f64>) -> Result<Self> {
        if c_in == 0 || c_out == 0 || data.len() != MA_TAPS * c_in * c_out {
            return Err(Error::Dimension(format!(
                "conv weights need {} values for {c_in} -> {c_out} channels, got {}",
                MA_TAPS * c_in * c_out,
                data.len()
            )));
        }
        Ok(ConvWeights { c_in, c_out, data })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    #[inline]
    pub fn get(&self, tap: usize, ci: usize, co: usize) -> f64 {
        self.data[(tap * self.c_in + ci) * self.c_out + co]
    }
}

/// `y(p) = Σ_taps Σ_cin w[tap][cin][cout] · x(p + offset_tap)` with bilinear
/// sampling of the input feature map.
pub fn motion_aware_conv(
    feature: &Image,
    weights: &ConvWeights,
    sampling: &OffsetField,
    mode: BoundaryMode,
) -> Result<Image> {
    if sampling.n_steps() != MA_TAPS {
        return Err(Error::Dimension(format!(
            "sampling field has {} taps, expected {MA_TAPS}",
            sampling.n_steps()
        )));
    }
    sampling.check_matches(feature)?;
    if weights.c_in != feature.channels() {
        return Err(Error::Dimension(format!(
            "weights expect {} input channels, feature has {}",
            weights.c_in,
            feature.channels()
        )));
    }
    let (h, w, cin, cout) = (feature.height(), feature.width(), weights.c_in, weights.c_out);
    let mut out = vec![0.0; h * w * cout];
    out.par_chunks_mut(w * cout).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let acc = &mut row[x * cout..(x + 1) * cout];
            for tap in 0..MA_TAPS {
                let (dx, dy) = sampling.get(tap, x, y);
                let cell = Cell::locate(w, h, SamplePoint::new(x as f64 + dx, y as f64 + dy), mode);
                for ci in 0..cin {
                    let v = cell.sample(feature, ci);
                    for (co, a) in acc.iter_mut().enumerate() {
                        *a += weights.get(tap, ci, co) * v;
                    }
                }
            }
        }
    });
    Ok(Image::from_parts(h, w, cout, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::create_blur;
    use crate::synthesis::procedural_texture;

    #[test]
    fn mid_frame_is_sharp() {
        let img = procedural_texture(20, 18, 3, 2).unwrap();
        let t = TrajectoryField::uniform(ConstraintMode::Quadratic, 15, 20, 18, &[1.3, -0.4, 2.2, 0.9]).unwrap();
        for m in [3, 15, 29] {
            let frames = extract_frames(&img, &t, m, BoundaryMode::ClampToEdge).unwrap();
            assert_eq!(frames.len(), m);
            assert_eq!(frames[(m - 1) / 2], img);
        }
    }

    #[test]
    fn zero_trajectory_all_sharp() {
        let img = procedural_texture(10, 10, 1, 3).unwrap();
        let t = TrajectoryField::zeros(ConstraintMode::Linear, 15, 10, 10).unwrap();
        for f in extract_frames(&img, &t, 7, BoundaryMode::ZeroOutside).unwrap() {
            assert_eq!(f, img);
        }
    }

    #[test]
    fn frames_average_to_blur() {
        let img = procedural_texture(16, 16, 3, 4).unwrap();
        let t = TrajectoryField::uniform(ConstraintMode::BdLinear, 15, 16, 16, &[2.5, 1.0, -0.5, 3.0]).unwrap();
        let frames = extract_frames(&img, &t, 15, BoundaryMode::ClampToEdge).unwrap();
        let blur = create_blur(&img, &expand(&t, 15).unwrap(), BoundaryMode::ClampToEdge).unwrap();
        for (i, b) in blur.data().iter().enumerate() {
            let mean = frames.iter().map(|f| f.data()[i]).sum::<f64>() / 15.0;
            assert!((mean - b).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_count_errors() {
        let img = procedural_texture(8, 8, 1, 5).unwrap();
        let t = TrajectoryField::zeros(ConstraintMode::Linear, 15, 8, 8).unwrap();
        assert!(matches!(
            extract_frames(&img, &t, 1, BoundaryMode::ClampToEdge),
            Err(Error::EvenStepCount(1))
        ));
        let z = TrajectoryField::zeros(ConstraintMode::ZeroConstraint, 15, 8, 8).unwrap();
        assert!(extract_frames(&img, &z, 15, BoundaryMode::ClampToEdge).is_ok());
        assert!(matches!(
            extract_frames(&img, &z, 9, BoundaryMode::ClampToEdge),
            Err(Error::UnsupportedMode(_))
        ));
    }

    #[test]
    fn ma_offsets_examples() {
        let t = TrajectoryField::uniform(ConstraintMode::Linear, 15, 2, 2, &[4.0, 0.0]).unwrap();
        let f = ma_sampling_offsets(&t, 0.25).unwrap();
        let xs: Vec<f64> = (0..9).map(|n| f.get(n, 1, 1).0).collect();
        assert_eq!(xs, vec![1.0, 0.75, 0.5, 0.25, 0.0, -0.25, -0.5, -0.75, -1.0]);
        assert!((0..9).all(|n| f.get(n, 0, 0).1 == 0.0));

        let z = TrajectoryField::zeros(ConstraintMode::Quadratic, 15, 2, 2).unwrap();
        assert!(ma_sampling_offsets(&z, DEFAULT_ALPHA).unwrap().data().iter().all(|&v| v == 0.0));
        let zc = TrajectoryField::zeros(ConstraintMode::ZeroConstraint, 15, 2, 2).unwrap();
        assert!(matches!(
            ma_sampling_offsets(&zc, DEFAULT_ALPHA),
            Err(Error::UnsupportedMode(_))
        ));
    }

    #[test]
    fn collapsed_taps_scale_center() {
        let feat = procedural_texture(6, 7, 2, 6).unwrap();
        // c_out = 1, weights sum to 2.5 for every output channel
        let mut data = vec![0.0; 9 * 2];
        for tap in 0..9 {
            data[tap * 2] = 0.1 * (tap + 1) as f64 / 4.5 * 2.5;
        }
        let wts = ConvWeights::new(2, 1, data).unwrap();
        let out = motion_aware_conv(&feat, &wts, &OffsetField::zeros(9, 6, 7).unwrap(), BoundaryMode::ClampToEdge).unwrap();
        for y in 0..6 {
            for x in 0..7 {
                assert!((out.get(x, y, 0) - 2.5 * feat.get(x, y, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let feat = Image::zeros(4, 4, 2).unwrap();
        let wts = ConvWeights::new(3, 1, vec![0.0; 27]).unwrap();
        assert!(motion_aware_conv(&feat, &wts, &square_grid_offsets(4, 4), BoundaryMode::ClampToEdge).is_err());
        let wts = ConvWeights::new(2, 1, vec![0.0; 18]).unwrap();
        assert!(motion_aware_conv(&feat, &wts, &OffsetField::zeros(7, 4, 4).unwrap(), BoundaryMode::ClampToEdge).is_err());
        assert!(ConvWeights::new(2, 1, vec![0.0; 17]).is_err());
    }
}
