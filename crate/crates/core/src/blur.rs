//! Blur creation: a blurry image is the average of N backward-warped copies
//! of the sharp image, one per exposure timestep.
//!
//! The per-pixel average is a running mean over `n` in index order. That
//! keeps the result independent of how pixels are split across threads and
//! reproduces constant inputs exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{BoundaryMode, Image, OffsetField};
use crate::sampler::{Cell, SamplePoint};

/// Default number of exposure timesteps.
pub const DEFAULT_STEPS: usize = 15;

/// Renders `B(p) = 1/N Σ_n sharp(p + Δp_n)` per channel.
pub fn create_blur(sharp: &Image, offsets: &OffsetField, mode: BoundaryMode) -> Result<Image> {
    offsets.check_matches(sharp)?;
    let (h, w, ch) = (sharp.height(), sharp.width(), sharp.channels());
    let n_steps = offsets.n_steps();
    let inv: Vec<f64> = (1..=n_steps).map(|k| 1.0 / k as f64).collect();
    let mut out = vec![0.0; h * w * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let px = &mut row[x * ch..(x + 1) * ch];
            for n in 0..n_steps {
                let (dx, dy) = offsets.get(n, x, y);
                let cell = Cell::locate(w, h, SamplePoint::new(x as f64 + dx, y as f64 + dy), mode);
                for (c, acc) in px.iter_mut().enumerate() {
                    let v = cell.sample(sharp, c);
                    if n == 0 {
                        *acc = v;
                    } else {
                        *acc += (v - *acc) * inv[n];
                    }
                }
            }
        }
    });
    Ok(Image::from_parts(h, w, ch, out))
}

/// Gradient of a scalar loss with respect to every offset, given the
/// loss gradient `upstream` with respect to the blurred image.
pub fn blur_grad_wrt_offsets(
    sharp: &Image,
    offsets: &OffsetField,
    upstream: &Image,
    mode: BoundaryMode,
) -> Result<OffsetField> {
    offsets.check_matches(sharp)?;
    sharp.check_same_shape(upstream, "upstream gradient vs sharp image")?;
    let (h, w, ch) = (sharp.height(), sharp.width(), sharp.channels());
    let n_steps = offsets.n_steps();
    let plane = h * w * 2;
    let inv_n = 1.0 / n_steps as f64;
    let mut grad = vec![0.0; n_steps * plane];
    grad.par_chunks_mut(plane).enumerate().for_each(|(n, out)| {
        let step = offsets.step(n);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let pt = SamplePoint::new(x as f64 + step[2 * p], y as f64 + step[2 * p + 1]);
                let cell = Cell::locate(w, h, pt, mode);
                let (mut gx, mut gy) = (0.0, 0.0);
                for c in 0..ch {
                    let u = upstream.get(x, y, c);
                    if u != 0.0 {
                        let (sx, sy) = cell.grad(sharp, c);
                        gx += u * sx;
                        gy += u * sy;
                    }
                }
                out[2 * p] = gx * inv_n;
                out[2 * p + 1] = gy * inv_n;
            }
        }
    });
    Ok(OffsetField::from_parts(n_steps, h, w, grad))
}

/// Dense per-pixel blur kernel induced by a trajectory.
///
/// `weights` is `(2R+1) x (2R+1)` row-major; entry `(j, i)` is the weight
/// of source pixel `(x + i - R, y + j - R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub radius: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Weight at relative offset `(dx, dy)` from the kernel center.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        if dx.abs() > r || dy.abs() > r {
            return 0.0;
        }
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Smallest admissible support radius for the trajectory at `(x, y)`.
pub fn required_radius(offsets: &OffsetField, x: usize, y: usize) -> usize {
    let max = (0..offsets.n_steps())
        .map(|n| {
            let (dx, dy) = offsets.get(n, x, y);
            dx.hypot(dy)
        })
        .fold(0.0, f64::max);
    max.ceil() as usize + 1
}

/// Builds the equivalent blur kernel at `pixel`: each timestep deposits
/// weight `1/N` onto the four lattice neighbors of its sampling point with
/// bilinear weights; neighbors outside the raster are dropped.
pub fn equivalent_kernel(offsets: &OffsetField, pixel: (usize, usize), radius: usize) -> Result<Kernel> {
    let (x, y) = pixel;
    if x >= offsets.width() || y >= offsets.height() {
        return Err(Error::Dimension(format!(
            "pixel ({x}, {y}) outside {}x{} field",
            offsets.width(),
            offsets.height()
        )));
    }
    let required = required_radius(offsets, x, y);
    if radius < required {
        return Err(Error::SupportTooSmall { radius, required });
    }
    let side = 2 * radius + 1;
    let mut weights = vec![0.0; side * side];
    let (w, h) = (offsets.width(), offsets.height());
    for n in 0..offsets.n_steps() {
        let (dx, dy) = offsets.get(n, x, y);
        let cell = Cell::locate(
            w,
            h,
            SamplePoint::new(x as f64 + dx, y as f64 + dy),
            BoundaryMode::ZeroOutside,
        );
        for (tx, ty, wt) in cell.taps() {
            let i = (tx as isize - x as isize + radius as isize) as usize;
            let j = (ty as isize - y as isize + radius as isize) as usize;
            weights[j * side + i] += wt;
        }
    }
    let n = offsets.n_steps() as f64;
    weights.iter_mut().for_each(|v| *v /= n);
    Ok(Kernel { radius, weights })
}

/// Blurs by building and applying the explicit per-pixel kernel. This is the
/// brute-force counterpart of [`create_blur`] with
/// [`BoundaryMode::ZeroOutside`].
pub fn equivalent_kernel_blur(sharp: &Image, offsets: &OffsetField) -> Result<Image> {
    offsets.check_matches(sharp)?;
    let (h, w, ch) = (sharp.height(), sharp.width(), sharp.channels());
    let mut out = vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            let radius = required_radius(offsets, x, y);
            let kernel = equivalent_kernel(offsets, (x, y), radius)?;
            let r = radius as isize;
            for j in -r..=r {
                for i in -r..=r {
                    let wt = kernel.at(i, j);
                    if wt == 0.0 {
                        continue;
                    }
                    let (sx, sy) = (x as isize + i, y as isize + j);
                    // taps outside the raster were never deposited
                    let (sx, sy) = (sx as usize, sy as usize);
                    for c in 0..ch {
                        out[(y * w + x) * ch + c] += wt * sharp.get(sx, sy, c);
                    }
                }
            }
        }
    }
    Ok(Image::from_parts(h, w, ch, out))
}
