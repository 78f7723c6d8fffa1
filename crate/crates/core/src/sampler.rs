//! Bilinear sampling, its derivative with respect to the sampling
//! coordinates, and whole-image backward warping.
//!
//! Interpolation is written as nested lerps (`a + t * (b - a)`) so that a
//! constant neighborhood reproduces the constant exactly and integer
//! coordinates return the stored sample bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{BoundaryMode, FlowMap, Image};

/// Continuous sampling location: `x` along columns, `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
}

impl SamplePoint {
    pub fn new(x: f64, y: f64) -> Self {
        SamplePoint { x, y }
    }
}

/// The 2x2 lattice neighborhood of a sampling point and its blend weights.
///
/// Out-of-raster neighbors (only possible with [`BoundaryMode::ZeroOutside`])
/// are `None`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    x0: Option<usize>,
    x1: Option<usize>,
    y0: Option<usize>,
    y1: Option<usize>,
    fx: f64,
    fy: f64,
    // derivative vanishes along an axis when the coordinate was clamped
    live_x: bool,
    live_y: bool,
}

#[inline]
fn in_range(i: f64, len: usize) -> Option<usize> {
    if i >= 0.0 && i < len as f64 {
        Some(i as usize)
    } else {
        None
    }
}

impl Cell {
    #[inline]
    pub(crate) fn locate(width: usize, height: usize, pt: SamplePoint, mode: BoundaryMode) -> Cell {
        match mode {
            BoundaryMode::ClampToEdge => {
                let max_x = (width - 1) as f64;
                let max_y = (height - 1) as f64;
                let cx = pt.x.clamp(0.0, max_x);
                let cy = pt.y.clamp(0.0, max_y);
                let x0 = cx.floor() as usize;
                let y0 = cy.floor() as usize;
                Cell {
                    x0: Some(x0),
                    x1: Some((x0 + 1).min(width - 1)),
                    y0: Some(y0),
                    y1: Some((y0 + 1).min(height - 1)),
                    fx: cx - x0 as f64,
                    fy: cy - y0 as f64,
                    live_x: pt.x >= 0.0 && pt.x <= max_x,
                    live_y: pt.y >= 0.0 && pt.y <= max_y,
                }
            }
            BoundaryMode::ZeroOutside => {
                let fx0 = pt.x.floor();
                let fy0 = pt.y.floor();
                Cell {
                    x0: in_range(fx0, width),
                    x1: in_range(fx0 + 1.0, width),
                    y0: in_range(fy0, height),
                    y1: in_range(fy0 + 1.0, height),
                    fx: pt.x - fx0,
                    fy: pt.y - fy0,
                    live_x: true,
                    live_y: true,
                }
            }
        }
    }

    #[inline]
    fn corners(&self, img: &Image, c: usize) -> [f64; 4] {
        let at = |x: Option<usize>, y: Option<usize>| match (x, y) {
            (Some(x), Some(y)) => img.get(x, y, c),
            _ => 0.0,
        };
        [
            at(self.x0, self.y0),
            at(self.x1, self.y0),
            at(self.x0, self.y1),
            at(self.x1, self.y1),
        ]
    }

    #[inline]
    pub(crate) fn sample(&self, img: &Image, c: usize) -> f64 {
        let [v00, v10, v01, v11] = self.corners(img, c);
        let top = v00 + self.fx * (v10 - v00);
        let bottom = v01 + self.fx * (v11 - v01);
        top + self.fy * (bottom - top)
    }

    #[inline]
    pub(crate) fn grad(&self, img: &Image, c: usize) -> (f64, f64) {
        let [v00, v10, v01, v11] = self.corners(img, c);
        let gx = if self.live_x {
            let a = v10 - v00;
            a + self.fy * ((v11 - v01) - a)
        } else {
            0.0
        };
        let gy = if self.live_y {
            let a = v01 - v00;
            a + self.fx * ((v11 - v10) - a)
        } else {
            0.0
        };
        (gx, gy)
    }

    /// Lattice neighbors with their bilinear weights, skipping ones outside
    /// the raster.
    pub(crate) fn taps(&self) -> impl Iterator<Item = (usize, usize, f64)> {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.x0, self.y0, (1.0 - fx) * (1.0 - fy)),
            (self.x1, self.y0, fx * (1.0 - fy)),
            (self.x0, self.y1, (1.0 - fx) * fy),
            (self.x1, self.y1, fx * fy),
        ]
        .into_iter()
        .filter_map(|(x, y, w)| Some((x?, y?, w)))
    }
}

/// Bilinear interpolation of channel `c` at `pt`.
pub fn bilinear_sample(img: &Image, pt: SamplePoint, c: usize, mode: BoundaryMode) -> f64 {
    Cell::locate(img.width(), img.height(), pt, mode).sample(img, c)
}

/// Derivative of [`bilinear_sample`] with respect to `(x, y)`.
///
/// On lattice lines the derivative of the cell at `(floor(x), floor(y))` is
/// returned. With [`BoundaryMode::ClampToEdge`] the derivative is zero along
/// any axis whose coordinate was clamped.
pub fn bilinear_grad(img: &Image, pt: SamplePoint, c: usize, mode: BoundaryMode) -> (f64, f64) {
    Cell::locate(img.width(), img.height(), pt, mode).grad(img, c)
}

/// Backward warp: `out(x, y) = img(x + dx, y + dy)`.
pub fn warp(img: &Image, displacement: &FlowMap, mode: BoundaryMode) -> Result<Image> {
    if displacement.height() != img.height() || displacement.width() != img.width() {
        return Err(Error::Dimension(format!(
            "flow is {}x{}, image is {}x{}",
            displacement.height(),
            displacement.width(),
            img.height(),
            img.width()
        )));
    }
    Ok(warp_with(img, displacement.data(), mode))
}

// `disp` is `[row][col][(dx, dy)]` matching the image size.
pub(crate) fn warp_with(img: &Image, disp: &[f64], mode: BoundaryMode) -> Image {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut out = vec![0.0; h * w * ch];
    out.par_chunks_mut(w * ch)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let i = (y * w + x) * 2;
                let pt = SamplePoint::new(x as f64 + disp[i], y as f64 + disp[i + 1]);
                let cell = Cell::locate(w, h, pt, mode);
                for c in 0..ch {
                    row[x * ch + c] = cell.sample(img, c);
                }
            }
        });
    Image::from_parts(h, w, ch, out)
}
