//! Raster and displacement-field containers plus PNG I/O.
//!
//! Coordinates: `x` indexes columns rightward, `y` indexes rows downward.
//! A displacement `(dx, dy)` stored at output pixel `(x, y)` means the
//! output samples the source at `(x + dx, y + dy)` (backward warping).
//! Displacements are always stored `dx` first.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageError, ImageFormat};

use crate::error::{Error, Result};

/// How sampling treats coordinates that fall outside the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryMode {
    /// Clamp the sampling coordinate into the raster before interpolating.
    #[default]
    ClampToEdge,
    /// Lattice neighbors outside the raster contribute zero.
    ZeroOutside,
}

/// Row-major, channel-interleaved floating-point raster.
///
/// Photographs live in `[0, 1]` (gamma-encoded, no linearization). The same
/// container also carries gradients and feature maps, so the range is only
/// enforced at the file boundary; any channel count `>= 1` is accepted in
/// memory while PNG I/O handles 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::TooSmall { width, height });
        }
        if channels == 0 {
            return Err(Error::Dimension("image needs at least one channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "expected {} samples for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("image contains non-finite samples".into()));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds an image by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    // Internal constructor for kernels that already guarantee the invariants.
    pub(crate) fn from_parts(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Number of samples in one raster row.
    #[inline]
    pub fn row_len(&self) -> usize {
        self.width * self.channels
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Replicates a single-channel image into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.height * self.width * 3);
        for px in self.data.chunks_exact(self.channels) {
            data.extend_from_slice(&[px[0]; 3]);
        }
        Image::from_parts(self.height, self.width, 3, data)
    }

    /// 2x2 mean pooling. Odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Result<Image> {
        let (h, w) = (self.height / 2, self.width / 2);
        if h < 2 || w < 2 {
            return Err(Error::TooSmall {
                width: w,
                height: h,
            });
        }
        let ch = self.channels;
        let mut data = Vec::with_capacity(h * w * ch);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let s = self.get(2 * x, 2 * y, c)
                        + self.get(2 * x + 1, 2 * y, c)
                        + self.get(2 * x, 2 * y + 1, c)
                        + self.get(2 * x + 1, 2 * y + 1, c);
                    data.push(0.25 * s);
                }
            }
        }
        Ok(Image::from_parts(h, w, ch, data))
    }
}

/// Single displacement vector per pixel, `[row][col][(dx, dy)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::Dimension(format!(
                "flow map {height}x{width} needs {} values, got {}",
                height * width * 2,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("flow map contains non-finite values".into()));
        }
        Ok(FlowMap {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowMap {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| [dx, dy]).collect();
        Self::new(height, width, data)
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * 2);
        FlowMap {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn vectors(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.data.chunks_exact(2).map(|v| (v[0], v[1]))
    }

    pub fn negated(&self) -> FlowMap {
        FlowMap::from_parts(
            self.height,
            self.width,
            self.data.iter().map(|v| -v).collect(),
        )
    }
}

/// Per-pixel, per-timestep displacements `[n][row][col][(dx, dy)]`.
///
/// The step count is odd so the mid-exposure index `(N - 1) / 2` exists.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    n_steps: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl OffsetField {
    pub fn new(n_steps: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if n_steps % 2 == 0 {
            return Err(Error::EvenStepCount(n_steps));
        }
        if data.len() != n_steps * height * width * 2 {
            return Err(Error::Dimension(format!(
                "offset field {n_steps}x{height}x{width} needs {} values, got {}",
                n_steps * height * width * 2,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("offset field contains non-finite values".into()));
        }
        Ok(OffsetField {
            n_steps,
            height,
            width,
            data,
        })
    }

    pub fn zeros(n_steps: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(n_steps, height, width, vec![0.0; n_steps * height * width * 2])
    }

    pub(crate) fn from_parts(n_steps: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n_steps * height * width * 2);
        OffsetField {
            n_steps,
            height,
            width,
            data,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, x: usize, y: usize) -> (f64, f64) {
        let i = ((n * self.height + y) * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// All displacements for one timestep, `[row][col][(dx, dy)]`.
    pub fn step(&self, n: usize) -> &[f64] {
        let len = self.height * self.width * 2;
        &self.data[n * len..(n + 1) * len]
    }

    /// Extracts timestep `n` as a flow map.
    pub fn step_flow(&self, n: usize) -> FlowMap {
        FlowMap::from_parts(self.height, self.width, self.step(n).to_vec())
    }

    /// Largest displacement magnitude over the whole field.
    pub fn max_magnitude(&self) -> f64 {
        self.data
            .chunks_exact(2)
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_matches(&self, img: &Image) -> Result<()> {
        if self.height == img.height() && self.width == img.width() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "offset field is {}x{}, image is {}x{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            )))
        }
    }
}

/// Loads an 8-bit grayscale or RGB raster, mapping bytes to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| map_image_error(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::Format(format!(
                "{}: only 8-bit grayscale or RGB supported, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    if h < 2 || w < 2 {
        return Err(Error::TooSmall {
            width: w,
            height: h,
        });
    }
    let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Ok(Image::from_parts(h, w, channels, data))
}

/// Quantizes one sample: clamp to `[0, 1]`, scale by 255, round half away from zero.
#[inline]
pub fn quantize(sample: f64) -> u8 {
    (sample.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG (1 channel grayscale, 3 channels RGB).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => ColorType::L8,
        3 => ColorType::Rgb8,
        c => {
            return Err(Error::Format(format!(
                "cannot write {c}-channel image as PNG"
            )))
        }
    };
    let bytes: Vec<u8> = img.data().iter().copied().map(quantize).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| map_image_error(path, e))
}

fn map_image_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::IoError(e) => Error::io(path, e),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}
