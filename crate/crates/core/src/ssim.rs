//! Structural similarity on `[0, 1]` images.
//!
//! Statistics use an 11x11 Gaussian window (σ = 1.5) evaluated at every
//! fully-contained window position ("valid" filtering). Multi-scale SSIM
//! pools contrast-structure terms over dyadic 2x2 mean-pooled scales and
//! the luminance term at the coarsest one.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Per-scale exponents for up to five scales.
pub const MS_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable valid correlation of an `h x w` plane with the window.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| g[k] * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-grid map back to `h x w`.
fn filter_valid_adjoint(map: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for k in 0..WINDOW {
                tmp[(y + k) * ow + x] += g[k] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for k in 0..WINDOW {
                out[y * w + x + k] += g[k] * v;
            }
        }
    }
    out
}

fn channel_plane(img: &Image, c: usize) -> Vec<f64> {
    img.data()
        .iter()
        .skip(c)
        .step_by(img.channels())
        .copied()
        .collect()
}

struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> Moments {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    Moments {
        mu_x: filter_valid(x, h, w, g),
        mu_y: filter_valid(y, h, w, g),
        exx: filter_valid(&sq(x, x), h, w, g),
        eyy: filter_valid(&sq(y, y), h, w, g),
        exy: filter_valid(&sq(x, y), h, w, g),
    }
}

/// Mean SSIM and mean contrast-structure term over all channels and
/// window positions of one scale.
fn scale_stats(a: &Image, b: &Image, g: &[f64; WINDOW]) -> (f64, f64) {
    let (h, w) = (a.height(), a.width());
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let m = moments(&channel_plane(a, c), &channel_plane(b, c), h, w, g);
        for i in 0..m.mu_x.len() {
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            let sxx = m.exx[i] - mx * mx;
            let syy = m.eyy[i] - my * my;
            let sxy = m.exy[i] - mx * my;
            let cs = (2.0 * sxy + C2) / (sxx + syy + C2);
            let l = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
            ssim_sum += l * cs;
            cs_sum += cs;
            count += 1;
        }
    }
    (ssim_sum / count as f64, cs_sum / count as f64)
}

/// Largest usable scale count for an image of this size.
pub fn max_scales(height: usize, width: usize) -> usize {
    let mut m = height.min(width);
    let mut scales = 0;
    while m >= WINDOW && scales < MS_WEIGHTS.len() {
        scales += 1;
        m /= 2;
    }
    scales
}

fn check_scales(a: &Image, scales: usize) -> Result<()> {
    let min_dim = a.height().min(a.width());
    if scales == 0 || scales > MS_WEIGHTS.len() || min_dim < (1 << (scales - 1)) * WINDOW {
        return Err(Error::TooSmallForScales {
            width: a.width(),
            height: a.height(),
            scales,
        });
    }
    Ok(())
}

/// Multi-scale SSIM. With one scale this is plain mean SSIM, bounded in
/// `(-1, 1]`. With more scales, negative per-scale terms are floored at 0
/// before exponentiation and the exponents are renormalized to sum to 1.
pub fn ms_ssim(a: &Image, b: &Image, scales: usize) -> Result<f64> {
    a.check_same_shape(b, "ms-ssim inputs")?;
    check_scales(a, scales)?;
    let g = gaussian_window();
    if scales == 1 {
        return Ok(scale_stats(a, b, &g).0);
    }
    let total: f64 = MS_WEIGHTS[..scales].iter().sum();
    let mut value = 1.0;
    let (mut a, mut b) = (a.clone(), b.clone());
    for (s, &weight) in MS_WEIGHTS[..scales].iter().enumerate() {
        let (ssim, cs) = scale_stats(&a, &b, &g);
        let term = if s + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(weight / total);
        if s + 1 < scales {
            a = a.downsample2()?;
            b = b.downsample2()?;
        }
    }
    Ok(value)
}

/// `1 - MS-SSIM`.
pub fn msssim_loss(b_hat: &Image, b: &Image, scales: usize) -> Result<f64> {
    Ok(1.0 - ms_ssim(b_hat, b, scales)?)
}

/// Single-scale mean SSIM.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ms_ssim(a, b, 1)
}

/// Single-scale mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Image, y: &Image) -> Result<(f64, Image)> {
    x.check_same_shape(y, "ssim inputs")?;
    check_scales(x, 1)?;
    let g = gaussian_window();
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let positions = (h - WINDOW + 1) * (w - WINDOW + 1);
    let count = (positions * ch) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; h * w * ch];
    for c in 0..ch {
        let xp = channel_plane(x, c);
        let yp = channel_plane(y, c);
        let m = moments(&xp, &yp, h, w, &g);
        let mut d_mu = vec![0.0; positions];
        let mut d_exx = vec![0.0; positions];
        let mut d_exy = vec![0.0; positions];
        for i in 0..positions {
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (m.exy[i] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (m.exx[i] - mx * mx) + (m.eyy[i] - my * my) + C2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            total += s;
            d_mu[i] = (2.0 * my * a2 - 2.0 * my * a1) / den - s * 2.0 * mx / b1 + s * 2.0 * mx / b2;
            d_exx[i] = -s / b2;
            d_exy[i] = 2.0 * a1 / den;
        }
        let t_mu = filter_valid_adjoint(&d_mu, h, w, &g);
        let t_xx = filter_valid_adjoint(&d_exx, h, w, &g);
        let t_xy = filter_valid_adjoint(&d_exy, h, w, &g);
        for q in 0..h * w {
            grad[q * ch + c] = (t_mu[q] + 2.0 * xp[q] * t_xx[q] + yp[q] * t_xy[q]) / count;
        }
    }
    Ok((total / count, Image::from_parts(h, w, ch, grad)))
}
