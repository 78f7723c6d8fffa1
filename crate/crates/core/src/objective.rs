//! Reblur objective and its gradient with respect to trajectory parameters.
//!
//! `L = L2 + λ_ssim · L_ssim + λ_reg · L_reg + λ_tv · L_tv`, evaluated at
//! `B̂ = create_blur(sharp, expand(traj, N))`.

use crate::blur::{blur_grad_wrt_offsets, create_blur, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::image::{BoundaryMode, Image, OffsetField};
use crate::ssim;
use crate::trajectory::{expand, params_gradient, TrajectoryField};

pub use crate::ssim::msssim_loss;

/// Loss weights; defaults are λ_ssim = 0.1, λ_reg = 2e-5, λ_tv = 5e-4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_reg: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: 0.1,
            lambda_reg: 0.00002,
            lambda_tv: 0.0005,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_ssim: f64, lambda_reg: f64, lambda_tv: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_ssim,
            lambda_reg,
            lambda_tv,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_reg", self.lambda_reg),
            ("lambda_tv", self.lambda_tv),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean squared difference and its gradient with respect to `b_hat`.
pub fn l2_loss(b_hat: &Image, b: &Image) -> Result<(f64, Image)> {
    b_hat.check_same_shape(b, "l2 inputs")?;
    let count = b.len() as f64;
    let mut sum = 0.0;
    let grad = b_hat
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| {
            let d = p - q;
            sum += d * d;
            2.0 * d / count
        })
        .collect();
    Ok((
        sum / count,
        Image::from_parts(b.height(), b.width(), b.channels(), grad),
    ))
}

/// Mean squared offset magnitude over all steps and pixels.
pub fn reg_loss(offsets: &OffsetField) -> (f64, OffsetField) {
    let k = (offsets.n_steps() * offsets.height() * offsets.width()) as f64;
    let value = offsets.data().iter().map(|v| v * v).sum::<f64>() / k;
    let grad = offsets.data().iter().map(|v| 2.0 * v / k).collect();
    (
        value,
        OffsetField::from_parts(offsets.n_steps(), offsets.height(), offsets.width(), grad),
    )
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Anisotropic L1 total variation of each step's offset map, both offset
/// components, horizontal differences normalized by `(w-1)h` and vertical
/// ones by `w(h-1)`, averaged over steps. A direction with no neighbor
/// pairs (single row or column) contributes nothing.
pub fn tv_loss(offsets: &OffsetField) -> Result<(f64, OffsetField)> {
    let (n, h, w) = (offsets.n_steps(), offsets.height(), offsets.width());
    if h * w < 2 {
        return Err(Error::Dimension(format!(
            "total variation needs at least two pixels, field is {h}x{w}"
        )));
    }
    let hz = if w > 1 { 1.0 / ((w - 1) * h) as f64 } else { 0.0 };
    let vt = if h > 1 { 1.0 / (w * (h - 1)) as f64 } else { 0.0 };
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; offsets.data().len()];
    for s in 0..n {
        let m = offsets.step(s);
        let base = s * h * w * 2;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * 2;
                for c in 0..2 {
                    if x + 1 < w {
                        let d = m[i + c] - m[i + 2 + c];
                        value += hz * d.abs();
                        let g = hz * sign(d) * inv_n;
                        grad[base + i + c] += g;
                        grad[base + i + 2 + c] -= g;
                    }
                    if y + 1 < h {
                        let j = i + 2 * w;
                        let d = m[i + c] - m[j + c];
                        value += vt * d.abs();
                        let g = vt * sign(d) * inv_n;
                        grad[base + i + c] += g;
                        grad[base + j + c] -= g;
                    }
                }
            }
        }
    }
    Ok((value * inv_n, OffsetField::from_parts(n, h, w, grad)))
}

/// Everything the total objective needs besides the images and parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub n_steps: usize,
    pub weights: LossWeights,
    pub boundary: BoundaryMode,
    /// Scale count for the MS-SSIM term; reduced automatically when the
    /// image is too small, and the term dropped when not even one fits.
    pub ssim_scales: usize,
    /// When set, the SSIM term is single-scale and differentiated;
    /// otherwise it only contributes to the reported value.
    pub ssim_gradient: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            n_steps: DEFAULT_STEPS,
            weights: LossWeights::default(),
            boundary: BoundaryMode::ClampToEdge,
            ssim_scales: 3,
            ssim_gradient: false,
        }
    }
}

/// Value of each loss term plus the parameter gradient.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub total: f64,
    pub l2: f64,
    pub ssim: f64,
    pub reg: f64,
    pub tv: f64,
    /// Same layout as [`TrajectoryField::params`].
    pub grad: Vec<f64>,
    pub reblurred: Image,
}

/// Evaluates the weighted objective and its gradient with respect to the
/// trajectory parameters.
pub fn total_loss(
    sharp: &Image,
    blurry: &Image,
    traj: &TrajectoryField,
    cfg: &ObjectiveConfig,
) -> Result<LossEval> {
    sharp.check_same_shape(blurry, "sharp vs blurry")?;
    if traj.height() != sharp.height() || traj.width() != sharp.width() {
        return Err(Error::Dimension(format!(
            "trajectory is {}x{}, images are {}x{}",
            traj.height(),
            traj.width(),
            sharp.height(),
            sharp.width()
        )));
    }
    cfg.weights.validate()?;
    let offsets = expand(traj, cfg.n_steps)?;
    let b_hat = create_blur(sharp, &offsets, cfg.boundary)?;
    let (l2, mut upstream) = l2_loss(&b_hat, blurry)?;

    let w = cfg.weights;
    let ssim_term = if w.lambda_ssim == 0.0 {
        0.0
    } else if cfg.ssim_gradient {
        if ssim::max_scales(sharp.height(), sharp.width()) == 0 {
            0.0
        } else {
            let (s, g) = ssim::ssim_with_grad(&b_hat, blurry)?;
            let mut up = upstream.into_data();
            for (u, gv) in up.iter_mut().zip(g.data()) {
                *u -= w.lambda_ssim * gv;
            }
            upstream = Image::from_parts(sharp.height(), sharp.width(), sharp.channels(), up);
            1.0 - s
        }
    } else {
        let scales = cfg
            .ssim_scales
            .min(ssim::max_scales(sharp.height(), sharp.width()));
        if scales == 0 {
            0.0
        } else {
            ssim::msssim_loss(&b_hat, blurry, scales)?
        }
    };

    let (reg, reg_grad) = reg_loss(&offsets);
    let (tv, tv_grad) = tv_loss(&offsets)?;
    let mut grad_off = blur_grad_wrt_offsets(sharp, &offsets, &upstream, cfg.boundary)?.into_data();
    for ((g, r), t) in grad_off.iter_mut().zip(reg_grad.data()).zip(tv_grad.data()) {
        *g += w.lambda_reg * r + w.lambda_tv * t;
    }
    let grad_off = OffsetField::from_parts(cfg.n_steps, sharp.height(), sharp.width(), grad_off);
    let grad = params_gradient(traj, &grad_off);

    Ok(LossEval {
        total: l2 + w.lambda_ssim * ssim_term + w.lambda_reg * reg + w.lambda_tv * tv,
        l2,
        ssim: ssim_term,
        reg,
        tv,
        grad,
        reblurred: b_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ConstraintMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_ok(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-12
    }

    #[test]
    fn l2_examples() {
        let b = Image::from_fn(4, 4, 1, |x, y, _| (x + y) as f64 / 10.0).unwrap();
        let (v, g) = l2_loss(&b, &b).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
        let shifted = Image::new(4, 4, 1, b.data().iter().map(|v| v + 0.1).collect()).unwrap();
        let (v, _) = l2_loss(&shifted, &b).unwrap();
        assert!((v - 0.01).abs() < 1e-15);
    }

    #[test]
    fn l2_gradient_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let a = Image::from_fn(5, 6, 2, |_, _, _| rng.gen()).unwrap();
        let b = Image::from_fn(5, 6, 2, |_, _, _| rng.gen()).unwrap();
        let (_, g) = l2_loss(&a, &b).unwrap();
        let h = 1e-4;
        for idx in 0..a.len() {
            let mut p = a.data().to_vec();
            p[idx] += h;
            let mut m = a.data().to_vec();
            m[idx] -= h;
            let f = |d: Vec<f64>| l2_loss(&Image::new(5, 6, 2, d).unwrap(), &b).unwrap().0;
            let fd = (f(p) - f(m)) / (2.0 * h);
            assert!(rel_ok(g.data()[idx], fd, 1e-5));
        }
    }

    #[test]
    fn reg_examples() {
        let zero = OffsetField::zeros(3, 4, 5).unwrap();
        assert_eq!(reg_loss(&zero).0, 0.0);
        let mut d = vec![0.0; 3 * 4 * 5 * 2];
        d[14] = 3.0;
        d[15] = 4.0;
        let f = OffsetField::new(3, 4, 5, d).unwrap();
        assert_eq!(reg_loss(&f).0, 25.0 / 60.0);
    }

    #[test]
    fn tv_examples() {
        let f = OffsetField::new(1, 1, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(tv_loss(&f).unwrap().0, 1.0);
        let c = OffsetField::new(3, 3, 3, [1.5, -2.0].repeat(27)).unwrap();
        let (v, g) = tv_loss(&c).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
        assert!(tv_loss(&OffsetField::zeros(1, 1, 1).unwrap()).is_err());
    }

    #[test]
    fn tv_gradient_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..3 * 4 * 5 * 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = OffsetField::new(3, 4, 5, data.clone()).unwrap();
        let (_, g) = tv_loss(&f).unwrap();
        // piecewise linear, so a larger step has no truncation error
        let h = 1e-4;
        for idx in 0..data.len() {
            let mut p = data.clone();
            p[idx] += h;
            let mut m = data.clone();
            m[idx] -= h;
            let eval = |d: Vec<f64>| tv_loss(&OffsetField::new(3, 4, 5, d).unwrap()).unwrap().0;
            let fd = (eval(p) - eval(m)) / (2.0 * h);
            let a = g.data()[idx];
            assert!((a - fd).abs() <= 1e-3 * a.abs().max(fd.abs()) + 1e-9, "{a} vs {fd}");
        }
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let sharp = Image::from_fn(24, 24, 3, |_, _, _| rng.gen()).unwrap();
        for mode in [
            ConstraintMode::ZeroConstraint,
            ConstraintMode::Linear,
            ConstraintMode::BdLinear,
            ConstraintMode::Quadratic,
        ] {
            let traj = TrajectoryField::zeros(mode, 15, 24, 24).unwrap();
            let e = total_loss(&sharp, &sharp, &traj, &ObjectiveConfig::default()).unwrap();
            assert!(e.total.abs() < 1e-12, "{mode:?}: {}", e.total);
            assert!(e.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_ssim, w.lambda_reg, w.lambda_tv), (0.1, 2e-5, 5e-4));
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ssim_gradient_flag_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (h, w) = (14, 14);
        let sharp = Image::from_fn(h, w, 1, |x, y, _| {
            0.5 + 0.3 * ((x as f64) * 0.7).sin() * ((y as f64) * 0.4).cos()
        })
        .unwrap();
        let blurry = Image::from_fn(h, w, 1, |_, _, _| rng.gen_range(0.3..0.7)).unwrap();
        let params: Vec<f64> = (0..h * w * 2).map(|_| rng.gen_range(-1.3..1.3)).collect();
        let traj = TrajectoryField::new(ConstraintMode::Linear, 5, h, w, params.clone()).unwrap();
        let cfg = ObjectiveConfig {
            n_steps: 5,
            weights: LossWeights::new(1.0, 0.0, 0.0).unwrap(),
            ssim_gradient: true,
            ..Default::default()
        };
        let e = total_loss(&sharp, &blurry, &traj, &cfg).unwrap();
        let gmax = e.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let step = 1e-6;
        for idx in (0..params.len()).step_by(5) {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p[idx] += delta;
                let t = TrajectoryField::new(ConstraintMode::Linear, 5, h, w, p).unwrap();
                total_loss(&sharp, &blurry, &t, &cfg).unwrap().total
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            // finite differences of an O(1) loss bottom out near 1e-10
            let a = e.grad[idx];
            assert!((a - fd).abs() <= 1e-3 * a.abs().max(fd.abs()) + 1e-4 * gmax, "{a} vs {fd}");
        }
    }
}
