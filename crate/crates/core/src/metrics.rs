//! Reconstruction quality and motion accuracy metrics.
//!
//! Motion metrics take the per-pixel minimum over `est - gt` and `est + gt`:
//! a single blurry image does not fix the temporal direction of its motion.

use crate::error::{Error, Result};
use crate::image::{FlowMap, Image};

pub use crate::ssim::ssim;

/// `10 log10(1 / MSE)` on the `[0, 1]` range; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr inputs")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

fn check_flows(est: &FlowMap, gt: &FlowMap) -> Result<()> {
    if est.height() == gt.height() && est.width() == gt.width() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "flow maps {}x{} vs {}x{}",
            est.height(),
            est.width(),
            gt.height(),
            gt.width()
        )))
    }
}

fn sign_ambiguous_sq(e: (f64, f64), g: (f64, f64)) -> f64 {
    let minus = (e.0 - g.0).powi(2) + (e.1 - g.1).powi(2);
    let plus = (e.0 + g.0).powi(2) + (e.1 + g.1).powi(2);
    minus.min(plus)
}

/// Mean over pixels of `min(|est - gt|², |est + gt|²)`, in px².
pub fn motion_mse(est: &FlowMap, gt: &FlowMap) -> Result<f64> {
    check_flows(est, gt)?;
    let n = (est.height() * est.width()) as f64;
    Ok(est
        .vectors()
        .zip(gt.vectors())
        .map(|(e, g)| sign_ambiguous_sq(e, g))
        .sum::<f64>()
        / n)
}

/// Mean over pixels of `min(|est - gt|, |est + gt|)`, in px.
pub fn endpoint_error(est: &FlowMap, gt: &FlowMap) -> Result<f64> {
    check_flows(est, gt)?;
    let n = (est.height() * est.width()) as f64;
    Ok(est
        .vectors()
        .zip(gt.vectors())
        .map(|(e, g)| sign_ambiguous_sq(e, g).sqrt())
        .sum::<f64>()
        / n)
}
