//! Trajectory recovery from a blurry/sharp pair.
//!
//! The per-pixel trajectory parameters are optimized directly against the
//! reblur objective with Adam, coarse to fine over a 2x mean-pooled
//! pyramid. Between levels the parameters are bilinearly upsampled and
//! their displacement values doubled. The learning rate decays linearly to
//! zero within each level.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blur::{create_blur, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::image::{BoundaryMode, Image};
use crate::metrics::psnr;
use crate::objective::{total_loss, LossWeights, ObjectiveConfig};
use crate::optim::Adam;
use crate::sampler::{Cell, SamplePoint};
use crate::ssim;
use crate::trajectory::{check_steps, expand, ConstraintMode, TrajectoryField};

/// Coarsest pyramid level must keep both dimensions at least this large.
const MIN_LEVEL_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub mode: ConstraintMode,
    pub n_steps: usize,
    pub weights: LossWeights,
    pub boundary: BoundaryMode,
    /// Adam iterations per pyramid level.
    pub iterations: usize,
    /// Initial learning rate in pixels on the coarsest level.
    pub step_size: f64,
    /// Factor applied to the step size per level below the coarsest.
    pub level_step_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub pyramid_levels: usize,
    /// Picks the direction of the initial displacement.
    pub seed: u64,
    /// Magnitude (coarsest-level pixels) of the initial displacement. The
    /// symmetric modes have an exactly stationary point at zero motion, so
    /// a small deterministic kick is needed to leave it.
    pub init_magnitude: f64,
    /// Initial directions tried on the coarsest level, in the linear
    /// family; the start with the lowest loss there seeds the requested
    /// family and is refined on every level.
    pub init_directions: usize,
    pub ssim_scales: usize,
    /// Differentiate a single-scale SSIM term on the coarse levels.
    pub ssim_gradient: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            mode: ConstraintMode::Linear,
            n_steps: DEFAULT_STEPS,
            weights: LossWeights::default(),
            boundary: BoundaryMode::ClampToEdge,
            iterations: 500,
            step_size: 0.1,
            level_step_scale: 0.25,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            pyramid_levels: 3,
            seed: 0,
            init_magnitude: 0.25,
            init_directions: 4,
            ssim_scales: 3,
            ssim_gradient: false,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        check_steps(self.n_steps)?;
        self.weights.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.init_directions == 0 {
            return Err(Error::InvalidArgument("init_directions must be >= 1".into()));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidArgument("pyramid_levels must be >= 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.level_step_scale.is_finite() && self.level_step_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "level step scale must be positive, got {}",
                self.level_step_scale
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !self.init_magnitude.is_finite() || self.init_magnitude < 0.0 {
            return Err(Error::InvalidArgument(
                "epsilon must be > 0 and init magnitude >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub final_loss: f64,
    /// Loss per iteration, coarse to fine; on the coarsest level only the
    /// start that was kept is recorded.
    pub loss_trace: Vec<f64>,
    pub reblur_psnr: f64,
    pub reblur_ssim: f64,
    pub iterations_run: usize,
}

impl RecoveryReport {
    /// `key: value` header lines followed by one loss value per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "final_loss: {}", self.final_loss);
        let _ = writeln!(s, "reblur_psnr: {}", self.reblur_psnr);
        let _ = writeln!(s, "reblur_ssim: {}", self.reblur_ssim);
        let _ = writeln!(s, "iterations_run: {}", self.iterations_run);
        for l in &self.loss_trace {
            let _ = writeln!(s, "{l}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Expands `traj` to `n_steps` and renders the blur.
pub fn reblur(sharp: &Image, traj: &TrajectoryField, n_steps: usize, mode: BoundaryMode) -> Result<Image> {
    create_blur(sharp, &expand(traj, n_steps)?, mode)
}

// Start `k` of `cfg.init_directions`: a seeded base angle rotated by k/K of
// a half turn (a full turn would revisit sign-flipped, equivalent starts).
fn initial_linear(cfg: &RecoveryConfig, k: usize, h: usize, w: usize) -> Result<TrajectoryField> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let angle = base + std::f64::consts::PI * k as f64 / cfg.init_directions as f64;
    let (dx, dy) = (cfg.init_magnitude * angle.cos(), cfg.init_magnitude * angle.sin());
    TrajectoryField::uniform(ConstraintMode::Linear, cfg.n_steps, h, w, &[dx, dy])
}

/// Re-expresses a linear field exactly in another constraint family.
fn embed_linear(lin: &TrajectoryField, mode: ConstraintMode) -> Result<TrajectoryField> {
    let (h, w, n) = (lin.height(), lin.width(), lin.n_steps());
    let params: Vec<f64> = match mode {
        ConstraintMode::Linear => return Ok(lin.clone()),
        ConstraintMode::BdLinear | ConstraintMode::Quadratic => lin
            .params()
            .chunks_exact(2)
            .flat_map(|d| [d[0], d[1], -d[0], -d[1]])
            .collect(),
        ConstraintMode::ZeroConstraint => return TrajectoryField::from_offsets(&expand(lin, n)?),
    };
    Ok(TrajectoryField::from_parts(mode, n, h, w, params))
}

/// Bilinear 2x upsampling of every parameter channel with displacement
/// values doubled.
fn upsample(traj: &TrajectoryField, height: usize, width: usize) -> TrajectoryField {
    let k = traj.params_per_pixel();
    let (hc, wc) = (traj.height(), traj.width());
    let coarse = Image::from_parts(hc, wc, k, traj.params().to_vec());
    let mut params = Vec::with_capacity(height * width * k);
    for y in 0..height {
        for x in 0..width {
            let pt = SamplePoint::new((x as f64 + 0.5) / 2.0 - 0.5, (y as f64 + 0.5) / 2.0 - 0.5);
            let cell = Cell::locate(wc, hc, pt, BoundaryMode::ClampToEdge);
            for c in 0..k {
                params.push(2.0 * cell.sample(&coarse, c));
            }
        }
    }
    TrajectoryField::from_parts(traj.mode(), traj.n_steps(), height, width, params)
}

fn pyramid(img: &Image, levels: usize) -> Result<Vec<Image>> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.height() / 2 < MIN_LEVEL_SIZE || last.width() / 2 < MIN_LEVEL_SIZE {
            break;
        }
        out.push(last.downsample2()?);
    }
    Ok(out)
}

/// Step size at iteration `it` of a level `depth` levels finer than the
/// coarsest: scaled by `level_step_scale^depth`, then decayed linearly to
/// zero. Upsampled parameters start close to their optimum, and a full
/// step would lift the loss above where it started.
fn learning_rate(cfg: &RecoveryConfig, it: usize, depth: usize) -> f64 {
    cfg.step_size * cfg.level_step_scale.powi(depth as i32) * (1.0 - it as f64 / cfg.iterations as f64)
}

/// Runs one pyramid level of Adam from `init`; returns the parameters, the
/// per-iteration losses and the loss at the returned parameters.
fn optimize_level(
    sharp: &Image,
    blurry: &Image,
    init: TrajectoryField,
    cfg: &RecoveryConfig,
    level: usize,
    depth: usize,
) -> Result<(TrajectoryField, Vec<f64>, f64)> {
    let obj = ObjectiveConfig {
        n_steps: cfg.n_steps,
        weights: cfg.weights,
        boundary: cfg.boundary,
        ssim_scales: cfg.ssim_scales,
        ssim_gradient: cfg.ssim_gradient && level > 0,
    };
    let (h, w) = (sharp.height(), sharp.width());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut params = init.into_params();
    let mut adam = Adam::new(params.len(), cfg.beta1, cfg.beta2, cfg.epsilon);
    for it in 0..cfg.iterations {
        let current = TrajectoryField::from_parts(cfg.mode, cfg.n_steps, h, w, params);
        let eval = total_loss(sharp, blurry, &current, &obj)?;
        if !eval.total.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { level, iteration: it });
        }
        trace.push(eval.total);
        params = current.into_params();
        let lr = learning_rate(cfg, it, depth);
        adam.step(&mut params, &eval.grad, lr);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { level, iteration: it });
        }
    }
    let traj = TrajectoryField::from_parts(cfg.mode, cfg.n_steps, h, w, params);
    let last = total_loss(sharp, blurry, &traj, &obj)?.total;
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss {
            level,
            iteration: cfg.iterations,
        });
    }
    Ok((traj, trace, last))
}

/// Recovers a trajectory field explaining `blurry` as a blur of `sharp`.
pub fn recover(
    blurry: &Image,
    sharp: &Image,
    cfg: &RecoveryConfig,
) -> Result<(TrajectoryField, RecoveryReport)> {
    cfg.validate()?;
    sharp.check_same_shape(blurry, "sharp vs blurry")?;
    let sharp_pyr = pyramid(sharp, cfg.pyramid_levels)?;
    let blurry_pyr = pyramid(blurry, sharp_pyr.len())?;
    let levels = sharp_pyr.len();

    let coarsest = &sharp_pyr[levels - 1];
    let mut trace = Vec::with_capacity(levels * cfg.iterations);
    // The blur direction is searched in the linear family, which every
    // other family contains exactly; the best start is then embedded in the
    // requested family and refined on every level.
    let linear_cfg = RecoveryConfig {
        mode: ConstraintMode::Linear,
        ..cfg.clone()
    };
    let coarse_blurry = &blurry_pyr[levels - 1];
    let mut best: Option<(f64, TrajectoryField, Vec<f64>)> = None;
    for k in 0..cfg.init_directions {
        let init = initial_linear(cfg, k, coarsest.height(), coarsest.width())?;
        let (traj, level_trace, loss) = optimize_level(coarsest, coarse_blurry, init, &linear_cfg, levels - 1, 0)?;
        // ties keep the earlier start so the choice is deterministic
        if best.as_ref().map_or(true, |b| loss < b.0) {
            best = Some((loss, traj, level_trace));
        }
    }
    let (_, linear, linear_trace) = best.expect("at least one start");
    let mut traj = if cfg.mode == ConstraintMode::Linear {
        trace.extend(linear_trace);
        linear
    } else {
        let init = embed_linear(&linear, cfg.mode)?;
        let (t, level_trace, _) = optimize_level(coarsest, coarse_blurry, init, cfg, levels - 1, 0)?;
        trace.extend(level_trace);
        t
    };

    for level in (0..levels - 1).rev() {
        let (s, b) = (&sharp_pyr[level], &blurry_pyr[level]);
        let init = upsample(&traj, s.height(), s.width());
        let (t, level_trace, _) = optimize_level(s, b, init, cfg, level, levels - 1 - level)?;
        traj = t;
        trace.extend(level_trace);
    }

    let obj = ObjectiveConfig {
        n_steps: cfg.n_steps,
        weights: cfg.weights,
        boundary: cfg.boundary,
        ssim_scales: cfg.ssim_scales,
        ssim_gradient: false,
    };
    let eval = total_loss(sharp, blurry, &traj, &obj)?;
    if !eval.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            level: 0,
            iteration: cfg.iterations,
        });
    }
    let reblur_ssim = if ssim::max_scales(sharp.height(), sharp.width()) > 0 {
        ssim::ssim(&eval.reblurred, blurry)?
    } else {
        f64::NAN
    };
    let report = RecoveryReport {
        final_loss: eval.total,
        reblur_psnr: psnr(&eval.reblurred, blurry)?,
        reblur_ssim,
        loss_trace: trace,
        iterations_run: levels * cfg.iterations,
    };
    Ok((traj, report))
}
