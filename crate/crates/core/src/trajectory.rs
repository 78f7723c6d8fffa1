//! Constrained exposure-trajectory parameterizations.
//!
//! Every constrained curve is evaluated on the canonical time parameter
//! `u = 2n / (N - 1) - 1 ∈ [-1, 1]`, with the mid-exposure instant at
//! `u = 0` pinned to zero displacement. Each mode is a linear map from a
//! small per-pixel parameter block to the N displacements:
//!
//! | mode      | params            | displacement at `u`                       |
//! |-----------|-------------------|-------------------------------------------|
//! | Linear    | `d`               | `-u * d`                                  |
//! | BdLinear  | `d1, d2`          | `-u * d1` for `u <= 0`, `u * d2` otherwise |
//! | Quadratic | `d1, d2`          | `(d1 + d2)/2 u² + (d2 - d1)/2 u`          |
//!
//! so `d1` is the displacement at `n = 0` and `d2` the one at `n = N - 1`.
//! The zero-constraint mode stores all N displacements directly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{FlowMap, OffsetField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintMode {
    /// Free per-step offsets.
    ZeroConstraint,
    /// Straight line through the origin, symmetric in time.
    Linear,
    /// Two independent straight half-trajectories.
    BdLinear,
    /// Constant-acceleration curve through the origin.
    Quadratic,
}

impl ConstraintMode {
    /// Parameters stored per pixel.
    pub fn params_per_pixel(self, n_steps: usize) -> usize {
        match self {
            ConstraintMode::ZeroConstraint => 2 * n_steps,
            ConstraintMode::Linear => 2,
            ConstraintMode::BdLinear | ConstraintMode::Quadratic => 4,
        }
    }

    /// Weights `(a, b)` such that the displacement at `u` equals
    /// `a * d1 + b * d2` (`b` is unused by [`ConstraintMode::Linear`]).
    ///
    /// `one_minus_q` is `1 - 2n/(N-1)`, i.e. `-u`, supplied separately so the
    /// linear coefficient is computed without an extra rounding.
    #[inline]
    fn basis(self, u: f64, one_minus_q: f64) -> (f64, f64) {
        match self {
            ConstraintMode::Linear => (one_minus_q, 0.0),
            ConstraintMode::BdLinear => {
                if u <= 0.0 {
                    (one_minus_q, 0.0)
                } else {
                    (0.0, u)
                }
            }
            ConstraintMode::Quadratic => {
                let u2 = u * u;
                (0.5 * (u2 - u), 0.5 * (u2 + u))
            }
            ConstraintMode::ZeroConstraint => unreachable!("zero constraint has no closed form"),
        }
    }
}

/// Time parameter of node `n` out of `steps` equispaced nodes.
#[inline]
fn node(n: usize, steps: usize) -> (f64, f64) {
    let q = (2 * n) as f64 / (steps - 1) as f64;
    (q - 1.0, 1.0 - q)
}

pub fn check_steps(n_steps: usize) -> Result<()> {
    if n_steps < 3 || n_steps % 2 == 0 {
        Err(Error::EvenStepCount(n_steps))
    } else {
        Ok(())
    }
}

/// Per-pixel trajectory parameters plus the constraint family.
///
/// `params` is laid out `[row][col][block]` where the block is
/// `(dx, dy)` for Linear, `(dx1, dy1, dx2, dy2)` for BdLinear/Quadratic and
/// `[n][(dx, dy)]` for the zero-constraint mode. `n_steps` is the nominal
/// step count used when the field is expanded without an explicit count
/// (and the stored count for the zero-constraint mode).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryField {
    mode: ConstraintMode,
    n_steps: usize,
    height: usize,
    width: usize,
    params: Vec<f64>,
}

impl TrajectoryField {
    pub fn new(
        mode: ConstraintMode,
        n_steps: usize,
        height: usize,
        width: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        check_steps(n_steps)?;
        let expected = height * width * mode.params_per_pixel(n_steps);
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "{mode:?} trajectory {height}x{width} needs {expected} params, got {}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("trajectory contains non-finite params".into()));
        }
        Ok(TrajectoryField {
            mode,
            n_steps,
            height,
            width,
            params,
        })
    }

    pub fn zeros(mode: ConstraintMode, n_steps: usize, height: usize, width: usize) -> Result<Self> {
        check_steps(n_steps)?;
        let len = height * width * mode.params_per_pixel(n_steps);
        Self::new(mode, n_steps, height, width, vec![0.0; len])
    }

    /// Same parameter vector reused for every pixel.
    pub fn uniform(
        mode: ConstraintMode,
        n_steps: usize,
        height: usize,
        width: usize,
        block: &[f64],
    ) -> Result<Self> {
        let params = block
            .iter()
            .copied()
            .cycle()
            .take(height * width * block.len())
            .collect();
        Self::new(mode, n_steps, height, width, params)
    }

    /// Linear trajectory whose endpoint-to-endpoint span equals `flow`
    /// (`d = flow / 2`).
    pub fn linear_from_flow(flow: &FlowMap, n_steps: usize) -> Result<Self> {
        let params = flow.data().iter().map(|v| 0.5 * v).collect();
        Self::new(
            ConstraintMode::Linear,
            n_steps,
            flow.height(),
            flow.width(),
            params,
        )
    }

    /// Wraps a raw offset field as a zero-constraint trajectory.
    pub fn from_offsets(field: &OffsetField) -> Result<Self> {
        let (n, h, w) = (field.n_steps(), field.height(), field.width());
        let mut params = vec![0.0; n * h * w * 2];
        for s in 0..n {
            let step = field.step(s);
            for p in 0..h * w {
                params[p * 2 * n + 2 * s] = step[2 * p];
                params[p * 2 * n + 2 * s + 1] = step[2 * p + 1];
            }
        }
        Self::new(ConstraintMode::ZeroConstraint, n, h, w, params)
    }

    pub(crate) fn from_parts(
        mode: ConstraintMode,
        n_steps: usize,
        height: usize,
        width: usize,
        params: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(params.len(), height * width * mode.params_per_pixel(n_steps));
        TrajectoryField {
            mode,
            n_steps,
            height,
            width,
            params,
        }
    }

    pub fn mode(&self) -> ConstraintMode {
        self.mode
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

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn params_per_pixel(&self) -> usize {
        self.mode.params_per_pixel(self.n_steps)
    }

    /// Parameter block of pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let k = self.params_per_pixel();
        let i = (y * self.width + x) * k;
        &self.params[i..i + k]
    }

    /// Copy with a different nominal step count (constrained modes only).
    pub fn with_n_steps(&self, n_steps: usize) -> Result<Self> {
        check_steps(n_steps)?;
        if self.mode == ConstraintMode::ZeroConstraint && n_steps != self.n_steps {
            return Err(Error::StepMismatch {
                stored: self.n_steps,
                requested: n_steps,
            });
        }
        let mut out = self.clone();
        out.n_steps = n_steps;
        Ok(out)
    }

    /// Displacement of pixel `(x, y)` at node `n` of `steps` equispaced nodes.
    pub fn displacement_at(&self, x: usize, y: usize, n: usize, steps: usize) -> (f64, f64) {
        let block = self.pixel(x, y);
        match self.mode {
            ConstraintMode::ZeroConstraint => (block[2 * n], block[2 * n + 1]),
            mode => eval_block(mode, block, n, steps),
        }
    }
}

#[inline]
fn eval_block(mode: ConstraintMode, block: &[f64], n: usize, steps: usize) -> (f64, f64) {
    let (u, one_minus_q) = node(n, steps);
    let (a, b) = mode.basis(u, one_minus_q);
    match mode {
        ConstraintMode::Linear => (a * block[0], a * block[1]),
        _ => (a * block[0] + b * block[2], a * block[1] + b * block[3]),
    }
}

fn evaluate(traj: &TrajectoryField, steps: usize) -> OffsetField {
    let (h, w) = (traj.height, traj.width);
    let k = traj.params_per_pixel();
    let plane = h * w * 2;
    let mut data = vec![0.0; steps * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(n, out)| {
        for (p, block) in traj.params.chunks_exact(k).enumerate() {
            let (dx, dy) = match traj.mode {
                ConstraintMode::ZeroConstraint => (block[2 * n], block[2 * n + 1]),
                mode => eval_block(mode, block, n, steps),
            };
            out[2 * p] = dx;
            out[2 * p + 1] = dy;
        }
    });
    OffsetField::from_parts(steps, h, w, data)
}

/// Expands a trajectory into an `n_steps`-step offset field.
pub fn expand(traj: &TrajectoryField, n_steps: usize) -> Result<OffsetField> {
    check_steps(n_steps)?;
    if traj.mode == ConstraintMode::ZeroConstraint && n_steps != traj.n_steps {
        return Err(Error::StepMismatch {
            stored: traj.n_steps,
            requested: n_steps,
        });
    }
    Ok(evaluate(traj, n_steps))
}

/// Evaluates the closed-form curve at `m_steps` equispaced times.
///
/// Unlike [`expand`], this is unavailable for the zero-constraint mode,
/// which has no continuous curve to resample.
pub fn resample(traj: &TrajectoryField, m_steps: usize) -> Result<OffsetField> {
    if traj.mode == ConstraintMode::ZeroConstraint {
        return Err(Error::UnsupportedMode(traj.mode));
    }
    check_steps(m_steps)?;
    Ok(evaluate(traj, m_steps))
}

/// First-minus-last displacement per pixel: the single motion vector that
/// summarizes a trajectory.
pub fn endpoint_flow(traj: &TrajectoryField) -> FlowMap {
    let n = traj.n_steps;
    let k = traj.params_per_pixel();
    let data = traj
        .params
        .chunks_exact(k)
        .flat_map(|block| match traj.mode {
            ConstraintMode::ZeroConstraint => {
                [block[0] - block[2 * n - 2], block[1] - block[2 * n - 1]]
            }
            ConstraintMode::Linear => [2.0 * block[0], 2.0 * block[1]],
            _ => [block[0] - block[2], block[1] - block[3]],
        })
        .collect();
    FlowMap::from_parts(traj.height, traj.width, data)
}

/// Adjoint of the per-pixel expansion: maps a gradient over the N
/// displacements of one pixel (`[n][(gx, gy)]`) to a gradient over that
/// pixel's parameters.
pub fn param_jacobian_apply(
    mode: ConstraintMode,
    n_steps: usize,
    grad_offsets: &[f64],
) -> Result<Vec<f64>> {
    check_steps(n_steps)?;
    if grad_offsets.len() != 2 * n_steps {
        return Err(Error::Dimension(format!(
            "expected {} offset gradients, got {}",
            2 * n_steps,
            grad_offsets.len()
        )));
    }
    let mut out = vec![0.0; mode.params_per_pixel(n_steps)];
    accumulate_adjoint(mode, n_steps, grad_offsets, &mut out);
    Ok(out)
}

// `grad_offsets` is `[n][2]`; `out` receives (not accumulates) the parameter gradient.
pub(crate) fn accumulate_adjoint(
    mode: ConstraintMode,
    n_steps: usize,
    grad_offsets: &[f64],
    out: &mut [f64],
) {
    if mode == ConstraintMode::ZeroConstraint {
        out.copy_from_slice(grad_offsets);
        return;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for (n, g) in grad_offsets.chunks_exact(2).enumerate() {
        let (u, one_minus_q) = node(n, n_steps);
        let (a, b) = mode.basis(u, one_minus_q);
        out[0] += a * g[0];
        out[1] += a * g[1];
        if mode != ConstraintMode::Linear {
            out[2] += b * g[0];
            out[3] += b * g[1];
        }
    }
}

/// Chains an offset-field-shaped gradient back to trajectory parameters.
pub(crate) fn params_gradient(traj: &TrajectoryField, grad: &OffsetField) -> Vec<f64> {
    let n = grad.n_steps();
    let k = traj.params_per_pixel();
    let plane = traj.height * traj.width;
    let mut out = vec![0.0; plane * k];
    out.par_chunks_mut(k).enumerate().for_each_init(
        || vec![0.0; 2 * n],
        |scratch, (p, block)| {
            for s in 0..n {
                let g = &grad.step(s)[2 * p..2 * p + 2];
                scratch[2 * s] = g[0];
                scratch[2 * s + 1] = g[1];
            }
            accumulate_adjoint(traj.mode, n, scratch, block);
        },
    );
    out
}
