//! Synthetic blurry/sharp/flow triplets.
//!
//! A flow map assigns each pixel one motion vector; the blur is rendered as
//! a linear trajectory spanning that vector (`d = flow / 2`), centered on
//! the sharp mid-exposure frame.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::etrf::write_trajectory;
use crate::image::{load_image, save_image, BoundaryMode, FlowMap, Image};
use crate::recover::reblur;
use crate::trajectory::TrajectoryField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionModel {
    /// One vector for the whole image.
    GlobalTranslation,
    /// Small rotation and scale about the image center plus a translation.
    Affine,
    /// Affine background with an independently translating rectangle.
    TwoLayer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub motion_model: MotionModel,
    /// Upper bound on every flow vector's length, in pixels.
    pub max_displacement: f64,
    /// Approximate image-area fraction of the moving object (TwoLayer).
    pub object_fraction: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            motion_model: MotionModel::GlobalTranslation,
            max_displacement: 8.0,
            object_fraction: 0.25,
            n_steps: crate::blur::DEFAULT_STEPS,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.max_displacement.is_finite() || self.max_displacement < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "max displacement must be >= 0, got {}",
                self.max_displacement
            )));
        }
        if !(0.0..=1.0).contains(&self.object_fraction) {
            return Err(Error::InvalidArgument(format!(
                "object fraction must lie in [0, 1], got {}",
                self.object_fraction
            )));
        }
        crate::trajectory::check_steps(self.n_steps)
    }
}

// Flow values are rounded to f32 so they survive the ETRF container exactly.
#[inline]
fn f32_round(v: f64) -> f64 {
    f64::from(v as f32)
}

fn random_vector(rng: &mut ChaCha8Rng, max: f64) -> (f64, f64) {
    let r = rng.gen_range(0.0..=1.0) * max;
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    (r * a.cos(), r * a.sin())
}

struct AffineMotion {
    // A - I, acting on (x - cx, y - cy)
    m: [[f64; 2]; 2],
    t: (f64, f64),
    center: (f64, f64),
}

impl AffineMotion {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, max: f64) -> Self {
        let theta = rng.gen_range(-3.0f64..=3.0).to_radians();
        let s = rng.gen_range(0.98..=1.02);
        let t = random_vector(rng, max);
        let (c, sn) = (theta.cos(), theta.sin());
        AffineMotion {
            m: [[s * c - 1.0, -s * sn], [s * sn, s * c - 1.0]],
            t,
            center: ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
        }
    }

    fn at(&self, x: f64, y: f64) -> (f64, f64) {
        let (px, py) = (x - self.center.0, y - self.center.1);
        (
            self.m[0][0] * px + self.m[0][1] * py + self.t.0,
            self.m[1][0] * px + self.m[1][1] * py + self.t.1,
        )
    }
}

fn clamp_magnitude(v: (f64, f64), max: f64) -> (f64, f64) {
    let len = v.0.hypot(v.1);
    if len > max {
        if max == 0.0 {
            return (0.0, 0.0);
        }
        // shrink a hair further so f32 rounding cannot push the length past max
        let k = max / len * (1.0 - 1e-6);
        (v.0 * k, v.1 * k)
    } else {
        v
    }
}

/// Draws a random motion flow map; deterministic in `cfg.seed`.
pub fn generate_flow(height: usize, width: usize, cfg: &SynthConfig) -> Result<FlowMap> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max = cfg.max_displacement;
    let mut data = Vec::with_capacity(height * width * 2);
    match cfg.motion_model {
        MotionModel::GlobalTranslation => {
            let (dx, dy) = random_vector(&mut rng, max);
            let (dx, dy) = (f32_round(dx), f32_round(dy));
            let (dx, dy) = if dx.hypot(dy) > max { clamp_magnitude((dx, dy), max) } else { (dx, dy) };
            for _ in 0..height * width {
                data.extend_from_slice(&[f32_round(dx), f32_round(dy)]);
            }
        }
        MotionModel::Affine | MotionModel::TwoLayer => {
            let bg = AffineMotion::random(&mut rng, height, width, max);
            let object = if cfg.motion_model == MotionModel::TwoLayer {
                let area = cfg.object_fraction * (height * width) as f64;
                let aspect: f64 = rng.gen_range(0.5..=2.0);
                let rw = ((area * aspect).sqrt().round() as usize).min(width);
                let rh = ((area / aspect).sqrt().round() as usize).min(height);
                let x0 = rng.gen_range(0..=width - rw);
                let y0 = rng.gen_range(0..=height - rh);
                let t = random_vector(&mut rng, max);
                Some((x0, y0, rw, rh, t))
            } else {
                None
            };
            for y in 0..height {
                for x in 0..width {
                    let v = match object {
                        Some((x0, y0, rw, rh, t))
                            if (x0..x0 + rw).contains(&x) && (y0..y0 + rh).contains(&y) =>
                        {
                            t
                        }
                        _ => bg.at(x as f64, y as f64),
                    };
                    let (dx, dy) = clamp_magnitude(v, max);
                    data.extend_from_slice(&[f32_round(dx), f32_round(dy)]);
                }
            }
        }
    }
    FlowMap::new(height, width, data)
}

/// Renders the blur of `flow` as a linear trajectory through the sharp frame.
pub fn render_blur(sharp: &Image, flow: &FlowMap, n_steps: usize, mode: BoundaryMode) -> Result<Image> {
    if flow.height() != sharp.height() || flow.width() != sharp.width() {
        return Err(Error::Dimension(format!(
            "flow is {}x{}, image is {}x{}",
            flow.height(),
            flow.width(),
            sharp.height(),
            sharp.width()
        )));
    }
    let traj = TrajectoryField::linear_from_flow(flow, n_steps)?;
    reblur(sharp, &traj, n_steps, mode)
}

/// Smooth multi-frequency color texture in `[0.1, 0.9]`: a sum of randomly
/// oriented sinusoids with 6-16 px wavelengths, drawn independently per
/// channel.
pub fn procedural_texture(height: usize, width: usize, channels: usize, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Vec<(f64, f64, f64, f64)>> = (0..channels)
        .map(|_| {
            (0..6)
                .map(|_| {
                    let wavelength: f64 = rng.gen_range(6.0..16.0);
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let k = std::f64::consts::TAU / wavelength;
                    (k * a.cos(), k * a.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..1.0))
                })
                .collect()
        })
        .collect();
    let norm: Vec<f64> = waves.iter().map(|w| w.iter().map(|v| v.3).sum()).collect();
    Image::from_fn(height, width, channels, |x, y, c| {
        let s: f64 = waves[c]
            .iter()
            .map(|&(kx, ky, ph, amp)| amp * (kx * x as f64 + ky * y as f64 + ph).sin())
            .sum();
        0.5 + 0.4 * s / norm[c]
    })
}

/// One generated instance, paths relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub blurry: PathBuf,
    pub sharp: PathBuf,
    pub flow: PathBuf,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.blurry.display(),
            self.sharp.display(),
            self.flow.display(),
            self.seed
        )
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of instance `k` of image `i`.
pub fn instance_seed(base: u64, image_index: usize, k: usize) -> u64 {
    mix(mix(base ^ (image_index as u64).rotate_left(32)) ^ k as u64)
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Generates `count_per_image` triplets for every PNG in `sharp_dir` and
/// writes them plus `manifest.tsv` into `out_dir`.
pub fn make_dataset(
    sharp_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    count_per_image: usize,
    cfg: &SynthConfig,
) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let sources = list_pngs(sharp_dir.as_ref())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let jobs: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|i| (0..count_per_image).map(move |k| (i, k)))
        .collect();
    let sharp_images: Vec<Option<Image>> = if count_per_image == 0 {
        vec![None; sources.len()]
    } else {
        sources.iter().map(|p| load_image(p).map(Some)).collect::<Result<_>>()?
    };

    let entries = jobs
        .par_iter()
        .map(|&(i, k)| {
            let sharp = sharp_images[i].as_ref().expect("loaded when count > 0");
            let stem = sources[i]
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image");
            let seed = instance_seed(cfg.seed, i, k);
            let inst_cfg = SynthConfig { seed, ..*cfg };
            let flow = generate_flow(sharp.height(), sharp.width(), &inst_cfg)?;
            let blurry = render_blur(sharp, &flow, cfg.n_steps, BoundaryMode::ClampToEdge)?;
            let traj = TrajectoryField::linear_from_flow(&flow, cfg.n_steps)?;
            let entry = ManifestEntry {
                blurry: format!("{stem}_{k:04}_blurry.png").into(),
                sharp: format!("{stem}_{k:04}_sharp.png").into(),
                flow: format!("{stem}_{k:04}_flow.etrf").into(),
                seed,
            };
            save_image(&blurry, out_dir.join(&entry.blurry))?;
            save_image(sharp, out_dir.join(&entry.sharp))?;
            write_trajectory(&traj, out_dir.join(&entry.flow))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&e.to_line());
        manifest.push('\n');
    }
    let mpath = out_dir.join(MANIFEST_NAME);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: MotionModel, max: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            motion_model: model,
            max_displacement: max,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_max_gives_zero_flow() {
        for model in [MotionModel::GlobalTranslation, MotionModel::Affine, MotionModel::TwoLayer] {
            let f = generate_flow(12, 10, &cfg(model, 0.0, 3)).unwrap();
            assert!(f.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn global_translation_is_uniform() {
        let f = generate_flow(9, 7, &cfg(MotionModel::GlobalTranslation, 8.0, 4)).unwrap();
        let first = f.get(0, 0);
        assert!(f.vectors().all(|v| v == first));
    }

    #[test]
    fn magnitude_bound_and_determinism() {
        for model in [MotionModel::GlobalTranslation, MotionModel::Affine, MotionModel::TwoLayer] {
            for seed in 0..20 {
                let c = cfg(model, 5.0, seed);
                let f = generate_flow(40, 50, &c).unwrap();
                assert!(f.vectors().all(|(x, y)| x.hypot(y) <= 5.0));
                assert_eq!(f, generate_flow(40, 50, &c).unwrap());
            }
        }
    }

    #[test]
    fn affine_center_carries_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = AffineMotion::random(&mut rng, 31, 41, 6.0);
        let (x, y) = m.at(20.0, 15.0);
        assert!((x - m.t.0).abs() < 1e-12 && (y - m.t.1).abs() < 1e-12);
    }

    #[test]
    fn two_layer_is_piecewise() {
        let c = SynthConfig {
            object_fraction: 0.3,
            ..cfg(MotionModel::TwoLayer, 8.0, 11)
        };
        let f = generate_flow(40, 40, &c).unwrap();
        let mut distinct: Vec<(f64, f64)> = f.vectors().collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn render_zero_flow_is_identity() {
        let img = procedural_texture(16, 16, 3, 1).unwrap();
        let out = render_blur(&img, &FlowMap::zeros(16, 16), 15, BoundaryMode::ClampToEdge).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn step_edge_horizontal_blur() {
        // columns x < 10 are 0, x >= 10 are 1; flow (8, 0), N = 15 samples x + 4 - 8n/14
        let (h, w) = (5, 24);
        let img = Image::from_fn(h, w, 1, |x, _, _| if x >= 10 { 1.0 } else { 0.0 }).unwrap();
        let flow = FlowMap::uniform(h, w, 8.0, 0.0).unwrap();
        let out = render_blur(&img, &flow, 15, BoundaryMode::ClampToEdge).unwrap();
        for x in 5..19 {
            let mut acc = 0.0;
            for n in 0..15 {
                let sx = x as f64 + 4.0 - 8.0 * n as f64 / 14.0;
                // bilinear sample of the step: linear ramp on [9, 10]
                acc += (sx - 9.0).clamp(0.0, 1.0);
            }
            assert!((out.get(x, 2, 0) - acc / 15.0).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn texture_in_range() {
        let t = procedural_texture(32, 32, 3, 5).unwrap();
        assert!(t.data().iter().all(|&v| (0.1..=0.9).contains(&v)));
    }

    #[test]
    fn instance_seeds_differ() {
        assert_ne!(instance_seed(1, 0, 0), instance_seed(1, 0, 1));
        assert_ne!(instance_seed(1, 0, 1), instance_seed(1, 1, 0));
    }
}
