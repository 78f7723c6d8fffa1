use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use etr_core::etrf::{read_offsets, write_trajectory, EtrfPayload};
use etr_core::extraction::extract_frames;
use etr_core::metrics::{endpoint_error, motion_mse, psnr, ssim};
use etr_core::objective::LossWeights;
use etr_core::synthesis::{make_dataset, MotionModel, SynthConfig};
use etr_core::trajectory::check_steps;
use etr_core::viz::{flow_to_color, overlay_trajectories};
use etr_core::{
    endpoint_flow, load_image, reblur, recover, save_image, BoundaryMode, ConstraintMode, Error, FlowMap,
    RecoveryConfig, TrajectoryField,
};

/// Exposure-trajectory toolkit: synthesize motion blur, recover per-pixel
/// trajectories from blurry/sharp pairs, and put them to use.
///
/// Defaults marked [paper] follow the published method; [tuned] values were
/// chosen for this implementation.
#[derive(Parser, Debug)]
#[command(name = "etr", version, about, long_about = None)]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate blurry/sharp/flow triplets from a directory of sharp PNGs
    Synth {
        #[arg(long)]
        sharp_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Triplets per source image
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Motion::Translate)]
        motion: Motion,
        /// Maximum flow magnitude in pixels [tuned]
        #[arg(long, default_value_t = 8.0)]
        max_disp: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exposure timesteps used to render the blur [paper]
        #[arg(long, default_value_t = 15)]
        n: usize,
    },
    /// Recover a trajectory field from a blurry/sharp pair
    Recover {
        #[arg(long)]
        blurry: PathBuf,
        #[arg(long)]
        sharp: PathBuf,
        /// Trajectory constraint [tuned]
        #[arg(long, value_enum, default_value_t = Mode::Linear)]
        mode: Mode,
        /// Exposure timesteps N [paper]
        #[arg(long, default_value_t = 15)]
        n: usize,
        /// Adam iterations per pyramid level [tuned]
        #[arg(long, default_value_t = 500)]
        iters: usize,
        /// Initial step size in pixels, decayed linearly to zero [tuned]
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        /// Step size factor per level below the coarsest [tuned]
        #[arg(long, default_value_t = 0.25)]
        level_step_scale: f64,
        /// Pyramid levels, coarsest side kept >= 8 px [tuned]
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Weight of the MS-SSIM term [paper]
        #[arg(long, default_value_t = 0.1)]
        lambda_ssim: f64,
        /// Weight of the offset magnitude penalty [paper]
        #[arg(long, default_value_t = 2e-5)]
        lambda_reg: f64,
        /// Weight of the total-variation penalty [paper]
        #[arg(long, default_value_t = 5e-4)]
        lambda_tv: f64,
        /// Differentiate a single-scale SSIM term on coarse levels [tuned]
        #[arg(long)]
        ssim_grad: bool,
        /// Out-of-image sampling rule [tuned]
        #[arg(long, value_enum, default_value_t = Boundary::Clamp)]
        boundary: Boundary,
        #[arg(long, default_value = "traj.etrf")]
        out: PathBuf,
        #[arg(long, default_value = "report.txt")]
        report: PathBuf,
        /// Picks the direction of the initial displacement [tuned]
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render the blur a trajectory induces on a sharp image
    Reblur {
        #[arg(long)]
        sharp: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Boundary::Clamp)]
        boundary: Boundary,
    },
    /// Extract a frame sequence by warping the sharp image along the trajectory
    Extract {
        #[arg(long)]
        sharp: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        /// Frame count M, odd and >= 3
        #[arg(long, default_value_t = 15)]
        frames: usize,
        /// Write frames in reverse temporal order
        #[arg(long)]
        reverse: bool,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Boundary::Clamp)]
        boundary: Boundary,
    },
    /// Compare two images, or an estimated flow against ground truth
    Eval {
        #[arg(long, requires = "b", conflicts_with_all = ["est_flow", "gt_flow"])]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// ETRF file; trajectories are reduced to their endpoint flow
        #[arg(long, requires = "gt_flow")]
        est_flow: Option<PathBuf>,
        #[arg(long, requires = "est_flow")]
        gt_flow: Option<PathBuf>,
    },
    /// Visualize a trajectory over an image, or an endpoint flow as color
    Viz {
        #[arg(long, conflicts_with = "flow", requires = "image")]
        traj: Option<PathBuf>,
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Grid spacing between drawn trajectories
        #[arg(long, default_value_t = 8)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Motion {
    Translate,
    Affine,
    TwoLayer,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Zero,
    Linear,
    BdLinear,
    Quadratic,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Boundary {
    Clamp,
    Zero,
}

impl From<Mode> for ConstraintMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Zero => ConstraintMode::ZeroConstraint,
            Mode::Linear => ConstraintMode::Linear,
            Mode::BdLinear => ConstraintMode::BdLinear,
            Mode::Quadratic => ConstraintMode::Quadratic,
        }
    }
}

impl From<Boundary> for BoundaryMode {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Clamp => BoundaryMode::ClampToEdge,
            Boundary::Zero => BoundaryMode::ZeroOutside,
        }
    }
}

impl From<Motion> for MotionModel {
    fn from(m: Motion) -> Self {
        match m {
            Motion::Translate => MotionModel::GlobalTranslation,
            Motion::Affine => MotionModel::Affine,
            Motion::TwoLayer => MotionModel::TwoLayer,
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Format(_) => 2,
        Error::NonFiniteLoss { .. } => 4,
        _ => 3,
    }
}

fn read_trajectory(path: &Path) -> etr_core::Result<TrajectoryField> {
    read_offsets(path)?.into_trajectory()
}

fn read_flow(path: &Path) -> etr_core::Result<FlowMap> {
    let traj = match read_offsets(path)? {
        EtrfPayload::Offsets(field) => TrajectoryField::from_offsets(&field)?,
        EtrfPayload::Trajectory(t) => t,
    };
    Ok(endpoint_flow(&traj))
}

fn create_dir(path: &Path) -> etr_core::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> etr_core::Result<()> {
    match command {
        Command::Synth {
            sharp_dir,
            out,
            count,
            motion,
            max_disp,
            seed,
            n,
        } => {
            let cfg = SynthConfig {
                motion_model: motion.into(),
                max_displacement: max_disp,
                n_steps: n,
                seed,
                ..Default::default()
            };
            let entries = make_dataset(&sharp_dir, &out, count, &cfg)?;
            println!("wrote {} triplets to {}", entries.len(), out.display());
        }
        Command::Recover {
            blurry,
            sharp,
            mode,
            n,
            iters,
            lr,
            level_step_scale,
            levels,
            lambda_ssim,
            lambda_reg,
            lambda_tv,
            ssim_grad,
            boundary,
            out,
            report,
            seed,
        } => {
            let cfg = RecoveryConfig {
                mode: mode.into(),
                n_steps: n,
                weights: LossWeights::new(lambda_ssim, lambda_reg, lambda_tv)?,
                boundary: boundary.into(),
                iterations: iters,
                step_size: lr,
                level_step_scale,
                pyramid_levels: levels,
                seed,
                ssim_gradient: ssim_grad,
                ..Default::default()
            };
            cfg.validate()?;
            let blurry = load_image(&blurry)?;
            let sharp = load_image(&sharp)?;
            let (traj, rep) = recover(&blurry, &sharp, &cfg)?;
            write_trajectory(&traj, &out)?;
            rep.write(&report)?;
            println!("final_loss: {}", rep.final_loss);
            println!("reblur_psnr: {}", rep.reblur_psnr);
        }
        Command::Reblur {
            sharp,
            traj,
            out,
            boundary,
        } => {
            let sharp = load_image(&sharp)?;
            let traj = read_trajectory(&traj)?;
            let img = reblur(&sharp, &traj, traj.n_steps(), boundary.into())?;
            save_image(&img, &out)?;
        }
        Command::Extract {
            sharp,
            traj,
            frames,
            reverse,
            out_dir,
            boundary,
        } => {
            check_steps(frames)?;
            let sharp = load_image(&sharp)?;
            let traj = read_trajectory(&traj)?;
            let mut seq = extract_frames(&sharp, &traj, frames, boundary.into())?;
            if reverse {
                seq.reverse();
            }
            create_dir(&out_dir)?;
            for (i, f) in seq.iter().enumerate() {
                save_image(f, out_dir.join(format!("frame_{i:03}.png")))?;
            }
            println!("wrote {} frames to {}", seq.len(), out_dir.display());
        }
        Command::Eval {
            a,
            b,
            est_flow,
            gt_flow,
        } => match (a, b, est_flow, gt_flow) {
            (Some(a), Some(b), _, _) => {
                let (a, b) = (load_image(&a)?, load_image(&b)?);
                println!("psnr: {:?}", psnr(&a, &b)?);
                println!("ssim: {:?}", ssim(&a, &b)?);
            }
            (_, _, Some(est), Some(gt)) => {
                let (est, gt) = (read_flow(&est)?, read_flow(&gt)?);
                println!("motion_mse: {:?}", motion_mse(&est, &gt)?);
                println!("epe: {:?}", endpoint_error(&est, &gt)?);
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "eval needs --a/--b or --est-flow/--gt-flow".into(),
                ))
            }
        },
        Command::Viz {
            traj,
            flow,
            image,
            stride,
            out,
        } => {
            let img = match (traj, flow) {
                (Some(traj), _) => {
                    let image = image.expect("clap enforces --image with --traj");
                    let base = load_image(&image)?;
                    let traj = read_trajectory(&traj)?;
                    overlay_trajectories(&base, &traj, stride, 15)?
                }
                (None, Some(flow)) => flow_to_color(&read_flow(&flow)?, None),
                (None, None) => {
                    return Err(Error::InvalidArgument("viz needs --traj or --flow".into()))
                }
            };
            save_image(&img, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be >= 1".into())),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Error::InvalidArgument(format!("thread pool: {e}"))),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
