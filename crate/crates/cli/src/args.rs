use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fingeo::grid::{DEFAULT_MARGIN_PX, DEFAULT_PITCH_MM};
use fingeo::preprocess::{DEFAULT_CLIP, DEFAULT_TARGET_PERIOD_PX, DEFAULT_TILE_PX};
use fingeo::silhouette::DEFAULT_SIDE_ANGLE_DEG;
use fingeo::texture::{DEFAULT_BLOCK_PX, DEFAULT_WINDOW_PX};

#[derive(Debug, Parser)]
#[command(name = "fingeo", version, about = "3D reconstruction and unwarping of contactless fingerprints")]
pub struct Cli {
    /// Upper bound on worker threads, shared by batch files and the stages.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment, enhance, rescale to the target period and correct yaw.
    Preprocess(PreprocessArgs),
    /// Estimate a surface gradient map.
    Gradient(GradientArgs),
    /// Integrate a gradient map into depth.
    Reconstruct(ReconstructArgs),
    /// Flatten an image by surface arc length.
    Unwarp(UnwarpArgs),
    /// Preprocess, gradient, reconstruction and unwarping in one go.
    Pipeline(PipelineArgs),
    /// Row-ellipse reconstruction from front, right and left silhouettes.
    Silhouette(SilhouetteArgs),
    /// Render a synthetic finger with exact ground truth.
    Phantom(PhantomArgs),
    /// Compare a prediction with a reference and print a JSON report.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PitchArg {
    /// Sampling pitch of PGM inputs in mm/px. Defaults to the pitch recorded
    /// in a sidecar manifest, else 0.05.
    #[arg(long)]
    pub pitch: Option<f32>,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessFlags {
    #[arg(long, default_value_t = DEFAULT_TARGET_PERIOD_PX)]
    pub target_period: f32,
    #[arg(long, default_value_t = DEFAULT_TILE_PX)]
    pub tile: usize,
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    pub clip: f32,
    /// Fixed segmentation threshold in [0, 1] instead of Otsu.
    #[arg(long)]
    pub threshold: Option<f32>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input PGM, or a directory of PGMs.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Use this foreground mask instead of segmenting.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub flags: PreprocessFlags,
    #[command(flatten)]
    pub pitch: PitchArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradientMethod {
    Texture,
    File,
}

#[derive(Debug, Clone, Args)]
pub struct TextureFlags {
    #[arg(long, default_value_t = DEFAULT_BLOCK_PX)]
    pub block: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW_PX)]
    pub window: usize,
    /// Reference ridge period in px; measured in the central region if absent.
    #[arg(long)]
    pub p0: Option<f32>,
}

#[derive(Debug, Args)]
pub struct GradientArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = GradientMethod::Texture)]
    pub method: GradientMethod,
    /// Precomputed 2-channel gradient grid, for `--method file`.
    #[arg(long)]
    pub grad_file: Option<PathBuf>,
    #[command(flatten)]
    pub texture: TextureFlags,
    #[command(flatten)]
    pub pitch: PitchArg,
}

#[derive(Debug, Clone, Args)]
pub struct MlsFlags {
    /// Smooth the integrated depth by moving least squares (default).
    #[arg(long, overrides_with = "no_mls")]
    pub mls: bool,
    #[arg(long, overrides_with = "mls")]
    pub no_mls: bool,
}

impl MlsFlags {
    pub fn enabled(&self) -> bool {
        !self.no_mls
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub grad: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mls: MlsFlags,
}

#[derive(Debug, Args)]
pub struct UnwarpArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub grad: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pitch: PitchArg,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Input PGM, or a directory of PGMs.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub flags: PreprocessFlags,
    #[command(flatten)]
    pub texture: TextureFlags,
    #[command(flatten)]
    pub mls: MlsFlags,
    #[command(flatten)]
    pub pitch: PitchArg,
}

#[derive(Debug, Args)]
pub struct SilhouetteArgs {
    #[arg(long)]
    pub front: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Side-view rotation in degrees.
    #[arg(long, default_value_t = DEFAULT_SIDE_ANGLE_DEG)]
    pub angle: f64,
    /// Column of the rotation axis; defaults to the image center column.
    #[arg(long)]
    pub axis: Option<f64>,
    #[command(flatten)]
    pub pitch: PitchArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Hemisphere,
    Ellipsoid,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum, default_value_t = ShapeArg::Hemisphere)]
    pub shape: ShapeArg,
    /// One radius, or `Rx,Ry,Rz` in px.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "64")]
    pub radius: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub period: f64,
    /// `N` for a square grid or `WxH`.
    #[arg(long, default_value = "160")]
    pub size: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PITCH_MM)]
    pub pitch: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Depth,
    Gradient,
    Period,
    Orientation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, value_enum)]
    pub kind: EvalKind,
    /// Down-weight steep pixels by exp(−|g|/σ) of the reference gradient.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f32,
    /// Reference gradient for weighting; derived from the truth when it is
    /// a depth or gradient map.
    #[arg(long)]
    pub weight_grad: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MARGIN_PX)]
    pub margin: usize,
}
