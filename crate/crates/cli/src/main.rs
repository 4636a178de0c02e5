//! `cpg`: command-line front end for the CPG loss toolkit.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on data, shape or I/O errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cpg",
    version,
    about = "Convolution-based probability gradient loss toolkit"
)]
pub struct Cli {
    /// Emit machine-readable JSON on stdout instead of plain text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Cap on worker threads; outputs do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    /// Seed recorded by commands that take one.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print (and optionally save) the x-direction kernel of size M.
    Kernel {
        #[arg(long, value_parser = parse_kernel_size)]
        size: usize,
        /// Write kx as an [M, M] f32 tensor.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a probability map from labels (one-hot) or logits (softmax).
    Prob(ProbArgs),
    /// Ground-truth gradient field of a label map.
    Grad(GradArgs),
    /// Boundary mask of a label map.
    Boundary(BoundaryArgs),
    /// Evaluate ce, cpg and the combined objective.
    Loss(LossArgs),
    /// mIoU and boundary sharpness of a predicted probability map.
    Eval(EvalArgs),
    /// Probability trace along one row or column, as CSV.
    Transect(TransectArgs),
    /// Fit a blurred logit field to a synthetic scene.
    #[command(name = "train-toy")]
    TrainToy(TrainArgs),
}

#[derive(Debug, Args)]
pub struct LabelInput {
    /// [H, W] i32 label tensor.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = cpg_core::DEFAULT_IGNORE_INDEX)]
    pub ignore_index: i32,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["labels", "logits"])))]
pub struct ProbArgs {
    /// [H, W] i32 labels; requires --classes.
    #[arg(long, requires = "classes")]
    pub labels: Option<PathBuf>,
    /// [C, H, W] f32 logits.
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = cpg_core::DEFAULT_IGNORE_INDEX)]
    pub ignore_index: i32,
    /// Output file; the tensor goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[command(flatten)]
    pub input: LabelInput,
    #[arg(long, value_parser = parse_kernel_size)]
    pub kernel: usize,
    /// Write the [C, 2, H, W] field.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-class gradient-magnitude PGMs.
    #[arg(long = "pgm-magnitude")]
    pub pgm_magnitude: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CollapseArg {
    PerDirection,
    PerPixel,
}

impl From<CollapseArg> for cpg_core::MaskCollapse {
    fn from(c: CollapseArg) -> Self {
        match c {
            CollapseArg::PerDirection => cpg_core::MaskCollapse::PerDirection,
            CollapseArg::PerPixel => cpg_core::MaskCollapse::PerPixel,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CeArg {
    Softmax,
    Bce,
}

impl From<CeArg> for cpg_core::CeVariant {
    fn from(c: CeArg) -> Self {
        match c {
            CeArg::Softmax => cpg_core::CeVariant::SoftmaxCe,
            CeArg::Bce => cpg_core::CeVariant::BceLogits,
        }
    }
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[command(flatten)]
    pub input: LabelInput,
    #[arg(long, value_parser = parse_kernel_size)]
    pub kernel: usize,
    #[arg(long, value_enum, default_value = "per-direction")]
    pub collapse: CollapseArg,
    /// Write the [C, 2, H, W] 0/1 mask.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub logits: PathBuf,
    /// Defaults to the logits' channel count.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = cpg_core::DEFAULT_IGNORE_INDEX)]
    pub ignore_index: i32,
    #[arg(long, value_parser = parse_kernel_size)]
    pub kernel: usize,
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: f32,
    #[arg(long, value_enum, default_value = "softmax")]
    pub ce: CeArg,
    #[arg(long, value_enum, default_value = "per-direction")]
    pub collapse: CollapseArg,
    /// Write d(combined)/d(logits) as a [C, H, W] tensor.
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// [C, H, W] predicted probabilities.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = cpg_core::DEFAULT_IGNORE_INDEX)]
    pub ignore_index: i32,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("line").required(true).args(["row", "col"])))]
pub struct TransectArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long = "class")]
    pub class: usize,
    #[arg(long)]
    pub row: Option<usize>,
    #[arg(long)]
    pub col: Option<usize>,
    #[arg(long, default_value_t = cpg_core::DEFAULT_IGNORE_INDEX)]
    pub ignore_index: i32,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `builtin:poles`, `builtin:step`, or a scene-spec JSON file.
    #[arg(long)]
    pub scene: String,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    #[arg(long, default_value_t = 0.3)]
    pub lr: f32,
    #[arg(long, default_value_t = 2.0)]
    pub lr_power: f32,
    #[arg(long, value_parser = parse_alpha, default_value_t = 1.0)]
    pub alpha: f32,
    #[arg(long, value_parser = parse_kernel_size, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 2)]
    pub blur: usize,
    #[arg(long, value_enum, default_value = "softmax")]
    pub ce: CeArg,
    #[arg(long, value_enum, default_value = "per-direction")]
    pub collapse: CollapseArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_kernel_size(s: &str) -> Result<usize, String> {
    let m: usize = s.parse().map_err(|e| format!("{e}"))?;
    cpg_core::kernels::validate_size(m).map_err(|e| e.to_string())?;
    Ok(m)
}

fn parse_alpha(s: &str) -> Result<f32, String> {
    let a: f32 = s.parse().map_err(|e| format!("{e}"))?;
    if !(a.is_finite() && a >= 0.0) {
        return Err(format!("alpha must be finite and >= 0, got {a}"));
    }
    Ok(a)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
