mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::report::Invariant;

#[derive(Debug, Parser)]
#[command(
    name = "raterfuse",
    version,
    about = "Rater-conditioned label fusion toolkit"
)]
struct Cli {
    /// Report failures on stderr as a JSON object.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the rater-conditioned input stack for one rater.
    Encode(EncodeArgs),
    /// Fuse predictions by weighted majority-label voting.
    Vote(VoteArgs),
    /// Per-region DSC and relative-volume table.
    Metrics(MetricsArgs),
    /// Fleiss' kappa across annotations.
    Irr(IrrArgs),
    /// Generate phantom cases with simulated raters.
    Phantom(PhantomArgs),
    /// Relative-volume bounds implied by a DSC value.
    Bounds(BoundsArgs),
    /// Two-sided two-sample t-test on CSV columns.
    Ttest(TtestArgs),
}

#[derive(Debug, Args, serde::Serialize)]
struct EncodeArgs {
    /// Image channels, all on one grid.
    #[arg(long = "image", num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long)]
    rater: usize,
    #[arg(long)]
    raters: usize,
    /// Output directory for the channel volumes.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Grid size when no image is given.
    #[arg(long, num_args = 3, value_names = ["H", "W", "D"])]
    dims: Option<Vec<usize>>,
    #[arg(long, num_args = 3, value_names = ["SX", "SY", "SZ"], default_values_t = [1.0f32, 1.0, 1.0])]
    spacing: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum InputSpace {
    /// Base ids if every label is at most F, rater-specific ids otherwise.
    Auto,
    Base,
    Rater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum ProjectionAxis {
    X,
    Y,
    Z,
}

#[derive(Debug, Args, serde::Serialize)]
struct VoteArgs {
    #[arg(long = "pred", num_args = 1.., required = true)]
    preds: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    wfg: u32,
    /// Label schema JSON; defaults to three regions with one rater per prediction.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out_label: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out_uncertainty: PathBuf,
    /// Maximum projection of the disagreement map.
    #[arg(long)]
    #[serde(skip)]
    out_projection: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProjectionAxis::Z)]
    projection_axis: ProjectionAxis,
    #[arg(long, value_enum, default_value_t = InputSpace::Auto)]
    input_space: InputSpace,
}

#[derive(Debug, Args, serde::Serialize)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Case name in the CSV; defaults to the prediction file name.
    #[arg(long)]
    case: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum KappaModeArg {
    Binary,
    Multiclass,
}

#[derive(Debug, Args, serde::Serialize)]
struct IrrArgs {
    #[arg(long = "annot", num_args = 1.., required = true)]
    annots: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = KappaModeArg::Binary)]
    mode: KappaModeArg,
    /// JSON destination; stdout when omitted.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Only count voxels inside the bounding box of all foreground.
    #[arg(long)]
    bbox: bool,
    /// Fixes the multi-class category count to F + 1.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
struct PhantomArgs {
    /// Phantom parameters JSON; built-in defaults when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// One rater style JSON per simulated rater; four moderate styles when omitted.
    #[arg(long = "styles", num_args = 1..)]
    styles: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    cases: usize,
    /// Worker threads across cases; 0 lets rayon decide.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    threads: usize,
    /// Noise level of the synthetic image channel.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

#[derive(Debug, Args, serde::Serialize)]
struct BoundsArgs {
    #[arg(long)]
    dsc: f64,
}

#[derive(Debug, Args, serde::Serialize)]
struct TtestArgs {
    #[arg(long)]
    group_a: PathBuf,
    #[arg(long)]
    group_b: PathBuf,
    /// Unequal-variance test instead of the pooled one.
    #[arg(long)]
    welch: bool,
    /// Column to compare; `dsc` if present, else the only column.
    #[arg(long)]
    column: Option<String>,
    /// Keep only rows whose `region` column equals this value.
    #[arg(long)]
    region: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Encode(args) => commands::encode(&args),
        Command::Vote(args) => commands::vote(&args),
        Command::Metrics(args) => commands::metrics(&args),
        Command::Irr(args) => commands::irr(&args),
        Command::Phantom(args) => commands::phantom(&args),
        Command::Bounds(args) => commands::bounds(&args),
        Command::Ttest(args) => commands::ttest(&args),
    }
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if !err.use_stderr() {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            if json_errors {
                report::print_json_error(&err.to_string(), 2, &[]);
            } else {
                let _ = err.print();
            }
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = if err.downcast_ref::<Invariant>().is_some() {
                3
            } else {
                2
            };
            let chain: Vec<String> = err.chain().skip(1).map(ToString::to_string).collect();
            if json_errors {
                report::print_json_error(&err.to_string(), code, &chain);
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(code)
        }
    }
}
