//! `bpgm`: train convolutional dictionaries, denoise with them, and check
//! the majorizers numerically.
//!
//! Settings resolve as built-in defaults, then the `--config` file, then
//! flags. Every run writes the resolved settings next to its outputs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bpgm::cdl::{MajorizerDesign, Scheme};
use bpgm::engine::{Accel, MomentumFormula};

#[derive(Parser, Debug)]
#[command(name = "bpgm", version, about = "Convolutional dictionary learning with block proximal gradient")]
struct Cli {
    /// Worker threads; 1 keeps runs bit-reproducible across machines.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a dictionary from the images in a dataset manifest.
    Train(TrainArgs),
    /// Denoise one image with a stored dictionary.
    Denoise(DenoiseArgs),
    /// Report objective and sparsity of stored results, or PSNR of an image.
    Eval(EvalArgs),
    /// Compare every diagonal majorizer against dense Hessians.
    CheckMajorizer(CheckArgs),
    /// Reconstruct images from a stored dictionary and codes.
    Synth(SynthArgs),
}

fn parse_named<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    toml::Value::String(s.to_string()).try_into().map_err(|e| format!("{e}"))
}

/// Flag overrides, named after the configuration fields.
#[derive(Args, Debug, Default, Clone)]
pub struct CdlOverrides {
    #[arg(long)]
    num_filters: Option<usize>,
    #[arg(long)]
    filter_h: Option<usize>,
    #[arg(long)]
    filter_w: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// two-block or multi-block
    #[arg(long, value_parser = parse_named::<Scheme>)]
    scheme: Option<Scheme>,
    /// m-i, m-ii, m-iii, m-iv or m-v; custom pairings go in the config file
    #[arg(long, value_parser = parse_named::<MajorizerDesign>)]
    majorizer: Option<MajorizerDesign>,
    /// plain, fbpgm, reo, reg or reg-f
    #[arg(long, value_parser = parse_named::<Accel>)]
    accel: Option<Accel>,
    /// golden or linear
    #[arg(long, value_parser = parse_named::<MomentumFormula>)]
    momentum: Option<MomentumFormula>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    /// Enables the contrast-enhanced model with this weight.
    #[arg(long)]
    ace_gamma: Option<f64>,
    #[arg(long)]
    check_majorization: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    overrides: CdlOverrides,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[arg(long)]
    dictionary: PathBuf,
    /// Image to denoise, or the clean image when `--noise-snr` is given.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Clean reference for the PSNR report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Corrupts the input with white Gaussian noise at this SNR (dB) first.
    #[arg(long)]
    noise_snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise level used to derive the default weights.
    #[arg(long)]
    sigma: Option<f64>,
    /// Weights `alpha gamma` of a contrast-enhanced dictionary; selects the
    /// contrast-enhanced default weights.
    #[arg(long, num_args = 2, value_names = ["ALPHA", "GAMMA"])]
    ace_weights: Option<Vec<f64>>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, requires_all = ["dictionary", "codes"])]
    data: Option<PathBuf>,
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Training config supplying `alpha` and `ace_gamma`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ace_gamma: Option<f64>,
    /// Trace whose final objective should match.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    image: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    max_k: usize,
    #[arg(long, default_value_t = 3)]
    max_l: usize,
    #[arg(long, default_value_t = 4)]
    max_image_side: usize,
    #[arg(long, default_value_t = 2)]
    max_filter_side: usize,
    /// Scales every majorizer before checking; below 1 it should fail.
    #[arg(long, default_value_t = 1.0, hide = true)]
    scale: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    dictionary: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Stretch each image to [0, 1] instead of clamping.
    #[arg(long)]
    rescale: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: cannot start worker threads: {e}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Eval(a) => commands::eval(a),
        Command::CheckMajorizer(a) => commands::check_majorizer(a),
        Command::Synth(a) => commands::synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
