//! `dni`: dilutional noise initialization from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dni", version, about = "Dilutional noise initialization for diffusion video editing")]
pub struct Cli {
    /// File of `key = value` lines supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct SeedArg {
    /// RNG seed.
    #[arg(long, env = "DNI_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Checkpoint directory written by `dni train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// DDIM steps.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Diffusion step count; must match the checkpoint's schedule when given.
    #[arg(long = "T")]
    pub t: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DilutionArgs {
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Spectral normalization: per-channel or global.
    #[arg(long, default_value = "per-channel")]
    pub norm: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a toy video dataset with a prompts manifest.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 192)]
        n: usize,
        /// Video dims as W,H,L,C.
        #[arg(long, default_value = "16,16,8,3")]
        dims: String,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the toy denoiser on a dataset directory.
    Train {
        #[arg(long)]
        data_dir: PathBuf,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        /// epsilon or velocity.
        #[arg(long, default_value = "velocity")]
        weighting: String,
        /// Diffusion step count of the linear schedule.
        #[arg(long = "T", default_value_t = 1000)]
        t: usize,
        /// Optional CSV of the per-step loss.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// DDIM-invert a video to its initial noise.
    Invert {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        /// Prompt as shape,color,verb,style.
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the attention maps collected during inversion as a manifest.
        #[arg(long)]
        maps_out: Option<PathBuf>,
    },
    /// DDIM-sample a video from noise.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        z: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edit a video: invert, dilute the noise, denoise under the target prompt.
    Edit {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[command(flatten)]
        dilution: DilutionArgs,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_noise: Option<PathBuf>,
        #[arg(long)]
        out_mask: Option<PathBuf>,
    },
    /// Split noise into its visual and Gaussian branches.
    Disentangle {
        #[arg(long)]
        z: PathBuf,
        /// Clean latent the adaptive filter is built from.
        #[arg(long)]
        z0: PathBuf,
        #[arg(long)]
        out_v: PathBuf,
        #[arg(long)]
        out_g: PathBuf,
        #[arg(long, default_value = "per-channel")]
        norm: String,
    },
    /// Build dilutional noise from noise, clean latent and attention maps.
    Dilute {
        #[arg(long)]
        z: PathBuf,
        #[arg(long)]
        z0: PathBuf,
        #[arg(long)]
        maps_manifest: PathBuf,
        #[command(flatten)]
        dilution: DilutionArgs,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_mask: Option<PathBuf>,
    },
    /// Statistics and spectra of a tensor as `metric,name,value` CSV.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        /// Reference for PSNR, SSIM, band correlation and relative error.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Single-channel mask for inside/outside MSE (needs --reference).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR of the visual branch under the adaptive filter and Gaussian low-passes.
    CompareFilters {
        /// Invert a random toy scene with this checkpoint (scene drawn from --seed).
        #[arg(long, conflicts_with_all = ["z", "z0"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, requires = "z0")]
        z: Option<PathBuf>,
        #[arg(long, requires = "z")]
        z0: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep alpha or beta over toy edits and report edit effect and locality.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// alpha or beta.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let run = || -> anyhow::Result<()> {
        let args = config::expand(std::env::args().collect())?;
        let cli = Cli::try_parse_from(args).map_err(|e| {
            if e.use_stderr() {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("bad arguments");
                anyhow::anyhow!("{}", first.trim_start_matches("error: "))
            } else {
                // --help / --version
                e.exit()
            }
        })?;
        commands::run(cli.command)
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dni: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out.replace('\n', " ")
}
