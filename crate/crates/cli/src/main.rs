//! `bmotion`: phantom generation, projection and the bilinear-model experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use bilinear_motion::harness::oneshot::{self, RotationInput};
use bilinear_motion::harness::{self, ExperimentConfig};
use bilinear_motion::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bmotion", version, about = "Bilinear respiratory/rotational projection models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (must exist)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    g: Option<usize>,
    #[arg(long = "modes-e")]
    modes_e: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Detector columns and rows
    #[arg(long, num_args = 2, value_names = ["NU", "NV"])]
    detector: Option<Vec<usize>>,
    /// Voxels per axis
    #[arg(long)]
    grid: Option<usize>,
    /// Number of projection angles on the full circle
    #[arg(long)]
    angles: Option<usize>,
    /// Any other configuration key, as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the phantom volumes
    Phantom(Common),
    /// Project previously written phantom volumes
    Project(Common),
    /// Dense model, shape model and explained variance
    Exp1(Common),
    /// Leave-one-out gray-value errors at held-out angles
    Exp2(Common),
    /// Held-out volume estimation through the shape-model regression
    Exp3(Common),
    /// Respiratory weights of one projection
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        projection: PathBuf,
        /// Image index inside the projection file
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Gantry angle in radians (default: the angle stored with the image)
        #[arg(long, allow_negative_numbers = true)]
        angle: Option<f64>,
    },
    /// Projection image from respiratory and rotational weights
    Synthesize {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated respiratory weights
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        resp: Vec<f64>,
        /// Comma-separated rotational weights
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "angle")]
        rot: Option<Vec<f64>>,
        /// Interpolate the rotational weights at this angle (radians)
        #[arg(long, allow_negative_numbers = true)]
        angle: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(v) = c.f {
        cfg.f = v;
    }
    if let Some(v) = c.g {
        cfg.g = v;
    }
    if let Some(v) = c.modes_e {
        cfg.modes_e = v;
    }
    if let Some(v) = c.ridge {
        cfg.ridge = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(d) = &c.detector {
        cfg.detector = [d[0], d[1]];
    }
    if let Some(v) = c.grid {
        cfg.grid = v;
    }
    if let Some(v) = c.angles {
        cfg.angles = v;
    }
    cfg.validate()?;
    cfg.check_out_dir()?;
    Ok(cfg)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Phantom(c) => {
            let paths = harness::cmd_phantom(&config(&c)?)?;
            println!("wrote {} volumes", paths.len());
        }
        Command::Project(c) => {
            let stacks = harness::cmd_project(&config(&c)?)?;
            println!("wrote {} stacks of {} images", stacks.len(), stacks.first().map_or(0, |s| s.len()));
        }
        Command::Exp1(c) => {
            let s = harness::cmd_experiment1(&config(&c)?)?;
            println!("truncation error {:.6e}", s.model.truncation_error);
            println!("std(A0)/std(A1) {:.4}  std(B0)/std(B1) {:.4}", s.resp_first_ratio, s.rot_first_ratio);
            println!("ssm cumulative variance {}", join(&s.ssm_explained));
        }
        Command::Exp2(c) => {
            let s = harness::cmd_experiment2(&config(&c)?)?;
            println!(
                "mean gray error {:.6} of reference mean {:.6} ({:.4}%), dense model {:.4}%",
                s.mean_abs_error, s.reference_mean, s.mean_percent, s.dense_mean_percent
            );
        }
        Command::Exp3(c) => {
            let s = harness::cmd_experiment3(&config(&c)?)?;
            println!(
                "mean HU error {:.4}, across-angle std {:.4}, beats baseline in {}/{} phases",
                s.mean_error,
                s.mean_across_angle_std,
                s.beats_baseline,
                s.phases.len()
            );
        }
        Command::Estimate { model, projection, index, angle } => {
            let e = oneshot::cmd_estimate(&model, &projection, index, angle)?;
            println!("angle {}", e.angle);
            println!("resp {}", join(&e.resp_weights));
            if let Some(w) = &e.ssm_weights {
                println!("ssm {}", join(w));
            }
            println!("condition {}", e.condition_number);
        }
        Command::Synthesize { model, resp, rot, angle, out } => {
            let rot = match (rot, angle) {
                (Some(w), _) => RotationInput::Weights(w),
                (None, Some(a)) => RotationInput::Angle(a),
                (None, None) => return Err(Error::Config("synthesize needs --rot or --angle".into())),
            };
            let path = oneshot::cmd_synthesize(&model, &resp, &rot, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Dimension(_) | Error::Domain(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::DegenerateModel(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
