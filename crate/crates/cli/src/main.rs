//! Pipeline driver: author a camera trajectory, hand it to an external video
//! generator, ingest the resulting frames/depths/tracks, fit the dynamic
//! gaussian scene, then render novel views, export 3D tracks and evaluate.

mod commands;
mod manifest;
mod state;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "splat4d", version, about = "Dynamic gaussian scene fitting with hybrid SE(3) motion bases", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Author a camera trajectory (camera.json, optional ray-embedding export)
    Trajectory(commands::TrajectoryArgs),
    /// Fit a scene to a dataset directory
    Fit(commands::FitArgs),
    /// Render a fitted state along a trajectory
    Render(commands::RenderArgs),
    /// Export 3D trajectories for query pixels
    Track(commands::TrackArgs),
    /// PSNR/SSIM tables between two image directories
    Eval(commands::EvalArgs),
    /// Generate a synthetic ground-truth dataset
    Synth(commands::SynthArgs),
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<splat4d::Error>() {
        Some(splat4d::Error::Divergence { .. }) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Trajectory(args) => commands::run_trajectory(args),
        Command::Fit(args) => commands::run_fit(args),
        Command::Render(args) => commands::run_render(args),
        Command::Track(args) => commands::run_track(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::Synth(args) => commands::run_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
