use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xsplat::commands::*;

#[derive(Parser)]
#[command(name = "xsplat", version, about = "Gaussian splatting for digitally reconstructed radiographs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic CT phantom.
    Phantom(PhantomArgs),
    /// Render normalized train/test radiographs from a CT volume.
    Targets(TargetsArgs),
    /// Initialize and optimize a model against a targets directory.
    Train(TrainArgs),
    /// Render a checkpoint at the given views.
    Render(RenderArgs),
    /// Per-view PSNR and SSIM of a checkpoint against held-out images.
    Eval(EvalArgs),
    /// Recover the pose of one radiograph.
    Register(RegisterArgs),
    /// Time the splatting renderer against ray casting.
    Bench(BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Phantom(a) => cmd_phantom(a),
        Cmd::Targets(a) => cmd_targets(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Register(a) => cmd_register(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
