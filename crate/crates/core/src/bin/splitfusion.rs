use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splitfusion::dataset::Trajectory;
use splitfusion::eval::ate_rmse;
use splitfusion::pipeline::{parse_frame_range, run_sequence, PipelineConfig, RunOptions};
use splitfusion::synth::SceneScript;

#[derive(Parser)]
#[command(name = "splitfusion", version, about = "Per-surface RGB-D tracking and fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a TUM-layout sequence.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of `<timestamp>.png` + `<timestamp>.json` instance masks.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// JSON pipeline config; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Half-open frame range `a..b`.
        #[arg(long)]
        frames: Option<String>,
        #[arg(long)]
        export_every: Option<usize>,
        #[arg(long)]
        rigid_only: bool,
    },
    /// Render a scripted synthetic scene into a TUM-layout sequence.
    Synth {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Absolute trajectory error between two TUM trajectory files, as JSON.
    Ate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

fn run(cli: Cli) -> splitfusion::Result<()> {
    match cli.command {
        Command::Run {
            dataset,
            masks,
            config,
            out,
            frames,
            export_every,
            rigid_only,
        } => {
            let config = match config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            let opts = RunOptions {
                dataset,
                masks,
                config,
                out,
                frames: frames.as_deref().map(parse_frame_range).transpose()?,
                export_every,
                rigid_only,
            };
            let report = run_sequence(&opts)?;
            eprintln!(
                "processed {} frames, {} surfaces",
                report.frames_processed,
                report.surfaces.len()
            );
        }
        Command::Synth { script, out } => {
            let scene = SceneScript::load(script)?;
            scene.export(&out)?;
            eprintln!("wrote {} frames to {}", scene.frames, out.display());
        }
        Command::Ate { est, reference } => {
            let report = ate_rmse(&Trajectory::read_tum(est)?, &Trajectory::read_tum(reference)?)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
