use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vss::pipeline::{evaluate_dirs, run_manifest, BackboneChoice, PipelineConfig};
use vss::synth::{synth_generate, SynthSpec};
use vss::{Error, Result};

#[derive(Parser)]
#[command(name = "vss", about = "Zero-shot video semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one video described by a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// `toy` or `external:DIR`; overrides the config.
        #[arg(long)]
        backbone: Option<BackboneChoice>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        coarse_only: bool,
    },
    /// Generate a synthetic video with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Predictions already hold class ids.
        #[arg(long)]
        no_assign: bool,
        #[arg(long)]
        num_classes: Option<u32>,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { manifest, config, backbone, out, coarse_only } => {
            let mut config = match config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            if let Some(b) = backbone {
                config.backbone = b;
            }
            config.coarse_only |= coarse_only;
            let result = run_manifest(&manifest, &config, out.as_deref())?;
            match &result.report {
                Some(r) => println!("{}", serde_json::to_string_pretty(r).expect("serializable")),
                None => println!("segmented {} frames of {}", result.maps.len(), result.video_id),
            }
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::Io { path: spec.clone(), source: e })?;
            let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Malformed {
                path: spec.clone(),
                message: e.to_string(),
            })?;
            let manifest = synth_generate(&spec, &out)?;
            println!("wrote {} frames to {}", manifest.frame_count, out.join("manifest.json").display());
        }
        Command::Eval { pred, gt, report, no_assign, num_classes } => {
            let r = evaluate_dirs(&pred, &gt, !no_assign, num_classes)?;
            write_json(&report, &r)?;
            println!("miou {:.4}", r.miou);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.name());
            ExitCode::FAILURE
        }
    }
}
