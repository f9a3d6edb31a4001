use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use psgformer_cli::{cmd_eval, cmd_gen, cmd_inspect_attn, cmd_predict, cmd_train, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "psgformer",
    version,
    about = "Point-cloud instance segmentation on synthetic rooms"
)]
struct Cli {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes into data.dir.
    Gen,
    /// Train on data.dir; write checkpoint, loss.csv and config.txt to run.dir.
    Train,
    /// Write ranked instances for one scene or all of data.dir.
    Predict {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score prediction dumps against ground-truth scenes.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Dump one decoder layer's superpoint attention weights as CSV.
    InspectAttn {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        head: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for item in &cli.overrides {
        cfg.apply_override(item)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen => {
            for path in cmd_gen(&cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Train => {
            let every = (cfg.train.steps / 20).max(1);
            let trace = cmd_train(&cfg, |step, r| {
                if step % every == 0 {
                    eprintln!("step {step:>6}  total {:.4}", r.total);
                }
            })?;
            if let Some(last) = trace.last() {
                println!("final total loss {:.6}", last.total);
            }
        }
        Command::Predict { scene, checkpoint } => {
            for path in cmd_predict(&cfg, scene.as_deref(), checkpoint.as_deref())? {
                println!("{}", path.display());
            }
        }
        Command::Eval { pred, gt } => println!("{}", cmd_eval(&cfg, pred.as_deref(), gt.as_deref())?),
        Command::InspectAttn {
            scene,
            layer,
            head,
            checkpoint,
            out,
        } => {
            cmd_inspect_attn(&cfg, &scene, layer, head, checkpoint.as_deref(), &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("psgformer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
