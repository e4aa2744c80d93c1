use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use sosd_core::harness::{self, ExperimentSpec, RunVariant, TrainRequest};
use sosd_core::synth::Split;
use sosd_core::Result;

/// Joint depth and semantic segmentation on synthetic street scenes.
#[derive(Parser)]
#[command(name = "sosd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Seed; see each verb for what it seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Omit wall-clock measurements so every output file is reproducible.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the spec's dataset to disk (--seed: dataset seed).
    GenData(Common),
    /// Train one variant (--seed: initialization and data-order seed).
    Train {
        #[command(flatten)]
        common: Common,
        /// semantic-only, depth-only, mtl, sosd or esosd.
        #[arg(long, default_value = "esosd")]
        variant: RunVariant,
        /// Dataset seed, when the spec generates its data.
        #[arg(long)]
        dataset_seed: Option<u64>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many total steps have run.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Evaluate a checkpoint on a split (--seed: dataset seed).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory.
        #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth against itself.
        #[arg(long)]
        oracle: bool,
        /// train or val; defaults to the spec's split.
        #[arg(long)]
        split: Option<Split>,
        /// Write depth and label maps for each scene.
        #[arg(long)]
        dump_predictions: bool,
    },
    /// Train and evaluate every variant and seed of the spec (--seed:
    /// dataset seed).
    Ablate(Common),
    /// Write viewable images of scenes (--seed: dataset seed).
    Dump {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    let threads = harness::thread_count()?;
    match cli.command {
        Command::GenData(c) => {
            let spec = ExperimentSpec::load(&c.spec)?;
            let manifest = harness::cmd_gen_data(&spec, c.seed.unwrap_or(spec.dataset_seed), &c.out)?;
            println!("wrote {} scenes to {}", manifest.scenes.len(), c.out.display());
        }
        Command::Train { common: c, variant, dataset_seed, resume, stop_at } => {
            let spec = ExperimentSpec::load(&c.spec)?;
            let req = TrainRequest {
                variant,
                seed: c.seed.unwrap_or(0),
                dataset_seed,
                out: c.out.clone(),
                resume,
                stop_at,
                deterministic: c.deterministic,
            };
            let outcome = harness::cmd_train(&spec, &req)?;
            let fmt =
                |r: &Option<sosd_core::train::LossRecord>| r.as_ref().map_or("-".into(), |r| format!("{:.5}", r.loss));
            println!(
                "trained {} to step {}; loss {} -> {}; checkpoint {}",
                variant.name(),
                outcome.trainer.step,
                fmt(&outcome.first),
                fmt(&outcome.last),
                outcome.final_checkpoint.display()
            );
        }
        Command::Eval { common: c, checkpoint, oracle, split, dump_predictions } => {
            let mut spec = ExperimentSpec::load(&c.spec)?;
            if let Some(s) = split {
                spec.eval.split = s;
            }
            spec.eval.dump_predictions |= dump_predictions;
            let ckpt = if oracle { None } else { checkpoint.as_deref() };
            let report = harness::cmd_eval(&spec, ckpt, c.seed, &c.out)?;
            if let Some(s) = &report.segmentation {
                println!("miou {:.4}  mean acc {:.4}  pixel acc {:.4}", s.miou, s.mean_accuracy, s.pixel_accuracy);
            }
            if let Some(d) = &report.depth {
                println!("rel {:.4}  rms {:.4}  log10 {:.4}  δ1 {:.4}", d.rel, d.rms, d.log10, d.delta1);
            }
            println!("report {}", c.out.join("report.json").display());
        }
        Command::Ablate(c) => {
            let spec = ExperimentSpec::load(&c.spec)?;
            info!("ablation: {} variants x {} seeds on {threads} threads", spec.variants.len(), spec.seeds.len());
            let report = harness::cmd_ablate(&spec, c.seed, &c.out, threads, c.deterministic)?;
            print!("{}", harness::text_table(&report));
            if !report.passed() {
                warn!("the ablation ordering checks did not all hold; see ablation.txt");
            }
        }
        Command::Dump { common: c, split, count } => {
            let spec = ExperimentSpec::load(&c.spec)?;
            let n = harness::cmd_dump(&spec, c.seed, split, count, &c.out)?;
            println!("dumped {n} scenes to {}", c.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
