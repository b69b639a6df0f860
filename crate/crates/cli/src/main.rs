//! `smb`: generate synthetic re-ID data, train the illumination model bank,
//! evaluate it, and run the CycleDiffusion demo.
//!
//! Exit status is 0 on success, 1 for invalid input or settings and 2 when a
//! computation fails.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Run;
use settings::Settings;

#[derive(Parser)]
#[command(name = "smb", version, about = "Illumination-routed re-ID model bank and CycleDiffusion tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Feature dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,

    /// Flat `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the JSON report instead of the table.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled source domain or a simulated target domain.
    Gen(GenArgs),
    /// Estimate the most common target illuminations and train the switch.
    TrainSwitch(TrainSwitchArgs),
    /// Fit per-condition encoders and the metric bank.
    LearnMetrics(LearnArgs),
    /// Split a feature file into query and gallery.
    Split(SplitArgs),
    /// Score a split with the model bank, one of its single models, or Euclidean distance.
    Eval(EvalArgs),
    /// Run the whole experiment on generated data.
    Pipeline(PipelineArgs),
    /// Translate between Gaussian domains for several encoding depths.
    DiffusionDemo(DemoArgs),
}

#[derive(Args)]
struct GeneratorArgs {
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    backgrounds: Option<usize>,
    #[arg(long = "zrot")]
    zrotations: Option<usize>,
    /// Comma-separated illumination labels.
    #[arg(long)]
    illuminations: Option<String>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct GenArgs {
    /// `source` or `target`.
    #[arg(long)]
    domain: Option<String>,
    /// Target label weights, aligned with the illumination list.
    #[arg(long)]
    weights: Option<String>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Args)]
struct TrainSwitchArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Number of conditions N.
    #[arg(long)]
    conditions: Option<usize>,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    source: PathBuf,
    /// Comma-separated source labels, one per condition.
    #[arg(long)]
    labels: Option<String>,
    /// `whitening` or `identity`.
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    features: PathBuf,
    /// prid, viper, cuhk01, ilids, market or generic[:fraction].
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Directory holding switch.csv, encoders.csv and bank.csv.
    #[arg(long)]
    model: Option<PathBuf>,
    /// `smb`, `euclidean` or `single:<n>`.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated CMC ranks.
    #[arg(long)]
    ranks: Option<String>,
    /// `none` or `same-camera-same-identity`.
    #[arg(long)]
    exclusion: Option<String>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long)]
    conditions: Option<usize>,
    #[arg(long)]
    target_identities: Option<usize>,
    /// Comma-separated target labels.
    #[arg(long)]
    target_labels: Option<String>,
    /// Comma-separated target label weights.
    #[arg(long)]
    target_weights: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args)]
struct DemoArgs {
    /// Total diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

type Flags = Vec<(&'static str, String)>;

fn push<T: ToString>(flags: &mut Flags, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        flags.push((key, v.to_string()));
    }
}

impl GeneratorArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "identities", &self.identities);
        push(f, "backgrounds", &self.backgrounds);
        push(f, "zrotations", &self.zrotations);
        push(f, "illuminations", &self.illuminations);
        push(f, "noise", &self.noise);
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut f: Flags = Vec::new();
    push(&mut f, "seed", &cli.seed);
    push(&mut f, "dim", &cli.dim);
    match &cli.command {
        Command::Gen(a) => {
            push(&mut f, "domain", &a.domain);
            push(&mut f, "weights", &a.weights);
            a.generator.flags(&mut f);
        }
        Command::TrainSwitch(a) => push(&mut f, "conditions", &a.conditions),
        Command::LearnMetrics(a) => {
            push(&mut f, "labels", &a.labels);
            push(&mut f, "encoder", &a.encoder);
            push(&mut f, "ridge", &a.ridge);
        }
        Command::Split(a) => push(&mut f, "protocol", &a.protocol),
        Command::Eval(a) => {
            push(&mut f, "method", &a.method);
            push(&mut f, "ranks", &a.ranks);
            push(&mut f, "exclusion", &a.exclusion);
        }
        Command::Pipeline(a) => {
            a.generator.flags(&mut f);
            push(&mut f, "conditions", &a.conditions);
            push(&mut f, "target_identities", &a.target_identities);
            push(&mut f, "target_labels", &a.target_labels);
            push(&mut f, "target_weights", &a.target_weights);
            push(&mut f, "protocol", &a.protocol);
        }
        Command::DiffusionDemo(a) => {
            push(&mut f, "steps", &a.steps);
            push(&mut f, "samples", &a.samples);
        }
    }
    let run = Run {
        settings: Settings::load(cli.config.as_deref(), f)?,
        out: cli.out.clone(),
        json: cli.json,
    };
    match &cli.command {
        Command::Gen(_) => commands::gen(&run),
        Command::TrainSwitch(a) => commands::train_switch(&run, &a.source, &a.target),
        Command::LearnMetrics(a) => commands::learn_metrics(&run, &a.source),
        Command::Split(a) => commands::split(&run, &a.features),
        Command::Eval(a) => commands::eval(&run, &a.features, &a.split, a.model.as_deref()),
        Command::Pipeline(_) => commands::run_pipeline(&run),
        Command::DiffusionDemo(_) => commands::diffusion_demo(&run),
    }
}

/// 2 for computation failures reported by the library, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<smb_core::Error>()) {
        Some(core) if !core.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
