use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vgos::commands::{self, Ablation, Context};
use vgos::{CliError, CliResult, Outcome, RunConfig};

#[derive(Parser)]
#[command(name = "vgos", version, about = "Long-tailed OOD detection with vMF outlier synthesis")]
struct Cli {
    /// Flat `key = value` config file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write train, in-distribution test and OOD test feature files.
    SynthData,
    /// Train a model; writes a checkpoint, its sidecar and a training report.
    Train {
        /// Directory holding train.vgfs (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        no_dgs: bool,
        #[arg(long)]
        no_tla: bool,
        #[arg(long)]
        no_epr: bool,
    },
    /// Score ID and OOD sets and write the metric report.
    Eval {
        /// Defaults to checkpoint.vgos in --out.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory holding id-test.vgfs and ood-*.vgfs (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        /// In-distribution test file; overrides the one in --data.
        #[arg(long)]
        id: Option<PathBuf>,
        /// OOD test files; repeatable. Overrides discovery in --data.
        #[arg(long)]
        ood: Vec<PathBuf>,
    },
    /// Dump a class-balanced batch of synthesized outliers to a feature file.
    SynthesizeOutliers {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit the mixture on this model's features instead of the raw inputs.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare sampled vMF displacements with the chi-square law.
    VerifyTheorem,
    /// Train and evaluate once per annulus in `sweep_grid`.
    SweepAnnulus {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_sign_bug: Option<String>,
    },
    /// Merge metric reports into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn build_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn cap_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("VGOS_THREADS") else { return Ok(()) };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("VGOS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("VGOS_THREADS: {e}")))
}

fn run(cli: Cli) -> CliResult<Outcome> {
    cap_threads()?;
    let ctx = Context::new(build_config(&cli)?, &cli.out)?;
    let dir = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| cli.out.clone());
    match &cli.cmd {
        Cmd::SynthData => commands::synth_data(&ctx),
        Cmd::Train { data, no_dgs, no_tla, no_epr } => {
            commands::train(&ctx, &dir(data), Ablation { no_dgs: *no_dgs, no_tla: *no_tla, no_epr: *no_epr })
        }
        Cmd::Eval { checkpoint, data, id, ood } => {
            let data = dir(data);
            let ckpt = checkpoint.clone().unwrap_or_else(|| cli.out.join(commands::CHECKPOINT_FILE));
            let id = id.clone().unwrap_or_else(|| data.join(commands::ID_TEST_FILE));
            let ood = if ood.is_empty() { commands::discover_ood_files(&data)? } else { ood.clone() };
            commands::eval(&ctx, &ckpt, &id, &ood)
        }
        Cmd::SynthesizeOutliers { data, checkpoint } => {
            commands::synthesize_outliers(&ctx, &dir(data), checkpoint.as_deref())
        }
        Cmd::VerifyTheorem => commands::verify_theorem(&ctx),
        Cmd::SweepAnnulus { data } => commands::sweep_annulus(&ctx, &dir(data)),
        Cmd::Gradcheck { inject_sign_bug } => {
            let bug = inject_sign_bug.as_deref().map(commands::parse_component).transpose()?;
            commands::gradcheck(&ctx, bug)
        }
        Cmd::Report { inputs } => commands::report(&ctx, inputs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            match outcome.failure {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(CliError::EXIT_NUMERIC as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
