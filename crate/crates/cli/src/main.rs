//! `rllr`: run the pipeline one stage at a time inside a run directory.

mod config;
mod report;
mod run;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rllr::ppo::Mode;
use rllr::synthlang::TaskId;

use config::RunConfig;
use run::{refuse, Refusal, RunDir, CONFIG_FILE};
use stages::RmChoice;

#[derive(Parser)]
#[command(name = "rllr", version, about = "Label-sensitive reward pipeline on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run directory; stages read and write below it.
    #[arg(long)]
    run: PathBuf,
    /// Config file; defaults to the run's config.txt, then built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.tasks; repeat for several tasks.
    #[arg(long = "task")]
    tasks: Vec<TaskId>,
    /// Overwrite outputs of a stage that already ran.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Label,
    Rationale,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, test and unsupervised pools.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        n_unsup: Option<usize>,
    },
    /// Fine-tune the policy on oracle answers.
    TrainSft {
        #[command(flatten)]
        common: Common,
    },
    /// Sample, rank and classify answer pairs from the SFT policy.
    MakePairs {
        #[command(flatten)]
        common: Common,
    },
    /// Build label-sensitive pairs with wrong labels.
    GenLabelPairs {
        #[command(flatten)]
        common: Common,
    },
    /// Train the label and/or rationale reward model.
    TrainRm {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        role: RoleArg,
    },
    /// Optimize the policy with PPO against the chosen reward.
    TrainPpo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score every available policy on the test pool.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Collect evaluation results into run-level tables.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: rllr::Error| e.to_string())
}

fn resolve(common: &Common, run: &RunDir) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None if run.exists(CONFIG_FILE) => RunConfig::load(&run.path(CONFIG_FILE))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if !common.tasks.is_empty() {
        cfg.run.tasks = common.tasks.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    let common = match &command {
        Command::GenData { common, .. }
        | Command::TrainSft { common }
        | Command::MakePairs { common }
        | Command::GenLabelPairs { common }
        | Command::TrainRm { common, .. }
        | Command::TrainPpo { common, .. }
        | Command::Evaluate { common }
        | Command::Report { common } => common.clone(),
    };
    let run = RunDir::new(&common.run);
    // an unusable config is a precondition failure like a missing input
    let mut cfg = resolve(&common, &run).map_err(|e| Refusal(format!("{e:#}")))?;
    let _lock = run.lock()?;
    let force = common.force;
    match command {
        Command::GenData { n_train, n_test, n_unsup, .. } => {
            cfg.data.n_train = n_train.unwrap_or(cfg.data.n_train);
            cfg.data.n_test = n_test.unwrap_or(cfg.data.n_test);
            cfg.data.n_unsup = n_unsup.unwrap_or(cfg.data.n_unsup);
            let text = cfg.to_text();
            if run.exists(CONFIG_FILE) && !force && std::fs::read_to_string(run.path(CONFIG_FILE))? != text {
                return refuse(format!("{} holds a different config; pass --force to replace it", run.path(CONFIG_FILE).display()));
            }
            std::fs::write(run.path(CONFIG_FILE), text)?;
            stages::gen_data(&run, &cfg, force)
        }
        Command::TrainSft { .. } => stages::train_sft(&run, &cfg, force),
        Command::MakePairs { .. } => stages::make_pairs(&run, &cfg, force),
        Command::GenLabelPairs { .. } => stages::gen_label_pairs(&run, &cfg, force),
        Command::TrainRm { role, .. } => {
            let choice = match role {
                RoleArg::Label => RmChoice::Label,
                RoleArg::Rationale => RmChoice::Rationale,
                RoleArg::Both => RmChoice::Both,
            };
            stages::train_rm(&run, &cfg, choice, force)
        }
        Command::TrainPpo { mode, iterations, beta, lambda, .. } => {
            cfg.ppo.iterations = iterations.unwrap_or(cfg.ppo.iterations);
            cfg.ppo.beta = beta.unwrap_or(cfg.ppo.beta);
            cfg.ppo.lambda = lambda.or(cfg.ppo.lambda);
            cfg.ppo.mode = mode.unwrap_or(cfg.ppo.mode);
            cfg.validate().map_err(|e| Refusal(format!("{e:#}")))?;
            stages::train_ppo(&run, &cfg, cfg.ppo.mode, force)
        }
        Command::Evaluate { .. } => stages::evaluate(&run, &cfg),
        Command::Report { .. } => report::report(&run, &cfg),
    }
}

/// Parses `args`, runs the command and returns the exit code and message.
fn run_cli<I, T>(args: I) -> (u8, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        // usage errors are refusals; --help and --version are not errors
        Err(e) => return (if e.use_stderr() { 2 } else { 0 }, e.render().to_string()),
    };
    match execute(cli.command) {
        Ok(()) => (0, String::new()),
        Err(e) => (if e.downcast_ref::<Refusal>().is_some() { 2 } else { 1 }, format!("error: {e:#}")),
    }
}

fn main() -> ExitCode {
    let (code, msg) = run_cli(std::env::args_os());
    if code == 0 {
        print!("{msg}");
    } else {
        eprintln!("{}", msg.trim_end());
    }
    ExitCode::from(code)
}
