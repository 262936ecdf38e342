mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "lranker", version, about = "Train and evaluate best-of-K response rankers on cached hidden-state features")]
struct Cli {
    /// Worker threads for batched training and evaluation.
    #[arg(long, global = true, env = "LR_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a ranker and write an LRCK checkpoint.
    Train(TrainCmd),
    /// Best-of-K selection accuracy of a checkpoint on a dataset.
    Eval(EvalCmd),
    /// Grid search over batch size, optimizer and schedule.
    Sweep(SweepCmd),
    /// Selection accuracy as a function of K.
    Curve(CurveCmd),
    /// Train and evaluate one architectural ablation.
    Ablate(AblateCmd),
    /// Print a checkpoint's kinds, dimensions and parameter count.
    Inspect(InspectCmd),
    /// Write a synthetic dataset with a planted linear rule.
    Synth(SynthCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RankerArg {
    Listwise,
    Pointwise,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Cls,
    Reg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RelevanceArg {
    Cosine,
    Learnable,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Full,
    NoProjection,
    NoInstruction,
    NoMlpBlock,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

/// Training recipe flags. Unset flags fall back to `--config`, then to the
/// built-in defaults.
#[derive(Debug, Args)]
pub struct RecipeArgs {
    /// JSON file with a (partial) training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ranker: Option<RankerArg>,
    /// Also picks the matching relevance (cls: cosine, reg: learnable)
    /// unless --relevance is given.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub relevance: Option<RelevanceArg>,
    #[arg(long)]
    pub d_proj: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD only.
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Candidates per group (K).
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Groups sampled per query (N).
    #[arg(long)]
    pub groups_per_query: Option<usize>,
    /// Multiplier on cosine logits.
    #[arg(long)]
    pub logit_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub recipe: RecipeArgs,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-batch training log as JSON.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long, alias = "checkpoint")]
    pub ckpt: PathBuf,
    #[arg(long, alias = "dataset")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub group_size: usize,
    /// Groups drawn per query.
    #[arg(long, default_value_t = 16)]
    pub trials: usize,
    #[arg(long, default_value_t = ranker_core::training::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long)]
    pub data: PathBuf,
    /// `default` for the built-in 40-point grid, or a JSON grid file.
    #[arg(long, default_value = "default")]
    pub grid: String,
    #[command(flatten)]
    pub recipe: RecipeArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveCmd {
    #[arg(long, alias = "checkpoint")]
    pub ckpt: PathBuf,
    #[arg(long, alias = "dataset")]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,10,16")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = ranker_core::evaluation::DEFAULT_TRIALS_PER_K)]
    pub trials: usize,
    #[arg(long, default_value_t = ranker_core::training::DEFAULT_SEED)]
    pub seed: u64,
    /// CSV output (`K,mean,std`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report with the label-oracle curve.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub recipe: RecipeArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also keep the trained ablation checkpoint.
    #[arg(long)]
    pub ckpt_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectCmd {
    #[arg(long, alias = "checkpoint")]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub d_model: usize,
    #[arg(long, default_value_t = 500)]
    pub queries: usize,
    #[arg(long, default_value_t = 40)]
    pub responses: usize,
    #[arg(long)]
    pub regression: bool,
    #[arg(long, default_value_t = ranker_core::training::DEFAULT_SEED)]
    pub seed: u64,
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    if cli.threads == 0 {
        return Err(Failure::Usage("--threads must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Failure::Run(format!("thread pool: {e}")))?;
    let ctx = commands::Context {
        argv,
        threads: cli.threads,
    };
    pool.install(|| match cli.command {
        Command::Train(c) => commands::train(&ctx, c),
        Command::Eval(c) => commands::eval(&ctx, c),
        Command::Sweep(c) => commands::sweep(&ctx, c),
        Command::Curve(c) => commands::curve(&ctx, c),
        Command::Ablate(c) => commands::ablate(&ctx, c),
        Command::Inspect(c) => commands::inspect(&ctx, c),
        Command::Synth(c) => commands::synth(&ctx, c),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lranker: error: {}", f.message().replace('\n', " "));
            ExitCode::from(f.code())
        }
    }
}
