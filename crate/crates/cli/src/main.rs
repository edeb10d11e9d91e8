use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uvap_core::adjust_infer::InferenceRequest;
use uvap_core::error::Error;
use uvap_core::evalharness::DEFAULT_LAMBDAS;
use uvap_core::runhub::{runs_root, Run, RunConfig, Stage, HOME_ENV};

#[derive(Parser, Debug)]
#[command(name = "uvap", version, about = "Attribute-level personalization on a toy diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Run id under the runs root, or a path to the run directory.
    #[arg(long)]
    run: String,
    /// JSON configuration; applied when the run is created or changed.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the corpus and reference images.
    Synth(RunArgs),
    /// Train the base text-to-image model.
    TrainBase(RunArgs),
    /// Bind the identifier to the reference concept.
    Prelearn(RunArgs),
    /// Synthesize prompts, generate and score candidates.
    Augment(RunArgs),
    /// Curate the training sets without a human.
    CurateAuto {
        #[command(flatten)]
        run: RunArgs,
        /// Samples per set; defaults to the configured m.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Learn the target and non-target tokens.
    DualTrain(RunArgs),
    /// Sample with the adjusted identifier embedding.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        prompt: String,
        /// Defaults to the configured lambda.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Output folder under samples/.
        #[arg(long, default_value = "cli")]
        name: String,
    },
    /// Run the evaluation suite.
    Eval(RunArgs),
    /// Evaluate the novel-concept prompts across lambda values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Serve the curation API.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Run every remaining stage headlessly.
    Pipeline(RunArgs),
}

const EXIT_FAILURE: u8 = 1;
const EXIT_STAGE: u8 = 3;

fn open(args: &RunArgs) -> Result<Run, Error> {
    let path = runs_root().join(&args.run);
    let config = match &args.config {
        Some(p) => Some(RunConfig::load(p)?),
        None if args.seed_override.is_some() && path.exists() => Some(Run::open(&path)?.config),
        None => None,
    };
    let config = match (config, args.seed_override) {
        (Some(c), Some(seed)) => Some(c.with_seed(seed)),
        (None, Some(seed)) => Some(RunConfig::default().with_seed(seed)),
        (c, None) => c,
    };
    Run::open_or_create(&path, config)
}

fn done(run: &Run) {
    println!("{}: {}", run.dir.id(), run.state.stage.name());
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(a) => {
            let mut run = open(&a)?;
            run.synth()?;
            println!("corpus written to {}", run.dir.corpus().display());
        }
        Command::TrainBase(a) => {
            let mut run = open(&a)?;
            run.train_base()?;
            done(&run);
        }
        Command::Prelearn(a) => {
            let mut run = open(&a)?;
            run.prelearn()?;
            done(&run);
        }
        Command::Augment(a) => {
            let mut run = open(&a)?;
            run.augment()?;
            done(&run);
        }
        Command::CurateAuto { run: a, m } => {
            let mut run = open(&a)?;
            let (plus, minus) = match m {
                Some(m) => {
                    run.dir.ensure_unlocked()?;
                    run.finalize(m)?
                }
                None => run.curate_auto()?,
            };
            println!("curated {plus} plus and {minus} minus samples");
            done(&run);
        }
        Command::DualTrain(a) => {
            let mut run = open(&a)?;
            run.dual_train()?;
            done(&run);
        }
        Command::Sample {
            run: a,
            prompt,
            lambda,
            seed,
            count,
            name,
        } => {
            let run = open(&a)?;
            let inf = &run.config.inference;
            let mut req = InferenceRequest::new(&prompt, lambda.unwrap_or(inf.lambda), seed, count);
            req.steps = inf.steps;
            req.guidance = inf.guidance;
            let images = run.sample(&req, &name)?;
            println!("wrote {} images to {}", images.len(), run.dir.samples().join(&name).display());
        }
        Command::Eval(a) => {
            let mut run = open(&a)?;
            let summary = run.evaluate()?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
            done(&run);
        }
        Command::Sweep { run: a, lambdas } => {
            let run = open(&a)?;
            let lambdas = lambdas.unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
            for r in run.sweep(&lambdas)? {
                let lambda = r.report.condition.lambda.unwrap_or(f64::NAN);
                println!(
                    "lambda {lambda:.2}: target accuracy {:.3}, leakage {:.3}",
                    r.report.target_accuracy, r.report.leakage_rate
                );
            }
        }
        Command::Serve { run: a, bind } => {
            let run = open(&a)?;
            run.state.require(Stage::CandidatesReady)?;
            let root = run.dir.root.parent().map(PathBuf::from).unwrap_or_default();
            let id = run.dir.id();
            drop(run);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
                path: PathBuf::from(bind.to_string()),
                source: e,
            })?;
            rt.block_on(uvap_server::serve(&root, &id, bind))?;
        }
        Command::Pipeline(a) => {
            let mut run = open(&a)?;
            let summary = run.pipeline()?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
            done(&run);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    log::debug!("runs root {} (from {HOME_ENV})", runs_root().display());
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Stage(_)) { EXIT_STAGE } else { EXIT_FAILURE })
        }
    }
}
