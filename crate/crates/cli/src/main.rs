//! `agentimpute` command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 data or parse error,
//! 3 strategy failure, 4 pipeline finished with untreated columns.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agentimpute::amputation::{format_summary, reports_to_csv, run_trials, EvalError, MaskSpec, Mechanism};
use agentimpute::imputation::{default_predictors, Distance, Fallback};
use agentimpute::pipeline::{run_pipeline, PipelineError, PipelinePlan, PlanError};
use agentimpute::tabular::profile;
use agentimpute::{impute, parse_csv, CsvOptions, ImputeError, Strategy, StrategyConfig, Table};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_STRATEGY: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "agentimpute", version, about = "Missing-value profiling, imputation and strategy selection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Cell text read as missing, repeatable. Empty cells are always missing.
    #[arg(
        long = "missing-token",
        global = true,
        env = "AGENTIMPUTE_MISSING_TOKENS",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    missing_tokens: Vec<String>,
    /// Print only the machine-readable payload on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Per-column missingness and summary statistics.
    Profile {
        input: PathBuf,
        /// The first row holds data, not column names.
        #[arg(long)]
        no_header: bool,
    },
    /// Impute one column with one method.
    Impute(ImputeArgs),
    /// Score methods by masking and restoring observed cells.
    Benchmark(BenchmarkArgs),
    /// Run the agent pipeline described by a plan file.
    Pipeline { plan: PathBuf },
}

#[derive(Args)]
struct ImputeArgs {
    input: PathBuf,
    #[arg(long)]
    method: Strategy,
    #[arg(long)]
    target: String,
    /// Comma-separated predictor columns. Defaults depend on the method.
    #[arg(long, value_delimiter = ',')]
    predictors: Vec<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
    distance: DistanceArg,
    #[arg(long, value_enum, default_value_t = FallbackArg::MeanMode)]
    fallback: FallbackArg,
    #[arg(long, default_value_t = 1)]
    donor_pool_min: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Donor source for cold deck.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Imputed CSV destination. Defaults to stdout without --json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Result JSON destination. With --json the result goes to stdout.
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    input: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value_t = MechanismArg::Mcar)]
    mechanism: MechanismArg,
    /// Driver column for MAR.
    #[arg(long)]
    driver: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    rate: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Comma-separated methods. Defaults to every method suited to the target.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the flat CSV export here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Euclidean,
    Manhattan,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    MeanMode,
    Error,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Mcar,
    Mar,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ImputeError> for Failure {
    fn from(e: ImputeError) -> Self {
        let code = if e.is_data_error() { EXIT_DATA } else { EXIT_STRATEGY };
        Failure::new(code, e)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Impute(e) => e.into(),
            EvalError::InvalidSpec(_) => Failure::new(EXIT_USAGE, e),
            _ => Failure::new(EXIT_DATA, e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Plan(PlanError::Io { .. }) => EXIT_DATA,
            PipelineError::Plan(_) => EXIT_USAGE,
            PipelineError::Input { .. } | PipelineError::Data(_) => EXIT_DATA,
            PipelineError::Runtime(_) | PipelineError::Protocol(_) => EXIT_STRATEGY,
        };
        Failure::new(code, e)
    }
}

type Outcome = Result<u8, Failure>;

fn csv_options(global: &Global, has_header: bool) -> CsvOptions {
    let mut options = CsvOptions {
        has_header,
        ..CsvOptions::default()
    };
    if !global.missing_tokens.is_empty() {
        options.missing_tokens = global.missing_tokens.iter().cloned().collect();
        options.missing_tokens.insert(String::new());
    }
    options
}

fn read_table(path: &Path, options: &CsvOptions) -> Result<Table, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_DATA, format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, options).map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::new(EXIT_DATA, format!("cannot write {}: {e}", path.display())))
}

fn cmd_profile(global: &Global, input: &Path, no_header: bool) -> Outcome {
    let table = read_table(input, &csv_options(global, !no_header))?;
    let report = profile(&table).map_err(|e| Failure::new(EXIT_DATA, e))?;
    if global.json {
        println!("{}", serde_json::to_string(&report).expect("profile serializes"));
    } else {
        println!("{}", serde_json::to_string_pretty(&report).expect("profile serializes"));
    }
    Ok(0)
}

fn cmd_impute(global: &Global, args: &ImputeArgs) -> Outcome {
    let options = csv_options(global, true);
    let table = read_table(&args.input, &options)?;
    let reference = args.reference.as_deref().map(|p| read_table(p, &options)).transpose()?;
    let predictors = if args.predictors.is_empty() {
        default_predictors(&table, &args.target, args.method)
    } else {
        args.predictors.clone()
    };
    let config = StrategyConfig {
        method: args.method,
        k: args.k,
        distance: match args.distance {
            DistanceArg::Euclidean => Distance::Euclidean,
            DistanceArg::Manhattan => Distance::Manhattan,
        },
        predictors,
        donor_pool_min: args.donor_pool_min,
        fallback: match args.fallback {
            FallbackArg::MeanMode => Fallback::MeanMode,
            FallbackArg::Error => Fallback::Error,
        },
        seed: args.seed,
    };
    eprintln!("seed: {}", args.seed);
    let result = impute(&table, &args.target, &config, reference.as_ref())?;
    let csv = result.table.to_csv("");
    let json = result.to_json();
    match &args.out {
        Some(p) => write(p, &csv)?,
        None if !global.json => print!("{csv}"),
        None => {}
    }
    if let Some(p) = &args.result {
        write(p, &(json.clone() + "\n"))?;
    }
    if global.json {
        println!("{json}");
    } else {
        let fallbacks = result.log.iter().filter(|c| c.fallback).count();
        eprintln!(
            "imputed {} cell(s) of {} with {} ({} by fallback)",
            result.log.len(),
            args.target,
            args.method,
            fallbacks
        );
    }
    Ok(0)
}

fn cmd_benchmark(global: &Global, args: &BenchmarkArgs) -> Outcome {
    let table = read_table(&args.input, &csv_options(global, true))?;
    let target = table.column(&args.target).map_err(|e| Failure::new(EXIT_DATA, e))?;
    let complete: Vec<usize> = (0..table.n_rows()).filter(|&r| !target.is_missing(r)).collect();
    if complete.len() < table.n_rows() {
        eprintln!(
            "benchmarking on the {} of {} rows where {} is observed",
            complete.len(),
            table.n_rows(),
            args.target
        );
    }
    let kind = target.kind();
    let table = table.select_rows(&complete);
    let strategies: Vec<Strategy> = if args.strategies.is_empty() {
        Strategy::ALL
            .into_iter()
            .filter(|s| s.supports(kind) && *s != Strategy::ColdDeck)
            .collect()
    } else {
        args.strategies.clone()
    };
    let configs: Vec<StrategyConfig> = strategies
        .iter()
        .map(|&s| {
            StrategyConfig::new(s)
                .with_k(args.k)
                .with_predictors(&default_predictors(&table, &args.target, s))
        })
        .collect();
    let spec = MaskSpec {
        mechanism: match args.mechanism {
            MechanismArg::Mcar => Mechanism::Mcar,
            MechanismArg::Mar => Mechanism::Mar,
        },
        rate: args.rate,
        target: args.target.clone(),
        driver: args.driver.clone(),
        seed: args.seed,
    };
    eprintln!("seed: {}", args.seed);
    let reports = run_trials(&table, &[spec], &configs, args.trials)?;
    if let Some(p) = &args.csv {
        write(p, &reports_to_csv(&reports))?;
    }
    if global.json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    } else {
        print!("{}", format_summary(&reports));
    }
    Ok(0)
}

fn cmd_pipeline(global: &Global, plan_path: &Path) -> Outcome {
    let mut plan = PipelinePlan::load(plan_path).map_err(PipelineError::from)?;
    if !global.missing_tokens.is_empty() {
        plan.missing_tokens = csv_options(global, true).missing_tokens.into_iter().collect();
    }
    eprintln!("seed: {}", plan.tournament.base_seed);
    let outcome = run_pipeline(&plan)?;
    let token = plan.missing_tokens.first().map_or("", String::as_str);
    outcome
        .write(&plan.output, token)
        .map_err(|e| Failure::new(EXIT_DATA, format!("cannot write outputs: {e}")))?;
    if global.json {
        print!("{}", outcome.report.to_json());
    } else {
        for entry in &outcome.report.columns {
            let s = &entry.selection;
            let chosen = s.chosen.map_or("-", |c| c.tag());
            println!("{:<20} {:<10} {}", s.column, s.status.as_str(), chosen);
        }
    }
    if outcome.untreated().is_empty() {
        Ok(0)
    } else {
        eprintln!("untreated columns: {}", outcome.untreated().join(", "));
        Ok(EXIT_PARTIAL)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Profile { input, no_header } => cmd_profile(&cli.global, input, *no_header),
        Command::Impute(args) => cmd_impute(&cli.global, args),
        Command::Benchmark(args) => cmd_benchmark(&cli.global, args),
        Command::Pipeline { plan } => cmd_pipeline(&cli.global, plan),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
