use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sercross::cli::{
    cmd_augment, cmd_eval, cmd_pipeline, cmd_prepare, cmd_report, cmd_synth, cmd_train, default_out_root, CliError,
    EvalOptions, PipelineConfig, PrepareOptions, OUT_ENV,
};
use sercross::corpus::{FoldStrategy, LabelMap};
use sercross::eval::ReportOptions;
use sercross::frontend::FbankConfig;
use sercross::util::strip_json_comments;

/// Cross-corpus speech emotion recognition experiments.
#[derive(Parser)]
#[command(name = "sercross", version, after_help = format!(
    "Outputs default to subdirectories of ${OUT_ENV} (or ./runs when unset).\n\
     Exit codes: 0 ok, 2 invalid input, 3 runtime failure."
))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map labels and build a fold plan.
    Prepare(PrepareArgs),
    /// Expand a manifest with an augmentation recipe.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// speed, volume, 2sp-2vol or 7vars
        #[arg(long)]
        recipe: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every fold of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue interrupted folds from their last finished epoch.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on one or more test manifests.
    Eval(EvalArgs),
    /// Assemble the cross-corpus table from run results.
    Report(ReportArgs),
    /// Synthesize, train and report from one pipeline config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// direct, iemocap, mosei or enterface
    #[arg(long, default_value = "direct")]
    label_map: String,
    /// Strategy name (speaker-rotation, session-holdout, proportional,
    /// split-80-20) or a JSON object with its parameters.
    #[arg(long)]
    strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "test", required = true)]
    tests: Vec<PathBuf>,
    #[arg(long)]
    label_map: Option<String>,
    /// Limit the argmax to classes present in each test set.
    #[arg(long)]
    restrict_classes: bool,
    /// Front-end config JSON; defaults to the run's stored config.
    #[arg(long)]
    fbank: Option<PathBuf>,
    #[arg(long)]
    model_tag: Option<String>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories or glob patterns of result.json files.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Preferred column order, comma separated.
    #[arg(long, value_delimiter = ',')]
    model_order: Vec<String>,
    /// Preferred row order, comma separated.
    #[arg(long, value_delimiter = ',')]
    test_order: Vec<String>,
    /// Flag cells with fewer folds than this.
    #[arg(long)]
    expected_folds: Option<usize>,
    /// Note in the legend that evaluation restricted the class set.
    #[arg(long)]
    restricted_classes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<FoldStrategy, CliError> {
    if s.trim_start().starts_with('{') {
        serde_json::from_str(s).map_err(|e| CliError::validation(format!("strategy: {e}")))
    } else {
        Ok(s.parse()?)
    }
}

fn parse_label_map(s: &str) -> Result<LabelMap, CliError> {
    s.parse().map_err(CliError::validation)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned())
}

/// Directory holding a manifest, used to name default outputs.
fn corpus_dir_name(manifest: &Path) -> String {
    manifest
        .parent()
        .and_then(Path::file_name)
        .map_or_else(|| stem(manifest), |s| s.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let root = default_out_root();
    match cli.command {
        Command::Synth { spec, out } => {
            let out = out.unwrap_or_else(|| root.join("corpora").join(stem(&spec)));
            println!("{}", cmd_synth(&spec, &out)?.display());
        }
        Command::Prepare(a) => {
            let out = a.out.unwrap_or_else(|| root.join("prepared").join(corpus_dir_name(&a.manifest)));
            let opts = PrepareOptions {
                label_map: parse_label_map(&a.label_map)?,
                strategy: parse_strategy(&a.strategy)?,
                manifest: a.manifest,
                seed: a.seed,
                out,
            };
            println!("{}", cmd_prepare(&opts)?.display());
        }
        Command::Augment {
            manifest,
            recipe,
            seed,
            out,
        } => {
            let out = out.unwrap_or_else(|| root.join("augmented").join(format!("{}-{recipe}", corpus_dir_name(&manifest))));
            println!("{}", cmd_augment(&manifest, &recipe, seed, &out)?.display());
        }
        Command::Train { config, out, resume } => {
            println!("{}", cmd_train(&config, out.as_deref(), resume)?.display());
        }
        Command::Eval(a) => {
            let fbank = match &a.fbank {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
                    Some(serde_json::from_str::<FbankConfig>(&strip_json_comments(&text))?)
                }
                None => None,
            };
            let opts = EvalOptions {
                out: a.out.unwrap_or_else(|| root.join("eval")),
                label_map: a.label_map.as_deref().map(parse_label_map).transpose()?,
                checkpoint: a.checkpoint,
                tests: a.tests,
                restrict_classes: a.restrict_classes,
                fbank,
                model_tag: a.model_tag,
                fold: a.fold,
            };
            for p in cmd_eval(&opts)? {
                println!("{}", p.display());
            }
        }
        Command::Report(a) => {
            let options = ReportOptions {
                model_order: a.model_order,
                test_order: a.test_order,
                expected_folds: a.expected_folds,
                restricted_classes: a.restricted_classes,
            };
            let out = a.out.unwrap_or_else(|| root.join("report"));
            let report = cmd_report(&a.inputs, &options, &out)?;
            print!("{}", report.render_text());
        }
        Command::Pipeline { config, out, resume } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = cmd_pipeline(&cfg, out.as_deref(), resume)?;
            print!("{}", report.render_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
