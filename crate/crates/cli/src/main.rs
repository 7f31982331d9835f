mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nesphere::hypersphere::SphereType;
use nesphere::Error;

/// Named-entity hyperspheres in word-embedding spaces.
#[derive(Debug, Parser)]
#[command(name = "nesphere", version, args_override_self = true)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "NESPHERE_THREADS", default_value_t = 0)]
    threads: usize,

    /// Directory receiving the outputs of the command.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// File of `key = value` lines read as flags; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one hypersphere per entity type from a dictionary.
    Fit(FitArgs),
    /// Learn a linear map from a source to a target embedding space.
    Align(AlignArgs),
    /// Carry a hypersphere through a map and score it in the target language.
    Transfer(TransferArgs),
    /// Write hypersphere z-score features for every token of a corpus.
    Featurize(FeaturizeArgs),
    /// Train a CRF tagger.
    TagTrain(TagTrainArgs),
    /// Score one or two taggers on a corpus.
    TagEval(TagEvalArgs),
    /// Project dictionary entries or a whole vocabulary to 2-D or 3-D.
    Project(ProjectArgs),
}

impl Command {
    const NAMES: [&'static str; 7] = [
        "fit",
        "align",
        "transfer",
        "featurize",
        "tag-train",
        "tag-eval",
        "project",
    ];
}

#[derive(Debug, Clone, Args)]
struct EmbeddingArgs {
    /// Text embedding file.
    #[arg(long)]
    embeddings: PathBuf,
    /// Read at most this many vectors.
    #[arg(long)]
    limit: Option<usize>,
    /// Retry failed lookups with the lowercased token.
    #[arg(long)]
    lowercase: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Center {
    Mean,
    Median,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Dictionary TSV (`type<TAB>surface`).
    #[arg(long)]
    dictionary: PathBuf,
    /// Sphere types to fit.
    #[arg(long, value_delimiter = ',', default_value = "Per,Loc,Org")]
    types: Vec<SphereType>,
    #[arg(long, value_enum, default_value_t = Center::Mean)]
    center: Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlignMode {
    Adversarial,
    Procrustes,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum)]
    mode: AlignMode,
    /// `source<TAB>target` pairs: training pairs for procrustes, evaluation pairs otherwise.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Separate evaluation pairs; defaults to `--lexicon`.
    #[arg(long)]
    eval_lexicon: Option<PathBuf>,
    /// Neighbours considered by the accuracy report.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 500)]
    critic_hidden_size: usize,
    #[arg(long, default_value_t = 0.01)]
    clip_value: f64,
    #[arg(long, default_value_t = 5)]
    critic_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long)]
    normalize_inputs: bool,
    #[arg(long, default_value_t = 0.0)]
    orthogonality: f64,
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Alignment map JSON.
    #[arg(long)]
    map: PathBuf,
    /// Source-language hypersphere JSON.
    #[arg(long)]
    sphere: PathBuf,
    /// Source embeddings; words inside the sphere set the radius scale.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Target-language dictionary used for scoring.
    #[arg(long)]
    target_dictionary: PathBuf,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    lowercase: bool,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Directory holding `sphere_Per.json`, `sphere_Loc.json` and `sphere_Org.json`.
    #[arg(long)]
    spheres: PathBuf,
    /// CoNLL-style corpus (`token<TAB>tag`, blank line between sentences).
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Debug, Args)]
struct TagTrainArgs {
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[arg(long)]
    corpus: PathBuf,
    /// Enables the hypersphere feature block.
    #[arg(long)]
    spheres: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long)]
    no_shuffle: bool,
    /// Model file name inside the output directory.
    #[arg(long, default_value = "model.json")]
    model_name: String,
}

#[derive(Debug, Args)]
struct TagEvalArgs {
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[arg(long)]
    corpus: PathBuf,
    /// Model without the hypersphere block.
    #[arg(long)]
    baseline: PathBuf,
    /// Model with the hypersphere block.
    #[arg(long)]
    enhanced: Option<PathBuf>,
    /// Required by models using the hypersphere block.
    #[arg(long)]
    spheres: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Project dictionary entries; without it every vocabulary word is projected.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    dims: u8,
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(|source| Error::Io {
        path: cli.out_dir.clone(),
        source,
    })?;
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Fit(args) => commands::fit(&args, out),
        Command::Align(args) => commands::align(&args, cli.seed, out),
        Command::Transfer(args) => commands::transfer(&args, out),
        Command::Featurize(args) => commands::featurize(&args, out),
        Command::TagTrain(args) => commands::tag_train(&args, cli.seed, out),
        Command::TagEval(args) => commands::tag_eval(&args, out),
        Command::Project(args) => commands::project(&args, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand(std::env::args_os().collect(), &Command::NAMES) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}
