//! `scene2obj` — command-line pipeline for zero-shot object presence
//! prediction: extract relations from tagged text, build the context
//! matrix, predict per-image object presence from scene distributions,
//! evaluate, and rescore detections.

mod commands;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "scene2obj", version, about)]
struct Cli {
    /// Seed for every random stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Log level (off, error, warn, info, debug, trace). The
    /// SCENE2OBJ_LOG environment variable takes precedence.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    /// Worker thread cap; 0 uses all cores. Outputs are identical
    /// regardless of this setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract relation triples from a POS-tagged corpus.
    Extract(ExtractArgs),
    /// Count scene-object relations from a triples file.
    BuildMatrix(BuildMatrixArgs),
    /// Build the ground-truth distribution matrix from annotations.
    GtMatrix(GtMatrixArgs),
    /// Predict per-image object presence scores.
    Predict(PredictArgs),
    /// Report k-best scene recognition rates for a score file.
    SceneEval(SceneEvalArgs),
    /// Evaluate presence predictions against annotations.
    Evaluate(EvaluateArgs),
    /// Train per-class detection rescoring models.
    RescoreTrain(RescoreTrainArgs),
    /// Rescore detections with trained models.
    Rescore(RescoreArgs),
    /// Generate a synthetic dataset and run the whole pipeline on it.
    E2eSynthetic(E2eArgs),
}

#[derive(Args)]
pub struct ExtractArgs {
    /// Tagged corpus: `surface<TAB>pos[<TAB>lemma]`, blank line between
    /// sentences.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Lemma map `surface<TAB>lemma` applied to noun arguments.
    #[arg(long)]
    pub lemma_map: Option<PathBuf>,
    /// Optional dictionary of allowed relation phrases (one per line);
    /// absent means the lexical constraint is disabled.
    #[arg(long)]
    pub relation_dict: Option<PathBuf>,
    /// Custom POS tag mapping `tag<TAB>coarse`; defaults to the
    /// built-in Penn Treebank / UPOS table.
    #[arg(long)]
    pub tag_map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BuildMatrixArgs {
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long)]
    pub lemma_map: Option<PathBuf>,
    /// Replace counts of name-colliding scene/object pairs by the
    /// global maximum count.
    #[arg(long, default_value = "on", value_parser = parse_on_off)]
    pub self_similarity: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GtMatrixArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long)]
    pub lemma_map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Sparse context matrix produced by build-matrix or gt-matrix.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long)]
    pub lemma_map: Option<PathBuf>,
    /// Scene classifier scores (`image<TAB>scene<TAB>score`).
    #[arg(long, conflicts_with = "annotations")]
    pub scene_scores: Option<PathBuf>,
    /// Annotations providing ground-truth scene labels; requires
    /// --perfect-scene.
    #[arg(long, requires = "perfect_scene")]
    pub annotations: Option<PathBuf>,
    /// Use the annotated scene label as a one-hot distribution.
    #[arg(long, requires = "annotations")]
    pub perfect_scene: bool,
    /// Normalization for score files: `sum` or `softmax:<temperature>`.
    #[arg(long, default_value = "sum", value_parser = parse_normalization)]
    pub normalize: NormalizeOpt,
    /// Interpolation factor: `auto` (singleton fraction) or a value in
    /// [0, 1].
    #[arg(long, default_value = "auto", value_parser = parse_auto_or_value)]
    pub alpha: AutoOrValue,
    /// Sampling noise scale: `auto` (see --sigma-source) or a value.
    #[arg(long, default_value = "auto", value_parser = parse_auto_or_value)]
    pub sigma: AutoOrValue,
    /// Estimator behind `--sigma auto`: `prob-std` (spread of smoothed
    /// probabilities) or `count-std` (spread of normalized counts).
    #[arg(long, default_value = "prob-std", value_parser = parse_sigma_source)]
    pub sigma_source: SigmaSourceOpt,
    /// Draws per table entry.
    #[arg(long, default_value_t = 10)]
    pub draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SceneEvalArgs {
    #[arg(long)]
    pub scene_scores: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub lemma_map: Option<PathBuf>,
    #[arg(long, default_value = "sum", value_parser = parse_normalization)]
    pub normalize: NormalizeOpt,
    /// Comma-separated k values.
    #[arg(long, default_value = "1,3,5", value_parser = parse_usize_list)]
    pub k: UsizeList,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Presence predictions (`image<TAB>object<TAB>score`).
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Either a file with one class name per line, or frequency sets
    /// like `top20,top40,top100`.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long, default_value = "all", value_parser = parse_ap_variant)]
    pub ap_variant: ApVariantOpt,
    /// Comma-separated k values for top-k accuracy.
    #[arg(long, default_value = "1,2,3,4,5", value_parser = parse_usize_list)]
    pub k_list: UsizeList,
    /// Count annotated instances instead of distinct object types when
    /// deciding top-k eligibility.
    #[arg(long)]
    pub count_instances: bool,
    /// Chance baseline: `analytic` or `empirical:<trials>` (seeded by
    /// --seed).
    #[arg(long, default_value = "analytic", value_parser = parse_chance)]
    pub chance: ChanceOpt,
    #[arg(long)]
    pub lemma_map: Option<PathBuf>,
    /// Write the machine-readable TSV report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write an accuracy-vs-k SVG chart here.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args)]
pub struct RescoreTrainArgs {
    /// Detections; either labeled (`tp`/`fp` column) or matched against
    /// --gt.
    #[arg(long)]
    pub detections: PathBuf,
    /// Ground-truth boxes in the detections format (score ignored).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Presence predictions used as context features.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Hinge-loss cost C.
    #[arg(long = "C", default_value_t = 1.0)]
    pub cost: f64,
    /// Solver stopping tolerance.
    #[arg(long = "tol", default_value_t = 0.01)]
    pub tolerance: f64,
    /// Disable feature standardization.
    #[arg(long)]
    pub no_standardize: bool,
    /// IoU threshold for matching against --gt.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RescoreArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct E2eArgs {
    /// Directory receiving every generated and derived file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long, default_value_t = 100)]
    pub objects: usize,
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    /// Give scene pairs identical object profiles.
    #[arg(long)]
    pub confusable_pairs: bool,
    #[arg(long, default_value_t = 10)]
    pub draws: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum AutoOrValue {
    Auto,
    Value(f64),
}

fn parse_auto_or_value(raw: &str) -> Result<AutoOrValue, String> {
    if raw == "auto" {
        return Ok(AutoOrValue::Auto);
    }
    f64::from_str(raw)
        .map(AutoOrValue::Value)
        .map_err(|_| format!("expected `auto` or a number, got `{raw}`"))
}

#[derive(Clone, Copy, Debug)]
pub enum NormalizeOpt {
    Sum,
    Softmax(f64),
}

fn parse_normalization(raw: &str) -> Result<NormalizeOpt, String> {
    if raw == "sum" {
        return Ok(NormalizeOpt::Sum);
    }
    if raw == "softmax" {
        return Ok(NormalizeOpt::Softmax(1.0));
    }
    if let Some(t) = raw.strip_prefix("softmax:") {
        return f64::from_str(t)
            .map(NormalizeOpt::Softmax)
            .map_err(|_| format!("bad softmax temperature `{t}`"));
    }
    Err(format!("expected `sum`, `softmax` or `softmax:<T>`, got `{raw}`"))
}

#[derive(Clone, Copy, Debug)]
pub enum SigmaSourceOpt {
    ProbStd,
    CountStd,
}

fn parse_sigma_source(raw: &str) -> Result<SigmaSourceOpt, String> {
    match raw {
        "prob-std" => Ok(SigmaSourceOpt::ProbStd),
        "count-std" => Ok(SigmaSourceOpt::CountStd),
        other => Err(format!("expected `prob-std` or `count-std`, got `{other}`")),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum ApVariantOpt {
    All,
    ElevenPoint,
}

fn parse_ap_variant(raw: &str) -> Result<ApVariantOpt, String> {
    match raw {
        "all" => Ok(ApVariantOpt::All),
        "11pt" => Ok(ApVariantOpt::ElevenPoint),
        other => Err(format!("expected `all` or `11pt`, got `{other}`")),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum ChanceOpt {
    Analytic,
    Empirical(usize),
}

fn parse_chance(raw: &str) -> Result<ChanceOpt, String> {
    if raw == "analytic" {
        return Ok(ChanceOpt::Analytic);
    }
    if let Some(t) = raw.strip_prefix("empirical:") {
        return t
            .parse()
            .map(ChanceOpt::Empirical)
            .map_err(|_| format!("bad trial count `{t}`"));
    }
    Err(format!("expected `analytic` or `empirical:<trials>`, got `{raw}`"))
}

#[derive(Clone, Debug)]
pub struct UsizeList(pub Vec<usize>);

fn parse_usize_list(raw: &str) -> Result<UsizeList, String> {
    let values: Result<Vec<usize>, _> = raw.split(',').map(|p| p.trim().parse()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(UsizeList(v)),
        _ => Err(format!("expected comma-separated integers, got `{raw}`")),
    }
}

fn parse_on_off(raw: &str) -> Result<bool, String> {
    match raw {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected `on` or `off`, got `{other}`")),
    }
}

fn init_logging(flag_level: &str) {
    let mut builder = env_logger::Builder::new();
    match std::env::var("SCENE2OBJ_LOG") {
        Ok(env) => builder.parse_filters(&env),
        Err(_) => builder.parse_filters(flag_level),
    };
    let _ = builder.format_timestamp(None).try_init();
}

/// Reproducibility header for every output file: version, seed, argv.
/// `--threads` and `--log-level` never influence output data and are
/// left out so results stay byte-identical across those settings.
fn output_header(seed: u64) -> String {
    let mut argv: Vec<String> = Vec::new();
    let mut skip_value = false;
    for arg in std::env::args().skip(1) {
        if skip_value {
            skip_value = false;
            continue;
        }
        if arg == "--threads" || arg == "--log-level" {
            skip_value = true;
            continue;
        }
        if arg.starts_with("--threads=") || arg.starts_with("--log-level=") {
            continue;
        }
        argv.push(arg);
    }
    format!(
        "scene2obj {} | seed={} | {}",
        env!("CARGO_PKG_VERSION"),
        seed,
        argv.join(" ")
    )
}

fn main() {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not set thread pool size: {e}");
        }
    }
    let header = output_header(cli.seed);
    let outcome = match cli.command {
        Command::Extract(args) => commands::extract(args, &header),
        Command::BuildMatrix(args) => commands::build_matrix(args, &header),
        Command::GtMatrix(args) => commands::gt_matrix(args, &header),
        Command::Predict(args) => commands::predict(args, cli.seed, &header),
        Command::SceneEval(args) => commands::scene_eval(args),
        Command::Evaluate(args) => commands::evaluate(args, cli.seed, &header),
        Command::RescoreTrain(args) => commands::rescore_train(args, &header),
        Command::Rescore(args) => commands::rescore(args, &header),
        Command::E2eSynthetic(args) => commands::e2e_synthetic(args, cli.seed, &header),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
