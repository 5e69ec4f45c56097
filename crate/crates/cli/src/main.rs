mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cdmafs::data::{generate_synthetic, read_sparse_coo, write_dense_csv, write_labels, write_sparse_coo};
use cdmafs::evaluation::{all_features, evaluate_graph, evaluate_selection, write_metrics_csv, MetricsReport};
use cdmafs::pipeline::{fuse, select_features, select_features_with_graph};
use cdmafs::{RunConfig, SelectionResult, SyntheticParams};
use manifest::{FileDigest, RunManifest};

#[derive(Parser)]
#[command(name = "cdmafs", version, about = "Unsupervised multi-view feature selection")]
struct Cli {
    /// Worker threads; 0 uses every core. Overrides `threads` in the config.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-cluster dataset.
    Synth(SynthArgs),
    /// Fuse the views into one graph.
    Fuse(RunArgs),
    /// Select features in every view.
    Select(SelectArgs),
    /// Score a feature selection by clustering.
    Evaluate(EvaluateArgs),
    /// Repeat a selection run from its manifest and check the outputs match.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Override a config key, e.g. `--set diffusion.alpha=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Use a previously fused graph (sparse COO) instead of fusing.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Selection JSON written by `select`.
    #[arg(long)]
    selection: PathBuf,

    #[arg(long)]
    k: Option<usize>,

    #[arg(long)]
    repeats: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Add a row for all features.
    #[arg(long)]
    all_features: bool,

    /// Add a row for the spectral embedding of this fused graph (sparse COO).
    #[arg(long)]
    graph: Option<PathBuf>,

    /// Also write the reports as a CSV table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    informative: Option<usize>,
    #[arg(long)]
    noise: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,

    /// Where to write the repeated outputs; defaults to the recorded directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] cdmafs::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_config() => 2,
            CliError::Core(cdmafs::Error::TooFewViews(_)) => 2,
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Finished command: 0, or 4 when the solver reported a line-search failure.
struct Outcome {
    solver_warning: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Outcome { solver_warning: false }) => ExitCode::SUCCESS,
        Ok(Outcome { solver_warning: true }) => {
            eprintln!("warning: the solver's line search failed; results were written anyway");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<Outcome> {
    let ok = Outcome { solver_warning: false };
    match cli.command {
        Command::Synth(args) => {
            init_threads(cli.threads.unwrap_or(0))?;
            cmd_synth(&args)?;
            Ok(ok)
        }
        Command::Fuse(args) => {
            let config = load_config(&args)?;
            init_threads(cli.threads.unwrap_or(config.threads))?;
            cmd_fuse(&config)?;
            Ok(ok)
        }
        Command::Select(args) => {
            let config = load_config(&args.run)?;
            init_threads(cli.threads.unwrap_or(config.threads))?;
            let graph = args.graph.map(absolute).transpose()?;
            let manifest = cmd_select(&config, graph.as_deref())?;
            Ok(Outcome {
                solver_warning: manifest.solver_warning,
            })
        }
        Command::Evaluate(args) => {
            let config = load_config(&args.run)?;
            init_threads(cli.threads.unwrap_or(config.threads))?;
            cmd_evaluate(&config, &args)?;
            Ok(ok)
        }
        Command::Rerun(args) => {
            let recorded = RunManifest::read(&args.manifest)?;
            init_threads(cli.threads.unwrap_or(recorded.config.threads))?;
            cmd_rerun(recorded, args.out)
        }
    }
}

fn init_threads(threads: usize) -> CliResult<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))
}

fn absolute(path: PathBuf) -> CliResult<PathBuf> {
    std::path::absolute(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_config(args: &RunArgs) -> CliResult<RunConfig> {
    if !args.config.is_file() {
        return Err(CliError::Config(format!(
            "config file {} not found",
            args.config.display()
        )));
    }
    let path = absolute(args.config.clone())?;
    let mut config = RunConfig::load(&path, &args.overrides)?;
    if let Some(out) = &args.out {
        config.output.dir = absolute(out.clone())?;
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(cdmafs::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let d = SyntheticParams::default();
    let params = SyntheticParams {
        n: args.n.unwrap_or(d.n),
        clusters: args.clusters.unwrap_or(d.clusters),
        informative: args.informative.unwrap_or(d.informative),
        noise: args.noise.unwrap_or(d.noise),
        noise_scale: args.noise_scale.unwrap_or(d.noise_scale),
        separation: args.separation.unwrap_or(d.separation),
        views: args.views.unwrap_or(d.views),
        seed: args.seed.unwrap_or(d.seed),
    };
    let ds = generate_synthetic(&params)?;
    create_dir(&args.out)?;
    for (v, view) in ds.views().iter().enumerate() {
        write_dense_csv(
            &args.out.join(format!("view{v}.csv")),
            view.data(),
            view.feature_names(),
        )?;
    }
    write_labels(
        &args.out.join("labels.txt"),
        ds.labels().expect("generated data is labelled"),
    )?;
    Ok(())
}

fn cmd_fuse(config: &RunConfig) -> CliResult<()> {
    let dataset = config.dataset.load()?;
    let fusion = fuse(&dataset, &config.selection_settings())?;
    let dir = &config.output.dir;
    create_dir(dir)?;
    write_sparse_coo(&dir.join("graph.coo"), fusion.graph.g.view())?;
    write_sparse_coo(&dir.join("p_star.coo"), fusion.graph.p_star.view())?;
    write_json(&dir.join("diagnostics.json"), &fusion.diagnostics)?;
    if let Some(p) = &fusion.diagnostics.purity {
        log::info!("fused graph: {} components, epsilon {:.4}", p.q, p.epsilon);
    }
    Ok(())
}

pub const SELECTION_FILE: &str = "selection.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn cmd_select(config: &RunConfig, graph: Option<&Path>) -> CliResult<RunManifest> {
    let started = manifest::now();
    let mut inputs = config.dataset.input_paths();
    inputs.extend(graph.map(Path::to_path_buf));
    let input_digests = inputs
        .iter()
        .map(|p| FileDigest::of(p))
        .collect::<CliResult<Vec<_>>>()?;

    let dataset = config.dataset.load()?;
    let settings = config.selection_settings();
    let result = match graph {
        Some(path) => select_features_with_graph(&dataset, &read_sparse_coo(path)?, &settings)?,
        None => select_features(&dataset, &settings)?,
    };
    for w in result.warnings() {
        log::warn!("{w}");
    }
    let dir = &config.output.dir;
    create_dir(dir)?;
    let selection_path = dir.join(SELECTION_FILE);
    let mut text = result.to_json()?;
    text.push('\n');
    write_text(&selection_path, &text)?;

    let manifest = RunManifest {
        tool: "cdmafs".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "select".into(),
        seed: config.seed,
        config: config.clone(),
        graph: graph.map(Path::to_path_buf),
        inputs: input_digests,
        outputs: vec![FileDigest::of(&selection_path)?],
        started_at: started,
        finished_at: manifest::now(),
        solver_warning: result.line_search_failed(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Serialize)]
struct EvaluationOutput {
    k: usize,
    repeats: usize,
    seed: u64,
    reports: Vec<MetricsReport>,
}

fn cmd_evaluate(config: &RunConfig, args: &EvaluateArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.selection)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.selection.display())))?;
    let selection = SelectionResult::from_json(&text)?;
    let dataset = config.dataset.load()?;
    let dataset = if config.dataset.normalize {
        cdmafs::data::normalize_unit_length(&dataset).0
    } else {
        dataset
    };
    let labels = dataset.labels().ok_or(cdmafs::Error::MissingLabels)?;
    let k = args
        .k
        .or(config.evaluation.k)
        .or_else(|| dataset.n_classes())
        .expect("labelled data has a class count");
    let repeats = args.repeats.unwrap_or(config.evaluation.repeats);
    let seed = args.seed.unwrap_or(config.seed);
    if repeats == 0 {
        return Err(CliError::Config("repeats must be >= 1".into()));
    }
    let mode = config.evaluation.mode;

    let mut reports = evaluate_selection(&dataset, &selection.selected(), "selected", k, repeats, seed, mode)?;
    if args.all_features || config.evaluation.all_features {
        reports.extend(evaluate_selection(
            &dataset,
            &all_features(&dataset),
            "all-features",
            k,
            repeats,
            seed,
            mode,
        )?);
    }
    if let Some(graph) = &args.graph {
        reports.push(evaluate_graph(
            read_sparse_coo(graph)?.view(),
            labels,
            k,
            repeats,
            seed,
        )?);
    }
    let dir = &config.output.dir;
    create_dir(dir)?;
    write_json(
        &dir.join("metrics.json"),
        &EvaluationOutput {
            k,
            repeats,
            seed,
            reports: reports.clone(),
        },
    )?;
    if let Some(csv) = &args.csv {
        write_metrics_csv(csv, &reports)?;
    }
    for r in &reports {
        log::info!(
            "{}: accuracy {:.4} +/- {:.4}, nmi {:.4} +/- {:.4}",
            r.label,
            r.accuracy.mean,
            r.accuracy.std,
            r.nmi.mean,
            r.nmi.std
        );
    }
    Ok(())
}

fn cmd_rerun(recorded: RunManifest, out: Option<PathBuf>) -> CliResult<Outcome> {
    for input in &recorded.inputs {
        let now = FileDigest::of(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Data(format!(
                "input {} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let mut config = recorded.config.clone();
    if let Some(out) = out {
        config.output.dir = absolute(out)?;
    }
    let fresh = cmd_select(&config, recorded.graph.as_deref())?;
    for (old, new) in recorded.outputs.iter().zip(&fresh.outputs) {
        if old.sha256 != new.sha256 {
            return Err(CliError::Data(format!(
                "{} differs from the recorded run ({} vs {})",
                new.path.display(),
                new.sha256,
                old.sha256
            )));
        }
    }
    Ok(Outcome {
        solver_warning: fresh.solver_warning,
    })
}
