use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use targeted_dp::attack::{run_attack_with, AttackConfig};
use targeted_dp::dataset::{
    generate_synthetic, k_core_prune_with_attributes, make_splits, parse_bookcrossing, parse_movielens,
    read_attributes_csv, read_canonical, write_canonical, AgeThreshold, AttributeTable, Split, SyntheticSpec,
};
use targeted_dp::exec::Exec;
use targeted_dp::harness::{
    pareto_frontier, read_results, run_grid, seeds, summarize, write_summary, ExperimentData, GridSpec,
};
use targeted_dp::privacy::{protect_dataset_with, Epsilon, PrivacyConfig, Strategy};
use targeted_dp::recsys::{evaluate_mae, train, ModelKind, RecModelConfig};
use targeted_dp::stereotype::{build_index, ScoringSubset, StereotypeIndex};

#[derive(Parser)]
#[command(
    name = "tdp",
    version,
    about = "Targeted differential privacy for recommender training data"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    /// Run work units one at a time.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RawFormat {
    Movielens1m,
    Bookcrossing,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw files, apply k-core pruning and write the canonical layout.
    Ingest {
        #[arg(long, value_enum)]
        dataset: RawFormat,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_core: usize,
        /// Age cut for bookcrossing: `median` or a number.
        #[arg(long, default_value = "median")]
        age_threshold: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with group-inclined items.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        items: usize,
        #[arg(long)]
        ratings_per_user: usize,
        #[arg(long)]
        signal: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute per-item group inclinations and stereotypicality scores.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        subset: SubsetArg,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Base seed of the fold splits.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the keep-or-replace mechanism to a dataset.
    Protect {
        #[arg(long)]
        data: PathBuf,
        /// Scores file; required for the targeted strategy.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        epsilon: Epsilon,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a recommender on one fold and report its test MAE.
    Train {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Base seed of the fold splits.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the attribute-inference attacker.
    Attack {
        #[arg(long)]
        data: PathBuf,
        /// Attribute file; defaults to the dataset's own.
        #[arg(long)]
        attrs: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment grid, resuming from an existing results file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold-averaged configurations on the MAE/BAcc Pareto frontier.
    Pareto {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean and standard deviation per configuration.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(dir: &Path) -> Result<ExperimentData> {
    let (dataset, attributes, meta) =
        read_canonical(dir).with_context(|| format!("reading dataset from {}", dir.display()))?;
    Ok(ExperimentData {
        name: meta.name,
        dataset,
        attributes,
    })
}

fn ingest(format: RawFormat, ratings: &Path, users: &Path, min_core: usize, age: &str, out: &Path) -> Result<()> {
    let (name, (ds, attrs)) = match format {
        RawFormat::Movielens1m => ("movielens1m", parse_movielens(ratings, users)?),
        RawFormat::Bookcrossing => {
            let threshold = match age {
                "median" => AgeThreshold::Median,
                v => AgeThreshold::Fixed(v.parse().context("--age-threshold must be `median` or a number")?),
            };
            ("bookcrossing", parse_bookcrossing(ratings, users, threshold)?)
        }
    };
    let (ds, attrs) = k_core_prune_with_attributes(&ds, &attrs, min_core)?;
    write_canonical(out, name, &ds, &attrs)?;
    println!(
        "{name}: {} users, {} items, {} ratings after {min_core}-core",
        ds.num_users(),
        ds.num_items(),
        ds.len()
    );
    Ok(())
}

fn score(data: &Path, subset: SubsetArg, fold: usize, folds: usize, seed: u64, out: &Path) -> Result<()> {
    let d = load(data)?;
    let index = match subset {
        SubsetArg::Full => build_index(&d.dataset, &d.attributes, ScoringSubset::Full)?,
        SubsetArg::Train => {
            if fold >= folds {
                bail!("fold {fold} out of range for {folds} folds");
            }
            let splits = make_splits(&d.dataset, folds, seeds::split(seed))?;
            let train = splits[fold].subset(&d.dataset, Split::Train)?;
            build_index(&train, &d.attributes, ScoringSubset::Train { fold })?
        }
    };
    index.write_csv(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn protect(
    data: &Path,
    scores: Option<&Path>,
    strategy: Strategy,
    beta: f64,
    epsilon: Epsilon,
    seed: u64,
    out: &Path,
    exec: Exec,
) -> Result<()> {
    let d = load(data)?;
    let index: Option<StereotypeIndex> = scores.map(StereotypeIndex::read_csv).transpose()?;
    if strategy == Strategy::Targeted && index.is_none() {
        bail!("--scores is required for the targeted strategy");
    }
    let cfg = PrivacyConfig::new(epsilon, beta, strategy, seed)?;
    let outcome = protect_dataset_with(&d.dataset, &d.attributes, index.as_ref(), &cfg, exec)?;
    write_canonical(out, &d.name, &outcome.dataset, &d.attributes)?;
    outcome.write_manifest(&out.join("protection_manifest.csv"))?;
    println!("replaced {} of {} ratings", outcome.replaced_count(), d.dataset.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    model: ModelKind,
    data: &Path,
    fold: usize,
    folds: usize,
    split_seed: u64,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let d = load(data)?;
    if fold >= folds {
        bail!("fold {fold} out of range for {folds} folds");
    }
    let mut cfg = match config {
        Some(p) => RecModelConfig::from_json_file(p)?,
        None => RecModelConfig::default(),
    };
    cfg.meta_enabled = model.meta_enabled();
    let splits = make_splits(&d.dataset, folds, seeds::split(split_seed))?;
    let parts = &splits[fold];
    let train_set = parts.subset(&d.dataset, Split::Train)?;
    let valid = parts.subset(&d.dataset, Split::Validation)?;
    let test = parts.subset(&d.dataset, Split::Test)?;
    let state = train(&train_set, &valid, &cfg)?;
    state.save(out)?;
    let log_path = out.with_file_name("training_log.csv");
    state.write_log(&log_path)?;
    println!(
        "{model} fold {fold}: best epoch {}, test MAE {:.4}",
        state.best_epoch,
        evaluate_mae(&state.model, &test)?
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn attack(
    data: &Path,
    attrs: Option<&Path>,
    runs: Option<usize>,
    seed: Option<u64>,
    config: Option<&Path>,
    out: &Path,
    exec: Exec,
) -> Result<()> {
    let d = load(data)?;
    let attributes = match attrs {
        Some(p) => AttributeTable::new(read_attributes_csv(p)?, d.attributes.label_names.clone()),
        None => d.attributes,
    };
    let mut cfg: AttackConfig = match config {
        Some(p) => serde_json::from_reader(std::fs::File::open(p)?)?,
        None => AttackConfig::default(),
    };
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let result = run_attack_with(&d.dataset, &attributes, &cfg, exec)?;
    result.write_csv(out)?;
    println!(
        "BAcc {:.4} ± {:.4} over {} runs",
        result.mean_bacc, result.std_bacc, cfg.runs
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Command::Ingest {
            dataset,
            ratings,
            users,
            min_core,
            age_threshold,
            out,
        } => ingest(dataset, &ratings, &users, min_core, &age_threshold, &out),
        Command::Synth {
            users,
            items,
            ratings_per_user,
            signal,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                num_users: users,
                num_items: items,
                ratings_per_user,
                signal_strength: signal,
                seed,
            };
            let (ds, attrs) = generate_synthetic(&spec)?;
            write_canonical(&out, "synthetic", &ds, &attrs)?;
            println!(
                "synthetic: {} users, {} items, {} ratings",
                ds.num_users(),
                ds.num_items(),
                ds.len()
            );
            Ok(())
        }
        Command::Score {
            data,
            subset,
            fold,
            folds,
            seed,
            out,
        } => score(&data, subset, fold, folds, seed, &out),
        Command::Protect {
            data,
            scores,
            strategy,
            beta,
            epsilon,
            seed,
            out,
        } => protect(&data, scores.as_deref(), strategy, beta, epsilon, seed, &out, exec),
        Command::Train {
            model,
            data,
            fold,
            folds,
            split_seed,
            config,
            out,
        } => train_cmd(model, &data, fold, folds, split_seed, config.as_deref(), &out),
        Command::Attack {
            data,
            attrs,
            runs,
            seed,
            config,
            out,
        } => attack(&data, attrs.as_deref(), runs, seed, config.as_deref(), &out, exec),
        Command::Experiment { config, data, out } => {
            let grid = GridSpec::from_json_file(&config)?;
            let d = load(&data)?;
            let outcome = run_grid(&grid, &d, &out, exec)?;
            let failed = outcome.records.iter().filter(|r| !r.is_ok()).count();
            println!(
                "{} rows ({} failed); {} units run, {} models trained",
                outcome.records.len(),
                failed,
                outcome.units_run,
                outcome.models_trained
            );
            Ok(())
        }
        Command::Pareto { input, out } => {
            let rows = summarize(&read_results(&input)?);
            let frontier = pareto_frontier(&rows);
            write_summary(&out, &frontier)?;
            println!("{} of {} configurations on the frontier", frontier.len(), rows.len());
            Ok(())
        }
        Command::Summarize { input, out } => {
            let rows = summarize(&read_results(&input)?);
            write_summary(&out, &rows)?;
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(cli)
}
