//! Command-line front end for the re-enrollment trial analysis library.
//!
//! Four subcommands: `analyze` runs estimators on a dataset, `simulate` runs
//! a Monte Carlo replication study, `oracle` computes high-precision truth
//! values for the built-in generator, and `validate` checks a dataset
//! against its schema and assignment scheme without estimating anything.
//!
//! Exit codes: 0 success, 2 invalid input (files, flags, config), 3 valid
//! input on which the requested estimate does not exist (degenerate strata,
//! empty arms, singular fits).

mod manifest;
mod render;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mptrial::scheme::validate_records;
use mptrial::sim::generate::{
    default_schema_json, default_scheme_json, generate_trial, write_trial_csv, SimConfig,
};
use mptrial::sim::oracle::{truth_oracle, TruthTable};
use mptrial::sim::replicate::{run_replications, summary_to_csv, with_worker_pool};
use mptrial::{
    analyze_comparator, analyze_contrast, apply_missingness_policy, parse_records, parse_scheme,
    AnalysisOptions, Comparator, DataSchema, EpisodeScope, Error, Method, MissingnessPolicy,
    Pooling,
};

use manifest::{default_manifest_path, RunManifest};
use render::{summary_text, truths_text, AnalysisBundle};

#[derive(Parser)]
#[command(name = "mptrial", version)]
#[command(about = "Estimators and simulations for trials with participant re-enrollment")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Estimate arm contrasts on an episode-level dataset
    Analyze(AnalyzeArgs),
    /// Monte Carlo replication study of the built-in trial generator
    Simulate(SimulateArgs),
    /// High-precision truth values for the built-in generator
    Oracle(OracleArgs),
    /// Check a dataset (and optionally a scheme) without estimating
    Validate(ValidateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Episode-level CSV data file
    #[arg(long)]
    data: PathBuf,
    /// Column schema (JSON)
    #[arg(long)]
    schema: PathBuf,
    /// Assignment scheme (JSON)
    #[arg(long)]
    scheme: PathBuf,
    /// Comma-separated treated:control arm pairs, e.g. "2:1,3:1"
    #[arg(long)]
    comparisons: String,
    /// Comma-separated subset of ipw,sipw,aipw,ps,aps,anova,ancova,anhecova
    #[arg(long, default_value = "ipw,sipw,aipw,ps,aps")]
    methods: String,
    /// Episode scope: "all" or a single episode number
    #[arg(long, default_value = "all")]
    episodes: String,
    /// Comma-separated covariates for working models and comparators
    #[arg(long)]
    covariates: Option<String>,
    /// Run aipw/aps with intercept-only working models (no covariates)
    #[arg(long)]
    intercept_only: bool,
    /// Working-model fit: per-episode | pooled
    #[arg(long, default_value = "per-episode")]
    pooling: String,
    /// Two-sided confidence level
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Non-inferiority margin on the contrast scale
    #[arg(long, allow_negative_numbers = true)]
    margin: Option<f64>,
    /// Missing-outcome policy: fail | complete-case
    #[arg(long, default_value = "fail")]
    missing: String,
    /// Report file; without it the report goes to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    /// Manifest path (default: next to --out, or mptrial-analyze.manifest.json)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (.json or .toml); built-in defaults apply without it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Participants per replication
    #[arg(long)]
    n: Option<u64>,
    /// Re-enrollment mechanism: 1 = completely random, 2 = latent-dependent
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Compute truths from the oracle with this many draws ("N" or "draws=N")
    #[arg(long, value_parser = parse_draws, default_value = "1000000",
          conflicts_with = "truth_file")]
    truth_from_oracle: u64,
    /// Load truths from a JSON table instead of running the oracle
    #[arg(long)]
    truth_file: Option<PathBuf>,
    /// Also save the truth table that was used
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Worker threads (default: MPTRIAL_WORKERS, else one per core)
    #[arg(long)]
    workers: Option<usize>,
    /// Summary CSV path
    #[arg(long, default_value = "mc-summary.csv")]
    out: PathBuf,
    /// Write replication 0's dataset, schema, and scheme into this directory
    #[arg(long)]
    dump_data: Option<PathBuf>,
    /// Manifest path (default: next to --out)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Simulation config (.json or .toml); built-in defaults apply without it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo draws for the truth computation
    #[arg(long, default_value_t = 10_000_000)]
    draws: u64,
    /// Worker threads (default: MPTRIAL_WORKERS, else one per core)
    #[arg(long)]
    workers: Option<usize>,
    /// Truth table JSON path
    #[arg(long, default_value = "truths.json")]
    out: PathBuf,
    /// Manifest path (default: next to --out)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Episode-level CSV data file
    #[arg(long)]
    data: PathBuf,
    /// Column schema (JSON)
    #[arg(long)]
    schema: PathBuf,
    /// Assignment scheme (JSON); when given, coverage is checked too
    #[arg(long)]
    scheme: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
    Csv,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Commands::Analyze(args) => cmd_analyze(args),
        Commands::Simulate(args) => cmd_simulate(args),
        Commands::Oracle(args) => cmd_oracle(args),
        Commands::Validate(args) => cmd_validate(args),
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Estimation(_)) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn open_input(role: &str, path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| {
        Error::validation(format!("cannot read {role} '{}': {e}", path.display())).into()
    })
}

fn parse_comparisons(s: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for token in s.split(',').map(str::trim) {
        let Some((j, k)) = token.split_once(':') else {
            bail!(Error::validation(format!(
                "comparison '{token}' is not of the form treated:control"
            )));
        };
        let (j, k) = (j.trim(), k.trim());
        if j.is_empty() || k.is_empty() || j == k {
            bail!(Error::validation(format!("comparison '{token}' needs two distinct arms")));
        }
        pairs.push((j.to_string(), k.to_string()));
    }
    Ok(pairs)
}

fn parse_methods(s: &str) -> Result<(Vec<Method>, Vec<Comparator>)> {
    let mut methods: Vec<Method> = Vec::new();
    let mut comparators: Vec<Comparator> = Vec::new();
    for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Ok(m) = Method::from_str(token) {
            if !methods.contains(&m) {
                methods.push(m);
            }
        } else if let Ok(c) = Comparator::from_str(token) {
            if !comparators.contains(&c) {
                comparators.push(c);
            }
        } else {
            bail!(Error::validation(format!(
                "unknown method '{token}' (expected ipw, sipw, aipw, ps, aps, anova, ancova, \
                 or anhecova)"
            )));
        }
    }
    if methods.is_empty() && comparators.is_empty() {
        bail!(Error::validation("no methods requested"));
    }
    Ok((methods, comparators))
}

fn parse_episode_scope(s: &str) -> Result<EpisodeScope> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(EpisodeScope::All);
    }
    match s.parse::<u32>() {
        Ok(t) if t >= 1 => Ok(EpisodeScope::Episodes(vec![t])),
        _ => bail!(Error::validation(format!(
            "episode scope '{s}' is neither 'all' nor an episode number"
        ))),
    }
}

fn parse_draws(s: &str) -> std::result::Result<u64, String> {
    let body = s.strip_prefix("draws=").unwrap_or(s).trim();
    match body.replace('_', "").parse::<u64>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("'{s}' is not a positive draw count")),
    }
}

/// `--workers` wins over the `MPTRIAL_WORKERS` environment variable; neither
/// means "let the runtime pick".
fn resolve_workers(flag: Option<usize>) -> Result<Option<usize>> {
    let workers = match flag {
        Some(w) => Some(w),
        None => match std::env::var("MPTRIAL_WORKERS") {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| {
                Error::validation(format!("MPTRIAL_WORKERS='{s}' is not a worker count"))
            })?),
            Err(_) => None,
        },
    };
    if workers == Some(0) {
        bail!(Error::validation("worker count must be at least 1"));
    }
    Ok(workers)
}

fn load_sim_config(path: Option<&Path>) -> Result<SimConfig> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        Error::validation(format!("cannot read config '{}': {e}", path.display()))
    })?;
    let is_toml = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text)
            .map_err(|e| Error::validation(format!("config '{}': {e}", path.display())).into())
    } else {
        SimConfig::from_json(text.as_bytes()).map_err(Into::into)
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let comparisons = parse_comparisons(&args.comparisons)?;
    let (methods, comparators) = parse_methods(&args.methods)?;
    let episodes = parse_episode_scope(&args.episodes)?;
    let pooling = Pooling::from_str(&args.pooling)?;
    let policy = MissingnessPolicy::from_str(&args.missing)?;
    if !(args.level > 0.0 && args.level < 1.0) {
        bail!(Error::validation(format!("confidence level {} is not in (0, 1)", args.level)));
    }
    let covariates: Vec<String> = args
        .covariates
        .as_deref()
        .map(|s| s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    if covariates.is_empty() && !args.intercept_only && methods.iter().any(|m| m.is_augmented())
    {
        bail!(Error::validation(
            "aipw/aps need --covariates, or --intercept-only to accept intercept-only \
             working models",
        ));
    }

    let schema = DataSchema::from_reader(open_input("schema", &args.schema)?)?;
    let scheme = parse_scheme(open_input("scheme", &args.scheme)?)?;
    let (rs, _) = parse_records(BufReader::new(open_input("data", &args.data)?), &schema)?;
    let (rs, drop_report) = apply_missingness_policy(&rs, policy)?;
    validate_records(&scheme, &rs)?;

    let options = AnalysisOptions {
        episodes,
        covariates,
        pooling,
        level: args.level,
        margin: args.margin,
        ..Default::default()
    };

    let mut bundle = AnalysisBundle {
        n_participants: rs.n_participants(),
        n_records: rs.len(),
        n_dropped: drop_report.dropped_count,
        level: args.level,
        contrasts: Vec::new(),
        comparators: Vec::new(),
    };
    for (j, k) in &comparisons {
        for &method in &methods {
            let report = analyze_contrast(&rs, &scheme, method, j, k, &options)
                .with_context(|| format!("{method} {j} vs {k}"))?;
            bundle.contrasts.push(report);
        }
        for &kind in &comparators {
            let report = analyze_comparator(&rs, kind, None, j, k, &options)
                .with_context(|| format!("{kind} {j} vs {k}"))?;
            bundle.comparators.push(report);
        }
    }

    let body = match args.format {
        OutputFormat::Text => bundle.to_text(),
        OutputFormat::Json => bundle.to_json(),
        OutputFormat::Csv => bundle.to_csv(),
    };
    match &args.out {
        Some(path) => {
            fs::write(path, &body)
                .with_context(|| format!("writing report '{}'", path.display()))?;
            print!("{}", bundle.to_text());
        }
        None => print!("{body}"),
    }

    let mut man = RunManifest::new(
        "analyze",
        serde_json::json!({
            "comparisons": &args.comparisons,
            "methods": &args.methods,
            "episodes": &args.episodes,
            "covariates": &options.covariates,
            "intercept_only": args.intercept_only,
            "pooling": &args.pooling,
            "level": args.level,
            "margin": args.margin,
            "missing": &args.missing,
            "format": format!("{:?}", args.format).to_lowercase(),
        }),
    );
    man.add_input("data", &args.data)?;
    man.add_input("schema", &args.schema)?;
    man.add_input("scheme", &args.scheme)?;
    if let Some(out) = &args.out {
        man.add_output(out);
    }
    let man_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path("analyze", args.out.as_deref()));
    man.write(&man_path)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_sim_config(args.config.as_deref())?;
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(s) = args.scenario {
        cfg.scenario = s;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let workers = resolve_workers(args.workers)?;

    let truth_source = match &args.truth_file {
        Some(path) => {
            let table = TruthTable::from_json(open_input("truth table", path)?)?;
            if table.scenario != cfg.scenario {
                bail!(Error::validation(format!(
                    "truth table is for scenario {}, config says scenario {}",
                    table.scenario, cfg.scenario
                )));
            }
            Some(table)
        }
        None => None,
    };
    let oracle_draws = args.truth_from_oracle;
    let run_cfg = cfg.clone();
    let (truths, summary) = with_worker_pool(workers, move || -> mptrial::Result<_> {
        let truths = match truth_source {
            Some(table) => table,
            None => truth_oracle(&run_cfg, oracle_draws)?,
        };
        let summary = run_replications(&run_cfg, &truths)?;
        Ok((truths, summary))
    })??;

    fs::write(&args.out, summary_to_csv(&summary))
        .with_context(|| format!("writing summary '{}'", args.out.display()))?;
    if let Some(path) = &args.truth_out {
        fs::write(path, truths.to_json() + "\n")
            .with_context(|| format!("writing truth table '{}'", path.display()))?;
    }
    let dumped = match &args.dump_data {
        Some(dir) => dump_dataset(&cfg, dir)?,
        None => Vec::new(),
    };
    print!("{}", summary_text(&summary));

    let mut man = RunManifest::new(
        "simulate",
        serde_json::json!({
            "sim": &cfg,
            "workers": workers,
            "truth": match &args.truth_file {
                Some(path) => serde_json::json!({ "file": path }),
                None => serde_json::json!({ "oracle_draws": oracle_draws }),
            },
        }),
    );
    if let Some(path) = &args.config {
        man.add_input("config", path)?;
    }
    if let Some(path) = &args.truth_file {
        man.add_input("truth_file", path)?;
    }
    man.add_output(&args.out);
    if let Some(path) = &args.truth_out {
        man.add_output(path);
    }
    for path in &dumped {
        man.add_output(path);
    }
    let man_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path("simulate", Some(&args.out)));
    man.write(&man_path)
}

/// Write replication 0's dataset plus the generator's schema and scheme, so
/// the `analyze` subcommand can be pointed at simulated data directly.
fn dump_dataset(cfg: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating dump directory '{}'", dir.display()))?;
    let schema_path = dir.join("schema.json");
    fs::write(&schema_path, default_schema_json())?;
    let scheme_path = dir.join("scheme.json");
    fs::write(&scheme_path, default_scheme_json())?;
    let data_path = dir.join("data-rep0.csv");
    let rs = generate_trial(cfg, 0)?;
    let file = fs::File::create(&data_path)
        .with_context(|| format!("creating '{}'", data_path.display()))?;
    write_trial_csv(&rs, std::io::BufWriter::new(file))?;
    Ok(vec![schema_path, scheme_path, data_path])
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let mut cfg = load_sim_config(args.config.as_deref())?;
    if let Some(s) = args.scenario {
        cfg.scenario = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if args.draws == 0 {
        bail!(Error::validation("--draws must be at least 1"));
    }
    let workers = resolve_workers(args.workers)?;
    let run_cfg = cfg.clone();
    let draws = args.draws;
    let table = with_worker_pool(workers, move || truth_oracle(&run_cfg, draws))??;

    fs::write(&args.out, table.to_json() + "\n")
        .with_context(|| format!("writing truth table '{}'", args.out.display()))?;
    print!("{}", truths_text(&table));

    let mut man = RunManifest::new(
        "oracle",
        serde_json::json!({ "sim": &cfg, "draws": draws, "workers": workers }),
    );
    if let Some(path) = &args.config {
        man.add_input("config", path)?;
    }
    man.add_output(&args.out);
    let man_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path("oracle", Some(&args.out)));
    man.write(&man_path)
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let schema = DataSchema::from_reader(open_input("schema", &args.schema)?)?;
    let (rs, report) =
        parse_records(BufReader::new(open_input("data", &args.data)?), &schema)?;
    println!(
        "data: {} records, {} participants, episodes 1..={}",
        rs.len(),
        rs.n_participants(),
        rs.max_episode()
    );
    for t in 1..=rs.max_episode() {
        println!("  episode {t}: {} records", rs.episode_slice(t).n_participants());
    }
    println!("arms observed: {}", rs.arms_observed().join(", "));
    if report.n_missing_outcome > 0 {
        println!("missing outcomes: {}", report.n_missing_outcome);
    }
    for warning in &report.warnings {
        println!("warning: {warning}");
    }
    if let Some(path) = &args.scheme {
        let scheme = parse_scheme(open_input("scheme", path)?)?;
        validate_records(&scheme, &rs)?;
        println!(
            "scheme: covers every record ({} arms, {} rows)",
            scheme.arms().len(),
            scheme.rows().len()
        );
    }
    println!("ok");
    Ok(())
}
