use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use groupquery::experiment::{
    group_sweep, noise_sim, query_group_sweep, write_csv, ExperimentError, GroupSweepConfig, NoiseSimConfig,
    QueryGroupSweepConfig, SweepStrategy,
};
use groupquery::noise::{build_noisy_tree, NoisyTree};
use groupquery::session::{replay, OutcomeDoc, SuggestionDoc};
use groupquery::synth::{
    estimate_params, gen_group_dataset, gen_querygroup_dataset, generate_usable, mean_estimate, Correlation,
    GroupGenParams, QueryGroupGenParams, SynthError, REFERENCE_GROUP_SIZES, REFERENCE_QUERY_GROUP_SIZES,
};
use groupquery::tree::{evaluate_by_formula, export_tree, tree_from_json, TreeError};
use groupquery::{
    build, Algorithm, BuildConfig, BuildError, Dataset, DatasetError, NoiseError, NoiseSpec, Objective,
    ProbabilityModel, Session, SessionConfig, SessionError, Status, StrategyKind, Suggestion, TieBreak, Transcript,
};
use groupquery_service::AppState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    /// Interactive input ended, or the session failed; the transcript has
    /// already been written.
    #[error("{0}")]
    Incomplete(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Incomplete(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Parser)]
#[command(name = "groupquery", version, about = "Greedy query selection for object and group identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a decision tree and write its document.
    Build(BuildArgs),
    /// Evaluate a tree document against a problem.
    Eval(EvalArgs),
    /// Generate a random problem.
    Generate(GenerateArgs),
    /// Estimate per-query correlation parameters of a grouped problem.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo sweep over random problems.
    Sweep(SweepArgs),
    /// Simulate persistent noise on a problem.
    NoiseSim(NoiseSimArgs),
    /// Answer queries interactively on stdin.
    Session(SessionArgs),
    /// Replay a session transcript and check it.
    Replay(ReplayArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Index,
    Random,
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long, default_value = "gisa")]
    strategy: String,
    #[arg(long, value_enum, default_value = "index")]
    tie_break: TieBreakArg,
    /// Seed for random tie-breaking (and error-prone sampling with --nu).
    #[arg(long)]
    seed: Option<u64>,
    /// Stop GBS at group-pure nodes instead of singletons.
    #[arg(long)]
    group_objective: bool,
    /// Fraction of queries marked error-prone (noisy strategies); defaults
    /// to the problem's own noise block.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    model: Option<u8>,
    /// Error probability assumed by the algorithm (model 2).
    #[arg(long)]
    p_alg: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    problem: PathBuf,
    #[command(flatten)]
    select: SelectionArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    tree: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Group,
    QueryGroup,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long, default_value_t = 0.0)]
    d1: f64,
    #[arg(long, default_value_t = 0.0)]
    d2: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma_max: f64,
    #[arg(long, default_value_t = 79)]
    queries: usize,
    #[arg(long, default_value_t = 298)]
    objects: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    /// `d1:d2,d1:d2,…` for group sweeps, `γ_max,γ_max,…` for query-group sweeps.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated: gbs, gisa, gqsa, gigqsa, min-min, min-max, random.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 4)]
    rollouts: usize,
    #[arg(long, default_value_t = 79)]
    queries: usize,
    #[arg(long, default_value_t = 298)]
    objects: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseSimArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Comma-separated fractions of error-prone queries.
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    nu: String,
    #[arg(long, default_value_t = 1)]
    model: u8,
    #[arg(long)]
    p_true: Option<f64>,
    #[arg(long)]
    p_alg: Option<f64>,
    /// Comma-separated: gbs-on-dilation, gisa-on-dilation.
    #[arg(long, default_value = "gbs-on-dilation,gisa-on-dilation")]
    strategies: String,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long)]
    problem: PathBuf,
    #[command(flatten)]
    select: SelectionArgs,
    /// Where to write the transcript (also written when input ends early).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    transcript: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    serve_addr: String,
    /// Problems to preload; repeatable.
    #[arg(long)]
    problem: Vec<PathBuf>,
    /// Directory for append-only transcript logs.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Build(a) => cmd_build(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::NoiseSim(a) => cmd_noise_sim(a),
        Command::Session(a) => cmd_session(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

// ---------------------------------------------------------------------------
// Helpers

fn seed_or_clock(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64))
}

/// JSON problem documents, or a bare CSV matrix (`.csv`).
fn load(path: &Path) -> Result<Dataset, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok(Dataset::load_csv(path, None)?);
    }
    Ok(Dataset::load(path)?)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Writes to `out`, or stdout when absent.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
            write(&mut w)?;
            w.flush().map_err(io_err(path))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush().map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    emit(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w).map_err(io_err(Path::new("<output>")))
    })
}

fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("not a number: `{s}`"))))
        .collect()
}

struct Selection {
    kind: StrategyKind,
    tie_break: TieBreak,
    seed: Option<u64>,
    objective: Objective,
    noise: Option<NoiseSpec>,
}

impl SelectionArgs {
    fn resolve(&self, ds: &Dataset) -> Result<Selection, CliError> {
        let kind = StrategyKind::parse(&self.strategy)
            .ok_or_else(|| CliError::Usage(format!("unknown strategy `{}`", self.strategy)))?;
        let seed = match self.tie_break {
            TieBreakArg::Random => Some(seed_or_clock(self.seed)),
            TieBreakArg::Index => self.seed,
        };
        let tie_break = match self.tie_break {
            TieBreakArg::Random => TieBreak::Seeded(seed.unwrap_or_default()),
            TieBreakArg::Index => TieBreak::LowestIndex,
        };
        let noise = if !kind.is_noisy() {
            None
        } else if let Some(nu) = self.nu {
            let model = ProbabilityModel::new(self.model.unwrap_or(1), self.p_alg)?;
            let seed = seed.unwrap_or_default();
            Some(NoiseSpec::with_fraction(ds, nu, model, &mut ChaCha8Rng::seed_from_u64(seed))?)
        } else if let Some(block) = ds.noise_block() {
            let mut block = block.clone();
            if let Some(m) = self.model {
                block.model = m;
            }
            if self.p_alg.is_some() {
                block.p = self.p_alg;
            }
            Some(NoiseSpec::from_block(ds, &block)?)
        } else {
            return Err(CliError::Usage(format!("{} needs --nu or a noise block in the problem", kind.name())));
        };
        let objective = if self.group_objective { Objective::Group } else { Objective::Object };
        Ok(Selection { kind, tie_break, seed, objective, noise })
    }
}

fn describe_seed(seed: Option<u64>) -> String {
    seed.map_or("none".into(), |s| s.to_string())
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Serialize)]
struct NoisyTreeOutput<'a> {
    strategy: &'static str,
    noise: groupquery::NoiseBlock,
    expected_queries: f64,
    tree: &'a NoisyTree,
}

fn cmd_build(a: BuildArgs) -> Result<(), CliError> {
    let ds = load(&a.problem)?;
    let sel = a.select.resolve(&ds)?;
    if let Some(spec) = &sel.noise {
        let tree = build_noisy_tree(&ds, spec, sel.kind.algorithm(), sel.tie_break, &mut |_| {})?;
        let e = tree.expected_queries(&ds, spec);
        eprintln!("strategy={} seed={} E[K]={e:.6}", sel.kind.name(), describe_seed(sel.seed));
        let out = NoisyTreeOutput { strategy: sel.kind.name(), noise: spec.to_block(&ds), expected_queries: e, tree: &tree };
        return emit_json(a.out.as_deref(), &out);
    }
    let cfg = BuildConfig { objective: sel.objective, tie_break: sel.tie_break, ..BuildConfig::default() };
    let tree = build(&ds, sel.kind.algorithm(), &cfg)?;
    let ev = evaluate_by_formula(&tree, &ds)?;
    eprintln!(
        "strategy={} seed={} E[K]={:.6} entropy_bound={:.6} leaves={}",
        sel.kind.name(),
        describe_seed(sel.seed),
        ev.expected_queries,
        ev.entropy_bound,
        tree.num_leaves()
    );
    emit_json(a.out.as_deref(), &export_tree(&tree, &ds))
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let ds = load(&a.problem)?;
    let tree = tree_from_json(&read_text(&a.tree)?, &ds)?;
    emit_json(None, &evaluate_by_formula(&tree, &ds)?)
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let seed = seed_or_clock(a.seed);
    let (ds, used) = match a.kind {
        GenKind::Group => generate_usable(Objective::Group, 50, seed, |s| {
            gen_group_dataset(&GroupGenParams {
                num_queries: a.queries,
                group_sizes: REFERENCE_GROUP_SIZES.to_vec(),
                correlation: Correlation::Rectangle { d1: a.d1, d2: a.d2 },
                seed: s,
            })
        })?,
        GenKind::QueryGroup => generate_usable(Objective::Object, 50, seed, |s| {
            gen_querygroup_dataset(&QueryGroupGenParams {
                num_objects: a.objects,
                query_group_sizes: REFERENCE_QUERY_GROUP_SIZES.to_vec(),
                gamma_max: a.gamma_max,
                seed: s,
            })
        })?,
    };
    eprintln!("seed={seed} used_seed={used} objects={} queries={}", ds.num_objects(), ds.num_queries());
    emit(a.out.as_deref(), |w| writeln!(w, "{}", ds.to_json()).map_err(io_err(Path::new("<output>"))))
}

#[derive(Serialize)]
struct EstimateRow<'a> {
    query: &'a str,
    gamma_w: f64,
    gamma_b: f64,
}

fn cmd_estimate(a: EstimateArgs) -> Result<(), CliError> {
    let ds = load(&a.problem)?;
    let est = estimate_params(&ds)?;
    let rows: Vec<EstimateRow> = est
        .iter()
        .enumerate()
        .map(|(j, e)| EstimateRow { query: ds.query_id(j), gamma_w: e.gamma_w, gamma_b: e.gamma_b })
        .collect();
    let mean = mean_estimate(&est);
    eprintln!("mean gamma_w={:.4} gamma_b={:.4}", mean.gamma_w, mean.gamma_b);
    emit(a.out.as_deref(), |w| Ok(write_csv(&rows, w)?))
}

fn parse_strategies(text: &str) -> Result<Vec<SweepStrategy>, CliError> {
    text.split(',')
        .map(|s| SweepStrategy::parse(s.trim()).ok_or_else(|| CliError::Usage(format!("unknown strategy `{s}`"))))
        .collect()
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let seed = seed_or_clock(a.seed);
    eprintln!("seed={seed} runs={}", a.runs);
    let records = match a.kind {
        GenKind::Group => {
            let grid = match &a.grid {
                Some(text) => text
                    .split(',')
                    .map(|cell| {
                        let (d1, d2) = cell
                            .split_once(':')
                            .ok_or_else(|| CliError::Usage(format!("grid cell `{cell}` is not d1:d2")))?;
                        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad grid cell `{cell}`")));
                        Ok((num(d1)?, num(d2)?))
                    })
                    .collect::<Result<Vec<_>, CliError>>()?,
                None => {
                    let steps = [0.0, 0.125, 0.25];
                    steps.iter().flat_map(|&d1| steps.iter().map(move |&d2| (d1, d2))).collect()
                }
            };
            group_sweep(&GroupSweepConfig {
                grid,
                num_queries: a.queries,
                group_sizes: REFERENCE_GROUP_SIZES.to_vec(),
                strategies: parse_strategies(a.strategies.as_deref().unwrap_or("gbs,gisa"))?,
                replicates: a.runs,
                seed,
            })?
        }
        GenKind::QueryGroup => query_group_sweep(&QueryGroupSweepConfig {
            gamma_max: parse_list(a.grid.as_deref().unwrap_or("0.5,0.6,0.7,0.8,0.9,1"))?,
            num_objects: a.objects,
            query_group_sizes: REFERENCE_QUERY_GROUP_SIZES.to_vec(),
            strategies: parse_strategies(a.strategies.as_deref().unwrap_or("gbs,gqsa,min-min,min-max,random"))?,
            replicates: a.runs,
            rollouts_per_object: a.rollouts,
            seed,
        })?,
    };
    emit(a.out.as_deref(), |w| Ok(write_csv(&records, w)?))
}

fn cmd_noise_sim(a: NoiseSimArgs) -> Result<(), CliError> {
    let ds = load(&a.problem)?;
    let seed = seed_or_clock(a.seed);
    let algorithms = a
        .strategies
        .split(',')
        .map(|s| match s.trim() {
            "gbs-on-dilation" => Ok(Algorithm::Gbs),
            "gisa-on-dilation" => Ok(Algorithm::Gisa),
            other => Err(CliError::Usage(format!("unknown noise strategy `{other}`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    eprintln!("seed={seed} runs={}", a.runs);
    let records = noise_sim(
        &ds,
        &NoiseSimConfig {
            nus: parse_list(&a.nu)?,
            model: a.model,
            p_true: a.p_true,
            p_alg: a.p_alg,
            algorithms,
            runs: a.runs,
            seed,
        },
    )?;
    emit(a.out.as_deref(), |w| Ok(write_csv(&records, w)?))
}

fn show_suggestion(ds: &Dataset, s: &Suggestion) -> String {
    match SuggestionDoc::new(ds, s) {
        SuggestionDoc::Query { query } => format!("ask {query}"),
        SuggestionDoc::Group { group, options } => {
            let opts: Vec<String> = options.iter().map(|o| format!("{} (p={:.3})", o.query, o.p)).collect();
            format!("ask one of group {group}: {}", opts.join(", "))
        }
    }
}

/// Parses `0`, `1`, or `<query> <0|1>`.
fn parse_answer(ds: &Dataset, line: &str, suggestion: &Suggestion) -> Result<(usize, u8), String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let bit = |s: &str| match s {
        "0" | "no" | "n" => Ok(0),
        "1" | "yes" | "y" => Ok(1),
        _ => Err(format!("expected 0 or 1, got `{s}`")),
    };
    match (parts.as_slice(), suggestion) {
        ([r], Suggestion::Query(q)) => Ok((*q, bit(r)?)),
        ([r], Suggestion::Group { options, .. }) if options.len() == 1 => Ok((options[0].0, bit(r)?)),
        ([q, r], _) => Ok((ds.query_index(q).map_err(|e| e.to_string())?, bit(r)?)),
        _ => Err("answer with `0`/`1`, or `<query> <0|1>` for a group".into()),
    }
}

fn write_transcript(out: Option<&Path>, t: &Transcript) -> Result<(), CliError> {
    match out {
        Some(path) => emit_json(Some(path), t),
        None => Ok(()),
    }
}

fn cmd_session(a: SessionArgs) -> Result<(), CliError> {
    let ds = Arc::new(load(&a.problem)?);
    let sel = a.select.resolve(&ds)?;
    let config = SessionConfig { tie_break: sel.tie_break, gbs_objective: sel.objective };
    let mut session = Session::start(ds.clone(), sel.kind, sel.noise, config)?;
    println!("strategy={} seed={} objects={}", sel.kind.name(), describe_seed(sel.seed), ds.num_objects());
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let result = loop {
        if *session.status() != Status::Active {
            break Ok(());
        }
        let suggestion = match session.suggest() {
            Ok(s) => s,
            Err(e) => break Err(CliError::Incomplete(e.to_string())),
        };
        println!("{} [surviving {}]", show_suggestion(&ds, &suggestion), session.surviving());
        io::stdout().flush().ok();
        let Some(line) = lines.next().transpose().map_err(io_err(Path::new("<stdin>")))? else {
            break Err(CliError::Incomplete("input ended before identification".into()));
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (q, r) = match parse_answer(&ds, line, &suggestion) {
            Ok(x) => x,
            Err(msg) => {
                eprintln!("{msg}");
                continue;
            }
        };
        match session.answer(q, r) {
            Ok(_) => {}
            Err(e @ (SessionError::OutsideSuggestion { .. } | SessionError::InvalidResponse(_))) => eprintln!("{e}"),
            Err(e) => break Err(e.into()),
        }
    };
    let transcript = session.transcript();
    write_transcript(a.out.as_deref(), &transcript)?;
    match session.status() {
        Status::Identified(o) => println!("identified {}", OutcomeDoc::new(&ds, o)),
        Status::Failed(reason) => {
            println!("failed: {reason}");
            return Err(CliError::Incomplete(format!("session failed: {reason}")));
        }
        Status::Active => {}
    }
    result
}

fn cmd_replay(a: ReplayArgs) -> Result<(), CliError> {
    let ds = Arc::new(load(&a.problem)?);
    let transcript: Transcript = serde_json::from_str(&read_text(&a.transcript)?)?;
    let session = replay(ds.clone(), &transcript)?;
    let steps = session.steps().len();
    match session.status() {
        Status::Identified(o) => println!("replayed {steps} steps: identified {}", OutcomeDoc::new(&ds, o)),
        Status::Failed(reason) => println!("replayed {steps} steps: failed: {reason}"),
        Status::Active => println!("replayed {steps} steps: still active"),
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let state = match &a.transcripts {
        Some(dir) => AppState::with_transcript_dir(dir),
        None => AppState::new(),
    };
    for path in &a.problem {
        let id = state.add_dataset(load(path)?);
        println!("loaded {} as {id}", path.display());
    }
    let runtime = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
    println!("listening on {}", a.serve_addr);
    runtime.block_on(groupquery_service::serve(&a.serve_addr, state)).map_err(io_err(Path::new(&a.serve_addr)))
}
