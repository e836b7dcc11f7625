//! Benchmark harness: repeated randomized runs of each strategy on
//! generated problems, reported as mean expected query count with a
//! symmetric 95% interval.
//!
//! Single-query strategies are scored exactly from their trees. Strategies
//! that hand a choice to the user are scored by Monte Carlo rollouts, since
//! their trees grow with every user-choice branch.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builders::{build, choose_group, Algorithm, BuildConfig, BuildError, GroupScore, TieBreak};
use crate::dataset::Dataset;
use crate::infomath::{NodePopulation, Objective};
use crate::noise::{identify_with_noise, simulate_errors_with, NoiseError, NoiseSpec, ProbabilityModel};
use crate::synth::{
    derive_seed, gen_group_dataset, gen_querygroup_dataset, generate_usable, Correlation, GroupGenParams,
    QueryGroupGenParams, SynthError,
};
use crate::tree::{evaluate_by_traversal, TreeError};

/// Generation attempts before a replicate is given up.
const MAX_ATTEMPTS: usize = 50;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepStrategy {
    Gbs,
    Gisa,
    Gqsa,
    Gigqsa,
    MinMin,
    MinMax,
    Random,
}

impl SweepStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SweepStrategy::Gbs => "gbs",
            SweepStrategy::Gisa => "gisa",
            SweepStrategy::Gqsa => "gqsa",
            SweepStrategy::Gigqsa => "gigqsa",
            SweepStrategy::MinMin => "min-min",
            SweepStrategy::MinMax => "min-max",
            SweepStrategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        use SweepStrategy::*;
        [Gbs, Gisa, Gqsa, Gigqsa, MinMin, MinMax, Random].into_iter().find(|k| k.name() == s)
    }
}

/// Mean and 95% half-width, `1.96 s / √n` with the sample deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub mean: f64,
    pub half_width: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let half_width = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    };
    Summary { runs: n, mean, half_width }
}

// ---------------------------------------------------------------------------
// Scoring one dataset

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub objective: Objective,
    pub tie_break: TieBreak,
    pub rollouts_per_object: usize,
    pub seed: u64,
}

/// Expected query count of `strategy` on `ds`.
pub fn expected_queries(ds: &Dataset, strategy: SweepStrategy, cfg: &ScoreConfig) -> Result<f64, ExperimentError> {
    let exact = |algorithm: Algorithm, objective: Objective| -> Result<f64, ExperimentError> {
        let bc = BuildConfig { objective, tie_break: cfg.tie_break, ..Default::default() };
        let tree = build(ds, algorithm, &bc)?;
        Ok(evaluate_by_traversal(&tree, ds)?)
    };
    match strategy {
        SweepStrategy::Gbs => exact(Algorithm::Gbs, cfg.objective),
        SweepStrategy::Gisa => exact(Algorithm::Gisa, Objective::Group),
        SweepStrategy::Gqsa => rollout_expected_queries(ds, Policy::Group(GroupScore::Greedy), Objective::Object, cfg),
        SweepStrategy::Gigqsa => rollout_expected_queries(ds, Policy::Group(GroupScore::Greedy), Objective::Group, cfg),
        SweepStrategy::MinMin => rollout_expected_queries(ds, Policy::Group(GroupScore::MinMin), cfg.objective, cfg),
        SweepStrategy::MinMax => rollout_expected_queries(ds, Policy::Group(GroupScore::MinMax), cfg.objective, cfg),
        SweepStrategy::Random => rollout_expected_queries(ds, Policy::Random, cfg.objective, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Suggest a query group; the user picks a member by its selection weight.
    Group(GroupScore),
    /// The user picks any unanswered query uniformly.
    Random,
}

/// Monte Carlo estimate of `Σ_i π_i E[queries | θ_i]`: each object answers
/// truthfully in `rollouts_per_object` independent runs.
pub fn rollout_expected_queries(
    ds: &Dataset,
    policy: Policy,
    objective: Objective,
    cfg: &ScoreConfig,
) -> Result<f64, ExperimentError> {
    if cfg.rollouts_per_object == 0 {
        return Err(ExperimentError::Config("need at least one rollout per object".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // group choices depend only on the answered set; cache them
    let mut cache: HashMap<Vec<(usize, u8)>, Option<Vec<(usize, f64)>>> = HashMap::new();
    let mut total = 0.0;
    for i in 0..ds.num_objects() {
        let mut sum = 0usize;
        for _ in 0..cfg.rollouts_per_object {
            sum += rollout(ds, i, policy, objective, cfg.tie_break, &mut rng, &mut cache)?;
        }
        total += ds.prior(i) * sum as f64 / cfg.rollouts_per_object as f64;
    }
    Ok(total)
}

fn rollout(
    ds: &Dataset,
    object: usize,
    policy: Policy,
    objective: Objective,
    tie_break: TieBreak,
    rng: &mut ChaCha8Rng,
    cache: &mut HashMap<Vec<(usize, u8)>, Option<Vec<(usize, f64)>>>,
) -> Result<usize, ExperimentError> {
    let mut pop = NodePopulation::root(ds);
    let mut history: Vec<(usize, u8)> = Vec::new();
    let mut open: Vec<usize> = (0..ds.num_queries()).collect();
    while !pop.is_resolved(objective) {
        let q = match policy {
            Policy::Random => {
                if open.is_empty() {
                    return Err(stuck(ds, &pop));
                }
                open.swap_remove(rng.gen_range(0..open.len()))
            }
            Policy::Group(score) => {
                let mut key = history.clone();
                key.sort_unstable();
                let options = match cache.get(&key) {
                    Some(o) => o.clone(),
                    None => {
                        let o = choose_group(&pop, ds, &history, objective, score, tie_break)?
                            .map(|(c, _)| c.branches.iter().map(|&(q, p, _)| (q, p)).collect::<Vec<_>>());
                        cache.insert(key, o.clone());
                        o
                    }
                };
                let Some(options) = options else { return Err(stuck(ds, &pop)) };
                let mut u = rng.gen::<f64>();
                let mut pick = options[options.len() - 1].0;
                for &(q, p) in &options {
                    if u < p {
                        pick = q;
                        break;
                    }
                    u -= p;
                }
                pick
            }
        };
        let r = ds.response(object, q);
        history.push((q, r));
        pop = pop.filter(ds, q, r);
    }
    Ok(history.len())
}

fn stuck(ds: &Dataset, pop: &NodePopulation) -> ExperimentError {
    ExperimentError::Build(BuildError::Stuck {
        objects: pop.members().iter().map(|&i| ds.object_id(i).to_owned()).collect(),
        answered: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Sweeps

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub sweep: String,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub gamma_max: Option<f64>,
    pub strategy: String,
    pub runs: usize,
    pub mean: f64,
    pub half_width: f64,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSweepConfig {
    pub grid: Vec<(f64, f64)>,
    pub num_queries: usize,
    pub group_sizes: Vec<usize>,
    pub strategies: Vec<SweepStrategy>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGroupSweepConfig {
    pub gamma_max: Vec<f64>,
    pub num_objects: usize,
    pub query_group_sizes: Vec<usize>,
    pub strategies: Vec<SweepStrategy>,
    pub replicates: usize,
    pub rollouts_per_object: usize,
    pub seed: u64,
}

fn run_cell(
    replicates: usize,
    strategies: &[SweepStrategy],
    objective: Objective,
    rollouts_per_object: usize,
    cell_seed: u64,
    generate: impl Fn(u64) -> Result<Dataset, SynthError> + Sync,
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    if replicates == 0 {
        return Err(ExperimentError::Config("need at least one replicate".into()));
    }
    let per_rep: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let (ds, used) = generate_usable(objective, MAX_ATTEMPTS, derive_seed(cell_seed, 10, rep), &generate)?;
            let cfg = ScoreConfig {
                objective,
                tie_break: TieBreak::Seeded(used),
                rollouts_per_object,
                seed: derive_seed(used, 11, 0),
            };
            strategies.iter().map(|&s| expected_queries(&ds, s, &cfg)).collect()
        })
        .collect::<Result<_, ExperimentError>>()?;
    // transpose to per-strategy columns
    Ok((0..strategies.len()).map(|k| per_rep.iter().map(|r| r[k]).collect()).collect())
}

/// Group-identification sweep over a `(d1, d2)` grid of correlation
/// rectangles. GBS here stops at group-pure nodes.
pub fn group_sweep(cfg: &GroupSweepConfig) -> Result<Vec<SweepRecord>, ExperimentError> {
    let mut out = Vec::new();
    for (c, &(d1, d2)) in cfg.grid.iter().enumerate() {
        let start = Instant::now();
        let cell_seed = derive_seed(cfg.seed, 20, c as u64);
        let gen = |seed: u64| {
            gen_group_dataset(&GroupGenParams {
                num_queries: cfg.num_queries,
                group_sizes: cfg.group_sizes.clone(),
                correlation: Correlation::Rectangle { d1, d2 },
                seed,
            })
        };
        let cols = run_cell(cfg.replicates, &cfg.strategies, Objective::Group, 1, cell_seed, gen)?;
        let wall = start.elapsed().as_secs_f64();
        for (s, values) in cfg.strategies.iter().zip(cols) {
            let sum = summarize(&values);
            out.push(SweepRecord {
                sweep: "group".into(),
                d1: Some(d1),
                d2: Some(d2),
                gamma_max: None,
                strategy: s.name().into(),
                runs: sum.runs,
                mean: sum.mean,
                half_width: sum.half_width,
                seed: cfg.seed,
                wall_seconds: wall,
            });
        }
    }
    Ok(out)
}

/// Object-identification sweep over `γ_max` with query groups.
pub fn query_group_sweep(cfg: &QueryGroupSweepConfig) -> Result<Vec<SweepRecord>, ExperimentError> {
    let mut out = Vec::new();
    for (c, &gamma_max) in cfg.gamma_max.iter().enumerate() {
        let start = Instant::now();
        let cell_seed = derive_seed(cfg.seed, 21, c as u64);
        let gen = |seed: u64| {
            gen_querygroup_dataset(&QueryGroupGenParams {
                num_objects: cfg.num_objects,
                query_group_sizes: cfg.query_group_sizes.clone(),
                gamma_max,
                seed,
            })
        };
        let cols =
            run_cell(cfg.replicates, &cfg.strategies, Objective::Object, cfg.rollouts_per_object, cell_seed, gen)?;
        let wall = start.elapsed().as_secs_f64();
        for (s, values) in cfg.strategies.iter().zip(cols) {
            let sum = summarize(&values);
            out.push(SweepRecord {
                sweep: "query-group".into(),
                d1: None,
                d2: None,
                gamma_max: Some(gamma_max),
                strategy: s.name().into(),
                runs: sum.runs,
                mean: sum.mean,
                half_width: sum.half_width,
                seed: cfg.seed,
                wall_seconds: wall,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Noise simulation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRecord {
    pub nu: f64,
    pub model: u8,
    pub p_true: Option<f64>,
    pub p_alg: Option<f64>,
    pub strategy: String,
    pub runs: usize,
    pub mean: f64,
    pub half_width: f64,
    pub recovery_rate: f64,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSimConfig {
    pub nus: Vec<f64>,
    pub model: u8,
    pub p_true: Option<f64>,
    pub p_alg: Option<f64>,
    /// `Gbs` or `Gisa`, both run on the dilated problem.
    pub algorithms: Vec<Algorithm>,
    pub runs: usize,
    pub seed: u64,
}

/// Per run: draw the error-prone set for ν, corrupt every object's answers
/// under the true model, and identify it with the algorithm's model. The
/// run's value is the prior-weighted number of queries asked.
pub fn noise_sim(ds: &Dataset, cfg: &NoiseSimConfig) -> Result<Vec<NoiseRecord>, ExperimentError> {
    if cfg.runs == 0 {
        return Err(ExperimentError::Config("need at least one run".into()));
    }
    let true_model = ProbabilityModel::new(cfg.model, cfg.p_true)?;
    let alg_model = ProbabilityModel::new(cfg.model, cfg.p_alg.or(cfg.p_true))?;
    let mut out = Vec::new();
    for (c, &nu) in cfg.nus.iter().enumerate() {
        let start = Instant::now();
        // per run and algorithm: (expected queries, recovered, attempts)
        let per_run: Vec<Vec<(f64, usize, usize)>> = (0..cfg.runs as u64)
            .into_par_iter()
            .map(|run| {
                let run_seed = derive_seed(cfg.seed, 30 + c as u64, run);
                let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
                let spec_true = NoiseSpec::with_fraction(ds, nu, true_model, &mut rng)?;
                let spec_alg = spec_true.with_model(ds, alg_model)?;
                let rows: Vec<Vec<u8>> =
                    (0..ds.num_objects()).map(|i| simulate_errors_with(ds, &spec_true, i, &mut rng)).collect();
                cfg.algorithms
                    .iter()
                    .map(|&alg| {
                        let mut expected = 0.0;
                        let mut recovered = 0;
                        for (i, row) in rows.iter().enumerate() {
                            let tie = TieBreak::Seeded(run_seed);
                            match identify_with_noise(ds, &spec_alg, alg, tie, |q| row[q]) {
                                Ok(id) => {
                                    expected += ds.prior(i) * id.transcript.len() as f64;
                                    recovered += (id.object == i) as usize;
                                }
                                Err(NoiseError::OutsideErrorModel(_)) => {}
                                Err(e) => return Err(e.into()),
                            }
                        }
                        Ok((expected, recovered, rows.len()))
                    })
                    .collect::<Result<Vec<_>, ExperimentError>>()
            })
            .collect::<Result<_, ExperimentError>>()?;
        let wall = start.elapsed().as_secs_f64();
        for (k, alg) in cfg.algorithms.iter().enumerate() {
            let values: Vec<f64> = per_run.iter().map(|r| r[k].0).collect();
            let recovered: usize = per_run.iter().map(|r| r[k].1).sum();
            let attempts: usize = per_run.iter().map(|r| r[k].2).sum();
            let s = summarize(&values);
            out.push(NoiseRecord {
                nu,
                model: cfg.model,
                p_true: (cfg.model == 2).then(|| true_model.p()),
                p_alg: (cfg.model == 2).then(|| alg_model.p()),
                strategy: match alg {
                    Algorithm::Gbs => "gbs-on-dilation".into(),
                    Algorithm::Gisa => "gisa-on-dilation".into(),
                    other => return Err(NoiseError::UnsupportedAlgorithm(*other).into()),
                },
                runs: s.runs,
                mean: s.mean,
                half_width: s.half_width,
                recovery_rate: recovered as f64 / attempts.max(1) as f64,
                seed: cfg.seed,
                wall_seconds: wall,
            });
        }
    }
    Ok(out)
}

/// Writes records as CSV with a fixed header.
pub fn write_csv<T: Serialize>(records: &[T], out: impl Write) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
