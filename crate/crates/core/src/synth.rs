//! Random problem generators with tunable response correlation, and the
//! majority-vote estimator of that correlation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::infomath::Objective;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator parameter: {0}")]
    InvalidParam(String),
    #[error("no usable dataset after {0} attempts")]
    RetriesExhausted(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Group sizes shaped like a 298-object, 16-group reference database.
pub const REFERENCE_GROUP_SIZES: [usize; 16] = [40, 35, 30, 28, 25, 22, 20, 18, 16, 14, 12, 10, 9, 8, 6, 5];
/// Query-group sizes for 79 queries in 10 groups.
pub const REFERENCE_QUERY_GROUP_SIZES: [usize; 10] = [12, 10, 9, 9, 8, 8, 7, 6, 5, 5];

/// How each query's `(γ_w, γ_b)` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Correlation {
    Fixed { gamma_w: f64, gamma_b: f64 },
    PerQuery { gammas: Vec<(f64, f64)> },
    /// `γ_w ~ U[0.75 − d1, 0.75 + d2]`, `γ_b ~ U[0.75 − d2, 0.75 + d1]`.
    Rectangle { d1: f64, d2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGenParams {
    pub num_queries: usize,
    pub group_sizes: Vec<usize>,
    pub correlation: Correlation,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGroupGenParams {
    pub num_objects: usize,
    pub query_group_sizes: Vec<usize>,
    pub gamma_max: f64,
    pub seed: u64,
}

pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^ (x >> 31)
    }
    mix(mix(seed ^ mix(stream)) ^ index)
}

fn check_gamma(name: &str, g: f64) -> Result<(), SynthError> {
    if (0.5..=1.0).contains(&g) {
        Ok(())
    } else {
        Err(SynthError::InvalidParam(format!("{name} = {g} outside [0.5, 1]")))
    }
}

fn labels_from_sizes(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat(g).take(n)).collect()
}

impl GroupGenParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(SynthError::InvalidParam("group sizes must be positive".into()));
        }
        match &self.correlation {
            Correlation::Fixed { gamma_w, gamma_b } => {
                check_gamma("gamma_w", *gamma_w)?;
                check_gamma("gamma_b", *gamma_b)?;
            }
            Correlation::PerQuery { gammas } => {
                if gammas.len() != self.num_queries {
                    return Err(SynthError::InvalidParam("one (gamma_w, gamma_b) pair per query".into()));
                }
                for &(w, b) in gammas {
                    check_gamma("gamma_w", w)?;
                    check_gamma("gamma_b", b)?;
                }
            }
            Correlation::Rectangle { d1, d2 } => {
                for (name, d) in [("d1", d1), ("d2", d2)] {
                    if !(0.0..=0.25).contains(d) {
                        return Err(SynthError::InvalidParam(format!("{name} = {d} outside [0, 0.25]")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Group-correlated responses: per query a coin `x`; each group's answer
/// `b_i` agrees with `x` with probability `γ_b`; each object agrees with
/// its group's `b_i` with probability `γ_w`. Uniform priors.
pub fn gen_group_dataset(params: &GroupGenParams) -> Result<Dataset, SynthError> {
    params.validate()?;
    let labels = labels_from_sizes(&params.group_sizes);
    let m = labels.len();
    let mut rows = vec![vec![0u8; params.num_queries]; m];
    for j in 0..params.num_queries {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, 1, j as u64));
        let (gw, gb) = match &params.correlation {
            Correlation::Fixed { gamma_w, gamma_b } => (*gamma_w, *gamma_b),
            Correlation::PerQuery { gammas } => gammas[j],
            Correlation::Rectangle { d1, d2 } => {
                (rng.gen_range(0.75 - d1..=0.75 + d2), rng.gen_range(0.75 - d2..=0.75 + d1))
            }
        };
        let x = rng.gen_bool(0.5) as u8;
        let group_answer: Vec<u8> =
            (0..params.group_sizes.len()).map(|_| if rng.gen_bool(gb) { x } else { 1 - x }).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            let b = group_answer[labels[i]];
            row[j] = if rng.gen_bool(gw) { b } else { 1 - b };
        }
    }
    Ok(Dataset::from_matrix(&rows)?.with_object_groups(labels)?)
}

impl QueryGroupGenParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        check_gamma("gamma_max", self.gamma_max)?;
        if self.query_group_sizes.is_empty() || self.query_group_sizes.contains(&0) {
            return Err(SynthError::InvalidParam("query group sizes must be positive".into()));
        }
        if self.num_objects == 0 {
            return Err(SynthError::InvalidParam("need at least one object".into()));
        }
        Ok(())
    }
}

/// Per query group `γ_b ~ U[0.5, γ_max]`; per query a coin `x`, and each
/// object answers `x` with probability `γ_b`. Uniform priors and uniform
/// in-group selection.
pub fn gen_querygroup_dataset(params: &QueryGroupGenParams) -> Result<Dataset, SynthError> {
    params.validate()?;
    let labels = labels_from_sizes(&params.query_group_sizes);
    let n = labels.len();
    let gammas: Vec<f64> = (0..params.query_group_sizes.len())
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, 2, g as u64));
            if params.gamma_max > 0.5 {
                rng.gen_range(0.5..=params.gamma_max)
            } else {
                0.5
            }
        })
        .collect();
    let mut rows = vec![vec![0u8; n]; params.num_objects];
    for j in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, 3, j as u64));
        let gb = gammas[labels[j]];
        let x = rng.gen_bool(0.5) as u8;
        for row in rows.iter_mut() {
            row[j] = if rng.gen_bool(gb) { x } else { 1 - x };
        }
    }
    Ok(Dataset::from_matrix(&rows)?.with_query_groups(labels)?)
}

/// Regenerates with successive seeds (`seed`, `seed + 1`, …) until the
/// dataset suits `objective`: distinct rows for object identification,
/// separable groups for group identification.
pub fn generate_usable(
    objective: Objective,
    max_attempts: usize,
    seed: u64,
    generate: impl Fn(u64) -> Result<Dataset, SynthError>,
) -> Result<(Dataset, u64), SynthError> {
    for k in 0..max_attempts as u64 {
        let s = seed.wrapping_add(k);
        let ds = generate(s)?;
        let ok = match objective {
            Objective::Object => ds.rows_distinct(),
            Objective::Group => ds.groups_separable(),
        };
        if ok {
            return Ok((ds, s));
        }
    }
    Err(SynthError::RetriesExhausted(max_attempts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryEstimate {
    pub gamma_w: f64,
    pub gamma_b: f64,
}

fn majority(ones: usize, total: usize) -> u8 {
    // ties go to 1
    (2 * ones >= total) as u8
}

/// Majority-vote estimate of each query's `(γ_w, γ_b)`.
pub fn estimate_params(ds: &Dataset) -> Result<Vec<QueryEstimate>, SynthError> {
    let labels = ds
        .object_group_labels()
        .ok_or(DatasetError::MissingGroups("object"))?;
    let m = ds.num_object_groups();
    let mut sizes = vec![0usize; m];
    for &g in labels {
        sizes[g] += 1;
    }
    let mut out = Vec::with_capacity(ds.num_queries());
    for j in 0..ds.num_queries() {
        let col = ds.column(j);
        let mut ones = vec![0usize; m];
        for (i, &g) in labels.iter().enumerate() {
            ones[g] += col[i] as usize;
        }
        let b: Vec<u8> = (0..m).map(|g| majority(ones[g], sizes[g])).collect();
        let gamma_w = (0..m)
            .map(|g| {
                let agree = if b[g] == 1 { ones[g] } else { sizes[g] - ones[g] };
                agree as f64 / sizes[g] as f64
            })
            .sum::<f64>()
            / m as f64;
        let b_ones = b.iter().filter(|&&v| v == 1).count();
        let x = majority(b_ones, m);
        let gamma_b = b.iter().filter(|&&v| v == x).count() as f64 / m as f64;
        out.push(QueryEstimate { gamma_w, gamma_b });
    }
    Ok(out)
}

/// Means of the per-query estimates.
pub fn mean_estimate(estimates: &[QueryEstimate]) -> QueryEstimate {
    let n = estimates.len().max(1) as f64;
    QueryEstimate {
        gamma_w: estimates.iter().map(|e| e.gamma_w).sum::<f64>() / n,
        gamma_b: estimates.iter().map(|e| e.gamma_b).sum::<f64>() / n,
    }
}
