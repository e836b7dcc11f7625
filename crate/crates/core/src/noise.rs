//! Persistent query noise.
//!
//! Each object is dilated into the Hamming ball of radius ε′ over the
//! error-prone queries; identifying the object becomes identifying its
//! ball. The ball can be materialized (`dilate_explicit`) or tracked
//! implicitly through per-object mismatch counts (`NoisyState`), which is
//! what sessions and large problems use.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::builders::{argmin_with_ties, Algorithm, TieBreak};
use crate::dataset::{Dataset, DatasetError, NoiseBlock};
use crate::infomath::{InfoError, Objective, SplitStats};

/// Default materialization cap for explicit dilation, in rows.
pub const DEFAULT_ROW_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("error budget needs at least two objects")]
    TooFewObjects,
    #[error("model 2 needs 0 < p <= 0.5, got {0}")]
    InvalidP(f64),
    #[error("unknown probability model {0}")]
    UnknownModel(u8),
    #[error("error-prone query index {0} out of range")]
    UnknownQuery(usize),
    #[error("requested error budget {requested} exceeds the separable budget {budget}")]
    EpsilonAboveBudget { requested: usize, budget: usize },
    #[error("explicit dilation needs {rows} rows, above the cap of {cap}")]
    CapExceeded { rows: u128, cap: usize },
    #[error("query `{0}` was already answered")]
    AlreadyAnswered(String),
    #[error("responses {0:?} are outside the error model: no object survives")]
    OutsideErrorModel(Vec<String>),
    #[error("{0:?} cannot select queries under noise")]
    UnsupportedAlgorithm(Algorithm),
    #[error("no query separates the surviving objects {0:?}")]
    Stuck(Vec<String>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Info(#[from] InfoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum ProbabilityModel {
    /// Every corruption within budget equally likely.
    Uniform,
    /// Each error-prone answer flips with probability `p`, truncated to the budget.
    Binomial { p: f64 },
}

impl ProbabilityModel {
    pub fn new(model: u8, p: Option<f64>) -> Result<Self, NoiseError> {
        match model {
            1 => Ok(ProbabilityModel::Uniform),
            2 => {
                let p = p.unwrap_or(0.5);
                if !(p > 0.0 && p <= 0.5) {
                    return Err(NoiseError::InvalidP(p));
                }
                Ok(ProbabilityModel::Binomial { p })
            }
            m => Err(NoiseError::UnknownModel(m)),
        }
    }

    /// Flip probability; the uniform model is the `p = 0.5` case.
    pub fn p(&self) -> f64 {
        match *self {
            ProbabilityModel::Uniform => 0.5,
            ProbabilityModel::Binomial { p } => p,
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            ProbabilityModel::Uniform => 1,
            ProbabilityModel::Binomial { .. } => 2,
        }
    }
}

/// Minimum pairwise row distance and the number of errors it can absorb.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBudget {
    pub delta: usize,
    pub epsilon: usize,
    pub warning: Option<String>,
}

pub fn error_budget(ds: &Dataset) -> Result<ErrorBudget, NoiseError> {
    let m = ds.num_objects();
    if m < 2 {
        return Err(NoiseError::TooFewObjects);
    }
    let mut delta = usize::MAX;
    for a in 0..m {
        for b in a + 1..m {
            delta = delta.min(ds.hamming(a, b));
        }
    }
    let epsilon = delta.saturating_sub(1) / 2;
    let warning = (epsilon == 0).then(|| {
        format!("minimum row distance is {delta}; no answer errors can be tolerated")
    });
    Ok(ErrorBudget { delta, epsilon, warning })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    error_prone: Vec<usize>,
    is_error_prone: Vec<bool>,
    nu: f64,
    epsilon: usize,
    epsilon_prime: usize,
    model: ProbabilityModel,
    /// `ln C(k, e)` for `k ≤ Nν`, indexed `[k][e]`.
    ln_choose: Vec<Vec<f64>>,
    /// `ln Σ_{e≤ε′} C(Nν,e) p^e (1−p)^{Nν−e}`.
    ln_norm: f64,
    /// `ball_share(δ, n)` at `[δ * (Nν + 1) + n]`.
    shares: Vec<f64>,
}

impl NoiseSpec {
    /// `epsilon_override` may lower the budget but never raise it.
    pub fn new(
        ds: &Dataset,
        error_prone: Vec<usize>,
        model: ProbabilityModel,
        epsilon_override: Option<usize>,
    ) -> Result<Self, NoiseError> {
        let n = ds.num_queries();
        let mut is_error_prone = vec![false; n];
        for &q in &error_prone {
            if q >= n {
                return Err(NoiseError::UnknownQuery(q));
            }
            is_error_prone[q] = true;
        }
        let error_prone: Vec<usize> = (0..n).filter(|&q| is_error_prone[q]).collect();
        let epsilon = if ds.num_objects() < 2 { 0 } else { error_budget(ds)?.epsilon };
        let epsilon = match epsilon_override {
            Some(e) if e > epsilon => {
                return Err(NoiseError::EpsilonAboveBudget { requested: e, budget: epsilon })
            }
            Some(e) => e,
            None => epsilon,
        };
        let k = error_prone.len();
        let epsilon_prime = epsilon.min(k);
        let ln_choose = ln_choose_table(k);
        let mut spec = NoiseSpec {
            error_prone,
            is_error_prone,
            nu: if n == 0 { 0.0 } else { k as f64 / n as f64 },
            epsilon,
            epsilon_prime,
            model,
            ln_choose,
            ln_norm: 0.0,
            shares: Vec::new(),
        };
        spec.ln_norm = log_sum_exp((0..=epsilon_prime).map(|e| spec.ln_pattern(k, e, 0)));
        spec.shares = (0..=epsilon_prime)
            .flat_map(|d| (0..=k).map(move |n| (d, n)))
            .map(|(d, n)| spec.compute_share(d, n))
            .collect();
        Ok(spec)
    }

    pub fn from_block(ds: &Dataset, block: &NoiseBlock) -> Result<Self, NoiseError> {
        let prone = block
            .error_prone
            .iter()
            .map(|id| ds.query_index(id))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(ds, prone, ProbabilityModel::new(block.model, block.p)?, block.epsilon)
    }

    /// Marks `round(ν N)` queries, drawn uniformly, as error-prone.
    pub fn with_fraction(
        ds: &Dataset,
        nu: f64,
        model: ProbabilityModel,
        rng: &mut impl Rng,
    ) -> Result<Self, NoiseError> {
        let n = ds.num_queries();
        let k = ((nu.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
        let prone = index::sample(rng, n, k).into_vec();
        Self::new(ds, prone, model, None)
    }

    /// Same error-prone set and budget under a different probability model.
    pub fn with_model(&self, ds: &Dataset, model: ProbabilityModel) -> Result<Self, NoiseError> {
        Self::new(ds, self.error_prone.clone(), model, Some(self.epsilon))
    }

    /// Document form; the budget is written only when it was lowered.
    pub fn to_block(&self, ds: &Dataset) -> NoiseBlock {
        let (model, p) = match self.model {
            ProbabilityModel::Uniform => (1, None),
            ProbabilityModel::Binomial { p } => (2, Some(p)),
        };
        let full = if ds.num_objects() < 2 { 0 } else { error_budget(ds).map_or(0, |b| b.epsilon) };
        NoiseBlock {
            error_prone: self.error_prone.iter().map(|&q| ds.query_id(q).to_owned()).collect(),
            model,
            p,
            epsilon: (self.epsilon != full).then_some(self.epsilon),
        }
    }

    pub fn error_prone(&self) -> &[usize] {
        &self.error_prone
    }

    pub fn is_error_prone(&self, q: usize) -> bool {
        self.is_error_prone[q]
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn epsilon(&self) -> usize {
        self.epsilon
    }

    pub fn epsilon_prime(&self) -> usize {
        self.epsilon_prime
    }

    pub fn model(&self) -> ProbabilityModel {
        self.model
    }

    /// Rows in each object's ball, `Σ_{e≤ε′} C(Nν, e)`.
    pub fn ball_size(&self) -> u128 {
        let k = self.error_prone.len() as u128;
        let mut total = 0u128;
        let mut c = 1u128;
        for e in 0..=self.epsilon_prime as u128 {
            total += c;
            c = c * (k - e) / (e + 1);
        }
        total
    }

    /// `ln[p^(e+δ) (1−p)^(Nν−e−δ) C(n, e)]` with `n` unasked error-prone queries.
    fn ln_pattern(&self, n: usize, e: usize, delta: usize) -> f64 {
        let p = self.model.p();
        let k = self.error_prone.len();
        let flips = (e + delta) as f64;
        let ln_p = if flips == 0.0 { 0.0 } else { flips * p.ln() };
        let keeps = (k - e - delta) as f64;
        let ln_q = if keeps == 0.0 { 0.0 } else { keeps * (1.0 - p).ln() };
        self.ln_choose[n][e] + ln_p + ln_q
    }

    /// Share of an object's prior carried by the corruptions consistent
    /// with `delta` mismatches so far and `n` error-prone queries unasked.
    pub fn ball_share(&self, delta: usize, n: usize) -> f64 {
        if delta > self.epsilon_prime {
            return 0.0;
        }
        self.shares[delta * (self.error_prone.len() + 1) + n]
    }

    fn compute_share(&self, delta: usize, n: usize) -> f64 {
        let top = n.min(self.epsilon_prime - delta);
        (log_sum_exp((0..=top).map(|e| self.ln_pattern(n, e, delta))) - self.ln_norm).exp()
    }
}

fn ln_choose_table(k: usize) -> Vec<Vec<f64>> {
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=k).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    (0..=k)
        .map(|n| (0..=n).map(|e| ln_fact[n] - ln_fact[e] - ln_fact[n - e]).collect())
        .collect()
}

fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Explicit dilation

#[derive(Debug, Clone)]
pub struct ExplicitDilation {
    /// One row per corruption; object group = source object.
    pub dataset: Dataset,
    /// Source object of each row.
    pub source: Vec<usize>,
    /// Flipped error-prone queries of each row.
    pub flips: Vec<Vec<usize>>,
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Materializes every object's ball. Rows are ordered by source object,
/// then by number of flips, then lexicographically by flipped queries.
pub fn dilate_explicit(ds: &Dataset, spec: &NoiseSpec, cap: usize) -> Result<ExplicitDilation, NoiseError> {
    let rows_needed = spec.ball_size() * ds.num_objects() as u128;
    if rows_needed > cap as u128 {
        return Err(NoiseError::CapExceeded { rows: rows_needed, cap });
    }
    let k = spec.error_prone.len();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut priors = Vec::new();
    let mut source = Vec::new();
    let mut flips = Vec::new();
    for i in 0..ds.num_objects() {
        for e in 0..=spec.epsilon_prime {
            let share = (spec.ln_pattern(k, 0, e) - spec.ln_norm).exp();
            for set in combinations(&spec.error_prone, e) {
                let mut row = ds.row(i);
                for &q in &set {
                    row[q] ^= 1;
                }
                let id = if set.is_empty() {
                    ds.object_id(i).to_owned()
                } else {
                    let qs: Vec<&str> = set.iter().map(|&q| ds.query_id(q)).collect();
                    format!("{}^{}", ds.object_id(i), qs.join(","))
                };
                ids.push(id);
                rows.push(row);
                priors.push(ds.prior(i) * share);
                source.push(i);
                flips.push(set);
            }
        }
    }
    // renormalize away rounding so the document validates
    let total: f64 = priors.iter().sum();
    if total > 0.0 {
        for p in &mut priors {
            *p /= total;
        }
    }
    let mut dataset = Dataset::from_rows(ids, ds.queries().to_vec(), &rows)?
        .with_priors(priors)?
        .with_object_groups(source.clone())?;
    if let Some(labels) = ds.query_group_labels() {
        dataset = dataset.with_query_groups(labels.to_vec())?;
        if let Some(w) = ds.selection_weights() {
            dataset = dataset.with_selection_weights(w.to_vec())?;
        }
    }
    Ok(ExplicitDilation { dataset, source, flips })
}

// ---------------------------------------------------------------------------
// Implicit dilation

/// Sufficient statistics of a node of the dilated problem: surviving source
/// objects with their mismatch counts, and the answered queries.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyState {
    alive: Vec<(usize, usize)>,
    history: Vec<(usize, u8)>,
    answered: Vec<bool>,
    unasked_error_prone: usize,
}

impl NoisyState {
    pub fn root(ds: &Dataset, spec: &NoiseSpec) -> Self {
        NoisyState {
            alive: (0..ds.num_objects()).map(|i| (i, 0)).collect(),
            history: Vec::new(),
            answered: vec![false; ds.num_queries()],
            unasked_error_prone: spec.error_prone.len(),
        }
    }

    /// `(object, mismatches)` for every object still within budget.
    pub fn alive(&self) -> &[(usize, usize)] {
        &self.alive
    }

    pub fn history(&self) -> &[(usize, u8)] {
        &self.history
    }

    pub fn is_answered(&self, q: usize) -> bool {
        self.answered[q]
    }

    pub fn unasked_error_prone(&self) -> usize {
        self.unasked_error_prone
    }

    /// Exactly one source object left.
    pub fn is_resolved(&self) -> bool {
        self.alive.len() == 1
    }

    pub fn identified(&self) -> Option<usize> {
        self.is_resolved().then(|| self.alive[0].0)
    }

    /// Dilated mass of each surviving object.
    pub fn group_masses(&self, ds: &Dataset, spec: &NoiseSpec) -> Vec<(usize, f64)> {
        self.alive
            .iter()
            .map(|&(i, d)| (i, ds.prior(i) * spec.ball_share(d, self.unasked_error_prone)))
            .collect()
    }

    pub fn mass(&self, ds: &Dataset, spec: &NoiseSpec) -> f64 {
        self.group_masses(ds, spec).iter().map(|g| g.1).sum()
    }

    /// Reduction factors of `query` on the dilated problem, computed from
    /// the mismatch counts alone.
    pub fn split_stats(
        &self,
        ds: &Dataset,
        spec: &NoiseSpec,
        query: usize,
        objective: Objective,
    ) -> Result<SplitStats, NoiseError> {
        if self.answered[query] {
            return Err(NoiseError::AlreadyAnswered(ds.query_id(query).to_owned()));
        }
        let col = ds.column(query);
        let n = self.unasked_error_prone;
        let mut groups = Vec::with_capacity(self.alive.len());
        let (mut left, mut right) = (0.0, 0.0);
        for &(i, d) in &self.alive {
            let b = col[i] as usize;
            let (l, r) = if spec.is_error_prone[query] {
                // answering 0 is a mismatch when the true answer is 1
                (ds.prior(i) * spec.ball_share(d + b, n - 1), ds.prior(i) * spec.ball_share(d + 1 - b, n - 1))
            } else {
                let w = ds.prior(i) * spec.ball_share(d, n);
                if b == 0 {
                    (w, 0.0)
                } else {
                    (0.0, w)
                }
            };
            left += l;
            right += r;
            groups.push((i, l, r));
        }
        if left + right <= 0.0 {
            return Err(InfoError::ZeroMass.into());
        }
        Ok(SplitStats::from_masses(query, left, right, groups, objective))
    }

    /// Unanswered queries that split the node.
    pub fn candidates(&self, ds: &Dataset, spec: &NoiseSpec) -> Result<Vec<SplitStats>, NoiseError> {
        let mut out = Vec::new();
        for q in 0..ds.num_queries() {
            if self.answered[q] {
                continue;
            }
            let s = self.split_stats(ds, spec, q, Objective::Group)?;
            if s.left_mass > 0.0 && s.right_mass > 0.0 {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Greedy choice: GBS minimizes ρ, GISA minimizes the group cost.
    pub fn choose(
        &self,
        ds: &Dataset,
        spec: &NoiseSpec,
        algorithm: Algorithm,
        tie_break: TieBreak,
    ) -> Result<Option<SplitStats>, NoiseError> {
        let cands = self.candidates(ds, spec)?;
        let scores: Vec<f64> = match algorithm {
            Algorithm::Gbs => cands.iter().map(|s| s.rho).collect(),
            Algorithm::Gisa => cands.iter().map(|s| s.cost).collect(),
            other => return Err(NoiseError::UnsupportedAlgorithm(other)),
        };
        Ok(argmin_with_ties(&scores, tie_break, &self.history).map(|k| cands[k].clone()))
    }

    /// State after observing `response` to `query`.
    pub fn answer(&self, ds: &Dataset, spec: &NoiseSpec, query: usize, response: u8) -> Result<Self, NoiseError> {
        if self.answered[query] {
            return Err(NoiseError::AlreadyAnswered(ds.query_id(query).to_owned()));
        }
        let col = ds.column(query);
        let prone = spec.is_error_prone[query];
        let alive = self
            .alive
            .iter()
            .filter_map(|&(i, d)| match (col[i] == response, prone) {
                (true, _) => Some((i, d)),
                (false, true) if d < spec.epsilon_prime => Some((i, d + 1)),
                _ => None,
            })
            .collect();
        let mut next = self.clone();
        next.alive = alive;
        next.answered[query] = true;
        next.history.push((query, response));
        if prone {
            next.unasked_error_prone -= 1;
        }
        Ok(next)
    }
}

/// Split on one query in a noisy identification tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoisyTree {
    Leaf { object: Option<usize> },
    Query { query: usize, left: Box<NoisyTree>, right: Box<NoisyTree> },
}

impl NoisyTree {
    /// `Σ` over dilated rows of prior × depth.
    pub fn expected_queries(&self, ds: &Dataset, spec: &NoiseSpec) -> f64 {
        fn walk(t: &NoisyTree, s: &NoisyState, ds: &Dataset, spec: &NoiseSpec, depth: usize) -> f64 {
            match t {
                NoisyTree::Leaf { .. } => s.mass(ds, spec) * depth as f64,
                NoisyTree::Query { query, left, right } => {
                    let l = s.answer(ds, spec, *query, 0).expect("unanswered on path");
                    let r = s.answer(ds, spec, *query, 1).expect("unanswered on path");
                    walk(left, &l, ds, spec, depth + 1) + walk(right, &r, ds, spec, depth + 1)
                }
            }
        }
        walk(self, &NoisyState::root(ds, spec), ds, spec, 0)
    }
}

/// Grows the full greedy tree over the implicit dilated problem. Every
/// node visited is passed to `visit` (used by the oracle tests).
pub fn build_noisy_tree(
    ds: &Dataset,
    spec: &NoiseSpec,
    algorithm: Algorithm,
    tie_break: TieBreak,
    visit: &mut dyn FnMut(&NoisyState),
) -> Result<NoisyTree, NoiseError> {
    fn grow(
        s: NoisyState,
        ds: &Dataset,
        spec: &NoiseSpec,
        algorithm: Algorithm,
        tie_break: TieBreak,
        visit: &mut dyn FnMut(&NoisyState),
    ) -> Result<NoisyTree, NoiseError> {
        visit(&s);
        if s.alive.len() <= 1 {
            return Ok(NoisyTree::Leaf { object: s.identified() });
        }
        let Some(chosen) = s.choose(ds, spec, algorithm, tie_break)? else {
            return Err(NoiseError::Stuck(s.alive.iter().map(|&(i, _)| ds.object_id(i).to_owned()).collect()));
        };
        let q = chosen.query;
        let left = grow(s.answer(ds, spec, q, 0)?, ds, spec, algorithm, tie_break, visit)?;
        let right = grow(s.answer(ds, spec, q, 1)?, ds, spec, algorithm, tie_break, visit)?;
        Ok(NoisyTree::Query { query: q, left: Box::new(left), right: Box::new(right) })
    }
    grow(NoisyState::root(ds, spec), ds, spec, algorithm, tie_break, visit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyIdentification {
    pub object: usize,
    /// `(query, observed response)` in the order asked.
    pub transcript: Vec<(usize, u8)>,
}

/// Runs greedy selection over the implicit dilated problem, asking
/// `respond` for each chosen query, until one object remains.
pub fn identify_with_noise(
    ds: &Dataset,
    spec: &NoiseSpec,
    algorithm: Algorithm,
    tie_break: TieBreak,
    mut respond: impl FnMut(usize) -> u8,
) -> Result<NoisyIdentification, NoiseError> {
    let mut state = NoisyState::root(ds, spec);
    loop {
        if let Some(object) = state.identified() {
            return Ok(NoisyIdentification { object, transcript: state.history });
        }
        if state.alive.is_empty() {
            return Err(NoiseError::OutsideErrorModel(
                state.history.iter().map(|&(q, r)| format!("{}={r}", ds.query_id(q))).collect(),
            ));
        }
        let Some(chosen) = state.choose(ds, spec, algorithm, tie_break)? else {
            return Err(NoiseError::Stuck(
                state.alive.iter().map(|&(i, _)| ds.object_id(i).to_owned()).collect(),
            ));
        };
        let r = respond(chosen.query);
        state = state.answer(ds, spec, chosen.query, r)?;
    }
}

/// Corrupts `true_object`'s row: draws an error count from the model,
/// then flips that many error-prone answers chosen uniformly.
pub fn simulate_errors_with(ds: &Dataset, spec: &NoiseSpec, true_object: usize, rng: &mut impl Rng) -> Vec<u8> {
    let mut row = ds.row(true_object);
    let k = spec.error_prone.len();
    let weights: Vec<f64> = (0..=spec.epsilon_prime)
        .map(|e| (spec.ln_pattern(k, e, 0) - spec.ln_norm).exp())
        .collect();
    let mut u = rng.gen::<f64>() * weights.iter().sum::<f64>();
    let mut e = weights.len() - 1;
    for (j, w) in weights.iter().enumerate() {
        if u < *w {
            e = j;
            break;
        }
        u -= w;
    }
    for pos in index::sample(rng, k, e) {
        row[spec.error_prone[pos]] ^= 1;
    }
    row
}

pub fn simulate_errors(ds: &Dataset, spec: &NoiseSpec, true_object: usize, seed: u64) -> Vec<u8> {
    simulate_errors_with(ds, spec, true_object, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn toy3_spec(model: ProbabilityModel) -> (Dataset, NoiseSpec) {
        let ds = fixtures::toy_example_3();
        let spec = NoiseSpec::new(&ds, vec![1, 2], model, None).unwrap();
        (ds, spec)
    }

    #[test]
    fn toy3_budget() {
        let ds = fixtures::toy_example_3();
        let b = error_budget(&ds).unwrap();
        assert_eq!((b.delta, b.epsilon), (3, 1));
        assert!(b.warning.is_none());
    }

    #[test]
    fn identical_rows_warn() {
        let ds = Dataset::from_matrix(&[vec![0, 1], vec![0, 1]]).unwrap();
        let b = error_budget(&ds).unwrap();
        assert_eq!((b.delta, b.epsilon), (0, 0));
        assert!(b.warning.is_some());
    }

    #[test]
    fn single_object_has_no_budget() {
        let ds = Dataset::from_matrix(&[vec![0, 1]]).unwrap();
        assert!(matches!(error_budget(&ds), Err(NoiseError::TooFewObjects)));
    }

    #[test]
    fn toy3_explicit_priors() {
        let (ds, spec) = toy3_spec(ProbabilityModel::Uniform);
        let d = dilate_explicit(&ds, &spec, DEFAULT_ROW_CAP).unwrap();
        let want = [1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0, 0.25, 0.25, 0.25];
        for (got, want) in d.dataset.priors().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(d.dataset.row(1), vec![0, 1, 0]);
        assert_eq!(d.dataset.row(5), vec![1, 1, 0]);

        let spec2 = spec.with_model(&ds, ProbabilityModel::new(2, Some(0.25)).unwrap()).unwrap();
        let d = dilate_explicit(&ds, &spec2, DEFAULT_ROW_CAP).unwrap();
        let want = [0.15, 0.05, 0.05, 0.45, 0.15, 0.15];
        for (got, want) in d.dataset.priors().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nothing_error_prone_is_identity() {
        let ds = fixtures::toy_example_1();
        let spec = NoiseSpec::new(&ds, vec![], ProbabilityModel::Uniform, None).unwrap();
        let d = dilate_explicit(&ds, &spec, DEFAULT_ROW_CAP).unwrap();
        assert_eq!(d.dataset.num_objects(), 4);
        assert_eq!(d.dataset.priors(), ds.priors());
    }

    #[test]
    fn cap_is_enforced() {
        let (ds, spec) = toy3_spec(ProbabilityModel::Uniform);
        assert!(matches!(dilate_explicit(&ds, &spec, 5), Err(NoiseError::CapExceeded { rows: 6, cap: 5 })));
    }

    #[test]
    fn saturated_object_keeps_its_group_whole() {
        let (ds, spec) = toy3_spec(ProbabilityModel::Uniform);
        // q2 = 0 puts θ2 at its budget
        let s = NoisyState::root(&ds, &spec).answer(&ds, &spec, 1, 0).unwrap();
        assert_eq!(s.alive(), &[(0, 0), (1, 1)]);
        let stats = s.split_stats(&ds, &spec, 2, Objective::Group).unwrap();
        let g1 = stats.group_rhos.iter().find(|g| g.group == 1).unwrap();
        assert_eq!(g1.rho, 1.0);
    }

    #[test]
    fn identifies_through_a_flip() {
        let (ds, spec) = toy3_spec(ProbabilityModel::Uniform);
        for (observed, want) in [([1, 0, 1], 1), ([0, 1, 1], 0), ([1, 1, 1], 1), ([0, 0, 0], 0)] {
            let id = identify_with_noise(&ds, &spec, Algorithm::Gisa, TieBreak::LowestIndex, |q| observed[q]).unwrap();
            assert_eq!(id.object, want, "{observed:?}");
        }
    }

    #[test]
    fn two_flips_fall_outside() {
        let ds = Dataset::from_matrix(&[vec![0, 0, 0, 0, 0], vec![1, 1, 1, 1, 1]]).unwrap();
        let spec = NoiseSpec::new(&ds, vec![0, 1, 2, 3, 4], ProbabilityModel::Uniform, Some(1)).unwrap();
        let observed = [0, 1, 1, 0, 0];
        // two mismatches for θ1 and three for θ2
        let mut s = NoisyState::root(&ds, &spec);
        for q in 0..5 {
            s = s.answer(&ds, &spec, q, observed[q]).unwrap();
        }
        assert!(s.alive().is_empty());
    }

    #[test]
    fn model_two_rejects_bad_p() {
        assert!(ProbabilityModel::new(2, Some(0.6)).is_err());
        assert!(ProbabilityModel::new(2, Some(0.0)).is_err());
        assert!(ProbabilityModel::new(3, None).is_err());
    }

    #[test]
    fn override_cannot_raise_budget() {
        let ds = fixtures::toy_example_3();
        assert!(NoiseSpec::new(&ds, vec![1, 2], ProbabilityModel::Uniform, Some(2)).is_err());
        let s = NoiseSpec::new(&ds, vec![1, 2], ProbabilityModel::Uniform, Some(0)).unwrap();
        assert_eq!(s.epsilon_prime(), 0);
    }

    #[test]
    fn zero_budget_leaves_row_alone() {
        let ds = fixtures::toy_example_3();
        let spec = NoiseSpec::new(&ds, vec![1, 2], ProbabilityModel::Uniform, Some(0)).unwrap();
        for seed in 0..20 {
            assert_eq!(simulate_errors(&ds, &spec, 1, seed), vec![1, 1, 1]);
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let (ds, spec) = toy3_spec(ProbabilityModel::Uniform);
        assert_eq!(simulate_errors(&ds, &spec, 0, 11), simulate_errors(&ds, &spec, 0, 11));
    }
}
