//! Greedy top-down tree construction: balanced splitting (GBS), group
//! identification splitting (GISA) and their query-group counterparts
//! (GQSA, GIGQSA).
//!
//! Node selection lives in `choose_query` / `choose_group` so interactive
//! sessions make exactly the choices the offline builders make.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::infomath::{group_query_cost, split_stats, GroupCost, InfoError, NodePopulation, Objective, SplitStats};
use crate::tree::{Branch, DecisionTree, Node, TreeVariant};

/// Costs closer than this are ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("no query separates {objects:?} after answering {answered:?}")]
    Stuck { objects: Vec<String>, answered: Vec<String> },
    #[error("every query group is exhausted while {objects:?} remain after answering {answered:?}")]
    GroupsExhausted { objects: Vec<String>, answered: Vec<String> },
    #[error("depth limit {0} reached")]
    DepthExceeded(usize),
    #[error("tree exceeds {0} nodes")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "seed")]
pub enum TieBreak {
    LowestIndex,
    Seeded(u64),
}

/// The greedy rules. `Gbs` carries its stopping objective; the others fix
/// theirs (GISA and GIGQSA stop at group-pure nodes, GQSA at singletons).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Gbs,
    Gisa,
    Gqsa,
    Gigqsa,
}

impl Algorithm {
    pub fn uses_query_groups(self) -> bool {
        matches!(self, Algorithm::Gqsa | Algorithm::Gigqsa)
    }

    /// Stopping objective; `gbs_objective` applies to GBS only.
    pub fn objective(self, gbs_objective: Objective) -> Objective {
        match self {
            Algorithm::Gbs => gbs_objective,
            Algorithm::Gisa | Algorithm::Gigqsa => Objective::Group,
            Algorithm::Gqsa => Objective::Object,
        }
    }

    /// Objective used to score candidates.
    fn scoring(self) -> QueryScore {
        match self {
            Algorithm::Gbs => QueryScore::Balance,
            Algorithm::Gisa => QueryScore::GroupCost,
            Algorithm::Gqsa => QueryScore::Balance,
            Algorithm::Gigqsa => QueryScore::GroupCost,
        }
    }

    pub fn variant(self, gbs_objective: Objective) -> TreeVariant {
        match (self.uses_query_groups(), self.objective(gbs_objective)) {
            (false, Objective::Object) => TreeVariant::ObjectId,
            (false, Objective::Group) => TreeVariant::GroupId,
            (true, Objective::Object) => TreeVariant::ObjectIdGroupQueries,
            (true, Objective::Group) => TreeVariant::GroupIdGroupQueries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueryScore {
    Balance,
    GroupCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Stopping rule for GBS; ignored by the other algorithms.
    pub objective: Objective,
    pub tie_break: TieBreak,
    /// Defaults to the number of queries.
    pub max_depth: Option<usize>,
    pub max_nodes: Option<usize>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig { objective: Objective::Object, tie_break: TieBreak::LowestIndex, max_depth: None, max_nodes: None }
    }
}

impl BuildConfig {
    pub fn group() -> Self {
        BuildConfig { objective: Objective::Group, ..Default::default() }
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.tie_break = TieBreak::Seeded(seed);
        self
    }
}

// ---------------------------------------------------------------------------
// Node selection

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Order-independent key of an answered set, so a node gets the same
/// tie-break draw however it is reached.
pub fn history_key(history: &[(usize, u8)]) -> u64 {
    let mut pairs: Vec<u64> = history.iter().map(|&(q, r)| ((q as u64) << 1) | r as u64).collect();
    pairs.sort_unstable();
    pairs.into_iter().fold(0x5eed, |h, p| splitmix(h ^ splitmix(p)))
}

/// Picks one of `n` tied candidates.
fn pick_tied(tie_break: TieBreak, history: &[(usize, u8)], n: usize) -> usize {
    match tie_break {
        TieBreak::LowestIndex => 0,
        TieBreak::Seeded(_) if n == 1 => 0,
        TieBreak::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed) ^ history_key(history));
            rng.gen_range(0..n)
        }
    }
}

/// Index (into `scores`) of the minimum, ties within `TIE_TOLERANCE`
/// resolved by `tie_break`.
pub(crate) fn argmin_with_ties(scores: &[f64], tie_break: TieBreak, history: &[(usize, u8)]) -> Option<usize> {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tied: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] <= best + TIE_TOLERANCE).collect();
    Some(tied[pick_tied(tie_break, history, tied.len())])
}

/// Single-query candidates: every query that splits the node. Answered
/// queries are constant on the survivors, so they drop out too.
pub fn candidate_queries(pop: &NodePopulation, ds: &Dataset) -> Vec<usize> {
    (0..ds.num_queries()).filter(|&q| !pop.is_constant(ds, q)).collect()
}

/// Scores every candidate at the node and returns the greedy choice with
/// all candidate stats (in query order). `None` when nothing splits.
pub fn choose_query(
    pop: &NodePopulation,
    ds: &Dataset,
    history: &[(usize, u8)],
    algorithm: Algorithm,
    tie_break: TieBreak,
) -> Result<Option<(SplitStats, Vec<SplitStats>)>, BuildError> {
    let score = algorithm.scoring();
    let objective = if score == QueryScore::GroupCost { Objective::Group } else { Objective::Object };
    let candidates = candidate_queries(pop, ds);
    if candidates.is_empty() {
        return Ok(None);
    }
    if pop.mass() <= 0.0 {
        // nothing rides on a massless node; split on the first candidate
        let stats = SplitStats::from_masses(candidates[0], 0.0, 0.0, std::iter::empty(), Objective::Object);
        return Ok(Some((stats.clone(), vec![stats])));
    }
    let stats = candidates
        .iter()
        .map(|&q| split_stats(pop, ds, q, objective))
        .collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = stats.iter().map(|s| s.cost).collect();
    let k = argmin_with_ties(&scores, tie_break, history).expect("candidates are non-empty");
    Ok(Some((stats[k].clone(), stats)))
}

/// How a query group is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupScore {
    /// `1 − Σ_q p(q) gain(q)`.
    Greedy,
    /// `min_q p(q) ρ(q)`.
    MinMin,
    /// `max_q p(q) ρ(q)`.
    MinMax,
}

/// Scored group candidates at a node: groups with an unanswered query that
/// splits the node.
pub fn candidate_groups(
    pop: &NodePopulation,
    ds: &Dataset,
    answered: &[bool],
    objective: Objective,
) -> Result<Vec<GroupCost>, BuildError> {
    let mut out = Vec::new();
    for g in 0..ds.num_query_groups() {
        let members = ds.queries_in_group(g);
        if !members.iter().any(|&q| !answered[q] && !pop.is_constant(ds, q)) {
            continue;
        }
        if pop.mass() <= 0.0 {
            let probs = ds.selection_probabilities(g, answered)?;
            let branches = probs
                .into_iter()
                .map(|(q, p)| (q, p, SplitStats::from_masses(q, 0.0, 0.0, std::iter::empty(), objective)))
                .collect();
            out.push(GroupCost { group: g, cost: 1.0, branches });
            continue;
        }
        out.push(group_query_cost(pop, ds, g, answered, objective)?);
    }
    Ok(out)
}

pub fn group_score(cost: &GroupCost, score: GroupScore) -> f64 {
    let weighted = cost.branches.iter().map(|(_, p, s)| p * s.rho);
    match score {
        GroupScore::Greedy => cost.cost,
        GroupScore::MinMin => weighted.fold(f64::INFINITY, f64::min),
        GroupScore::MinMax => weighted.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Greedy query-group choice; `None` when no group can split the node.
pub fn choose_group(
    pop: &NodePopulation,
    ds: &Dataset,
    history: &[(usize, u8)],
    objective: Objective,
    score: GroupScore,
    tie_break: TieBreak,
) -> Result<Option<(GroupCost, Vec<GroupCost>)>, BuildError> {
    let answered = answered_mask(ds, history);
    let candidates = candidate_groups(pop, ds, &answered, objective)?;
    let scores: Vec<f64> = candidates.iter().map(|c| group_score(c, score)).collect();
    Ok(argmin_with_ties(&scores, tie_break, history).map(|k| (candidates[k].clone(), candidates)))
}

pub fn answered_mask(ds: &Dataset, history: &[(usize, u8)]) -> Vec<bool> {
    let mut mask = vec![false; ds.num_queries()];
    for &(q, _) in history {
        mask[q] = true;
    }
    mask
}

// ---------------------------------------------------------------------------
// Builders

fn check_preconditions(ds: &Dataset, algorithm: Algorithm, objective: Objective) -> Result<(), BuildError> {
    if algorithm.uses_query_groups() && !ds.has_query_groups() {
        return Err(BuildError::Precondition(format!("{algorithm:?} needs query groups")));
    }
    match objective {
        Objective::Object => ds.require_distinct_rows()?,
        Objective::Group => {
            if !ds.has_object_groups() {
                return Err(BuildError::Precondition(format!("{algorithm:?} needs object groups")));
            }
            ds.require_separable_groups()?;
        }
    }
    Ok(())
}

struct Grower<'a> {
    ds: &'a Dataset,
    algorithm: Algorithm,
    objective: Objective,
    cfg: BuildConfig,
    max_depth: usize,
    nodes: usize,
}

impl Grower<'_> {
    fn count(&mut self) -> Result<(), BuildError> {
        self.nodes += 1;
        match self.cfg.max_nodes {
            Some(cap) if self.nodes > cap => Err(BuildError::TooLarge(cap)),
            _ => Ok(()),
        }
    }

    fn names(&self, pop: &NodePopulation, history: &[(usize, u8)]) -> (Vec<String>, Vec<String>) {
        (
            pop.members().iter().map(|&i| self.ds.object_id(i).to_owned()).collect(),
            history
                .iter()
                .map(|&(q, r)| format!("{}={}", self.ds.query_id(q), r))
                .collect(),
        )
    }

    fn grow(&mut self, pop: NodePopulation, history: &mut Vec<(usize, u8)>) -> Result<Node, BuildError> {
        self.count()?;
        if pop.is_empty() || pop.is_resolved(self.objective) {
            return Ok(Node::leaf(self.ds, &pop, self.objective));
        }
        if history.len() >= self.max_depth {
            return Err(BuildError::DepthExceeded(self.max_depth));
        }
        if self.algorithm.uses_query_groups() {
            self.grow_group(pop, history)
        } else {
            self.grow_single(pop, history)
        }
    }

    fn grow_single(&mut self, pop: NodePopulation, history: &mut Vec<(usize, u8)>) -> Result<Node, BuildError> {
        let Some((chosen, _)) = choose_query(&pop, self.ds, history, self.algorithm, self.cfg.tie_break)? else {
            let (objects, answered) = self.names(&pop, history);
            return Err(BuildError::Stuck { objects, answered });
        };
        let q = chosen.query;
        let (l, r) = pop.split(self.ds, q);
        history.push((q, 0));
        let left = self.grow(l, history)?;
        history.pop();
        history.push((q, 1));
        let right = self.grow(r, history)?;
        history.pop();
        Ok(Node::Query { query: q, left: Box::new(left), right: Box::new(right) })
    }

    fn grow_group(&mut self, pop: NodePopulation, history: &mut Vec<(usize, u8)>) -> Result<Node, BuildError> {
        let chosen = choose_group(&pop, self.ds, history, self.objective, GroupScore::Greedy, self.cfg.tie_break)?;
        let Some((cost, _)) = chosen else {
            let answered = answered_mask(self.ds, history);
            let open = (0..self.ds.num_queries()).any(|q| !answered[q]);
            let (objects, answered) = self.names(&pop, history);
            return Err(if open {
                BuildError::Stuck { objects, answered }
            } else {
                BuildError::GroupsExhausted { objects, answered }
            });
        };
        let mut branches = Vec::with_capacity(cost.branches.len());
        for &(q, p, _) in &cost.branches {
            let (l, r) = pop.split(self.ds, q);
            history.push((q, 0));
            let left = self.grow(l, history)?;
            history.pop();
            history.push((q, 1));
            let right = self.grow(r, history)?;
            history.pop();
            branches.push(Branch { query: q, probability: p, left, right });
        }
        Ok(Node::Group { group: cost.group, branches })
    }
}

/// Builds the greedy tree of `algorithm` on the whole dataset.
pub fn build(ds: &Dataset, algorithm: Algorithm, cfg: &BuildConfig) -> Result<DecisionTree, BuildError> {
    let objective = algorithm.objective(cfg.objective);
    check_preconditions(ds, algorithm, objective)?;
    let mut grower = Grower {
        ds,
        algorithm,
        objective,
        cfg: *cfg,
        max_depth: cfg.max_depth.unwrap_or(ds.num_queries()),
        nodes: 0,
    };
    let root = grower.grow(NodePopulation::root(ds), &mut Vec::new())?;
    Ok(DecisionTree::new(algorithm.variant(cfg.objective), root))
}

/// Most balanced split at every node. `cfg.objective` chooses between
/// identifying the object and stopping at group-pure nodes.
pub fn build_gbs(ds: &Dataset, cfg: &BuildConfig) -> Result<DecisionTree, BuildError> {
    build(ds, Algorithm::Gbs, cfg)
}

pub fn build_gisa(ds: &Dataset, cfg: &BuildConfig) -> Result<DecisionTree, BuildError> {
    build(ds, Algorithm::Gisa, cfg)
}

pub fn build_gqsa(ds: &Dataset, cfg: &BuildConfig) -> Result<DecisionTree, BuildError> {
    build(ds, Algorithm::Gqsa, cfg)
}

pub fn build_gigqsa(ds: &Dataset, cfg: &BuildConfig) -> Result<DecisionTree, BuildError> {
    build(ds, Algorithm::Gigqsa, cfg)
}

// ---------------------------------------------------------------------------
// Post-hoc audit

/// A node where some candidate scores strictly below the chosen split.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyViolation {
    pub answered: Vec<(usize, u8)>,
    pub chosen: f64,
    pub best: f64,
}

/// Re-scores every internal node of `tree` and reports nodes where the
/// choice was not a minimum-cost candidate.
pub fn audit_greedy(
    tree: &DecisionTree,
    ds: &Dataset,
    algorithm: Algorithm,
) -> Result<Vec<GreedyViolation>, BuildError> {
    let objective = tree.variant.objective();
    let mut out = Vec::new();
    let mut history = Vec::new();
    audit_node(&tree.root, ds, algorithm, objective, NodePopulation::root(ds), &mut history, &mut out)?;
    Ok(out)
}

fn audit_node(
    node: &Node,
    ds: &Dataset,
    algorithm: Algorithm,
    objective: Objective,
    pop: NodePopulation,
    history: &mut Vec<(usize, u8)>,
    out: &mut Vec<GreedyViolation>,
) -> Result<(), BuildError> {
    let mut children: Vec<(usize, &Node, &Node)> = Vec::new();
    match node {
        Node::Leaf(_) => return Ok(()),
        Node::Query { query, left, right } => {
            if pop.mass() > 0.0 {
                if let Some((_, all)) = choose_query(&pop, ds, history, algorithm, TieBreak::LowestIndex)? {
                    let best = all.iter().map(|s| s.cost).fold(f64::INFINITY, f64::min);
                    let chosen = all.iter().find(|s| s.query == *query).map_or(f64::INFINITY, |s| s.cost);
                    if chosen > best + TIE_TOLERANCE {
                        out.push(GreedyViolation { answered: history.clone(), chosen, best });
                    }
                }
            }
            children.push((*query, left, right));
        }
        Node::Group { group, branches } => {
            if pop.mass() > 0.0 {
                let answered = answered_mask(ds, history);
                let all = candidate_groups(&pop, ds, &answered, objective)?;
                let best = all.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
                let chosen = all.iter().find(|c| c.group == *group).map_or(f64::INFINITY, |c| c.cost);
                if chosen > best + TIE_TOLERANCE {
                    out.push(GreedyViolation { answered: history.clone(), chosen, best });
                }
            }
            children.extend(branches.iter().map(|b| (b.query, &b.left, &b.right)));
        }
    }
    for (q, left, right) in children {
        let (l, r) = pop.split(ds, q);
        history.push((q, 0));
        audit_node(left, ds, algorithm, objective, l, history, out)?;
        history.pop();
        history.push((q, 1));
        audit_node(right, ds, algorithm, objective, r, history, out)?;
        history.pop();
    }
    Ok(())
}
