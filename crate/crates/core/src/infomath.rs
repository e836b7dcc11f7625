//! Entropies, reduction factors and split costs.
//!
//! All logarithms are base 2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("probability {0} is negative")]
    Negative(f64),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("proportion {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("node has zero probability mass")]
    ZeroMass,
    #[error("dataset has no object groups")]
    NoGroups,
    #[error("dataset has no query groups")]
    NoQueryGroups,
    #[error("query group {0} has no unanswered queries")]
    GroupExhausted(usize),
}

const SUM_TOLERANCE: f64 = 1e-9;

/// What a tree is trying to pin down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Object,
    Group,
}

/// Shannon entropy of a probability vector, in bits.
pub fn entropy(dist: &[f64]) -> Result<f64, InfoError> {
    if let Some(&neg) = dist.iter().find(|&&p| p < 0.0 || p.is_nan()) {
        return Err(InfoError::Negative(neg));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(InfoError::NotNormalized(sum));
    }
    Ok(dist.iter().map(|&p| plogp(p)).sum())
}

/// Entropy of a proportion, `H(p) = -p log p - (1-p) log (1-p)`.
pub fn binary_entropy(p: f64) -> Result<f64, InfoError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(InfoError::OutOfRange(p));
    }
    Ok(h2(p))
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Unchecked binary entropy; callers guarantee `p` is a proportion.
#[inline]
pub(crate) fn h2(p: f64) -> f64 {
    plogp(p) + plogp(1.0 - p)
}

/// Entropy of an unnormalized non-negative mass vector, normalized by `total`.
pub(crate) fn entropy_of_masses(masses: impl IntoIterator<Item = f64>, total: f64) -> f64 {
    masses.into_iter().map(|w| plogp(w / total)).sum()
}

/// The objects that reach a node, with their total and per-group mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePopulation {
    members: Vec<usize>,
    mass: f64,
    /// `(group, mass)` for every object group with at least one member, ascending.
    group_masses: Vec<(usize, f64)>,
}

impl NodePopulation {
    /// Every object of the dataset.
    pub fn root(ds: &Dataset) -> Self {
        Self::from_members(ds, (0..ds.num_objects()).collect())
    }

    /// `members` must be sorted and free of duplicates.
    pub fn from_members(ds: &Dataset, members: Vec<usize>) -> Self {
        let mass = members.iter().map(|&i| ds.prior(i)).sum();
        let group_masses = match ds.object_group_labels() {
            Some(labels) => {
                let mut per = vec![None::<f64>; ds.num_object_groups()];
                for &i in &members {
                    *per[labels[i]].get_or_insert(0.0) += ds.prior(i);
                }
                per.into_iter().enumerate().filter_map(|(g, m)| m.map(|m| (g, m))).collect()
            }
            None => Vec::new(),
        };
        NodePopulation { members, mass, group_masses }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn group_masses(&self) -> &[(usize, f64)] {
        &self.group_masses
    }

    /// Object indices of every group present, keyed by group.
    pub fn partition(&self, ds: &Dataset) -> Vec<(usize, Vec<usize>)> {
        let mut cells: Vec<(usize, Vec<usize>)> =
            self.group_masses.iter().map(|&(g, _)| (g, Vec::new())).collect();
        if let Some(labels) = ds.object_group_labels() {
            for &i in &self.members {
                let pos = cells.binary_search_by_key(&labels[i], |c| c.0).expect("group present");
                cells[pos].1.push(i);
            }
        }
        cells
    }

    /// True when at most one object group is present.
    pub fn is_group_pure(&self) -> bool {
        self.group_masses.len() <= 1
    }

    /// True when the node has reached the stopping rule of `objective`.
    pub fn is_resolved(&self, objective: Objective) -> bool {
        match objective {
            Objective::Object => self.members.len() <= 1,
            Objective::Group => self.is_group_pure(),
        }
    }

    /// Objects answering `response` to `query`.
    pub fn filter(&self, ds: &Dataset, query: usize, response: u8) -> Self {
        let col = ds.column(query);
        let kept = self.members.iter().copied().filter(|&i| col[i] == response).collect();
        Self::from_members(ds, kept)
    }

    /// `(left, right)` children: objects answering 0 and 1.
    pub fn split(&self, ds: &Dataset, query: usize) -> (Self, Self) {
        (self.filter(ds, query, 0), self.filter(ds, query, 1))
    }

    /// True when every member gives the same answer to `query`.
    pub fn is_constant(&self, ds: &Dataset, query: usize) -> bool {
        let col = ds.column(query);
        match self.members.first() {
            Some(&first) => self.members.iter().all(|&i| col[i] == col[first]),
            None => true,
        }
    }

    /// Entropy impurity of the group distribution at the node.
    pub fn impurity(&self) -> Result<f64, InfoError> {
        if self.mass <= 0.0 {
            return Err(InfoError::ZeroMass);
        }
        Ok(entropy_of_masses(self.group_masses.iter().map(|g| g.1), self.mass))
    }
}

/// Reduction factor of one object group at a split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRho {
    pub group: usize,
    /// The group's share of the node mass, `π_{Θ_a^i} / π_{Θ_a}`.
    pub share: f64,
    pub rho: f64,
}

/// Reduction factors and greedy cost of splitting a node on one query.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    pub query: usize,
    pub left_mass: f64,
    pub right_mass: f64,
    pub rho: f64,
    /// One entry per group with positive mass at the node.
    pub group_rhos: Vec<GroupRho>,
    /// `ρ_a` for the object objective, `C_a` for the group objective.
    pub cost: f64,
}

impl SplitStats {
    /// `H(ρ_a) − Σ_i share_i H(ρ_a^i)`: the entropy removed by the split. The
    /// group term is dropped for the object objective.
    pub fn gain(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Object => h2(self.rho),
            Objective::Group => h2(self.rho) - self.group_term(),
        }
    }

    pub(crate) fn group_term(&self) -> f64 {
        self.group_rhos.iter().map(|g| g.share * h2(g.rho)).sum()
    }

    /// Assembles stats from child masses; `groups` holds `(group, left, right)`.
    pub(crate) fn from_masses(
        query: usize,
        left: f64,
        right: f64,
        groups: impl IntoIterator<Item = (usize, f64, f64)>,
        objective: Objective,
    ) -> Self {
        let total = left + right;
        let rho = if left == 0.0 || right == 0.0 { 1.0 } else { left.max(right) / total };
        let group_rhos: Vec<GroupRho> = groups
            .into_iter()
            .filter(|&(_, l, r)| l + r > 0.0)
            .map(|(group, l, r)| GroupRho {
                group,
                share: (l + r) / total,
                rho: if l == 0.0 || r == 0.0 { 1.0 } else { l.max(r) / (l + r) },
            })
            .collect();
        let mut stats =
            SplitStats { query, left_mass: left, right_mass: right, rho, group_rhos, cost: 0.0 };
        stats.cost = match objective {
            Objective::Object => rho,
            Objective::Group => 1.0 - h2(rho) + stats.group_term(),
        };
        stats
    }
}

/// Reduction factors of `query` at the node holding `pop`.
pub fn split_stats(
    pop: &NodePopulation,
    ds: &Dataset,
    query: usize,
    objective: Objective,
) -> Result<SplitStats, InfoError> {
    if pop.mass <= 0.0 {
        return Err(InfoError::ZeroMass);
    }
    let col = ds.column(query);
    let mut side = [0.0f64; 2];
    match ds.object_group_labels() {
        Some(labels) => {
            let mut per = vec![[0.0f64; 2]; ds.num_object_groups()];
            for &i in &pop.members {
                let b = col[i] as usize;
                let w = ds.prior(i);
                side[b] += w;
                per[labels[i]][b] += w;
            }
            let groups = pop.group_masses.iter().map(|&(g, _)| (g, per[g][0], per[g][1]));
            Ok(SplitStats::from_masses(query, side[0], side[1], groups, objective))
        }
        None => {
            if objective == Objective::Group {
                return Err(InfoError::NoGroups);
            }
            for &i in &pop.members {
                side[col[i] as usize] += ds.prior(i);
            }
            Ok(SplitStats::from_masses(query, side[0], side[1], std::iter::empty(), objective))
        }
    }
}

/// Cost of suggesting a whole query group at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCost {
    pub group: usize,
    /// `C_a(j) = 1 − Σ_q p_j(q) gain(q)`.
    pub cost: f64,
    /// `(query, selection probability, stats)` for each unanswered query.
    pub branches: Vec<(usize, f64, SplitStats)>,
}

impl GroupCost {
    /// True when no member query splits the node.
    pub fn is_uninformative(&self) -> bool {
        self.branches.iter().all(|(_, _, s)| s.left_mass == 0.0 || s.right_mass == 0.0)
    }
}

/// Greedy cost of offering query group `group` at the node.
pub fn group_query_cost(
    pop: &NodePopulation,
    ds: &Dataset,
    group: usize,
    answered: &[bool],
    objective: Objective,
) -> Result<GroupCost, InfoError> {
    if !ds.has_query_groups() {
        return Err(InfoError::NoQueryGroups);
    }
    let probs = ds
        .selection_probabilities(group, answered)
        .map_err(|_| InfoError::GroupExhausted(group))?;
    let mut branches = Vec::with_capacity(probs.len());
    let mut expected_gain = 0.0;
    for (q, p) in probs {
        let stats = split_stats(pop, ds, q, objective)?;
        expected_gain += p * stats.gain(objective);
        branches.push((q, p, stats));
    }
    Ok(GroupCost { group, cost: 1.0 - expected_gain, branches })
}

/// Decrease in entropy impurity produced by splitting on `query`.
pub fn impurity_decrease(pop: &NodePopulation, ds: &Dataset, query: usize) -> Result<f64, InfoError> {
    if !ds.has_object_groups() {
        return Err(InfoError::NoGroups);
    }
    let parent = pop.impurity()?;
    let (left, right) = pop.split(ds, query);
    let mut children = 0.0;
    for child in [left, right] {
        if child.mass > 0.0 {
            children += child.mass / pop.mass * child.impurity()?;
        }
    }
    Ok(parent - children)
}

/// One candidate in an impurity-equivalence report.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceEntry {
    pub query: usize,
    pub impurity_decrease: f64,
    pub cost: f64,
    /// `impurity_decrease + cost − 1`; zero when the identity holds.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub entries: Vec<EquivalenceEntry>,
    pub argmin_cost: Vec<usize>,
    pub argmax_decrease: Vec<usize>,
    pub holds: bool,
}

/// Tolerance of the impurity/cost identity and of the arg-optimum sets.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;

/// Checks that the impurity decrease of every candidate equals one minus its
/// group-identification cost, and that both criteria pick the same queries.
pub fn check_impurity_equivalence(
    pop: &NodePopulation,
    ds: &Dataset,
    queries: &[usize],
) -> Result<EquivalenceReport, InfoError> {
    let mut entries = Vec::with_capacity(queries.len());
    for &q in queries {
        let decrease = impurity_decrease(pop, ds, q)?;
        let cost = split_stats(pop, ds, q, Objective::Group)?.cost;
        entries.push(EquivalenceEntry {
            query: q,
            impurity_decrease: decrease,
            cost,
            residual: decrease + cost - 1.0,
        });
    }
    let min_cost = entries.iter().map(|e| e.cost).fold(f64::INFINITY, f64::min);
    let max_dec = entries.iter().map(|e| e.impurity_decrease).fold(f64::NEG_INFINITY, f64::max);
    let argmin_cost: Vec<usize> = entries
        .iter()
        .filter(|e| e.cost <= min_cost + EQUIVALENCE_TOLERANCE)
        .map(|e| e.query)
        .collect();
    let argmax_decrease: Vec<usize> = entries
        .iter()
        .filter(|e| e.impurity_decrease >= max_dec - EQUIVALENCE_TOLERANCE)
        .map(|e| e.query)
        .collect();
    let holds = entries.iter().all(|e| e.residual.abs() <= EQUIVALENCE_TOLERANCE)
        && argmin_cost == argmax_decrease;
    Ok(EquivalenceReport { entries, argmin_cost, argmax_decrease, holds })
}
