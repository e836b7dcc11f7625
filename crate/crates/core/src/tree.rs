//! Decision trees for the four identification settings, and their exact
//! expected-cost evaluation.
//!
//! Expected query counts are computed twice, independently: by walking to
//! every leaf (`evaluate_by_traversal`) and by the closed form
//! `H(target) + Σ_a p̃_a π_{Θ_a} [1 − Σ_q p(q) gain_a(q)]` over internal nodes
//! (`evaluate_by_formula`). The two must agree on every well-formed tree.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::infomath::{self, split_stats, InfoError, NodePopulation, Objective};

/// Tolerance for branch probabilities summing to one.
const BRANCH_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown query group {0}")]
    UnknownQueryGroup(usize),
    #[error("unknown object group {0}")]
    UnknownObjectGroup(usize),
    #[error("query index {0} out of range")]
    QueryOutOfRange(usize),
    #[error("branch probabilities sum to {0}, expected 1")]
    BranchProbabilities(f64),
    #[error("query `{query}` is not a member of query group {group}")]
    QueryOutsideGroup { query: String, group: usize },
    #[error("query `{0}` is asked twice on one path")]
    RepeatedQuery(String),
    #[error("leaf lists objects {listed:?} but the path admits {expected:?}")]
    InconsistentLeaf { listed: Vec<String>, expected: Vec<String> },
    #[error("leaf holding {0:?} is not resolved for this tree variant")]
    ImpureLeaf(Vec<String>),
    #[error("leaf outcome does not match its objects {0:?}")]
    WrongOutcome(Vec<String>),
    #[error("{0}")]
    VariantMismatch(String),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("malformed tree document: {0}")]
    Malformed(String),
}

/// Which identification problem a tree solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeVariant {
    ObjectId,
    GroupId,
    ObjectIdGroupQueries,
    GroupIdGroupQueries,
}

impl TreeVariant {
    pub fn objective(self) -> Objective {
        match self {
            TreeVariant::ObjectId | TreeVariant::ObjectIdGroupQueries => Objective::Object,
            TreeVariant::GroupId | TreeVariant::GroupIdGroupQueries => Objective::Group,
        }
    }

    pub fn uses_query_groups(self) -> bool {
        matches!(self, TreeVariant::ObjectIdGroupQueries | TreeVariant::GroupIdGroupQueries)
    }

    fn single_query(self) -> Self {
        match self {
            TreeVariant::ObjectIdGroupQueries => TreeVariant::ObjectId,
            TreeVariant::GroupIdGroupQueries => TreeVariant::GroupId,
            v => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Object(usize),
    Group(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    /// `None` only for the empty side of a query that does not split its node.
    pub outcome: Option<Outcome>,
    /// Surviving objects, ascending.
    pub objects: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub query: usize,
    pub probability: f64,
    pub left: Node,
    pub right: Node,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Leaf),
    /// A single query; `left` answers 0, `right` answers 1.
    Query { query: usize, left: Box<Node>, right: Box<Node> },
    /// A suggested query group; the user picks one branch.
    Group { group: usize, branches: Vec<Branch> },
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }

    /// Leaf for the given surviving set; the outcome is the single object,
    /// or the heaviest group for group objectives.
    pub fn leaf(ds: &Dataset, pop: &NodePopulation, objective: Objective) -> Node {
        let outcome = match objective {
            _ if pop.is_empty() => None,
            Objective::Object if pop.len() == 1 => Some(Outcome::Object(pop.members()[0])),
            Objective::Object => majority_group(pop).map(Outcome::Group),
            Objective::Group => majority_group(pop).map(Outcome::Group).or_else(|| {
                // no groups: degenerate to the single object
                (pop.len() == 1).then(|| Outcome::Object(pop.members()[0]))
            }),
        };
        let _ = ds;
        Node::Leaf(Leaf { outcome, objects: pop.members().to_vec() })
    }
}

fn majority_group(pop: &NodePopulation) -> Option<usize> {
    // first maximum, so ties go to the lowest group
    let mut best: Option<(usize, f64)> = None;
    for &(g, m) in pop.group_masses() {
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((g, m));
        }
    }
    best.map(|(g, _)| g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub variant: TreeVariant,
    pub root: Node,
}

/// Both evaluations of a tree plus the entropy bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEvaluation {
    pub expected_queries: f64,
    pub by_traversal: f64,
    pub by_formula: f64,
    /// `H(P)` for object trees, `H(P_y)` for group trees.
    pub entropy_bound: f64,
    /// Largest reduction factor over all internal nodes (and branches).
    pub overall_rho: f64,
    /// `H(P) / H(ρ)`; only for single-query object trees.
    pub corollary_bound: Option<f64>,
}

/// Both sides of the impure-leaf identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpureLeafCheck {
    pub by_traversal: f64,
    pub by_formula: f64,
    pub holds: bool,
}

impl DecisionTree {
    pub fn new(variant: TreeVariant, root: Node) -> Self {
        DecisionTree { variant, root }
    }

    pub fn num_leaves(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 1,
                Node::Query { left, right, .. } => count(left) + count(right),
                Node::Group { branches, .. } => {
                    branches.iter().map(|b| count(&b.left) + count(&b.right)).sum()
                }
            }
        }
        count(&self.root)
    }

    pub fn num_internal(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Query { left, right, .. } => 1 + count(left) + count(right),
                Node::Group { branches, .. } => {
                    1 + branches.iter().map(|b| count(&b.left) + count(&b.right)).sum::<usize>()
                }
            }
        }
        count(&self.root)
    }

    /// Rewrites group nodes that offer exactly one query as plain query
    /// nodes, turning a group-query tree whose groups are singletons into
    /// the equivalent single-query tree.
    pub fn collapse_singleton_groups(&self) -> DecisionTree {
        fn walk(n: &Node) -> Node {
            match n {
                Node::Leaf(l) => Node::Leaf(l.clone()),
                Node::Query { query, left, right } => Node::Query {
                    query: *query,
                    left: Box::new(walk(left)),
                    right: Box::new(walk(right)),
                },
                Node::Group { branches, .. } if branches.len() == 1 => Node::Query {
                    query: branches[0].query,
                    left: Box::new(walk(&branches[0].left)),
                    right: Box::new(walk(&branches[0].right)),
                },
                Node::Group { group, branches } => Node::Group {
                    group: *group,
                    branches: branches
                        .iter()
                        .map(|b| Branch {
                            query: b.query,
                            probability: b.probability,
                            left: walk(&b.left),
                            right: walk(&b.right),
                        })
                        .collect(),
                },
            }
        }
        let root = walk(&self.root);
        let has_groups = contains_group_node(&root);
        let variant = if has_groups { self.variant } else { self.variant.single_query() };
        DecisionTree { variant, root }
    }

    /// Follows `object`'s true answers down the tree. At group nodes `choose`
    /// picks the branch index. Returns the leaf and the queries answered.
    pub fn descend<'a>(
        &'a self,
        ds: &Dataset,
        object: usize,
        mut choose: impl FnMut(usize, &[Branch]) -> usize,
    ) -> (&'a Leaf, Vec<usize>) {
        let mut node = &self.root;
        let mut asked = Vec::new();
        loop {
            match node {
                Node::Leaf(leaf) => return (leaf, asked),
                Node::Query { query, left, right } => {
                    asked.push(*query);
                    node = if ds.response(object, *query) == 0 { left } else { right };
                }
                Node::Group { group, branches } => {
                    let b = &branches[choose(*group, branches)];
                    asked.push(b.query);
                    node = if ds.response(object, b.query) == 0 { &b.left } else { &b.right };
                }
            }
        }
    }
}

fn contains_group_node(n: &Node) -> bool {
    match n {
        Node::Leaf(_) => false,
        Node::Query { left, right, .. } => contains_group_node(left) || contains_group_node(right),
        Node::Group { .. } => true,
    }
}

/// `Σ_leaves p̃_j π_{Θ_j} d_j`, using the objects stored at the leaves.
pub fn evaluate_by_traversal(tree: &DecisionTree, ds: &Dataset) -> Result<f64, TreeError> {
    fn walk(n: &Node, ds: &Dataset, reach: f64, depth: usize) -> Result<f64, TreeError> {
        match n {
            Node::Leaf(leaf) => {
                let mut mass = 0.0;
                for &i in &leaf.objects {
                    if i >= ds.num_objects() {
                        return Err(TreeError::UnknownObject(i.to_string()));
                    }
                    mass += ds.prior(i);
                }
                Ok(reach * mass * depth as f64)
            }
            Node::Query { query, left, right } => {
                check_query(ds, *query)?;
                Ok(walk(left, ds, reach, depth + 1)? + walk(right, ds, reach, depth + 1)?)
            }
            Node::Group { branches, .. } => {
                check_branch_sum(branches)?;
                let mut total = 0.0;
                for b in branches {
                    check_query(ds, b.query)?;
                    let r = reach * b.probability;
                    total += walk(&b.left, ds, r, depth + 1)? + walk(&b.right, ds, r, depth + 1)?;
                }
                Ok(total)
            }
        }
    }
    walk(&tree.root, ds, 1.0, 0)
}

fn check_query(ds: &Dataset, q: usize) -> Result<(), TreeError> {
    if q >= ds.num_queries() {
        Err(TreeError::QueryOutOfRange(q))
    } else {
        Ok(())
    }
}

fn check_branch_sum(branches: &[Branch]) -> Result<(), TreeError> {
    let sum: f64 = branches.iter().map(|b| b.probability).sum();
    if (sum - 1.0).abs() > BRANCH_SUM_TOLERANCE || branches.iter().any(|b| b.probability < 0.0) {
        Err(TreeError::BranchProbabilities(sum))
    } else {
        Ok(())
    }
}

/// Internal-node sum of the closed form, accumulated top-down from the
/// dataset (never from the objects stored at the leaves).
struct FormulaWalk<'a> {
    ds: &'a Dataset,
    objective: Objective,
    internal: f64,
    leaf_impurity: f64,
    overall_rho: f64,
}

impl FormulaWalk<'_> {
    fn walk(&mut self, n: &Node, pop: &NodePopulation, reach: f64) -> Result<(), TreeError> {
        match n {
            Node::Leaf(_) => {
                if self.objective == Objective::Group && pop.mass() > 0.0 {
                    self.leaf_impurity += reach * pop.mass() * pop.impurity()?;
                }
            }
            Node::Query { query, left, right } => {
                check_query(self.ds, *query)?;
                let (l, r) = pop.split(self.ds, *query);
                if pop.mass() > 0.0 {
                    let s = split_stats(pop, self.ds, *query, self.objective)?;
                    self.overall_rho = self.overall_rho.max(s.rho);
                    self.internal += reach * pop.mass() * (1.0 - s.gain(self.objective));
                }
                self.walk(left, &l, reach)?;
                self.walk(right, &r, reach)?;
            }
            Node::Group { branches, .. } => {
                check_branch_sum(branches)?;
                let mut expected_gain = 0.0;
                for b in branches {
                    check_query(self.ds, b.query)?;
                    if pop.mass() > 0.0 {
                        let s = split_stats(pop, self.ds, b.query, self.objective)?;
                        self.overall_rho = self.overall_rho.max(s.rho);
                        expected_gain += b.probability * s.gain(self.objective);
                    }
                }
                if pop.mass() > 0.0 {
                    self.internal += reach * pop.mass() * (1.0 - expected_gain);
                }
                for b in branches {
                    let (l, r) = pop.split(self.ds, b.query);
                    self.walk(&b.left, &l, reach * b.probability)?;
                    self.walk(&b.right, &r, reach * b.probability)?;
                }
            }
        }
        Ok(())
    }
}

fn target_entropy(ds: &Dataset, objective: Objective) -> Result<f64, TreeError> {
    let dist = match objective {
        Objective::Object => ds.priors().to_vec(),
        Objective::Group => ds.group_priors().ok_or(InfoError::NoGroups)?,
    };
    Ok(infomath::entropy(&dist)?)
}

fn formula_parts<'a>(tree: &DecisionTree, ds: &'a Dataset) -> Result<FormulaWalk<'a>, TreeError> {
    let objective = tree.variant.objective();
    if objective == Objective::Group && !ds.has_object_groups() {
        return Err(TreeError::VariantMismatch("group tree on a dataset without object groups".into()));
    }
    let mut w = FormulaWalk { ds, objective, internal: 0.0, leaf_impurity: 0.0, overall_rho: 0.5 };
    w.walk(&tree.root, &NodePopulation::root(ds), 1.0)?;
    Ok(w)
}

/// Evaluates the closed form for the tree's variant alongside the traversal
/// value and the entropy bounds.
pub fn evaluate_by_formula(tree: &DecisionTree, ds: &Dataset) -> Result<TreeEvaluation, TreeError> {
    let has_group_nodes = contains_group_node(&tree.root);
    if has_group_nodes && !tree.variant.uses_query_groups() {
        return Err(TreeError::VariantMismatch(
            "group-query node in a single-query tree".into(),
        ));
    }
    let parts = formula_parts(tree, ds)?;
    let entropy_bound = target_entropy(ds, parts.objective)?;
    let by_formula = entropy_bound + parts.internal;
    let by_traversal = evaluate_by_traversal(tree, ds)?;
    let overall_rho = if tree.root.is_leaf() { 0.5 } else { parts.overall_rho };
    let corollary_bound = (tree.variant == TreeVariant::ObjectId).then(|| {
        let h = infomath::h2(overall_rho);
        if h > 0.0 {
            entropy_bound / h
        } else {
            f64::INFINITY
        }
    });
    Ok(TreeEvaluation {
        expected_queries: by_traversal,
        by_traversal,
        by_formula,
        entropy_bound,
        overall_rho,
        corollary_bound,
    })
}

/// Checks the group-identification identity on a tree whose leaves may hold
/// several groups: traversal equals `H(P_y)` plus the internal-node costs
/// minus the mass-weighted impurity of the leaves.
pub fn check_impure_leaf_identity(
    tree: &DecisionTree,
    ds: &Dataset,
) -> Result<ImpureLeafCheck, TreeError> {
    let grouped = DecisionTree {
        variant: match tree.variant {
            TreeVariant::ObjectId => TreeVariant::GroupId,
            TreeVariant::ObjectIdGroupQueries => TreeVariant::GroupIdGroupQueries,
            v => v,
        },
        root: tree.root.clone(),
    };
    let parts = formula_parts(&grouped, ds)?;
    let by_formula = target_entropy(ds, Objective::Group)? + parts.internal - parts.leaf_impurity;
    let by_traversal = evaluate_by_traversal(tree, ds)?;
    Ok(ImpureLeafCheck {
        by_traversal,
        by_formula,
        holds: (by_traversal - by_formula).abs() <= 1e-9,
    })
}

/// Structural check against the dataset: every leaf lists exactly the
/// objects its path admits, no query repeats on a path, branch
/// probabilities sum to one and branch queries belong to their group.
pub fn validate(tree: &DecisionTree, ds: &Dataset) -> Result<(), TreeError> {
    fn walk(
        n: &Node,
        ds: &Dataset,
        pop: &NodePopulation,
        path: &mut BTreeSet<usize>,
    ) -> Result<(), TreeError> {
        match n {
            Node::Leaf(leaf) => {
                if leaf.objects != pop.members() {
                    let names = |v: &[usize]| {
                        v.iter()
                            .map(|&i| ds.objects().get(i).cloned().unwrap_or_else(|| i.to_string()))
                            .collect()
                    };
                    return Err(TreeError::InconsistentLeaf {
                        listed: names(&leaf.objects),
                        expected: names(pop.members()),
                    });
                }
                Ok(())
            }
            Node::Query { query, left, right } => {
                check_query(ds, *query)?;
                if !path.insert(*query) {
                    return Err(TreeError::RepeatedQuery(ds.query_id(*query).to_owned()));
                }
                let (l, r) = pop.split(ds, *query);
                walk(left, ds, &l, path)?;
                walk(right, ds, &r, path)?;
                path.remove(query);
                Ok(())
            }
            Node::Group { group, branches } => {
                check_branch_sum(branches)?;
                if *group >= ds.num_query_groups() {
                    return Err(TreeError::UnknownQueryGroup(group + 1));
                }
                for b in branches {
                    check_query(ds, b.query)?;
                    if ds.query_group(b.query) != Some(*group) {
                        return Err(TreeError::QueryOutsideGroup {
                            query: ds.query_id(b.query).to_owned(),
                            group: group + 1,
                        });
                    }
                    if !path.insert(b.query) {
                        return Err(TreeError::RepeatedQuery(ds.query_id(b.query).to_owned()));
                    }
                    let (l, r) = pop.split(ds, b.query);
                    walk(&b.left, ds, &l, path)?;
                    walk(&b.right, ds, &r, path)?;
                    path.remove(&b.query);
                }
                Ok(())
            }
        }
    }
    walk(&tree.root, ds, &NodePopulation::root(ds), &mut BTreeSet::new())
}

/// Checks that every non-empty leaf is resolved for the tree's variant and
/// that its outcome names the surviving object or group.
pub fn check_leaf_purity(tree: &DecisionTree, ds: &Dataset) -> Result<(), TreeError> {
    fn walk(n: &Node, ds: &Dataset, objective: Objective) -> Result<(), TreeError> {
        match n {
            Node::Leaf(leaf) => {
                if leaf.objects.is_empty() {
                    return Ok(());
                }
                let names = || leaf.objects.iter().map(|&i| ds.object_id(i).to_owned()).collect();
                let pop = NodePopulation::from_members(ds, leaf.objects.clone());
                if !pop.is_resolved(objective) {
                    return Err(TreeError::ImpureLeaf(names()));
                }
                let ok = match (objective, leaf.outcome) {
                    (Objective::Object, Some(Outcome::Object(i))) => leaf.objects == [i],
                    (Objective::Group, Some(Outcome::Group(g))) => {
                        leaf.objects.iter().all(|&i| ds.object_group(i) == Some(g))
                    }
                    _ => false,
                };
                if ok {
                    Ok(())
                } else {
                    Err(TreeError::WrongOutcome(names()))
                }
            }
            Node::Query { left, right, .. } => {
                walk(left, ds, objective)?;
                walk(right, ds, objective)
            }
            Node::Group { branches, .. } => branches.iter().try_for_each(|b| {
                walk(&b.left, ds, objective)?;
                walk(&b.right, ds, objective)
            }),
        }
    }
    walk(&tree.root, ds, tree.variant.objective())
}

// ---------------------------------------------------------------------------
// Tree documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub variant: TreeVariant,
    pub root: NodeDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NodeDocument {
    Leaf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<OutcomeDocument>,
        objects: Vec<String>,
    },
    Query {
        query: String,
        left: Box<NodeDocument>,
        right: Box<NodeDocument>,
    },
    Group {
        /// 1-based query group label.
        group: usize,
        branches: Vec<BranchDocument>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDocument {
    pub query: String,
    pub p: f64,
    pub left: NodeDocument,
    pub right: NodeDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutcomeDocument {
    Object(String),
    /// 1-based object group label.
    Group(usize),
}

pub fn export_tree(tree: &DecisionTree, ds: &Dataset) -> TreeDocument {
    fn node(n: &Node, ds: &Dataset) -> NodeDocument {
        match n {
            Node::Leaf(leaf) => NodeDocument::Leaf {
                outcome: leaf.outcome.map(|o| match o {
                    Outcome::Object(i) => OutcomeDocument::Object(ds.object_id(i).to_owned()),
                    Outcome::Group(g) => OutcomeDocument::Group(g + 1),
                }),
                objects: leaf.objects.iter().map(|&i| ds.object_id(i).to_owned()).collect(),
            },
            Node::Query { query, left, right } => NodeDocument::Query {
                query: ds.query_id(*query).to_owned(),
                left: Box::new(node(left, ds)),
                right: Box::new(node(right, ds)),
            },
            Node::Group { group, branches } => NodeDocument::Group {
                group: group + 1,
                branches: branches
                    .iter()
                    .map(|b| BranchDocument {
                        query: ds.query_id(b.query).to_owned(),
                        p: b.probability,
                        left: node(&b.left, ds),
                        right: node(&b.right, ds),
                    })
                    .collect(),
            },
        }
    }
    TreeDocument { variant: tree.variant, root: node(&tree.root, ds) }
}

/// Resolves ids against the dataset and validates the structure.
pub fn import_tree(doc: &TreeDocument, ds: &Dataset) -> Result<DecisionTree, TreeError> {
    fn query(ds: &Dataset, id: &str) -> Result<usize, TreeError> {
        ds.query_index(id).map_err(|_| TreeError::UnknownQuery(id.to_owned()))
    }
    fn node(d: &NodeDocument, ds: &Dataset) -> Result<Node, TreeError> {
        Ok(match d {
            NodeDocument::Leaf { outcome, objects } => {
                let mut idx = objects
                    .iter()
                    .map(|o| ds.object_index(o).map_err(|_| TreeError::UnknownObject(o.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                idx.sort_unstable();
                let outcome = match outcome {
                    None => None,
                    Some(OutcomeDocument::Object(o)) => Some(Outcome::Object(
                        ds.object_index(o).map_err(|_| TreeError::UnknownObject(o.clone()))?,
                    )),
                    Some(OutcomeDocument::Group(g)) => {
                        if *g == 0 || *g > ds.num_object_groups() {
                            return Err(TreeError::UnknownObjectGroup(*g));
                        }
                        Some(Outcome::Group(g - 1))
                    }
                };
                Node::Leaf(Leaf { outcome, objects: idx })
            }
            NodeDocument::Query { query: q, left, right } => Node::Query {
                query: query(ds, q)?,
                left: Box::new(node(left, ds)?),
                right: Box::new(node(right, ds)?),
            },
            NodeDocument::Group { group, branches } => {
                if *group == 0 || *group > ds.num_query_groups() {
                    return Err(TreeError::UnknownQueryGroup(*group));
                }
                Node::Group {
                    group: group - 1,
                    branches: branches
                        .iter()
                        .map(|b| {
                            Ok(Branch {
                                query: query(ds, &b.query)?,
                                probability: b.p,
                                left: node(&b.left, ds)?,
                                right: node(&b.right, ds)?,
                            })
                        })
                        .collect::<Result<_, TreeError>>()?,
                }
            }
        })
    }
    let tree = DecisionTree { variant: doc.variant, root: node(&doc.root, ds)? };
    if contains_group_node(&tree.root) && !tree.variant.uses_query_groups() {
        return Err(TreeError::VariantMismatch("group-query node in a single-query tree".into()));
    }
    validate(&tree, ds)?;
    Ok(tree)
}

pub fn tree_to_json(tree: &DecisionTree, ds: &Dataset) -> String {
    serde_json::to_string_pretty(&export_tree(tree, ds)).expect("tree document serializes")
}

pub fn tree_from_json(text: &str, ds: &Dataset) -> Result<DecisionTree, TreeError> {
    let doc: TreeDocument =
        serde_json::from_str(text).map_err(|e| TreeError::Malformed(e.to_string()))?;
    import_tree(&doc, ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn leaf(ds: &Dataset, objects: &[usize], outcome: Option<Outcome>) -> Node {
        let _ = ds;
        Node::Leaf(Leaf { outcome, objects: objects.to_vec() })
    }

    fn q(query: usize, left: Node, right: Node) -> Node {
        Node::Query { query, left: Box::new(left), right: Box::new(right) }
    }

    /// Balanced object tree on toy example 1: q1, then q3 on the left and q2
    /// on the right.
    fn toy1_balanced(ds: &Dataset) -> DecisionTree {
        use Outcome::Object as O;
        DecisionTree::new(
            TreeVariant::ObjectId,
            q(
                0,
                q(2, leaf(ds, &[2], Some(O(2))), leaf(ds, &[0], Some(O(0)))),
                q(1, leaf(ds, &[3], Some(O(3))), leaf(ds, &[1], Some(O(1)))),
            ),
        )
    }

    /// The group tree GBS builds on toy example 1.
    fn toy1_gbs_groups(ds: &Dataset) -> DecisionTree {
        use Outcome::Group as G;
        DecisionTree::new(
            TreeVariant::GroupId,
            q(
                0,
                leaf(ds, &[0, 2], Some(G(0))),
                q(1, leaf(ds, &[3], Some(G(1))), leaf(ds, &[1], Some(G(0)))),
            ),
        )
    }

    #[test]
    fn balanced_object_tree_meets_entropy() {
        let ds = fixtures::toy_example_1();
        let tree = toy1_balanced(&ds);
        validate(&tree, &ds).unwrap();
        check_leaf_purity(&tree, &ds).unwrap();
        let ev = evaluate_by_formula(&tree, &ds).unwrap();
        assert_eq!(ev.by_traversal, 2.0);
        assert!((ev.by_formula - 2.0).abs() < 1e-12);
        assert_eq!(ev.entropy_bound, 2.0);
        assert_eq!(ev.overall_rho, 0.5);
        assert_eq!(ev.corollary_bound, Some(2.0));
    }

    #[test]
    fn gbs_group_tree_costs_one_and_a_half() {
        let ds = fixtures::toy_example_1();
        let tree = toy1_gbs_groups(&ds);
        check_leaf_purity(&tree, &ds).unwrap();
        let ev = evaluate_by_formula(&tree, &ds).unwrap();
        assert_eq!(ev.by_traversal, 1.5);
        assert!((ev.by_formula - 1.5).abs() < 1e-12);
        assert_eq!(ev.corollary_bound, None);
    }

    #[test]
    fn single_q2_group_tree() {
        use Outcome::Group as G;
        let ds = fixtures::toy_example_1();
        let tree = DecisionTree::new(
            TreeVariant::GroupId,
            q(1, leaf(&ds, &[3], Some(G(1))), leaf(&ds, &[0, 1, 2], Some(G(0)))),
        );
        let ev = evaluate_by_formula(&tree, &ds).unwrap();
        assert_eq!(ev.by_traversal, 1.0);
        assert!((ev.by_formula - 1.0).abs() < 1e-12);
        assert!((ev.entropy_bound - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn impure_leaf_identity_examples() {
        use Outcome::Group as G;
        let ds = fixtures::toy_example_1();

        let stump = DecisionTree::new(TreeVariant::GroupId, leaf(&ds, &[0, 1, 2, 3], Some(G(0))));
        let c = check_impure_leaf_identity(&stump, &ds).unwrap();
        assert_eq!(c.by_traversal, 0.0);
        assert!(c.by_formula.abs() < 1e-12 && c.holds);

        let depth_one = DecisionTree::new(
            TreeVariant::GroupId,
            q(0, leaf(&ds, &[0, 2], Some(G(0))), leaf(&ds, &[1, 3], Some(G(0)))),
        );
        let c = check_impure_leaf_identity(&depth_one, &ds).unwrap();
        assert_eq!(c.by_traversal, 1.0);
        assert!((c.by_formula - 1.0).abs() < 1e-12 && c.holds);

        let full = toy1_gbs_groups(&ds);
        let c = check_impure_leaf_identity(&full, &ds).unwrap();
        assert!(c.holds && (c.by_formula - 1.5).abs() < 1e-12);
    }

    #[test]
    fn document_round_trip_and_errors() {
        let ds = fixtures::toy_example_1();
        let tree = toy1_gbs_groups(&ds);
        let text = tree_to_json(&tree, &ds);
        assert_eq!(tree_from_json(&text, &ds).unwrap(), tree);

        let bad = text.replace("\"q2\"", "\"q9\"");
        assert!(matches!(tree_from_json(&bad, &ds), Err(TreeError::UnknownQuery(id)) if id == "q9"));

        let wrong_leaf = text.replace("\"θ4\"", "\"θ3\"");
        assert!(tree_from_json(&wrong_leaf, &ds).is_err());
    }

    #[test]
    fn repeated_query_is_rejected() {
        let ds = fixtures::toy_example_1();
        let tree = DecisionTree::new(
            TreeVariant::ObjectId,
            q(
                0,
                q(0, leaf(&ds, &[], None), leaf(&ds, &[0, 2], None)),
                leaf(&ds, &[1, 3], None),
            ),
        );
        assert!(matches!(validate(&tree, &ds), Err(TreeError::RepeatedQuery(_))));
    }
}
