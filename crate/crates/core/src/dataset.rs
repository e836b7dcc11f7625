//! Problem data model: the object/query relation, priors, object groups,
//! query groups and the in-group selection weights.
//!
//! Labels in documents are 1-based; everything in memory is dense and
//! 0-based.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that priors sum to one.
pub const PRIOR_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed problem document: {0}")]
    Malformed(String),
    #[error("priors sum to {0}, expected 1")]
    PriorSum(f64),
    #[error("prior of object `{object}` is {value}, expected a non-negative number")]
    InvalidPrior { object: String, value: f64 },
    #[error("matrix entry ({row}, {col}) is {value}, expected 0 or 1")]
    NonBinary { row: usize, col: usize, value: u8 },
    #[error("objects `{0}` and `{1}` have identical responses")]
    DuplicateRows(String, String),
    #[error("objects `{0}` and `{1}` have identical responses but belong to different groups")]
    InseparableGroups(String, String),
    #[error("unknown {kind} group label {label}")]
    UnknownGroupLabel { kind: &'static str, label: usize },
    #[error("{kind} group {label} has no members")]
    EmptyGroup { kind: &'static str, label: usize },
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("selection weight of query `{0}` must be positive")]
    InvalidWeight(String),
    #[error("query group {0} has no unanswered queries")]
    GroupExhausted(usize),
    #[error("dataset has no {0} groups")]
    MissingGroups(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What a problem document declares it will be used for. Drives the
/// duplicate-row checks at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentificationMode {
    Object,
    Group,
}

/// Persistent-noise settings as written in a problem document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// Ids of the queries whose answers may be wrong.
    pub error_prone: Vec<String>,
    /// Probability model: 1 (uniform over the error ball) or 2 (truncated binomial).
    pub model: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Optional error budget, only ever lowered relative to the one implied
    /// by the minimum row distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<usize>,
}

/// The on-disk problem document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub objects: Vec<String>,
    pub queries: Vec<String>,
    pub matrix: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_groups: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_groups: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_weights: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identify: Option<IdentificationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseBlock>,
}

/// A validated query-learning problem. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    objects: Vec<String>,
    queries: Vec<String>,
    /// Column-major: `columns[q * M + i]` is the response of object `i` to query `q`.
    columns: Vec<u8>,
    priors: Vec<f64>,
    object_groups: Option<Labels>,
    query_groups: Option<Labels>,
    selection_weights: Option<Vec<f64>>,
    identify: Option<IdentificationMode>,
    noise: Option<NoiseBlock>,
    rows_distinct: bool,
    groups_separable: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Labels {
    of: Vec<usize>,
    count: usize,
}

impl Labels {
    fn from_one_based(kind: &'static str, raw: &[usize]) -> Result<Self, DatasetError> {
        if let Some(&bad) = raw.iter().find(|&&l| l == 0) {
            return Err(DatasetError::UnknownGroupLabel { kind, label: bad });
        }
        let zero_based: Vec<usize> = raw.iter().map(|l| l - 1).collect();
        Self::from_zero_based(kind, zero_based)
    }

    fn from_zero_based(kind: &'static str, of: Vec<usize>) -> Result<Self, DatasetError> {
        let count = of.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; count];
        for &g in &of {
            used[g] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(DatasetError::EmptyGroup { kind, label: missing + 1 });
        }
        Ok(Labels { of, count })
    }
}

impl Dataset {
    /// Builds a dataset from 0/1 rows with uniform priors and no groups.
    pub fn from_rows(
        objects: Vec<String>,
        queries: Vec<String>,
        rows: &[Vec<u8>],
    ) -> Result<Self, DatasetError> {
        let m = objects.len();
        let n = queries.len();
        if rows.len() != m {
            return Err(DatasetError::Malformed(format!(
                "matrix has {} rows for {} objects",
                rows.len(),
                m
            )));
        }
        if m == 0 || n == 0 {
            return Err(DatasetError::Malformed("need at least one object and one query".into()));
        }
        check_unique_ids("object", &objects)?;
        check_unique_ids("query", &queries)?;
        let mut columns = vec![0u8; m * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(DatasetError::Malformed(format!(
                    "row {} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    n
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(DatasetError::NonBinary { row: i, col: j, value: v });
                }
                columns[j * m + i] = v;
            }
        }
        let mut ds = Dataset {
            objects,
            queries,
            columns,
            priors: vec![1.0 / m as f64; m],
            object_groups: None,
            query_groups: None,
            selection_weights: None,
            identify: None,
            noise: None,
            rows_distinct: true,
            groups_separable: true,
        };
        ds.refresh_flags();
        Ok(ds)
    }

    /// Convenience constructor with generated ids `o1..oM`, `q1..qN`.
    pub fn from_matrix(rows: &[Vec<u8>]) -> Result<Self, DatasetError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        Self::from_rows(
            (1..=m).map(|i| format!("o{i}")).collect(),
            (1..=n).map(|j| format!("q{j}")).collect(),
            rows,
        )
    }

    pub fn with_priors(mut self, priors: Vec<f64>) -> Result<Self, DatasetError> {
        if priors.len() != self.num_objects() {
            return Err(DatasetError::Malformed(format!(
                "{} priors for {} objects",
                priors.len(),
                self.num_objects()
            )));
        }
        for (i, &p) in priors.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(DatasetError::InvalidPrior { object: self.objects[i].clone(), value: p });
            }
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(DatasetError::PriorSum(sum));
        }
        self.priors = priors;
        Ok(self)
    }

    /// Attaches 0-based object group labels.
    pub fn with_object_groups(mut self, labels: Vec<usize>) -> Result<Self, DatasetError> {
        if labels.len() != self.num_objects() {
            return Err(DatasetError::Malformed("object_groups length differs from objects".into()));
        }
        self.object_groups = Some(Labels::from_zero_based("object", labels)?);
        self.refresh_flags();
        Ok(self)
    }

    /// Attaches 0-based query group labels.
    pub fn with_query_groups(mut self, labels: Vec<usize>) -> Result<Self, DatasetError> {
        if labels.len() != self.num_queries() {
            return Err(DatasetError::Malformed("query_groups length differs from queries".into()));
        }
        self.query_groups = Some(Labels::from_zero_based("query", labels)?);
        Ok(self)
    }

    /// Per-query base weights used to form the in-group selection distribution.
    pub fn with_selection_weights(mut self, weights: Vec<f64>) -> Result<Self, DatasetError> {
        if weights.len() != self.num_queries() {
            return Err(DatasetError::Malformed("selection weight count differs from queries".into()));
        }
        if let Some(j) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(DatasetError::InvalidWeight(self.queries[j].clone()));
        }
        self.selection_weights = Some(weights);
        Ok(self)
    }

    pub fn with_identify(mut self, mode: Option<IdentificationMode>) -> Self {
        self.identify = mode;
        self
    }

    pub fn with_noise(mut self, noise: Option<NoiseBlock>) -> Result<Self, DatasetError> {
        if let Some(block) = &noise {
            for id in &block.error_prone {
                self.query_index(id)?;
            }
        }
        self.noise = noise;
        Ok(self)
    }

    /// Validates and converts a parsed problem document.
    pub fn from_document(doc: ProblemDocument) -> Result<Self, DatasetError> {
        let mut ds = Self::from_rows(doc.objects, doc.queries, &doc.matrix)?;
        if let Some(priors) = doc.priors {
            ds = ds.with_priors(priors)?;
        }
        if let Some(raw) = doc.object_groups {
            if raw.len() != ds.num_objects() {
                return Err(DatasetError::Malformed("object_groups length differs from objects".into()));
            }
            ds.object_groups = Some(Labels::from_one_based("object", &raw)?);
            ds.refresh_flags();
        }
        if let Some(raw) = doc.query_groups {
            if raw.len() != ds.num_queries() {
                return Err(DatasetError::Malformed("query_groups length differs from queries".into()));
            }
            ds.query_groups = Some(Labels::from_one_based("query", &raw)?);
        }
        if let Some(map) = doc.selection_weights {
            let mut weights = vec![1.0; ds.num_queries()];
            for (id, w) in map {
                let j = ds.query_index(&id)?;
                weights[j] = w;
            }
            ds = ds.with_selection_weights(weights)?;
        }
        ds = ds.with_noise(doc.noise)?;
        ds.identify = doc.identify;
        ds.check_identification()?;
        Ok(ds)
    }

    pub fn from_json_str(text: &str) -> Result<Self, DatasetError> {
        let doc: ProblemDocument = serde_json::from_str(text)
            .map_err(|e| DatasetError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }

    /// Loads a JSON problem document from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Loads the two-file CSV form: a matrix CSV whose header row holds the
    /// query ids (first cell ignored) and whose first column holds object
    /// ids, plus an optional metadata CSV with columns
    /// `kind,id,group,prior,weight` (`kind` is `object` or `query`, empty
    /// cells mean "not given").
    pub fn load_csv(
        matrix: impl AsRef<Path>,
        metadata: Option<&Path>,
    ) -> Result<Self, DatasetError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(matrix)?;
        let queries: Vec<String> = reader.headers()?.iter().skip(1).map(str::to_owned).collect();
        let mut objects = Vec::new();
        let mut matrix_rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut cells = record.iter();
            let id = cells.next().ok_or_else(|| DatasetError::Malformed("empty CSV row".into()))?;
            objects.push(id.to_owned());
            let row = cells
                .map(|c| c.parse::<u8>().map_err(|_| DatasetError::Malformed(format!("bad cell `{c}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            matrix_rows.push(row);
        }
        let mut doc = ProblemDocument {
            objects,
            queries,
            matrix: matrix_rows,
            priors: None,
            object_groups: None,
            query_groups: None,
            selection_weights: None,
            identify: None,
            noise: None,
        };
        if let Some(meta) = metadata {
            apply_metadata_csv(&mut doc, meta)?;
        }
        Self::from_document(doc)
    }

    pub fn to_document(&self) -> ProblemDocument {
        let uniform = self.priors.iter().all(|&p| p == self.priors[0])
            && (self.priors[0] - 1.0 / self.num_objects() as f64).abs() == 0.0;
        ProblemDocument {
            objects: self.objects.clone(),
            queries: self.queries.clone(),
            matrix: (0..self.num_objects()).map(|i| self.row(i)).collect(),
            priors: if uniform { None } else { Some(self.priors.clone()) },
            object_groups: self.object_groups.as_ref().map(|l| l.of.iter().map(|g| g + 1).collect()),
            query_groups: self.query_groups.as_ref().map(|l| l.of.iter().map(|g| g + 1).collect()),
            selection_weights: self.selection_weights.as_ref().map(|w| {
                self.queries.iter().cloned().zip(w.iter().copied()).collect()
            }),
            identify: self.identify,
            noise: self.noise.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("problem document serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    fn refresh_flags(&mut self) {
        let dups = self.duplicate_row_pairs();
        self.rows_distinct = dups.is_empty();
        self.groups_separable = match &self.object_groups {
            Some(l) => dups.iter().all(|&(a, b)| l.of[a] == l.of[b]),
            None => self.rows_distinct,
        };
    }

    fn check_identification(&self) -> Result<(), DatasetError> {
        match self.identify {
            Some(IdentificationMode::Object) => self.require_distinct_rows(),
            Some(IdentificationMode::Group) => self.require_separable_groups(),
            None => Ok(()),
        }
    }

    /// Pairs `(a, b)` with `a < b` whose rows are identical; `a` is the first
    /// occurrence of the row.
    pub fn duplicate_row_pairs(&self) -> Vec<(usize, usize)> {
        let mut first: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut pairs = Vec::new();
        for i in 0..self.num_objects() {
            match first.entry(self.row(i)) {
                std::collections::hash_map::Entry::Occupied(e) => pairs.push((*e.get(), i)),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(i);
                }
            }
        }
        pairs
    }

    pub fn require_distinct_rows(&self) -> Result<(), DatasetError> {
        match self.duplicate_row_pairs().first() {
            Some(&(a, b)) => Err(DatasetError::DuplicateRows(
                self.objects[a].clone(),
                self.objects[b].clone(),
            )),
            None => Ok(()),
        }
    }

    pub fn require_separable_groups(&self) -> Result<(), DatasetError> {
        let labels = self.object_groups.as_ref().ok_or(DatasetError::MissingGroups("object"))?;
        for (a, b) in self.duplicate_row_pairs() {
            if labels.of[a] != labels.of[b] {
                return Err(DatasetError::InseparableGroups(
                    self.objects[a].clone(),
                    self.objects[b].clone(),
                ));
            }
        }
        Ok(())
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    pub fn object_id(&self, i: usize) -> &str {
        &self.objects[i]
    }

    pub fn query_id(&self, j: usize) -> &str {
        &self.queries[j]
    }

    pub fn object_index(&self, id: &str) -> Result<usize, DatasetError> {
        self.objects
            .iter()
            .position(|o| o == id)
            .ok_or_else(|| DatasetError::UnknownObject(id.to_owned()))
    }

    pub fn query_index(&self, id: &str) -> Result<usize, DatasetError> {
        self.queries
            .iter()
            .position(|q| q == id)
            .ok_or_else(|| DatasetError::UnknownQuery(id.to_owned()))
    }

    #[inline]
    pub fn response(&self, object: usize, query: usize) -> u8 {
        self.columns[query * self.objects.len() + object]
    }

    /// Responses of every object to `query`.
    #[inline]
    pub fn column(&self, query: usize) -> &[u8] {
        let m = self.objects.len();
        &self.columns[query * m..(query + 1) * m]
    }

    pub fn row(&self, object: usize) -> Vec<u8> {
        (0..self.num_queries()).map(|j| self.response(object, j)).collect()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn prior(&self, object: usize) -> f64 {
        self.priors[object]
    }

    pub fn has_object_groups(&self) -> bool {
        self.object_groups.is_some()
    }

    pub fn has_query_groups(&self) -> bool {
        self.query_groups.is_some()
    }

    /// Number of object groups `m` (0 when absent).
    pub fn num_object_groups(&self) -> usize {
        self.object_groups.as_ref().map_or(0, |l| l.count)
    }

    /// Number of query groups `n` (0 when absent).
    pub fn num_query_groups(&self) -> usize {
        self.query_groups.as_ref().map_or(0, |l| l.count)
    }

    pub fn object_group(&self, object: usize) -> Option<usize> {
        self.object_groups.as_ref().map(|l| l.of[object])
    }

    pub fn object_group_labels(&self) -> Option<&[usize]> {
        self.object_groups.as_ref().map(|l| l.of.as_slice())
    }

    pub fn query_group(&self, query: usize) -> Option<usize> {
        self.query_groups.as_ref().map(|l| l.of[query])
    }

    pub fn query_group_labels(&self) -> Option<&[usize]> {
        self.query_groups.as_ref().map(|l| l.of.as_slice())
    }

    /// Queries belonging to query group `group`, in index order.
    pub fn queries_in_group(&self, group: usize) -> Vec<usize> {
        match &self.query_groups {
            Some(l) => (0..self.num_queries()).filter(|&j| l.of[j] == group).collect(),
            None => Vec::new(),
        }
    }

    pub fn selection_weights(&self) -> Option<&[f64]> {
        self.selection_weights.as_deref()
    }

    pub fn identify(&self) -> Option<IdentificationMode> {
        self.identify
    }

    pub fn noise_block(&self) -> Option<&NoiseBlock> {
        self.noise.as_ref()
    }

    pub fn rows_distinct(&self) -> bool {
        self.rows_distinct
    }

    pub fn groups_separable(&self) -> bool {
        self.groups_separable
    }

    /// Prior mass of every object group, `P_y`.
    pub fn group_priors(&self) -> Option<Vec<f64>> {
        let labels = self.object_groups.as_ref()?;
        let mut mass = vec![0.0; labels.count];
        for (i, &g) in labels.of.iter().enumerate() {
            mass[g] += self.priors[i];
        }
        Some(mass)
    }

    /// In-group selection distribution `p_group(q)` over the unanswered
    /// queries of `group`, renormalized after removing answered ones.
    /// `answered` is a mask over all queries.
    pub fn selection_probabilities(
        &self,
        group: usize,
        answered: &[bool],
    ) -> Result<Vec<(usize, f64)>, DatasetError> {
        let labels = self.query_groups.as_ref().ok_or(DatasetError::MissingGroups("query"))?;
        if group >= labels.count {
            return Err(DatasetError::UnknownGroupLabel { kind: "query", label: group + 1 });
        }
        let open: Vec<usize> = (0..self.num_queries())
            .filter(|&j| labels.of[j] == group && !answered[j])
            .collect();
        if open.is_empty() {
            return Err(DatasetError::GroupExhausted(group));
        }
        let weight = |j: usize| self.selection_weights.as_ref().map_or(1.0, |w| w[j]);
        let total: f64 = open.iter().map(|&j| weight(j)).sum();
        Ok(open.into_iter().map(|j| (j, weight(j) / total)).collect())
    }

    /// Hamming distance between the rows of two objects.
    pub fn hamming(&self, a: usize, b: usize) -> usize {
        (0..self.num_queries()).filter(|&j| self.response(a, j) != self.response(b, j)).count()
    }
}

fn check_unique_ids(kind: &str, ids: &[String]) -> Result<(), DatasetError> {
    let mut seen = HashMap::new();
    for id in ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(DatasetError::Malformed(format!("duplicate {kind} id `{id}`")));
        }
    }
    Ok(())
}

fn apply_metadata_csv(doc: &mut ProblemDocument, path: &Path) -> Result<(), DatasetError> {
    #[derive(Deserialize)]
    struct MetaRow {
        kind: String,
        id: String,
        group: Option<usize>,
        prior: Option<f64>,
        weight: Option<f64>,
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let m = doc.objects.len();
    let n = doc.queries.len();
    let mut object_groups = vec![None; m];
    let mut query_groups = vec![None; n];
    let mut priors = vec![None; m];
    let mut weights = BTreeMap::new();
    for row in reader.deserialize::<MetaRow>() {
        let row = row?;
        match row.kind.as_str() {
            "object" => {
                let i = doc
                    .objects
                    .iter()
                    .position(|o| *o == row.id)
                    .ok_or_else(|| DatasetError::UnknownObject(row.id.clone()))?;
                object_groups[i] = row.group;
                priors[i] = row.prior;
            }
            "query" => {
                let j = doc
                    .queries
                    .iter()
                    .position(|q| *q == row.id)
                    .ok_or_else(|| DatasetError::UnknownQuery(row.id.clone()))?;
                query_groups[j] = row.group;
                if let Some(w) = row.weight {
                    weights.insert(row.id.clone(), w);
                }
            }
            other => return Err(DatasetError::Malformed(format!("unknown metadata kind `{other}`"))),
        }
    }
    doc.object_groups = all_or_none("object_groups", object_groups)?;
    doc.query_groups = all_or_none("query_groups", query_groups)?;
    doc.priors = all_or_none("priors", priors)?;
    if !weights.is_empty() {
        doc.selection_weights = Some(weights);
    }
    Ok(())
}

fn all_or_none<T>(what: &str, values: Vec<Option<T>>) -> Result<Option<Vec<T>>, DatasetError> {
    let given = values.iter().filter(|v| v.is_some()).count();
    if given == 0 {
        Ok(None)
    } else if given == values.len() {
        Ok(Some(values.into_iter().flatten().collect()))
    } else {
        Err(DatasetError::Malformed(format!("metadata gives {what} for only some entries")))
    }
}
