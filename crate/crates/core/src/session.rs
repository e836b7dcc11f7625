//! Interactive identification: suggest, answer, repeat.
//!
//! Suggestions are recomputed online with the same selection rules and
//! tie-break keys the builders use, so a session driven by an object's true
//! answers walks exactly the path the offline tree would.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builders::{answered_mask, choose_group, choose_query, Algorithm, BuildError, GroupScore, TieBreak};
use crate::dataset::{Dataset, DatasetError, NoiseBlock};
use crate::infomath::{NodePopulation, Objective};
use crate::noise::{NoiseError, NoiseSpec, NoisyState};
use crate::tree::Outcome;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{0}")]
    Mismatch(String),
    #[error("session is {0}; no further answers are accepted")]
    Finished(&'static str),
    #[error("query `{query}` is not part of the current suggestion ({suggested})")]
    OutsideSuggestion { query: String, suggested: String },
    #[error("response must be 0 or 1, got {0}")]
    InvalidResponse(u8),
    #[error("no informative query remains: {0}")]
    NoInformativeQuery(String),
    #[error("replay diverged at step {step}: {detail}")]
    ReplayDiverged { step: usize, detail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Gbs,
    Gisa,
    Gqsa,
    Gigqsa,
    NoisyGbs,
    NoisyGisa,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Gbs,
        StrategyKind::Gisa,
        StrategyKind::Gqsa,
        StrategyKind::Gigqsa,
        StrategyKind::NoisyGbs,
        StrategyKind::NoisyGisa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Gbs => "gbs",
            StrategyKind::Gisa => "gisa",
            StrategyKind::Gqsa => "gqsa",
            StrategyKind::Gigqsa => "gigqsa",
            StrategyKind::NoisyGbs => "noisy-gbs",
            StrategyKind::NoisyGisa => "noisy-gisa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            StrategyKind::Gbs | StrategyKind::NoisyGbs => Algorithm::Gbs,
            StrategyKind::Gisa | StrategyKind::NoisyGisa => Algorithm::Gisa,
            StrategyKind::Gqsa => Algorithm::Gqsa,
            StrategyKind::Gigqsa => Algorithm::Gigqsa,
        }
    }

    pub fn is_noisy(self) -> bool {
        matches!(self, StrategyKind::NoisyGbs | StrategyKind::NoisyGisa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub tie_break: TieBreak,
    /// What plain GBS identifies.
    pub gbs_objective: Objective,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { tie_break: TieBreak::LowestIndex, gbs_objective: Objective::Object }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Suggestion {
    Query(usize),
    /// A query group and the selection probability of each open member.
    Group { group: usize, options: Vec<(usize, f64)> },
}

impl Suggestion {
    pub fn contains(&self, query: usize) -> bool {
        match self {
            Suggestion::Query(q) => *q == query,
            Suggestion::Group { options, .. } => options.iter().any(|o| o.0 == query),
        }
    }

    fn describe(&self, ds: &Dataset) -> String {
        match self {
            Suggestion::Query(q) => format!("query {}", ds.query_id(*q)),
            Suggestion::Group { group, options } => {
                let qs: Vec<&str> = options.iter().map(|o| ds.query_id(o.0)).collect();
                format!("group {} [{}]", group + 1, qs.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Active,
    Identified(Outcome),
    Failed(String),
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Active => "active",
            Status::Identified(_) => "identified",
            Status::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Survivors {
    Exact(NodePopulation),
    Noisy { spec: NoiseSpec, state: NoisyState },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub suggestion: Suggestion,
    pub query: usize,
    pub response: u8,
    pub surviving: usize,
    pub status: Status,
}

#[derive(Debug, Clone)]
pub struct Session {
    ds: Arc<Dataset>,
    kind: StrategyKind,
    config: SessionConfig,
    survivors: Survivors,
    history: Vec<(usize, u8)>,
    status: Status,
    suggestion: Option<Suggestion>,
    steps: Vec<Step>,
}

impl Session {
    /// `noise` overrides the dataset's own noise block for noisy strategies.
    pub fn start(
        ds: Arc<Dataset>,
        kind: StrategyKind,
        noise: Option<NoiseSpec>,
        config: SessionConfig,
    ) -> Result<Self, SessionError> {
        let algorithm = kind.algorithm();
        let objective = if kind.is_noisy() { Objective::Object } else { algorithm.objective(config.gbs_objective) };
        if algorithm.uses_query_groups() && !ds.has_query_groups() {
            return Err(SessionError::Mismatch(format!("{} needs query groups", kind.name())));
        }
        let survivors = if kind.is_noisy() {
            let spec = match noise {
                Some(spec) => spec,
                None => match ds.noise_block() {
                    Some(block) => NoiseSpec::from_block(&ds, block)?,
                    None => return Err(SessionError::Mismatch(format!("{} needs a noise block", kind.name()))),
                },
            };
            let state = NoisyState::root(&ds, &spec);
            Survivors::Noisy { spec, state }
        } else {
            match objective {
                Objective::Object => ds.require_distinct_rows()?,
                Objective::Group => {
                    if !ds.has_object_groups() {
                        return Err(SessionError::Mismatch(format!("{} needs object groups", kind.name())));
                    }
                    ds.require_separable_groups()?;
                }
            }
            Survivors::Exact(NodePopulation::root(&ds))
        };
        let mut session = Session {
            ds,
            kind,
            config,
            survivors,
            history: Vec::new(),
            status: Status::Active,
            suggestion: None,
            steps: Vec::new(),
        };
        session.status = session.settle();
        Ok(session)
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.ds
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn config(&self) -> SessionConfig {
        self.config
    }

    pub fn noise(&self) -> Option<&NoiseSpec> {
        match &self.survivors {
            Survivors::Noisy { spec, .. } => Some(spec),
            Survivors::Exact(_) => None,
        }
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn history(&self) -> &[(usize, u8)] {
        &self.history
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    fn objective(&self) -> Objective {
        self.kind.algorithm().objective(self.config.gbs_objective)
    }

    /// Status implied by the current survivors.
    fn settle(&self) -> Status {
        match &self.survivors {
            Survivors::Exact(pop) => {
                if pop.is_empty() {
                    Status::Failed("no object is consistent with the answers".into())
                } else if pop.is_resolved(self.objective()) {
                    Status::Identified(match self.objective() {
                        Objective::Object => Outcome::Object(pop.members()[0]),
                        Objective::Group => Outcome::Group(pop.group_masses()[0].0),
                    })
                } else {
                    Status::Active
                }
            }
            Survivors::Noisy { state, .. } => match state.alive() {
                [] => Status::Failed("answers are outside the error model; no object survives".into()),
                [(i, _)] => Status::Identified(Outcome::Object(*i)),
                _ => Status::Active,
            },
        }
    }

    /// Number of surviving objects.
    pub fn surviving(&self) -> usize {
        match &self.survivors {
            Survivors::Exact(pop) => pop.len(),
            Survivors::Noisy { state, .. } => state.alive().len(),
        }
    }

    pub fn surviving_objects(&self) -> Vec<usize> {
        match &self.survivors {
            Survivors::Exact(pop) => pop.members().to_vec(),
            Survivors::Noisy { state, .. } => state.alive().iter().map(|a| a.0).collect(),
        }
    }

    /// Prior mass of the survivors (dilated mass under noise).
    pub fn surviving_mass(&self) -> f64 {
        match &self.survivors {
            Survivors::Exact(pop) => pop.mass(),
            Survivors::Noisy { spec, state } => state.mass(&self.ds, spec),
        }
    }

    /// The `k` most probable outcomes with their posterior probabilities.
    pub fn top_candidates(&self, k: usize) -> Vec<(Outcome, f64)> {
        let mut c: Vec<(Outcome, f64)> = match &self.survivors {
            Survivors::Exact(pop) => match self.objective() {
                Objective::Group => pop.group_masses().iter().map(|&(g, m)| (Outcome::Group(g), m)).collect(),
                Objective::Object => pop.members().iter().map(|&i| (Outcome::Object(i), self.ds.prior(i))).collect(),
            },
            Survivors::Noisy { spec, state } => state
                .group_masses(&self.ds, spec)
                .into_iter()
                .map(|(i, m)| (Outcome::Object(i), m))
                .collect(),
        };
        let total: f64 = c.iter().map(|x| x.1).sum();
        if total > 0.0 {
            c.iter_mut().for_each(|x| x.1 /= total);
        }
        c.sort_by(|a, b| b.1.total_cmp(&a.1));
        c.truncate(k);
        c
    }

    /// The current suggestion, computed on first request. A session with
    /// nothing left to ask moves to `Failed`.
    pub fn suggest(&mut self) -> Result<Suggestion, SessionError> {
        match &self.status {
            Status::Active => {}
            Status::Identified(_) => return Err(SessionError::Finished("identified")),
            Status::Failed(_) => return Err(SessionError::Finished("failed")),
        }
        if let Some(s) = &self.suggestion {
            return Ok(s.clone());
        }
        match self.compute_suggestion()? {
            Some(s) => {
                self.suggestion = Some(s.clone());
                Ok(s)
            }
            None => {
                let why = if self.kind.algorithm().uses_query_groups()
                    && answered_mask(&self.ds, &self.history).iter().all(|&a| a)
                {
                    "every query group is exhausted".to_owned()
                } else {
                    "no unanswered query separates the survivors".to_owned()
                };
                self.status = Status::Failed(why.clone());
                Err(SessionError::NoInformativeQuery(why))
            }
        }
    }

    fn compute_suggestion(&self) -> Result<Option<Suggestion>, SessionError> {
        let algorithm = self.kind.algorithm();
        let tie = self.config.tie_break;
        Ok(match &self.survivors {
            Survivors::Noisy { spec, state } => {
                state.choose(&self.ds, spec, algorithm, tie)?.map(|s| Suggestion::Query(s.query))
            }
            Survivors::Exact(pop) if algorithm.uses_query_groups() => {
                choose_group(pop, &self.ds, &self.history, self.objective(), GroupScore::Greedy, tie)?.map(|(c, _)| {
                    Suggestion::Group {
                        group: c.group,
                        options: c.branches.iter().map(|&(q, p, _)| (q, p)).collect(),
                    }
                })
            }
            Survivors::Exact(pop) => {
                choose_query(pop, &self.ds, &self.history, algorithm, tie)?.map(|(s, _)| Suggestion::Query(s.query))
            }
        })
    }

    /// Applies one answer. Protocol violations are errors and leave the
    /// session untouched; an answer no object is consistent with moves the
    /// session to `Failed`.
    pub fn answer(&mut self, query: usize, response: u8) -> Result<&Status, SessionError> {
        if response > 1 {
            return Err(SessionError::InvalidResponse(response));
        }
        if query >= self.ds.num_queries() {
            return Err(SessionError::Dataset(DatasetError::UnknownQuery(query.to_string())));
        }
        let suggestion = self.suggest()?;
        if !suggestion.contains(query) {
            return Err(SessionError::OutsideSuggestion {
                query: self.ds.query_id(query).to_owned(),
                suggested: suggestion.describe(&self.ds),
            });
        }
        self.survivors = match &self.survivors {
            Survivors::Exact(pop) => Survivors::Exact(pop.filter(&self.ds, query, response)),
            Survivors::Noisy { spec, state } => {
                let state = state.answer(&self.ds, spec, query, response)?;
                Survivors::Noisy { spec: spec.clone(), state }
            }
        };
        self.history.push((query, response));
        self.suggestion = None;
        self.status = match self.settle() {
            Status::Failed(why) => {
                Status::Failed(format!("{why} (after {}={response})", self.ds.query_id(query)))
            }
            s => s,
        };
        self.steps.push(Step {
            suggestion,
            query,
            response,
            surviving: self.surviving(),
            status: self.status.clone(),
        });
        Ok(&self.status)
    }

    /// Answers by query id.
    pub fn answer_id(&mut self, query: &str, response: u8) -> Result<&Status, SessionError> {
        let q = self.ds.query_index(query)?;
        self.answer(q, response)
    }

    pub fn transcript(&self) -> Transcript {
        let ds = &self.ds;
        Transcript {
            strategy: self.kind,
            tie_break: self.config.tie_break,
            gbs_objective: self.config.gbs_objective,
            noise: self.noise().map(|s| s.to_block(ds)),
            steps: self
                .steps
                .iter()
                .map(|s| TranscriptStep {
                    suggestion: SuggestionDoc::new(ds, &s.suggestion),
                    query: ds.query_id(s.query).to_owned(),
                    response: s.response,
                    surviving: s.surviving,
                    status: StatusDoc::new(ds, &s.status),
                })
                .collect(),
            status: StatusDoc::new(ds, &self.status),
        }
    }
}

// ---------------------------------------------------------------------------
// Documents shared with the service and CLI

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SuggestionDoc {
    Query { query: String },
    Group { group: usize, options: Vec<OptionDoc> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionDoc {
    pub query: String,
    pub p: f64,
}

impl SuggestionDoc {
    pub fn new(ds: &Dataset, s: &Suggestion) -> Self {
        match s {
            Suggestion::Query(q) => SuggestionDoc::Query { query: ds.query_id(*q).to_owned() },
            Suggestion::Group { group, options } => SuggestionDoc::Group {
                group: group + 1,
                options: options
                    .iter()
                    .map(|&(q, p)| OptionDoc { query: ds.query_id(q).to_owned(), p })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutcomeDoc {
    Object { id: String },
    Group { label: usize },
}

impl OutcomeDoc {
    pub fn new(ds: &Dataset, o: &Outcome) -> Self {
        match *o {
            Outcome::Object(i) => OutcomeDoc::Object { id: ds.object_id(i).to_owned() },
            Outcome::Group(g) => OutcomeDoc::Group { label: g + 1 },
        }
    }
}

impl std::fmt::Display for OutcomeDoc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutcomeDoc::Object { id } => write!(f, "object {id}"),
            OutcomeDoc::Group { label } => write!(f, "group {label}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusDoc {
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl StatusDoc {
    pub fn new(ds: &Dataset, s: &Status) -> Self {
        StatusDoc {
            state: s.name().to_owned(),
            outcome: match s {
                Status::Identified(o) => Some(OutcomeDoc::new(ds, o)),
                _ => None,
            },
            reason: match s {
                Status::Failed(r) => Some(r.clone()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub suggestion: SuggestionDoc,
    pub query: String,
    pub response: u8,
    pub surviving: usize,
    pub status: StatusDoc,
}

/// Replayable record of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub strategy: StrategyKind,
    pub tie_break: TieBreak,
    pub gbs_objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseBlock>,
    pub steps: Vec<TranscriptStep>,
    pub status: StatusDoc,
}

/// Re-runs a transcript against a fresh session, checking every recorded
/// suggestion and state along the way.
pub fn replay(ds: Arc<Dataset>, transcript: &Transcript) -> Result<Session, SessionError> {
    let noise = match &transcript.noise {
        Some(block) => Some(NoiseSpec::from_block(&ds, block)?),
        None => None,
    };
    let config = SessionConfig { tie_break: transcript.tie_break, gbs_objective: transcript.gbs_objective };
    let mut session = Session::start(ds.clone(), transcript.strategy, noise, config)?;
    for (k, step) in transcript.steps.iter().enumerate() {
        let diverged = |detail: String| SessionError::ReplayDiverged { step: k + 1, detail };
        let suggestion = session.suggest().map_err(|e| diverged(e.to_string()))?;
        let got = SuggestionDoc::new(&ds, &suggestion);
        if got != step.suggestion {
            return Err(diverged(format!("suggested {got:?}, transcript has {:?}", step.suggestion)));
        }
        session.answer_id(&step.query, step.response).map_err(|e| diverged(e.to_string()))?;
        let status = StatusDoc::new(&ds, session.status());
        if status != step.status || session.surviving() != step.surviving {
            return Err(diverged(format!("reached {status:?} with {} survivors", session.surviving())));
        }
    }
    if StatusDoc::new(&ds, session.status()) != transcript.status {
        return Err(SessionError::ReplayDiverged {
            step: transcript.steps.len(),
            detail: "final status differs".into(),
        });
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn start(ds: Dataset, kind: StrategyKind) -> Result<Session, SessionError> {
        Session::start(Arc::new(ds), kind, None, SessionConfig::default())
    }

    #[test]
    fn toy1_gisa_one_question() {
        let mut s = start(fixtures::toy_example_1(), StrategyKind::Gisa).unwrap();
        assert_eq!(s.suggest().unwrap(), Suggestion::Query(1));
        assert_eq!(s.answer(1, 0).unwrap(), &Status::Identified(Outcome::Group(1)));
        let mut s = start(fixtures::toy_example_1(), StrategyKind::Gisa).unwrap();
        assert_eq!(s.answer(1, 1).unwrap(), &Status::Identified(Outcome::Group(0)));
        assert_eq!(s.transcript().steps.len(), 1);
    }

    #[test]
    fn toy2_gqsa_suggests_a_group() {
        let mut s = start(fixtures::toy_example_2(), StrategyKind::Gqsa).unwrap();
        match s.suggest().unwrap() {
            Suggestion::Group { options, .. } => assert_eq!(options.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interior_node_of_figure_four() {
        // after q3 = 1 only {θ1, θ2} remain and Q1 ties with Q2 = {q4}
        let ds = Arc::new(fixtures::toy_example_2());
        let mut hits = 0;
        for seed in 0..64 {
            let cfg = SessionConfig { tie_break: TieBreak::Seeded(seed), ..Default::default() };
            let mut s = Session::start(ds.clone(), StrategyKind::Gqsa, None, cfg).unwrap();
            let Suggestion::Group { group: 1, .. } = s.suggest().unwrap() else { continue };
            s.answer(2, 1).unwrap();
            if let Suggestion::Group { group: 0, options } = s.suggest().unwrap() {
                assert_eq!(options, vec![(0, 0.5), (1, 0.5)]);
                hits += 1;
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn gqsa_without_query_groups_fails() {
        assert!(matches!(start(fixtures::toy_example_1(), StrategyKind::Gqsa), Err(SessionError::Mismatch(_))));
    }

    #[test]
    fn outside_suggestion_is_rejected() {
        let mut s = start(fixtures::toy_example_1(), StrategyKind::Gisa).unwrap();
        assert!(matches!(s.answer(0, 1), Err(SessionError::OutsideSuggestion { .. })));
        assert!(s.history().is_empty());
    }

    #[test]
    fn inconsistent_answer_fails_session() {
        // q1 is constant but rides along in the winning group
        let ds = Dataset::from_matrix(&[vec![0, 0, 0], vec![0, 0, 1], vec![0, 1, 0], vec![0, 1, 1]])
            .unwrap()
            .with_priors(vec![0.4, 0.1, 0.4, 0.1])
            .unwrap()
            .with_query_groups(vec![0, 0, 1])
            .unwrap()
            .with_selection_weights(vec![0.1, 0.9, 1.0])
            .unwrap();
        let mut s = start(ds, StrategyKind::Gqsa).unwrap();
        assert!(matches!(s.suggest().unwrap(), Suggestion::Group { group: 0, .. }));
        assert!(matches!(s.answer(0, 1).unwrap(), Status::Failed(_)));
        assert!(matches!(s.answer(1, 1), Err(SessionError::Finished("failed"))));
        assert_eq!(s.transcript().status.state, "failed");
    }

    #[test]
    fn noisy_gisa_recovers_toy3() {
        let mut s = start(fixtures::toy_example_3(), StrategyKind::NoisyGisa).unwrap();
        let observed = [1u8, 0, 1];
        while *s.status() == Status::Active {
            let Suggestion::Query(q) = s.suggest().unwrap() else { panic!() };
            s.answer(q, observed[q]).unwrap();
        }
        assert_eq!(s.status(), &Status::Identified(Outcome::Object(1)));
    }

    #[test]
    fn replay_round_trip() {
        let ds = Arc::new(fixtures::toy_example_1());
        let mut s = Session::start(ds.clone(), StrategyKind::Gbs, None, SessionConfig::default()).unwrap();
        while *s.status() == Status::Active {
            let Suggestion::Query(q) = s.suggest().unwrap() else { panic!() };
            s.answer(q, ds.response(2, q)).unwrap();
        }
        let t = s.transcript();
        let text = serde_json::to_string(&t).unwrap();
        let back: Transcript = serde_json::from_str(&text).unwrap();
        let r = replay(ds.clone(), &back).unwrap();
        assert_eq!(r.status(), s.status());
        assert_eq!(r.history(), s.history());

        let empty = Session::start(ds.clone(), StrategyKind::Gbs, None, SessionConfig::default()).unwrap();
        let t = empty.transcript();
        assert!(t.steps.is_empty());
        assert_eq!(t.status.state, "active");
    }
}
