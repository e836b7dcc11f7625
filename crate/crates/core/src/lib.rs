//! Group-based active query selection: building and evaluating query
//! trees that identify an object, or the group it belongs to.

pub mod dataset;
pub mod experiment;
pub mod fixtures;
pub mod infomath;
pub mod noise;
pub mod session;
pub mod synth;
pub mod builders;
pub mod tree;

pub use dataset::{Dataset, DatasetError, IdentificationMode, NoiseBlock, ProblemDocument};
pub use infomath::{InfoError, NodePopulation, Objective, SplitStats};
pub use tree::{DecisionTree, Node, Outcome, TreeError, TreeEvaluation, TreeVariant};
pub use builders::{build, build_gbs, build_gigqsa, build_gisa, build_gqsa, Algorithm, BuildConfig, BuildError, TieBreak};
pub use noise::{NoiseError, NoiseSpec, NoisyState, ProbabilityModel};
pub use session::{Session, SessionConfig, SessionError, Status, StrategyKind, Suggestion, Transcript};
