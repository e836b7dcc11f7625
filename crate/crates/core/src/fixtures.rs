//! The three small worked problems used throughout the tests and docs.

use crate::dataset::{Dataset, NoiseBlock};

/// Four objects, three queries; objects 1-3 form group 1 and object 4
/// forms group 2.
pub fn toy_example_1() -> Dataset {
    Dataset::from_json_str(TOY_1).expect("toy example 1 is valid")
}

/// Three objects, four queries in two query groups with selection weights
/// 0.5/0.5 and 0.9/0.1.
pub fn toy_example_2() -> Dataset {
    Dataset::from_json_str(TOY_2).expect("toy example 2 is valid")
}

/// Two objects at Hamming distance 3 with priors 1/4 and 3/4; queries 2 and
/// 3 are error-prone.
pub fn toy_example_3() -> Dataset {
    Dataset::from_json_str(TOY_3).expect("toy example 3 is valid")
}

pub fn toy_example_3_noise(model: u8, p: Option<f64>) -> NoiseBlock {
    NoiseBlock { error_prone: vec!["q2".into(), "q3".into()], model, p, epsilon: None }
}

pub const TOY_1: &str = r#"{
  "objects": ["θ1", "θ2", "θ3", "θ4"],
  "queries": ["q1", "q2", "q3"],
  "matrix": [[0, 1, 1], [1, 1, 0], [0, 1, 0], [1, 0, 0]],
  "object_groups": [1, 1, 1, 2]
}"#;

pub const TOY_2: &str = r#"{
  "objects": ["θ1", "θ2", "θ3"],
  "queries": ["q1", "q2", "q3", "q4"],
  "matrix": [[0, 1, 1, 0], [1, 0, 1, 1], [1, 1, 0, 1]],
  "query_groups": [1, 1, 2, 2],
  "selection_weights": {"q1": 0.5, "q2": 0.5, "q3": 0.9, "q4": 0.1}
}"#;

pub const TOY_3: &str = r#"{
  "objects": ["θ1", "θ2"],
  "queries": ["q1", "q2", "q3"],
  "matrix": [[0, 0, 0], [1, 1, 1]],
  "priors": [0.25, 0.75],
  "noise": {"error_prone": ["q2", "q3"], "model": 1}
}"#;
