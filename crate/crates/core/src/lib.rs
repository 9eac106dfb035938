//! Unsupervised cleaning of tabular data with a learned Bayesian network,
//! user constraints and a compensatory co-occurrence score.

pub mod bayes;
pub mod compensatory;
pub mod constraints;
pub mod encoded;
pub mod engine;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod pipeline;
pub mod similarity;
pub mod structure;
pub mod table;

pub use bayes::{apply_edits, BayesNet, EditOp, ModelFile};
pub use compensatory::{build_corr, corr_to_weight, CorrTable};
pub use constraints::{ConfidenceParams, ConstraintSet, UserConstraint};
pub use engine::{clean, CleanOutcome, CleanParams, Cleaner, PruneMode, Repair, RepairReport};
pub use error::{Error, Result};
pub use harness::{
    generate_synthetic, inject_errors, score, ErrorSpec, ErrorType, GroundTruth, Metrics,
};
pub use manifest::Manifest;
pub use pipeline::{learn, LearnParams, LearnedModel};
pub use similarity::{adjacent_pair_features, string_similarity};
pub use structure::{graphical_lasso, learn_skeleton, GlassoParams, StructureParams};
pub use table::{load_csv, Kind, Table};
