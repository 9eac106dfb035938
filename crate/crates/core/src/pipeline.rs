//! Structure learning and CPT fitting wired together.

use serde::{Deserialize, Serialize};

use crate::bayes::{BayesNet, ModelFile, DEFAULT_ALPHA};
use crate::error::Result;
use crate::structure::{learn_skeleton, LearnedStructure, StructureParams};
use crate::table::{discretize_numeric, Discretization, Table, DEFAULT_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    pub structure: StructureParams,
    pub alpha: f64,
    pub bins: usize,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            structure: StructureParams::default(),
            alpha: DEFAULT_ALPHA,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub bn: BayesNet,
    pub discretization: Discretization,
    pub structure: LearnedStructure,
}

impl LearnedModel {
    pub fn to_model_file(&self) -> ModelFile {
        self.bn.to_model_file(&self.discretization)
    }
}

/// Learns the skeleton from similarity features of the raw table, then fits
/// CPTs on the table with numeric attributes binned.
pub fn learn(table: &Table, params: &LearnParams) -> Result<LearnedModel> {
    let structure = learn_skeleton(table, &params.structure)?;
    let (binned, discretization) = discretize_numeric(table, params.bins)?;
    let bn = BayesNet::fit(&binned, &structure.skeleton, params.alpha)?;
    Ok(LearnedModel {
        bn,
        discretization,
        structure,
    })
}
