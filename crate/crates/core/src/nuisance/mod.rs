//! Nuisance models: regularized linear models and random forests behind a
//! single [`ModelSpec`] facade, plus cross-fitting and hyperparameter
//! search.
//!
//! Everything is deterministic given its seed: forests derive one child seed
//! per tree, cross-fit folds derive from the plan seed, and the random
//! search derives from the search seed — so results do not depend on thread
//! scheduling.

pub mod crossfit;
pub mod forest;
pub mod linear;
pub mod search;

pub use crossfit::{cross_fit_predict, cross_fit_t_learner, CrossFitPlan};
pub use forest::{ForestFit, Tree, TreeNode};
pub use linear::{fit_logistic, fit_logistic_traced, fit_ridge, LinearFit};
pub use search::{candidate_grid, random_search, random_search_scored, select_by_cv, ModelFamily};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::util::derive_seed;

/// Classifier probabilities are floored into `[PROB_FLOOR, 1 - PROB_FLOOR]`
/// at prediction time so downstream inverse weighting never divides by zero.
pub const PROB_FLOOR: f64 = 1e-3;

/// Hyperparameterized model family member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Ridge regression with an unpenalized intercept.
    RidgeRegression { alpha: f64 },
    /// L2-penalized logistic regression; penalty strength is `1/c`, the
    /// intercept is unpenalized.
    LogisticL2 { c: f64 },
    ForestRegressor { n_trees: usize, max_depth: usize, min_leaf: usize, seed: u64 },
    ForestClassifier { n_trees: usize, max_depth: usize, min_leaf: usize, seed: u64 },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::RidgeRegression { alpha } => {
                if !alpha.is_finite() || *alpha < 0.0 {
                    return Err(Error::BadSpec("ridge alpha must be finite and >= 0".into()));
                }
            }
            ModelSpec::LogisticL2 { c } => {
                if !c.is_finite() || *c <= 0.0 {
                    return Err(Error::BadSpec("logistic c must be finite and > 0".into()));
                }
            }
            ModelSpec::ForestRegressor { n_trees, max_depth, min_leaf, .. }
            | ModelSpec::ForestClassifier { n_trees, max_depth, min_leaf, .. } => {
                if *n_trees == 0 || *max_depth == 0 || *min_leaf == 0 {
                    return Err(Error::BadSpec(
                        "forest n_trees, max_depth and min_leaf must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, ModelSpec::LogisticL2 { .. } | ModelSpec::ForestClassifier { .. })
    }

    pub fn is_forest(&self) -> bool {
        matches!(
            self,
            ModelSpec::ForestRegressor { .. } | ModelSpec::ForestClassifier { .. }
        )
    }

    /// Linear models expect standardized inputs; forests are scale-free.
    pub fn needs_standardization(&self) -> bool {
        !self.is_forest()
    }

    /// Same spec with the forest seed replaced (no-op for linear models).
    pub fn with_seed(&self, seed: u64) -> ModelSpec {
        match *self {
            ModelSpec::ForestRegressor { n_trees, max_depth, min_leaf, .. } => {
                ModelSpec::ForestRegressor { n_trees, max_depth, min_leaf, seed }
            }
            ModelSpec::ForestClassifier { n_trees, max_depth, min_leaf, .. } => {
                ModelSpec::ForestClassifier { n_trees, max_depth, min_leaf, seed }
            }
            ref other => other.clone(),
        }
    }

    /// Short human-readable identifier used in result tables.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::RidgeRegression { alpha } => format!("ridge(alpha={alpha:.4})"),
            ModelSpec::LogisticL2 { c } => format!("logistic(c={c:.4})"),
            ModelSpec::ForestRegressor { n_trees, max_depth, .. } => {
                format!("forest_reg(trees={n_trees},depth={max_depth})")
            }
            ModelSpec::ForestClassifier { n_trees, max_depth, .. } => {
                format!("forest_clf(trees={n_trees},depth={max_depth})")
            }
        }
    }

    /// Fits the model. `names`, when given, fixes the feature identity used
    /// by forests for split-candidate ordering so fits are invariant to
    /// column permutations.
    pub fn fit(&self, x: &Matrix, y: &[f64], names: Option<&[String]>) -> Result<FittedNuisance> {
        self.validate()?;
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.rows(), found: y.len() });
        }
        if x.rows() == 0 {
            return Err(Error::BadSpec("cannot fit on zero rows".into()));
        }
        let model = match self {
            ModelSpec::RidgeRegression { alpha } => {
                FittedModel::Linear(linear::fit_ridge(x, y, *alpha)?)
            }
            ModelSpec::LogisticL2 { c } => FittedModel::Linear(linear::fit_logistic(x, y, *c)?),
            ModelSpec::ForestRegressor { n_trees, max_depth, min_leaf, seed } => {
                FittedModel::Forest(forest::fit_forest(
                    x,
                    y,
                    &forest::ForestParams {
                        n_trees: *n_trees,
                        max_depth: *max_depth,
                        min_leaf: *min_leaf,
                        seed: *seed,
                        classifier: false,
                    },
                    names,
                )?)
            }
            ModelSpec::ForestClassifier { n_trees, max_depth, min_leaf, seed } => {
                FittedModel::Forest(forest::fit_forest(
                    x,
                    y,
                    &forest::ForestParams {
                        n_trees: *n_trees,
                        max_depth: *max_depth,
                        min_leaf: *min_leaf,
                        seed: *seed,
                        classifier: true,
                    },
                    names,
                )?)
            }
        };
        Ok(FittedNuisance { spec: self.clone(), n_features: x.cols(), model })
    }
}

/// Fitted parameters, serializable for inspection and exact reuse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Linear(LinearFit),
    Forest(ForestFit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedNuisance {
    pub spec: ModelSpec,
    pub n_features: usize,
    pub model: FittedModel,
}

impl FittedNuisance {
    /// Predicts on new rows: regression values, or floored probabilities for
    /// classifiers.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, found: x.cols() });
        }
        let raw = match &self.model {
            FittedModel::Linear(m) => m.predict(x),
            FittedModel::Forest(m) => m.predict(x),
        };
        if self.spec.is_classifier() {
            Ok(raw.into_iter().map(|p| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)).collect())
        } else {
            Ok(raw)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<FittedNuisance> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Derives the per-role nuisance seed used by pipelines: stable across
/// runs, distinct across roles.
pub fn role_seed(seed: u64, role: u64) -> u64 {
    derive_seed(seed, 0x6E75_6973 ^ role)
}
