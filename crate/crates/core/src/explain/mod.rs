//! Attributions: exact tree Shapley values and local linear surrogates.

mod lime;
mod shap;

pub use lime::{lime_explain, FeatureWeight, LimeOptions, LocalSurrogate};
pub use shap::{
    base_value, global_importance, shap_matrix, tree_expectation, tree_shap, tree_shap_single, Attribution,
    FeatureRank, GlobalImportance,
};
