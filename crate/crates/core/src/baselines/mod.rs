//! Comparison models: penalized logistic regression and a random forest.

mod forest;
mod logistic;

pub use forest::{train_forest, ForestConfig, ForestImportance, ForestModel};
pub use logistic::{gradient, objective, train_logistic, LogisticConfig, LogisticImportance, LogisticModel};
