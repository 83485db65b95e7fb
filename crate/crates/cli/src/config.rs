//! Run configuration. Every field has a default, so `{}` plus a cohort path
//! is a valid config; the fully resolved form is written next to the outputs.

use std::path::{Path, PathBuf};

use icurisk_core::baselines::{ForestConfig, LogisticConfig};
use icurisk_core::explain::LimeOptions;
use icurisk_core::gbdt::{GridSpec, TrainConfig};
use icurisk_core::impute::ImputeOptions;
use icurisk_core::resample::Method;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: PathBuf,
    /// Schema for the cohort CSV (and the external CSV).
    pub schema: PathBuf,
    pub external: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub split: SplitConfig,
    pub impute: ImputeOptions,
    pub selection: SelectionConfig,
    pub resample: ResampleConfig,
    pub model: ModelConfig,
    pub baselines: BaselineConfig,
    pub evaluation: EvaluationConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cohort: PathBuf::from("cohort.csv"),
            schema: PathBuf::from("schema.json"),
            external: None,
            output_dir: PathBuf::from("out"),
            seed: 42,
            split: SplitConfig::default(),
            impute: ImputeOptions::default(),
            selection: SelectionConfig::default(),
            resample: ResampleConfig::default(),
            model: ModelConfig::default(),
            baselines: BaselineConfig::default(),
            evaluation: EvaluationConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fraction: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fraction: 0.75, stratified: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RfeEstimator {
    #[default]
    Gbdt,
    Logistic,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub vif_threshold: f64,
    /// Features kept by elimination; `None` keeps every VIF survivor.
    pub rfe_target: Option<usize>,
    pub rfe_step: usize,
    pub rfe_estimator: RfeEstimator,
    /// Features re-added after elimination.
    pub overrides: Vec<String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            vif_threshold: 10.0,
            rfe_target: None,
            rfe_step: 1,
            rfe_estimator: RfeEstimator::Gbdt,
            overrides: vec!["PO2".into(), "Serum_Calcium".into(), "RDW".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    pub method: Method,
    pub k: usize,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig { method: Method::Smote, k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub train: TrainConfig,
    /// When set, the grid winner replaces `train`'s eta, depth and tree count.
    pub grid: Option<GridSpec>,
    /// Stratified share of the resampled training rows held out for early
    /// stopping and threshold choice.
    pub eval_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { train: TrainConfig::default(), grid: None, eval_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub logistic: Option<LogisticConfig>,
    pub forest: Option<ForestConfig>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { logistic: Some(LogisticConfig::default()), forest: Some(ForestConfig::default()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "value")]
pub enum ThresholdPolicy {
    /// Youden-optimal on the held-out carve-out.
    Youden,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_bootstrap: usize,
    pub level: f64,
    pub threshold: ThresholdPolicy,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { n_bootstrap: 1000, level: 0.95, threshold: ThresholdPolicy::Youden }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub shap: bool,
    pub lime: bool,
    /// Test rows explained by LIME, highest predicted risk first.
    pub lime_rows: usize,
    pub lime_options: LimeOptions,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { shap: true, lime: true, lime_rows: 3, lime_options: LimeOptions::default() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        // Relative paths are taken relative to the config file.
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.cohort);
        fix(&mut self.output_dir);
        fix(&mut self.schema);
        if let Some(p) = self.external.as_mut() {
            fix(p);
        }
    }

    /// Checks values and that every input path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        for p in [Some(&self.cohort), Some(&self.schema), self.external.as_ref()].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("input file {} does not exist", p.display()));
            }
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return bad(format!("split.fraction {} not in (0, 1)", self.split.fraction));
        }
        if !(self.model.eval_fraction > 0.0 && self.model.eval_fraction < 1.0) {
            return bad(format!("model.eval_fraction {} not in (0, 1)", self.model.eval_fraction));
        }
        if self.selection.rfe_step == 0 {
            return bad("selection.rfe_step must be >= 1".into());
        }
        if self.resample.k == 0 {
            return bad("resample.k must be >= 1".into());
        }
        if self.evaluation.n_bootstrap == 0 {
            return bad("evaluation.n_bootstrap must be >= 1".into());
        }
        self.model.train.validate().map_err(|e| CliError::Config(format!("model.train: {e}")))?;
        self.impute.thresholds.validate().map_err(|e| CliError::Config(format!("impute: {e}")))?;
        Ok(())
    }

    /// The config with every stage seed tied to the run seed and the grid
    /// base taken from `model.train`.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.model.train.seed = self.seed;
        if let Some(g) = c.model.grid.as_mut() {
            g.base = c.model.train.clone();
        }
        if let Some(f) = c.baselines.forest.as_mut() {
            f.seed = self.seed;
        }
        c
    }
}
