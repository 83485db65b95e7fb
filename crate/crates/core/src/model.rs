//! Versioned JSON envelope shared by every trained model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{ForestModel, LogisticModel};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::gbdt::Ensemble;

pub const MODEL_FORMAT: &str = "icurisk-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum Model {
    Gbdt(Ensemble),
    Logistic(LogisticModel),
    Forest(ForestModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Gbdt(_) => "gbdt",
            Model::Logistic(_) => "logistic",
            Model::Forest(_) => "forest",
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            Model::Gbdt(m) => &m.feature_names,
            Model::Logistic(m) => &m.feature_names,
            Model::Forest(m) => &m.feature_names,
        }
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            Model::Gbdt(m) => m.predict_proba(x),
            Model::Logistic(m) => m.predict_proba(x),
            Model::Forest(m) => m.predict_proba(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEnvelope {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    /// Probability at or above which a row is called positive.
    pub operating_threshold: f64,
    pub threshold_rule: String,
    #[serde(flatten)]
    pub model: Model,
}

impl ModelEnvelope {
    pub fn new(model: Model, operating_threshold: f64, threshold_rule: impl Into<String>) -> Self {
        ModelEnvelope {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            feature_names: model.feature_names().to_vec(),
            operating_threshold,
            threshold_rule: threshold_rule.into(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: ModelEnvelope = serde_json::from_str(text)?;
        if env.format != MODEL_FORMAT {
            return Err(Error::Model(format!("not a model file (format `{}`)", env.format)));
        }
        if env.version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                env.version
            )));
        }
        if env.feature_names != env.model.feature_names() {
            return Err(Error::Model("envelope and model disagree on feature names".into()));
        }
        Ok(env)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
