//! Pipeline stages. Every stage reads its inputs from the config and from
//! artifacts already in the output directory, so `run` is literally the
//! stages chained and composes byte-for-byte with the subcommands.

use std::path::{Path, PathBuf};

use icurisk_core::baselines::{train_forest, train_logistic, ForestImportance, LogisticImportance};
use icurisk_core::data::{split, SplitIndices};
use icurisk_core::eval::{
    build_report, compare_groups, roc_curve, write_roc_csv, youden_threshold, CohortComparison, EvaluationReport,
    ModelScores, ReportOptions,
};
use icurisk_core::explain::{global_importance, lime_explain};
use icurisk_core::gbdt::{grid_search, train, GbdtImportance};
use icurisk_core::impute::{fit_apply, plan, FitScope, ImputationPolicy, ImputeSummary};
use icurisk_core::ingest::{ingest_csv, write_csv, SchemaFile};
use icurisk_core::model::{Model, ModelEnvelope};
use icurisk_core::resample::{rebalance, write_audit_csv};
use icurisk_core::select::{select_features, ImportanceTrainer, SelectionTrace};
use icurisk_core::synth::{generate, GeneratorSpec};
use icurisk_core::{Dataset, FeatureMatrix, Rng};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{RfeEstimator, RunConfig, ThresholdPolicy};
use crate::error::{CliError, StageContext};
use crate::output::Outputs;

/// Sub-stream tags under the run seed.
pub mod tags {
    pub const RESAMPLE: u64 = 1;
    pub const CARVE: u64 = 2;
    pub const GRID: u64 = 3;
    pub const LIME: u64 = 4;
}

pub const MODEL_FILES: [(&str, &str); 3] =
    [("gbdt", "model.json"), ("logistic", "model_logistic.json"), ("forest", "model_forest.json")];

fn read_json<T: DeserializeOwned>(out: &Outputs, name: &str, stage: &'static str) -> Result<T, CliError> {
    let path = out.path(name);
    let text = std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact { stage, path: path.clone() })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn require(out: &Outputs, name: &str, stage: &'static str) -> Result<PathBuf, CliError> {
    let path = out.path(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { stage, path })
    }
}

fn load_schema(config: &RunConfig, stage: &'static str) -> Result<SchemaFile, CliError> {
    SchemaFile::load(&config.schema).stage(stage)
}

fn load_raw(config: &RunConfig, path: &Path, stage: &'static str) -> Result<Dataset, CliError> {
    ingest_csv(path, &load_schema(config, stage)?).stage(stage)
}

fn load_imputed(out: &Outputs, csv: &str, stage: &'static str) -> Result<Dataset, CliError> {
    let schema: SchemaFile = read_json(out, "imputed_schema.json", stage)?;
    let path = require(out, csv, stage)?;
    ingest_csv(&path, &schema).stage(stage)
}

fn csv_bytes(dataset: &Dataset) -> icurisk_core::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(dataset, &mut buf)?;
    Ok(buf)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ColumnMissing {
    pub feature: String,
    pub missing: usize,
    pub fraction: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CohortSummary {
    pub rows: usize,
    pub positives: usize,
    pub features: usize,
    pub missing: Vec<ColumnMissing>,
}

fn summarize(dataset: &Dataset) -> CohortSummary {
    let n = dataset.n_rows();
    CohortSummary {
        rows: n,
        positives: dataset.labels().map_or(0, |l| l.iter().filter(|&&v| v == 1).count()),
        features: dataset.n_features(),
        missing: dataset
            .schema()
            .iter()
            .zip(dataset.columns())
            .map(|(d, c)| ColumnMissing {
                feature: d.name.clone(),
                missing: c.missing_count(),
                fraction: c.missing_count() as f64 / n as f64,
            })
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    pub cohort: CohortSummary,
    pub external: Option<CohortSummary>,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Reads and validates the cohort (and external cohort), then splits it.
pub fn stage_ingest(config: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    const S: &str = "ingest";
    let dataset = load_raw(config, &config.cohort, S)?;
    dataset.require_labels().stage(S)?;
    let external = match &config.external {
        Some(p) => {
            let ext = load_raw(config, p, S)?;
            ext.require_labels().stage(S)?;
            Some(summarize(&ext))
        }
        None => None,
    };
    let indices = split(&dataset, config.split.fraction, config.seed, config.split.stratified).stage(S)?;
    let summary = IngestSummary {
        cohort: summarize(&dataset),
        external,
        train_rows: indices.train.len(),
        test_rows: indices.test.len(),
    };
    out.write_json("split.json", &indices)?;
    out.write_json("ingest_summary.json", &summary)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImputationRecord {
    pub policy: ImputationPolicy,
    pub summary: ImputeSummary,
    pub external_summary: Option<ImputeSummary>,
}

/// Plans imputation on the training rows and fills every row. External rows
/// are filled with the same policy, using the internal training rows as the
/// only KNN donors.
pub fn stage_impute(config: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    const S: &str = "impute";
    let indices: SplitIndices = read_json(out, "split.json", S)?;
    let dataset = load_raw(config, &config.cohort, S)?;
    let fit_rows: Vec<usize> = match config.impute.fit_scope {
        FitScope::TrainOnly => indices.train.clone(),
        FitScope::WholeDataset => (0..dataset.n_rows()).collect(),
    };
    let fitted_on = match config.impute.fit_scope {
        FitScope::TrainOnly => "train split",
        FitScope::WholeDataset => "whole dataset",
    };
    let policy = plan(&dataset, &fit_rows, &config.impute, fitted_on).stage(S)?;
    let (imputed, summary) = fit_apply(&dataset, &policy, &fit_rows).stage(S)?;

    let mut external_summary = None;
    let mut external_csv = None;
    if let Some(p) = &config.external {
        let ext = load_raw(config, p, S)?;
        let donors = dataset.select_rows(&fit_rows);
        let combined = donors.concat(&ext).stage(S)?;
        let donor_rows: Vec<usize> = (0..donors.n_rows()).collect();
        let (filled, ext_summary) = fit_apply(&combined, &policy, &donor_rows).stage(S)?;
        let ext_rows: Vec<usize> = (donors.n_rows()..combined.n_rows()).collect();
        external_csv = Some(csv_bytes(&filled.select_rows(&ext_rows)).stage(S)?);
        external_summary = Some(ext_summary);
    }

    let schema = SchemaFile::for_dataset(&imputed);
    out.write_bytes("imputed.csv", &csv_bytes(&imputed).stage(S)?)?;
    out.write_bytes("imputed_schema.json", format!("{}\n", schema.to_json().stage(S)?).as_bytes())?;
    if let Some(bytes) = external_csv {
        out.write_bytes("external_imputed.csv", &bytes)?;
    }
    out.write_json("imputation_policy.json", &ImputationRecord { policy, summary, external_summary })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub estimator: String,
    #[serde(flatten)]
    pub trace: SelectionTrace,
}

/// VIF pruning, elimination and overrides on the imputed training rows.
pub fn stage_select(config: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    const S: &str = "select";
    let indices: SplitIndices = read_json(out, "split.json", S)?;
    let imputed = load_imputed(out, "imputed.csv", S)?;
    let train_rows = imputed.select_rows(&indices.train);
    let names = train_rows.feature_names();
    let x = train_rows.to_matrix(&names).stage(S)?;
    let y = train_rows.require_labels().stage(S)?;
    let sel = &config.selection;
    let trainer: Box<dyn ImportanceTrainer> = match sel.rfe_estimator {
        RfeEstimator::Gbdt => {
            let mut t = GbdtImportance::default();
            t.config.seed = config.seed;
            Box::new(t)
        }
        RfeEstimator::Logistic => Box::new(LogisticImportance::default()),
        RfeEstimator::Forest => {
            let mut t = ForestImportance::default();
            t.config.seed = config.seed;
            Box::new(t)
        }
    };
    let trace = select_features(
        &x,
        y,
        &names,
        sel.vif_threshold,
        trainer.as_ref(),
        sel.rfe_target,
        sel.rfe_step,
        &sel.overrides,
    )
    .stage(S)?;
    out.write_json("selection_trace.json", &SelectionRecord { estimator: trainer.describe(), trace })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainRecord {
    pub resample_method: String,
    pub n_synthetic: usize,
    pub resample_warnings: Vec<String>,
    pub fit_rows: usize,
    pub holdout_rows: usize,
    pub features: Vec<String>,
    pub gbdt: icurisk_core::gbdt::TrainTrace,
    pub thresholds: Vec<(String, f64)>,
}

fn operating_threshold(policy: ThresholdPolicy, scores: &[f64], labels: &[u8]) -> icurisk_core::Result<f64> {
    match policy {
        ThresholdPolicy::Fixed(t) => Ok(t),
        ThresholdPolicy::Youden => youden_threshold(&roc_curve(scores, labels)?),
    }
}

fn rule_name(policy: ThresholdPolicy) -> String {
    match policy {
        ThresholdPolicy::Youden => "youden (training hold-out)".into(),
        ThresholdPolicy::Fixed(t) => format!("fixed {t}"),
    }
}

/// Oversamples the training rows, carves a stratified hold-out for early
/// stopping and thresholds, optionally grid-searches, then fits the booster
/// and both baselines on the same rows.
pub fn stage_train(config: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    const S: &str = "train";
    let indices: SplitIndices = read_json(out, "split.json", S)?;
    let selection: SelectionRecord = read_json(out, "selection_trace.json", S)?;
    let features = selection.trace.final_set.clone();
    let imputed = load_imputed(out, "imputed.csv", S)?.select_features(&features).stage(S)?;
    let root = Rng::new(config.seed);

    let rebalanced = rebalance(
        &imputed,
        &indices.train,
        config.resample.method,
        config.resample.k,
        &mut root.derive(tags::RESAMPLE),
    )
    .stage(S)?;
    let mut audit = Vec::new();
    write_audit_csv(&rebalanced.audit, &mut audit).stage(S)?;

    let pool = &rebalanced.train;
    let carve = split(pool, 1.0 - config.model.eval_fraction, root.derive(tags::CARVE).seed(), true).stage(S)?;
    let fit = pool.select_rows(&carve.train);
    let hold = pool.select_rows(&carve.test);
    let fx = fit.to_matrix(&features).stage(S)?;
    let fy = fit.require_labels().stage(S)?;
    let hx = hold.to_matrix(&features).stage(S)?;
    let hy = hold.require_labels().stage(S)?;

    let mut train_config = config.model.train.clone();
    if let Some(grid) = &config.model.grid {
        let result = grid_search(&fx, fy, grid, &mut root.derive(tags::GRID)).stage(S)?;
        train_config = result.best.clone();
        out.write_json("grid_search.json", &result)?;
    }
    let (ensemble, trace) = train(&fx, fy, &train_config, Some((&hx, hy))).stage(S)?;
    let mut models = vec![Model::Gbdt(ensemble)];
    if let Some(c) = &config.baselines.logistic {
        models.push(Model::Logistic(train_logistic(&fx, fy, c).stage(S)?));
    }
    if let Some(c) = &config.baselines.forest {
        models.push(Model::Forest(train_forest(&fx, fy, c).stage(S)?));
    }

    let policy = config.evaluation.threshold;
    let mut thresholds = Vec::new();
    let mut envelopes = Vec::new();
    for m in models {
        let t = operating_threshold(policy, &m.predict_proba(&hx).stage(S)?, hy).stage(S)?;
        thresholds.push((m.kind().to_string(), t));
        envelopes.push(ModelEnvelope::new(m, t, rule_name(policy)));
    }

    let record = TrainRecord {
        resample_method: format!("{:?}", rebalanced.method).to_lowercase(),
        n_synthetic: rebalanced.n_synthetic,
        resample_warnings: rebalanced.warnings.clone(),
        fit_rows: fit.n_rows(),
        holdout_rows: hold.n_rows(),
        features,
        gbdt: trace,
        thresholds,
    };
    out.write_bytes("resample_audit.csv", &audit)?;
    for env in &envelopes {
        let file = MODEL_FILES.iter().find(|(k, _)| *k == env.model.kind()).expect("known model kind").1;
        out.write_bytes(file, format!("{}\n", env.to_json().stage(S)?).as_bytes())?;
    }
    out.write_json("train_trace.json", &record)
}

fn load_models(out: &Outputs, stage: &'static str) -> Result<Vec<ModelEnvelope>, CliError> {
    let mut models = Vec::new();
    for (i, (_, file)) in MODEL_FILES.iter().enumerate() {
        let path = out.path(file);
        if !path.exists() {
            if i == 0 {
                return Err(CliError::MissingArtifact { stage, path });
            }
            continue;
        }
        models.push(ModelEnvelope::load(&path).stage(stage)?);
    }
    Ok(models)
}

fn score_all(models: &[ModelEnvelope], data: &Dataset, stage: &'static str) -> Result<Vec<ModelScores>, CliError> {
    let x = data.to_matrix(&data.feature_names()).stage(stage)?;
    models
        .iter()
        .map(|m| {
            Ok(ModelScores {
                name: m.model.kind().to_string(),
                scores: m.model.predict_proba(&x).stage(stage)?,
                threshold: m.operating_threshold,
            })
        })
        .collect()
}

/// Internal report plus an optional external-validation section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub internal: EvaluationReport,
    pub external: Option<EvaluationReport>,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("INTERNAL TEST SET\n{}", self.internal.to_text());
        if let Some(e) = &self.external {
            s.push_str(&format!("\nEXTERNAL VALIDATION\n{}", e.to_text()));
        }
        s
    }
}

/// Scores the held-out test rows (and external cohort), with bootstrap
/// intervals, threshold metrics and Welch comparisons on the raw cohort.
pub fn stage_evaluate(config: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    const S: &str = "evaluate";
    let indices: SplitIndices = read_json(out, "split.json", S)?;
    let models = load_models(out, S)?;
    let imputed = load_imputed(out, "imputed.csv", S)?;
    let test = imputed.select_rows(&indices.test);
    let labels = test.require_labels().stage(S)?.to_vec();
    let options = ReportOptions {
        n_bootstrap: config.evaluation.n_bootstrap,
        level: config.evaluation.level,
        seed: config.seed,
        threshold_rule: rule_name(config.evaluation.threshold),
    };

    let raw = load_raw(config, &config.cohort, S)?;
    let raw_labels = raw.require_labels().stage(S)?;
    let features = raw.feature_names();
    let survivors: Vec<usize> = (0..raw.n_rows()).filter(|&i| raw_labels[i] == 0).collect();
    let deceased: Vec<usize> = (0..raw.n_rows()).filter(|&i| raw_labels[i] == 1).collect();
    let comparisons: Vec<CohortComparison> = vec![
        compare_groups("Survivors vs non-survivors", &raw, &features, ("survivors", &survivors), ("non-survivors", &deceased))
            .stage(S)?,
        compare_groups("Train vs test", &raw, &features, ("train", &indices.train), ("test", &indices.test)).stage(S)?,
    ];
    let (internal, curves) = build_report(&score_all(&models, &test, S)?, &labels, comparisons, &options).stage(S)?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for (name, curve) in &curves {
        let mut buf = Vec::new();
        write_roc_csv(curve, &mut buf).stage(S)?;
        files.push((format!("roc_{name}.csv"), buf));
    }

    let mut external = None;
    if config.external.is_some() {
        let ext = load_imputed(out, "external_imputed.csv", S)?;
        let ext_labels = ext.require_labels().stage(S)?.to_vec();
        let (report, curves) = build_report(&score_all(&models, &ext, S)?, &ext_labels, Vec::new(), &options).stage(S)?;
        for (name, curve) in &curves {
            let mut buf = Vec::new();
            write_roc_csv(curve, &mut buf).stage(S)?;
            files.push((format!("roc_external_{name}.csv"), buf));
        }
        external = Some(report);
    }

    let report = RunReport { internal, external };
    for (name, bytes) in &files {
        out.write_bytes(name, bytes)?;
    }
    out.write_bytes("report.txt", report.to_text().as_bytes())?;
    out.write_json("report.json", &report)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShapSummary {
    pub rows: usize,
    pub base_value: f64,
    /// Largest |sum(phi) + base - margin| over the explained rows.
    pub max_local_accuracy_error: f64,
    pub ranking: Vec<icurisk_core::explain::FeatureRank>,
}

/// TreeSHAP over the test rows and LIME for the highest-risk test rows.
pub fn stage_explain(config: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    const S: &str = "explain";
    let indices: SplitIndices = read_json(out, "split.json", S)?;
    let env = ModelEnvelope::load(&require(out, "model.json", S)?).stage(S)?;
    let Model::Gbdt(ensemble) = &env.model else {
        return Err(CliError::Config("model.json does not hold a boosted ensemble".into()));
    };
    let names = env.feature_names.clone();
    let imputed = load_imputed(out, "imputed.csv", S)?;
    let test = imputed.select_rows(&indices.test);
    let x = test.to_matrix(&names).stage(S)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    if config.explain.shap {
        let global = global_importance(ensemble, &x).stage(S)?;
        let margins = ensemble.predict_margin(&x).stage(S)?;
        let err = global
            .attributions
            .iter()
            .zip(&margins)
            .map(|(a, m)| (a.phi.iter().sum::<f64>() + a.base_value - m).abs())
            .fold(0.0, f64::max);
        let ids = test.row_ids();
        let mut values = Vec::new();
        global.write_attributions(ids, &mut values).stage(S)?;
        let mut ranking = Vec::new();
        global.write_ranking(&mut ranking).stage(S)?;
        let mut beeswarm = Vec::new();
        global.write_beeswarm(ids, &mut beeswarm).stage(S)?;
        files.push(("shap_values.csv".into(), values));
        files.push(("shap_ranking.csv".into(), ranking));
        files.push(("shap_beeswarm.csv".into(), beeswarm));
        let summary = ShapSummary {
            rows: x.n_rows(),
            base_value: global.attributions.first().map_or(0.0, |a| a.base_value),
            max_local_accuracy_error: err,
            ranking: global.ranking.clone(),
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("plain data serializes");
        text.push('\n');
        files.push(("shap_summary.json".into(), text.into_bytes()));
    }

    if config.explain.lime && config.explain.lime_rows > 0 {
        let train = imputed.select_rows(&indices.train).to_matrix(&names).stage(S)?;
        let scale: Vec<f64> = (0..names.len()).map(|j| sd(train.column(j))).collect();
        let probs = ensemble.predict_proba(&x).stage(S)?;
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let predict = |rows: &[Vec<f64>]| -> icurisk_core::Result<Vec<f64>> {
            ensemble.predict_proba(&FeatureMatrix::from_rows(names.clone(), rows)?)
        };
        let root = Rng::new(config.seed).derive(tags::LIME);
        for (rank, &i) in order.iter().take(config.explain.lime_rows).enumerate() {
            let surrogate = lime_explain(
                predict,
                &x.row(i),
                &scale,
                &names,
                &config.explain.lime_options,
                &mut root.derive(rank as u64),
            )
            .stage(S)?;
            let id = sanitize(&test.row_ids()[i]);
            let mut buf = Vec::new();
            surrogate.write_csv(&mut buf).stage(S)?;
            files.push((format!("lime_{id}.csv"), buf));
            let mut text = serde_json::to_string_pretty(&surrogate).expect("plain data serializes");
            text.push('\n');
            files.push((format!("lime_{id}.json"), text.into_bytes()));
        }
    }

    for (name, bytes) in &files {
        out.write_bytes(name, bytes)?;
    }
    Ok(())
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let s = var.sqrt();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub const STAGES: [(&str, fn(&RunConfig, &mut Outputs) -> Result<(), CliError>); 6] = [
    ("ingest", stage_ingest),
    ("impute", stage_impute),
    ("select", stage_select),
    ("train", stage_train),
    ("evaluate", stage_evaluate),
    ("explain", stage_explain),
];

/// Writes `resolved_config.json` and runs the named stages in pipeline order; on failure the files
/// written by this invocation are removed.
pub fn run_stages(config: &RunConfig, which: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let config = config.resolved();
    let mut out = Outputs::create(&config.output_dir)?;
    let result = (|| {
        out.write_json("resolved_config.json", &config)?;
        for (_, f) in STAGES.iter().filter(|(n, _)| which.contains(n)) {
            f(&config, &mut out)?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(out.written().to_vec()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

/// Every stage in order.
pub fn run(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let all: Vec<&str> = STAGES.iter().map(|(n, _)| *n).collect();
    run_stages(config, &all)
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub n: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Rows in the shifted external cohort; `0` skips it.
    pub external_n: usize,
    pub external_seed: u64,
    /// Fraction of the way non-survivor summaries move toward survivors'.
    pub external_shrink: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n: 9474,
            seed: 42,
            output_dir: PathBuf::from("data"),
            external_n: 0,
            external_seed: 4242,
            external_shrink: 0.5,
        }
    }
}

/// Writes `cohort.csv`, `schema.json`, `manifest.json`, optionally the
/// external cohort, and a starter `config.json` pointing at them.
pub fn synth(options: &SynthOptions) -> Result<Vec<PathBuf>, CliError> {
    const S: &str = "synth";
    if !(0.0..=1.0).contains(&options.external_shrink) {
        return Err(CliError::Config(format!("external shrink {} not in [0, 1]", options.external_shrink)));
    }
    let mut out = Outputs::create(&options.output_dir)?;
    let result = (|| {
        let spec = GeneratorSpec::cohort(options.n, options.seed);
        let (cohort, manifest) = generate(&spec).stage(S)?;
        let schema = SchemaFile::for_dataset(&cohort);
        out.write_bytes("cohort.csv", &csv_bytes(&cohort).stage(S)?)?;
        out.write_bytes("schema.json", format!("{}\n", schema.to_json().stage(S)?).as_bytes())?;
        out.write_json("manifest.json", &manifest)?;
        let mut config = RunConfig {
            cohort: "cohort.csv".into(),
            schema: "schema.json".into(),
            output_dir: "out".into(),
            seed: options.seed,
            ..RunConfig::default()
        };
        if options.external_n > 0 {
            let ext_spec = GeneratorSpec::cohort(options.external_n, options.seed)
                .external(options.external_shrink, options.external_seed);
            let (ext, ext_manifest) = generate(&ext_spec).stage(S)?;
            out.write_bytes("external.csv", &csv_bytes(&ext).stage(S)?)?;
            out.write_json("external_manifest.json", &ext_manifest)?;
            config.external = Some("external.csv".into());
        }
        out.write_json("config.json", &config)
    })();
    match result {
        Ok(()) => Ok(out.written().to_vec()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}
