//! Run configuration and the command implementations behind the `canmd`
//! binary.
//!
//! A run is described by one JSON document (see [`RunConfig`]). Values can be
//! overridden with dotted `key=value` assignments, e.g. `adapt.tau=0.8` or
//! `data.synth.seed=3`; the value is parsed as JSON and falls back to a
//! string. Every command writes `resolved_config.json` next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapt::{run_adaptation, AdaptConfig, IterationRecord};
use crate::correction::CorrectionParams;
use crate::data::{gen_synthetic, load_jsonl, split, Dataset, Domain, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::model::{load_checkpoint, save_checkpoint, EpochRecord, ModelParams, TrainConfig};
use crate::pipeline::{evaluate, pretrain_on, synthetic_scenario, ModelConfig, Scenario, SPLIT_RATIOS};

/// Relative output directories are resolved under this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "CANMD_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
/// No target example passed the confidence threshold; rerun with lower tau.
pub const EXIT_LOWER_TAU: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::EmptyPseudoLabels { .. } => EXIT_LOWER_TAU,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Labeled source JSONL. When set, file inputs are used and `synth` is
    /// ignored.
    pub source: Option<PathBuf>,
    /// Target JSONL; labels, if any, are ignored.
    pub target: Option<PathBuf>,
    /// Labeled target calibration JSONL.
    pub calib: Option<PathBuf>,
    /// Labeled held-out target JSONL.
    pub target_test: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: None,
            target: None,
            calib: None,
            target_test: None,
            synth: Some(SynthConfig::default()),
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("canmd_out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.source.is_some() {
            if d.target.is_none() || d.calib.is_none() {
                return Err(Error::config("data.source requires data.target and data.calib"));
            }
        } else if let Some(s) = &d.synth {
            s.validate()?;
        } else {
            return Err(Error::config("set either data.source/target/calib or data.synth"));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.adapt.validate()
    }

    /// Output directory after applying the output-root override.
    pub fn output_dir(&self) -> PathBuf {
        let dir = &self.output.directory;
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir.clone(),
        }
    }

    fn uses_files(&self) -> bool {
        self.data.source.is_some()
    }
}

/// Reads the config file (or starts from defaults), applies overrides and
/// validates the result.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{assignment}' is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("bad override key '{key}'")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::config(format!("override '{key}' descends into a non-object")));
            }
        }
        let map = node.as_object_mut().expect("object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_output(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join("resolved_config.json"), cfg)?;
    Ok(dir)
}

/// Builds the scenario from files or from the synthetic generator.
pub fn build_scenario(cfg: &RunConfig) -> Result<Scenario> {
    let d = &cfg.data;
    if !cfg.uses_files() {
        let synth = d.synth.as_ref().ok_or_else(|| Error::config("data.synth missing"))?;
        return synthetic_scenario(synth, d.split_seed);
    }
    let need = |p: &Option<PathBuf>, what: &str| p.clone().ok_or_else(|| Error::config(format!("data.{what} missing")));
    let source = load_jsonl(need(&d.source, "source")?, Domain::Source)?;
    source.require_labels()?;
    let (source_train, source_val, source_test) = split(&source, SPLIT_RATIOS, d.split_seed)?;
    let target = load_jsonl(need(&d.target, "target")?, Domain::Target)?.without_labels();
    let calib = load_jsonl(need(&d.calib, "calib")?, Domain::Target)?;
    calib.require_labels()?;
    let target_test = match &d.target_test {
        Some(p) => {
            let t = load_jsonl(p, Domain::Target)?;
            t.require_labels()?;
            Some(t)
        }
        None => None,
    };
    Ok(Scenario {
        source_train,
        source_val,
        source_test,
        target,
        calib,
        target_test,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub source_prior: f64,
    pub target_prior: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_calib: usize,
    pub n_target_test: usize,
    pub warnings: Vec<String>,
}

/// Writes `source.jsonl` (labeled), `target.jsonl` (unlabeled pool),
/// `target_labels.jsonl` (the same pool with its labels), `calib.jsonl` and
/// `target_test.jsonl`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthReport> {
    let synth = cfg
        .data
        .synth
        .as_ref()
        .ok_or_else(|| Error::config("synth needs a data.synth section"))?;
    let out = gen_synthetic(synth)?;
    let (pool, calib, test) = split(&out.target, SPLIT_RATIOS, cfg.data.split_seed)?;
    let dir = prepare_output(cfg)?;
    out.source.write_jsonl(dir.join("source.jsonl"))?;
    pool.without_labels().write_jsonl(dir.join("target.jsonl"))?;
    pool.write_jsonl(dir.join("target_labels.jsonl"))?;
    calib.write_jsonl(dir.join("calib.jsonl"))?;
    test.write_jsonl(dir.join("target_test.jsonl"))?;
    Ok(SynthReport {
        source_prior: out.source.class_prior().unwrap_or(f64::NAN),
        target_prior: out.target.class_prior().unwrap_or(f64::NAN),
        n_source: out.source.len(),
        n_target: pool.len(),
        n_calib: calib.len(),
        n_target_test: test.len(),
        warnings: out.warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub source_test: MetricsReport,
    pub best_epoch: usize,
    pub best_val_ba: f64,
    pub history: Vec<EpochRecord>,
}

/// Pretrains on the source train split. Writes `pretrained.ckpt`,
/// `pretrain_metrics.json` and the `source_test.jsonl` it was scored on.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainReport> {
    let sc = build_scenario(cfg)?;
    let pre = pretrain_on(&sc, &cfg.model, &cfg.train)?;
    let report = PretrainReport {
        source_test: evaluate(&pre.params, &sc.source_test, None)?,
        best_epoch: pre.best_epoch,
        best_val_ba: pre.best_val_ba,
        history: pre.history,
    };
    let dir = prepare_output(cfg)?;
    save_checkpoint(&pre.params, dir.join("pretrained.ckpt"))?;
    sc.source_test.write_jsonl(dir.join("source_test.jsonl"))?;
    write_json(&dir.join("pretrain_metrics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptSummary {
    pub best_epoch: usize,
    pub calib_ba_before: f64,
    pub calib_ba: f64,
    pub tau: f64,
    pub lambda: f64,
    pub bias_discarded: bool,
    pub correction: CorrectionParams,
    pub pseudo_labeled: usize,
    pub pseudo_class_one_fraction: f64,
    /// `target_test` when held-out target labels exist, else `calib`.
    pub eval_set: String,
    pub ba_before: f64,
    pub ba_after: f64,
    pub metrics_before: MetricsReport,
    pub metrics_after: MetricsReport,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    epoch: usize,
    nll: f64,
    contrastive: f64,
    combined: f64,
    gamma: f64,
    skipped_terms: usize,
    with_replacement: bool,
}

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        TraceRow {
            iteration: r.iteration,
            epoch: r.epoch,
            nll: r.nll_loss,
            contrastive: r.contrastive_loss,
            combined: r.combined_loss,
            gamma: r.gamma,
            skipped_terms: r.skipped_terms,
            with_replacement: r.sampled_with_replacement,
        }
    }
}

fn write_trace(path: &Path, rows: &[IterationRecord]) -> Result<()> {
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in rows {
        w.serialize(TraceRow::from(r)).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn pretrained_model(cfg: &RunConfig, sc: &Scenario) -> Result<ModelParams> {
    match &cfg.model.checkpoint {
        Some(p) => {
            let params = load_checkpoint(p)?;
            if params.hash_dim() != cfg.model.hash_dim {
                return Err(Error::config(format!(
                    "checkpoint hash_dim {} differs from model.hash_dim {}",
                    params.hash_dim(),
                    cfg.model.hash_dim
                )));
            }
            Ok(params)
        }
        None => Ok(pretrain_on(sc, &cfg.model, &cfg.train)?.params),
    }
}

/// Runs both adaptation stages. Writes `adapted.ckpt`, `adapt_trace.csv`,
/// `adapt_summary.json`, `correction.json` and `pseudo_labels.jsonl`.
pub fn cmd_adapt(cfg: &RunConfig) -> Result<AdaptSummary> {
    let sc = build_scenario(cfg)?;
    let before = pretrained_model(cfg, &sc)?;
    let outcome = run_adaptation(&before, &sc.source_train, &sc.target, &sc.calib, &cfg.adapt)?;
    let (eval_set, eval_ds) = match &sc.target_test {
        Some(t) => ("target_test", t),
        None => ("calib", &sc.calib),
    };
    let metrics_before = evaluate(&before, eval_ds, None)?;
    let metrics_after = evaluate(&outcome.params, eval_ds, None)?;
    let summary = AdaptSummary {
        best_epoch: outcome.best_epoch,
        calib_ba_before: outcome.initial_calib_ba,
        calib_ba: outcome.best_calib_ba,
        tau: cfg.adapt.tau,
        lambda: cfg.adapt.lambda,
        bias_discarded: outcome.correction.bias_discarded,
        correction: outcome.correction.clone(),
        pseudo_labeled: outcome.pseudo_labels.len(),
        pseudo_class_one_fraction: outcome.pseudo_labels.class_one_fraction(),
        eval_set: eval_set.to_string(),
        ba_before: metrics_before.ba,
        ba_after: metrics_after.ba,
        metrics_before,
        metrics_after,
    };

    let dir = prepare_output(cfg)?;
    save_checkpoint(&outcome.params, dir.join("adapted.ckpt"))?;
    write_trace(&dir.join("adapt_trace.csv"), &outcome.trace.iterations)?;
    write_json(&dir.join("adapt_summary.json"), &summary)?;
    write_json(&dir.join("correction.json"), &outcome.correction)?;
    let pl_path = dir.join("pseudo_labels.jsonl");
    let mut lines = String::new();
    for e in &outcome.pseudo_labels.entries {
        lines.push_str(&serde_json::to_string(e).expect("serializable"));
        lines.push('\n');
    }
    fs::write(&pl_path, lines).map_err(|e| Error::io(&pl_path, e))?;
    Ok(summary)
}

/// Scores a checkpoint on a labeled JSONL file, optionally applying a
/// correction read from a `correction.json`.
pub fn cmd_evaluate(checkpoint: &Path, dataset: &Path, correction: Option<&Path>) -> Result<MetricsReport> {
    let params = load_checkpoint(checkpoint)?;
    let ds: Dataset = load_jsonl(dataset, Domain::Target)?;
    let cp = match correction {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(
                serde_json::from_str::<CorrectionParams>(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    evaluate(&params, &ds, cp.as_ref())
}
