//! One training run end to end: surrogate pretraining, imputer training,
//! held-out evaluation and the run directory.
//!
//! Layout of `<output_dir>/<id>/`: `config.toml` (verbatim snapshot),
//! `resolved_config.toml` (every field, overrides applied), `manifest.json`, `imputer.json`, `surrogate.json`, `loss_log.csv`,
//! `surrogate_log.csv`, `split.csv` and `metrics.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{DatasetInfo, LoadedModel, ModelManifest};
use crate::config::RunConfig;
use crate::cooperative::{train_conn, write_loss_log, TrainMode};
use crate::data::split;
use crate::error::{Error, Result};
use crate::eval::{evaluate_method, fit_stats, load_filtered, EvalCell, Method, MetricsRecord, SplitModels};
use crate::imputation::Variant;
use crate::surrogate::{train_surrogate, SurrogateEpoch};

pub fn method_of(mode: TrainMode, variant: Variant) -> Method {
    match mode {
        TrainMode::Cooperative => Method::Conn(variant),
        TrainMode::Standalone => Method::Standalone(variant),
    }
}

pub fn run_id(mode: TrainMode, variant: Variant, seed: u64) -> String {
    format!("{}-seed{seed}", method_of(mode, variant))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub max_masked: usize,
    pub normalized: MetricsRecord,
    pub mpa: MetricsRecord,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub id: String,
    pub epochs: usize,
    pub best_val_total: f64,
    pub surrogate_epochs: usize,
    pub test: Vec<LevelMetrics>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub model: LoadedModel,
    pub metrics: RunMetrics,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_surrogate_log(log: &[SurrogateEpoch], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,val_loss,best_val_loss").expect("vec write");
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.best_val_loss).expect("vec write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Trains the configured variant and mode on split `cfg.seed` and writes
/// the run directory. `snapshot` is the config text to store verbatim; the
/// serialized config is used when it is absent.
pub fn execute_train(cfg: &RunConfig, snapshot: Option<&str>) -> Result<RunOutcome> {
    cfg.validate()?;
    let ds = load_filtered(cfg)?;
    let sp = split(&ds, cfg.split_spec(cfg.seed))?;
    let norm = fit_stats(cfg, &sp.train)?;
    let (surrogate, surrogate_log) = train_surrogate(&sp.train, &norm, &cfg.surrogate_config(), cfg.seed)?;
    let coop = cfg.coop_config(cfg.variant, cfg.mode, cfg.seed);
    let out = train_conn(&sp.train, &surrogate, &coop)?;

    let id = run_id(cfg.mode, cfg.variant, cfg.seed);
    let dir = cfg.output_dir.join(&id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let model = LoadedModel {
        dir: dir.clone(),
        manifest: ModelManifest {
            id: id.clone(),
            variant: cfg.variant,
            mode: cfg.mode,
            surrogate_mode: cfg.surrogate_mode,
            alpha: coop.effective_alpha(),
            seed: cfg.seed,
            dataset: DatasetInfo {
                provenance: ds.provenance.clone(),
                rows: ds.len(),
                train_rows: sp.train.len(),
                test_rows: sp.test.len(),
            },
        },
        imputer: out.imputer.clone(),
        surrogate: out.surrogate.clone(),
    };
    model.save(&dir)?;
    let resolved = cfg.to_toml();
    write_text(&dir.join("config.toml"), snapshot.unwrap_or(&resolved))?;
    write_text(&dir.join("resolved_config.toml"), &resolved)?;
    let mut log = Vec::new();
    write_loss_log(&out.log, &mut log).expect("vec write");
    write_text(&dir.join("loss_log.csv"), &String::from_utf8(log).expect("ascii log"))?;
    write_surrogate_log(&surrogate_log, &dir.join("surrogate_log.csv"))?;
    sp.write_manifest(&dir.join("split.csv"))?;

    let method = method_of(cfg.mode, cfg.variant);
    let epochs = out.log.len();
    let best_val_total = out.log.iter().map(|e| e.val_total).fold(f64::INFINITY, f64::min);
    let models = SplitModels {
        split: sp,
        norm,
        surrogate,
        surrogate_log: surrogate_log.clone(),
        imputers: BTreeMap::from([((cfg.mode, cfg.variant), (out.imputer, out.log))]),
        gp: None,
    };
    let mut test = Vec::new();
    // Metrics are undefined on fewer than two test rows; the checkpoint stands.
    let levels: &[usize] = if models.split.test.len() >= 2 { &cfg.eval_levels } else { &[] };
    if levels.is_empty() {
        log::warn!("test split has {} rows; skipping test metrics", models.split.test.len());
    }
    for &level in levels {
        let cell = EvalCell::new(&models, level, cfg.mask_seed)?;
        let e = evaluate_method(&models, &cell, method, 1, cfg.mh_proposal_std)?;
        test.push(LevelMetrics {
            max_masked: level,
            normalized: e.normalized,
            mpa: e.mpa,
            seconds: e.seconds,
        });
    }
    let metrics = RunMetrics {
        id,
        epochs,
        best_val_total,
        surrogate_epochs: surrogate_log.len(),
        test,
    };
    write_text(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    log::info!("run {} written to {}", metrics.id, dir.display());
    Ok(RunOutcome { dir, model, metrics })
}
