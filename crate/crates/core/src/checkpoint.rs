//! Versioned JSON checkpoints and the model directory layout read by the
//! CLI and the HTTP service.
//!
//! A model directory holds `manifest.json`, `imputer.json` and
//! `surrogate.json`. Each model file is an envelope `{format, model}`; a
//! reader rejects any format tag it does not know.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cooperative::{SurrogateMode, TrainMode};
use crate::data::{NormStats, COLUMNS, N_DESIGN, UNITS};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::imputation::{ImputerModel, Variant};
use crate::surrogate::SurrogateModel;

pub const IMPUTER_FORMAT: &str = "mixinv-imputer/1";
pub const SURROGATE_FORMAT: &str = "mixinv-surrogate/1";
pub const GP_FORMAT: &str = "mixinv-gp/1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMPUTER_FILE: &str = "imputer.json";
pub const SURROGATE_FILE: &str = "surrogate.json";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    model: T,
}

pub fn save_json<T: Serialize>(path: &Path, format: &str, model: &T) -> Result<()> {
    let env = Envelope {
        format: format.to_string(),
        model,
    };
    let text = serde_json::to_string_pretty(&env)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if env.format != format {
        return Err(Error::Checkpoint(format!(
            "{}: format `{}`, expected `{format}`",
            path.display(),
            env.format
        )));
    }
    serde_json::from_value(env.model).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn save_imputer(path: &Path, m: &ImputerModel) -> Result<()> {
    save_json(path, IMPUTER_FORMAT, m)
}

pub fn load_imputer(path: &Path) -> Result<ImputerModel> {
    load_json(path, IMPUTER_FORMAT)
}

pub fn save_surrogate(path: &Path, m: &SurrogateModel) -> Result<()> {
    save_json(path, SURROGATE_FORMAT, m)
}

pub fn load_surrogate(path: &Path) -> Result<SurrogateModel> {
    load_json(path, SURROGATE_FORMAT)
}

pub fn save_gp(path: &Path, m: &GpModel) -> Result<()> {
    save_json(path, GP_FORMAT, m)
}

pub fn load_gp(path: &Path) -> Result<GpModel> {
    load_json(path, GP_FORMAT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub provenance: String,
    pub rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub id: String,
    pub variant: Variant,
    pub mode: TrainMode,
    pub surrogate_mode: SurrogateMode,
    pub alpha: f64,
    pub seed: u64,
    pub dataset: DatasetInfo,
}

/// Raw-unit training range of one design variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableBounds {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub unit: String,
}

pub fn bounds(norm: &NormStats) -> Vec<VariableBounds> {
    (0..N_DESIGN)
        .map(|j| VariableBounds {
            name: COLUMNS[j].to_string(),
            min: norm.min[j],
            max: norm.max[j],
            unit: UNITS[j].to_string(),
        })
        .collect()
}

/// A trained imputer with the surrogate it was trained against.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub dir: PathBuf,
    pub manifest: ModelManifest,
    pub imputer: ImputerModel,
    pub surrogate: SurrogateModel,
}

impl LoadedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest + "\n").map_err(|e| Error::io(&path, e))?;
        save_imputer(&dir.join(IMPUTER_FILE), &self.imputer)?;
        save_surrogate(&dir.join(SURROGATE_FILE), &self.surrogate)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let imputer = load_imputer(&dir.join(IMPUTER_FILE))?;
        let surrogate = load_surrogate(&dir.join(SURROGATE_FILE))?;
        if imputer.norm != surrogate.norm {
            return Err(Error::Checkpoint(format!(
                "{}: imputer and surrogate disagree on normalization",
                dir.display()
            )));
        }
        if imputer.variant != manifest.variant {
            return Err(Error::Checkpoint(format!("{}: manifest variant mismatch", dir.display())));
        }
        Ok(LoadedModel {
            dir: dir.to_path_buf(),
            manifest,
            imputer,
            surrogate,
        })
    }
}

/// Every loadable model directory under `root` (the root itself included),
/// sorted by id. Unreadable directories are skipped with a warning.
pub fn scan_models(root: &Path) -> Result<Vec<LoadedModel>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "model directory does not exist"),
        ));
    }
    let mut dirs = vec![root.to_path_buf()];
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    let mut out: Vec<LoadedModel> = Vec::new();
    for d in dirs {
        if !d.join(MANIFEST_FILE).exists() {
            continue;
        }
        match LoadedModel::load(&d) {
            Ok(m) => out.push(m),
            Err(e) => log::warn!("skipping {}: {e}", d.display()),
        }
    }
    out.sort_by(|a, b| a.manifest.id.cmp(&b.manifest.id));
    out.dedup_by(|a, b| a.manifest.id == b.manifest.id);
    Ok(out)
}
