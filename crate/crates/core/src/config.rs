//! Flat, typed run configuration with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cooperative::{CoopConfig, SurrogateMode, TrainMode};
use crate::data::{SplitSpec, MAX_MASKED_LIMIT};
use crate::error::{Error, Result};
use crate::eval::Method;
use crate::gp::GpGrid;
use crate::imputation::{ImputerArch, Variant};
use crate::nn::AdamConfig;
use crate::surrogate::SurrogateConfig;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub max_age: f64,
    pub output_dir: PathBuf,
    /// Split seed and training seed for a single `train` run.
    pub seed: u64,
    /// Split seeds used by the sweep.
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub normalize_strength: bool,

    pub variant: Variant,
    pub mode: TrainMode,
    pub alpha: f64,
    pub surrogate_mode: SurrogateMode,

    pub surrogate_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent_dim: usize,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub surrogate_epochs: usize,
    pub surrogate_patience: usize,
    pub epochs: usize,
    pub patience: usize,

    pub max_masked_train: usize,
    pub masked_only_loss: bool,
    pub unclipped_reconstruction: bool,
    pub beta_dvae: f64,
    pub beta_dwae: f64,
    pub mmd_bandwidth: Option<f64>,

    pub mask_seed: u64,
    pub eval_levels: Vec<usize>,
    pub methods: Vec<String>,

    pub gp_budgets: Vec<usize>,
    pub mh_proposal_std: f64,
    pub gp_signal_vars: Vec<f64>,
    pub gp_lengthscales: Vec<f64>,
    pub gp_noise_vars: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GpGrid::default();
        RunConfig {
            dataset: PathBuf::from("data/concrete.csv"),
            max_age: 28.0,
            output_dir: PathBuf::from("runs"),
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            train_fraction: 0.8,
            normalize_strength: true,
            variant: Variant::Dae,
            mode: TrainMode::Cooperative,
            alpha: 0.2,
            surrogate_mode: SurrogateMode::Frozen,
            surrogate_hidden: vec![64, 64],
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            latent_dim: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            validation_fraction: 0.1,
            surrogate_epochs: 500,
            surrogate_patience: 50,
            epochs: 500,
            patience: 50,
            max_masked_train: 5,
            masked_only_loss: false,
            unclipped_reconstruction: true,
            beta_dvae: 1e-4,
            beta_dwae: 0.1,
            mmd_bandwidth: None,
            mask_seed: 2024,
            eval_levels: vec![1, 2, 3, 4, 5],
            methods: Method::all_names().iter().map(|s| s.to_string()).collect(),
            gp_budgets: vec![1, 100, 1000, 10_000, 100_000],
            mh_proposal_std: 0.05,
            gp_signal_vars: grid.signal_var,
            gp_lengthscales: grid.lengthscale,
            gp_noise_vars: grid.noise_var,
        }
    }
}

fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like key=value"))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

fn config_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("config")
        .to_string();
    Error::config(field, msg)
}

impl RunConfig {
    /// Parses a TOML document, applies `key=value` overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_error)?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, overrides)?;
        if cfg.dataset.is_relative() && !cfg.dataset.exists() {
            if let Some(dir) = path.parent() {
                let candidate = dir.join(&cfg.dataset);
                if candidate.exists() {
                    cfg.dataset = candidate;
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        if !(self.max_age >= 1.0) {
            return Err(Error::config("max_age", format!("must be at least 1, got {}", self.max_age)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one split seed is required"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(
                "train_fraction",
                format!("must lie strictly between 0 and 1, got {}", self.train_fraction),
            ));
        }
        for (field, sizes) in [
            ("surrogate_hidden", &self.surrogate_hidden),
            ("encoder_hidden", &self.encoder_hidden),
            ("decoder_hidden", &self.decoder_hidden),
        ] {
            if sizes.contains(&0) {
                return Err(Error::config(field, "layer widths must be positive"));
            }
        }
        for (field, v) in [("surrogate_epochs", self.surrogate_epochs), ("epochs", self.epochs)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        positive("mh_proposal_std", self.mh_proposal_std)?;
        if self.eval_levels.is_empty() || self.eval_levels.iter().any(|&k| !(1..=MAX_MASKED_LIMIT).contains(&k)) {
            return Err(Error::config("eval_levels", format!("levels must lie in 1..={MAX_MASKED_LIMIT}")));
        }
        if self.gp_budgets.contains(&0) {
            return Err(Error::config("gp_budgets", "budgets must be at least 1"));
        }
        for m in &self.methods {
            m.parse::<Method>().map_err(|_| Error::config("methods", format!("unknown method `{m}`")))?;
        }
        for (field, values) in [
            ("gp_signal_vars", &self.gp_signal_vars),
            ("gp_lengthscales", &self.gp_lengthscales),
            ("gp_noise_vars", &self.gp_noise_vars),
        ] {
            if values.is_empty() {
                return Err(Error::config(field, "grid must not be empty"));
            }
            for &v in values {
                positive(field, v)?;
            }
        }
        self.surrogate_config().training.validate("surrogate_")?;
        self.coop_config(self.variant, self.mode, self.seed).validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn surrogate_config(&self) -> SurrogateConfig {
        SurrogateConfig {
            hidden: self.surrogate_hidden.clone(),
            training: TrainingConfig {
                adam: self.adam(),
                batch_size: self.batch_size,
                max_epochs: self.surrogate_epochs,
                patience: self.surrogate_patience,
                validation_fraction: self.validation_fraction,
            },
        }
    }

    pub fn coop_config(&self, variant: Variant, mode: TrainMode, seed: u64) -> CoopConfig {
        CoopConfig {
            alpha: self.alpha,
            variant,
            mode,
            surrogate_mode: self.surrogate_mode,
            training: TrainingConfig {
                adam: self.adam(),
                batch_size: self.batch_size,
                max_epochs: self.epochs,
                patience: self.patience,
                validation_fraction: self.validation_fraction,
            },
            arch: ImputerArch {
                encoder_hidden: self.encoder_hidden.clone(),
                decoder_hidden: self.decoder_hidden.clone(),
                latent_dim: self.latent_dim,
            },
            beta_dvae: self.beta_dvae,
            beta_dwae: self.beta_dwae,
            mmd_bandwidth: self.mmd_bandwidth,
            max_masked_train: self.max_masked_train,
            masked_only_loss: self.masked_only_loss,
            unclipped_reconstruction: self.unclipped_reconstruction,
            seed,
        }
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            seed,
            train_fraction: self.train_fraction,
        }
    }

    pub fn gp_grid(&self) -> GpGrid {
        GpGrid {
            signal_var: self.gp_signal_vars.clone(),
            lengthscale: self.gp_lengthscales.clone(),
            noise_var: self.gp_noise_vars.clone(),
        }
    }

    pub fn parsed_methods(&self) -> Vec<Method> {
        self.methods.iter().filter_map(|m| m.parse().ok()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml(), &[]).unwrap(), cfg);
        assert_eq!(RunConfig::parse("", &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::parse("alpha = 0.3\n", &["variant=dwae".into(), "epochs=7".into(), "seeds=[1,2]".into()]).unwrap();
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.variant, Variant::Dwae);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.seeds, vec![1, 2]);
    }

    #[test]
    fn rejections_name_the_field() {
        let field = |text: &str, o: &[&str]| match RunConfig::parse(text, &o.iter().map(|s| s.to_string()).collect::<Vec<_>>()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("alpha = 1.5", &[]), "alpha");
        assert_eq!(field("", &["alpha=-0.1"]), "alpha");
        assert_eq!(field("train_fraction = 1.0", &[]), "train_fraction");
        assert_eq!(field("max_masked_train = 6", &[]), "max_masked_train");
        assert_eq!(field("eval_levels = [0]", &[]), "eval_levels");
        assert_eq!(field("methods = [\"conn-foo\"]", &[]), "methods");
        assert_eq!(field("bogus = 1", &[]), "bogus");
        assert_eq!(field("", &["noequals"]), "noequals");
    }
}
