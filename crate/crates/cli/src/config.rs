//! Flat `key=value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rest_kg::evaluator::{RankingConfig, Sides};
use rest_kg::kg::{DatasetMode, LoadOptions};
use rest_kg::model::ModelConfig;
use rest_kg::trainer::TrainConfig;
use rest_kg::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// Dataset version label reported by `eval`; inferred from a `_vN` suffix when unset.
    pub version: Option<String>,
    pub load: LoadOptions,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ranking: RankingConfig,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Reject model settings outside the hyperparameter grid.
    pub grid_check: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            version: None,
            load: LoadOptions::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ranking: RankingConfig::default(),
            checkpoint: None,
            log: None,
            output: None,
            grid_check: true,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "version" => self.version = Some(value.to_string()),
            "mode" => self.load.mode = value.parse::<DatasetMode>()?,
            "add_inverses" => self.load.add_inverses = boolean(key, value)?,
            "holdout_fraction" => self.load.holdout_fraction = num(key, value)?,
            "split_seed" => self.load.split_seed = num(key, value)?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "negatives_per_positive" => self.train.negatives_per_positive = num(key, value)?,
            "valid_every" => self.train.valid_every = num(key, value)?,
            "valid_negatives" => self.train.valid_negatives = num(key, value)?,
            "valid_limit" => self.train.valid_limit = Some(num(key, value)?),
            "seed" => {
                let seed = num(key, value)?;
                self.train.seed = seed;
                self.ranking.seed = seed;
            }
            "num_negatives" => self.ranking.num_negatives = num(key, value)?,
            "filtered" => self.ranking.filtered = boolean(key, value)?,
            "sides" => self.ranking.sides = value.parse::<Sides>()?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "log" => self.log = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "grid_check" => self.grid_check = boolean(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse `key=value` lines; `#` starts a comment, blank lines are ignored.
    pub fn parse_into(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.parse_into(text)?;
        Ok(cfg)
    }

    /// Config file (if any) followed by `--set key=value` overrides, then validated.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.parse_into(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects key=value, got {o:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.grid_check {
            let off = self.model.off_grid();
            if !off.is_empty() {
                return Err(Error::Config(format!(
                    "outside the hyperparameter grid: {} (set grid_check=false to allow)",
                    off.join(", ")
                )));
            }
        }
        if !(0.0..1.0).contains(&self.load.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.ranking.num_negatives == 0 {
            return Err(Error::Config("num_negatives must be positive".into()));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key dataset".into()))
    }

    pub fn dataset_name(&self) -> String {
        self.dataset
            .as_deref()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn dataset_version(&self) -> String {
        if let Some(v) = &self.version {
            return v.clone();
        }
        let name = self.dataset_name();
        match name.rsplit_once('_') {
            Some((_, v)) if v.starts_with('v') && v[1..].chars().all(|c| c.is_ascii_digit()) && v.len() > 1 => v.to_string(),
            _ => String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let cfg = RunConfig::parse("dataset = data/WN18RR_v1\n# comment\ndim=16\nseed=7 # trailing\nsides=tail\n").unwrap();
        assert_eq!(cfg.model.dim, 16);
        assert_eq!((cfg.train.seed, cfg.ranking.seed), (7, 7));
        assert_eq!(cfg.ranking.sides, Sides::Tail);
        assert_eq!(cfg.dataset_name(), "WN18RR_v1");
        assert_eq!(cfg.dataset_version(), "v1");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("dimm=16").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(RunConfig::parse("dim").is_err());
        assert!(RunConfig::parse("filtered=maybe").is_err());
    }

    #[test]
    fn grid_is_enforced_unless_disabled() {
        let mut cfg = RunConfig::parse("dim=12").unwrap();
        assert!(cfg.validate().is_err());
        cfg.grid_check = false;
        cfg.validate().unwrap();
    }
}
