use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::eval::{MatrixConfig, Regime, Variant};
use crate::features::FeatureConfig;
use crate::relgraph::seeds;
use crate::synth::SPLIT_FRACTIONS;
use crate::trainer::TrainConfig;

use super::{CliError, RunArgs};

/// Everything one run needs. Relative paths in a config file are resolved
/// against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifests: Vec<PathBuf>,
    pub output: PathBuf,
    pub features: FeatureConfig,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub regimes: Vec<Regime>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Train, validation and test fractions of the temporal split.
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifests: Vec::new(),
            output: PathBuf::from("runs/default"),
            features: FeatureConfig::default(),
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
            regimes: Regime::EVERY.to_vec(),
            variants: vec![Variant::Base, Variant::Adv],
            seeds: vec![0],
            split: SPLIT_FRACTIONS,
        }
    }
}

/// Deserializes `text`, naming the offending field path on failure.
pub(crate) fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Invalid(format!("{}: at `{path}`: {}", origin.display(), e.inner()))
    })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = parse_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for m in &mut cfg.manifests {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if !args.manifests.is_empty() {
            cfg.manifests = args.manifests.clone();
        }
        if let Some(o) = &args.output {
            cfg.output = o.clone();
        }
        if let Some(v) = args.variant {
            cfg.variants = vec![v];
        }
        if !args.regimes.is_empty() {
            cfg.regimes = args.regimes.clone();
        }
        if !args.seeds.is_empty() {
            cfg.seeds = args.seeds.clone();
        }
        if let Some(e) = args.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = args.steps_per_epoch {
            cfg.train.steps_per_epoch = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Invalid(format!("`{field}`: {msg}")));
        if self.manifests.is_empty() {
            return bad("manifests", "at least one manifest is required".into());
        }
        for (i, m) in self.manifests.iter().enumerate() {
            if !m.is_file() {
                return bad(&format!("manifests[{i}]"), format!("{} does not exist", m.display()));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must not be empty".into());
        }
        if self.variants.is_empty() {
            return bad("variants", "must not be empty".into());
        }
        if let Err(e) = self.backbone.validate() {
            return bad("backbone", e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        if self.features.fanout.len() != self.backbone.layers {
            return bad(
                "features.fanout",
                format!("{} hops for {} backbone layers", self.features.fanout.len(), self.backbone.layers),
            );
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split", format!("{:?} must lie in [0, 1] and sum to 1", self.split));
        }
        Ok(())
    }

    pub fn matrix(&self) -> MatrixConfig {
        MatrixConfig {
            backbone: self.backbone.clone(),
            train: self.train.clone(),
            regimes: self.regimes.clone(),
            variants: self.variants.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

/// The named sub-streams derived from one root seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSeeds {
    pub init: u64,
    pub episodes: u64,
    pub sampling: u64,
    pub eval_support: u64,
    pub eval_sampling: u64,
    /// Random-walk seed of the feature config; shared by every root seed.
    pub walks: u64,
}

impl StreamSeeds {
    pub fn derive(root: u64, features: &FeatureConfig) -> Self {
        Self {
            init: seeds::named(root, "init"),
            episodes: seeds::named(root, "episodes"),
            sampling: seeds::named(root, "sampling"),
            eval_support: seeds::named(root, "eval-support"),
            eval_sampling: seeds::named(root, "eval-sampling"),
            walks: features.rwpe_seed,
        }
    }
}
