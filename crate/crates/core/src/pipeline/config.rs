//! Experiment configuration, a single JSON document.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{Hyperparams, ModelKind};
use crate::corpus::{SizeMode, SplitRatios};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::hog::HogConfig;
use crate::noise::DEFAULT_SNR_LEVELS;
use crate::seed::derive_seed;
use crate::tune::{Dim, HyperparamSpace, Objective, TuneConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::DEFAULT,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    /// Augmented copies per training image, on top of the original.
    pub copies: usize,
    pub seed: u64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self { copies: 1, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSettings {
    /// Working side length for HOG; the backend resizes to its own input.
    pub side: usize,
    pub mode: SizeMode,
    /// Skip undecodable files instead of failing.
    pub lenient: bool,
}

impl Default for ImageSettings {
    fn default() -> Self {
        Self {
            side: 299,
            mode: SizeMode::Resize,
            lenient: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub model: PathBuf,
    pub output_name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    /// When off, models train with `hyperparams` (or the kind defaults).
    pub enabled: bool,
    pub budget: usize,
    pub n_init: usize,
    pub candidates: usize,
    pub refine_steps: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Replaces the default search space of a model kind.
    pub spaces: BTreeMap<ModelKind, Vec<Dim>>,
}

impl Default for TuneSettings {
    fn default() -> Self {
        let t = TuneConfig::default();
        Self {
            enabled: true,
            budget: t.budget,
            n_init: t.n_init,
            candidates: t.candidates,
            refine_steps: t.refine_steps,
            seed: t.seed,
            objective: t.objective,
            spaces: BTreeMap::new(),
        }
    }
}

impl TuneSettings {
    pub fn config(&self, seed: u64) -> TuneConfig {
        TuneConfig {
            budget: self.budget,
            n_init: self.n_init,
            candidates: self.candidates,
            refine_steps: self.refine_steps,
            seed,
            objective: self.objective,
        }
    }

    pub fn space(&self, kind: ModelKind, n_train: usize) -> HyperparamSpace {
        match self.spaces.get(&kind) {
            Some(dims) => HyperparamSpace {
                kind,
                dims: dims.clone(),
            },
            None => HyperparamSpace::default_for(kind, n_train),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrSettings {
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for SnrSettings {
    fn default() -> Self {
        Self {
            levels: DEFAULT_SNR_LEVELS.to_vec(),
            seed: 1234,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub split: SplitSettings,
    pub augment: AugmentSettings,
    pub image: ImageSettings,
    pub hog: HogConfig,
    pub backend: BackendSettings,
    pub kinds: Vec<FeatureKind>,
    pub models: Vec<ModelKind>,
    pub tune: TuneSettings,
    /// Fixed hyperparameters, used when tuning is disabled.
    pub hyperparams: BTreeMap<ModelKind, Hyperparams>,
    pub train_seed: u64,
    pub snr: SnrSettings,
    /// Re-tune and retrain on noisy train/val images at every level instead
    /// of reusing the clean models.
    pub retune_per_level: bool,
    pub output: PathBuf,
    /// Also render every ROC curve as SVG.
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            split: SplitSettings::default(),
            augment: AugmentSettings::default(),
            image: ImageSettings::default(),
            hog: HogConfig::default(),
            backend: BackendSettings::default(),
            kinds: vec![FeatureKind::Deep, FeatureKind::Fused],
            models: ModelKind::ALL.to_vec(),
            tune: TuneSettings::default(),
            hyperparams: BTreeMap::new(),
            train_seed: 0,
            snr: SnrSettings::default(),
            retune_per_level: false,
            output: PathBuf::from("out"),
            svg: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file, or the `config` member of a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if v.get("outputs").is_some() {
            if let Some(inner) = v.get_mut("config") {
                v = inner.take();
            }
        }
        serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Derives every seed from one master seed.
    pub fn reseed(&mut self, master: u64) {
        self.split.seed = derive_seed(master, "split");
        self.augment.seed = derive_seed(master, "augment");
        self.tune.seed = derive_seed(master, "tune");
        self.train_seed = derive_seed(master, "train");
        self.snr.seed = derive_seed(master, "snr");
    }

    pub fn needs_backend(&self) -> bool {
        self.kinds.iter().any(|k| *k != FeatureKind::Hog)
    }

    /// Checks everything that can be checked without touching pixels.
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Config("at least one feature kind is required".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        for (name, dup) in [
            ("feature kind", has_duplicates(&self.kinds)),
            ("model", has_duplicates(&self.models)),
        ] {
            if dup {
                return Err(Error::Config(format!("duplicate {name} in config")));
            }
        }
        self.split.ratios.validate()?;
        self.hog.validate()?;
        if self.image.side == 0 {
            return Err(Error::Config("image side must be positive".into()));
        }
        if self.tune.enabled {
            self.tune.config(self.tune.seed).validate()?;
            for (&kind, dims) in &self.tune.spaces {
                HyperparamSpace {
                    kind,
                    dims: dims.clone(),
                }
                .validate()?;
            }
        }
        for (&kind, hp) in &self.hyperparams {
            if hp.kind() != kind {
                return Err(Error::Config(format!("hyperparams under `{kind}` are for {}", hp.kind())));
            }
            hp.validate()?;
        }
        if let Some(bad) = self.snr.levels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("snr level {bad} is not finite")));
        }
        Ok(())
    }

    /// Validation plus the existence of every referenced input path.
    pub fn check_inputs(&self) -> Result<()> {
        self.validate()?;
        if !self.dataset.is_dir() {
            return Err(Error::Config(format!(
                "dataset root {} does not exist",
                self.dataset.display()
            )));
        }
        if self.needs_backend() && !self.backend.model.is_file() {
            return Err(Error::Config(format!(
                "backend model {} does not exist",
                self.backend.model.display()
            )));
        }
        Ok(())
    }

    pub fn hyperparams_for(&self, kind: ModelKind) -> Hyperparams {
        self.hyperparams
            .get(&kind)
            .cloned()
            .unwrap_or_else(|| kind.default_hyperparams())
    }
}

fn has_duplicates<T: Ord + Clone>(v: &[T]) -> bool {
    let mut s = v.to_vec();
    s.sort();
    s.windows(2).any(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"modles": []}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"tune": {"budgt": 3}}"#).is_err());
    }

    #[test]
    fn overrides_parse() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"kinds": ["hog"], "models": ["knn"],
                "hyperparams": {"knn": {"kind": "knn", "k": 3}},
                "tune": {"enabled": false, "spaces": {"svm": [{"name": "c", "type": "log-real", "low": 0.1, "high": 10}]}}}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert!(!c.needs_backend());
        assert_eq!(c.tune.space(ModelKind::Svm, 10).dims.len(), 1);
        match c.hyperparams_for(ModelKind::Knn) {
            Hyperparams::Knn(p) => assert_eq!(p.k, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = ExperimentConfig {
            models: vec![],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.models = vec![ModelKind::Knn, ModelKind::Knn];
        assert!(c.validate().is_err());
        c.models = vec![ModelKind::Knn];
        c.hyperparams.insert(ModelKind::Knn, ModelKind::Svm.default_hyperparams());
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_paths_fail_check() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            dataset: dir.path().to_path_buf(),
            backend: BackendSettings {
                model: dir.path().join("absent.onnx"),
                output_name: None,
            },
            ..Default::default()
        };
        let e = c.check_inputs().unwrap_err().to_string();
        assert!(e.contains("absent.onnx"), "{e}");
    }

    #[test]
    fn reseed_changes_every_seed() {
        let mut a = ExperimentConfig::default();
        a.reseed(1);
        let mut b = a.clone();
        b.reseed(2);
        assert_ne!(a.split.seed, b.split.seed);
        assert_ne!(a.snr.seed, b.snr.seed);
        assert_ne!(a.train_seed, a.tune.seed);
    }
}
