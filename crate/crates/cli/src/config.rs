use std::fs;
use std::path::{Path, PathBuf};

use gprloc_core::fusion::EkfConfig;
use gprloc_core::model::{ModelConfig, TrainConfig};
use gprloc_core::signal::FilterConfig;
use gprloc_core::simulate::{MotionProfile, ScatterScene};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// How synthetic drives are drawn when no scene/motion files are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationPlan {
    /// Drive length (s).
    pub duration: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Probability that a drive segment turns.
    pub turn_probability: f64,
    /// Mean along-track spacing of random scatterers (m).
    pub scatterer_spacing: f64,
    /// Slip applied over the whole drive.
    pub slip_ratio: f64,
    /// Sequences generated per split by `ablate`.
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub test_sequences: usize,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        Self {
            duration: 120.0,
            speed_min: 0.05,
            speed_max: 0.3,
            turn_probability: 0.3,
            scatterer_spacing: 0.35,
            slip_ratio: 0.0,
            train_sequences: 8,
            val_sequences: 2,
            test_sequences: 2,
        }
    }
}

impl SimulationPlan {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.duration > 0.0) {
            return Err(CliError::Config("simulation.duration must be positive".into()));
        }
        if !(self.speed_min > 0.0 && self.speed_max >= self.speed_min) {
            return Err(CliError::Config("simulation speeds must satisfy 0 < speed_min <= speed_max".into()));
        }
        if !(0.0..=1.0).contains(&self.turn_probability) {
            return Err(CliError::Config("simulation.turn_probability must lie in [0, 1]".into()));
        }
        if !(self.scatterer_spacing > 0.0) {
            return Err(CliError::Config("simulation.scatterer_spacing must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.slip_ratio) {
            return Err(CliError::Config("simulation.slip_ratio must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything an experiment needs, loaded from one TOML document with
/// `[filter]`, `[model]`, `[train]`, `[ekf]` and `[simulation]` tables.
/// Every table and key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed for simulation; `--seed` also overrides the model and
    /// training seeds.
    pub seed: u64,
    /// Window stride (traces) for training and inference.
    pub stride: usize,
    /// Scene and motion files for `simulate`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion: Option<PathBuf>,
    pub filter: FilterConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ekf: EkfConfig,
    pub simulation: SimulationPlan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stride: 1,
            scene: None,
            motion: None,
            filter: FilterConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ekf: EkfConfig::default(),
            simulation: SimulationPlan::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads a config file and resolves its file references against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| e.context(path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scene, &mut cfg.motion].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.model.seed = s;
            self.train.seed = s;
        }
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.stride == 0 {
            return Err(CliError::Config("stride must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.ekf.validate()?;
        self.filter.validate(self.model.input_dim)?;
        self.simulation.validate()?;
        for p in [&self.scene, &self.motion].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn scene(&self) -> CliResult<Option<ScatterScene>> {
        self.scene.as_deref().map(|p| read_doc(p, ScatterScene::from_toml_str)).transpose()
    }

    pub fn motion(&self) -> CliResult<Option<MotionProfile>> {
        self.motion.as_deref().map(|p| read_doc(p, MotionProfile::from_toml_str)).transpose()
    }
}

pub(crate) fn read_doc<T>(path: &Path, parse: impl Fn(&str) -> gprloc_core::Result<T>) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::from(e).context(path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_and_unknown_keys() {
        let mut c = ExperimentConfig { model: ModelConfig::reduced(), ..ExperimentConfig::default() };
        c.train.epochs = 3;
        c.simulation.slip_ratio = 0.15;
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert!(ExperimentConfig::from_toml_str("[model]\ndepth = 3\n").is_err());
    }

    #[test]
    fn seed_override_reaches_model_and_training() {
        let c = ExperimentConfig::default().with_seed(Some(7));
        assert_eq!((c.seed, c.model.seed, c.train.seed), (7, 7, 7));
    }

    #[test]
    fn missing_reference_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        fs::write(&p, "scene = \"nope.toml\"\n").unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
