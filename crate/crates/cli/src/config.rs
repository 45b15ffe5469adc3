//! TOML run configuration.

use std::path::{Path, PathBuf};

use invabc::abc::NpmcConfig;
use invabc::forming_sim::SimulatorConfig;
use invabc::imaging::{Hsv, HsvBounds, SsimParams};
use invabc::nn::AdamConfig;
use invabc::params::{ParameterSpace, ParameterSpec};
use invabc::vae::{TrainConfig, VaeArchitecture};
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Run directory; `--out` overrides it. Relative paths resolve against
    /// the config file's directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub image: ImageConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub vae: VaeConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub abc: AbcConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub train: usize,
    pub test: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            train: 200,
            test: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub side: usize,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self { side: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Green-pixel replacement across the training images.
    Reconstruct,
    /// The processed image of a known parameter vector.
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub mode: ObjectiveMode,
    pub planted: Option<Vec<f64>>,
    pub green: HsvBounds,
    /// Punch pixels strictly above this HSV triple form the working region.
    pub color_low: Hsv,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            mode: ObjectiveMode::Reconstruct,
            planted: None,
            green: HsvBounds::default_green(),
            color_low: Hsv::new(270.0, 0.5, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub base_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: Option<u64>,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            base_width: 8,
            epochs: 150,
            batch_size: 16,
            lr: 1e-3,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub folds: usize,
    /// Defaults to `{0.1, 0.2, 0.5, 1, 2}·√d`.
    pub bandwidths: Option<Vec<f64>>,
    pub gammas: Option<Vec<f64>>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            bandwidths: None,
            gammas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub ssim_threshold: f64,
    pub augment: usize,
    pub max_rounds: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            ssim_threshold: 0.85,
            augment: 200,
            max_rounds: 3,
        }
    }
}

/// `"auto"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonStop {
    Value(f64),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbcConfig {
    pub n_particles: usize,
    pub t_max: usize,
    pub quantile: f64,
    /// `"auto"` stops at the surrogate's held-out latent error (see
    /// `auto_quantile`).
    pub epsilon_stop: EpsilonStop,
    /// Quantile of the held-out latent distances used by `"auto"`.
    pub auto_quantile: f64,
    pub min_improvement: f64,
    pub pilot_size: usize,
    pub acceptance_floor: f64,
    pub seed: Option<u64>,
}

impl Default for AbcConfig {
    fn default() -> Self {
        let d = NpmcConfig::default();
        Self {
            n_particles: d.n_particles,
            t_max: d.t_max,
            quantile: d.quantile,
            epsilon_stop: EpsilonStop::Keyword(AutoKeyword::Auto),
            auto_quantile: 0.9,
            min_improvement: d.min_improvement,
            pilot_size: d.pilot_size,
            acceptance_floor: d.acceptance_floor,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub posterior_draws: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { posterior_draws: 20 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.out.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.out = dir.join(&cfg.out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let space = self.space()?;
        self.simulator
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if space.dim() < invabc::forming_sim::CORE_PARAMETERS {
            return bad(format!(
                "the simulator needs at least {} parameters",
                invabc::forming_sim::CORE_PARAMETERS
            ));
        }
        if space.names().iter().any(|n| n.contains(',') || n.is_empty()) {
            return bad("parameter names must be nonempty and comma-free".into());
        }
        if !(0.0..1.0).contains(&self.validate.ssim_threshold) {
            return bad(format!(
                "validate.ssim_threshold must be in [0, 1), got {}",
                self.validate.ssim_threshold
            ));
        }
        self.architecture().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.vae.batch_size == 0 || self.vae.epochs == 0 {
            return bad("vae.batch_size and vae.epochs must be ≥ 1".into());
        }
        if self.objective.mode == ObjectiveMode::Planted {
            match &self.objective.planted {
                None => return bad("objective.mode = \"planted\" needs objective.planted".into()),
                Some(p) => {
                    space.normalize(p).map_err(|e| PipelineError::Config(format!("objective.planted: {e}")))?;
                }
            }
        }
        if !(self.abc.auto_quantile > 0.0 && self.abc.auto_quantile <= 1.0) {
            return bad("abc.auto_quantile must be in (0, 1]".into());
        }
        self.npmc(0.0, 0)
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.surrogate.folds < 2 {
            return bad("surrogate.folds must be ≥ 2".into());
        }
        Ok(())
    }

    pub fn space(&self) -> Result<ParameterSpace, PipelineError> {
        ParameterSpace::new(self.parameters.clone()).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn architecture(&self) -> VaeArchitecture {
        VaeArchitecture {
            base_width: self.vae.base_width,
            ..VaeArchitecture::desk(self.image.side, self.vae.latent_dim)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.vae.epochs,
            batch_size: self.vae.batch_size,
            seed: self.vae_seed(),
            adam: AdamConfig {
                lr: self.vae.lr,
                ..AdamConfig::default()
            },
        }
    }

    pub fn vae_seed(&self) -> u64 {
        self.vae.seed.unwrap_or(self.seed.wrapping_add(11))
    }

    pub fn abc_seed(&self) -> u64 {
        self.abc.seed.unwrap_or(self.seed.wrapping_add(23))
    }

    pub fn train_design_seed(&self) -> u64 {
        self.seed
    }

    pub fn test_design_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn augment_seed(&self, round: usize) -> u64 {
        self.seed.wrapping_add(100 + round as u64)
    }

    pub fn cv_seed(&self) -> u64 {
        self.seed.wrapping_add(31)
    }

    pub fn report_seed(&self) -> u64 {
        self.seed.wrapping_add(47)
    }

    pub fn npmc(&self, epsilon_stop: f64, seed: u64) -> NpmcConfig {
        NpmcConfig {
            n_particles: self.abc.n_particles,
            t_max: self.abc.t_max,
            quantile: self.abc.quantile,
            epsilon_stop,
            min_improvement: self.abc.min_improvement,
            pilot_size: self.abc.pilot_size,
            seed,
            acceptance_floor: self.abc.acceptance_floor,
        }
    }

    pub fn ssim_params(&self) -> SsimParams {
        SsimParams::default()
    }

    /// Canonical JSON used for hashing (the run directory is excluded so
    /// relocated runs hash identically).
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[parameters]]
        name = "a"
        lo = 0.0
        hi = 1.0
        [[parameters]]
        name = "b"
        lo = 0.0
        hi = 1.0
        [[parameters]]
        name = "c"
        lo = 0.0
        hi = 1.0
        [[parameters]]
        name = "d"
        lo = 0.0
        hi = 1.0
        [[parameters]]
        name = "e"
        lo = 0.0
        hi = 1.0
        [[parameters]]
        name = "f"
        lo = 0.0
        hi = 1.0
        prior = { kind = "gaussian", mean = 0.5, std = 0.2 }
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.design.train, 200);
        assert_eq!(c.vae.latent_dim, 8);
        assert_eq!(c.abc.epsilon_stop, EpsilonStop::Keyword(AutoKeyword::Auto));
        assert_eq!(c.simulator, SimulatorConfig::default());
    }

    #[test]
    fn epsilon_stop_accepts_number() {
        let c = RunConfig::from_toml(&format!("{MINIMAL}\n[abc]\nepsilon_stop = 0.25\n")).unwrap();
        assert_eq!(c.abc.epsilon_stop, EpsilonStop::Value(0.25));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\n[validate]\nssim_threshold = 1.5\n")).is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\n[objective]\nmode = \"planted\"\n")).is_err());
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\n[vae]\nunknown = 1\n")).is_err());
        assert!(RunConfig::from_toml("seed = 1").is_err());
    }
}
