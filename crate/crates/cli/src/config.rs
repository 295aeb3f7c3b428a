//! Campaign configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use specguard_core::bayesopt::BoParams;
use specguard_core::benchmark::{self, CONTROLLER, NOMINAL_MODEL, TRUE_MODEL};
use specguard_core::calibrate::CalibrationMode;
use specguard_core::seeds::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub models: ModelsSection,
    pub spec: SpecSection,
    pub scenario: ScenarioSection,
    pub calibration: CalibrationSection,
    pub bo: BoSection,
    pub validation: ValidationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub nominal: String,
    #[serde(rename = "true")]
    pub true_model: String,
    pub controller: String,
    pub preset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecSection {
    pub text: String,
    pub norm_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub x0: Vec<f64>,
    pub t_f: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    SampledD,
    FixedD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub samples: usize,
    pub lambda: f64,
    pub seed: u64,
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_d: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoSection {
    pub budget: usize,
    pub init_count: usize,
    pub length_scale: f64,
    pub jitter: f64,
    pub starts_per_combination: usize,
    pub refined: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub trials: usize,
    pub seed: u64,
    /// Extra single rollouts at uniformly drawn configurations.
    #[serde(default)]
    pub sweep: usize,
    /// Number of trial trajectories kept for plotting.
    #[serde(default = "default_traces")]
    pub traces: usize,
}

fn default_traces() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("specguard-out") }
    }
}

impl CampaignConfig {
    /// Built-in configuration for a benchmark preset.
    pub fn preset(name: &str) -> Result<Self> {
        if benchmark::preset_scale(name).is_none() {
            bail!("unknown preset {name:?}; known presets: {}", preset_names());
        }
        let scenario = benchmark::segway_scenario();
        Ok(Self {
            models: ModelsSection {
                nominal: NOMINAL_MODEL.into(),
                true_model: TRUE_MODEL.into(),
                controller: CONTROLLER.into(),
                preset: name.into(),
            },
            spec: SpecSection {
                text: benchmark::SPEC_TEXT.into(),
                norm_weights: benchmark::segway_norm().weights().to_vec(),
            },
            scenario: ScenarioSection { x0: scenario.x0, t_f: scenario.t_f, dt: scenario.dt },
            calibration: CalibrationSection {
                samples: 300,
                lambda: 0.05,
                seed: 1,
                mode: ModeName::SampledD,
                fixed_d: None,
            },
            bo: BoSection {
                budget: 300,
                init_count: 10,
                length_scale: 0.2,
                jitter: 1e-10,
                starts_per_combination: 8,
                refined: 8,
                seed: 2,
            },
            validation: ValidationSection { trials: 200, seed: 3, sweep: 0, traces: default_traces() },
            output: OutputSection::default(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces every stage seed with one derived from `master`.
    pub fn override_seeds(&mut self, master: u64) {
        self.calibration.seed = derive_seed(master, stream::CAMPAIGN_STAGE, 0);
        self.bo.seed = derive_seed(master, stream::CAMPAIGN_STAGE, 1);
        self.validation.seed = derive_seed(master, stream::CAMPAIGN_STAGE, 2);
    }

    pub fn calibration_mode(&self) -> Result<CalibrationMode> {
        match (self.calibration.mode, &self.calibration.fixed_d) {
            (ModeName::SampledD, None) => Ok(CalibrationMode::SampledD),
            (ModeName::SampledD, Some(_)) => bail!("calibration.fixed_d is only allowed with mode = \"fixed-d\""),
            (ModeName::FixedD, Some(d)) => Ok(CalibrationMode::FixedD { d: d.clone() }),
            (ModeName::FixedD, None) => bail!("calibration mode \"fixed-d\" needs calibration.fixed_d"),
        }
    }

    pub fn bo_params(&self) -> BoParams {
        BoParams {
            budget: self.bo.budget,
            init_count: self.bo.init_count,
            length_scale: self.bo.length_scale,
            jitter: self.bo.jitter,
            starts_per_combination: self.bo.starts_per_combination,
            refined: self.bo.refined,
        }
    }

    /// Checks that do not need the model registry.
    pub fn validate_values(&self) -> Result<()> {
        let c = &self.calibration;
        if !(c.lambda > 0.0 && c.lambda < 1.0) {
            bail!("calibration.lambda must lie in (0, 1), got {}", c.lambda);
        }
        if c.samples == 0 {
            bail!("calibration.samples must be positive");
        }
        self.calibration_mode()?;
        self.bo_params().validate().context("invalid [bo] section")?;
        if self.bo.starts_per_combination == 0 {
            bail!("bo.starts_per_combination must be positive");
        }
        if self.validation.trials == 0 {
            bail!("validation.trials must be positive");
        }
        Ok(())
    }
}

fn preset_names() -> String {
    benchmark::PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_toml() {
        let c = CampaignConfig::preset("default").unwrap();
        assert_eq!(CampaignConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(CampaignConfig::preset("bogus").is_err());
    }

    #[test]
    fn shipped_example_parses() {
        let text = include_str!("../../../campaign.example.toml");
        let c = CampaignConfig::from_toml(text).unwrap();
        c.validate_values().unwrap();
        assert_eq!(c, CampaignConfig::preset("default").unwrap());
    }

    #[test]
    fn value_checks() {
        let mut c = CampaignConfig::preset("default").unwrap();
        c.calibration.lambda = 0.0;
        assert!(c.validate_values().is_err());
        let mut c = CampaignConfig::preset("default").unwrap();
        c.bo.init_count = 400;
        assert!(c.validate_values().is_err());
        let mut c = CampaignConfig::preset("default").unwrap();
        c.calibration.mode = ModeName::FixedD;
        assert!(c.validate_values().is_err());
        c.calibration.fixed_d = Some(vec![1.0, 1.0, 2.0, 2.0, 3.0]);
        assert!(c.validate_values().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = CampaignConfig::preset("default").unwrap().to_toml();
        text = text.replace("[bo]", "[bo]\nbudgte = 3");
        assert!(CampaignConfig::from_toml(&text).is_err());
    }

    #[test]
    fn seed_override_changes_all_stages() {
        let mut c = CampaignConfig::preset("default").unwrap();
        let before = c.clone();
        c.override_seeds(9);
        assert_ne!(c.calibration.seed, before.calibration.seed);
        assert_ne!(c.bo.seed, before.bo.seed);
        assert_ne!(c.validation.seed, before.validation.seed);
    }
}
