//! A configuration resolved against the model registry.

use anyhow::{bail, Context, Result};
use specguard_core::bayesopt::EnvSpace;
use specguard_core::benchmark::{self, CONTROLLER, NOMINAL_MODEL, TRUE_MODEL};
use specguard_core::signals::WeightedNorm;
use specguard_core::stl::{build_measure, parse_spec, RobustnessMeasure, Spec};
use specguard_core::systems::{ControllerSpec, NominalModel, ScenarioConfig, TrueModel};

use crate::config::CampaignConfig;

pub struct Campaign {
    pub config: CampaignConfig,
    pub nominal: NominalModel,
    pub true_model: TrueModel,
    pub controller: ControllerSpec,
    pub scenario: ScenarioConfig,
    pub space: EnvSpace,
    pub spec: Spec,
    pub norm: WeightedNorm,
    pub measure: RobustnessMeasure,
}

fn expect_name(kind: &str, got: &str, known: &[&str]) -> Result<()> {
    if !known.contains(&got) {
        bail!("unknown {kind} model {got:?}; registered: {}", known.join(", "));
    }
    Ok(())
}

impl Campaign {
    /// Validates the configuration and builds every model it names. Nothing is simulated.
    pub fn resolve(config: CampaignConfig) -> Result<Self> {
        config.validate_values()?;
        expect_name("nominal", &config.models.nominal, &[NOMINAL_MODEL])?;
        expect_name("true", &config.models.true_model, &[TRUE_MODEL])?;
        expect_name("controller", &config.models.controller, &[CONTROLLER])?;
        let Some(scale) = benchmark::preset_scale(&config.models.preset) else {
            bail!("unknown preset {:?}", config.models.preset);
        };
        let (nominal, true_model, controller, _) = benchmark::segway_models(scale);
        let s = &config.scenario;
        let scenario = ScenarioConfig::new(s.x0.clone(), s.t_f, s.dt).context("invalid [scenario] section")?;
        if scenario.x0.len() != nominal.state_dim() {
            bail!("scenario.x0 has {} entries but the model state has {}", scenario.x0.len(), nominal.state_dim());
        }
        let space = benchmark::segway_env_space();
        if let Some(d) = &config.calibration.fixed_d {
            space.check(d).context("calibration.fixed_d")?;
        }
        let spec = parse_spec(&config.spec.text).with_context(|| format!("invalid spec {:?}", config.spec.text))?;
        if !spec.is_certifiable() {
            bail!(
                "spec {:?} is outside the certifiable fragment (eventually or always over one predicate)",
                config.spec.text
            );
        }
        let norm = WeightedNorm::new(config.spec.norm_weights.clone()).context("spec.norm_weights")?;
        if norm.dim() != nominal.state_dim() {
            bail!("spec.norm_weights has {} entries but the model state has {}", norm.dim(), nominal.state_dim());
        }
        let measure = build_measure(&spec, &norm).context("building the robustness measure")?;
        if let Some(p) = spec.predicates().iter().find(|p| p.min_dim() > nominal.state_dim()) {
            bail!("predicate {p} reads beyond the {}-dimensional state", nominal.state_dim());
        }
        Ok(Self { config, nominal, true_model, controller, scenario, space, spec, norm, measure })
    }

    /// State coordinate shown in trace plots: the one the spec reads, else the first.
    pub fn plotted_coordinate(&self) -> usize {
        self.spec.predicates().iter().find_map(|p| p.coordinate_index()).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_with(edit: impl FnOnce(&mut CampaignConfig)) -> Result<Campaign> {
        let mut c = CampaignConfig::preset("default").unwrap();
        edit(&mut c);
        Campaign::resolve(c)
    }

    #[test]
    fn default_preset_resolves() {
        let c = resolve_with(|_| {}).unwrap();
        assert_eq!(c.plotted_coordinate(), 2);
        assert_eq!(c.measure.lipschitz(), 1.0);
    }

    #[test]
    fn rejections() {
        assert!(resolve_with(|c| c.models.nominal = "quadrotor".into()).is_err());
        assert!(resolve_with(|c| c.models.preset = "mild".into()).is_err());
        assert!(resolve_with(|c| c.spec.text = "x[0] until x[1]".into()).is_err());
        assert!(resolve_with(|c| c.spec.text = "(x[0] >= 0) until (x[1] >= 0)".into()).is_err());
        assert!(resolve_with(|c| c.spec.norm_weights = vec![1.0; 3]).is_err());
        assert!(resolve_with(|c| c.scenario.dt = 0.03).is_err());
        assert!(resolve_with(|c| c.calibration.lambda = 0.0).is_err());
        assert!(resolve_with(|c| c.spec.text = "always (x[9] <= 1)".into()).is_err());
    }
}
