//! Experiment configuration: one JSON document naming the game instance,
//! the scenario, and every tunable the pipelines read.

use std::path::PathBuf;

use mfgldp_core::ldp::TargetFunctional;
use mfgldp_core::model::{GameSpec, SystemicRiskSpec};
use serde::{Deserialize, Serialize};

/// Horizon used when the dissipative-drift regime flag is set.
pub const MONOTONE_HORIZON: f64 = 2.0;

/// The eight runnable pipelines. The command-line verb uses the same
/// kebab-case names as the JSON encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Solve the limiting decoupling field and write it with the limit moments.
    SolveMfg,
    /// Solve the finite-population Nash coefficient system per population size.
    SolveNplayer,
    /// Simulate equilibrium populations and fit the coupling-residual decay.
    Residuals,
    /// Scaled coupled-distance percentiles across population sizes.
    Chaos,
    /// Exceedance-decay fit of the coupled worst-node distance.
    LdpTail,
    /// Monte Carlo exponential averages against the rate oracle.
    LdpLaplace,
    /// Planner (cooperative) field plus its large-deviation comparison.
    Coop,
    /// Standing-assumption checks and a solvability probe, no simulation.
    Validate,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::SolveMfg => "solve-mfg",
            Scenario::SolveNplayer => "solve-nplayer",
            Scenario::Residuals => "residuals",
            Scenario::Chaos => "chaos",
            Scenario::LdpTail => "ldp-tail",
            Scenario::LdpLaplace => "ldp-laplace",
            Scenario::Coop => "coop",
            Scenario::Validate => "validate",
        }
    }
}

/// Which catalog functionals the Laplace scenario evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelector {
    #[default]
    All,
    ClippedQuadratic,
    SmoothedExceedance,
}

impl TargetSelector {
    pub fn targets(&self) -> Vec<TargetFunctional> {
        TargetFunctional::catalog()
            .into_iter()
            .filter(|t| match self {
                TargetSelector::All => true,
                TargetSelector::ClippedQuadratic => t.name() == "clipped_quadratic",
                TargetSelector::SmoothedExceedance => t.name() == "smoothed_exceedance",
            })
            .collect()
    }
}

/// Everything one run reads, echoed verbatim into the output manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Game instance, tagged by family.
    pub spec: GameSpec,
    /// Pipeline to run; the command-line verb overrides this field.
    pub scenario: Scenario,
    /// Population sizes, in the order the pipelines visit them.
    #[serde(rename = "Ns")]
    pub ns: Vec<usize>,
    /// Time-grid step count shared by solver and simulation grids.
    #[serde(rename = "K")]
    pub k: usize,
    /// Monte Carlo replications per population size.
    pub reps: usize,
    /// Root seed; every parallel stream derives from it deterministically.
    pub seed: u64,
    /// Exceedance thresholds; empty means calibrate upper quantiles at the
    /// smallest population size.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Catalog selector for the Laplace scenario.
    #[serde(default)]
    pub target: TargetSelector,
    /// Directory receiving the manifest, the CSVs, and the completion marker.
    pub out_dir: PathBuf,
    /// Reruns the chosen pipeline at horizon 2.0 after verifying that the
    /// drift is dissipative in the state.
    #[serde(default)]
    pub monotone_regime: bool,
}

/// The canonical inter-bank instance and experiment shape used by default.
pub fn default_scenario() -> ExperimentConfig {
    ExperimentConfig {
        spec: GameSpec::SystemicRisk(SystemicRiskSpec {
            a: 0.5,
            q: 0.8,
            eps: 1.0,
            c: 0.5,
            sigma: 1.0,
            T: 0.5,
            x0: 0.0,
        }),
        scenario: Scenario::Validate,
        ns: vec![8, 16, 32, 64, 128, 256],
        k: 200,
        reps: 200,
        seed: 7,
        deltas: Vec::new(),
        target: TargetSelector::All,
        out_dir: PathBuf::from("out"),
        monotone_regime: false,
    }
}

/// Returns the same instance with the horizon replaced.
pub fn spec_with_horizon(spec: GameSpec, t_end: f64) -> GameSpec {
    match spec {
        GameSpec::SystemicRisk(mut s) => {
            s.T = t_end;
            GameSpec::SystemicRisk(s)
        }
        GameSpec::GeneralLq(mut s) => {
            s.T = t_end;
            GameSpec::GeneralLq(s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json() {
        let config = default_scenario();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&config).unwrap());
    }

    #[test]
    fn default_spec_satisfies_the_family_restrictions() {
        let config = default_scenario();
        config.spec.validate().unwrap();
        if let GameSpec::SystemicRisk(s) = config.spec {
            assert!(s.q * s.q <= s.eps);
        } else {
            panic!("default family changed");
        }
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let mut doc: serde_json::Value =
            serde_json::to_value(default_scenario()).unwrap();
        doc.as_object_mut().unwrap().insert("typo".into(), serde_json::json!(1));
        let parsed: Result<ExperimentConfig, _> = serde_json::from_value(doc);
        assert!(parsed.is_err());
    }

    #[test]
    fn selector_filters_the_catalog_by_name() {
        assert_eq!(TargetSelector::All.targets().len(), 2);
        let clipped = TargetSelector::ClippedQuadratic.targets();
        assert_eq!(clipped.len(), 1);
        assert_eq!(clipped[0].name(), "clipped_quadratic");
        let smoothed = TargetSelector::SmoothedExceedance.targets();
        assert_eq!(smoothed.len(), 1);
        assert_eq!(smoothed[0].name(), "smoothed_exceedance");
    }

    #[test]
    fn horizon_override_touches_only_the_horizon() {
        let spec = default_scenario().spec;
        let shifted = spec_with_horizon(spec, MONOTONE_HORIZON);
        assert_eq!(shifted.horizon(), 2.0);
        assert_eq!(shifted.sigma(), spec.sigma());
        assert_eq!(shifted.x0(), spec.x0());
    }
}
