//! Scenario files: one TOML document resolving every tunable of a run.
//!
//! Omitted keys take their defaults, unknown keys are rejected, and
//! [`ScenarioConfig::diagnostics`] reports every violated bound with its
//! path in the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvaluationConfig;
use crate::evolution::EvolutionConfig;
use crate::fitness::{BudgetModel, FitnessWeights, Objective};
use crate::genome::{GenomeConfig, MutationConfig};
use crate::sim2d::{generate_environment, EnvConfig, SimConfig};
use crate::speciation::{Compatibility, DistanceWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeciationConfig {
    pub delta: f64,
    pub weights: DistanceWeights,
}

impl Default for SpeciationConfig {
    fn default() -> Self {
        Self {
            delta: 0.4,
            weights: DistanceWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub generations: u32,
    pub population_size: usize,
    /// Robots deployed per trial, independent of the population size.
    pub swarm_size: usize,
    pub objective: Objective,
    /// Generations between checkpoints.
    pub checkpoint_interval: u32,
    pub genome: GenomeConfig,
    pub mutation: MutationConfig,
    pub speciation: SpeciationConfig,
    pub fitness: FitnessWeights,
    pub budget: BudgetModel,
    pub evaluation: EvaluationConfig,
    pub evolution: EvolutionConfig,
    pub sim: SimConfig,
    pub env: EnvConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            generations: 500,
            population_size: 50,
            swarm_size: 20,
            objective: Objective::Fitness,
            checkpoint_interval: 25,
            genome: GenomeConfig::default(),
            mutation: MutationConfig::default(),
            speciation: SpeciationConfig::default(),
            fitness: FitnessWeights::default(),
            budget: BudgetModel::default(),
            evaluation: EvaluationConfig::default(),
            evolution: EvolutionConfig::default(),
            sim: SimConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

/// Result of checking a scenario: hard errors and advisory warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    fn absorb(&mut self, r: Result<()>) {
        match r {
            Ok(()) => {}
            Err(Error::Invalid(v)) => self.errors.extend(v),
            Err(e) => self.errors.push(e.to_string()),
        }
    }
}

/// Command-line or environment overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub generations: Option<u32>,
    pub objective: Option<Objective>,
    pub budget: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            what: "scenario".into(),
            message: e.to_string(),
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            what: format!("scenario {}", path.display()),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "scenario".into(),
            message: e.to_string(),
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(g) = o.generations {
            self.generations = g;
        }
        if let Some(obj) = o.objective {
            self.objective = obj;
        }
        if let Some(b) = o.budget {
            self.budget.budget = Some(b);
        }
    }

    pub fn compatibility(&self) -> Compatibility {
        Compatibility {
            weights: self.speciation.weights.clone(),
            radius_span: self.genome.radius_span(),
            delta: self.speciation.delta,
        }
    }

    pub fn diagnostics(&self) -> Diagnostics {
        let mut d = Diagnostics::default();
        if self.population_size < 2 {
            d.errors.push("population_size must be >= 2".into());
        }
        if self.swarm_size < 1 {
            d.errors.push("swarm_size must be >= 1".into());
        }
        if self.checkpoint_interval == 0 {
            d.errors.push("checkpoint_interval must be >= 1".into());
        }
        if !(self.speciation.delta > 0.0) {
            d.errors.push("speciation.delta must be positive".into());
        }
        d.absorb(self.genome.validate());
        d.absorb(self.mutation.validate());
        d.absorb(self.speciation.weights.validate());
        d.absorb(self.budget.validate());
        d.absorb(self.evaluation.validate());
        d.absorb(self.evolution.validate());
        d.absorb(self.env.validate());
        if self.genome.validate().is_ok() {
            d.absorb(self.sim.validate(self.genome.radius_min));
        }
        if !d.errors.is_empty() {
            return d;
        }

        // Feasibility: some legal chassis must fit some individual package.
        let [lo, hi] = self.sim.diameter_band;
        let [pr_lo, pr_hi] = self.env.packages.radius;
        if self.env.packages.individual > 0
            && (self.genome.radius_max < lo * pr_lo || self.genome.radius_min > hi * pr_hi)
        {
            d.errors.push(format!(
                "genome.radius_min/radius_max: no chassis radius in [{}, {}] is compatible with package radii [{pr_lo}, {pr_hi}] under sim.diameter_band",
                self.genome.radius_min, self.genome.radius_max
            ));
        }
        let a = &self.env.arena;
        if self.sim.pickup_range > a.width.min(a.height) / 2.0 {
            d.errors
                .push("sim.pickup_range exceeds half the arena's shorter side".into());
        }
        if let Err(e) = generate_environment(
            &self.env,
            &self.sim,
            self.swarm_size,
            self.genome.radius_max,
            self.seed,
        ) {
            d.errors.push(format!("env: {e}"));
        }

        let max_partners = self.population_size - 1;
        if self.swarm_size < 1 + max_partners {
            d.warnings.push(format!(
                "swarm_size = {} is below 1 + the largest possible partner count ({max_partners}); focal swarms keep only the {} partners closest by tag",
                self.swarm_size,
                self.swarm_size.saturating_sub(1)
            ));
        }
        if self.budget.species_fee > 0.0 && self.budget.budget.is_none() && self.objective != Objective::Roi {
            d.warnings
                .push("budget.species_fee is set but there is no budget and the objective is not roi, so the fee has no effect".into());
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.diagnostics();
        if d.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(d.errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let s = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(s, ScenarioConfig::default());
        assert_eq!(s.speciation.delta, 0.4);
        assert_eq!(s.evaluation.ema_alpha, 0.6);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut s = ScenarioConfig::default();
        s.budget.budget = Some(3000.0);
        s.budget.species_fee = 500.0;
        let text = s.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ScenarioConfig::from_toml_str("[genome]\nradius_mni = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("radius_mni"), "{e}");
    }

    #[test]
    fn inverted_radius_bounds_name_the_field() {
        let s = ScenarioConfig::from_toml_str("[genome]\nradius_min = 0.6\nradius_max = 0.2\n").unwrap();
        let d = s.diagnostics();
        assert!(!d.is_valid());
        assert!(d.errors.iter().any(|e| e.contains("radius_min")), "{:?}", d.errors);
    }

    #[test]
    fn small_swarm_warns_about_partner_cap() {
        let s = ScenarioConfig {
            population_size: 30,
            swarm_size: 10,
            ..ScenarioConfig::default()
        };
        let d = s.diagnostics();
        assert!(d.is_valid(), "{:?}", d.errors);
        assert!(d.warnings.iter().any(|w| w.contains("swarm_size")));
    }

    #[test]
    fn overrides_replace_fields() {
        let mut s = ScenarioConfig::default();
        s.apply(&Overrides {
            seed: Some(9),
            generations: Some(4),
            objective: Some(Objective::Roi),
            budget: Some(2500.0),
        });
        assert_eq!((s.seed, s.generations, s.objective), (9, 4, Objective::Roi));
        assert_eq!(s.budget.budget, Some(2500.0));
    }

    #[test]
    fn crowded_arena_is_infeasible() {
        let mut s = ScenarioConfig::default();
        s.swarm_size = 2000;
        let d = s.diagnostics();
        assert!(d.errors.iter().any(|e| e.starts_with("env:")), "{:?}", d.errors);
    }
}
