//! Cooperative co-evolution of heterogeneous robot swarms.
//!
//! Each individual carries a speciation tag, a selectivity gene, a dominance
//! gene, a flattened behavior tree, and hardware genes. A generation runs
//! three phases:
//!
//! 1. [`speciation`] partitions the population around species prototypes.
//! 2. [`evaluation`] assembles swarms from the focal individual and the
//!    elites of its tag-selected partner species, runs matched focal and
//!    baseline trials in the [`sim2d`] foraging world, and gates fitness on
//!    the focal individual's marginal contribution.
//! 3. [`evolution`] applies per-species elitism, fitness-proportional
//!    offspring quotas and compatibility-constrained tournament mating.
//!
//! [`runner`] drives whole experiments with checkpointing and line-delimited
//! generation logs.

pub mod btvm;
pub mod error;
pub mod evaluation;
pub mod evolution;
pub mod fitness;
pub mod genome;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod sim2d;
pub mod speciation;

pub use error::{Error, Result};
pub use genome::{Genome, GenomeId};
pub use scenario::ScenarioConfig;
pub use speciation::{SpeciesId, SpeciesPartition};
