//! Reproduction: per-species elitism, offspring quotas by total adjusted
//! fitness, and tournament mating that prefers compatible partners.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_generation, Evaluation, SwarmComposition, TeamStats};
use crate::genome::{crossover, mutate, random_genome, Genome, GenomeId, IdAllocator};
use crate::rng::{self, label};
use crate::scenario::ScenarioConfig;
use crate::speciation::{assign_species, Compatibility, Species, SpeciesId, SpeciesPartition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Cap `E` on elites kept per species.
    pub elite_cap: usize,
    pub tournament_size: usize,
    pub max_partner_retries: usize,
    pub intra_crossover_p: f64,
    pub inter_crossover_p: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            elite_cap: 3,
            tournament_size: 3,
            max_partner_retries: 5,
            intra_crossover_p: 0.7,
            inter_crossover_p: 0.025,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.elite_cap == 0 {
            p.push("evolution.elite_cap must be >= 1".to_string());
        }
        if self.tournament_size == 0 {
            p.push("evolution.tournament_size must be >= 1".into());
        }
        for (name, v) in [
            ("intra_crossover_p", self.intra_crossover_p),
            ("inter_crossover_p", self.inter_crossover_p),
        ] {
            if !(0.0..=1.0).contains(&v) {
                p.push(format!("evolution.{name} outside [0, 1]"));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}

/// `max(1, min(E, floor(species_size / 5) + 1))`.
pub fn elite_count(species_size: usize, elite_cap: usize) -> Result<usize> {
    if species_size < 1 {
        return Err(Error::Domain("elite_count of an empty species".into()));
    }
    Ok(elite_cap.min(species_size / 5 + 1).max(1))
}

/// Largest-remainder apportionment of `slots` by each species' total
/// adjusted fitness. Equal remainders favor the lower species id. When every
/// total is zero the slots are spread evenly.
pub fn allocate_offspring(species: &[Species], slots: usize) -> BTreeMap<SpeciesId, usize> {
    let mut out: BTreeMap<SpeciesId, usize> = species.iter().map(|s| (s.id, 0)).collect();
    if species.is_empty() || slots == 0 {
        return out;
    }
    let weights: Vec<f64> = species
        .iter()
        .map(|s| s.total_adjusted_fitness.max(0.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let weights = if total > 0.0 {
        weights
    } else {
        vec![1.0; species.len()]
    };
    let total: f64 = weights.iter().sum();

    let mut assigned = 0;
    let mut remainders: Vec<(f64, SpeciesId)> = Vec::with_capacity(species.len());
    for (s, w) in species.iter().zip(&weights) {
        let exact = slots as f64 * w / total;
        let q = (exact.floor() as usize).min(slots - assigned);
        assigned += q;
        out.insert(s.id, q);
        remainders.push((exact - q as f64, s.id));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, id) in remainders.iter().cycle().take(slots - assigned) {
        *out.get_mut(id).expect("species present") += 1;
    }
    out
}

/// Best of `k` uniform draws (with replacement) from `pool`; equal fitness
/// goes to the lower id.
pub fn tournament<R: Rng + ?Sized>(
    pool: &[GenomeId],
    fitness: &BTreeMap<GenomeId, f64>,
    k: usize,
    rng: &mut R,
) -> GenomeId {
    let mut best: Option<(GenomeId, f64)> = None;
    for _ in 0..k.max(1) {
        let c = pool[rng.random_range(0..pool.len())];
        let f = fitness.get(&c).copied().unwrap_or(0.0);
        let better = match best {
            None => true,
            Some((b, bf)) => f > bf || (f == bf && c < b),
        };
        if better {
            best = Some((c, f));
        }
    }
    best.expect("non-empty tournament").0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParentChoice {
    pub first: GenomeId,
    pub second: GenomeId,
    /// Intra-species tournaments rejected for exceeding `delta`.
    pub rejected: usize,
    /// Second parent came from the population-wide tournament.
    pub global: bool,
}

/// First parent by tournament within `species`; the second by up to
/// `max_partner_retries` further tournaments there, accepted only when
/// strictly closer than `delta` to the first, else by one unconditional
/// tournament over the whole population.
pub fn select_parents<R: Rng + ?Sized>(
    species: &Species,
    population: &BTreeMap<GenomeId, &Genome>,
    fitness: &BTreeMap<GenomeId, f64>,
    compat: &Compatibility,
    cfg: &EvolutionConfig,
    rng: &mut R,
) -> Result<ParentChoice> {
    let k = cfg.tournament_size;
    let first = tournament(&species.members, fitness, k, rng);
    let mut rejected = 0;
    for _ in 0..cfg.max_partner_retries {
        let c = tournament(&species.members, fitness, k, rng);
        if compat.distance(population[&first], population[&c])? < compat.delta {
            return Ok(ParentChoice {
                first,
                second: c,
                rejected,
                global: false,
            });
        }
        rejected += 1;
    }
    let everyone: Vec<GenomeId> = population.keys().copied().collect();
    Ok(ParentChoice {
        first,
        second: tournament(&everyone, fitness, k, rng),
        rejected,
        global: true,
    })
}

/// Child of `p1` and `p2`: crossover with the intra- or inter-species
/// probability, otherwise a copy of `p1`; always mutated afterwards.
/// Returns whether crossover happened.
pub fn make_offspring<R: Rng + ?Sized>(
    p1: &Genome,
    p2: &Genome,
    same_species: bool,
    cfg: &ScenarioConfig,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<(Genome, bool)> {
    let p = if same_species {
        cfg.evolution.intra_crossover_p
    } else {
        cfg.evolution.inter_crossover_p
    };
    let crossed = rng.random_bool(p);
    let base = if crossed {
        crossover(p1, p2, cfg.genome.crossover, ids, rng)?
    } else {
        p1.clone()
    };
    Ok((mutate(&base, &cfg.mutation, &cfg.genome, ids, rng), crossed))
}

/// One robot type of a reported team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamMember {
    pub species: SpeciesId,
    pub count: usize,
    pub genome: Genome,
}

/// The best individual's evaluation-time swarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestTeam {
    pub focal: GenomeId,
    pub fitness: f64,
    pub raw: f64,
    pub team_cost: f64,
    pub species_count: usize,
    pub members: Vec<TeamMember>,
    pub stats: TeamStats,
}

impl BestTeam {
    fn from_evaluation(e: &Evaluation) -> Self {
        let SwarmComposition { participants, .. } = &e.composition;
        let counts = e.composition.counts();
        let species = std::iter::once(e.species).chain(e.partners.iter().copied());
        let members: Vec<TeamMember> = participants
            .iter()
            .zip(counts)
            .zip(species)
            .map(|((g, count), species)| TeamMember {
                species,
                count,
                genome: g.clone(),
            })
            .collect();
        let species_count = members
            .iter()
            .map(|m| m.species)
            .collect::<BTreeSet<_>>()
            .len();
        Self {
            focal: e.genome,
            fitness: e.record.smoothed,
            raw: e.record.raw,
            team_cost: e.team_cost,
            species_count,
            members,
            stats: e.team.clone(),
        }
    }

    pub fn swarm_size(&self) -> usize {
        self.members.iter().map(|m| m.count).sum()
    }
}

/// Highest smoothed fitness wins; equal scores go to the lower genome id.
pub fn best_team(evals: &BTreeMap<GenomeId, Evaluation>) -> Option<BestTeam> {
    evals
        .values()
        .fold(None::<&Evaluation>, |best, e| match best {
            Some(b) if b.record.smoothed >= e.record.smoothed => Some(b),
            _ => Some(e),
        })
        .map(BestTeam::from_evaluation)
}

/// Per-generation record written to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: u32,
    /// Species id to member count for the evaluated population.
    pub census: BTreeMap<SpeciesId, usize>,
    pub founded: Vec<SpeciesId>,
    pub extinct: Vec<SpeciesId>,
    pub mean_fitness: f64,
    pub max_fitness: f64,
    /// Individuals whose fitness was cut by the marginal penalty.
    pub gated: usize,
    pub best: BestTeam,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    /// Generations completed so far.
    pub generation: u32,
    pub population: Vec<Genome>,
    pub partition: SpeciesPartition,
    /// Smoothed fitness of current population members.
    pub history: BTreeMap<GenomeId, f64>,
    pub ids: IdAllocator,
}

impl EvolutionState {
    pub fn initial(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(cfg.seed, &[label::INIT]);
        let mut ids = IdAllocator::default();
        let population = (0..cfg.population_size)
            .map(|_| random_genome(&cfg.genome, &mut ids, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            generation: 0,
            population,
            partition: SpeciesPartition::default(),
            history: BTreeMap::new(),
            ids,
        })
    }
}

/// Speciate, evaluate, then breed the next population. On error the input
/// state is untouched.
pub fn step_generation(
    state: &EvolutionState,
    cfg: &ScenarioConfig,
) -> Result<(EvolutionState, GenerationReport)> {
    step_generation_with(state, cfg, &mut |_| {})
}

/// [`step_generation`], handing every evaluation of the generation to
/// `inspect` before breeding.
pub fn step_generation_with(
    state: &EvolutionState,
    cfg: &ScenarioConfig,
    inspect: &mut dyn FnMut(&BTreeMap<GenomeId, Evaluation>),
) -> Result<(EvolutionState, GenerationReport)> {
    let generation = state.generation;
    let compat = cfg.compatibility();
    let mut partition = assign_species(&state.population, &state.partition, &compat)?;
    let evals = evaluate_generation(
        &state.population,
        &mut partition,
        cfg,
        generation,
        &state.history,
    )?;
    inspect(&evals);
    let history: BTreeMap<GenomeId, f64> = evals
        .iter()
        .map(|(id, e)| (*id, e.record.smoothed))
        .collect();

    let population: BTreeMap<GenomeId, &Genome> =
        state.population.iter().map(|g| (g.id, g)).collect();
    let quotas = allocate_offspring(&partition.species, cfg.population_size);
    let mut rng = rng::stream(cfg.seed, &[label::MATING, u64::from(generation)]);
    let mut ids = state.ids.clone();
    let mut next = Vec::with_capacity(cfg.population_size);

    for s in &partition.species {
        let quota = quotas[&s.id];
        if quota == 0 {
            continue;
        }
        // Elites are carried inside the species' quota.
        let mut ranked = s.members.clone();
        ranked.sort_by(|a, b| history[b].total_cmp(&history[a]).then(a.cmp(b)));
        let n_elite = elite_count(s.members.len(), cfg.evolution.elite_cap)?.min(quota);
        next.extend(ranked[..n_elite].iter().map(|id| population[id].clone()));
        for _ in n_elite..quota {
            let pick = select_parents(s, &population, &history, &compat, &cfg.evolution, &mut rng)?;
            let same = partition.species_of(pick.second) == Some(s.id);
            let (child, _) = make_offspring(
                population[&pick.first],
                population[&pick.second],
                same,
                cfg,
                &mut ids,
                &mut rng,
            )?;
            next.push(child);
        }
    }

    let survivors: BTreeSet<GenomeId> = next.iter().map(|g| g.id).collect();
    let next_history = history
        .iter()
        .filter(|(id, _)| survivors.contains(id))
        .map(|(id, f)| (*id, *f))
        .collect();

    let before: BTreeSet<SpeciesId> = state.partition.species.iter().map(|s| s.id).collect();
    let after: BTreeSet<SpeciesId> = partition.species.iter().map(|s| s.id).collect();
    let fitness: Vec<f64> = evals.values().map(|e| e.record.smoothed).collect();
    let report = GenerationReport {
        generation,
        census: partition.census(),
        founded: after.difference(&before).copied().collect(),
        extinct: before.difference(&after).copied().collect(),
        mean_fitness: fitness.iter().sum::<f64>() / fitness.len() as f64,
        max_fitness: fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        gated: evals.values().filter(|e| e.record.gated).count(),
        best: best_team(&evals).expect("non-empty population"),
    };

    let state = EvolutionState {
        generation: generation + 1,
        population: next,
        partition,
        history: next_history,
        ids,
    };
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn species(totals: &[f64]) -> Vec<Species> {
        let g = random_genome(
            &Default::default(),
            &mut IdAllocator::default(),
            &mut rng::from_seed(0),
        )
        .unwrap();
        totals
            .iter()
            .enumerate()
            .map(|(i, &t)| Species {
                id: SpeciesId(i as u32),
                prototype: g.clone(),
                members: vec![GenomeId(i as u64)],
                total_adjusted_fitness: t,
                age: 0,
            })
            .collect()
    }

    #[test]
    fn elite_count_examples() {
        assert_eq!(elite_count(1, 3).unwrap(), 1);
        assert_eq!(elite_count(25, 3).unwrap(), 3);
        assert_eq!(elite_count(25, 10).unwrap(), 6);
        assert!(elite_count(0, 3).is_err());
    }

    #[test]
    fn quota_examples() {
        let q = allocate_offspring(&species(&[5.0]), 9);
        assert_eq!(q.values().copied().collect::<Vec<_>>(), vec![9]);
        let q = allocate_offspring(&species(&[3.0, 1.0]), 4);
        assert_eq!(q.values().copied().collect::<Vec<_>>(), vec![3, 1]);
        let q = allocate_offspring(&species(&[1.0, 1.0, 1.0]), 10);
        assert_eq!(q.values().sum::<usize>(), 10);
        assert!(q.values().all(|&n| n == 3 || n == 4));
        let q = allocate_offspring(&species(&[0.0, 2.0]), 5);
        assert_eq!(q.values().copied().collect::<Vec<_>>(), vec![0, 5]);
        let q = allocate_offspring(&species(&[0.0, 0.0]), 5);
        assert_eq!(q.values().copied().collect::<Vec<_>>(), vec![3, 2]);
    }

    #[test]
    fn tournament_returns_the_fittest_entrant() {
        let pool: Vec<GenomeId> = (0..3).map(GenomeId).collect();
        let fit: BTreeMap<GenomeId, f64> = [(GenomeId(0), 1.0), (GenomeId(1), 5.0), (GenomeId(2), 3.0)]
            .into_iter()
            .collect();
        let mut rng = rng::from_seed(1);
        for _ in 0..100 {
            let w = tournament(&pool, &fit, 50, &mut rng);
            assert_eq!(w, GenomeId(1));
        }
    }
}
