//! Marginal-contribution evaluation.
//!
//! For every individual the partner species are chosen by tag distance
//! against the individual's selectivity, one elite is drawn from each, and
//! two swarms of `swarm_size` robots are assembled: the focal swarm (focal
//! individual plus partner elites) and the baseline swarm (partner elites
//! only). Both run the same trial environments. The individual keeps its
//! budget-penalized fitness only when the focal swarm beats the baseline.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::btvm::Program;
use crate::error::{Error, Result};
use crate::evolution::elite_count;
use crate::fitness::{
    budget_penalty, ema_smooth, gated_fitness, raw_fitness, roi_fitness, swarm_cost,
    FitnessRecord, Objective,
};
use crate::genome::{Genome, GenomeId};
use crate::rng::{self, label};
use crate::scenario::ScenarioConfig;
use crate::sim2d::{generate_environment, run_trial, TrialStats};
use crate::speciation::{select_partners, tag_distance, SpeciesId, SpeciesPartition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Trials per swarm (the focal and baseline sets each run this many).
    pub trials: u32,
    pub marginal_penalty: f64,
    /// EMA weight on the previous smoothed value.
    pub ema_alpha: f64,
    /// Divide each member's fitness by its species size when totalling
    /// species fitness for offspring allocation.
    pub fitness_sharing: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            trials: 3,
            marginal_penalty: 0.25,
            ema_alpha: 0.6,
            fitness_sharing: true,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.trials == 0 {
            p.push("evaluation.trials must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.marginal_penalty) {
            p.push("evaluation.marginal_penalty outside [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            p.push("evaluation.ema_alpha outside [0, 1)".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}

/// A deployed swarm: the distinct participating genomes and, for each of
/// the `S` robot slots, the index of the participant it clones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmComposition {
    /// Focal individual first when present, then partner elites.
    pub participants: Vec<Genome>,
    pub slots: Vec<usize>,
}

impl SwarmComposition {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Robots per participant.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.participants.len()];
        for &s in &self.slots {
            c[s] += 1;
        }
        c
    }

    pub fn cost(&self, cfg: &ScenarioConfig) -> f64 {
        let counts = self.counts();
        let pairs: Vec<(&Genome, usize)> = self
            .participants
            .iter()
            .zip(counts)
            .filter(|(_, n)| *n > 0)
            .collect();
        let species = pairs.len();
        swarm_cost(&pairs, species, &cfg.budget)
    }
}

fn fill_slots<R: Rng + ?Sized>(participants: &[Genome], s: usize, rng: &mut R) -> Vec<usize> {
    let k = participants.len();
    let mut slots: Vec<usize> = (0..k).collect();
    let free = s - k;
    match WeightedIndex::new(participants.iter().map(|g| g.dominance)) {
        Ok(dist) => slots.extend((0..free).map(|_| dist.sample(rng))),
        Err(_) => slots.extend((0..free).map(|_| rng.random_range(0..k))),
    }
    slots
}

/// Focal swarm of `s` robots. Every participant gets one guaranteed slot;
/// free slots are drawn in proportion to dominance (uniformly when all
/// dominance values are zero).
pub fn assemble_swarm<R: Rng + ?Sized>(
    focal: &Genome,
    partner_elites: &[Genome],
    s: usize,
    rng: &mut R,
) -> Result<SwarmComposition> {
    let k = 1 + partner_elites.len();
    if s < k {
        return Err(Error::Plan(format!(
            "swarm size {s} cannot seat the focal individual and {} partners",
            partner_elites.len()
        )));
    }
    let mut participants = Vec::with_capacity(k);
    participants.push(focal.clone());
    participants.extend(partner_elites.iter().cloned());
    let slots = fill_slots(&participants, s, rng);
    Ok(SwarmComposition {
        participants,
        slots,
    })
}

/// Baseline swarm: the focal individual's slots are resampled from the
/// partner elites. Empty when there are no partners.
pub fn assemble_baseline<R: Rng + ?Sized>(
    partner_elites: &[Genome],
    s: usize,
    rng: &mut R,
) -> Result<SwarmComposition> {
    if partner_elites.is_empty() {
        return Ok(SwarmComposition {
            participants: Vec::new(),
            slots: Vec::new(),
        });
    }
    if s < partner_elites.len() {
        return Err(Error::Plan(format!(
            "swarm size {s} cannot seat {} partners",
            partner_elites.len()
        )));
    }
    let participants = partner_elites.to_vec();
    let slots = fill_slots(&participants, s, rng);
    Ok(SwarmComposition {
        participants,
        slots,
    })
}

/// Seed of trial `trial` for `genome` in `generation`. Focal and baseline
/// sets share it.
pub fn trial_seed(master: u64, generation: u32, genome: GenomeId, trial: u32) -> u64 {
    rng::derive_seed(
        master,
        &[label::TRIAL, u64::from(generation), genome.0, u64::from(trial)],
    )
}

/// Run one trial of `comp` in the environment generated from `seed`.
pub fn simulate(comp: &SwarmComposition, cfg: &ScenarioConfig, seed: u64) -> Result<TrialStats> {
    let mut world = generate_environment(
        &cfg.env,
        &cfg.sim,
        cfg.swarm_size,
        cfg.genome.radius_max,
        seed,
    )?;
    let programs: Vec<Arc<Program>> = comp
        .participants
        .iter()
        .map(|g| Arc::new(g.behavior.compile()))
        .collect();
    let slots: Vec<(&Genome, Arc<Program>)> = comp
        .slots
        .iter()
        .map(|&p| (&comp.participants[p], Arc::clone(&programs[p])))
        .collect();
    world.insert_robots(&slots);
    Ok(run_trial(world, None))
}

/// Mean over focal trials of the quantities reported for a team.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeamStats {
    pub delivered: f64,
    pub collab_delivered: f64,
    pub picked: f64,
    /// Share of battery capacity spent, in percent.
    pub energy_used: f64,
}

impl TeamStats {
    fn from_trials(trials: &[TrialStats]) -> Self {
        let n = trials.len().max(1) as f64;
        let sum = |f: &dyn Fn(&TrialStats) -> f64| trials.iter().map(f).sum::<f64>() / n;
        Self {
            delivered: sum(&|t| f64::from(t.delivered)),
            collab_delivered: sum(&|t| f64::from(t.collab_delivered)),
            picked: sum(&|t| f64::from(t.picked + t.collab_picked)),
            energy_used: sum(&|t| 100.0 * (1.0 - t.energy_avg_final)),
        }
    }

    pub fn total_delivered(&self) -> f64 {
        self.delivered + self.collab_delivered
    }
}

/// Everything learned about one individual in one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub genome: GenomeId,
    pub species: SpeciesId,
    pub partners: Vec<SpeciesId>,
    pub record: FitnessRecord,
    pub focal_mean: f64,
    pub baseline_mean: f64,
    pub composition: SwarmComposition,
    pub team_cost: f64,
    pub team: TeamStats,
}

/// Top `elite_count` members of `species` by previous smoothed fitness
/// (members without history rank last), ties broken by id.
pub fn current_elites(
    members: &[GenomeId],
    history: &BTreeMap<GenomeId, f64>,
    elite_cap: usize,
) -> Result<Vec<GenomeId>> {
    let n = elite_count(members.len(), elite_cap)?;
    let mut ranked: Vec<GenomeId> = members.to_vec();
    ranked.sort_by(|a, b| {
        let fa = history.get(a).copied().unwrap_or(f64::NEG_INFINITY);
        let fb = history.get(b).copied().unwrap_or(f64::NEG_INFINITY);
        fb.total_cmp(&fa).then(a.cmp(b))
    });
    ranked.truncate(n);
    Ok(ranked)
}

/// Shared inputs of one generation's evaluation.
pub struct GenerationContext<'a> {
    pub cfg: &'a ScenarioConfig,
    pub generation: u32,
    pub population: &'a BTreeMap<GenomeId, &'a Genome>,
    pub partition: &'a SpeciesPartition,
    /// Smoothed fitness from earlier generations, by genome id.
    pub history: &'a BTreeMap<GenomeId, f64>,
}

impl GenerationContext<'_> {
    /// Partner species of `focal`, closest tags first, capped at
    /// `swarm_size - 1`, then one elite per partner drawn uniformly.
    fn partner_elites<R: Rng + ?Sized>(&self, focal: &Genome, rng: &mut R) -> Result<Vec<Genome>> {
        let gamma = self.cfg.speciation.weights.gamma;
        let mut partners: Vec<(f64, SpeciesId)> = select_partners(focal, self.partition, gamma)?
            .into_iter()
            .map(|id| {
                let s = self.partition.get(id).expect("partner species exists");
                tag_distance(&focal.tag, &s.prototype.tag, gamma).map(|d| (d, id))
            })
            .collect::<Result<_>>()?;
        partners.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        partners.truncate(self.cfg.swarm_size.saturating_sub(1));
        partners.sort_by_key(|p| p.1);

        let mut elites = Vec::with_capacity(partners.len());
        for (_, id) in partners {
            let s = self.partition.get(id).expect("partner species exists");
            let pool = current_elites(&s.members, self.history, self.cfg.evolution.elite_cap)?;
            let pick = pool[rng.random_range(0..pool.len())];
            elites.push((*self.population[&pick]).clone());
        }
        Ok(elites)
    }

    pub fn evaluate(&self, focal: &Genome) -> Result<Evaluation> {
        let cfg = self.cfg;
        let mut rng = rng::stream(
            cfg.seed,
            &[label::ASSEMBLE, u64::from(self.generation), focal.id.0],
        );
        let species = self.partition.species_of(focal.id).ok_or_else(|| {
            Error::Plan(format!("genome {} has no species", focal.id))
        })?;
        let elites = self.partner_elites(focal, &mut rng)?;
        let partners = elites
            .iter()
            .map(|g| self.partition.species_of(g.id).expect("elite has species"))
            .collect();
        let focal_comp = assemble_swarm(focal, &elites, cfg.swarm_size, &mut rng)?;
        let baseline_comp = assemble_baseline(&elites, cfg.swarm_size, &mut rng)?;

        let mut focal_trials = Vec::with_capacity(cfg.evaluation.trials as usize);
        let mut baseline_scores = Vec::with_capacity(cfg.evaluation.trials as usize);
        for t in 0..cfg.evaluation.trials {
            let seed = trial_seed(cfg.seed, self.generation, focal.id, t);
            let wrap = |e: Error| Error::Evaluation {
                genome_id: focal.id.0,
                seed,
                message: e.to_string(),
            };
            focal_trials.push(simulate(&focal_comp, cfg, seed).map_err(wrap)?);
            if !baseline_comp.is_empty() {
                let stats = simulate(&baseline_comp, cfg, seed).map_err(wrap)?;
                baseline_scores.push(raw_fitness(&stats, &cfg.fitness));
            }
        }

        let n = f64::from(cfg.evaluation.trials);
        let focal_mean = focal_trials
            .iter()
            .map(|s| raw_fitness(s, &cfg.fitness))
            .sum::<f64>()
            / n;
        let baseline_mean = if baseline_scores.is_empty() {
            0.0
        } else {
            baseline_scores.iter().sum::<f64>() / n
        };

        let team_cost = focal_comp.cost(cfg);
        let penalized = focal_mean * budget_penalty(team_cost, &cfg.budget);
        let raw = match cfg.objective {
            Objective::Fitness => penalized,
            Objective::Roi => roi_fitness(penalized, team_cost),
        };
        let fitness = gated_fitness(
            focal_mean,
            baseline_mean,
            raw,
            cfg.evaluation.marginal_penalty,
        );
        let smoothed = ema_smooth(
            self.history.get(&focal.id).copied(),
            fitness,
            cfg.evaluation.ema_alpha,
        );
        Ok(Evaluation {
            genome: focal.id,
            species,
            partners,
            record: FitnessRecord {
                raw,
                fitness,
                smoothed,
                marginal: focal_mean - baseline_mean,
                gated: focal_mean - baseline_mean <= 0.0,
            },
            focal_mean,
            baseline_mean,
            team_cost,
            team: TeamStats::from_trials(&focal_trials),
            composition: focal_comp,
        })
    }
}

/// Evaluate every individual (in parallel on the current rayon pool) and
/// refresh each species' total adjusted fitness. Results do not depend on
/// evaluation order or thread count.
pub fn evaluate_generation(
    population: &[Genome],
    partition: &mut SpeciesPartition,
    cfg: &ScenarioConfig,
    generation: u32,
    history: &BTreeMap<GenomeId, f64>,
) -> Result<BTreeMap<GenomeId, Evaluation>> {
    let by_id: BTreeMap<GenomeId, &Genome> = population.iter().map(|g| (g.id, g)).collect();
    let ctx = GenerationContext {
        cfg,
        generation,
        population: &by_id,
        partition,
        history,
    };
    let evals: Vec<Evaluation> = population
        .par_iter()
        .map(|g| ctx.evaluate(g))
        .collect::<Result<_>>()?;
    let evals: BTreeMap<GenomeId, Evaluation> = evals.into_iter().map(|e| (e.genome, e)).collect();

    for s in &mut partition.species {
        let size = s.members.len() as f64;
        s.total_adjusted_fitness = s
            .members
            .iter()
            .map(|m| {
                let f = evals[m].record.smoothed;
                if cfg.evaluation.fitness_sharing {
                    f / size
                } else {
                    f
                }
            })
            .sum();
    }
    Ok(evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{random_genome, GenomeConfig, IdAllocator};
    use crate::rng::from_seed;

    fn genomes(n: usize, seed: u64) -> Vec<Genome> {
        let cfg = GenomeConfig::default();
        let mut ids = IdAllocator::default();
        let mut rng = from_seed(seed);
        (0..n)
            .map(|_| random_genome(&cfg, &mut ids, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn lone_focal_fills_every_slot() {
        let g = &genomes(1, 1)[0];
        let c = assemble_swarm(g, &[], 7, &mut from_seed(0)).unwrap();
        assert_eq!(c.slots, vec![0; 7]);
    }

    #[test]
    fn every_participant_is_seated() {
        let mut gs = genomes(2, 2);
        gs[0].dominance = 0.5;
        gs[1].dominance = 0.5;
        let mut rng = from_seed(3);
        for _ in 0..1000 {
            let c = assemble_swarm(&gs[0], &gs[1..], 4, &mut rng).unwrap();
            assert_eq!(c.len(), 4);
            assert!(c.counts().iter().all(|&n| n >= 1));
        }
    }

    #[test]
    fn too_small_swarm_is_a_plan_error() {
        let gs = genomes(3, 4);
        let e = assemble_swarm(&gs[0], &gs[1..], 2, &mut from_seed(0)).unwrap_err();
        assert!(matches!(e, Error::Plan(_)));
    }

    #[test]
    fn zero_dominance_falls_back_to_uniform() {
        let mut gs = genomes(2, 5);
        gs[0].dominance = 0.0;
        gs[1].dominance = 0.0;
        let mut rng = from_seed(6);
        let c = assemble_swarm(&gs[0], &gs[1..], 2002, &mut rng).unwrap();
        let share = (c.counts()[0] - 1) as f64 / 2000.0;
        assert!((share - 0.5).abs() < 0.05, "{share}");
    }

    #[test]
    fn single_partner_baseline_is_homogeneous() {
        let gs = genomes(1, 7);
        let c = assemble_baseline(&gs, 9, &mut from_seed(1)).unwrap();
        assert_eq!(c.slots, vec![0; 9]);
        assert!(assemble_baseline(&[], 9, &mut from_seed(1)).unwrap().is_empty());
    }

    #[test]
    fn elites_rank_by_history_then_id() {
        let ids: Vec<GenomeId> = (0..10).map(GenomeId).collect();
        let mut h = BTreeMap::new();
        h.insert(GenomeId(4), 5.0);
        h.insert(GenomeId(7), 9.0);
        assert_eq!(
            current_elites(&ids, &h, 3).unwrap(),
            vec![GenomeId(7), GenomeId(4), GenomeId(0)]
        );
        assert_eq!(
            current_elites(&ids, &h, 3).unwrap().len(),
            elite_count(10, 3).unwrap()
        );
    }
}
