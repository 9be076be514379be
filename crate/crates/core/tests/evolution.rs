use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use swarmcode::evaluation::evaluate_generation;
use swarmcode::evolution::{allocate_offspring, elite_count, make_offspring, step_generation, EvolutionState};
use swarmcode::genome::{random_genome, GenomeId, IdAllocator};
use swarmcode::rng::from_seed;
use swarmcode::scenario::ScenarioConfig;
use swarmcode::speciation::{assign_species, Species, SpeciesId};

fn tiny() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(
        r#"
        seed = 11
        generations = 4
        population_size = 12
        swarm_size = 6
        checkpoint_interval = 2
        [evaluation]
        trials = 1
        [sim]
        ticks = 80
        [env.arena]
        width = 8.0
        height = 8.0
        obstacles = 1
        [env.packages]
        individual = 5
        "#,
    )
    .unwrap()
}

fn species_with(totals: &[f64]) -> Vec<Species> {
    let g = random_genome(&Default::default(), &mut IdAllocator::default(), &mut from_seed(0)).unwrap();
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

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

proptest! {
    #[test]
    fn quotas_sum_to_slots(
        totals in prop::collection::vec(0.0f64..1e4, 1..20),
        slots in 0usize..200,
    ) {
        let q = allocate_offspring(&species_with(&totals), slots);
        prop_assert_eq!(q.values().sum::<usize>(), slots);
        prop_assert_eq!(q.len(), totals.len());
    }

    #[test]
    fn quotas_are_within_one_of_exact_share(
        totals in prop::collection::vec(0.01f64..1e4, 1..20),
        slots in 1usize..200,
    ) {
        let q = allocate_offspring(&species_with(&totals), slots);
        let sum: f64 = totals.iter().sum();
        for (i, t) in totals.iter().enumerate() {
            let exact = slots as f64 * t / sum;
            let got = q[&SpeciesId(i as u32)] as f64;
            prop_assert!(got >= exact.floor() && got <= exact.floor() + 1.0, "{got} vs {exact}");
        }
    }

    #[test]
    fn elite_count_matches_enumeration(size in 1usize..500, cap in 0usize..10) {
        // Largest k in 1..=cap with 5(k - 1) <= size, else 1.
        let mut expect = 1;
        for k in 1..=cap {
            if 5 * (k - 1) <= size {
                expect = k;
            }
        }
        prop_assert_eq!(elite_count(size, cap).unwrap(), expect);
    }
}

#[test]
fn crossover_rates_match_configuration() {
    let cfg = tiny();
    let mut rng = from_seed(21);
    let mut ids = IdAllocator::default();
    let p1 = random_genome(&cfg.genome, &mut ids, &mut rng).unwrap();
    let p2 = random_genome(&cfg.genome, &mut ids, &mut rng).unwrap();
    let n = 20_000;
    let rate = |same: bool, rng: &mut _, ids: &mut _| {
        let hits = (0..n)
            .filter(|_| make_offspring(&p1, &p2, same, &cfg, ids, rng).unwrap().1)
            .count();
        hits as f64 / n as f64
    };
    let intra = rate(true, &mut rng, &mut ids);
    let inter = rate(false, &mut rng, &mut ids);
    assert!((intra - 0.70).abs() <= 0.02, "{intra}");
    assert!((inter - 0.025).abs() <= 0.005, "{inter}");
}

#[test]
fn elite_count_rejects_empty_species() {
    assert!(elite_count(0, 3).is_err());
}

#[test]
fn generation_keeps_population_size_and_census() {
    let cfg = tiny();
    let mut state = EvolutionState::initial(&cfg).unwrap();
    for _ in 0..3 {
        let (next, report) = step_generation(&state, &cfg).unwrap();
        assert_eq!(next.population.len(), cfg.population_size);
        assert_eq!(report.census.values().sum::<usize>(), cfg.population_size);
        assert_eq!(report.best.swarm_size(), cfg.swarm_size);
        let ids: BTreeSet<GenomeId> = next.population.iter().map(|g| g.id).collect();
        assert_eq!(ids.len(), cfg.population_size, "ids stay unique");
        for g in &next.population {
            g.validate(&cfg.genome).unwrap();
        }
        state = next;
    }
}

#[test]
fn elites_survive_unchanged() {
    let cfg = tiny();
    let (state, _) = step_generation(&EvolutionState::initial(&cfg).unwrap(), &cfg).unwrap();
    let (next, _) = step_generation(&state, &cfg).unwrap();

    // Recompute this generation's evaluation to rank every member.
    let mut partition = assign_species(&state.population, &state.partition, &cfg.compatibility()).unwrap();
    let evals = evaluate_generation(&state.population, &mut partition, &cfg, state.generation, &state.history).unwrap();
    assert_eq!(partition, next.partition);
    let quotas = allocate_offspring(&partition.species, cfg.population_size);

    let before: BTreeMap<GenomeId, _> = state.population.iter().map(|g| (g.id, g)).collect();
    let carried: BTreeSet<GenomeId> = next
        .population
        .iter()
        .filter(|g| before.get(&g.id).is_some_and(|old| *old == *g))
        .map(|g| g.id)
        .collect();
    let reused = next.population.iter().filter(|g| before.contains_key(&g.id)).count();
    assert_eq!(reused, carried.len(), "a surviving id always keeps every gene");

    let mut expected = BTreeSet::new();
    for s in &partition.species {
        let mut ranked = s.members.clone();
        ranked.sort_by(|a, b| {
            evals[b].record.smoothed.total_cmp(&evals[a].record.smoothed).then(a.cmp(b))
        });
        let n = elite_count(s.members.len(), cfg.evolution.elite_cap).unwrap().min(quotas[&s.id]);
        expected.extend(ranked.into_iter().take(n));
    }
    assert!(!expected.is_empty());
    assert_eq!(carried, expected);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = tiny();
    let run = |threads: usize| {
        pool(threads).install(|| {
            let mut state = EvolutionState::initial(&cfg).unwrap();
            let mut lines = Vec::new();
            for _ in 0..3 {
                let (next, report) = step_generation(&state, &cfg).unwrap();
                lines.push(serde_json::to_string(&report).unwrap());
                state = next;
            }
            (lines, serde_json::to_string(&state).unwrap())
        })
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(4));
}

#[test]
fn evaluation_ignores_population_order() {
    let cfg = tiny();
    let state = EvolutionState::initial(&cfg).unwrap();
    let compat = cfg.compatibility();
    let partition = assign_species(&state.population, &state.partition, &compat).unwrap();

    let mut p1 = partition.clone();
    let a = evaluate_generation(&state.population, &mut p1, &cfg, 0, &state.history).unwrap();
    let mut shuffled = state.population.clone();
    shuffled.reverse();
    shuffled.rotate_left(5);
    let mut p2 = partition.clone();
    let b = evaluate_generation(&shuffled, &mut p2, &cfg, 0, &state.history).unwrap();

    assert_eq!(a.len(), b.len());
    for (id, ea) in &a {
        let eb = &b[id];
        assert_eq!(ea.record, eb.record);
        assert_eq!(ea.composition, eb.composition);
    }
    assert_eq!(p1, p2);
}
