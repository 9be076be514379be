use std::sync::Arc;

use swarmcode::btvm::seed_templates;
use swarmcode::genome::{random_genome, BehaviorGenes, EndEffector, Genome, GenomeConfig, IdAllocator, Tier};
use swarmcode::rng::from_seed;
use swarmcode::sim2d::{generate_environment, run_trial, EnvConfig, SimConfig, TraceRecord, World};

fn forager(effector: EndEffector) -> Genome {
    let cfg = GenomeConfig::default();
    let mut g = random_genome(&cfg, &mut IdAllocator::default(), &mut from_seed(1)).unwrap();
    g.behavior = BehaviorGenes::from_tree(&seed_templates()[0], cfg.bt_max_len);
    g.hardware.radius = 0.2;
    g.hardware.motor_tier = Tier::new(3).unwrap();
    g.hardware.torque_setpoint = 1.0;
    g.hardware.battery_setpoint = 1.0;
    g.hardware.end_effector = effector;
    g
}

fn mixed_team(ticks: u32, seed: u64) -> World {
    let (s, p) = (forager(EndEffector::Suction), forager(EndEffector::Pincher));
    let sim = SimConfig { ticks, ..SimConfig::default() };
    let mut world = generate_environment(&EnvConfig::default(), &sim, 10, 0.5, seed).unwrap();
    let (ps, pp) = (Arc::new(s.behavior.compile()), Arc::new(p.behavior.compile()));
    let slots: Vec<_> = (0..10)
        .map(|i| if i % 2 == 0 { (&s, ps.clone()) } else { (&p, pp.clone()) })
        .collect();
    world.insert_robots(&slots);
    world
}

#[test]
fn hand_built_foragers_deliver() {
    let stats = run_trial(mixed_team(600, 11), None);
    assert!(stats.delivered >= 8, "{stats:?}");
    assert!(stats.picked >= stats.delivered);
}

#[test]
fn trace_sees_initial_state_and_every_tick() {
    let mut ticks = Vec::new();
    let mut f = |t: &TraceRecord| {
        assert_eq!(t.robots.len(), 10);
        assert_eq!(t.packages.len(), 16);
        ticks.push(t.tick);
    };
    run_trial(mixed_team(50, 3), Some(&mut f));
    assert_eq!(ticks, (0..=50).collect::<Vec<_>>());
}

#[test]
fn matched_seeds_share_layouts() {
    let sim = SimConfig::default();
    let env = EnvConfig::default();
    let a = generate_environment(&env, &sim, 10, 0.5, 42).unwrap();
    let b = generate_environment(&env, &sim, 10, 0.5, 42).unwrap();
    let c = generate_environment(&env, &sim, 10, 0.5, 43).unwrap();
    assert_eq!(a.packages, b.packages);
    assert_eq!(a.obstacles, b.obstacles);
    assert_ne!(a.packages, c.packages);
}

#[test]
fn trials_replay_exactly() {
    let a = run_trial(mixed_team(300, 5), None);
    let b = run_trial(mixed_team(300, 5), None);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
