//! The heterogeneous genome: speciation tag, selectivity, dominance,
//! behavior-tree opcodes and hardware genes, plus initialization, mutation
//! and crossover.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::btvm::{self, Node, Opcode, Program};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenomeId(pub u64);

impl fmt::Display for GenomeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// Hands out fresh genome ids in creation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    pub fn next_id(&mut self) -> GenomeId {
        let id = GenomeId(self.next);
        self.next += 1;
        id
    }
}

/// Binary speciation tag used only for partner identification.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tag {
    bits: Vec<bool>,
}

impl Tag {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random_bool(0.5)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn hamming(&self, other: &Tag) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "tag lengths differ ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count())
    }
}

/// Hardware performance tier, 1 (budget) to 3 (premium).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Tier(u8);

impl Tier {
    pub const ALL: [Tier; 3] = [Tier(1), Tier(2), Tier(3)];

    pub fn new(level: u8) -> Option<Tier> {
        (1..=3).contains(&level).then_some(Tier(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    /// Zero-based index into per-tier tables.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }
}

impl TryFrom<u8> for Tier {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        Tier::new(v).ok_or_else(|| format!("tier must be 1, 2 or 3, got {v}"))
    }
}

impl From<Tier> for u8 {
    fn from(t: Tier) -> u8 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndEffector {
    Suction,
    Pincher,
}

impl EndEffector {
    pub fn index(self) -> usize {
        match self {
            EndEffector::Suction => 0,
            EndEffector::Pincher => 1,
        }
    }

    pub fn other(self) -> EndEffector {
        match self {
            EndEffector::Suction => EndEffector::Pincher,
            EndEffector::Pincher => EndEffector::Suction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareGenes {
    /// Chassis radius in meters.
    pub radius: f64,
    pub chassis_tier: Tier,
    pub battery_tier: Tier,
    pub motor_tier: Tier,
    pub end_effector: EndEffector,
    /// Fraction of the motor tier's maximum torque.
    pub torque_setpoint: f64,
    /// Fraction of the battery tier's maximum capacity.
    pub battery_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorGenes {
    pub opcodes: Vec<u8>,
}

impl BehaviorGenes {
    pub fn from_tree(tree: &Node, max_len: usize) -> Self {
        let flat: Vec<u8> = tree.flatten().into_iter().map(|o| o as u8).collect();
        Self {
            opcodes: btvm::canonicalize(&flat, max_len),
        }
    }

    pub fn compile(&self) -> Program {
        btvm::compile(&self.opcodes)
    }

    pub fn tree(&self) -> Node {
        btvm::decode(&self.opcodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub id: GenomeId,
    pub tag: Tag,
    pub selectivity: f64,
    pub dominance: f64,
    pub behavior: BehaviorGenes,
    pub hardware: HardwareGenes,
}

impl Genome {
    /// True when every gene value (everything except the id) matches.
    pub fn same_genes(&self, other: &Genome) -> bool {
        self.tag == other.tag
            && self.selectivity == other.selectivity
            && self.dominance == other.dominance
            && self.behavior == other.behavior
            && self.hardware == other.hardware
    }

    pub fn validate(&self, cfg: &GenomeConfig) -> Result<()> {
        let mut problems = Vec::new();
        if self.tag.len() != cfg.tag_len {
            problems.push(format!("tag length {} != {}", self.tag.len(), cfg.tag_len));
        }
        for (name, v) in [("selectivity", self.selectivity), ("dominance", self.dominance)] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.behavior.opcodes.len() != cfg.bt_max_len {
            problems.push(format!(
                "behavior length {} != {}",
                self.behavior.opcodes.len(),
                cfg.bt_max_len
            ));
        }
        if self.behavior.opcodes.iter().any(|&o| o >= Opcode::COUNT) {
            problems.push("behavior opcode outside [0, 13]".into());
        }
        if self.behavior.opcodes.iter().all(|&o| o == Opcode::Nop as u8) {
            problems.push("behavior is all NOP".into());
        }
        let hw = &self.hardware;
        if !(cfg.radius_min..=cfg.radius_max).contains(&hw.radius) {
            problems.push(format!(
                "radius {} outside [{}, {}]",
                hw.radius, cfg.radius_min, cfg.radius_max
            ));
        }
        for (name, v) in [
            ("torque_setpoint", hw.torque_setpoint),
            ("battery_setpoint", hw.battery_setpoint),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} {v} outside [0, 1]"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid genome {}: {}", self.id, problems.join("; "))))
        }
    }

    fn check_shape(&self, other: &Genome) -> Result<()> {
        if self.tag.len() != other.tag.len()
            || self.behavior.opcodes.len() != other.behavior.opcodes.len()
        {
            return Err(Error::Shape(format!(
                "genomes {} and {} differ in tag or behavior length",
                self.id, other.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossoverStyle {
    /// Every component copied whole from one parent chosen uniformly.
    #[default]
    Uniform,
    /// As `Uniform`, except continuous genes interpolate between parents at a
    /// uniformly drawn point.
    Blend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenomeConfig {
    pub tag_len: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub bt_max_len: usize,
    pub selectivity_init: [f64; 2],
    pub dominance_init: [f64; 2],
    /// Probability that each leaf of a seed template is redrawn at
    /// initialization.
    pub template_leaf_randomization: f64,
    pub crossover: CrossoverStyle,
}

impl Default for GenomeConfig {
    fn default() -> Self {
        Self {
            tag_len: 16,
            radius_min: 0.1,
            radius_max: 0.5,
            bt_max_len: 32,
            selectivity_init: [0.2, 0.8],
            dominance_init: [0.1, 0.9],
            template_leaf_randomization: 0.25,
            crossover: CrossoverStyle::Uniform,
        }
    }
}

impl GenomeConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.tag_len < 1 {
            p.push("genome.tag_len must be >= 1".to_string());
        }
        if !(self.radius_min > 0.0 && self.radius_min < self.radius_max) {
            p.push(format!(
                "genome.radius_min ({}) must be positive and below genome.radius_max ({})",
                self.radius_min, self.radius_max
            ));
        }
        if !(3..=128).contains(&self.bt_max_len) {
            p.push(format!("genome.bt_max_len {} outside [3, 128]", self.bt_max_len));
        }
        for (name, [lo, hi]) in [
            ("genome.selectivity_init", self.selectivity_init),
            ("genome.dominance_init", self.dominance_init),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                p.push(format!("{name} [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.template_leaf_randomization) {
            p.push("genome.template_leaf_randomization outside [0, 1]".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }

    pub fn radius_span(&self) -> f64 {
        self.radius_max - self.radius_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationConfig {
    /// Per-bit flip probability.
    pub tag_flip_p: f64,
    /// Per-gene probability that a continuous gene is perturbed.
    pub continuous_p: f64,
    pub selectivity_sigma: f64,
    pub dominance_sigma: f64,
    /// Fraction of the radius range.
    pub radius_sigma: f64,
    pub setpoint_sigma: f64,
    /// Per-tier-gene reassignment probability.
    pub tier_p: f64,
    pub effector_p: f64,
    /// Probability that the behavior tree is mutated at all.
    pub bt_p: f64,
    /// Share of behavior mutations that replace a subtree rather than a
    /// single node.
    pub bt_subtree_p: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            tag_flip_p: 0.05,
            continuous_p: 1.0,
            selectivity_sigma: 0.1,
            dominance_sigma: 0.1,
            radius_sigma: 0.1,
            setpoint_sigma: 0.1,
            tier_p: 0.1,
            effector_p: 0.1,
            bt_p: 0.5,
            bt_subtree_p: 0.05,
        }
    }
}

impl MutationConfig {
    /// Every probability zero: mutation becomes the identity.
    pub fn disabled() -> Self {
        Self {
            tag_flip_p: 0.0,
            continuous_p: 0.0,
            tier_p: 0.0,
            effector_p: 0.0,
            bt_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        for (name, v) in [
            ("tag_flip_p", self.tag_flip_p),
            ("continuous_p", self.continuous_p),
            ("tier_p", self.tier_p),
            ("effector_p", self.effector_p),
            ("bt_p", self.bt_p),
            ("bt_subtree_p", self.bt_subtree_p),
        ] {
            if !(0.0..=1.0).contains(&v) {
                p.push(format!("mutation.{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("selectivity_sigma", self.selectivity_sigma),
            ("dominance_sigma", self.dominance_sigma),
            ("radius_sigma", self.radius_sigma),
            ("setpoint_sigma", self.setpoint_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                p.push(format!("mutation.{name} = {v} must be finite and >= 0"));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn random_tier<R: Rng + ?Sized>(rng: &mut R) -> Tier {
    Tier::ALL[rng.random_range(0..3)]
}

pub fn random_genome<R: Rng + ?Sized>(
    cfg: &GenomeConfig,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<Genome> {
    cfg.validate()?;
    let tree = btvm::random_template(rng, cfg.template_leaf_randomization);
    Ok(Genome {
        id: ids.next_id(),
        tag: Tag::random(cfg.tag_len, rng),
        selectivity: uniform_in(rng, cfg.selectivity_init),
        dominance: uniform_in(rng, cfg.dominance_init),
        behavior: BehaviorGenes::from_tree(&tree, cfg.bt_max_len),
        hardware: HardwareGenes {
            radius: rng.random_range(cfg.radius_min..=cfg.radius_max),
            chassis_tier: random_tier(rng),
            battery_tier: random_tier(rng),
            motor_tier: random_tier(rng),
            end_effector: if rng.random_bool(0.5) {
                EndEffector::Suction
            } else {
                EndEffector::Pincher
            },
            torque_setpoint: rng.random_range(0.0..=1.0),
            battery_setpoint: rng.random_range(0.0..=1.0),
        },
    })
}

fn perturb<R: Rng + ?Sized>(rng: &mut R, v: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if sigma <= 0.0 {
        return v;
    }
    // sigma is finite and positive here.
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    (v + n.sample(rng)).clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtMutation {
    Point,
    Subtree,
}

/// Mutate the behavior genes in place, returning which operator fired.
/// Point mutations keep a node's class: leaves become other leaves and
/// `SEQ`/`SEL` swap. Subtree replacements substitute a random subtree that
/// still fits the fixed length. The result is always canonical.
pub fn mutate_behavior<R: Rng + ?Sized>(
    behavior: &mut BehaviorGenes,
    mc: &MutationConfig,
    rng: &mut R,
) -> Option<BtMutation> {
    if !rng.random_bool(mc.bt_p) {
        return None;
    }
    let max_len = behavior.opcodes.len();
    let mut flat = behavior.tree().flatten();
    let kind = if rng.random_bool(mc.bt_subtree_p) {
        BtMutation::Subtree
    } else {
        BtMutation::Point
    };
    match kind {
        BtMutation::Point => {
            let candidates: Vec<usize> = (0..flat.len())
                .filter(|&i| flat[i] != Opcode::End)
                .collect();
            let i = candidates[rng.random_range(0..candidates.len())];
            flat[i] = match flat[i] {
                Opcode::Seq => Opcode::Sel,
                Opcode::Sel => Opcode::Seq,
                old => loop {
                    let new = btvm::random_leaf(rng);
                    if new != old {
                        break new;
                    }
                },
            };
        }
        BtMutation::Subtree => {
            // Any position except the root itself starts a subtree.
            let starts: Vec<usize> = (1..flat.len()).filter(|&i| flat[i] != Opcode::End).collect();
            if let Some(&start) = starts.get(rng.random_range(0..starts.len().max(1))) {
                let end = subtree_end(&flat, start);
                let free = max_len - (flat.len() - (end - start));
                let replacement = btvm::random_subtree(rng, free.max(1)).flatten();
                flat.splice(start..end, replacement);
            } else {
                flat = btvm::random_subtree(rng, max_len).flatten();
            }
        }
    }
    let raw: Vec<u8> = flat.into_iter().map(|o| o as u8).collect();
    behavior.opcodes = btvm::canonicalize(&raw, max_len);
    Some(kind)
}

/// One past the last slot of the subtree starting at `start` in a
/// canonical flattened tree.
fn subtree_end(flat: &[Opcode], start: usize) -> usize {
    if !flat[start].is_control() {
        return start + 1;
    }
    let mut depth = 0usize;
    for (i, op) in flat.iter().enumerate().skip(start) {
        match op {
            Opcode::Seq | Opcode::Sel => depth += 1,
            Opcode::End => {
                depth -= 1;
                if depth == 0 {
                    return i + 1;
                }
            }
            _ => {}
        }
    }
    flat.len()
}

/// Mutated copy of `g` with a fresh id. All values stay within bounds.
pub fn mutate<R: Rng + ?Sized>(
    g: &Genome,
    mc: &MutationConfig,
    cfg: &GenomeConfig,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Genome {
    let mut out = g.clone();
    out.id = ids.next_id();

    let bits: Vec<bool> = out
        .tag
        .bits()
        .iter()
        .map(|&b| if rng.random_bool(mc.tag_flip_p) { !b } else { b })
        .collect();
    out.tag = Tag::new(bits);

    if rng.random_bool(mc.continuous_p) {
        out.selectivity = perturb(rng, out.selectivity, mc.selectivity_sigma, 0.0, 1.0);
    }
    if rng.random_bool(mc.continuous_p) {
        out.dominance = perturb(rng, out.dominance, mc.dominance_sigma, 0.0, 1.0);
    }

    let hw = &mut out.hardware;
    if rng.random_bool(mc.continuous_p) {
        hw.radius = perturb(
            rng,
            hw.radius,
            mc.radius_sigma * cfg.radius_span(),
            cfg.radius_min,
            cfg.radius_max,
        );
    }
    if rng.random_bool(mc.continuous_p) {
        hw.torque_setpoint = perturb(rng, hw.torque_setpoint, mc.setpoint_sigma, 0.0, 1.0);
    }
    if rng.random_bool(mc.continuous_p) {
        hw.battery_setpoint = perturb(rng, hw.battery_setpoint, mc.setpoint_sigma, 0.0, 1.0);
    }
    for tier in [&mut hw.chassis_tier, &mut hw.battery_tier, &mut hw.motor_tier] {
        if rng.random_bool(mc.tier_p) {
            let others: Vec<Tier> = Tier::ALL.into_iter().filter(|t| t != tier).collect();
            *tier = others[rng.random_range(0..others.len())];
        }
    }
    if rng.random_bool(mc.effector_p) {
        hw.end_effector = hw.end_effector.other();
    }

    mutate_behavior(&mut out.behavior, mc, rng);
    out
}

pub fn crossover<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    style: CrossoverStyle,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<Genome> {
    a.check_shape(b)?;
    let pick = |rng: &mut R| if rng.random_bool(0.5) { a } else { b };
    let cont = |rng: &mut R, get: fn(&Genome) -> f64| match style {
        CrossoverStyle::Uniform => get(pick(rng)),
        CrossoverStyle::Blend => {
            let t: f64 = rng.random();
            get(a) + t * (get(b) - get(a))
        }
    };
    let selectivity = cont(rng, |g| g.selectivity);
    let dominance = cont(rng, |g| g.dominance);
    let radius = cont(rng, |g| g.hardware.radius);
    let torque_setpoint = cont(rng, |g| g.hardware.torque_setpoint);
    let battery_setpoint = cont(rng, |g| g.hardware.battery_setpoint);
    let pick = |rng: &mut R| if rng.random_bool(0.5) { a } else { b };
    Ok(Genome {
        id: ids.next_id(),
        tag: pick(rng).tag.clone(),
        selectivity,
        dominance,
        behavior: pick(rng).behavior.clone(),
        hardware: HardwareGenes {
            radius,
            chassis_tier: pick(rng).hardware.chassis_tier,
            battery_tier: pick(rng).hardware.battery_tier,
            motor_tier: pick(rng).hardware.motor_tier,
            end_effector: pick(rng).hardware.end_effector,
            torque_setpoint,
            battery_setpoint,
        },
    })
}
