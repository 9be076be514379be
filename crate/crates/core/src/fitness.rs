//! Trial scoring, swarm cost accounting, the soft budget penalty,
//! marginal-contribution gating and EMA smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{EndEffector, Genome};
use crate::sim2d::TrialStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessWeights {
    pub delivery: f64,
    pub collab_bonus: f64,
    pub pickup: f64,
    pub energy: f64,
    pub proximity: f64,
    pub closeness: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self {
            delivery: 100.0,
            collab_bonus: 50.0,
            pickup: 1.0,
            energy: 0.03,
            proximity: 1.0,
            closeness: 30.0,
        }
    }
}

pub const RAW_FITNESS_FLOOR: f64 = 0.1;

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Individual terms of the raw fitness, before the activity multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessTerms {
    pub delivery: f64,
    pub collab: f64,
    pub pickup: f64,
    pub energy: f64,
    pub proximity: f64,
    pub closeness: f64,
    pub activity: f64,
}

impl FitnessTerms {
    pub fn new(s: &TrialStats, w: &FitnessWeights) -> Self {
        let retrieved = s.delivered + s.collab_delivered;
        Self {
            delivery: f64::from(s.delivered) * w.delivery,
            collab: f64::from(s.grip_points_delivered) * w.delivery
                + f64::from(s.collab_delivered) * w.collab_bonus,
            pickup: f64::from(s.picked + s.collab_picked) * w.pickup,
            energy: s.energy_avg_final * w.energy,
            proximity: mean(&s.proximity_scores) * w.proximity,
            closeness: mean(&s.closeness_progress) * w.closeness,
            activity: if retrieved == 0 { 0.5 } else { 1.0 },
        }
    }

    pub fn sum(&self) -> f64 {
        self.delivery + self.collab + self.pickup + self.energy + self.proximity + self.closeness
    }
}

/// Six scored terms times the inactivity multiplier, floored at 0.1.
pub fn raw_fitness(stats: &TrialStats, w: &FitnessWeights) -> f64 {
    let t = FitnessTerms::new(stats, w);
    (t.sum() * t.activity).max(RAW_FITNESS_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    pub chassis: [f64; 3],
    pub motor: [f64; 3],
    pub battery: [f64; 3],
    pub suction: f64,
    pub pincher: f64,
    /// Cost per meter of chassis radius.
    pub radius_coeff: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            chassis: [50.0, 100.0, 200.0],
            motor: [40.0, 90.0, 180.0],
            battery: [30.0, 70.0, 150.0],
            suction: 20.0,
            pincher: 35.0,
            radius_coeff: 100.0,
        }
    }
}

impl CostTable {
    pub fn unit_cost(&self, g: &Genome) -> f64 {
        let hw = &g.hardware;
        let effector = match hw.end_effector {
            EndEffector::Suction => self.suction,
            EndEffector::Pincher => self.pincher,
        };
        self.chassis[hw.chassis_tier.index()]
            + self.motor[hw.motor_tier.index()]
            + self.battery[hw.battery_tier.index()]
            + effector
            + self.radius_coeff * hw.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetModel {
    /// Swarm budget; `None` means unconstrained.
    pub budget: Option<f64>,
    pub lambda: f64,
    pub floor: f64,
    /// Fabrication overhead charged once per distinct species in a swarm.
    pub species_fee: f64,
    pub costs: CostTable,
}

impl Default for BudgetModel {
    fn default() -> Self {
        Self {
            budget: None,
            lambda: 0.001,
            floor: 0.05,
            species_fee: 0.0,
            costs: CostTable::default(),
        }
    }
}

impl BudgetModel {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if let Some(b) = self.budget {
            if !(b >= 0.0 && b.is_finite()) {
                p.push(format!("budget.budget = {b} must be finite and >= 0"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            p.push("budget.lambda must be finite and >= 0".into());
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            p.push(format!("budget.floor = {} must lie in (0, 1)", self.floor));
        }
        let c = &self.costs;
        let all_costs = c
            .chassis
            .iter()
            .chain(&c.motor)
            .chain(&c.battery)
            .chain([&c.suction, &c.pincher, &c.radius_coeff, &self.species_fee]);
        if all_costs.into_iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            p.push("budget costs must be finite and >= 0".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}

/// Total fabrication cost of a swarm given as (genome, robot count) pairs.
pub fn swarm_cost(composition: &[(&Genome, usize)], species_count: usize, b: &BudgetModel) -> f64 {
    let hardware: f64 = composition
        .iter()
        .map(|(g, n)| b.costs.unit_cost(g) * *n as f64)
        .sum();
    hardware + species_count as f64 * b.species_fee
}

/// 1 within budget, otherwise `max(floor, exp(-lambda * excess))`.
pub fn budget_penalty(swarm_cost: f64, b: &BudgetModel) -> f64 {
    match b.budget {
        Some(budget) if swarm_cost > budget => {
            (-b.lambda * (swarm_cost - budget)).exp().max(b.floor)
        }
        _ => 1.0,
    }
}

/// `base` when the focal individual strictly improved on the baseline,
/// otherwise `base * marginal_penalty`.
pub fn gated_fitness(focal: f64, baseline: f64, base: f64, marginal_penalty: f64) -> f64 {
    if focal - baseline > 0.0 {
        base
    } else {
        base * marginal_penalty
    }
}

/// Exponential moving average; `alpha` weights the history.
pub fn ema_smooth(previous: Option<f64>, new: f64, alpha: f64) -> f64 {
    match previous {
        None => new,
        Some(p) => alpha * p + (1.0 - alpha) * new,
    }
}

pub const ROI_COST_EPSILON: f64 = 1.0;

pub fn roi_fitness(fitness: f64, swarm_cost: f64) -> f64 {
    fitness / swarm_cost.max(ROI_COST_EPSILON)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Fitness,
    Roi,
}

/// Fitness outcome of one individual in one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    /// Mean focal fitness times the budget penalty (or per cost, for ROI).
    pub raw: f64,
    /// `raw` after marginal gating.
    pub fitness: f64,
    /// EMA of `fitness` over this individual's lifetime.
    pub smoothed: f64,
    pub marginal: f64,
    /// True when the marginal penalty was applied.
    pub gated: bool,
}
