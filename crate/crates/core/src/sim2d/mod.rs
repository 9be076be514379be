//! Deterministic 2D foraging world.
//!
//! Robots are discs driven by PD controllers toward targets chosen by their
//! behavior trees. Motion uses semi-implicit Euler integration followed by
//! elastic impulse collisions against other robots, static circular
//! obstacles and the arena walls. Packages are individual (one carrier) or
//! collaborative (several grip points that must all be occupied before the
//! package moves). A package carried into the base is delivered.

mod env;
mod vec2;
mod world;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use env::generate_environment;
pub use vec2::Vec2;
pub use world::{
    collide, pd_control, run_trial, Base, GripPoint, Hold, Obstacle, Package, PackageKind, Robot, Shape,
    TracePackage, TraceRecord, TraceRobot, TrialStats, World,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareModel {
    /// Chassis areal density per tier (kg/m^2).
    pub chassis_density: [f64; 3],
    pub motor_mass: [f64; 3],
    pub battery_mass: [f64; 3],
    /// Peak drive force per motor tier at full torque setpoint (N).
    pub motor_force: [f64; 3],
    /// Lift rating per motor tier at full setpoint and the reference
    /// radius (kg).
    pub lift_rating: [f64; 3],
    pub reference_radius: f64,
    /// Share of the robot's own mass held back from lifting for locomotion.
    pub locomotion_reserve: f64,
    /// Battery capacity per tier at full setpoint (J).
    pub battery_capacity: [f64; 3],
    /// Energy per newton-second of commanded force.
    pub move_cost: f64,
    /// Energy per second regardless of activity.
    pub idle_cost: f64,
}

impl Default for HardwareModel {
    fn default() -> Self {
        Self {
            chassis_density: [30.0, 22.0, 15.0],
            motor_mass: [0.5, 0.8, 1.2],
            battery_mass: [0.4, 0.7, 1.0],
            motor_force: [10.0, 20.0, 35.0],
            lift_rating: [4.0, 8.0, 14.0],
            reference_radius: 0.2,
            locomotion_reserve: 0.1,
            battery_capacity: [400.0, 800.0, 1400.0],
            move_cost: 0.5,
            idle_cost: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub ticks: u32,
    pub max_speed: f64,
    pub kp: f64,
    pub kd: f64,
    /// Largest gap at which a robot can grab a package or grip point (m).
    pub pickup_range: f64,
    /// Allowed robot-to-package diameter ratio for individual packages.
    pub diameter_band: [f64; 2],
    pub restitution: f64,
    pub stuck_window: usize,
    /// Stuck when displacement over the window is below this many radii.
    pub stuck_fraction: f64,
    /// Heading noise per tick while random walking (radians).
    pub walk_turn_sigma: f64,
    pub walk_lookahead: f64,
    pub hardware: HardwareModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            ticks: 2000,
            max_speed: 1.5,
            kp: 4.0,
            kd: 2.0,
            pickup_range: 0.15,
            diameter_band: [0.5, 2.0],
            restitution: 1.0,
            stuck_window: 30,
            stuck_fraction: 0.1,
            walk_turn_sigma: 0.3,
            walk_lookahead: 2.0,
            hardware: HardwareModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaConfig {
    pub width: f64,
    pub height: f64,
    /// Base center; defaults to the arena center when absent.
    pub base_position: Option<[f64; 2]>,
    pub base_radius: f64,
    pub obstacles: u32,
    pub obstacle_radius: [f64; 2],
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            width: 14.0,
            height: 14.0,
            base_position: None,
            base_radius: 1.0,
            obstacles: 4,
            obstacle_radius: [0.3, 0.6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// Weight drawn uniformly from the configured range.
    #[default]
    Uniform,
    /// Heaviest next to the base, lightest at the farthest placement.
    DistanceBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackageConfig {
    pub individual: u32,
    pub collaborative: u32,
    /// Share of packages that are square (pincher); the rest are circular
    /// (suction).
    pub square_fraction: f64,
    pub weight_law: WeightLaw,
    /// Individual package weight range (kg). Radius scales with weight.
    pub weight: [f64; 2],
    pub radius: [f64; 2],
    pub collab_weight: [f64; 2],
    pub collab_radius: f64,
    /// Inclusive range of grip points per collaborative package.
    pub collab_grip_points: [u32; 2],
    /// Packages are never placed closer than this to the base center.
    pub min_base_distance: f64,
}

impl Default for PackageConfig {
    fn default() -> Self {
        Self {
            individual: 16,
            collaborative: 0,
            square_fraction: 0.5,
            weight_law: WeightLaw::Uniform,
            weight: [1.0, 4.0],
            radius: [0.1, 0.25],
            collab_weight: [6.0, 12.0],
            collab_radius: 0.4,
            collab_grip_points: [2, 3],
            min_base_distance: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub arena: ArenaConfig,
    pub packages: PackageConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let a = &self.arena;
        if !(a.width > 0.0 && a.height > 0.0) {
            p.push("env.arena.width/height must be positive".to_string());
        }
        if !(a.base_radius > 0.0) {
            p.push("env.arena.base_radius must be positive".into());
        }
        if let Some([x, y]) = a.base_position {
            if !(0.0..=a.width).contains(&x) || !(0.0..=a.height).contains(&y) {
                p.push("env.arena.base_position lies outside the arena".into());
            }
        }
        if !(0.0 < a.obstacle_radius[0] && a.obstacle_radius[0] <= a.obstacle_radius[1]) {
            p.push("env.arena.obstacle_radius must satisfy 0 < lo <= hi".into());
        }
        let k = &self.packages;
        if !(0.0..=1.0).contains(&k.square_fraction) {
            p.push("env.packages.square_fraction outside [0, 1]".into());
        }
        for (name, [lo, hi]) in [
            ("weight", k.weight),
            ("radius", k.radius),
            ("collab_weight", k.collab_weight),
        ] {
            if !(0.0 < lo && lo <= hi) {
                p.push(format!("env.packages.{name} must satisfy 0 < lo <= hi"));
            }
        }
        if !(2 <= k.collab_grip_points[0]
            && k.collab_grip_points[0] <= k.collab_grip_points[1]
            && k.collab_grip_points[1] <= 4)
        {
            p.push("env.packages.collab_grip_points must lie within [2, 4]".into());
        }
        if !(k.collab_radius > 0.0) {
            p.push("env.packages.collab_radius must be positive".into());
        }
        if k.individual + k.collaborative == 0 {
            p.push("env.packages: at least one package required".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}

impl SimConfig {
    pub fn validate(&self, radius_min: f64) -> Result<()> {
        let mut p = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            p.push("sim.dt must be positive".to_string());
        }
        if self.ticks == 0 {
            p.push("sim.ticks must be >= 1".into());
        }
        if !(self.kp > 0.0 && self.kd > 0.0) {
            p.push("sim.kp and sim.kd must be positive".into());
        }
        if !(self.max_speed > 0.0) {
            p.push("sim.max_speed must be positive".into());
        } else if self.max_speed * self.dt >= radius_min {
            p.push(format!(
                "sim.max_speed * sim.dt = {} must stay below genome.radius_min = {radius_min} to prevent tunneling",
                self.max_speed * self.dt
            ));
        }
        if !(self.pickup_range >= 0.0) {
            p.push("sim.pickup_range must be >= 0".into());
        }
        if !(0.0 < self.diameter_band[0] && self.diameter_band[0] <= self.diameter_band[1]) {
            p.push("sim.diameter_band must satisfy 0 < lo <= hi".into());
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            p.push("sim.restitution outside [0, 1]".into());
        }
        if self.stuck_window == 0 {
            p.push("sim.stuck_window must be >= 1".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}
