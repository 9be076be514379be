use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HardwareModel, SimConfig, Vec2};
use crate::btvm::{self, Command, Observation, Program};
use crate::genome::{EndEffector, Genome};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Lifted by suction.
    Circle,
    /// Lifted by pinchers.
    Square,
}

impl Shape {
    pub fn effector(self) -> EndEffector {
        match self {
            Shape::Circle => EndEffector::Suction,
            Shape::Square => EndEffector::Pincher,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PackageKind {
    Individual,
    Collaborative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripPoint {
    pub offset: Vec2,
    pub effector: EndEffector,
    pub occupied_by: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Package {
    pub id: u32,
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
    pub weight: f64,
    pub shape: Shape,
    pub kind: PackageKind,
    /// A single centered grip for individual packages.
    pub grips: Vec<GripPoint>,
    pub delivered: bool,
    pub initial_base_distance: f64,
    pub ever_lifted: bool,
}

impl Package {
    pub fn occupied(&self) -> usize {
        self.grips.iter().filter(|g| g.occupied_by.is_some()).count()
    }

    pub fn fully_gripped(&self) -> bool {
        self.grips.iter().all(|g| g.occupied_by.is_some())
    }

    fn available_to(&self, effector: EndEffector) -> bool {
        !self.delivered
            && self
                .grips
                .iter()
                .any(|g| g.occupied_by.is_none() && g.effector == effector)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub pos: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Base {
    pub pos: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hold {
    pub package: u32,
    pub grip: usize,
}

#[derive(Debug, Clone)]
pub struct Robot {
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
    pub mass: f64,
    pub max_force: f64,
    /// Heaviest individual package this robot can lift (kg).
    pub lift_capacity: f64,
    pub energy: f64,
    pub energy_max: f64,
    pub effector: EndEffector,
    pub hold: Option<Hold>,
    pub program: Arc<Program>,
    /// Index of the swarm slot this robot was built from.
    pub slot: usize,
    history: Vec<Vec2>,
    history_len: usize,
    heading: f64,
    random_target: Option<u32>,
}

impl Robot {
    pub fn from_genome(
        g: &Genome,
        program: Arc<Program>,
        hw: &HardwareModel,
        pos: Vec2,
        slot: usize,
        stuck_window: usize,
    ) -> Robot {
        let h = &g.hardware;
        let (ct, mt, bt) = (h.chassis_tier.index(), h.motor_tier.index(), h.battery_tier.index());
        let mass = hw.chassis_density[ct] * std::f64::consts::PI * h.radius * h.radius
            + hw.motor_mass[mt]
            + hw.battery_mass[bt];
        let lift = hw.lift_rating[mt] * h.torque_setpoint * (hw.reference_radius / h.radius)
            - hw.locomotion_reserve * mass;
        let energy_max = hw.battery_capacity[bt] * h.battery_setpoint;
        Robot {
            pos,
            vel: Vec2::ZERO,
            radius: h.radius,
            mass,
            max_force: hw.motor_force[mt] * h.torque_setpoint,
            lift_capacity: lift.max(0.0),
            energy: energy_max,
            energy_max,
            effector: h.end_effector,
            hold: None,
            program,
            slot,
            history: vec![pos; stuck_window.max(1)],
            history_len: 0,
            heading: pos.y.atan2(pos.x),
            random_target: None,
        }
    }

    fn is_stuck(&self, fraction: f64) -> bool {
        if self.history_len < self.history.len() {
            return false;
        }
        // The ring buffer slot about to be overwritten holds the oldest
        // position.
        let oldest = self.history[self.history_len % self.history.len()];
        self.pos.distance(oldest) < fraction * self.radius
    }

    fn record_position(&mut self) {
        let n = self.history.len();
        self.history[self.history_len % n] = self.pos;
        self.history_len += 1;
    }
}

/// Counts and aggregates feeding every fitness term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    /// Individual packages delivered.
    pub delivered: u32,
    pub collab_delivered: u32,
    /// Individual packages lifted at least once.
    pub picked: u32,
    /// Collaborative packages lifted at least once.
    pub collab_picked: u32,
    /// Sum of grip points over delivered collaborative packages.
    pub grip_points_delivered: u32,
    /// Mean remaining energy as a fraction of capacity.
    pub energy_avg_final: f64,
    /// Per robot: `10 / (1 + 0.1 * d_base)` while holding, else 0.
    pub proximity_scores: Vec<f64>,
    /// Per undelivered package: `(D_initial - D_final) / D_initial`.
    pub closeness_progress: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counters {
    delivered: u32,
    collab_delivered: u32,
    picked: u32,
    collab_picked: u32,
    grip_points_delivered: u32,
}

#[derive(Debug, Clone)]
pub struct World {
    pub robots: Vec<Robot>,
    pub packages: Vec<Package>,
    pub obstacles: Vec<Obstacle>,
    pub base: Base,
    pub width: f64,
    pub height: f64,
    pub tick: u32,
    pub params: SimConfig,
    spawn_points: Vec<Vec2>,
    rng: SimRng,
    counters: Counters,
}

/// `kp * (target - pos) - kd * vel`, limited to `max_force` in magnitude.
pub fn pd_control(pos: Vec2, vel: Vec2, target: Vec2, kp: f64, kd: f64, max_force: f64) -> Vec2 {
    ((target - pos) * kp - vel * kd).clamp_length(max_force)
}

/// Velocity change for a disc pair along the contact normal. Inverse masses
/// of zero denote immovable bodies. Returns `None` when the pair is
/// separating.
fn contact_impulse(
    v1: Vec2,
    inv_m1: f64,
    v2: Vec2,
    inv_m2: f64,
    normal: Vec2,
    restitution: f64,
) -> Option<(Vec2, Vec2)> {
    let closing = (v2 - v1).dot(normal);
    let inv_sum = inv_m1 + inv_m2;
    if closing >= 0.0 || inv_sum == 0.0 {
        return None;
    }
    let j = -(1.0 + restitution) * closing / inv_sum;
    Some((v1 - normal * (j * inv_m1), v2 + normal * (j * inv_m2)))
}

/// Post-collision velocities of two discs touching along `normal` (unit,
/// pointing from the first to the second).
pub fn collide(
    v1: Vec2,
    m1: f64,
    v2: Vec2,
    m2: f64,
    normal: Vec2,
    restitution: f64,
) -> (Vec2, Vec2) {
    contact_impulse(v1, 1.0 / m1, v2, 1.0 / m2, normal, restitution).unwrap_or((v1, v2))
}

impl World {
    pub(super) fn empty(
        width: f64,
        height: f64,
        base: Base,
        obstacles: Vec<Obstacle>,
        packages: Vec<Package>,
        spawn_points: Vec<Vec2>,
        params: SimConfig,
        rng: SimRng,
    ) -> World {
        World {
            robots: Vec::new(),
            packages,
            obstacles,
            base,
            width,
            height,
            tick: 0,
            params,
            spawn_points,
            rng,
            counters: Counters::default(),
        }
    }

    pub fn spawn_points(&self) -> &[Vec2] {
        &self.spawn_points
    }

    /// Place one robot per swarm slot on the precomputed spawn points.
    /// Slots sharing a program share its compiled form.
    pub fn insert_robots(&mut self, slots: &[(&Genome, Arc<Program>)]) {
        let hw = self.params.hardware.clone();
        for (slot, (g, program)) in slots.iter().enumerate() {
            let pos = self.spawn_points[slot % self.spawn_points.len()];
            self.robots.push(Robot::from_genome(
                g,
                Arc::clone(program),
                &hw,
                pos,
                slot,
                self.params.stuck_window,
            ));
        }
    }

    fn package_target(&self, r: &Robot, p: &Package) -> Option<(Vec2, f64)> {
        if !p.available_to(r.effector) {
            return None;
        }
        match p.kind {
            PackageKind::Individual => self
                .can_lift(r, p)
                .then(|| (p.pos, r.radius + p.radius + self.params.pickup_range)),
            PackageKind::Collaborative => p
                .grips
                .iter()
                .filter(|g| g.occupied_by.is_none() && g.effector == r.effector)
                .map(|g| p.pos + g.offset)
                .min_by(|a, b| r.pos.distance(*a).total_cmp(&r.pos.distance(*b)))
                .map(|t| (t, r.radius + self.params.pickup_range)),
        }
    }

    /// Effector, lift capacity and chassis-diameter checks for an
    /// individual package.
    fn can_lift(&self, r: &Robot, p: &Package) -> bool {
        let [lo, hi] = self.params.diameter_band;
        p.shape.effector() == r.effector
            && r.lift_capacity >= p.weight
            && (lo * p.radius..=hi * p.radius).contains(&r.radius)
    }

    fn target_of(&self, i: usize, package: u32) -> Option<(Vec2, f64)> {
        let p = self.packages.get(package as usize)?;
        self.package_target(&self.robots[i], p)
    }

    /// Build robot `i`'s sensor reading. May assign a new random target.
    pub fn observe(&mut self, i: usize) -> Observation {
        let r = &self.robots[i];
        let mut nearest: Option<(u32, f64, bool)> = None;
        for p in &self.packages {
            if let Some((t, reach)) = self.package_target(r, p) {
                let d = r.pos.distance(t);
                if nearest.is_none_or(|(_, bd, _)| d < bd) {
                    nearest = Some((p.id, d, d <= reach));
                }
            }
        }

        let target_ok = |w: &World, id: Option<u32>| id.and_then(|id| w.target_of(i, id)).is_some();
        if !target_ok(self, self.robots[i].random_target) {
            let r = &self.robots[i];
            let candidates: Vec<u32> = self
                .packages
                .iter()
                .filter(|p| self.package_target(r, p).is_some())
                .map(|p| p.id)
                .collect();
            self.robots[i].random_target = if candidates.is_empty() {
                None
            } else {
                Some(candidates[self.rng.random_range(0..candidates.len())])
            };
        }
        let r = &self.robots[i];
        let near_random = r
            .random_target
            .and_then(|id| self.target_of(i, id))
            .is_some_and(|(t, reach)| r.pos.distance(t) <= reach);

        Observation {
            has_package: r.hold.is_some(),
            near_package: nearest.is_some_and(|n| n.2),
            near_base: r.pos.distance(self.base.pos) <= self.base.radius,
            am_i_stuck: r.is_stuck(self.params.stuck_fraction),
            nearest_package_id: nearest.map(|n| n.0),
            random_package_id: r.random_target,
            near_random_package: near_random,
        }
    }

    fn command_force(&mut self, i: usize, cmd: Option<Command>) -> Vec2 {
        let (kp, kd) = (self.params.kp, self.params.kd);
        let target = match cmd {
            Some(Command::MoveToPackage(id)) | Some(Command::MoveToRandomPackage(id)) => {
                self.target_of(i, id).map(|(t, _)| t)
            }
            Some(Command::MoveToBase) => Some(self.base.pos),
            Some(Command::RandomWalk) => {
                let noise: f64 = self.rng.sample(StandardNormal);
                let r = &mut self.robots[i];
                r.heading += noise * self.params.walk_turn_sigma;
                let mut t = r.pos + Vec2::from_angle(r.heading) * self.params.walk_lookahead;
                let margin = r.radius;
                if t.x < margin || t.x > self.width - margin || t.y < margin || t.y > self.height - margin
                {
                    let center = Vec2::new(self.width / 2.0, self.height / 2.0);
                    let to_center = center - r.pos;
                    r.heading = to_center.y.atan2(to_center.x);
                    t = r.pos + Vec2::from_angle(r.heading) * self.params.walk_lookahead;
                }
                Some(t)
            }
            Some(Command::PickUp(_)) | Some(Command::Drop) | None => None,
        };
        let r = &self.robots[i];
        match target {
            Some(t) => pd_control(r.pos, r.vel, t, kp, kd, r.max_force),
            None => (-r.vel * kd).clamp_length(r.max_force),
        }
    }

    fn attached_to_collab(&self, i: usize) -> bool {
        self.robots[i]
            .hold
            .is_some_and(|h| self.packages[h.package as usize].kind == PackageKind::Collaborative)
    }

    /// Advance one tick: forces and energy, semi-implicit Euler integration,
    /// collaborative transport, collisions, then pick-up/drop and delivery.
    pub fn step(&mut self, commands: &[Option<Command>]) {
        let n = self.robots.len();
        let dt = self.params.dt;
        let hw_move = self.params.hardware.move_cost;
        let hw_idle = self.params.hardware.idle_cost;

        let mut forces = vec![Vec2::ZERO; n];
        for i in 0..n {
            let cmd = commands.get(i).copied().flatten();
            let f = if self.robots[i].energy > 0.0 {
                self.command_force(i, cmd)
            } else {
                Vec2::ZERO
            };
            let r = &mut self.robots[i];
            r.energy = (r.energy - (hw_move * f.length() + hw_idle) * dt).max(0.0);
            forces[i] = f;
        }

        let max_speed = self.params.max_speed;
        for i in 0..n {
            if self.attached_to_collab(i) {
                continue;
            }
            let carried = self.robots[i]
                .hold
                .map_or(0.0, |h| self.packages[h.package as usize].weight);
            let r = &mut self.robots[i];
            r.vel = (r.vel + forces[i] * (dt / (r.mass + carried))).clamp_length(max_speed);
            r.pos += r.vel * dt;
        }

        self.move_collaborative(&forces);
        self.resolve_collisions();

        for i in 0..n {
            match commands.get(i).copied().flatten() {
                Some(Command::PickUp(id)) => {
                    self.attempt_pickup(i, id);
                }
                Some(Command::Drop) => self.drop_package(i),
                _ => {}
            }
        }
        self.carry_individual();
        self.check_deliveries();

        for r in &mut self.robots {
            r.record_position();
        }
        self.tick += 1;
    }

    fn move_collaborative(&mut self, forces: &[Vec2]) {
        let dt = self.params.dt;
        let max_speed = self.params.max_speed;
        for p in &mut self.packages {
            if p.kind != PackageKind::Collaborative || p.delivered || p.occupied() == 0 {
                continue;
            }
            if p.fully_gripped() {
                let mut intended = Vec2::ZERO;
                let mut capacity = 0.0;
                for g in &p.grips {
                    let j = g.occupied_by.unwrap_or_default();
                    let r = &self.robots[j];
                    intended += p.vel + forces[j] * (dt / r.mass);
                    capacity += r.lift_capacity;
                }
                intended = intended / p.grips.len() as f64;
                let factor = (capacity / p.weight).clamp(0.0, 1.0);
                p.vel = (intended * factor).clamp_length(max_speed);
                p.pos += p.vel * dt;
                p.pos.x = p.pos.x.clamp(0.0, self.width);
                p.pos.y = p.pos.y.clamp(0.0, self.height);
            } else {
                p.vel = Vec2::ZERO;
            }
            for g in &p.grips {
                if let Some(j) = g.occupied_by {
                    self.robots[j].pos = p.pos + g.offset;
                    self.robots[j].vel = p.vel;
                }
            }
        }
    }

    fn resolve_collisions(&mut self) {
        let n = self.robots.len();
        let e = self.params.restitution;
        let inv_mass: Vec<f64> = (0..n)
            .map(|i| {
                if self.attached_to_collab(i) {
                    0.0
                } else {
                    let carried = self.robots[i]
                        .hold
                        .map_or(0.0, |h| self.packages[h.package as usize].weight);
                    1.0 / (self.robots[i].mass + carried)
                }
            })
            .collect();

        // Sweep along x.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| {
            let ka = self.robots[a].pos.x - self.robots[a].radius;
            let kb = self.robots[b].pos.x - self.robots[b].radius;
            ka.total_cmp(&kb).then(a.cmp(&b))
        });
        for oi in 0..n {
            let a = order[oi];
            let right_a = self.robots[a].pos.x + self.robots[a].radius;
            for &b in &order[oi + 1..] {
                if self.robots[b].pos.x - self.robots[b].radius > right_a {
                    break;
                }
                let (im_a, im_b) = (inv_mass[a], inv_mass[b]);
                if im_a == 0.0 && im_b == 0.0 {
                    continue;
                }
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let (left, right) = self.robots.split_at_mut(hi);
                let (r1, r2) = (&mut left[lo], &mut right[0]);
                let (im1, im2) = (inv_mass[lo], inv_mass[hi]);
                let delta = r2.pos - r1.pos;
                let dist = delta.length();
                let overlap = r1.radius + r2.radius - dist;
                if overlap <= 0.0 {
                    continue;
                }
                let normal = if dist > 0.0 {
                    delta / dist
                } else {
                    Vec2::new(1.0, 0.0)
                };
                if let Some((v1, v2)) = contact_impulse(r1.vel, im1, r2.vel, im2, normal, e) {
                    r1.vel = v1;
                    r2.vel = v2;
                }
                let share = overlap / (im1 + im2);
                r1.pos -= normal * (share * im1);
                r2.pos += normal * (share * im2);
            }
        }

        for i in 0..n {
            if inv_mass[i] == 0.0 {
                continue;
            }
            let r = &mut self.robots[i];
            for o in &self.obstacles {
                let delta = r.pos - o.pos;
                let dist = delta.length();
                let overlap = r.radius + o.radius - dist;
                if overlap <= 0.0 {
                    continue;
                }
                let normal = if dist > 0.0 {
                    delta / dist
                } else {
                    Vec2::new(1.0, 0.0)
                };
                let vn = r.vel.dot(normal);
                if vn < 0.0 {
                    r.vel -= normal * ((1.0 + e) * vn);
                }
                r.pos += normal * overlap;
            }
            if r.pos.x < r.radius {
                r.pos.x = r.radius;
                if r.vel.x < 0.0 {
                    r.vel.x = -e * r.vel.x;
                }
            } else if r.pos.x > self.width - r.radius {
                r.pos.x = self.width - r.radius;
                if r.vel.x > 0.0 {
                    r.vel.x = -e * r.vel.x;
                }
            }
            if r.pos.y < r.radius {
                r.pos.y = r.radius;
                if r.vel.y < 0.0 {
                    r.vel.y = -e * r.vel.y;
                }
            } else if r.pos.y > self.height - r.radius {
                r.pos.y = self.height - r.radius;
                if r.vel.y > 0.0 {
                    r.vel.y = -e * r.vel.y;
                }
            }
        }
    }

    fn carry_individual(&mut self) {
        for r in &self.robots {
            if let Some(h) = r.hold {
                let p = &mut self.packages[h.package as usize];
                if p.kind == PackageKind::Individual {
                    p.pos = r.pos;
                    p.vel = r.vel;
                }
            }
        }
    }

    /// Try to grab `package` with robot `i`. Individual packages need a
    /// matching effector, enough lift capacity and a compatible chassis
    /// diameter; collaborative packages only need a free grip point for the
    /// robot's effector within reach. Failure leaves the world unchanged.
    pub fn attempt_pickup(&mut self, i: usize, package: u32) -> bool {
        let Some(p) = self.packages.get(package as usize) else {
            return false;
        };
        let r = &self.robots[i];
        if r.hold.is_some() || p.delivered {
            return false;
        }
        match p.kind {
            PackageKind::Individual => {
                let ok = p.grips[0].occupied_by.is_none()
                    && r.pos.distance(p.pos) <= r.radius + p.radius + self.params.pickup_range
                    && self.can_lift(r, p);
                if !ok {
                    return false;
                }
                let p = &mut self.packages[package as usize];
                p.grips[0].occupied_by = Some(i);
                if !p.ever_lifted {
                    p.ever_lifted = true;
                    self.counters.picked += 1;
                }
                self.robots[i].hold = Some(Hold { package, grip: 0 });
                true
            }
            PackageKind::Collaborative => {
                let reach = r.radius + self.params.pickup_range;
                let grip = p
                    .grips
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.occupied_by.is_none() && g.effector == r.effector)
                    .map(|(k, g)| (k, r.pos.distance(p.pos + g.offset)))
                    .filter(|&(_, d)| d <= reach)
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let Some((k, _)) = grip else {
                    return false;
                };
                let p = &mut self.packages[package as usize];
                p.grips[k].occupied_by = Some(i);
                let at = p.pos + p.grips[k].offset;
                if p.fully_gripped() && !p.ever_lifted {
                    p.ever_lifted = true;
                    self.counters.collab_picked += 1;
                }
                let r = &mut self.robots[i];
                r.hold = Some(Hold { package, grip: k });
                r.pos = at;
                r.vel = Vec2::ZERO;
                true
            }
        }
    }

    pub fn drop_package(&mut self, i: usize) {
        if let Some(h) = self.robots[i].hold.take() {
            let p = &mut self.packages[h.package as usize];
            p.grips[h.grip].occupied_by = None;
            p.vel = Vec2::ZERO;
        }
    }

    fn check_deliveries(&mut self) {
        for p in &mut self.packages {
            if p.delivered || p.occupied() == 0 {
                continue;
            }
            let lifted = match p.kind {
                PackageKind::Individual => true,
                PackageKind::Collaborative => p.fully_gripped(),
            };
            if !lifted || p.pos.distance(self.base.pos) > self.base.radius {
                continue;
            }
            p.delivered = true;
            p.vel = Vec2::ZERO;
            match p.kind {
                PackageKind::Individual => self.counters.delivered += 1,
                PackageKind::Collaborative => {
                    self.counters.collab_delivered += 1;
                    self.counters.grip_points_delivered += p.grips.len() as u32;
                }
            }
            for g in &mut p.grips {
                if let Some(j) = g.occupied_by.take() {
                    self.robots[j].hold = None;
                }
            }
        }
    }

    /// Observe, decide and step every robot for one tick.
    pub fn tick_all(&mut self) {
        let commands: Vec<Option<Command>> = (0..self.robots.len())
            .map(|i| {
                let obs = self.observe(i);
                btvm::tick(&self.robots[i].program, &obs).command
            })
            .collect();
        self.step(&commands);
    }

    pub fn finalize_stats(&self) -> TrialStats {
        let c = self.counters;
        let energy_avg_final = if self.robots.is_empty() {
            0.0
        } else {
            self.robots
                .iter()
                .map(|r| {
                    if r.energy_max > 0.0 {
                        r.energy / r.energy_max
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / self.robots.len() as f64
        };
        let proximity_scores = self
            .robots
            .iter()
            .map(|r| {
                if r.hold.is_some() {
                    10.0 / (1.0 + 0.1 * r.pos.distance(self.base.pos))
                } else {
                    0.0
                }
            })
            .collect();
        let closeness_progress = self
            .packages
            .iter()
            .filter(|p| !p.delivered)
            .map(|p| {
                let d_final = p.pos.distance(self.base.pos);
                (p.initial_base_distance - d_final) / p.initial_base_distance
            })
            .collect();
        TrialStats {
            delivered: c.delivered,
            collab_delivered: c.collab_delivered,
            picked: c.picked,
            collab_picked: c.collab_picked,
            grip_points_delivered: c.grip_points_delivered,
            energy_avg_final,
            proximity_scores,
            closeness_progress,
        }
    }

    pub fn trace(&self) -> TraceRecord {
        TraceRecord {
            tick: self.tick,
            robots: self
                .robots
                .iter()
                .map(|r| TraceRobot {
                    slot: r.slot,
                    x: r.pos.x,
                    y: r.pos.y,
                    vx: r.vel.x,
                    vy: r.vel.y,
                    energy: r.energy,
                    holding: r.hold.map(|h| h.package),
                })
                .collect(),
            packages: self
                .packages
                .iter()
                .map(|p| TracePackage {
                    id: p.id,
                    x: p.pos.x,
                    y: p.pos.y,
                    delivered: p.delivered,
                    gripped: p.occupied() as u32,
                })
                .collect(),
        }
    }
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u32,
    pub robots: Vec<TraceRobot>,
    pub packages: Vec<TracePackage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRobot {
    pub slot: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub energy: f64,
    pub holding: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePackage {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub delivered: bool,
    pub gripped: u32,
}

/// Run a populated world for its configured number of ticks. When `trace`
/// is given it receives one record per tick, starting with the initial
/// state.
pub fn run_trial(mut world: World, mut trace: Option<&mut dyn FnMut(&TraceRecord)>) -> TrialStats {
    if let Some(t) = trace.as_mut() {
        t(&world.trace());
    }
    for _ in 0..world.params.ticks {
        world.tick_all();
        if let Some(t) = trace.as_mut() {
            t(&world.trace());
        }
    }
    world.finalize_stats()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{random_genome, GenomeConfig, IdAllocator, Tier};
    use crate::rng::from_seed;
    use crate::sim2d::{generate_environment, EnvConfig};

    fn genome(radius: f64, effector: EndEffector) -> Genome {
        let mut g = random_genome(&GenomeConfig::default(), &mut IdAllocator::default(), &mut from_seed(1))
            .unwrap();
        g.hardware.radius = radius;
        g.hardware.end_effector = effector;
        g.hardware.motor_tier = Tier::new(3).unwrap();
        g.hardware.torque_setpoint = 1.0;
        g.hardware.battery_setpoint = 1.0;
        g
    }

    fn robot(pos: Vec2, radius: f64, effector: EndEffector) -> Robot {
        let g = genome(radius, effector);
        Robot::from_genome(
            &g,
            Arc::new(g.behavior.compile()),
            &HardwareModel::default(),
            pos,
            0,
            30,
        )
    }

    fn package(id: u32, pos: Vec2, kind: PackageKind, shape: Shape, weight: f64, grips: usize) -> Package {
        let grips = match kind {
            PackageKind::Individual => vec![GripPoint {
                offset: Vec2::ZERO,
                effector: shape.effector(),
                occupied_by: None,
            }],
            PackageKind::Collaborative => (0..grips)
                .map(|k| GripPoint {
                    offset: Vec2::from_angle(std::f64::consts::TAU * k as f64 / grips as f64) * 0.7,
                    effector: shape.effector(),
                    occupied_by: None,
                })
                .collect(),
        };
        Package {
            id,
            pos,
            vel: Vec2::ZERO,
            radius: 0.2,
            weight,
            shape,
            kind,
            grips,
            delivered: false,
            initial_base_distance: pos.distance(Vec2::new(5.0, 5.0)),
            ever_lifted: false,
        }
    }

    fn world(robots: Vec<Robot>, packages: Vec<Package>) -> World {
        let mut w = World::empty(
            10.0,
            10.0,
            Base {
                pos: Vec2::new(5.0, 5.0),
                radius: 1.0,
            },
            Vec::new(),
            packages,
            Vec::new(),
            SimConfig::default(),
            from_seed(0),
        );
        w.robots = robots;
        w
    }

    #[test]
    fn pd_equilibrium_and_saturation() {
        let p = Vec2::new(1.0, 2.0);
        assert_eq!(pd_control(p, Vec2::ZERO, p, 4.0, 2.0, 10.0), Vec2::ZERO);
        let f = pd_control(Vec2::ZERO, Vec2::ZERO, Vec2::new(100.0, 0.0), 4.0, 2.0, 10.0);
        assert_eq!(f, Vec2::new(10.0, 0.0));
        assert!((f.length() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn free_robot_moves_by_v_dt() {
        let mut r = robot(Vec2::new(3.0, 3.0), 0.2, EndEffector::Suction);
        r.vel = Vec2::new(0.5, -0.25);
        r.energy = 0.0;
        let mut w = world(vec![r], Vec::new());
        w.step(&[None]);
        assert_eq!(w.robots[0].pos, Vec2::new(3.0 + 0.5 * 0.05, 3.0 - 0.25 * 0.05));
        assert_eq!(w.robots[0].vel, Vec2::new(0.5, -0.25));
    }

    #[test]
    fn equal_masses_exchange_velocity() {
        let (v1, v2) = collide(Vec2::new(1.0, 0.0), 2.0, Vec2::new(-0.5, 0.0), 2.0, Vec2::new(1.0, 0.0), 1.0);
        assert!((v1.x + 0.5).abs() < 1e-9 && (v2.x - 1.0).abs() < 1e-9);

        let mut a = robot(Vec2::new(4.0, 5.0), 0.2, EndEffector::Suction);
        let mut b = robot(Vec2::new(4.39, 5.0), 0.2, EndEffector::Suction);
        a.vel = Vec2::new(1.0, 0.0);
        b.vel = Vec2::new(-1.0, 0.0);
        a.energy = 0.0;
        b.energy = 0.0;
        let mut w = world(vec![a, b], Vec::new());
        w.step(&[None, None]);
        assert!((w.robots[0].vel.x + 1.0).abs() < 1e-9);
        assert!((w.robots[1].vel.x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn carrying_into_base_delivers() {
        let r = robot(Vec2::new(6.3, 5.0), 0.2, EndEffector::Suction);
        let p = package(0, Vec2::new(6.4, 5.0), PackageKind::Individual, Shape::Circle, 1.0, 1);
        let mut w = world(vec![r], vec![p]);
        assert!(w.attempt_pickup(0, 0));
        for _ in 0..200 {
            w.step(&[Some(Command::MoveToBase)]);
        }
        let s = w.finalize_stats();
        assert_eq!((s.delivered, s.picked), (1, 1));
        assert!(w.packages[0].delivered);
        assert!(w.robots[0].hold.is_none());
        assert!(s.closeness_progress.is_empty());
    }

    #[test]
    fn pickup_requires_matching_effector_and_capacity() {
        let r = robot(Vec2::new(2.0, 2.0), 0.2, EndEffector::Suction);
        let cap = r.lift_capacity;
        let square = package(0, Vec2::new(2.3, 2.0), PackageKind::Individual, Shape::Square, 1.0, 1);
        let exact = package(1, Vec2::new(2.0, 2.3), PackageKind::Individual, Shape::Circle, cap, 1);
        let mut w = world(vec![r], vec![square, exact]);
        assert!(!w.attempt_pickup(0, 0));
        assert!(w.attempt_pickup(0, 1));

        let r = robot(Vec2::new(2.0, 2.0), 0.2, EndEffector::Suction);
        let heavy = package(0, Vec2::new(2.3, 2.0), PackageKind::Individual, Shape::Circle, cap + 1e-9, 1);
        let mut w = world(vec![r], vec![heavy]);
        assert!(!w.attempt_pickup(0, 0));
    }

    #[test]
    fn collaborative_package_waits_for_all_grips() {
        let p = package(0, Vec2::new(2.0, 2.0), PackageKind::Collaborative, Shape::Circle, 3.0, 2);
        let g0 = p.pos + p.grips[0].offset;
        let g1 = p.pos + p.grips[1].offset;
        let a = robot(g0, 0.2, EndEffector::Suction);
        let b = robot(g1 + Vec2::new(0.0, 2.0), 0.2, EndEffector::Suction);
        let mut w = world(vec![a, b], vec![p]);
        assert!(w.attempt_pickup(0, 0));
        for _ in 0..50 {
            w.step(&[Some(Command::MoveToBase), None]);
        }
        assert_eq!(w.packages[0].pos, Vec2::new(2.0, 2.0));
        assert_eq!(w.finalize_stats().collab_picked, 0);

        w.robots[1].pos = g1;
        assert!(w.attempt_pickup(1, 0));
        for _ in 0..50 {
            w.step(&[Some(Command::MoveToBase), Some(Command::MoveToBase)]);
        }
        assert!(w.packages[0].pos.distance(Vec2::new(2.0, 2.0)) > 0.1);
        assert_eq!(w.finalize_stats().collab_picked, 1);
    }

    #[test]
    fn proximity_score_at_base_is_ten() {
        let r = robot(Vec2::new(5.0, 5.0), 0.2, EndEffector::Suction);
        let p = package(0, Vec2::new(5.0, 5.2), PackageKind::Individual, Shape::Circle, 1.0, 1);
        let mut w = world(vec![r], vec![p]);
        w.robots[0].hold = Some(Hold { package: 0, grip: 0 });
        w.packages[0].grips[0].occupied_by = Some(0);
        assert_eq!(w.finalize_stats().proximity_scores, vec![10.0]);
    }

    #[test]
    fn unmoved_packages_have_zero_progress() {
        let w = generate_environment(&EnvConfig::default(), &SimConfig::default(), 10, 0.5, 3).unwrap();
        let s = w.finalize_stats();
        assert!(s.closeness_progress.iter().all(|&p| p == 0.0));
        assert_eq!(s.closeness_progress.len(), 16);
    }

    #[test]
    fn energy_never_increases() {
        let mut w = generate_environment(&EnvConfig::default(), &SimConfig::default(), 10, 0.5, 4).unwrap();
        let gs: Vec<Genome> = {
            let mut ids = IdAllocator::default();
            let mut rng = from_seed(5);
            (0..10)
                .map(|_| random_genome(&GenomeConfig::default(), &mut ids, &mut rng).unwrap())
                .collect()
        };
        let slots: Vec<(&Genome, Arc<Program>)> =
            gs.iter().map(|g| (g, Arc::new(g.behavior.compile()))).collect();
        w.insert_robots(&slots);
        for _ in 0..300 {
            let before: Vec<f64> = w.robots.iter().map(|r| r.energy).collect();
            w.tick_all();
            for (r, e) in w.robots.iter().zip(before) {
                assert!(r.energy <= e && r.energy >= 0.0);
            }
        }
    }
}
