use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;

use super::world::{Base, GripPoint, Obstacle, Package, PackageKind, Shape, World};
use super::{EnvConfig, SimConfig, Vec2, WeightLaw};
use crate::error::{Error, Result};
use crate::rng::{self, label};

const MAX_PLACEMENT_TRIES: usize = 2000;
/// Clearance kept between neighboring spawn points and between placed
/// objects (m).
const GAP: f64 = 0.1;

/// Spawn points on concentric rings around the base, innermost first,
/// skipping any that would put a robot of radius `robot_radius` outside the
/// arena.
fn spawn_ring(
    base: Vec2,
    base_radius: f64,
    robot_radius: f64,
    width: f64,
    height: f64,
    count: usize,
    phase: f64,
) -> Result<(Vec<Vec2>, f64)> {
    let pitch = 2.0 * robot_radius + GAP;
    let limit = width.hypot(height);
    let mut points = Vec::with_capacity(count);
    let mut ring = 0usize;
    let mut outer = base_radius;
    while points.len() < count {
        let rho = base_radius + robot_radius + GAP + ring as f64 * pitch;
        if rho > limit {
            return Err(Error::Scenario(format!(
                "{count} robots of radius {robot_radius} do not fit around the base in a {width} x {height} arena"
            )));
        }
        let slots = ((TAU * rho / pitch).floor() as usize).max(1);
        for k in 0..slots {
            let p = base + Vec2::from_angle(phase + TAU * k as f64 / slots as f64) * rho;
            let inside = p.x >= robot_radius
                && p.x <= width - robot_radius
                && p.y >= robot_radius
                && p.y <= height - robot_radius;
            if inside && points.len() < count {
                points.push(p);
                outer = rho + robot_radius;
            }
        }
        ring += 1;
    }
    Ok((points, outer))
}

/// Build the package/obstacle layout for one trial. The layout depends only
/// on `seed`, so focal and baseline trials sharing a seed see the same
/// world. Robots are added afterwards with [`World::insert_robots`].
pub fn generate_environment(
    env: &EnvConfig,
    sim: &SimConfig,
    swarm_size: usize,
    robot_radius_max: f64,
    seed: u64,
) -> Result<World> {
    env.validate()?;
    let mut rng = rng::from_seed(seed);
    let a = &env.arena;
    let k = &env.packages;
    let (w, h) = (a.width, a.height);
    let base_pos = a
        .base_position
        .map_or(Vec2::new(w / 2.0, h / 2.0), |[x, y]| Vec2::new(x, y));
    let base = Base {
        pos: base_pos,
        radius: a.base_radius,
    };

    let phase = rng.random_range(0.0..TAU);
    let (spawn_points, spawn_clear) = spawn_ring(
        base_pos,
        a.base_radius,
        robot_radius_max,
        w,
        h,
        swarm_size.max(1),
        phase,
    )?;

    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(a.obstacles as usize);
    for n in 0..a.obstacles {
        let radius = rng.random_range(a.obstacle_radius[0]..=a.obstacle_radius[1]);
        let placed = (0..MAX_PLACEMENT_TRIES).find_map(|_| {
            let pos = Vec2::new(
                rng.random_range(radius..=(w - radius).max(radius)),
                rng.random_range(radius..=(h - radius).max(radius)),
            );
            let clear_of_spawn = pos.distance(base_pos) > spawn_clear + radius + GAP;
            let clear_of_others = obstacles
                .iter()
                .all(|o| pos.distance(o.pos) > o.radius + radius + 2.0 * robot_radius_max);
            (clear_of_spawn && clear_of_others).then_some(pos)
        });
        let Some(pos) = placed else {
            return Err(Error::Scenario(format!(
                "could not place obstacle {n} after {MAX_PLACEMENT_TRIES} attempts"
            )));
        };
        obstacles.push(Obstacle { pos, radius });
    }

    let total = (k.individual + k.collaborative) as usize;
    let squares = (total as f64 * k.square_fraction).round() as usize;
    let mut is_square: Vec<bool> = (0..total).map(|i| i < squares).collect();
    is_square.shuffle(&mut rng);

    let far = [
        Vec2::new(0.0, 0.0),
        Vec2::new(w, 0.0),
        Vec2::new(0.0, h),
        Vec2::new(w, h),
    ]
    .iter()
    .map(|c| c.distance(base_pos))
    .fold(0.0, f64::max);

    let mut packages: Vec<Package> = Vec::with_capacity(total);
    for i in 0..total {
        let kind = if i < k.individual as usize {
            PackageKind::Individual
        } else {
            PackageKind::Collaborative
        };
        let shape = if is_square[i] {
            Shape::Square
        } else {
            Shape::Circle
        };
        let (radius_hint, reach) = match kind {
            PackageKind::Individual => (k.radius[1], k.radius[1]),
            PackageKind::Collaborative => (k.collab_radius, k.collab_radius + 2.0 * robot_radius_max),
        };
        let placed = (0..MAX_PLACEMENT_TRIES).find_map(|_| {
            let m = reach + GAP;
            let pos = Vec2::new(
                rng.random_range(m..=(w - m).max(m)),
                rng.random_range(m..=(h - m).max(m)),
            );
            let ok = pos.distance(base_pos) >= k.min_base_distance.max(a.base_radius + radius_hint)
                && obstacles
                    .iter()
                    .all(|o| pos.distance(o.pos) > o.radius + reach + GAP)
                && packages
                    .iter()
                    .all(|p| pos.distance(p.pos) > p.radius + radius_hint + GAP);
            ok.then_some(pos)
        });
        let Some(pos) = placed else {
            return Err(Error::Scenario(format!(
                "could not place package {i} after {MAX_PLACEMENT_TRIES} attempts"
            )));
        };
        let d = pos.distance(base_pos);

        let (range, radius_range) = match kind {
            PackageKind::Individual => (k.weight, k.radius),
            PackageKind::Collaborative => (k.collab_weight, [k.collab_radius; 2]),
        };
        let [w_min, w_max] = range;
        let weight = match k.weight_law {
            WeightLaw::Uniform => rng.random_range(w_min..=w_max),
            WeightLaw::DistanceBased => {
                let t = (d / far).clamp(0.0, 1.0);
                w_max * (1.0 - t) + w_min * t
            }
        };
        let radius = if w_max > w_min {
            radius_range[0] + (radius_range[1] - radius_range[0]) * (weight - w_min) / (w_max - w_min)
        } else {
            radius_range[0]
        };

        let grips = match kind {
            PackageKind::Individual => vec![GripPoint {
                offset: Vec2::ZERO,
                effector: shape.effector(),
                occupied_by: None,
            }],
            PackageKind::Collaborative => {
                let n = rng.random_range(k.collab_grip_points[0]..=k.collab_grip_points[1]);
                let start = rng.random_range(0.0..TAU);
                (0..n)
                    .map(|j| GripPoint {
                        offset: Vec2::from_angle(start + TAU * f64::from(j) / f64::from(n))
                            * (radius + robot_radius_max),
                        effector: shape.effector(),
                        occupied_by: None,
                    })
                    .collect()
            }
        };
        packages.push(Package {
            id: i as u32,
            pos,
            vel: Vec2::ZERO,
            radius,
            weight,
            shape,
            kind,
            grips,
            delivered: false,
            initial_base_distance: d,
            ever_lifted: false,
        });
    }

    let world_rng = rng::stream(seed, &[label::WORLD]);
    Ok(World::empty(
        w,
        h,
        base,
        obstacles,
        packages,
        spawn_points,
        sim.clone(),
        world_rng,
    ))
}
