//! Genetic compatibility distance, prototype-based species assignment and
//! tag-based partner selection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{Genome, GenomeId, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeciesId(pub u32);

impl fmt::Display for SpeciesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceWeights {
    pub tag: f64,
    pub hardware: f64,
    pub behavior: f64,
    pub tool: f64,
    pub size: f64,
    /// Exponent applied to the normalized Hamming distance of tags.
    pub gamma: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self {
            tag: 1.0,
            hardware: 0.5,
            behavior: 0.3,
            tool: 0.35,
            size: 0.7,
            gamma: 2.0,
        }
    }
}

impl DistanceWeights {
    pub fn validate(&self) -> Result<()> {
        let bad: Vec<String> = [
            ("tag", self.tag),
            ("hardware", self.hardware),
            ("behavior", self.behavior),
            ("tool", self.tool),
            ("size", self.size),
            ("gamma", self.gamma),
        ]
        .iter()
        .filter(|(_, v)| !(*v >= 0.0 && v.is_finite()))
        .map(|(n, v)| format!("speciation.weights.{n} = {v} must be finite and >= 0"))
        .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(bad))
        }
    }
}

/// `(H / L)^gamma` for Hamming distance `H` over tag length `L`.
pub fn tag_distance(a: &Tag, b: &Tag, gamma: f64) -> Result<f64> {
    let h = a.hamming(b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok((h as f64 / a.len() as f64).powf(gamma))
}

/// Euclidean distance over the tier and setpoint genes, each scaled to
/// [0, 1], divided by the square root of the dimension count.
pub fn hardware_distance(a: &Genome, b: &Genome) -> f64 {
    let (ha, hb) = (&a.hardware, &b.hardware);
    let tier = |t: crate::genome::Tier| (f64::from(t.level()) - 1.0) / 2.0;
    let dims = [
        tier(ha.chassis_tier) - tier(hb.chassis_tier),
        tier(ha.battery_tier) - tier(hb.battery_tier),
        tier(ha.motor_tier) - tier(hb.motor_tier),
        ha.torque_setpoint - hb.torque_setpoint,
        ha.battery_setpoint - hb.battery_setpoint,
    ];
    let ss: f64 = dims.iter().map(|d| d * d).sum();
    (ss / dims.len() as f64).sqrt()
}

/// Fraction of positions whose opcodes differ.
pub fn behavior_distance(a: &Genome, b: &Genome) -> Result<f64> {
    let (oa, ob) = (&a.behavior.opcodes, &b.behavior.opcodes);
    if oa.len() != ob.len() {
        return Err(Error::Shape(format!(
            "behavior lengths differ ({} vs {})",
            oa.len(),
            ob.len()
        )));
    }
    if oa.is_empty() {
        return Ok(0.0);
    }
    let diff = oa.iter().zip(ob).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / oa.len() as f64)
}

/// Weighted compatibility distance between two genomes. `radius_span` is
/// the width of the allowed radius range, used to normalize the size term.
pub fn compatibility_distance(
    a: &Genome,
    b: &Genome,
    w: &DistanceWeights,
    radius_span: f64,
) -> Result<f64> {
    let d_tag = tag_distance(&a.tag, &b.tag, w.gamma)?;
    let d_bt = behavior_distance(a, b)?;
    let d_hw = hardware_distance(a, b);
    let d_tool = if a.hardware.end_effector == b.hardware.end_effector {
        0.0
    } else {
        1.0
    };
    let d_size = if radius_span > 0.0 {
        (a.hardware.radius - b.hardware.radius).abs() / radius_span
    } else {
        0.0
    };
    Ok(w.tag * d_tag + w.hardware * d_hw + w.behavior * d_bt + w.tool * d_tool + w.size * d_size)
}

/// Distance settings shared by every speciation call in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Compatibility {
    pub weights: DistanceWeights,
    pub radius_span: f64,
    pub delta: f64,
}

impl Compatibility {
    pub fn distance(&self, a: &Genome, b: &Genome) -> Result<f64> {
        compatibility_distance(a, b, &self.weights, self.radius_span)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub id: SpeciesId,
    pub prototype: Genome,
    pub members: Vec<GenomeId>,
    pub total_adjusted_fitness: f64,
    /// Generations since founding.
    pub age: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeciesPartition {
    /// Ascending by id.
    pub species: Vec<Species>,
    pub assignment: BTreeMap<GenomeId, SpeciesId>,
    next_species_id: u32,
}

impl SpeciesPartition {
    pub fn species_of(&self, id: GenomeId) -> Option<SpeciesId> {
        self.assignment.get(&id).copied()
    }

    pub fn get(&self, id: SpeciesId) -> Option<&Species> {
        self.species
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.species[i])
    }

    pub fn get_mut(&mut self, id: SpeciesId) -> Option<&mut Species> {
        self.species
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(move |i| &mut self.species[i])
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn census(&self) -> BTreeMap<SpeciesId, usize> {
        self.species.iter().map(|s| (s.id, s.members.len())).collect()
    }
}

/// Partition `population` into species.
///
/// Surviving species (ascending id) first claim the unclaimed individual
/// nearest their previous prototype, provided it lies within `delta`; that
/// individual becomes the new prototype. Every remaining individual, in
/// population order, joins the nearest prototype within `delta` (ties go to
/// the lowest species id) or founds a new species. Species that claim no one
/// disappear.
pub fn assign_species(
    population: &[Genome],
    previous: &SpeciesPartition,
    compat: &Compatibility,
) -> Result<SpeciesPartition> {
    let mut claimed = vec![false; population.len()];
    let mut next_species_id = previous.next_species_id;
    let mut species: Vec<Species> = Vec::new();

    for old in &previous.species {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in population.iter().enumerate() {
            if claimed[i] {
                continue;
            }
            let d = compat.distance(&old.prototype, g)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, d)) = best {
            if d <= compat.delta {
                claimed[i] = true;
                species.push(Species {
                    id: old.id,
                    prototype: population[i].clone(),
                    members: vec![population[i].id],
                    total_adjusted_fitness: 0.0,
                    age: old.age + 1,
                });
            }
        }
    }

    for (i, g) in population.iter().enumerate() {
        if claimed[i] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (si, s) in species.iter().enumerate() {
            let d = compat.distance(&s.prototype, g)?;
            let better = match best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && s.id < species[bi].id),
            };
            if better {
                best = Some((si, d));
            }
        }
        match best {
            Some((si, d)) if d <= compat.delta => species[si].members.push(g.id),
            _ => {
                let id = SpeciesId(next_species_id);
                next_species_id += 1;
                species.push(Species {
                    id,
                    prototype: g.clone(),
                    members: vec![g.id],
                    total_adjusted_fitness: 0.0,
                    age: 0,
                });
            }
        }
    }

    species.sort_by_key(|s| s.id);
    let assignment = species
        .iter()
        .flat_map(|s| s.members.iter().map(move |&m| (m, s.id)))
        .collect();
    Ok(SpeciesPartition {
        species,
        assignment,
        next_species_id,
    })
}

/// Species other than the focal's own whose prototype tag lies strictly
/// closer than the focal's selectivity. Ascending species id.
pub fn select_partners(
    focal: &Genome,
    partition: &SpeciesPartition,
    gamma: f64,
) -> Result<Vec<SpeciesId>> {
    let own = partition.species_of(focal.id);
    let mut out = Vec::new();
    for s in &partition.species {
        if Some(s.id) == own {
            continue;
        }
        if tag_distance(&focal.tag, &s.prototype.tag, gamma)? < focal.selectivity {
            out.push(s.id);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{random_genome, EndEffector, GenomeConfig, IdAllocator};
    use crate::rng::from_seed;

    fn compat(delta: f64) -> Compatibility {
        Compatibility {
            weights: DistanceWeights::default(),
            radius_span: GenomeConfig::default().radius_span(),
            delta,
        }
    }

    fn population(n: usize, seed: u64) -> Vec<Genome> {
        let cfg = GenomeConfig::default();
        let mut ids = IdAllocator::default();
        let mut rng = from_seed(seed);
        (0..n)
            .map(|_| random_genome(&cfg, &mut ids, &mut rng).unwrap())
            .collect()
    }

    fn clones(g: &Genome, n: usize, first_id: u64) -> Vec<Genome> {
        (0..n)
            .map(|i| {
                let mut c = g.clone();
                c.id = GenomeId(first_id + i as u64);
                c
            })
            .collect()
    }

    #[test]
    fn tag_distance_examples() {
        let a = Tag::new(vec![false; 16]);
        let b = Tag::new(vec![true; 16]);
        let half = Tag::new((0..16).map(|i| i % 2 == 0).collect());
        assert_eq!(tag_distance(&a, &a, 2.0).unwrap(), 0.0);
        assert_eq!(tag_distance(&a, &b, 2.0).unwrap(), 1.0);
        assert_eq!(tag_distance(&a, &half, 2.0).unwrap(), 0.25);
        assert!(tag_distance(&a, &Tag::new(vec![true; 8]), 2.0).is_err());
    }

    #[test]
    fn effector_only_difference() {
        let a = population(1, 1).remove(0);
        let mut b = a.clone();
        b.hardware.end_effector = a.hardware.end_effector.other();
        let d = compat(0.4).distance(&a, &b).unwrap();
        assert!((d - 0.35).abs() < 1e-12);
    }

    #[test]
    fn opposite_tags_only_difference() {
        let a = population(1, 2).remove(0);
        let mut b = a.clone();
        b.tag = Tag::new(a.tag.bits().iter().map(|x| !x).collect());
        assert!((compat(0.4).distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(compat(0.4).distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn clones_form_one_species() {
        let g = population(1, 3).remove(0);
        let pop = clones(&g, 20, 0);
        let p = assign_species(&pop, &SpeciesPartition::default(), &compat(0.4)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.species[0].members.len(), 20);
    }

    #[test]
    fn two_clusters_form_two_species() {
        let a = population(1, 4).remove(0);
        let mut b = a.clone();
        b.tag = Tag::new(a.tag.bits().iter().map(|x| !x).collect());
        b.hardware.end_effector = EndEffector::Suction;
        let mut a = a;
        a.hardware.end_effector = EndEffector::Pincher;
        let c = compat(0.4);
        assert!((c.distance(&a, &b).unwrap() - 1.35).abs() < 1e-12);
        let mut pop = clones(&a, 5, 0);
        pop.extend(clones(&b, 5, 5));
        let p = assign_species(&pop, &SpeciesPartition::default(), &c).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn infinite_delta_gives_one_species() {
        let pop = population(30, 5);
        let p = assign_species(&pop, &SpeciesPartition::default(), &compat(f64::INFINITY)).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn members_within_delta_and_ids_stable() {
        let c = compat(0.4);
        let pop = population(40, 6);
        let p = assign_species(&pop, &SpeciesPartition::default(), &c).unwrap();
        assert_eq!(p.assignment.len(), pop.len());
        for s in &p.species {
            assert!(s.members.contains(&s.prototype.id));
            for m in &s.members {
                let g = pop.iter().find(|g| g.id == *m).unwrap();
                assert!(c.distance(&s.prototype, g).unwrap() <= c.delta);
            }
        }
        // Same population again: every species keeps its id.
        let again = assign_species(&pop, &p, &c).unwrap();
        assert_eq!(
            p.species.iter().map(|s| s.id).collect::<Vec<_>>(),
            again.species.iter().map(|s| s.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn partner_rules() {
        let a = population(1, 7).remove(0);
        let mut b = a.clone();
        b.id = GenomeId(1);
        b.tag = Tag::new(a.tag.bits().iter().map(|x| !x).collect());
        let c = compat(0.4);
        let p = assign_species(&[a.clone(), b.clone()], &SpeciesPartition::default(), &c).unwrap();
        assert_eq!(p.len(), 2);

        let mut focal = a.clone();
        focal.selectivity = 0.0;
        assert!(select_partners(&focal, &p, 2.0).unwrap().is_empty());
        // Opposite tags: d_tag = 1, never strictly below selectivity 1.
        focal.selectivity = 1.0;
        assert!(select_partners(&focal, &p, 2.0).unwrap().is_empty());

        let mut near = b.clone();
        near.tag = Tag::new(
            a.tag.bits().iter().enumerate().map(|(i, &x)| if i < 4 { !x } else { x }).collect(),
        );
        let p = assign_species(&[a.clone(), near], &SpeciesPartition::default(), &compat(0.01)).unwrap();
        assert_eq!(select_partners(&focal, &p, 2.0).unwrap(), vec![SpeciesId(1)]);

        let single = assign_species(&[a.clone()], &SpeciesPartition::default(), &c).unwrap();
        assert!(select_partners(&focal, &single, 2.0).unwrap().is_empty());
    }
}
