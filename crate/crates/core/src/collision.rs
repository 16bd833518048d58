//! Static colliders, contact detection and penalty response.
//!
//! Two detectors ship: `bruteForce` tests every particle against every
//! collider; `sweepAndPrune` culls colliders against the body's bounding box
//! and walks particles sorted along x. Both return identical contact lists.
//!
//! Bodies built by attaching several bodies also collide part against part:
//! each part is approximated by a bounding sphere, and boundary particles of
//! one part inside another part's sphere get a penalty contact.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LayerLabel, ParticleId, SoftBody};
use crate::vec3::Vec3;

pub const DEFAULT_CONTACT_STIFFNESS: f64 = 1000.0;
pub const DEFAULT_CONTACT_DAMPING: f64 = 5.0;
/// Penalty constants used between parts of one body.
pub const SOFT_CONTACT_STIFFNESS: f64 = DEFAULT_CONTACT_STIFFNESS;
pub const SOFT_CONTACT_DAMPING: f64 = DEFAULT_CONTACT_DAMPING;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColliderError {
    #[error("half-space normal must be unit length, |n| = {0}")]
    NonUnitNormal(f64),
    #[error("sphere radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("contact constants must be non-negative")]
    NegativeConstant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind", content = "params")]
pub enum ColliderShape {
    HalfSpace { point: Vec3, normal: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collider {
    #[serde(flatten)]
    pub shape: ColliderShape,
    /// N/m
    #[serde(rename = "kc")]
    pub contact_stiffness: f64,
    /// N·s/m
    #[serde(rename = "kd")]
    pub contact_damping: f64,
}

impl Collider {
    /// Half-space bounded by the plane through `point`; `normal` points out of
    /// the solid side and is normalized here.
    pub fn half_space(point: Vec3, normal: Vec3) -> Collider {
        Collider {
            shape: ColliderShape::HalfSpace {
                point,
                normal: normal.try_normalize(1e-300).unwrap_or(Vec3::Y),
            },
            contact_stiffness: DEFAULT_CONTACT_STIFFNESS,
            contact_damping: DEFAULT_CONTACT_DAMPING,
        }
    }

    pub fn sphere(center: Vec3, radius: f64) -> Collider {
        Collider {
            shape: ColliderShape::Sphere { center, radius },
            contact_stiffness: DEFAULT_CONTACT_STIFFNESS,
            contact_damping: DEFAULT_CONTACT_DAMPING,
        }
    }

    /// Ground plane `y = 0`.
    pub fn ground() -> Collider {
        Collider::half_space(Vec3::ZERO, Vec3::Y)
    }

    pub fn with_constants(mut self, stiffness: f64, damping: f64) -> Collider {
        self.contact_stiffness = stiffness;
        self.contact_damping = damping;
        self
    }

    pub fn validate(&self) -> Result<(), ColliderError> {
        match self.shape {
            ColliderShape::HalfSpace { normal, .. } => {
                let n = normal.norm();
                if (n - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(ColliderError::NonUnitNormal(n));
                }
            }
            ColliderShape::Sphere { radius, .. } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(ColliderError::NonPositiveRadius(radius));
                }
            }
        }
        if !(self.contact_stiffness >= 0.0 && self.contact_damping >= 0.0) {
            return Err(ColliderError::NegativeConstant);
        }
        Ok(())
    }

    /// Contact geometry for one point: `Some((depth, normal))` when strictly
    /// inside, `Err(())` when the normal is undefined (sphere centre).
    fn probe(&self, x: Vec3) -> Result<Option<(f64, Vec3)>, ()> {
        match self.shape {
            ColliderShape::HalfSpace { point, normal } => {
                let d = (x - point).dot(normal);
                Ok((d < 0.0).then_some((-d, normal)))
            }
            ColliderShape::Sphere { center, radius } => {
                let r = x - center;
                let dist = r.norm();
                if dist >= radius {
                    return Ok(None);
                }
                if dist == 0.0 {
                    return Err(());
                }
                Ok(Some((radius - dist, r / dist)))
            }
        }
    }
}

/// Where a contact came from. Collider contacts sort before body-proxy ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ContactSource {
    Collider(usize),
    /// Bounding-sphere proxy of another part of the same body.
    Body { part: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Contact {
    pub particle: ParticleId,
    pub source: ContactSource,
    /// Always > 0.
    pub penetration_depth: f64,
    /// Unit, pointing out of the obstacle.
    pub normal: Vec3,
    /// Particle velocity relative to the obstacle along `normal`; negative
    /// while approaching.
    pub relative_normal_velocity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Detection {
    pub contacts: Vec<Contact>,
    /// Particles sitting exactly at a sphere centre, skipped.
    pub degenerate_normals: u64,
}

fn contact_order(a: &Contact, b: &Contact) -> Ordering {
    (a.particle, a.source).cmp(&(b.particle, b.source))
}

/// Penalty force `kc·depth·n − kd·min(vn, 0)·n`, never pulling inward.
pub fn penalty(contact: &Contact, stiffness: f64, damping: f64) -> Vec3 {
    let magnitude = stiffness * contact.penetration_depth
        - damping * contact.relative_normal_velocity.min(0.0);
    contact.normal * magnitude.max(0.0)
}

pub fn penalty_force(contact: &Contact, collider: &Collider) -> Vec3 {
    penalty(contact, collider.contact_stiffness, collider.contact_damping)
}

fn push_contact(
    out: &mut Detection,
    body: &SoftBody,
    particle: ParticleId,
    index: usize,
    collider: &Collider,
) {
    let p = &body.particles[particle];
    match collider.probe(p.position) {
        Ok(Some((depth, normal))) => out.contacts.push(Contact {
            particle,
            source: ContactSource::Collider(index),
            penetration_depth: depth,
            normal,
            relative_normal_velocity: p.velocity.dot(normal),
        }),
        Ok(None) => {}
        Err(()) => out.degenerate_normals += 1,
    }
}

/// Every particle against every collider.
pub fn detect_contacts(body: &SoftBody, colliders: &[Collider]) -> Detection {
    let mut out = Detection::default();
    for i in 0..body.particles.len() {
        for (ci, collider) in colliders.iter().enumerate() {
            push_contact(&mut out, body, i, ci, collider);
        }
    }
    out.contacts.extend(part_contacts(body));
    out.contacts.sort_by(contact_order);
    out
}

/// Bounding-box culling plus an x-sorted sweep for spheres.
pub fn detect_contacts_sweep(body: &SoftBody, colliders: &[Collider]) -> Detection {
    let mut out = Detection::default();
    if body.particles.is_empty() {
        return out;
    }
    let (lo, hi) = bounds(body.particles.iter().map(|p| p.position));
    let mut by_x: Vec<ParticleId> = (0..body.particles.len()).collect();
    by_x.sort_by(|&a, &b| {
        body.particles[a]
            .position
            .x
            .total_cmp(&body.particles[b].position.x)
            .then(a.cmp(&b))
    });
    for (ci, collider) in colliders.iter().enumerate() {
        match collider.shape {
            ColliderShape::HalfSpace { point, normal } => {
                // support point of the box in the −normal direction
                let support = Vec3::new(
                    if normal.x > 0.0 { lo.x } else { hi.x },
                    if normal.y > 0.0 { lo.y } else { hi.y },
                    if normal.z > 0.0 { lo.z } else { hi.z },
                );
                if (support - point).dot(normal) >= 0.0 {
                    continue;
                }
                for i in 0..body.particles.len() {
                    push_contact(&mut out, body, i, ci, collider);
                }
            }
            ColliderShape::Sphere { center, radius } => {
                let outside = (0..3).any(|axis| {
                    let (c, l, h) = match axis {
                        0 => (center.x, lo.x, hi.x),
                        1 => (center.y, lo.y, hi.y),
                        _ => (center.z, lo.z, hi.z),
                    };
                    c + radius < l || c - radius > h
                });
                if outside {
                    continue;
                }
                let start = by_x.partition_point(|&i| body.particles[i].position.x < center.x - radius);
                for &i in &by_x[start..] {
                    if body.particles[i].position.x > center.x + radius {
                        break;
                    }
                    push_contact(&mut out, body, i, ci, collider);
                }
            }
        }
    }
    out.contacts.extend(part_contacts(body));
    out.contacts.sort_by(contact_order);
    out
}

fn bounds(points: impl Iterator<Item = Vec3>) -> (Vec3, Vec3) {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for p in points {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

struct PartProxy {
    part: u32,
    boundary: Vec<ParticleId>,
    center: Vec3,
    velocity: Vec3,
    radius: f64,
}

fn part_proxies(body: &SoftBody) -> Vec<PartProxy> {
    let mut parts: Vec<u32> = body.layers.iter().map(|l| l.part).collect();
    parts.sort_unstable();
    parts.dedup();
    if parts.len() < 2 {
        return Vec::new();
    }
    parts
        .into_iter()
        .filter_map(|part| {
            let layers: Vec<_> = body.layers.iter().filter(|l| l.part == part).collect();
            let members: Vec<ParticleId> =
                layers.iter().flat_map(|l| l.particles.iter().copied()).collect();
            let mut boundary: Vec<ParticleId> = layers
                .iter()
                .filter(|l| l.label == LayerLabel::Outer)
                .flat_map(|l| l.particles.iter().copied())
                .collect();
            if boundary.is_empty() {
                boundary = members.clone();
            }
            let mass: f64 = members.iter().map(|&i| body.particles[i].mass).sum();
            if members.is_empty() || mass <= 0.0 {
                return None;
            }
            let center = members
                .iter()
                .map(|&i| body.particles[i].position * body.particles[i].mass)
                .sum::<Vec3>()
                / mass;
            let velocity = members
                .iter()
                .map(|&i| body.particles[i].velocity * body.particles[i].mass)
                .sum::<Vec3>()
                / mass;
            let radius = boundary
                .iter()
                .map(|&i| body.particles[i].position.distance(center))
                .fold(0.0, f64::max);
            Some(PartProxy {
                part,
                boundary,
                center,
                velocity,
                radius,
            })
        })
        .collect()
}

/// Contacts between boundary particles of one part and the bounding spheres
/// of the other parts.
fn part_contacts(body: &SoftBody) -> Vec<Contact> {
    let proxies = part_proxies(body);
    let mut out = Vec::new();
    for a in &proxies {
        for b in &proxies {
            if a.part == b.part || b.radius <= 0.0 {
                continue;
            }
            for &i in &a.boundary {
                let p = &body.particles[i];
                let r = p.position - b.center;
                let dist = r.norm();
                if dist < b.radius && dist > 0.0 {
                    let normal = r / dist;
                    out.push(Contact {
                        particle: i,
                        source: ContactSource::Body { part: b.part },
                        penetration_depth: b.radius - dist,
                        normal,
                        relative_normal_velocity: (p.velocity - b.velocity).dot(normal),
                    });
                }
            }
        }
    }
    out
}
