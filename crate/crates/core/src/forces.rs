//! Per-particle force models and the plastic/fracture deformation update.
//!
//! Accumulation order is fixed so repeated evaluation is bit-reproducible:
//! gravity, drag, springs by ascending id, pressure by ascending face id (or
//! polygon edge order in 2-D), contacts, external inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{penalty, Collider, Contact, ContactSource, SOFT_CONTACT_DAMPING, SOFT_CONTACT_STIFFNESS};
use crate::model::{
    polygon_area, shell_volume, surface_is_closed, triangle_area_vector, Dimension, Particle,
    ParticleId, SoftBody, Spring, SpringId,
};
use crate::vec3::Vec3;

/// Springs shorter than this have no defined direction.
pub const MIN_SPRING_LENGTH: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceError {
    #[error("spring has zero length")]
    ZeroLength,
    #[error("pressure needs a closed region with positive measure: {0}")]
    NotEnclosed(String),
    #[error("pressure does not apply to 1-D bodies")]
    NotApplicable,
    #[error("invalid force parameters: {0}")]
    InvalidParams(String),
}

impl ForceError {
    pub fn code(&self) -> &'static str {
        match self {
            ForceError::ZeroLength => "ZERO_LENGTH",
            ForceError::NotEnclosed(_) => "NOT_ENCLOSED",
            ForceError::NotApplicable => "NOT_APPLICABLE",
            ForceError::InvalidParams(_) => "INVALID_PARAMS",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ForceParams {
    /// m/s²
    pub gravity: Vec3,
    /// Linear drag, N·s/m.
    pub drag_coefficient: f64,
    /// Overrides the body's own pressure coefficient when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_coefficient: Option<f64>,
    /// Strain above which rest lengths creep toward the current length.
    pub elastic_limit: f64,
    /// Fraction of the excess length absorbed into the rest length per step.
    pub plastic_rate: f64,
    /// Strain above which a spring breaks.
    pub fracture_strain: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        ForceParams {
            gravity: Vec3::new(0.0, -9.81, 0.0),
            drag_coefficient: 0.1,
            pressure_coefficient: None,
            elastic_limit: 1.5,
            plastic_rate: 0.1,
            fracture_strain: 2.5,
        }
    }
}

impl ForceParams {
    /// No gravity, drag or pressure; deformation thresholds at their defaults.
    pub fn zero() -> Self {
        ForceParams {
            gravity: Vec3::ZERO,
            drag_coefficient: 0.0,
            pressure_coefficient: Some(0.0),
            ..ForceParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), ForceError> {
        let err = |m: &str| Err(ForceError::InvalidParams(m.to_string()));
        if !self.gravity.is_finite() {
            return err("gravity must be finite");
        }
        if !(self.drag_coefficient >= 0.0 && self.drag_coefficient.is_finite()) {
            return err("drag coefficient must be non-negative");
        }
        if let Some(kp) = self.pressure_coefficient {
            if !(kp >= 0.0 && kp.is_finite()) {
                return err("pressure coefficient must be non-negative");
            }
        }
        if !(self.elastic_limit >= 1.0 && self.fracture_strain > self.elastic_limit) {
            return err("need 1 <= elastic limit < fracture strain");
        }
        if !(0.0..=1.0).contains(&self.plastic_rate) {
            return err("plastic rate must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn effective_pressure(&self, body: &SoftBody) -> f64 {
        self.pressure_coefficient
            .or(body.pressure_coefficient)
            .unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum InputKind {
    /// Constant force (N) on each target particle.
    ImpulseForce { force: Vec3 },
    /// Spring-like pull `stiffness · (target − x)` on each target particle.
    Drag { target: Vec3, stiffness: f64 },
}

/// Pointer-driven force applied for a number of steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExternalInput {
    #[serde(flatten)]
    pub kind: InputKind,
    pub targets: Vec<ParticleId>,
    pub remaining_steps: u32,
}

impl ExternalInput {
    pub fn impulse(targets: Vec<ParticleId>, force: Vec3, steps: u32) -> Self {
        ExternalInput {
            kind: InputKind::ImpulseForce { force },
            targets,
            remaining_steps: steps,
        }
    }

    pub fn drag(targets: Vec<ParticleId>, target: Vec3, stiffness: f64, steps: u32) -> Self {
        ExternalInput {
            kind: InputKind::Drag { target, stiffness },
            targets,
            remaining_steps: steps,
        }
    }

    fn force_on(&self, p: &Particle) -> Vec3 {
        match self.kind {
            InputKind::ImpulseForce { force } => force,
            InputKind::Drag { target, stiffness } => (target - p.position) * stiffness,
        }
    }
}

/// Counters for conditions that are skipped rather than failing a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ForceDiagnostics {
    pub zero_length_springs: u64,
}

pub fn gravity_force(particle: &Particle, gravity: Vec3) -> Vec3 {
    gravity * particle.mass
}

pub fn drag_force(particle: &Particle, drag_coefficient: f64) -> Vec3 {
    particle.velocity * -drag_coefficient
}

/// Damped Hooke force on the spring's head; the tail receives the negation.
pub fn spring_force_pair(spring: &Spring, particles: &[Particle]) -> Result<(Vec3, Vec3), ForceError> {
    let head = &particles[spring.head];
    let tail = &particles[spring.tail];
    let l = tail.position - head.position;
    let len = l.norm();
    if len < MIN_SPRING_LENGTH {
        return Err(ForceError::ZeroLength);
    }
    let dir = l / len;
    let stretch = spring.hook_constant * (len - spring.rest_len);
    let damping = spring.damping_factor * (tail.velocity - head.velocity).dot(dir);
    let on_head = dir * (stretch + damping);
    Ok((on_head, -on_head))
}

/// Outward pressure force on every particle (indexed by particle id).
///
/// 3-D: each closed face shell encloses volume `V`; pressure `kP / V` pushes
/// each face along its area vector, split evenly over its vertices.
/// 2-D: each outer polygon encloses area `A` (unit depth); pressure `kP / A`
/// pushes each edge along its outward normal, split over its endpoints.
pub fn pressure_forces(body: &SoftBody, pressure_coefficient: f64) -> Result<Vec<Vec3>, ForceError> {
    if body.dimension == Dimension::One {
        return Err(ForceError::NotApplicable);
    }
    let mut out = vec![Vec3::ZERO; body.particles.len()];
    if pressure_coefficient == 0.0 {
        return Ok(out);
    }
    let pos = |i: ParticleId| body.particles[i].position;
    match body.dimension {
        Dimension::Two => {
            let polys = body.outer_polygons();
            if polys.is_empty() {
                return Err(ForceError::NotEnclosed("body has no outer ring".into()));
            }
            for poly in polys {
                if poly.len() < 3 {
                    return Err(ForceError::NotEnclosed("outer ring has fewer than 3 particles".into()));
                }
                let area = polygon_area(poly.iter().map(|&i| pos(i)));
                if !(area > 0.0) {
                    return Err(ForceError::NotEnclosed(format!("enclosed area {area}")));
                }
                let p = pressure_coefficient / area;
                for k in 0..poly.len() {
                    let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                    let d = pos(b) - pos(a);
                    let f = Vec3::new(d.y, -d.x, 0.0) * (p * 0.5);
                    out[a] += f;
                    out[b] += f;
                }
            }
        }
        Dimension::Three => {
            if body.faces.is_empty() {
                return Err(ForceError::NotEnclosed("body has no faces".into()));
            }
            let mut shell_pressure = vec![0.0; body.faces.len()];
            for shell in body.face_shells() {
                if !surface_is_closed(shell.iter().map(|&i| body.faces[i].vertices)) {
                    return Err(ForceError::NotEnclosed("open surface".into()));
                }
                let volume = shell_volume(
                    shell.iter().map(|&i| body.faces[i].vertices.map(pos)),
                );
                if !(volume > 0.0) {
                    return Err(ForceError::NotEnclosed(format!("enclosed volume {volume}")));
                }
                for &i in &shell {
                    shell_pressure[i] = pressure_coefficient / volume;
                }
            }
            for (face, p) in body.faces.iter().zip(shell_pressure) {
                let [a, b, c] = face.vertices;
                let f = triangle_area_vector(pos(a), pos(b), pos(c)) * (p / 3.0);
                out[a] += f;
                out[b] += f;
                out[c] += f;
            }
        }
        Dimension::One => unreachable!(),
    }
    Ok(out)
}

/// Penalty force for a contact, resolving its stiffness and damping from the
/// collider it came from (or the soft-contact defaults for body proxies).
fn contact_force(contact: &Contact, colliders: &[Collider]) -> Vec3 {
    match contact.source {
        ContactSource::Collider(i) => colliders
            .get(i)
            .map(|c| penalty(contact, c.contact_stiffness, c.contact_damping))
            .unwrap_or(Vec3::ZERO),
        ContactSource::Body { .. } => penalty(contact, SOFT_CONTACT_STIFFNESS, SOFT_CONTACT_DAMPING),
    }
}

/// Fill every particle's accumulated force and acceleration.
pub fn accumulate_forces(
    body: &mut SoftBody,
    params: &ForceParams,
    inputs: &[ExternalInput],
    contacts: &[Contact],
    colliders: &[Collider],
    diagnostics: &mut ForceDiagnostics,
) -> Result<(), ForceError> {
    let n = body.particles.len();
    let mut forces: Vec<Vec3> = body
        .particles
        .iter()
        .map(|p| gravity_force(p, params.gravity))
        .collect();
    for (f, p) in forces.iter_mut().zip(&body.particles) {
        *f += drag_force(p, params.drag_coefficient);
    }
    for s in &body.springs {
        match spring_force_pair(s, &body.particles) {
            Ok((on_head, on_tail)) => {
                forces[s.head] += on_head;
                forces[s.tail] += on_tail;
            }
            Err(_) => diagnostics.zero_length_springs += 1,
        }
    }
    let kp = params.effective_pressure(body);
    if kp > 0.0 && body.dimension != Dimension::One {
        for (f, p) in forces.iter_mut().zip(pressure_forces(body, kp)?) {
            *f += p;
        }
    }
    for c in contacts {
        if c.particle >= n {
            continue;
        }
        let f = contact_force(c, colliders);
        forces[c.particle] += f;
        if let ContactSource::Body { part } = c.source {
            let members: Vec<ParticleId> = body
                .layers
                .iter()
                .filter(|l| l.part == part)
                .flat_map(|l| l.particles.iter().copied())
                .collect();
            if !members.is_empty() {
                let share = f / members.len() as f64;
                for m in members {
                    forces[m] -= share;
                }
            }
        }
    }
    for input in inputs {
        for &t in &input.targets {
            if let Some(p) = body.particles.get(t) {
                forces[t] += input.force_on(p);
            }
        }
    }
    let dim = body.dimension;
    for (p, f) in body.particles.iter_mut().zip(forces) {
        p.accumulated_force = dim.mask(f);
        p.acceleration = p.accumulated_force / p.mass;
    }
    Ok(())
}

/// Plastic creep and fracture. Returns the ids of broken springs.
pub fn apply_deformation_model(body: &mut SoftBody, params: &ForceParams) -> Vec<SpringId> {
    let mut broken = Vec::new();
    for i in 0..body.springs.len() {
        let s = &body.springs[i];
        if s.rest_len <= 0.0 {
            continue;
        }
        let len = body.particles[s.head]
            .position
            .distance(body.particles[s.tail].position);
        let strain = len / s.rest_len;
        if strain > params.fracture_strain {
            broken.push(s.id);
        } else if strain > params.elastic_limit {
            let rest = s.rest_len;
            body.springs[i].rest_len = (1.0 - params.plastic_rate) * rest + params.plastic_rate * len;
        }
    }
    for &id in &broken {
        body.remove_spring(id);
    }
    broken
}

/// Kinetic, spring and gravitational potential energy of a body.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Energy {
    pub kinetic: f64,
    pub spring: f64,
    pub gravitational: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.spring + self.gravitational
    }
}

pub fn energy(body: &SoftBody, gravity: Vec3) -> Energy {
    let kinetic = body
        .particles
        .iter()
        .map(|p| 0.5 * p.mass * p.velocity.norm_squared())
        .sum();
    let spring = body
        .springs
        .iter()
        .map(|s| {
            let len = body.particles[s.head]
                .position
                .distance(body.particles[s.tail].position);
            0.5 * s.hook_constant * (len - s.rest_len).powi(2)
        })
        .sum();
    let gravitational = body
        .particles
        .iter()
        .map(|p| -p.mass * gravity.dot(p.position))
        .sum();
    Energy {
        kinetic,
        spring,
        gravitational,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SoftBody, SpringKind};

    fn pair(k: f64, c: f64, tail: Vec3) -> SoftBody {
        let mut b = SoftBody::new(Dimension::Three);
        b.add_particle(1.0, Vec3::ZERO).unwrap();
        b.add_particle(1.0, Vec3::X).unwrap();
        b.add_spring(0, 1, SpringKind::Structural, k, c).unwrap();
        b.particles[1].position = tail;
        b
    }

    #[test]
    fn gravity_and_drag_examples() {
        let mut b = SoftBody::new(Dimension::Three);
        b.add_particle(1.0, Vec3::ZERO).unwrap();
        b.add_particle(0.5, Vec3::ZERO).unwrap();
        let g = Vec3::new(0.0, -10.0, 0.0);
        assert_eq!(gravity_force(&b.particles[0], g), Vec3::new(0.0, -10.0, 0.0));
        assert_eq!(
            gravity_force(&b.particles[1], Vec3::new(0.0, -9.81, 0.0)),
            Vec3::new(0.0, -4.905, 0.0)
        );
        assert_eq!(gravity_force(&b.particles[1], Vec3::ZERO), Vec3::ZERO);

        b.particles[0].velocity = Vec3::new(2.0, 0.0, 0.0);
        assert_eq!(drag_force(&b.particles[0], 0.5), Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(drag_force(&b.particles[0], 0.0).norm(), 0.0);
        assert_eq!(drag_force(&b.particles[1], 0.5).norm(), 0.0);
    }

    #[test]
    fn stretched_spring_pulls_endpoints_together() {
        let b = pair(100.0, 10.0, Vec3::new(1.5, 0.0, 0.0));
        let (h, t) = spring_force_pair(&b.springs[0], &b.particles).unwrap();
        assert_eq!(h, Vec3::new(50.0, 0.0, 0.0));
        assert_eq!(t, Vec3::new(-50.0, 0.0, 0.0));
    }

    #[test]
    fn damping_only_at_rest_length() {
        let mut b = pair(100.0, 10.0, Vec3::X);
        b.particles[1].velocity = Vec3::X;
        let (h, t) = spring_force_pair(&b.springs[0], &b.particles).unwrap();
        assert_eq!(h, Vec3::new(10.0, 0.0, 0.0));
        assert_eq!(t, -h);

        b.particles[1].velocity = Vec3::ZERO;
        let (h, t) = spring_force_pair(&b.springs[0], &b.particles).unwrap();
        assert_eq!((h.norm(), t.norm()), (0.0, 0.0));
    }

    #[test]
    fn zero_length_spring_is_counted_not_fatal() {
        let mut b = pair(100.0, 1.0, Vec3::ZERO);
        assert_eq!(
            spring_force_pair(&b.springs[0], &b.particles),
            Err(ForceError::ZeroLength)
        );
        let mut diag = ForceDiagnostics::default();
        accumulate_forces(&mut b, &ForceParams::zero(), &[], &[], &[], &mut diag).unwrap();
        assert_eq!(diag.zero_length_springs, 1);
        assert!(b.particles.iter().all(|p| p.accumulated_force == Vec3::ZERO));
    }

    #[test]
    fn isolated_particle_under_gravity() {
        let mut b = SoftBody::new(Dimension::Three);
        b.add_particle(2.0, Vec3::ZERO).unwrap();
        let params = ForceParams {
            drag_coefficient: 0.0,
            ..ForceParams::default()
        };
        b.pressure_coefficient = Some(0.0);
        accumulate_forces(&mut b, &params, &[], &[], &[], &mut ForceDiagnostics::default()).unwrap();
        assert_eq!(b.particles[0].accumulated_force, Vec3::new(0.0, -19.62, 0.0));
        assert_eq!(b.particles[0].acceleration, Vec3::new(0.0, -9.81, 0.0));
    }

    #[test]
    fn accumulators_match_pair_values() {
        let mut b = pair(100.0, 10.0, Vec3::new(1.5, 0.0, 0.0));
        accumulate_forces(&mut b, &ForceParams::zero(), &[], &[], &[], &mut ForceDiagnostics::default()).unwrap();
        assert_eq!(b.particles[0].accumulated_force, Vec3::new(50.0, 0.0, 0.0));
        assert_eq!(b.particles[1].accumulated_force, Vec3::new(-50.0, 0.0, 0.0));
    }

    #[test]
    fn pressure_not_applicable_in_one_d() {
        let b = SoftBody::new(Dimension::One);
        assert_eq!(pressure_forces(&b, 1.0), Err(ForceError::NotApplicable));
    }

    #[test]
    fn impulse_input_adds_force() {
        let mut b = SoftBody::new(Dimension::Three);
        b.add_particle(0.03125, Vec3::ZERO).unwrap();
        let input = ExternalInput::impulse(vec![0], Vec3::new(0.0, 50.0, 0.0), 1);
        accumulate_forces(&mut b, &ForceParams::zero(), &[input], &[], &[], &mut ForceDiagnostics::default()).unwrap();
        assert_eq!(b.particles[0].acceleration, Vec3::new(0.0, 1600.0, 0.0));
    }

    #[test]
    fn drag_input_pulls_toward_target() {
        let mut b = SoftBody::new(Dimension::Three);
        b.add_particle(1.0, Vec3::ZERO).unwrap();
        let input = ExternalInput::drag(vec![0], Vec3::new(0.0, 2.0, 0.0), 3.0, 5);
        accumulate_forces(&mut b, &ForceParams::zero(), &[input], &[], &[], &mut ForceDiagnostics::default()).unwrap();
        assert_eq!(b.particles[0].accumulated_force, Vec3::new(0.0, 6.0, 0.0));
    }

    #[test]
    fn plastic_creep_and_fracture() {
        let params = ForceParams {
            elastic_limit: 1.5,
            fracture_strain: 2.5,
            plastic_rate: 0.5,
            ..ForceParams::default()
        };
        let mut b = pair(1.0, 0.0, Vec3::new(1.8, 0.0, 0.0));
        assert!(apply_deformation_model(&mut b, &params).is_empty());
        assert!((b.springs[0].rest_len - 1.4).abs() < 1e-15);

        let mut b = pair(1.0, 0.0, Vec3::new(2.6, 0.0, 0.0));
        let id = b.springs[0].id;
        assert_eq!(apply_deformation_model(&mut b, &params), vec![id]);
        assert!(b.springs.is_empty());

        let mut b = pair(1.0, 0.0, Vec3::new(1.5, 0.0, 0.0));
        apply_deformation_model(&mut b, &params);
        assert_eq!(b.springs[0].rest_len, 1.0);
    }

    #[test]
    fn force_params_validation() {
        assert!(ForceParams::default().validate().is_ok());
        let bad = ForceParams {
            elastic_limit: 3.0,
            ..ForceParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = ForceParams {
            plastic_rate: 1.5,
            ..ForceParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
