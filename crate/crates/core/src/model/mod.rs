//! Softbody domain types and the operations that build and edit them.
//!
//! A [`SoftBody`] is a set of particles joined by damped springs. Bodies are
//! organized in concentric layers; 2-D and 3-D bodies additionally carry an
//! enclosed region (outer ring polygon or closed triangle surface) on which
//! pressure acts.
//!
//! Particle ids are dense: `body.particles[i].id == i` always holds. Spring and
//! face ids are stable but sparse, because fracture removes springs (and the
//! faces that reference them) during simulation.

mod construct;
mod geometry;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::Vec3;

pub use construct::{
    create_default_soft_body, create_soft_body, sphere_resolution, CreationParams,
    DeformationRange, MassSpec, SpringConstants,
};
pub use geometry::{polygon_area, shell_volume, surface_is_closed, triangle_area_vector};

pub type ParticleId = usize;
pub type SpringId = u64;
pub type FaceId = u64;
pub type Rgb = [f64; 3];

/// Identity of a body. Fresh ids come from a process-wide counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BodyId(pub u64);

static NEXT_BODY_ID: AtomicU64 = AtomicU64::new(1);

impl BodyId {
    pub fn fresh() -> BodyId {
        BodyId(NEXT_BODY_ID.fetch_add(1, Ordering::Relaxed))
    }
}

impl fmt::Display for BodyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("spring endpoints must differ (particle {0})")]
    SelfLoop(ParticleId),
    #[error("unknown particle {0}")]
    UnknownParticle(String),
    #[error("1-D bodies cannot have faces")]
    DimensionForbidsFace,
    #[error("face repeats a vertex: {0:?}")]
    DegenerateFace([ParticleId; 3]),
    #[error("attached particles must come from two different objects")]
    SameObject,
    #[error("volume is only defined for 3-D bodies")]
    NotVolumetric,
    #[error("face set does not form a closed oriented surface")]
    OpenSurface,
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::InvalidParams(_) => "INVALID_PARAMS",
            ModelError::SelfLoop(_) => "SELF_LOOP",
            ModelError::UnknownParticle(_) => "UNKNOWN_PARTICLE",
            ModelError::DimensionForbidsFace => "DIMENSION_FORBIDS_FACE",
            ModelError::DegenerateFace(_) => "DEGENERATE_FACE",
            ModelError::SameObject => "SAME_OBJECT",
            ModelError::NotVolumetric => "NOT_VOLUMETRIC",
            ModelError::OpenSurface => "OPEN_SURFACE",
            ModelError::InvariantViolation(_) => "INVARIANT_VIOLATION",
        }
    }
}

/// Spatial dimension of a body. Vectors of lower-dimensional bodies are masked
/// so the unused components stay exactly zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dimension {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Dimension {
    pub fn mask(self, v: Vec3) -> Vec3 {
        match self {
            Dimension::One => Vec3::new(v.x, 0.0, 0.0),
            Dimension::Two => Vec3::new(v.x, v.y, 0.0),
            Dimension::Three => v,
        }
    }

    pub fn value(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Dimension {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Dimension::One),
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            other => Err(format!("dimension must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<Dimension> for u8 {
    fn from(d: Dimension) -> u8 {
        d.value()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Particle {
    pub id: ParticleId,
    pub mass: f64,
    pub position: Vec3,
    #[serde(default)]
    pub velocity: Vec3,
    #[serde(skip)]
    pub acceleration: Vec3,
    #[serde(skip)]
    pub accumulated_force: Vec3,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pinned: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SpringKind {
    /// Within a layer.
    Structural,
    /// Between corresponding particles of adjacent layers.
    Radius,
    /// Diagonal bracing between adjacent layers.
    Shear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Spring {
    pub id: SpringId,
    pub head: ParticleId,
    pub tail: ParticleId,
    pub kind: SpringKind,
    pub rest_len: f64,
    #[serde(rename = "k")]
    pub hook_constant: f64,
    #[serde(rename = "c")]
    pub damping_factor: f64,
    /// Average of adjacent face normals, or an arbitrary perpendicular when the
    /// spring borders no face. Not used by the force model.
    #[serde(skip)]
    pub normal: Vec3,
}

impl Spring {
    pub fn connects(&self, a: ParticleId, b: ParticleId) -> bool {
        (self.head == a && self.tail == b) || (self.head == b && self.tail == a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Face {
    pub id: FaceId,
    /// Outward (counter-clockwise seen from outside) winding.
    pub vertices: [ParticleId; 3],
    pub springs: [SpringId; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LayerLabel {
    Outer,
    Inner,
    Middle(u32),
}

/// One concentric shell. For 2-D bodies the particle order of an outer layer
/// is the counter-clockwise boundary polygon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Layer {
    pub label: LayerLabel,
    /// Index of the originating body; attaching bodies keeps their layers
    /// apart so each part keeps its own enclosed region.
    #[serde(default)]
    pub part: u32,
    pub particles: Vec<ParticleId>,
}

/// Reference to a particle of a specific body, used when attaching bodies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParticleRef {
    pub body: BodyId,
    pub particle: ParticleId,
}

impl ParticleRef {
    pub fn new(body: BodyId, particle: ParticleId) -> Self {
        Self { body, particle }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftBody {
    pub id: BodyId,
    pub dimension: Dimension,
    pub layers: Vec<Layer>,
    pub particles: Vec<Particle>,
    /// Sorted by ascending id.
    pub springs: Vec<Spring>,
    /// Sorted by ascending id.
    pub faces: Vec<Face>,
    /// Present iff `dimension >= 2`.
    pub pressure_coefficient: Option<f64>,
    pub color: Rgb,
    next_spring_id: SpringId,
    next_face_id: FaceId,
}

/// Result of [`attach_objects`]: the combined body and the id maps from each
/// source body's particle ids to ids in the combined body.
#[derive(Clone, Debug)]
pub struct Attachment {
    pub body: SoftBody,
    pub a_map: Vec<ParticleId>,
    pub b_map: Vec<ParticleId>,
    pub new_springs: Vec<SpringId>,
}

pub const DEFAULT_PRESSURE_COEFFICIENT: f64 = 5.0;
pub const DEFAULT_COLOR: Rgb = [0.8, 0.2, 0.2];

impl SoftBody {
    /// An empty body with a single outer layer and no particles.
    pub fn new(dimension: Dimension) -> SoftBody {
        SoftBody {
            id: BodyId::fresh(),
            dimension,
            layers: vec![Layer {
                label: LayerLabel::Outer,
                part: 0,
                particles: Vec::new(),
            }],
            particles: Vec::new(),
            springs: Vec::new(),
            faces: Vec::new(),
            pressure_coefficient: (dimension >= Dimension::Two)
                .then_some(DEFAULT_PRESSURE_COEFFICIENT),
            color: DEFAULT_COLOR,
            next_spring_id: 0,
            next_face_id: 0,
        }
    }

    /// Assemble a body from raw parts, validating every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        id: BodyId,
        dimension: Dimension,
        layers: Vec<Layer>,
        particles: Vec<Particle>,
        springs: Vec<Spring>,
        faces: Vec<Face>,
        pressure_coefficient: Option<f64>,
        color: Rgb,
    ) -> Result<SoftBody, ModelError> {
        let next_spring_id = springs.iter().map(|s| s.id + 1).max().unwrap_or(0);
        let next_face_id = faces.iter().map(|f| f.id + 1).max().unwrap_or(0);
        let mut body = SoftBody {
            id,
            dimension,
            layers,
            particles,
            springs,
            faces,
            pressure_coefficient,
            color,
            next_spring_id,
            next_face_id,
        };
        body.validate()?;
        body.refresh_spring_normals();
        Ok(body)
    }

    pub fn particle_count(&self) -> usize {
        self.particles.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    /// Mass-weighted centroid of all particles.
    pub fn centroid(&self) -> Vec3 {
        let m = self.total_mass();
        if m <= 0.0 {
            return Vec3::ZERO;
        }
        self.particles.iter().map(|p| p.position * p.mass).sum::<Vec3>() / m
    }

    /// Mass-weighted average velocity.
    pub fn average_velocity(&self) -> Vec3 {
        let m = self.total_mass();
        if m <= 0.0 {
            return Vec3::ZERO;
        }
        self.momentum() / m
    }

    pub fn momentum(&self) -> Vec3 {
        self.particles.iter().map(|p| p.velocity * p.mass).sum()
    }

    pub fn spring(&self, id: SpringId) -> Option<&Spring> {
        self.springs
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.springs[i])
    }

    pub fn spring_mut(&mut self, id: SpringId) -> Option<&mut Spring> {
        self.springs
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(move |i| &mut self.springs[i])
    }

    fn check_particle(&self, id: ParticleId) -> Result<(), ModelError> {
        if id < self.particles.len() {
            Ok(())
        } else {
            Err(ModelError::UnknownParticle(id.to_string()))
        }
    }

    /// Append a free particle to the first layer.
    pub fn add_particle(&mut self, mass: f64, position: Vec3) -> Result<ParticleId, ModelError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(ModelError::InvalidParams(format!("mass must be positive, got {mass}")));
        }
        if !position.is_finite() {
            return Err(ModelError::InvalidParams("position must be finite".into()));
        }
        let id = self.particles.len();
        self.particles.push(Particle {
            id,
            mass,
            position: self.dimension.mask(position),
            velocity: Vec3::ZERO,
            acceleration: Vec3::ZERO,
            accumulated_force: Vec3::ZERO,
            pinned: false,
        });
        if self.layers.is_empty() {
            self.layers.push(Layer {
                label: LayerLabel::Outer,
                part: 0,
                particles: Vec::new(),
            });
        }
        self.layers[0].particles.push(id);
        Ok(id)
    }

    /// Add a spring whose rest length is the current endpoint distance.
    /// Duplicate springs between the same pair are allowed.
    pub fn add_spring(
        &mut self,
        head: ParticleId,
        tail: ParticleId,
        kind: SpringKind,
        hook_constant: f64,
        damping_factor: f64,
    ) -> Result<SpringId, ModelError> {
        if head == tail {
            return Err(ModelError::SelfLoop(head));
        }
        self.check_particle(head)?;
        self.check_particle(tail)?;
        if !(hook_constant >= 0.0 && hook_constant.is_finite())
            || !(damping_factor >= 0.0 && damping_factor.is_finite())
        {
            return Err(ModelError::InvalidParams(
                "hook constant and damping factor must be non-negative".into(),
            ));
        }
        let rest_len = self.particles[head].position.distance(self.particles[tail].position);
        let id = self.next_spring_id;
        self.next_spring_id += 1;
        let mut spring = Spring {
            id,
            head,
            tail,
            kind,
            rest_len,
            hook_constant,
            damping_factor,
            normal: Vec3::ZERO,
        };
        spring.normal = self.fallback_normal(&spring);
        self.springs.push(spring);
        Ok(id)
    }

    /// Add a triangular face. Edges without a spring get a new structural
    /// spring with the default structural constants.
    pub fn add_face(
        &mut self,
        v1: ParticleId,
        v2: ParticleId,
        v3: ParticleId,
    ) -> Result<FaceId, ModelError> {
        if self.dimension == Dimension::One {
            return Err(ModelError::DimensionForbidsFace);
        }
        let vertices = [v1, v2, v3];
        for &v in &vertices {
            self.check_particle(v)?;
        }
        if v1 == v2 || v2 == v3 || v1 == v3 {
            return Err(ModelError::DegenerateFace(vertices));
        }
        let defaults = SpringConstants::default_stiffness();
        let damping = SpringConstants::default_damping();
        let mut springs = [0; 3];
        for (slot, (a, b)) in [(v1, v2), (v2, v3), (v3, v1)].into_iter().enumerate() {
            springs[slot] = match self.springs.iter().find(|s| s.connects(a, b)) {
                Some(s) => s.id,
                None => self.add_spring(
                    a,
                    b,
                    SpringKind::Structural,
                    defaults.structural,
                    damping.structural,
                )?,
            };
        }
        let id = self.next_face_id;
        self.next_face_id += 1;
        self.faces.push(Face { id, vertices, springs });
        self.refresh_spring_normals();
        Ok(id)
    }

    /// Remove a spring and every face that references it. Returns the removed
    /// face ids.
    pub fn remove_spring(&mut self, id: SpringId) -> Vec<FaceId> {
        let Ok(idx) = self.springs.binary_search_by_key(&id, |s| s.id) else {
            return Vec::new();
        };
        self.springs.remove(idx);
        let mut removed = Vec::new();
        self.faces.retain(|f| {
            if f.springs.contains(&id) {
                removed.push(f.id);
                false
            } else {
                true
            }
        });
        removed
    }

    pub fn apply_dimension_mask(&mut self) {
        let dim = self.dimension;
        for p in &mut self.particles {
            p.position = dim.mask(p.position);
            p.velocity = dim.mask(p.velocity);
            p.acceleration = dim.mask(p.acceleration);
            p.accumulated_force = dim.mask(p.accumulated_force);
        }
    }

    /// Pin or unpin a particle. Pinning zeroes its velocity.
    pub fn set_pinned(&mut self, id: ParticleId, pinned: bool) -> Result<(), ModelError> {
        self.check_particle(id)?;
        let p = &mut self.particles[id];
        p.pinned = pinned;
        if pinned {
            p.velocity = Vec3::ZERO;
        }
        Ok(())
    }

    /// Face indices grouped into connected shells (faces sharing a vertex).
    pub fn face_shells(&self) -> Vec<Vec<usize>> {
        geometry::face_shells(&self.faces, self.particles.len())
    }

    /// Boundary polygons of 2-D bodies: one per outer layer, in layer order.
    pub fn outer_polygons(&self) -> Vec<&[ParticleId]> {
        self.layers
            .iter()
            .filter(|l| l.label == LayerLabel::Outer)
            .map(|l| l.particles.as_slice())
            .collect()
    }

    /// Enclosed measure: volume of the face surface (3-D) or signed area of the
    /// outer polygons times unit depth (2-D).
    pub fn enclosed_measure(&self) -> Result<f64, ModelError> {
        match self.dimension {
            Dimension::One => Err(ModelError::NotVolumetric),
            Dimension::Two => {
                let polys = self.outer_polygons();
                if polys.is_empty() || polys.iter().any(|p| p.len() < 3) {
                    return Err(ModelError::OpenSurface);
                }
                Ok(polys
                    .iter()
                    .map(|poly| polygon_area(poly.iter().map(|&i| self.particles[i].position)))
                    .sum())
            }
            Dimension::Three => compute_volume(self),
        }
    }

    /// Recompute every spring's cached normal from its adjacent faces.
    pub fn refresh_spring_normals(&mut self) {
        let mut sums: HashMap<SpringId, Vec3> = HashMap::new();
        for f in &self.faces {
            let [a, b, c] = f.vertices;
            let n = triangle_area_vector(
                self.particles[a].position,
                self.particles[b].position,
                self.particles[c].position,
            );
            if let Some(u) = n.try_normalize(1e-300) {
                for s in f.springs {
                    *sums.entry(s).or_insert(Vec3::ZERO) += u;
                }
            }
        }
        for i in 0..self.springs.len() {
            let from_faces = sums
                .get(&self.springs[i].id)
                .and_then(|n| n.try_normalize(1e-12));
            let normal = match from_faces {
                Some(n) => n,
                None => self.fallback_normal(&self.springs[i]),
            };
            self.springs[i].normal = normal;
        }
    }

    fn fallback_normal(&self, s: &Spring) -> Vec3 {
        let (Some(h), Some(t)) = (self.particles.get(s.head), self.particles.get(s.tail)) else {
            return Vec3::Y;
        };
        let Some(d) = (t.position - h.position).try_normalize(1e-12) else {
            return Vec3::Y;
        };
        d.cross(Vec3::Z)
            .try_normalize(1e-6)
            .or_else(|| d.cross(Vec3::X).try_normalize(1e-6))
            .unwrap_or(Vec3::Y)
    }

    /// Check every structural invariant of the body.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvariantViolation(m));
        let n = self.particles.len();
        for (i, p) in self.particles.iter().enumerate() {
            if p.id != i {
                return bad(format!("particle at index {i} has id {}", p.id));
            }
            if !(p.mass > 0.0 && p.mass.is_finite()) {
                return bad(format!("particle {i} has non-positive mass"));
            }
            if !p.position.is_finite() || !p.velocity.is_finite() {
                return bad(format!("particle {i} has non-finite state"));
            }
            if self.dimension.mask(p.position) != p.position
                || self.dimension.mask(p.velocity) != p.velocity
            {
                return bad(format!(
                    "particle {i} has components outside a {}-D body",
                    self.dimension.value()
                ));
            }
        }
        for w in self.springs.windows(2) {
            if w[0].id >= w[1].id {
                return bad("spring ids must be strictly increasing".into());
            }
        }
        for s in &self.springs {
            if s.head == s.tail {
                return bad(format!("spring {} is a self loop", s.id));
            }
            if s.head >= n || s.tail >= n {
                return bad(format!("spring {} references an unknown particle", s.id));
            }
            if !(s.rest_len >= 0.0 && s.hook_constant >= 0.0 && s.damping_factor >= 0.0) {
                return bad(format!("spring {} has a negative constant", s.id));
            }
        }
        if self.dimension == Dimension::One {
            if !self.faces.is_empty() {
                return bad("a 1-D body cannot have faces".into());
            }
            if self.pressure_coefficient.is_some() {
                return bad("a 1-D body cannot carry a pressure coefficient".into());
            }
        }
        for w in self.faces.windows(2) {
            if w[0].id >= w[1].id {
                return bad("face ids must be strictly increasing".into());
            }
        }
        for f in &self.faces {
            let [a, b, c] = f.vertices;
            if a >= n || b >= n || c >= n {
                return bad(format!("face {} references an unknown particle", f.id));
            }
            if a == b || b == c || a == c {
                return bad(format!("face {} repeats a vertex", f.id));
            }
            for (edge, sid) in [(a, b), (b, c), (c, a)].into_iter().zip(f.springs) {
                match self.spring(sid) {
                    Some(s) if s.connects(edge.0, edge.1) => {}
                    _ => return bad(format!("face {} spring {sid} does not match its edge", f.id)),
                }
            }
        }
        for l in &self.layers {
            if l.particles.iter().any(|&p| p >= n) {
                return bad("layer references an unknown particle".into());
            }
        }
        if let Some(kp) = self.pressure_coefficient {
            if !(kp >= 0.0 && kp.is_finite()) {
                return bad("pressure coefficient must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Signed volume of the body's face surface, positive for outward winding.
pub fn compute_volume(body: &SoftBody) -> Result<f64, ModelError> {
    if body.dimension != Dimension::Three {
        return Err(ModelError::NotVolumetric);
    }
    if body.faces.is_empty() || !surface_is_closed(body.faces.iter().map(|f| f.vertices)) {
        return Err(ModelError::OpenSurface);
    }
    let pos = |i: ParticleId| body.particles[i].position;
    Ok(body
        .faces
        .iter()
        .map(|f| shell_volume(std::iter::once([pos(f.vertices[0]), pos(f.vertices[1]), pos(f.vertices[2])])))
        .sum())
}

/// Join two bodies with springs between the given particle pairs.
///
/// Each pair must reference one particle of `a` and one of `b` (in either
/// order). The originals are left untouched; particle ids of `b` are shifted
/// after those of `a`, and all spring and face ids are renumbered.
pub fn attach_objects(
    a: &SoftBody,
    b: &SoftBody,
    pairs: &[(ParticleRef, ParticleRef)],
    kind: SpringKind,
    hook_constant: f64,
    damping_factor: f64,
) -> Result<Attachment, ModelError> {
    if a.id == b.id {
        return Err(ModelError::SameObject);
    }
    let mut resolved = Vec::with_capacity(pairs.len());
    for (p, q) in pairs {
        if p.body == q.body {
            return Err(ModelError::SameObject);
        }
        let (pa, pb) = if p.body == a.id && q.body == b.id {
            (p.particle, q.particle)
        } else if p.body == b.id && q.body == a.id {
            (q.particle, p.particle)
        } else {
            let stray = if p.body != a.id && p.body != b.id { p } else { q };
            return Err(ModelError::UnknownParticle(format!(
                "{} (body {} is not being attached)",
                stray.particle, stray.body
            )));
        };
        a.check_particle(pa)?;
        b.check_particle(pb)?;
        resolved.push((pa, pb));
    }

    let offset = a.particles.len();
    let a_map: Vec<ParticleId> = (0..a.particles.len()).collect();
    let b_map: Vec<ParticleId> = (0..b.particles.len()).map(|i| i + offset).collect();
    let dimension = a.dimension.max(b.dimension);

    let mut particles = a.particles.clone();
    particles.extend(b.particles.iter().cloned().map(|mut p| {
        p.id += offset;
        p
    }));

    let mut spring_ids: HashMap<(bool, SpringId), SpringId> = HashMap::new();
    let mut springs = Vec::with_capacity(a.springs.len() + b.springs.len() + resolved.len());
    for (from_b, src) in [(false, a), (true, b)] {
        let shift = if from_b { offset } else { 0 };
        for s in &src.springs {
            let id = springs.len() as SpringId;
            spring_ids.insert((from_b, s.id), id);
            springs.push(Spring {
                id,
                head: s.head + shift,
                tail: s.tail + shift,
                ..s.clone()
            });
        }
    }
    let mut faces = Vec::with_capacity(a.faces.len() + b.faces.len());
    for (from_b, src) in [(false, a), (true, b)] {
        let shift = if from_b { offset } else { 0 };
        for f in &src.faces {
            faces.push(Face {
                id: faces.len() as FaceId,
                vertices: f.vertices.map(|v| v + shift),
                springs: f.springs.map(|s| spring_ids[&(from_b, s)]),
            });
        }
    }
    let part_shift = a.layers.iter().map(|l| l.part + 1).max().unwrap_or(0);
    let mut layers = a.layers.clone();
    layers.extend(b.layers.iter().map(|l| Layer {
        label: l.label,
        part: l.part + part_shift,
        particles: l.particles.iter().map(|&p| p + offset).collect(),
    }));

    let pressure_coefficient = if dimension >= Dimension::Two {
        Some(
            a.pressure_coefficient
                .or(b.pressure_coefficient)
                .unwrap_or(DEFAULT_PRESSURE_COEFFICIENT),
        )
    } else {
        None
    };
    let next_spring_id = springs.len() as SpringId;
    let next_face_id = faces.len() as FaceId;
    let mut body = SoftBody {
        id: BodyId::fresh(),
        dimension,
        layers,
        particles,
        springs,
        faces,
        pressure_coefficient,
        color: a.color,
        next_spring_id,
        next_face_id,
    };
    body.apply_dimension_mask();
    let mut new_springs = Vec::with_capacity(resolved.len());
    for (pa, pb) in resolved {
        new_springs.push(body.add_spring(a_map[pa], b_map[pb], kind, hook_constant, damping_factor)?);
    }
    body.refresh_spring_normals();
    Ok(Attachment {
        body,
        a_map,
        b_map,
        new_springs,
    })
}
