//! Layered body construction.
//!
//! * 1-D: a straight chain along x, structural springs only.
//! * 2-D: concentric counter-clockwise rings in the xy plane. Structural
//!   springs close each ring; radius springs join particle `i` of adjacent
//!   rings; shear springs join outer `i` to inner `i ± 1`.
//! * 3-D: concentric UV spheres (poles on the y axis). Structural springs
//!   follow each sphere's triangulation edges, radius springs join matching
//!   vertices, shear springs join each outer vertex to the inner copies of its
//!   mesh neighbours. Faces are created on the outer sphere only.
//!
//! Layers are numbered from the outside in: layer 0 is the outer shell.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{
    geometry, BodyId, Dimension, Layer, LayerLabel, ModelError, Particle, ParticleId, Rgb,
    SoftBody, SpringId, SpringKind, DEFAULT_COLOR, DEFAULT_PRESSURE_COEFFICIENT,
};
use crate::vec3::Vec3;

/// Per-kind spring constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpringConstants {
    pub structural: f64,
    pub radius: f64,
    pub shear: f64,
}

impl SpringConstants {
    pub const fn uniform(v: f64) -> Self {
        Self {
            structural: v,
            radius: v,
            shear: v,
        }
    }

    /// Hook constants in N/m.
    pub const fn default_stiffness() -> Self {
        Self {
            structural: 200.0,
            radius: 150.0,
            shear: 100.0,
        }
    }

    /// Damping factors in N·s/m.
    pub const fn default_damping() -> Self {
        Self::uniform(1.0)
    }

    pub fn for_kind(&self, kind: SpringKind) -> f64 {
        match kind {
            SpringKind::Structural => self.structural,
            SpringKind::Radius => self.radius,
            SpringKind::Shear => self.shear,
        }
    }

    fn all_non_negative(&self) -> bool {
        [self.structural, self.radius, self.shear]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
    }
}

/// How the body's mass is stated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MassSpec {
    /// Total mass in kg, split evenly over all particles.
    Total(f64),
    /// Mass per enclosed measure: kg/m (1-D chain length), kg/m² (2-D outer
    /// polygon area) or kg/m³ (3-D outer surface volume).
    Density(f64),
}

/// Strain thresholds carried from creation into the simulation's force
/// parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeformationRange {
    pub elastic_limit: f64,
    pub fracture_strain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreationParams {
    pub dimension: Dimension,
    /// Particles per layer. For 3-D bodies this is rounded to the nearest UV
    /// sphere size `2 + latitudes·longitudes` (see [`sphere_resolution`]).
    pub particle_count: usize,
    pub layer_count: usize,
    pub mass: MassSpec,
    /// Outer radius (2-D, 3-D) or chain length (1-D), in m.
    pub size: f64,
    /// Inner layer radius as a fraction of `size`.
    pub inner_ratio: f64,
    pub stiffness: SpringConstants,
    pub damping: SpringConstants,
    pub pressure_coefficient: f64,
    pub color: Rgb,
    /// Centre of the body; masked to the body dimension.
    pub center: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deformation_range: Option<DeformationRange>,
}

impl CreationParams {
    pub fn default_for(dimension: Dimension) -> Self {
        let (particle_count, layer_count) = match dimension {
            Dimension::One => (8, 1),
            Dimension::Two => (16, 2),
            Dimension::Three => (50, 2),
        };
        CreationParams {
            dimension,
            particle_count,
            layer_count,
            mass: MassSpec::Total(1.0),
            size: 1.0,
            inner_ratio: 0.5,
            stiffness: SpringConstants::default_stiffness(),
            damping: SpringConstants::default_damping(),
            pressure_coefficient: DEFAULT_PRESSURE_COEFFICIENT,
            color: DEFAULT_COLOR,
            center: Vec3::new(0.0, 1.5, 0.0),
            deformation_range: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        let min_count = match self.dimension {
            Dimension::One => 1,
            Dimension::Two => 3,
            Dimension::Three => 5,
        };
        if self.particle_count < min_count {
            return Err(ModelError::InvalidParams(format!(
                "a {}-D body needs at least {min_count} particles per layer",
                self.dimension.value()
            )));
        }
        if self.layer_count == 0 {
            return err("layer count must be positive");
        }
        if self.dimension == Dimension::One && self.layer_count != 1 {
            return err("1-D bodies have exactly one layer");
        }
        let mass = match self.mass {
            MassSpec::Total(m) | MassSpec::Density(m) => m,
        };
        if !(mass > 0.0 && mass.is_finite()) {
            return err("mass must be positive");
        }
        if !(self.size > 0.0 && self.size.is_finite()) {
            return err("size must be positive");
        }
        if self.layer_count > 1 && !(self.inner_ratio > 0.0 && self.inner_ratio < 1.0) {
            return err("inner ratio must lie strictly between 0 and 1");
        }
        if !self.stiffness.all_non_negative() || !self.damping.all_non_negative() {
            return err("spring constants must be non-negative");
        }
        if !(self.pressure_coefficient >= 0.0 && self.pressure_coefficient.is_finite()) {
            return err("pressure coefficient must be non-negative");
        }
        if !self.center.is_finite() {
            return err("center must be finite");
        }
        if let Some(r) = self.deformation_range {
            if !(r.elastic_limit >= 1.0 && r.fracture_strain > r.elastic_limit) {
                return err("deformation range needs 1 <= elastic limit < fracture strain");
            }
        }
        Ok(())
    }
}

/// `(latitude rings, longitude segments)` of the UV sphere closest to
/// `particle_count` vertices. 50 maps to the default 6 × 8 sphere.
pub fn sphere_resolution(particle_count: usize) -> (usize, usize) {
    let rest = particle_count.saturating_sub(2).max(3) as f64;
    let lat = ((0.75 * rest).sqrt().round() as usize).max(1);
    let lon = ((rest / lat as f64).round() as usize).max(3);
    (lat, lon)
}

pub fn create_default_soft_body(dimension: Dimension) -> SoftBody {
    create_soft_body(&CreationParams::default_for(dimension))
        .expect("default creation parameters are valid")
}

pub fn create_soft_body(params: &CreationParams) -> Result<SoftBody, ModelError> {
    params.validate()?;
    let mut builder = Builder::new(params);
    match params.dimension {
        Dimension::One => builder.chain(),
        Dimension::Two => builder.rings(),
        Dimension::Three => builder.spheres(),
    }
    builder.finish()
}

struct Builder<'a> {
    params: &'a CreationParams,
    body: SoftBody,
}

impl<'a> Builder<'a> {
    fn new(params: &'a CreationParams) -> Self {
        let mut body = SoftBody::new(params.dimension);
        body.layers.clear();
        body.color = params.color;
        body.pressure_coefficient =
            (params.dimension >= Dimension::Two).then_some(params.pressure_coefficient);
        Builder { params, body }
    }

    fn center(&self) -> Vec3 {
        self.params.dimension.mask(self.params.center)
    }

    fn layer_radius(&self, layer: usize) -> f64 {
        let l = self.params.layer_count;
        if l == 1 {
            self.params.size
        } else {
            let t = layer as f64 / (l - 1) as f64;
            self.params.size * (1.0 - (1.0 - self.params.inner_ratio) * t)
        }
    }

    fn label(&self, layer: usize) -> LayerLabel {
        if layer == 0 {
            LayerLabel::Outer
        } else if layer + 1 == self.params.layer_count {
            LayerLabel::Inner
        } else {
            LayerLabel::Middle(layer as u32)
        }
    }

    fn push_layer(&mut self, layer: usize, positions: Vec<Vec3>) {
        let mut ids = Vec::with_capacity(positions.len());
        for position in positions {
            let id = self.body.particles.len();
            self.body.particles.push(Particle {
                id,
                mass: 1.0,
                position: self.params.dimension.mask(position),
                velocity: Vec3::ZERO,
                acceleration: Vec3::ZERO,
                accumulated_force: Vec3::ZERO,
                pinned: false,
            });
            ids.push(id);
        }
        self.body.layers.push(Layer {
            label: self.label(layer),
            part: 0,
            particles: ids,
        });
    }

    fn spring(&mut self, head: ParticleId, tail: ParticleId, kind: SpringKind) -> SpringId {
        let k = self.params.stiffness.for_kind(kind);
        let c = self.params.damping.for_kind(kind);
        self.body
            .add_spring(head, tail, kind, k, c)
            .expect("construction only links distinct, existing particles")
    }

    fn chain(&mut self) {
        let n = self.params.particle_count;
        let c = self.center();
        let positions = (0..n)
            .map(|i| {
                if n == 1 {
                    c
                } else {
                    let step = self.params.size / (n - 1) as f64;
                    c + Vec3::new(-0.5 * self.params.size + i as f64 * step, 0.0, 0.0)
                }
            })
            .collect();
        self.push_layer(0, positions);
        for i in 1..n {
            self.spring(i - 1, i, SpringKind::Structural);
        }
    }

    fn rings(&mut self) {
        let n = self.params.particle_count;
        let c = self.center();
        for layer in 0..self.params.layer_count {
            let r = self.layer_radius(layer);
            let positions = (0..n)
                .map(|i| {
                    let theta = 2.0 * PI * i as f64 / n as f64;
                    c + Vec3::new(r * theta.cos(), r * theta.sin(), 0.0)
                })
                .collect();
            self.push_layer(layer, positions);
        }
        let at = |layer: usize, i: usize| layer * n + (i % n);
        for layer in 0..self.params.layer_count {
            for i in 0..n {
                self.spring(at(layer, i), at(layer, i + 1), SpringKind::Structural);
            }
        }
        for layer in 1..self.params.layer_count {
            let (outer, inner) = (layer - 1, layer);
            for i in 0..n {
                self.spring(at(outer, i), at(inner, i), SpringKind::Radius);
            }
            for i in 0..n {
                self.spring(at(outer, i), at(inner, i + 1), SpringKind::Shear);
                self.spring(at(outer, i), at(inner, i + n - 1), SpringKind::Shear);
            }
        }
    }

    fn spheres(&mut self) {
        let (lat, lon) = sphere_resolution(self.params.particle_count);
        let c = self.center();
        let (unit, triangles) = uv_sphere(lat, lon);
        let per_layer = unit.len();
        for layer in 0..self.params.layer_count {
            let r = self.layer_radius(layer);
            self.push_layer(layer, unit.iter().map(|&u| c + u * r).collect());
        }

        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
        for t in &triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                if seen.insert(key, ()).is_none() {
                    edges.push((a, b));
                }
            }
        }
        let mut outer_edge_springs: HashMap<(usize, usize), SpringId> = HashMap::new();
        for layer in 0..self.params.layer_count {
            let base = layer * per_layer;
            for &(a, b) in &edges {
                let id = self.spring(base + a, base + b, SpringKind::Structural);
                if layer == 0 {
                    outer_edge_springs.insert((a.min(b), a.max(b)), id);
                }
            }
        }
        for layer in 1..self.params.layer_count {
            let (outer, inner) = ((layer - 1) * per_layer, layer * per_layer);
            for v in 0..per_layer {
                self.spring(outer + v, inner + v, SpringKind::Radius);
            }
            for &(a, b) in &edges {
                self.spring(outer + a, inner + b, SpringKind::Shear);
                self.spring(outer + b, inner + a, SpringKind::Shear);
            }
        }
        for t in triangles {
            let springs = [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                .map(|(a, b)| outer_edge_springs[&(a.min(b), a.max(b))]);
            let id = self.body.faces.len() as u64;
            self.body.faces.push(super::Face {
                id,
                vertices: t,
                springs,
            });
        }
        self.body.next_face_id = self.body.faces.len() as u64;
    }

    fn finish(mut self) -> Result<SoftBody, ModelError> {
        let n = self.body.particles.len();
        let total = match self.params.mass {
            MassSpec::Total(m) => m,
            MassSpec::Density(rho) => rho * self.measure()?,
        };
        if !(total > 0.0 && total.is_finite()) {
            return Err(ModelError::InvalidParams(
                "density yields a non-positive total mass".into(),
            ));
        }
        let each = total / n as f64;
        for p in &mut self.body.particles {
            p.mass = each;
        }
        self.body.refresh_spring_normals();
        self.body.id = BodyId::fresh();
        Ok(self.body)
    }

    /// Enclosed measure used to turn a density into a total mass.
    fn measure(&self) -> Result<f64, ModelError> {
        match self.params.dimension {
            Dimension::One => Ok(self.params.size),
            Dimension::Two => {
                let outer = &self.body.layers[0].particles;
                Ok(geometry::polygon_area(
                    outer.iter().map(|&i| self.body.particles[i].position),
                ))
            }
            Dimension::Three => super::compute_volume(&self.body),
        }
    }
}

/// Unit UV sphere: vertex 0 is the +y pole, the last vertex the −y pole, and
/// ring `k` (1-based) starts at `1 + (k-1)·lon`. Triangles are wound outward.
fn uv_sphere(lat: usize, lon: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut verts = Vec::with_capacity(2 + lat * lon);
    verts.push(Vec3::Y);
    for k in 1..=lat {
        let phi = PI * k as f64 / (lat + 1) as f64;
        for m in 0..lon {
            let theta = 2.0 * PI * m as f64 / lon as f64;
            verts.push(Vec3::new(phi.sin() * theta.cos(), phi.cos(), phi.sin() * theta.sin()));
        }
    }
    let bottom = verts.len();
    verts.push(-Vec3::Y);

    let ring = |k: usize, m: usize| 1 + (k - 1) * lon + (m % lon);
    let mut tris = Vec::with_capacity(2 * lat * lon);
    for m in 0..lon {
        tris.push([0, ring(1, m), ring(1, m + 1)]);
    }
    for k in 1..lat {
        for m in 0..lon {
            let (a, b) = (ring(k, m), ring(k, m + 1));
            let (c, d) = (ring(k + 1, m), ring(k + 1, m + 1));
            tris.push([a, c, d]);
            tris.push([a, d, b]);
        }
    }
    for m in 0..lon {
        tris.push([bottom, ring(lat, m + 1), ring(lat, m)]);
    }
    for t in &mut tris {
        let [a, b, c] = t.map(|i| verts[i]);
        let centroid = (a + b + c) / 3.0;
        if geometry::triangle_area_vector(a, b, c).dot(centroid) < 0.0 {
            t.swap(1, 2);
        }
    }
    (verts, tris)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_volume;

    #[test]
    fn default_one_d_is_an_eight_particle_chain() {
        let b = create_default_soft_body(Dimension::One);
        assert_eq!(b.particles.len(), 8);
        assert_eq!(b.springs.len(), 7);
        assert!(b.faces.is_empty());
        assert_eq!(b.pressure_coefficient, None);
        let spacing = b.particles[1].position.x - b.particles[0].position.x;
        assert!((spacing - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn default_two_d_counts_and_mass() {
        let b = create_default_soft_body(Dimension::Two);
        assert_eq!(b.particles.len(), 32);
        let count = |k| b.springs.iter().filter(|s| s.kind == k).count();
        assert_eq!(count(SpringKind::Structural), 32);
        assert_eq!(count(SpringKind::Radius), 16);
        assert_eq!(count(SpringKind::Shear), 32);
        assert_eq!(b.springs.len(), 80);
        assert!(b.particles.iter().all(|p| p.mass == 0.03125));
        assert_eq!(b.pressure_coefficient, Some(5.0));
    }

    #[test]
    fn small_ring_radii() {
        let mut p = CreationParams::default_for(Dimension::Two);
        p.particle_count = 4;
        p.center = Vec3::ZERO;
        p.mass = MassSpec::Total(2.0);
        let b = create_soft_body(&p).unwrap();
        assert_eq!(b.particles.len(), 8);
        assert!(b.particles.iter().all(|q| q.mass == 0.25));
        for &i in &b.layers[0].particles {
            assert!((b.particles[i].position.norm() - 1.0).abs() < 1e-12);
        }
        for &i in &b.layers[1].particles {
            assert!((b.particles[i].position.norm() - 0.5).abs() < 1e-12);
        }
        assert_eq!(b.layers[0].label, LayerLabel::Outer);
        assert_eq!(b.layers[1].label, LayerLabel::Inner);
    }

    #[test]
    fn default_three_d_is_two_closed_spheres() {
        let b = create_default_soft_body(Dimension::Three);
        assert_eq!(sphere_resolution(50), (6, 8));
        assert_eq!(b.particles.len(), 100);
        assert_eq!(b.faces.len(), 96);
        // V − E + F = 2 on each sphere
        let structural = b.springs.iter().filter(|s| s.kind == SpringKind::Structural).count();
        assert_eq!(structural, 2 * 144);
        assert_eq!(b.springs.iter().filter(|s| s.kind == SpringKind::Radius).count(), 50);
        assert_eq!(b.springs.iter().filter(|s| s.kind == SpringKind::Shear).count(), 288);
        assert!(compute_volume(&b).unwrap() > 0.0);
        b.validate().unwrap();
    }

    #[test]
    fn invalid_params_are_rejected() {
        let base = CreationParams::default_for(Dimension::Two);
        let cases: [fn(&mut CreationParams); 6] = [
            |p| p.particle_count = 0,
            |p| p.mass = MassSpec::Total(0.0),
            |p| p.size = -1.0,
            |p| p.inner_ratio = 1.0,
            |p| p.inner_ratio = 0.0,
            |p| p.layer_count = 0,
        ];
        for mutate in cases {
            let mut p = base.clone();
            mutate(&mut p);
            assert!(matches!(create_soft_body(&p), Err(ModelError::InvalidParams(_))));
        }
        let mut p = CreationParams::default_for(Dimension::One);
        p.layer_count = 2;
        assert!(create_soft_body(&p).is_err());
    }

    #[test]
    fn density_sets_total_mass_from_area() {
        let mut p = CreationParams::default_for(Dimension::Two);
        p.mass = MassSpec::Density(2.0);
        let b = create_soft_body(&p).unwrap();
        // regular 16-gon of radius 1: n/2 · sin(2π/n)
        let area = 8.0 * (2.0 * PI / 16.0).sin();
        assert!((b.total_mass() - 2.0 * area).abs() < 1e-12);
    }

    #[test]
    fn three_layer_body_has_middle_layer() {
        let mut p = CreationParams::default_for(Dimension::Two);
        p.layer_count = 3;
        let b = create_soft_body(&p).unwrap();
        assert_eq!(b.layers[1].label, LayerLabel::Middle(1));
        assert_eq!(b.springs.len(), 3 * 16 + 2 * (16 + 32));
    }
}
