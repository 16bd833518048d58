use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softbody_core::collision::Collider;
use softbody_core::engine::{AlgorithmKind, SimInstance};
use softbody_core::forces::*;
use softbody_core::model::*;
use softbody_core::registry::Catalog;
use softbody_core::Vec3;

/// Closed body from a triangle list, particles of mass 1.
fn mesh_body(vertices: &[Vec3], triangles: &[[usize; 3]]) -> SoftBody {
    let mut b = SoftBody::new(Dimension::Three);
    for &v in vertices {
        b.add_particle(1.0, v).unwrap();
    }
    for t in triangles {
        b.add_face(t[0], t[1], t[2]).unwrap();
    }
    b
}

fn cube(sx: f64) -> SoftBody {
    let v: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new(sx * (i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    // outward winding, two triangles per face
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let tris: Vec<[usize; 3]> = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    mesh_body(&v, &tris)
}

/// Icosahedron subdivided `levels` times and projected onto the unit sphere.
fn icosphere(levels: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).try_normalize(0.0).unwrap())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache = std::collections::HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).try_normalize(0.0).unwrap());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

/// Independent oracle: tetrahedra from the vertex centroid, |det| / 6 each.
fn centroid_tetra_volume(body: &SoftBody) -> f64 {
    let c = body.centroid();
    body.faces
        .iter()
        .map(|f| {
            let [a, b, d] = f.vertices.map(|i| body.particles[i].position - c);
            a.dot(b.cross(d)).abs() / 6.0
        })
        .sum()
}

#[test]
fn cube_volumes() {
    assert!((compute_volume(&cube(1.0)).unwrap() - 1.0).abs() < 1e-9);
    assert!((compute_volume(&cube(2.0)).unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn sphere_volume_matches_tetrahedron_oracle() {
    for levels in 2..=3 {
        let (v, f) = icosphere(levels);
        let body = mesh_body(&v, &f);
        let got = compute_volume(&body).unwrap();
        let oracle = centroid_tetra_volume(&body);
        assert!(((got - oracle) / oracle).abs() < 1e-6, "{got} vs {oracle}");
        assert!((got / (4.0 / 3.0 * std::f64::consts::PI) - 1.0).abs() < 0.05);
    }
    let default3 = create_default_soft_body(Dimension::Three);
    let got = compute_volume(&default3).unwrap();
    assert!(((got - centroid_tetra_volume(&default3)) / got).abs() < 1e-6);
}

#[test]
fn unit_cube_pressure_example() {
    let body = cube(1.0);
    let f = pressure_forces(&body, 6.0).unwrap();
    let sum: Vec3 = f.iter().copied().sum();
    assert!(sum.norm() < 1e-9);
    // each vertex of the cube gets 1 N per incident triangle, 3 N per triangle
    let total: f64 = f.iter().map(|v| v.norm()).sum();
    assert!(total > 0.0);
}

#[test]
fn attach_counts_and_rejections() {
    let a = create_default_soft_body(Dimension::One);
    let b = create_default_soft_body(Dimension::One);
    let pairs = [
        (ParticleRef::new(a.id, 7), ParticleRef::new(b.id, 0)),
        (ParticleRef::new(b.id, 1), ParticleRef::new(a.id, 6)),
    ];
    let out = attach_objects(&a, &b, &pairs, SpringKind::Structural, 100.0, 1.0).unwrap();
    assert_eq!(out.body.particle_count(), 16);
    assert_eq!(out.body.springs.len(), a.springs.len() + b.springs.len() + 2);
    assert!((out.body.total_mass() - a.total_mass() - b.total_mass()).abs() < 1e-12);
    assert_eq!(out.new_springs.len(), 2);
    for id in &out.new_springs {
        let s = out.body.spring(*id).unwrap();
        let d = out.body.particles[s.head].position.distance(out.body.particles[s.tail].position);
        assert!((d - s.rest_len).abs() < 1e-12);
    }
    assert_eq!(a, create_default_soft_body_like(&a));

    let same = [(ParticleRef::new(a.id, 0), ParticleRef::new(a.id, 1))];
    assert_eq!(
        attach_objects(&a, &b, &same, SpringKind::Structural, 1.0, 0.0).unwrap_err().code(),
        "SAME_OBJECT"
    );
    assert_eq!(
        attach_objects(&a, &a, &[], SpringKind::Structural, 1.0, 0.0).unwrap_err().code(),
        "SAME_OBJECT"
    );
    let missing = [(ParticleRef::new(a.id, 99), ParticleRef::new(b.id, 0))];
    assert_eq!(
        attach_objects(&a, &b, &missing, SpringKind::Structural, 1.0, 0.0).unwrap_err().code(),
        "UNKNOWN_PARTICLE"
    );
    let merged = attach_objects(&a, &b, &[], SpringKind::Structural, 1.0, 0.0).unwrap();
    assert_eq!(merged.body.springs.len(), a.springs.len() + b.springs.len());
}

/// The same body rebuilt, to show attaching left the original untouched.
fn create_default_soft_body_like(a: &SoftBody) -> SoftBody {
    let mut b = create_default_soft_body(a.dimension);
    b.id = a.id;
    b
}

#[test]
fn attached_bodies_simulate() {
    let cat = Catalog::with_builtins();
    let mut cp = CreationParams::default_for(Dimension::Two);
    cp.center = Vec3::new(-1.2, 1.5, 0.0);
    let a = create_soft_body(&cp).unwrap();
    cp.center = Vec3::new(1.2, 1.5, 0.0);
    let b = create_soft_body(&cp).unwrap();
    let pairs = [(ParticleRef::new(a.id, 0), ParticleRef::new(b.id, 8))];
    let joined = attach_objects(&a, &b, &pairs, SpringKind::Structural, 200.0, 1.0).unwrap();
    let mut i = SimInstance::new(1, joined.body, &cat);
    i.resume().unwrap();
    for _ in 0..400 {
        i.step(&cat).unwrap();
    }
    assert!(i.body.particles.iter().all(|p| p.position.y > -0.1));
}

fn perturbed(dim: Dimension, seed: u64, amount: f64) -> SoftBody {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = create_default_soft_body(dim);
    for p in &mut b.particles {
        let mut r = || rng.gen_range(-amount..amount);
        p.position += Vec3::new(r(), r(), r());
        p.velocity = Vec3::new(r(), r(), r()) * 10.0;
    }
    b.apply_dimension_mask();
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn internal_forces_cancel(seed in any::<u64>(), dim in prop::sample::select(vec![Dimension::One, Dimension::Two, Dimension::Three])) {
        let mut b = perturbed(dim, seed, 0.1);
        let mut p = ForceParams::zero();
        p.pressure_coefficient = Some(0.0);
        accumulate_forces(&mut b, &p, &[], &[], &[], &mut ForceDiagnostics::default()).unwrap();
        let sum: Vec3 = b.particles.iter().map(|p| p.accumulated_force).sum();
        prop_assert!(sum.norm() < 1e-9, "{sum:?}");
    }

    #[test]
    fn pressure_forces_close(seed in any::<u64>(), kp in 0.1f64..50.0) {
        for dim in [Dimension::Two, Dimension::Three] {
            let b = perturbed(dim, seed, 0.05);
            let f = pressure_forces(&b, kp).unwrap();
            let largest = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let sum: Vec3 = f.iter().copied().sum();
            prop_assert!(sum.norm() <= 1e-6 * largest);
        }
    }

    #[test]
    fn creation_is_idempotent_and_springs_start_at_rest(
        dim in prop::sample::select(vec![Dimension::One, Dimension::Two, Dimension::Three]),
        count in 5usize..40,
        layers in 1usize..4,
        size in 0.2f64..3.0,
    ) {
        let mut cp = CreationParams::default_for(dim);
        cp.particle_count = count;
        cp.layer_count = if dim == Dimension::One { 1 } else { layers.max(1) };
        cp.size = size;
        let a = create_soft_body(&cp).unwrap();
        let b = create_soft_body(&cp).unwrap();
        prop_assert_eq!(a.particles.len(), b.particles.len());
        prop_assert_eq!(a.springs.len(), b.springs.len());
        for (p, q) in a.particles.iter().zip(&b.particles) {
            prop_assert!((p.position - q.position).norm() < 1e-12);
        }
        for s in &a.springs {
            let d = a.particles[s.head].position.distance(a.particles[s.tail].position);
            prop_assert!((d - s.rest_len).abs() < 1e-9);
        }
        prop_assert!((a.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_dimensions_stay_masked(seed in any::<u64>(), dim in prop::sample::select(vec![Dimension::One, Dimension::Two])) {
        let cat = Catalog::with_builtins();
        let mut b = create_default_soft_body(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut b.particles {
            p.velocity = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let mut i = SimInstance::new(1, b, &cat);
        i.environment.push(Collider::sphere(Vec3::new(0.2, 0.1, 0.3), 0.4));
        i.apply_user_force(ExternalInput::impulse(vec![0], Vec3::new(1.0, 1.0, 1.0), 5)).unwrap();
        i.resume().unwrap();
        for _ in 0..40 {
            let f = i.step(&cat).unwrap();
            for p in &f.positions {
                prop_assert_eq!(p.z, 0.0);
                if dim == Dimension::One {
                    prop_assert_eq!(p.y, 0.0);
                }
            }
        }
    }

    #[test]
    fn deformation_never_adds_springs(seed in any::<u64>(), stretch in 1.0f64..3.0) {
        let mut b = perturbed(Dimension::Two, seed, 0.02);
        for p in &mut b.particles {
            p.position = p.position * stretch;
        }
        b.apply_dimension_mask();
        let before = b.clone();
        let broken = apply_deformation_model(&mut b, &ForceParams::default());
        prop_assert_eq!(b.springs.len() + broken.len(), before.springs.len());
        for s in &b.springs {
            let old = before.spring(s.id).unwrap();
            let len = b.particles[s.head].position.distance(b.particles[s.tail].position);
            if len / old.rest_len <= 1.5 {
                prop_assert_eq!(s.rest_len, old.rest_len);
            }
        }
    }

    #[test]
    fn gravity_and_drag_are_linear(m in 0.01f64..10.0, v in -5.0f64..5.0, c in 0.0f64..3.0) {
        let mut p = Particle { id: 0, mass: m, position: Vec3::ZERO, velocity: Vec3::new(v, 0.0, 0.0),
            acceleration: Vec3::ZERO, accumulated_force: Vec3::ZERO, pinned: false };
        let g = Vec3::new(0.0, -9.81, 0.0);
        let (g1, d1) = (gravity_force(&p, g), drag_force(&p, c));
        p.mass *= 2.0;
        p.velocity = p.velocity * 2.0;
        prop_assert_eq!(gravity_force(&p, g), g1 * 2.0);
        prop_assert_eq!(drag_force(&p, c), d1 * 2.0);
    }
}

#[test]
fn momentum_is_conserved_without_external_forces() {
    let cat = Catalog::with_builtins();
    for dim in [Dimension::Two, Dimension::Three] {
        let mut i = SimInstance::new(1, perturbed(dim, 7, 0.01), &cat);
        i.environment.clear();
        i.params.force_params = ForceParams::zero();
        i.params.time_step_override = Some(0.001);
        i.resume().unwrap();
        let p0 = i.body.momentum();
        for _ in 0..1000 {
            i.step(&cat).unwrap();
        }
        assert!((i.body.momentum() - p0).norm() < 1e-9, "{dim:?}");
    }
}

#[test]
fn accumulators_are_bitwise_reproducible() {
    let b = perturbed(Dimension::Three, 3, 0.05);
    let run = || {
        let mut body = b.clone();
        accumulate_forces(&mut body, &ForceParams::default(), &[], &[], &[], &mut ForceDiagnostics::default())
            .unwrap();
        body.particles.iter().map(|p| p.accumulated_force.to_array().map(f64::to_bits)).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

/// Two unit masses joined by one undamped spring, stretched by 0.2.
fn oscillator(cat: &Catalog, integrator: &str) -> SimInstance {
    let mut b = SoftBody::new(Dimension::Three);
    b.add_particle(1.0, Vec3::ZERO).unwrap();
    b.add_particle(1.0, Vec3::new(1.0, 0.0, 0.0)).unwrap();
    b.add_spring(0, 1, SpringKind::Structural, 100.0, 0.0).unwrap();
    b.particles[1].position.x = 1.2;
    b.pressure_coefficient = Some(0.0);
    let mut i = SimInstance::new(1, b, cat);
    i.environment.clear();
    i.params.force_params = ForceParams::zero();
    i.params.force_params.plastic_rate = 0.0;
    i.params.force_params.fracture_strain = 1e9;
    i.params.time_step_override = Some(1e-3);
    if i.integrator != integrator {
        i.swap_algorithm(AlgorithmKind::Integrator, integrator, cat).unwrap();
    }
    i.resume().unwrap();
    i
}

#[test]
fn semi_implicit_euler_keeps_energy_bounded() {
    let cat = Catalog::with_builtins();
    let mut i = oscillator(&cat, "semiImplicitEuler");
    let e0 = energy(&i.body, Vec3::ZERO).total();
    for _ in 0..10_000 {
        let e = i.step(&cat).unwrap().diagnostics.energy;
        assert!((e / e0 - 1.0).abs() <= 0.02, "{e} vs {e0}");
    }
}

#[test]
fn explicit_euler_gains_energy_every_step() {
    let cat = Catalog::with_builtins();
    let mut i = oscillator(&cat, "explicitEuler");
    let mut last = energy(&i.body, Vec3::ZERO).total();
    for _ in 0..10_000 {
        let e = i.step(&cat).unwrap().diagnostics.energy;
        assert!(e > last, "{e} {last}");
        last = e;
    }
}

#[test]
fn fracture_is_monotone() {
    let cat = Catalog::with_builtins();
    let mut i = SimInstance::from_creation(1, CreationParams::default_for(Dimension::Two), &cat).unwrap();
    i.params.force_params.pressure_coefficient = Some(0.0);
    i.resume().unwrap();
    i.apply_user_force(ExternalInput::drag(vec![0], Vec3::new(-6.0, 1.0, 0.0), 400.0, 600)).unwrap();
    let mut live: std::collections::BTreeSet<_> = i.body.springs.iter().map(|s| s.id).collect();
    let mut broken_total = 0;
    for _ in 0..600 {
        let f = i.step(&cat).unwrap();
        let now: std::collections::BTreeSet<_> = i.body.springs.iter().map(|s| s.id).collect();
        assert!(now.is_subset(&live));
        assert_eq!(live.len() - now.len(), f.broken_springs.len());
        broken_total += f.broken_springs.len();
        live = now;
    }
    assert!(broken_total > 0);
}
