use std::collections::HashMap;

use crate::model::ParticleId;
use crate::vec3::Vec3;

/// `(b - a) × (c - a) / 2`: area times unit normal of triangle `abc`.
pub fn triangle_area_vector(a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    (b - a).cross(c - a) * 0.5
}

/// Signed volume enclosed by oriented triangles, `Σ p1·(p2×p3) / 6`.
pub fn shell_volume(triangles: impl Iterator<Item = [Vec3; 3]>) -> f64 {
    triangles.map(|[a, b, c]| a.dot(b.cross(c))).sum::<f64>() / 6.0
}

/// Shoelace area of a polygon in the xy plane, positive when counter-clockwise.
pub fn polygon_area(points: impl Iterator<Item = Vec3>) -> f64 {
    let pts: Vec<Vec3> = points.collect();
    let n = pts.len();
    let mut twice = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        twice += p.x * q.y - q.x * p.y;
    }
    twice * 0.5
}

/// True when every directed edge appears exactly once and is matched by its
/// reverse exactly once: the triangles form closed, consistently oriented shells.
pub fn surface_is_closed(triangles: impl Iterator<Item = [ParticleId; 3]>) -> bool {
    let mut directed: HashMap<(ParticleId, ParticleId), u32> = HashMap::new();
    let mut any = false;
    for [a, b, c] in triangles {
        any = true;
        for e in [(a, b), (b, c), (c, a)] {
            *directed.entry(e).or_insert(0) += 1;
        }
    }
    any && directed
        .iter()
        .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
}

/// Group faces into connected components through shared vertices.
pub(crate) fn face_shells(faces: &[crate::model::Face], particle_count: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..particle_count).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in faces {
        let [a, b, c] = f.vertices;
        for (u, v) in [(a, b), (b, c)] {
            let ru = find(&mut parent, u);
            let rv = find(&mut parent, v);
            if ru != rv {
                parent[ru.max(rv)] = ru.min(rv);
            }
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, f) in faces.iter().enumerate() {
        let root = find(&mut parent, f.vertices[0]);
        groups
            .entry(root)
            .or_insert_with(|| {
                order.push(root);
                Vec::new()
            })
            .push(i);
    }
    order.into_iter().map(|r| groups.remove(&r).unwrap()).collect()
}
