use super::RigidTransform;
use crate::error::{Error, Result};
use nalgebra::Vector3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vector3<f64>>,
    pub vertex_colors: Vec<Vector3<f64>>,
    pub triangle_normals: Vec<Vector3<f64>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            ..Default::default()
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn has_vertex_normals(&self) -> bool {
        !self.vertex_normals.is_empty() && self.vertex_normals.len() == self.vertices.len()
    }

    pub fn has_vertex_colors(&self) -> bool {
        !self.vertex_colors.is_empty() && self.vertex_colors.len() == self.vertices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((i, t)) = self.triangles.iter().enumerate().find(|(_, t)| t.iter().any(|&v| v >= n)) {
            return Err(Error::invalid(format!("triangle {i} {t:?} indexes past {n} vertices")));
        }
        for (name, len, master) in [
            ("vertex_normals", self.vertex_normals.len(), n),
            ("vertex_colors", self.vertex_colors.len(), n),
            ("triangle_normals", self.triangle_normals.len(), self.triangles.len()),
        ] {
            if len != 0 && len != master {
                return Err(Error::invalid(format!("{name} has {len} records, expected {master}")));
            }
        }
        Ok(())
    }

    pub fn transform(&self, t: &RigidTransform) -> TriangleMesh {
        if t.is_identity() {
            return self.clone();
        }
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply_point(p)).collect(),
            triangles: self.triangles.clone(),
            vertex_normals: self.vertex_normals.iter().map(|n| t.apply_vector(n)).collect(),
            vertex_colors: self.vertex_colors.clone(),
            triangle_normals: self.triangle_normals.iter().map(|n| t.apply_vector(n)).collect(),
        }
    }

    /// Undirected edges with the number of triangles using each.
    pub fn edge_use_counts(&self) -> std::collections::HashMap<(usize, usize), usize> {
        let mut counts = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Computes triangle normals and area-independent vertex normals.
///
/// A triangle normal is the normalized `(v1 - v0) x (v2 - v0)`; a vertex
/// normal is the normalized sum of incident triangle normals. Degenerate
/// triangles contribute zero.
pub fn compute_vertex_normals(mesh: &mut TriangleMesh) -> Result<()> {
    if mesh.triangles.is_empty() {
        return Err(Error::invalid("mesh has no triangles"));
    }
    mesh.validate()?;
    let v = &mesh.vertices;
    mesh.triangle_normals = mesh
        .triangles
        .iter()
        .map(|t| {
            let n = (v[t[1]] - v[t[0]]).cross(&(v[t[2]] - v[t[0]]));
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let mut sums = vec![Vector3::zeros(); v.len()];
    for (t, n) in mesh.triangles.iter().zip(&mesh.triangle_normals) {
        for &i in t {
            sums[i] += n;
        }
    }
    mesh.vertex_normals = sums
        .into_iter()
        .map(|s| {
            let len = s.norm();
            if len > 0.0 {
                s / len
            } else {
                s
            }
        })
        .collect();
    Ok(())
}

/// Icosphere of radius `radius` centered at the origin, built by `levels`
/// rounds of 4:1 subdivision of an icosahedron (20 * 4^levels triangles).
pub fn icosphere(radius: f64, levels: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut midpoints = std::collections::HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) / 2.0).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    TriangleMesh {
        vertices: vertices.into_iter().map(|v| v * radius).collect(),
        triangles,
        ..Default::default()
    }
}
