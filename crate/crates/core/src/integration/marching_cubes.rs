use super::tables::TRIANGLE_TABLE;
use super::TsdfVolume;
use crate::error::Result;
use crate::geometry::{PointCloud, TriangleMesh};
use nalgebra::Vector3;
use rayon::prelude::*;
use std::collections::HashMap;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cube edge `e` runs from corner `EDGES[e].0` along axis `EDGES[e].1`.
const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (1, 1),
    (3, 0),
    (0, 1),
    (4, 0),
    (5, 1),
    (7, 0),
    (4, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

struct Surface {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    colors: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
}

impl TsdfVolume {
    fn grid_index(&self, p: [usize; 3]) -> usize {
        self.index(p[0], p[1], p[2])
    }

    fn gradient(&self, p: [usize; 3]) -> Vector3<f64> {
        let center = self.tsdf[self.grid_index(p)];
        let mut g = Vector3::zeros();
        for axis in 0..3 {
            let sample = |offset: isize| -> Option<f64> {
                let c = p[axis] as isize + offset;
                if c < 0 || c >= self.resolution as isize {
                    return None;
                }
                let mut q = p;
                q[axis] = c as usize;
                let idx = self.grid_index(q);
                (self.weight[idx] > 0.0).then_some(self.tsdf[idx])
            };
            g[axis] = match (sample(-1), sample(1)) {
                (Some(lo), Some(hi)) => (hi - lo) / (2.0 * self.voxel_size),
                (None, Some(hi)) => (hi - center) / self.voxel_size,
                (Some(lo), None) => (center - lo) / self.voxel_size,
                (None, None) => 0.0,
            };
        }
        g
    }

    /// Interpolated position, normal and color of the zero crossing on the
    /// grid edge `id = 3 * grid_index + axis`.
    fn edge_vertex(&self, id: usize) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (base, axis) = (id / 3, id % 3);
        let res = self.resolution;
        let a = [base % res, (base / res) % res, base / (res * res)];
        let mut b = a;
        b[axis] += 1;
        let (ia, ib) = (self.grid_index(a), self.grid_index(b));
        let (va, vb) = (self.tsdf[ia], self.tsdf[ib]);
        let t = va / (va - vb);
        let pa = self.voxel_center(a[0], a[1], a[2]);
        let pb = self.voxel_center(b[0], b[1], b[2]);
        let position = pa + (pb - pa) * t;
        let normal = self.gradient(a) * (1.0 - t) + self.gradient(b) * t;
        let ca = Vector3::from_fn(|c, _| self.color[ia][c] as f64);
        let cb = Vector3::from_fn(|c, _| self.color[ib][c] as f64);
        let norm = normal.norm();
        let normal = if norm > 0.0 { normal / norm } else { normal };
        (position, normal, ca + (cb - ca) * t)
    }

    fn cell_triangles(&self, i: usize, j: usize, k: usize, out: &mut Vec<[usize; 3]>) {
        let res = self.resolution;
        let mut config = 0;
        for (c, off) in CORNERS.iter().enumerate() {
            let idx = self.index(i + off[0], j + off[1], k + off[2]);
            if self.weight[idx] <= 0.0 {
                return;
            }
            if self.tsdf[idx] < 0.0 {
                config |= 1 << c;
            }
        }
        if config == 0 || config == 255 {
            return;
        }
        let edge_id = |e: i8| -> usize {
            let (corner, axis) = EDGES[e as usize];
            let off = CORNERS[corner];
            3 * ((k + off[2]) * res * res + (j + off[1]) * res + (i + off[0])) + axis
        };
        for tri in TRIANGLE_TABLE[config].chunks(3).take_while(|t| t[0] >= 0) {
            // Reversed winding so that normals point toward positive tsdf.
            out.push([edge_id(tri[0]), edge_id(tri[2]), edge_id(tri[1])]);
        }
    }

    fn surface(&self) -> Result<Surface> {
        self.check_observed()?;
        let res = self.resolution;
        let per_slab: Vec<Vec<[usize; 3]>> = (0..res - 1)
            .into_par_iter()
            .map(|k| {
                let mut out = Vec::new();
                for j in 0..res - 1 {
                    for i in 0..res - 1 {
                        self.cell_triangles(i, j, k, &mut out);
                    }
                }
                out
            })
            .collect();
        let mut ids: HashMap<usize, usize> = HashMap::new();
        let mut order = Vec::new();
        let mut triangles = Vec::with_capacity(per_slab.iter().map(Vec::len).sum());
        for tri in per_slab.into_iter().flatten() {
            triangles.push(tri.map(|id| {
                *ids.entry(id).or_insert_with(|| {
                    order.push(id);
                    order.len() - 1
                })
            }));
        }
        let samples: Vec<_> = order.par_iter().map(|&id| self.edge_vertex(id)).collect();
        let mut surface = Surface {
            vertices: Vec::with_capacity(samples.len()),
            normals: Vec::with_capacity(samples.len()),
            colors: Vec::with_capacity(samples.len()),
            triangles,
        };
        for (p, n, c) in samples {
            surface.vertices.push(p);
            surface.normals.push(n);
            surface.colors.push(c);
        }
        Ok(surface)
    }
}

/// Marching cubes over cells whose eight corners are all observed.
///
/// Vertices are shared between cells through their grid edge, so a closed
/// zero level set yields a watertight mesh. Triangles are ordered by cell
/// and vertices by first use. Vertex normals are the normalized tsdf
/// gradient.
pub fn extract_triangle_mesh(volume: &TsdfVolume) -> Result<TriangleMesh> {
    let s = volume.surface()?;
    Ok(TriangleMesh {
        vertices: s.vertices,
        triangles: s.triangles,
        vertex_normals: s.normals,
        vertex_colors: s.colors,
        triangle_normals: Vec::new(),
    })
}

/// The vertices of [`extract_triangle_mesh`] with gradient normals and colors.
pub fn extract_point_cloud(volume: &TsdfVolume) -> Result<PointCloud> {
    let s = volume.surface()?;
    Ok(PointCloud {
        points: s.vertices,
        normals: s.normals,
        colors: s.colors,
    })
}
