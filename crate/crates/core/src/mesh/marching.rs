//! Zero level set extraction on a regular grid.
//!
//! The extractor sweeps the grid two value planes at a time, classifies each
//! cell against the 256-case lookup tables, places vertices by linear
//! interpolation along crossed edges, and welds them through global edge
//! keys so shared edges reuse one vertex. Vertex normals come from the
//! field gradient evaluated at the welded positions.

use crate::error::{Error, Result};
use crate::fields::net::FieldPair;
use crate::mat::Mat;
use crate::mesh::tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};
use crate::mesh::trimesh::TriMesh;
use crate::scene::shape::Shape;
use crate::{ParamSetS, Vec3, S};
use std::collections::HashMap;

/// Corner values this close to the level set are nudged to the positive
/// side so cell classification and edge interpolation stay consistent.
const LEVEL_EPS: S = 1e-12;

/// A scalar field with gradients, evaluable on point batches.
pub trait ScalarField3 {
    fn eval_batch(&self, pts: &Mat<S>) -> Vec<S>;
    fn grad_batch(&self, pts: &Mat<S>) -> Vec<Vec3>;
}

impl ScalarField3 for Shape {
    fn eval_batch(&self, pts: &Mat<S>) -> Vec<S> {
        (0..pts.rows())
            .map(|i| self.sdf(Vec3::new(pts.at(i, 0), pts.at(i, 1), pts.at(i, 2))))
            .collect()
    }

    fn grad_batch(&self, pts: &Mat<S>) -> Vec<Vec3> {
        (0..pts.rows())
            .map(|i| self.grad(Vec3::new(pts.at(i, 0), pts.at(i, 1), pts.at(i, 2))))
            .collect()
    }
}

/// The learned signed distance field of a trained parameter set.
pub struct NeuralSdf<'a> {
    pub pair: &'a FieldPair,
    pub set: &'a ParamSetS,
}

impl ScalarField3 for NeuralSdf<'_> {
    fn eval_batch(&self, pts: &Mat<S>) -> Vec<S> {
        let out = self.pair.sdf.eval_raw(self.set, pts, false, false);
        (0..out.sdf.rows()).map(|i| out.sdf.at(i, 0)).collect()
    }

    fn grad_batch(&self, pts: &Mat<S>) -> Vec<Vec3> {
        let out = self.pair.sdf.eval_raw(self.set, pts, true, false);
        let g = out.grad.expect("gradient requested");
        (0..g.rows())
            .map(|i| Vec3::new(g.at(i, 0), g.at(i, 1), g.at(i, 2)))
            .collect()
    }
}

/// Axis-aligned sampling lattice: `res` cells per axis, `res + 1` planes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub res: usize,
    pub min: Vec3,
    pub max: Vec3,
}

impl GridSpec {
    /// Cube `[-half, half]^3`.
    pub fn cube(half: S, res: usize) -> Self {
        Self {
            res,
            min: Vec3::new(-half, -half, -half),
            max: Vec3::new(half, half, half),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.res < 8 {
            return Err(Error::Config(format!(
                "grid resolution {} is below the minimum of 8",
                self.res
            )));
        }
        if !(self.min.x < self.max.x && self.min.y < self.max.y && self.min.z < self.max.z) {
            return Err(Error::Config("grid bounds are inverted or empty".into()));
        }
        Ok(())
    }

    fn spacing(&self) -> Vec3 {
        (self.max - self.min) / self.res as S
    }

    fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.spacing();
        Vec3::new(
            self.min.x + h.x * i as S,
            self.min.y + h.y * j as S,
            self.min.z + h.z * k as S,
        )
    }
}

/// Evaluates one lattice plane `z = k`, nudging near-zero values positive.
fn plane_values(field: &impl ScalarField3, grid: &GridSpec, k: usize) -> Vec<S> {
    let n = grid.res + 1;
    let pts = Mat::from_fn(n * n, 3, |row, c| {
        let i = row % n;
        let j = row / n;
        let p = grid.point(i, j, k);
        [p.x, p.y, p.z][c]
    });
    let mut vals = field.eval_batch(&pts);
    for v in vals.iter_mut() {
        if v.abs() < LEVEL_EPS {
            *v = LEVEL_EPS;
        }
    }
    vals
}

/// Global edge key: lattice point of the lower corner plus the axis the edge
/// runs along. Both cells sharing an edge derive the same key.
type EdgeKey = (usize, usize, usize, u8);

fn edge_key(cell: [usize; 3], edge: usize) -> EdgeKey {
    let [c0, c1] = EDGE_CORNERS[edge];
    let o0 = CORNER_OFFSETS[c0];
    let o1 = CORNER_OFFSETS[c1];
    let base = [
        cell[0] + o0[0].min(o1[0]),
        cell[1] + o0[1].min(o1[1]),
        cell[2] + o0[2].min(o1[2]),
    ];
    let axis = (0..3).find(|&a| o0[a] != o1[a]).expect("cube edge spans one axis") as u8;
    (base[0], base[1], base[2], axis)
}

/// Extracts the zero level set of `field` over `grid`.
///
/// The mesh is watertight wherever the surface stays inside the grid, with
/// outward orientation for a signed distance convention of negative inside.
/// An empty level set yields an empty mesh with a warning.
pub fn marching_cubes(field: &impl ScalarField3, grid: &GridSpec) -> Result<TriMesh> {
    grid.validate()?;
    let n = grid.res + 1;
    let mut below = plane_values(field, grid, 0);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut edge_vertex: HashMap<EdgeKey, usize> = HashMap::new();

    for kz in 0..grid.res {
        let above = plane_values(field, grid, kz + 1);
        let value_at = |i: usize, j: usize, k: usize| -> S {
            let plane = if k == kz { &below } else { &above };
            plane[j * n + i]
        };
        for jy in 0..grid.res {
            for ix in 0..grid.res {
                let cell = [ix, jy, kz];
                let mut corner_vals = [0.0; 8];
                let mut case = 0usize;
                for (ci, off) in CORNER_OFFSETS.iter().enumerate() {
                    let v = value_at(ix + off[0], jy + off[1], kz + off[2]);
                    corner_vals[ci] = v;
                    if v < 0.0 {
                        case |= 1 << ci;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut cell_edge_vertex = [usize::MAX; 12];
                for e in 0..12 {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let key = edge_key(cell, e);
                    let idx = *edge_vertex.entry(key).or_insert_with(|| {
                        let [c0, c1] = EDGE_CORNERS[e];
                        let (v0, v1) = (corner_vals[c0], corner_vals[c1]);
                        let o0 = CORNER_OFFSETS[c0];
                        let o1 = CORNER_OFFSETS[c1];
                        let p0 = grid.point(ix + o0[0], jy + o0[1], kz + o0[2]);
                        let p1 = grid.point(ix + o1[0], jy + o1[1], kz + o1[2]);
                        // The nudge guarantees v0 != v1 across a crossing.
                        let t = (v0 / (v0 - v1)).clamp(0.0, 1.0);
                        vertices.push(p0 + (p1 - p0) * t);
                        vertices.len() - 1
                    });
                    cell_edge_vertex[e] = idx;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut i = 0;
                while i + 2 < row.len() && row[i] >= 0 {
                    // The lookup tables wind triangles toward the negative
                    // side; reversing gives outward normals for a signed
                    // distance that is negative inside.
                    let tri = [
                        cell_edge_vertex[row[i] as usize],
                        cell_edge_vertex[row[i + 2] as usize],
                        cell_edge_vertex[row[i + 1] as usize],
                    ];
                    debug_assert!(tri.iter().all(|&v| v != usize::MAX));
                    triangles.push(tri);
                    i += 3;
                }
            }
        }
        below = above;
    }

    // When the surface passes exactly through a lattice point, the incident
    // edges all produce crossings at that point: coincident vertices joined
    // by zero-area triangles. Welding by quantized position collapses them,
    // and dropping the resulting repeated-index triangles keeps every real
    // edge shared by exactly two faces.
    let h = grid.spacing();
    let quant = h.x.min(h.y).min(h.z) * 1e-7;
    let mut canon: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut remap = vec![0usize; vertices.len()];
    let mut welded: Vec<Vec3> = Vec::new();
    for (i, &p) in vertices.iter().enumerate() {
        let key = (
            (p.x / quant).round() as i64,
            (p.y / quant).round() as i64,
            (p.z / quant).round() as i64,
        );
        remap[i] = *canon.entry(key).or_insert_with(|| {
            welded.push(p);
            welded.len() - 1
        });
    }
    let triangles: Vec<[usize; 3]> = triangles
        .into_iter()
        .map(|[a, b, c]| [remap[a], remap[b], remap[c]])
        .filter(|&[a, b, c]| a != b && b != c && a != c)
        .collect();

    if triangles.is_empty() {
        log::warn!("marching cubes found no zero level set inside the grid");
        return Ok(TriMesh::default());
    }

    let pts = Mat::from_fn(welded.len(), 3, |i, c| welded[i][c]);
    let grads = field.grad_batch(&pts);
    let normals = grads
        .into_iter()
        .map(|g| {
            let norm = g.norm();
            if norm > 1e-12 {
                g / norm
            } else {
                Vec3::new(0.0, 0.0, 1.0)
            }
        })
        .collect();

    Ok(TriMesh {
        vertices: welded,
        normals,
        triangles,
    })
}
