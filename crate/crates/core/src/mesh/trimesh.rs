//! Indexed triangle meshes with per-vertex normals.

use crate::error::{Error, Result};
use crate::{Vec3, S};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Triangles whose area falls at or below this are dropped by cleanup.
pub const DEGENERATE_AREA: S = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.normals.len() != self.vertices.len() {
            return Err(Error::Degenerate(format!(
                "mesh has {} vertices but {} normals",
                self.vertices.len(),
                self.normals.len()
            )));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::Degenerate(format!(
                    "triangle {i} references a vertex out of range"
                )));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: [usize; 3]) -> S {
        let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
        (b - a).cross(c - a).norm() * 0.5
    }

    pub fn surface_area(&self) -> S {
        self.triangles.iter().map(|&t| self.triangle_area(t)).sum()
    }

    /// Drops effectively zero-area triangles; vertices are left in place.
    pub fn remove_degenerate(&mut self) {
        let keep: Vec<[usize; 3]> = self
            .triangles
            .iter()
            .copied()
            .filter(|&t| self.triangle_area(t) > DEGENERATE_AREA)
            .collect();
        self.triangles = keep;
    }

    /// Undirected edge use counts; a closed 2-manifold uses every edge twice.
    pub fn edge_use_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Draws `n` points uniformly by area over the surface.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<Vec<Vec3>> {
        if self.is_empty() {
            return Err(Error::Degenerate("cannot sample an empty mesh".into()));
        }
        let mut cum = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for &t in &self.triangles {
            total += self.triangle_area(t);
            cum.push(total);
        }
        if total <= 0.0 {
            return Err(Error::Degenerate("mesh has zero surface area".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.gen_range(0.0..total);
            let ti = cum.partition_point(|&c| c <= r).min(cum.len() - 1);
            let [ia, ib, ic] = self.triangles[ti];
            let (a, b, c) = (self.vertices[ia], self.vertices[ib], self.vertices[ic]);
            let mut u: S = rng.gen_range(0.0..1.0);
            let mut v: S = rng.gen_range(0.0..1.0);
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            pts.push(a + (b - a) * u + (c - a) * v);
        }
        Ok(pts)
    }

    /// Writes ASCII OBJ with positions, normals, and `f i//i` faces.
    pub fn write_obj(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io_err)?;
        }
        for n in &self.normals {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z).map_err(io_err)?;
        }
        for t in &self.triangles {
            writeln!(
                w,
                "f {0}//{0} {1}//{1} {2}//{2}",
                t[0] + 1,
                t[1] + 1,
                t[2] + 1
            )
            .map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Reads the OBJ subset written by [`TriMesh::write_obj`]: `v`, `vn`,
    /// and triangular `f` lines with 1-based indices.
    pub fn read_obj(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut mesh = TriMesh::default();
        for (ln, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut it = line.split_whitespace();
            let bad = |msg: &str| Error::format(path, format!("line {}: {msg}", ln + 1));
            match it.next() {
                Some(tag @ ("v" | "vn")) => {
                    let mut xyz = [0.0; 3];
                    for x in xyz.iter_mut() {
                        *x = it
                            .next()
                            .ok_or_else(|| bad("missing coordinate"))?
                            .parse::<S>()
                            .map_err(|_| bad("unparsable coordinate"))?;
                    }
                    let v = Vec3::from_array(xyz);
                    if tag == "v" {
                        mesh.vertices.push(v);
                    } else {
                        mesh.normals.push(v);
                    }
                }
                Some("f") => {
                    let mut idx = [0usize; 3];
                    for i in idx.iter_mut() {
                        let tok = it.next().ok_or_else(|| bad("face needs 3 vertices"))?;
                        let first = tok.split('/').next().unwrap_or("");
                        let one_based: usize =
                            first.parse().map_err(|_| bad("unparsable face index"))?;
                        if one_based == 0 {
                            return Err(bad("face indices are 1-based"));
                        }
                        *i = one_based - 1;
                    }
                    if it.next().is_some() {
                        return Err(bad("only triangular faces are supported"));
                    }
                    mesh.triangles.push(idx);
                }
                _ => {}
            }
        }
        if mesh.normals.is_empty() {
            mesh.normals = vec![Vec3::zero(); mesh.vertices.len()];
        }
        mesh.validate()?;
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_mesh() -> TriMesh {
        // Unit square in the xy plane split into two triangles.
        TriMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            normals: vec![Vec3::new(0.0, 0.0, 1.0); 4],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    #[test]
    fn area_and_cleanup() {
        let mut m = quad_mesh();
        assert!((m.surface_area() - 1.0).abs() < 1e-12);
        m.vertices.push(Vec3::new(2.0, 2.0, 0.0));
        m.normals.push(Vec3::new(0.0, 0.0, 1.0));
        m.triangles.push([4, 4, 4]);
        m.remove_degenerate();
        assert_eq!(m.triangles.len(), 2);
    }

    #[test]
    fn surface_samples_are_on_the_square_and_uniformish() {
        let m = quad_mesh();
        let pts = m.sample_surface(4000, 9).unwrap();
        let mut left = 0;
        for p in &pts {
            assert!(p.z.abs() < 1e-12);
            assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
            if p.x < 0.5 {
                left += 1;
            }
        }
        let frac = left as f64 / pts.len() as f64;
        assert!((frac - 0.5).abs() < 0.05, "left fraction {frac}");
    }

    #[test]
    fn obj_round_trip_preserves_geometry() {
        let m = quad_mesh();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mesh.obj");
        m.write_obj(&p).unwrap();
        let back = TriMesh::read_obj(&p).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn malformed_obj_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n").unwrap();
        let err = TriMesh::read_obj(&p).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn out_of_range_indices_fail_validation() {
        let mut m = quad_mesh();
        m.triangles.push([0, 1, 9]);
        assert!(m.validate().is_err());
    }
}
