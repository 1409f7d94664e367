//! Cross sections: mesh and plane intersection chained into polylines.
//!
//! Each triangle crossing the plane contributes one segment whose endpoints
//! live on crossed mesh edges. Endpoints are keyed by the mesh edge they lie
//! on, so chaining joins segments exactly instead of matching coordinates.

use crate::error::{Error, Result};
use crate::mesh::trimesh::TriMesh;
use crate::{Vec3, S};
use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

/// Oriented plane `{ x : normal . x = offset }` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: S,
}

impl Plane {
    pub fn new(normal: Vec3, offset: S) -> Result<Self> {
        let n = normal.norm();
        if n < 1e-12 {
            return Err(Error::Config("plane normal must be nonzero".into()));
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    fn signed_distance(&self, p: Vec3) -> S {
        self.normal.dot(p) - self.offset
    }
}

/// One chained intersection component. Closed loops repeat the first vertex
/// at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub points: Vec<Vec3>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> S {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }
}

type EdgeKey = (usize, usize);

fn edge_key(a: usize, b: usize) -> EdgeKey {
    (a.min(b), a.max(b))
}

/// Intersects `mesh` with `plane` and chains the crossing segments into
/// polylines, longest first. A plane missing the mesh yields an empty list
/// with a warning.
pub fn surface_profile(mesh: &TriMesh, plane: &Plane) -> Result<Vec<Polyline>> {
    mesh.validate()?;
    // Vertex distances are nudged off zero once, so every triangle sees a
    // consistent strict sign for each shared vertex.
    let dist: Vec<S> = mesh
        .vertices
        .iter()
        .map(|&v| {
            let d = plane.signed_distance(v);
            if d.abs() < 1e-12 {
                1e-12
            } else {
                d
            }
        })
        .collect();

    let mut edge_points: HashMap<EdgeKey, Vec3> = HashMap::new();
    let mut segments: Vec<[EdgeKey; 2]> = Vec::new();
    for &[a, b, c] in &mesh.triangles {
        let mut crossed: Vec<EdgeKey> = Vec::with_capacity(2);
        for (i, j) in [(a, b), (b, c), (c, a)] {
            if (dist[i] < 0.0) == (dist[j] < 0.0) {
                continue;
            }
            let key = edge_key(i, j);
            edge_points.entry(key).or_insert_with(|| {
                // Interpolate from the canonical low-index endpoint so both
                // adjacent triangles place the point identically.
                let (lo, hi) = key;
                let t = dist[lo] / (dist[lo] - dist[hi]);
                mesh.vertices[lo] + (mesh.vertices[hi] - mesh.vertices[lo]) * t.clamp(0.0, 1.0)
            });
            crossed.push(key);
        }
        // A strict sign per vertex leaves zero or exactly two crossed edges.
        if crossed.len() == 2 {
            segments.push([crossed[0], crossed[1]]);
        }
    }

    if segments.is_empty() {
        log::warn!("plane does not intersect the mesh");
        return Ok(Vec::new());
    }

    let mut touching: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (i, seg) in segments.iter().enumerate() {
        touching.entry(seg[0]).or_default().push(i);
        touching.entry(seg[1]).or_default().push(i);
    }

    let mut visited = vec![false; segments.len()];
    let mut polylines: Vec<Polyline> = Vec::new();
    for start in 0..segments.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut keys: std::collections::VecDeque<EdgeKey> =
            segments[start].iter().copied().collect();
        let mut closed = false;
        // Grow at the back, then at the front if the loop did not close.
        for front_pass in [false, true] {
            if closed {
                break;
            }
            loop {
                let tip = if front_pass {
                    *keys.front().unwrap()
                } else {
                    *keys.back().unwrap()
                };
                let next = touching
                    .get(&tip)
                    .and_then(|ids| ids.iter().copied().find(|&i| !visited[i]));
                let Some(next) = next else { break };
                visited[next] = true;
                let [p, q] = segments[next];
                let other = if p == tip { q } else { p };
                let far_end = if front_pass {
                    *keys.back().unwrap()
                } else {
                    *keys.front().unwrap()
                };
                if other == far_end {
                    closed = true;
                    break;
                }
                if front_pass {
                    keys.push_front(other);
                } else {
                    keys.push_back(other);
                }
            }
        }
        let mut points: Vec<Vec3> = keys.iter().map(|k| edge_points[k]).collect();
        if closed {
            points.push(points[0]);
        }
        polylines.push(Polyline { points, closed });
    }

    polylines.sort_by(|a, b| {
        b.length()
            .partial_cmp(&a.length())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(polylines)
}

/// Arc-length-weighted centroid of the curve; unlike a vertex average it is
/// insensitive to uneven vertex spacing. Zero-length curves fall back to
/// the vertex mean.
fn curve_centroid(line: &Polyline) -> Vec3 {
    let mut weighted = Vec3::zero();
    let mut total = 0.0;
    for w in line.points.windows(2) {
        let len = (w[1] - w[0]).norm();
        weighted = weighted + (w[0] + w[1]) * (0.5 * len);
        total += len;
    }
    if total > 1e-12 {
        weighted / total
    } else {
        line.points
            .iter()
            .fold(Vec3::zero(), |acc, &p| acc + p)
            / line.points.len() as S
    }
}

/// Writes polylines as CSV rows of component index, cumulative arc length,
/// radial height about the component centroid, and position.
pub fn write_profile_csv(path: &Path, polylines: &[Polyline]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "component,arc_length,height,x,y,z").expect("vec write");
    for (ci, line) in polylines.iter().enumerate() {
        let centroid = curve_centroid(line);
        let mut arc = 0.0;
        for (i, &p) in line.points.iter().enumerate() {
            if i > 0 {
                arc += (p - line.points[i - 1]).norm();
            }
            let height = (p - centroid).norm();
            writeln!(out, "{ci},{arc},{height},{},{},{}", p.x, p.y, p.z).expect("vec write");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::marching::{marching_cubes, GridSpec};
    use crate::scene::shape::Shape;

    fn sphere_mesh() -> TriMesh {
        marching_cubes(&Shape::Sphere { radius: 1.0 }, &GridSpec::cube(1.3, 64)).unwrap()
    }

    #[test]
    fn sphere_equator_is_one_closed_unit_circle() {
        let mesh = sphere_mesh();
        let plane = Plane::new(Vec3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        let lines = surface_profile(&mesh, &plane).unwrap();
        assert_eq!(lines.len(), 1);
        let line = &lines[0];
        assert!(line.closed);
        assert_eq!(line.points.first(), line.points.last());
        for p in &line.points {
            assert!(p.z.abs() < 1e-9, "off-plane point {p:?}");
            let r = (p.x * p.x + p.y * p.y).sqrt();
            assert!((r - 1.0).abs() < 1e-3, "radius {r}");
        }
        let circumference = line.length();
        assert!(
            (circumference - 2.0 * std::f64::consts::PI).abs() < 0.02,
            "circumference {circumference}"
        );
    }

    #[test]
    fn missing_plane_yields_empty_profile() {
        let mesh = sphere_mesh();
        let plane = Plane::new(Vec3::new(0.0, 0.0, 1.0), 5.0).unwrap();
        assert!(surface_profile(&mesh, &plane).unwrap().is_empty());
    }

    #[test]
    fn torus_section_has_two_loops_sorted_by_length() {
        let mesh = marching_cubes(
            &Shape::Torus {
                major: 0.7,
                minor: 0.25,
            },
            &GridSpec::cube(1.2, 48),
        )
        .unwrap();
        let plane = Plane::new(Vec3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        let lines = surface_profile(&mesh, &plane).unwrap();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].closed && lines[1].closed);
        let router = lines[0].length() / (2.0 * std::f64::consts::PI);
        let rinner = lines[1].length() / (2.0 * std::f64::consts::PI);
        assert!((router - 0.95).abs() < 0.01, "outer radius {router}");
        assert!((rinner - 0.45).abs() < 0.01, "inner radius {rinner}");
    }

    #[test]
    fn csv_rows_carry_monotone_arc_length_and_unit_height() {
        let mesh = sphere_mesh();
        let plane = Plane::new(Vec3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        let lines = surface_profile(&mesh, &plane).unwrap();
        let dir = std::env::temp_dir().join("mvps-profile-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("profile.csv");
        write_profile_csv(&path, &lines).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut rows = text.lines();
        assert_eq!(rows.next(), Some("component,arc_length,height,x,y,z"));
        let mut prev_arc = -1.0;
        let mut count = 0;
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 6);
            let arc: S = cols[1].parse().unwrap();
            let height: S = cols[2].parse().unwrap();
            assert!(arc >= prev_arc);
            prev_arc = arc;
            assert!((height - 1.0).abs() < 2e-3, "height {height}");
            count += 1;
        }
        assert_eq!(count, lines[0].points.len());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn degenerate_plane_normal_is_rejected() {
        assert!(Plane::new(Vec3::zero(), 0.0).is_err());
    }

    #[test]
    fn tilted_plane_cuts_a_circle_of_reduced_radius() {
        // Plane z = 0.6 cuts the unit sphere in a circle of radius 0.8.
        let mesh = sphere_mesh();
        let plane = Plane::new(Vec3::new(0.0, 0.0, 2.0), 1.2).unwrap();
        let lines = surface_profile(&mesh, &plane).unwrap();
        assert_eq!(lines.len(), 1);
        for p in &lines[0].points {
            assert!((p.z - 0.6).abs() < 1e-9);
            let r = (p.x * p.x + p.y * p.y).sqrt();
            assert!((r - 0.8).abs() < 2e-3, "radius {r}");
        }
    }
}
