//! Depth map fusion into a truncated signed distance grid.
//!
//! Every lattice point accumulates a confidence-weighted average of
//! truncated signed distances (prior depth minus point depth) over the views
//! that observe it. The fused grid is polygonized with the shared marching
//! cubes extractor.

use crate::error::{Error, Result};
use crate::img::ImageF;
use crate::mat::Mat;
use crate::mesh::marching::{marching_cubes, GridSpec, ScalarField3};
use crate::mesh::trimesh::TriMesh;
use crate::scene::camera::Camera;
use crate::{Vec3, S};

/// One depth observation: a camera, a z-depth map (non-positive entries are
/// invalid), and a per-pixel fusion weight.
pub struct TsdfView<'a> {
    pub camera: &'a Camera,
    pub depth: &'a ImageF,
    pub confidence: &'a ImageF,
}

/// Lattice of fused values with nearest-point evaluation and central
/// difference gradients, sized to a [`GridSpec`].
pub struct GridField {
    grid: GridSpec,
    values: Vec<S>,
}

impl GridField {
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.grid.res + 1;
        (k * n + j) * n + i
    }

    fn nearest(&self, p: Vec3) -> [usize; 3] {
        let h = (self.grid.max - self.grid.min) / self.grid.res as S;
        let clamp = |x: S| (x.round().max(0.0) as usize).min(self.grid.res);
        [
            clamp((p.x - self.grid.min.x) / h.x),
            clamp((p.y - self.grid.min.y) / h.y),
            clamp((p.z - self.grid.min.z) / h.z),
        ]
    }

    fn value(&self, idx: [usize; 3]) -> S {
        self.values[self.index(idx[0], idx[1], idx[2])]
    }
}

impl ScalarField3 for GridField {
    fn eval_batch(&self, pts: &Mat<S>) -> Vec<S> {
        (0..pts.rows())
            .map(|r| {
                self.value(self.nearest(Vec3::new(pts.at(r, 0), pts.at(r, 1), pts.at(r, 2))))
            })
            .collect()
    }

    fn grad_batch(&self, pts: &Mat<S>) -> Vec<Vec3> {
        let h = (self.grid.max - self.grid.min) / self.grid.res as S;
        (0..pts.rows())
            .map(|r| {
                let [i, j, k] = self.nearest(Vec3::new(pts.at(r, 0), pts.at(r, 1), pts.at(r, 2)));
                let n = self.grid.res;
                let d = |lo: S, hi: S, span: S| (hi - lo) / span;
                Vec3::new(
                    d(
                        self.value([i.saturating_sub(1), j, k]),
                        self.value([(i + 1).min(n), j, k]),
                        h.x * ((i + 1).min(n) - i.saturating_sub(1)) as S,
                    ),
                    d(
                        self.value([i, j.saturating_sub(1), k]),
                        self.value([i, (j + 1).min(n), k]),
                        h.y * ((j + 1).min(n) - j.saturating_sub(1)) as S,
                    ),
                    d(
                        self.value([i, j, k.saturating_sub(1)]),
                        self.value([i, j, (k + 1).min(n)]),
                        h.z * ((k + 1).min(n) - k.saturating_sub(1)) as S,
                    ),
                )
            })
            .collect()
    }
}

/// Fuses depth maps into a truncated signed distance lattice over `grid` and
/// extracts its zero level set. Unobserved lattice points count as empty
/// space at `truncation` distance, so a grid no view observes produces an
/// empty mesh.
pub fn tsdf_fuse(views: &[TsdfView], grid: &GridSpec, truncation: S) -> Result<TriMesh> {
    grid.validate()?;
    if views.is_empty() {
        return Err(Error::Config("fusion needs at least one depth map".into()));
    }
    if truncation <= 0.0 {
        return Err(Error::Config(format!(
            "truncation must be positive, got {truncation}"
        )));
    }
    for v in views {
        let (w, h) = (v.camera.width, v.camera.height);
        if v.depth.width() != w
            || v.depth.height() != h
            || v.confidence.width() != w
            || v.confidence.height() != h
        {
            return Err(Error::Config(
                "depth or confidence size disagrees with the camera".into(),
            ));
        }
    }

    let n = grid.res + 1;
    let mut weight = vec![0.0; n * n * n];
    let mut sum = vec![0.0; n * n * n];
    let mut occluded = vec![false; n * n * n];
    for view in views {
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = Vec3::new(
                        grid.min.x + (grid.max.x - grid.min.x) * i as S / grid.res as S,
                        grid.min.y + (grid.max.y - grid.min.y) * j as S / grid.res as S,
                        grid.min.z + (grid.max.z - grid.min.z) * k as S / grid.res as S,
                    );
                    let Some((u, v, z)) = view.camera.project(p) else {
                        continue;
                    };
                    let (px, py) = (u.floor(), v.floor());
                    if px < 0.0
                        || py < 0.0
                        || px >= view.camera.width as S
                        || py >= view.camera.height as S
                    {
                        continue;
                    }
                    let (px, py) = (px as usize, py as usize);
                    let d = view.depth.at(px, py, 0);
                    if d <= 0.0 {
                        continue;
                    }
                    let idx = (k * n + j) * n + i;
                    let sd = d - z;
                    // Points far behind the observed surface are occluded:
                    // they take no weighted vote, but they are remembered so
                    // a never-confirmed point defaults to inside rather than
                    // empty. Defaulting to empty would fabricate a back wall
                    // at the truncation boundary behind every surface.
                    if sd < -truncation {
                        occluded[idx] = true;
                        continue;
                    }
                    let w = view.confidence.at(px, py, 0);
                    if w <= 0.0 {
                        continue;
                    }
                    weight[idx] += w;
                    sum[idx] += w * sd.min(truncation);
                }
            }
        }
    }

    let values: Vec<S> = (0..n * n * n)
        .map(|idx| {
            if weight[idx] > 0.0 {
                sum[idx] / weight[idx]
            } else if occluded[idx] {
                -truncation
            } else {
                truncation
            }
        })
        .collect();
    let field = GridField {
        grid: *grid,
        values,
    };
    marching_cubes(&field, grid)
}
