//! Piecewise-linear interpolation of vertex data on a triangle mesh.

use anyhow::{bail, Result};
use bno_core::geometry::{Point2, TriMesh};

pub struct MeshField<'a> {
    mesh: &'a TriMesh,
    values: Vec<f64>,
    origin: Point2,
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a> MeshField<'a> {
    pub fn new(mesh: &'a TriMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.vertices.len() {
            bail!(
                "source file has {} values, mesh has {} vertices",
                values.len(),
                mesh.vertices.len()
            );
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &mesh.vertices {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        let cell = ((hi[0] - lo[0]) * (hi[1] - lo[1]) / mesh.len().max(1) as f64)
            .sqrt()
            .max(1e-12)
            * 2.0;
        let dims = [
            ((hi[0] - lo[0]) / cell).ceil() as usize + 1,
            ((hi[1] - lo[1]) / cell).ceil() as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let mut field = Self {
            mesh,
            values,
            origin: lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for t in 0..mesh.len() {
            let c = mesh.corners(t);
            let (i0, j0) = field.bucket(
                c.iter()
                    .fold([f64::INFINITY; 2], |m, p| [m[0].min(p[0]), m[1].min(p[1])]),
            );
            let (i1, j1) = field.bucket(
                c.iter()
                    .fold([f64::NEG_INFINITY; 2], |m, p| [m[0].max(p[0]), m[1].max(p[1])]),
            );
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * dims[0] + i].push(t);
                }
            }
        }
        field.buckets = buckets;
        Ok(field)
    }

    fn bucket(&self, p: Point2) -> (usize, usize) {
        let f = |a: usize| (((p[a] - self.origin[a]) / self.cell).floor().max(0.0) as usize).min(self.dims[a] - 1);
        (f(0), f(1))
    }

    /// Value at `p`; nearest-triangle extrapolation outside the mesh.
    pub fn eval(&self, p: Point2) -> f64 {
        let (i, j) = self.bucket(p);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &t in &self.buckets[j * self.dims[0] + i] {
            let [a, b, c] = self.mesh.corners(t);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            let l0 = 1.0 - l1 - l2;
            let inside = l0.min(l1).min(l2);
            if inside > best.0 {
                let v = self.mesh.triangles[t];
                best = (
                    inside,
                    l0 * self.values[v[0]] + l1 * self.values[v[1]] + l2 * self.values[v[2]],
                );
                if inside >= 0.0 {
                    break;
                }
            }
        }
        best.1
    }
}
