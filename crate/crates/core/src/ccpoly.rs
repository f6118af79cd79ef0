//! Configuration-constrained polytope templates.
//!
//! A template fixes the facet normals `F` of `X(q) = {x : F x <= q}` together
//! with the facets meeting at every vertex. For offsets `q` in the cone
//! `{q : E q <= 0}` the vertices are linear in `q` (`x_j = V_j q`) and
//! `X(q)` is their convex hull.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::ensure_dims;
use crate::{Error, Mat, Real, Result};

/// Largest accepted condition number of a vertex's facet submatrix.
pub const MAX_VERTEX_CONDITION: f64 = 1e8;
/// Relative tolerance of the configuration test `E q <= tol (1 + ‖q‖∞)`.
pub const CONFIG_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PolytopeTemplate {
    f: Mat<f64>,
    incidence: Vec<Vec<usize>>,
    vmaps: Vec<Mat<f64>>,
    e: Mat<f64>,
}

/// Axis-aligned box with the detached extremal vertex indices.
#[derive(Clone, Debug)]
pub struct BoundingBox<T = f64> {
    pub center: Vec<T>,
    /// Half widths, inflation included.
    pub half_width: Vec<T>,
    /// Per coordinate, the vertex attaining the maximum.
    pub argmax: Vec<usize>,
    /// Per coordinate, the vertex attaining the minimum.
    pub argmin: Vec<usize>,
}

impl<T: Real> BoundingBox<T> {
    pub fn lower(&self) -> Vec<T> {
        self.center.iter().zip(&self.half_width).map(|(&c, &s)| c - s).collect()
    }

    pub fn upper(&self) -> Vec<T> {
        self.center.iter().zip(&self.half_width).map(|(&c, &s)| c + s).collect()
    }

    pub fn values(&self) -> BoundingBox<f64> {
        BoundingBox {
            center: self.center.iter().map(|v| v.value()).collect(),
            half_width: self.half_width.iter().map(|v| v.value()).collect(),
            argmax: self.argmax.clone(),
            argmin: self.argmin.clone(),
        }
    }
}

impl PolytopeTemplate {
    /// Builds vertex maps and the configuration cone from facet normals and
    /// the vertex-facet incidence lists.
    pub fn new(f: Mat<f64>, incidence: Vec<Vec<usize>>) -> Result<Self> {
        let (nf, nx) = f.shape();
        if nx == 0 || incidence.is_empty() {
            return Err(Error::InvalidArgument(format!("empty template ({nf} facets, {} vertices)", incidence.len())));
        }
        let mut sorted: Vec<Vec<usize>> = Vec::with_capacity(incidence.len());
        for (j, facets) in incidence.iter().enumerate() {
            ensure_dims!(facets.len() == nx, "vertex {j} lists {} facets, expected {nx}", facets.len());
            if let Some(&bad) = facets.iter().find(|&&i| i >= nf) {
                return Err(Error::InvalidArgument(format!("vertex {j} references facet {bad} of {nf}")));
            }
            let mut s = facets.clone();
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("vertex {j} lists a facet twice")));
            }
            if let Some(first) = sorted.iter().position(|o| *o == s) {
                return Err(Error::DuplicateIncidence { first, second: j });
            }
            sorted.push(s);
        }
        let mut vmaps = Vec::with_capacity(incidence.len());
        for (j, facets) in incidence.iter().enumerate() {
            let sub = Mat::from_fn(nx, nx, |r, c| f[(facets[r], c)]);
            let inv = match sub.condition() {
                Some(c) if c <= MAX_VERTEX_CONDITION => sub.inverse().ok_or(Error::SingularVertex { vertex: j })?,
                _ => return Err(Error::SingularVertex { vertex: j }),
            };
            let mut v = Mat::zeros(nx, nf);
            for (k, &i) in facets.iter().enumerate() {
                for r in 0..nx {
                    v[(r, i)] = inv[(r, k)];
                }
            }
            vmaps.push(v);
        }
        let mut rows = Vec::new();
        for (j, facets) in incidence.iter().enumerate() {
            let fv = f.matmul(&vmaps[j]);
            for i in (0..nf).filter(|i| !facets.contains(i)) {
                let mut row = fv.row(i).to_vec();
                row[i] -= 1.0;
                rows.extend(row);
            }
        }
        let e = Mat::from_vec(rows.len() / nf, nf, rows);
        Ok(PolytopeTemplate { f, incidence, vmaps, e })
    }

    /// `F = [I; −I]` with the `2^n` vertices in Gray-code order, so that
    /// consecutive vertices share an edge.
    pub fn boxed(nx: usize) -> Result<Self> {
        if nx == 0 || nx > 16 {
            return Err(Error::InvalidArgument(format!("box template needs 1 <= n_x <= 16, got {nx}")));
        }
        let f = Mat::from_fn(2 * nx, nx, |r, c| {
            if r == c {
                1.0
            } else if r == c + nx {
                -1.0
            } else {
                0.0
            }
        });
        let incidence = (0..1usize << nx)
            .map(|k| {
                let gray = k ^ (k >> 1);
                (0..nx).map(|i| if gray & (1 << i) != 0 { nx + i } else { i }).collect()
            })
            .collect();
        Self::new(f, incidence)
    }

    /// Regular polygon in the plane: normal `k` points at angle `2πk/f` and
    /// vertex `j` is the intersection of facets `j` and `j+1`.
    pub fn polygon(facets: usize) -> Result<Self> {
        if facets < 3 {
            return Err(Error::InvalidArgument(format!("a polygon needs at least 3 facets, got {facets}")));
        }
        let f = Mat::from_fn(facets, 2, |k, c| {
            let th = 2.0 * PI * k as f64 / facets as f64;
            if c == 0 {
                libm::cos(th)
            } else {
                libm::sin(th)
            }
        });
        let incidence = (0..facets).map(|j| vec![j, (j + 1) % facets]).collect();
        Self::new(f, incidence)
    }

    pub fn facets(&self) -> &Mat<f64> {
        &self.f
    }

    pub fn incidence(&self) -> &[Vec<usize>] {
        &self.incidence
    }

    pub fn vertex_maps(&self) -> &[Mat<f64>] {
        &self.vmaps
    }

    pub fn cone(&self) -> &Mat<f64> {
        &self.e
    }

    pub fn nx(&self) -> usize {
        self.f.cols()
    }

    pub fn num_facets(&self) -> usize {
        self.f.rows()
    }

    pub fn num_vertices(&self) -> usize {
        self.vmaps.len()
    }

    /// Largest entry of `E q`.
    pub fn config_violation(&self, q: &[f64]) -> f64 {
        self.e.matvec(q).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_config(&self, q: &[f64]) -> bool {
        q.len() == self.num_facets()
            && q.iter().all(|v| v.is_finite())
            && self.config_violation(q) <= CONFIG_TOL * (1.0 + crate::linalg::norm_inf(q))
    }

    fn ensure_config<T: Real>(&self, q: &[T]) -> Result<()> {
        ensure_dims!(q.len() == self.num_facets(), "q has {} entries, expected {}", q.len(), self.num_facets());
        let qv: Vec<f64> = q.iter().map(|v| v.value()).collect();
        if !self.check_config(&qv) {
            return Err(Error::ConfigViolation { max_violation: self.config_violation(&qv) });
        }
        Ok(())
    }

    /// `V_j q` without the configuration check.
    pub fn vertex<T: Real>(&self, j: usize, q: &[T]) -> Vec<T> {
        let v = &self.vmaps[j];
        let facets = &self.incidence[j];
        (0..self.nx())
            .map(|r| crate::real::sum(facets.iter().map(|&i| q[i].scale(v[(r, i)]))))
            .collect()
    }

    /// All vertices `V_j q` in index order.
    pub fn vertices<T: Real>(&self, q: &[T]) -> Result<Vec<Vec<T>>> {
        self.ensure_config(q)?;
        Ok((0..self.num_vertices()).map(|j| self.vertex(j, q)).collect())
    }

    /// Bounding box of the vertices, half widths inflated by `zeta`. Ties go
    /// to the lowest vertex index.
    pub fn bounding_box<T: Real>(&self, q: &[T], zeta: f64) -> Result<BoundingBox<T>> {
        if !(zeta >= 0.0) {
            return Err(Error::InvalidArgument(format!("box inflation must be nonnegative, got {zeta}")));
        }
        let verts = self.vertices(q)?;
        Ok(box_of(&verts, zeta))
    }

    /// `F x <= q + tol`.
    pub fn contains(&self, x: &[f64], q: &[f64], tol: f64) -> bool {
        self.f.matvec(x).iter().zip(q).all(|(a, b)| *a <= b + tol)
    }
}

/// Box of a vertex list, half widths inflated by `zeta`.
pub fn box_of<T: Real>(verts: &[Vec<T>], zeta: f64) -> BoundingBox<T> {
    let nx = verts[0].len();
    let mut bb = BoundingBox { center: Vec::new(), half_width: Vec::new(), argmax: Vec::new(), argmin: Vec::new() };
    let half = T::cst(0.5);
    for i in 0..nx {
        let (mut hi, mut lo) = (0, 0);
        for (j, v) in verts.iter().enumerate() {
            if v[i].value() > verts[hi][i].value() {
                hi = j;
            }
            if v[i].value() < verts[lo][i].value() {
                lo = j;
            }
        }
        let (a, b) = (verts[hi][i], verts[lo][i]);
        bb.center.push((a + b) * half);
        bb.half_width.push((a - b) * half + T::cst(zeta));
        bb.argmax.push(hi);
        bb.argmin.push(lo);
    }
    bb
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> PolytopeTemplate {
        let f = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        PolytopeTemplate::new(f, vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 0]]).unwrap()
    }

    #[test]
    fn unit_square_vertices() {
        let t = square();
        let v = t.vertices(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v, vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]]);
        let v = t.vertices(&[2.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(v, vec![vec![2.0, 1.0], vec![-2.0, 1.0], vec![-2.0, -1.0], vec![2.0, -1.0]]);
    }

    #[test]
    fn box_generator_matches_explicit_square() {
        let b = PolytopeTemplate::boxed(2).unwrap();
        let s = square();
        let q = [0.3, 1.2, 0.7, 0.1];
        assert_eq!(b.vertices(&q).unwrap(), s.vertices(&q).unwrap());
        assert_eq!(PolytopeTemplate::boxed(3).unwrap().num_vertices(), 8);
    }

    #[test]
    fn config_checks() {
        let t = square();
        assert!(t.check_config(&[1.0, 1.0, 1.0, 1.0]));
        assert!(!t.check_config(&[1.0, 1.0, -2.0, 1.0]));
        // degenerate (zero-width) boxes sit on the cone boundary
        assert!(t.check_config(&[1.0, 1.0, -1.0, 1.0]));
        assert!(matches!(t.vertices(&[1.0, 1.0, -2.0, 1.0]), Err(Error::ConfigViolation { .. })));
    }

    #[test]
    fn square_boxes() {
        let t = square();
        let b = t.bounding_box(&[1.0, 1.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(b.center, vec![0.0, 0.0]);
        assert_eq!(b.half_width, vec![1.0, 1.0]);
        let b = t.bounding_box(&[1.0, 1.0, 1.0, 1.0], 0.1).unwrap();
        assert!((b.half_width[0] - 1.1).abs() < 1e-15 && (b.half_width[1] - 1.1).abs() < 1e-15);
        // x max attained first by vertex 0, y min first by vertex 2
        assert_eq!(b.argmax, vec![0, 0]);
        assert_eq!(b.argmin, vec![1, 2]);
    }

    #[test]
    fn rejects_bad_incidence() {
        let f = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let dup = PolytopeTemplate::new(f.clone(), vec![vec![0, 1], vec![1, 0], vec![2, 3]]);
        assert_eq!(dup.unwrap_err(), Error::DuplicateIncidence { first: 0, second: 1 });
        let singular = PolytopeTemplate::new(f, vec![vec![0, 1], vec![0, 2]]);
        assert_eq!(singular.unwrap_err(), Error::SingularVertex { vertex: 1 });
    }

    #[test]
    fn hexagon_cone_rows() {
        let t = PolytopeTemplate::polygon(6).unwrap();
        assert_eq!(t.cone().shape(), (6 * 4, 6));
        assert!(t.check_config(&[1.0; 6]));
    }
}
