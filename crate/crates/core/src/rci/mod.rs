//! Robust control invariant sets for qLPV models.
//!
//! The decision variables are the facet offsets `q` of a configuration
//! constrained template `X(q) = {x | F x <= q}` and one input `U_j v` per
//! vertex. The submodules cover the disturbance box, the tightened vertex
//! systems, the size QP, interval bounds on the scheduling map, the iterative
//! scheme that alternates bounds and QP solves, and a brute-force verifier.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::ccpoly::PolytopeTemplate;
use crate::error::ensure_dims;
use crate::qlpv::{IoDataset, QlpvModel};
use crate::qp::{lp_membership, qp_solve_with, QpSettings, QpStatus, QuadProg};
use crate::{Error, Mat, Real, Result};

mod bounds;
mod iterate;
mod program;
mod tighten;
mod verify;

pub use bounds::{bound_prop, ibp_forward, ibp_logits, softmax_lower_bounds, softmax_lower_bounds_logit, Interval};
pub use iterate::{algorithm1, algorithm1_from, solve_baseline_r, RciSolution, RciStatus};
pub use program::{build_s, build_shat, size_qp, Layout, SizeSolution};
pub use tighten::{mean_system, tightened_vertices, TightenedSystem};
pub use verify::{verify_rci, VerifyReport};

/// Row tolerance when checking vertices against halfspaces.
pub const VERTEX_TOL: f64 = 1e-9;

/// `𝕎 = {w | |w − c_w| <= κ ε_w}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceBox<T = f64> {
    pub c_w: Vec<T>,
    pub eps_w: Vec<T>,
    pub kappa: f64,
}

impl<T: Real> DisturbanceBox<T> {
    pub fn new(c_w: Vec<T>, eps_w: Vec<T>, kappa: f64) -> Result<Self> {
        ensure_dims!(c_w.len() == eps_w.len(), "c_w has {} entries but eps_w has {}", c_w.len(), eps_w.len());
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
        }
        if eps_w.iter().any(|e| !(e.value() >= 0.0)) {
            return Err(Error::InvalidArgument(String::from("eps_w must be nonnegative")));
        }
        Ok(DisturbanceBox { c_w, eps_w, kappa })
    }

    pub fn ny(&self) -> usize {
        self.c_w.len()
    }

    /// Inflated half widths `κ ε_w`.
    pub fn radius(&self) -> Vec<T> {
        self.eps_w.iter().map(|e| e.scale(self.kappa)).collect()
    }

    pub fn values(&self) -> DisturbanceBox<f64> {
        DisturbanceBox {
            c_w: self.c_w.iter().map(|v| v.value()).collect(),
            eps_w: self.eps_w.iter().map(|v| v.value()).collect(),
            kappa: self.kappa,
        }
    }
}

impl DisturbanceBox<f64> {
    /// The `2^{n_y}` corners; bit `i` of the index selects the sign of
    /// coordinate `i`.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let ny = self.ny();
        let r = self.radius();
        (0..1usize << ny)
            .map(|k| (0..ny).map(|i| if k >> i & 1 == 1 { self.c_w[i] + r[i] } else { self.c_w[i] - r[i] }).collect())
            .collect()
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        let r = self.radius();
        w.iter().zip(&self.c_w).zip(&r).all(|((w, c), r)| (w - c).abs() <= r + tol)
    }
}

/// Inflated bounding box of the observer residuals `w_t = y_t − C z_t` along
/// the observer run from `z = 0`. The sample achieving each max and min is
/// selected on values and then treated as fixed.
pub fn characterize_w<T: Real>(model: &QlpvModel<T>, dw: &IoDataset, kappa: f64) -> Result<DisturbanceBox<T>> {
    if dw.is_empty() {
        return Err(Error::InvalidArgument(String::from("disturbance dataset is empty")));
    }
    let z0 = vec![T::zero(); model.nx()];
    let traj = model.observe(&z0, dw).map_err(|e| match e {
        Error::Divergence { .. } | Error::NonFinite(_) => {
            Error::InvalidArgument(format!("observer run for the disturbance box failed ({e}); re-identify the model"))
        }
        other => other,
    })?;
    let ny = model.ny();
    let w: Vec<Vec<T>> = traj
        .y
        .iter()
        .enumerate()
        .map(|(t, yhat)| dw.y.row(t).iter().zip(yhat).map(|(&y, &c)| T::cst(y) - c).collect())
        .collect();
    let half = T::cst(0.5);
    let (mut c_w, mut eps_w) = (Vec::with_capacity(ny), Vec::with_capacity(ny));
    for i in 0..ny {
        let (mut hi, mut lo) = (0, 0);
        for (t, wt) in w.iter().enumerate() {
            if wt[i].value() > w[hi][i].value() {
                hi = t;
            }
            if wt[i].value() < w[lo][i].value() {
                lo = t;
            }
        }
        c_w.push((w[hi][i] + w[lo][i]) * half);
        eps_w.push((w[hi][i] - w[lo][i]) * half);
    }
    DisturbanceBox::new(c_w, eps_w, kappa)
}

/// Output set `𝕐 = {y | H_y y <= h_y}` together with its vertex list.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputConstraints {
    pub hy: Mat<f64>,
    pub h: Vec<f64>,
    pub vertices: Vec<Vec<f64>>,
}

impl OutputConstraints {
    /// Checks every vertex against the halfspaces and, for `n_y <= 2`, that
    /// every vertex of the halfspace description lies in the hull of the list.
    pub fn new(hy: Mat<f64>, h: Vec<f64>, vertices: Vec<Vec<f64>>) -> Result<Self> {
        ensure_dims!(hy.rows() == h.len(), "H_y has {} rows but h_y has {}", hy.rows(), h.len());
        ensure_dims!(!vertices.is_empty(), "output set needs at least one vertex");
        let ny = hy.cols();
        for (k, v) in vertices.iter().enumerate() {
            ensure_dims!(v.len() == ny, "vertex {k} has {} entries, expected {ny}", v.len());
            let viol = max_violation(&hy, &h, v);
            if viol > VERTEX_TOL {
                return Err(Error::InvalidArgument(format!("vertex {k} violates the output halfspaces by {viol:e}")));
            }
        }
        if ny <= 2 {
            for p in halfspace_vertices(&hy, &h)? {
                if !lp_membership(&p, &vertices, 1e-7)? {
                    return Err(Error::InvalidArgument(format!(
                        "halfspace vertex {p:?} is not in the hull of the vertex list"
                    )));
                }
            }
        }
        Ok(OutputConstraints { hy, h, vertices })
    }

    /// `[lo, hi]` for a scalar output; vertices in the order `lo, hi`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(&[lo], &[hi])
    }

    /// Axis-aligned box; vertex `k` takes `hi_i` where bit `i` of `k` is set.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let (hy, h) = box_halfspaces(lo, hi)?;
        let ny = lo.len();
        let vertices = (0..1usize << ny)
            .map(|k| (0..ny).map(|i| if k >> i & 1 == 1 { hi[i] } else { lo[i] }).collect())
            .collect();
        Self::new(hy, h, vertices)
    }

    pub fn ny(&self) -> usize {
        self.hy.cols()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        max_violation(&self.hy, &self.h, y) <= tol
    }
}

/// Input set `𝕌 = {u | H_u u <= h_u}`, checked bounded and nonempty.
#[derive(Clone, Debug, PartialEq)]
pub struct InputConstraints {
    pub hu: Mat<f64>,
    pub h: Vec<f64>,
    center: Vec<f64>,
}

impl InputConstraints {
    pub fn new(hu: Mat<f64>, h: Vec<f64>) -> Result<Self> {
        ensure_dims!(hu.rows() == h.len(), "H_u has {} rows but h_u has {}", hu.rows(), h.len());
        let nu = hu.cols();
        ensure_dims!(nu > 0, "input set needs at least one input");
        if !hu.is_finite() || h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(String::from("input constraint data")));
        }
        let settings = QpSettings::default();
        // Bounded iff no recession direction d with H_u d <= 0 and d_c = ±1.
        for c in 0..nu {
            for s in [1.0, -1.0] {
                let mut aeq = Mat::zeros(1, nu);
                aeq[(0, c)] = s;
                let qp = QuadProg::new(Mat::identity(nu), vec![0.0; nu], hu.clone(), vec![0.0; h.len()], aeq, vec![1.0])?;
                if qp_solve_with(&qp, &settings, None)?.status != QpStatus::Infeasible {
                    return Err(Error::InvalidArgument(format!("input set is unbounded along coordinate {c}")));
                }
            }
        }
        // Chebyshev center: max r s.t. H_u u + ‖row‖ r <= h_u.
        let n = nu + 1;
        let g = Mat::from_fn(hu.rows(), n, |i, j| {
            if j < nu {
                hu[(i, j)]
            } else {
                libm::sqrt(hu.row(i).iter().map(|v| v * v).sum::<f64>())
            }
        });
        let mut f = vec![0.0; n];
        f[nu] = -1.0;
        let qp = QuadProg::inequality(Mat::identity(n).scaled(1e-8), f, g, h.clone())?;
        let sol = qp_solve_with(&qp, &settings, None)?;
        if sol.status == QpStatus::Infeasible || sol.x[nu] < -1e-9 {
            return Err(Error::Infeasible(String::from("input set is empty")));
        }
        let center = sol.x[..nu].to_vec();
        Ok(InputConstraints { hu, h, center })
    }

    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let (hu, h) = box_halfspaces(lo, hi)?;
        Self::new(hu, h)
    }

    pub fn nu(&self) -> usize {
        self.hu.cols()
    }

    /// A point of maximal inscribed-ball radius.
    pub fn interior_point(&self) -> &[f64] {
        &self.center
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        max_violation(&self.hu, &self.h, u) <= tol
    }

    /// Moves `u` along the segment towards the interior point until every
    /// row holds exactly.
    pub fn pull_inside(&self, u: &[f64]) -> Vec<f64> {
        let c = &self.center;
        let mut theta: f64 = 1.0;
        for i in 0..self.hu.rows() {
            let row = self.hu.row(i);
            let at_u: f64 = row.iter().zip(u).map(|(a, b)| a * b).sum();
            let at_c: f64 = row.iter().zip(c).map(|(a, b)| a * b).sum();
            if at_u > self.h[i] && at_u > at_c {
                theta = theta.min(((self.h[i] - at_c) / (at_u - at_c)).max(0.0));
            }
        }
        for _ in 0..8 {
            let out: Vec<f64> = c.iter().zip(u).map(|(&c, &u)| c + theta * (u - c)).collect();
            if self.contains(&out, 0.0) {
                return out;
            }
            theta *= 1.0 - 1e-12;
        }
        c.clone()
    }
}

/// `max_i (H x − h)_i`, or `-inf` with no rows.
pub(crate) fn max_violation(hm: &Mat<f64>, h: &[f64], x: &[f64]) -> f64 {
    hm.matvec(x).iter().zip(h).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
}

fn box_halfspaces(lo: &[f64], hi: &[f64]) -> Result<(Mat<f64>, Vec<f64>)> {
    ensure_dims!(lo.len() == hi.len() && !lo.is_empty(), "box bounds of lengths {} and {}", lo.len(), hi.len());
    for (i, (l, u)) in lo.iter().zip(hi).enumerate() {
        if !(l <= u) {
            return Err(Error::InvalidArgument(format!("box coordinate {i} has lower {l} above upper {u}")));
        }
    }
    let n = lo.len();
    let m = Mat::from_fn(2 * n, n, |r, c| {
        if r == c {
            1.0
        } else if r == c + n {
            -1.0
        } else {
            0.0
        }
    });
    let mut h = hi.to_vec();
    h.extend(lo.iter().map(|v| -v));
    Ok((m, h))
}

/// Vertices of a bounded polytope in one or two dimensions.
fn halfspace_vertices(hm: &Mat<f64>, h: &[f64]) -> Result<Vec<Vec<f64>>> {
    let tol = 1e-9;
    let mut out = Vec::new();
    match hm.cols() {
        1 => {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..hm.rows() {
                let a = hm[(i, 0)];
                if a > 0.0 {
                    hi = hi.min(h[i] / a);
                } else if a < 0.0 {
                    lo = lo.max(h[i] / a);
                }
            }
            if lo.is_finite() && hi.is_finite() && lo <= hi + tol {
                out.push(vec![lo]);
                out.push(vec![hi]);
            }
        }
        2 => {
            for i in 0..hm.rows() {
                for j in i + 1..hm.rows() {
                    let (a, b, c, d) = (hm[(i, 0)], hm[(i, 1)], hm[(j, 0)], hm[(j, 1)]);
                    let det = a * d - b * c;
                    if det.abs() < 1e-12 * (a.abs() + b.abs()) * (c.abs() + d.abs()) {
                        continue;
                    }
                    let p = vec![(h[i] * d - b * h[j]) / det, (a * h[j] - c * h[i]) / det];
                    let scale = 1.0 + p[0].abs() + p[1].abs();
                    if max_violation(hm, h, &p) <= tol * scale {
                        out.push(p);
                    }
                }
            }
        }
        _ => {}
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(String::from("halfspace description is empty or unbounded")));
    }
    Ok(out)
}

/// Template, output and input sets, and the size-QP horizon shared by every
/// RCI computation on one model family.
#[derive(Clone, Debug)]
pub struct RciProblem {
    pub template: PolytopeTemplate,
    pub y: OutputConstraints,
    pub u: InputConstraints,
    /// Horizon `M` of the size QP.
    pub horizon: usize,
    pub settings: QpSettings,
}

impl RciProblem {
    pub fn new(template: PolytopeTemplate, y: OutputConstraints, u: InputConstraints, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument(String::from("size-QP horizon must be at least 1")));
        }
        Ok(RciProblem { template, y, u, horizon, settings: QpSettings::default() })
    }

    pub fn check_model<T: Real>(&self, model: &QlpvModel<T>) -> Result<()> {
        ensure_dims!(
            model.nx() == self.template.nx(),
            "model has n_x = {} but the template is {}-dimensional",
            model.nx(),
            self.template.nx()
        );
        ensure_dims!(model.ny() == self.y.ny(), "model has n_y = {} but the output set has {}", model.ny(), self.y.ny());
        ensure_dims!(model.nu() == self.u.nu(), "model has n_u = {} but the input set has {}", model.nu(), self.u.nu());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlpv::{Activation, Layer, Mlp, SchedulingNet};

    #[test]
    fn corners_of_a_box() {
        let w = DisturbanceBox::new(vec![1.0, 0.0], vec![0.5, 2.0], 2.0).unwrap();
        let c = w.corners();
        assert_eq!(c, vec![vec![0.0, -4.0], vec![2.0, -4.0], vec![0.0, 4.0], vec![2.0, 4.0]]);
        assert!(w.contains(&[1.5, 3.9], 0.0));
        assert!(!w.contains(&[2.1, 0.0], 1e-9));
    }

    #[test]
    fn w_from_symmetric_samples() {
        // n_x = 1 with A = 0, L = 0, C = 1: z stays at 0 so w_t = y_t.
        let net = SchedulingNet {
            nets: vec![Mlp { layers: vec![Layer { w: Mat::zeros(1, 1), b: vec![0.0] }] }],
            activation: Activation::Tanh,
        };
        let m = QlpvModel::new(
            vec![Mat::zeros(1, 1)],
            vec![Mat::zeros(1, 1)],
            Mat::identity(1),
            vec![Mat::zeros(1, 1)],
            net,
        )
        .unwrap();
        let data = IoDataset::new(Mat::zeros(3, 1), Mat::from_vec(3, 1, vec![-1.0, 1.0, 0.3]), 1.0).unwrap();
        let w = characterize_w(&m, &data, 1.0).unwrap();
        assert_eq!(w.c_w, vec![0.0]);
        assert_eq!(w.eps_w, vec![1.0]);
    }

    #[test]
    fn output_constructors_agree() {
        let y = OutputConstraints::interval(-1.0, 2.0).unwrap();
        assert_eq!(y.vertices, vec![vec![-1.0], vec![2.0]]);
        let b = OutputConstraints::boxed(&[0.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(b.num_vertices(), 4);
        // Missing a vertex: the hull is a triangle, not the box.
        let bad = OutputConstraints::new(b.hy.clone(), b.h.clone(), b.vertices[..3].to_vec());
        assert!(bad.is_err());
        // Vertex outside the halfspaces.
        assert!(OutputConstraints::new(y.hy.clone(), y.h.clone(), vec![vec![-1.0], vec![2.5]]).is_err());
    }

    #[test]
    fn input_sets() {
        let u = InputConstraints::boxed(&[-0.5], &[0.5]).unwrap();
        assert!(u.interior_point()[0].abs() < 1e-6);
        let p = u.pull_inside(&[0.7]);
        assert!(u.contains(&p, 0.0) && (p[0] - 0.5).abs() < 1e-9);
        assert_eq!(u.pull_inside(&[0.2]), vec![0.2]);
        // Degenerate {0} is accepted.
        let z = InputConstraints::boxed(&[0.0], &[0.0]).unwrap();
        assert!(z.interior_point()[0].abs() < 1e-8);
        // Half line is unbounded.
        assert!(InputConstraints::new(Mat::from_rows(&[&[1.0]]), vec![1.0]).is_err());
        // Empty.
        assert!(InputConstraints::new(Mat::from_rows(&[&[1.0], &[-1.0]]), vec![-1.0, -1.0]).is_err());
    }
}
